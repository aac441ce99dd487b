"""Circular emotion layout and the distance functions defined on it.

An :class:`EcmConfig` places E emotion labels on evenly spaced slots of a
circle (slot ``s`` sits at angle ``s * 2*pi / E``) and tags each label with a
polarity. Losses and metrics consume four derived quantities per label pair:
the angular difference, the circular step count, the circumplex distance
(polarity constant plus steps), and the target cosine ``cos(delta_theta)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidLabelError


class Polarity(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NEUTRAL = "Neutral"


@dataclass(frozen=True)
class EmotionLabel:
    """One label on the circle: a name, a slot, and a polarity."""

    index: int
    name: str
    slot: int
    polarity: Polarity

    def angle(self, n_slots: int) -> float:
        return self.slot * 2.0 * math.pi / n_slots


# Polarity constants: identical polarities are free, Neutral against either
# extreme costs 2, Positive against Negative costs 4.
DEFAULT_POLARITY_CONSTANTS = {"same": 0.0, "neutral_cross": 2.0, "opposite": 4.0}

_DEFAULT_LAYOUT = [
    ("love", 0, Polarity.POSITIVE),
    ("joy", 1, Polarity.POSITIVE),
    ("excitement", 2, Polarity.POSITIVE),
    ("surprise", 3, Polarity.NEUTRAL),
    ("anger", 4, Polarity.NEGATIVE),
    ("fear", 5, Polarity.NEGATIVE),
    ("disgust", 6, Polarity.NEGATIVE),
    ("sadness", 7, Polarity.NEGATIVE),
    ("boredom", 8, Polarity.NEGATIVE),
    ("calmness", 9, Polarity.POSITIVE),
    ("relief", 10, Polarity.POSITIVE),
    ("trust", 11, Polarity.POSITIVE),
]


@dataclass(frozen=True)
class EcmConfig:
    """An immutable circular label layout.

    Invariants checked at construction: at least two labels, unique names,
    unique slots in ``[0, E)``, and polarity constants ordered
    ``same < neutral_cross < opposite``.
    """

    labels: tuple[EmotionLabel, ...]
    polarity_constants: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_POLARITY_CONSTANTS)
    )

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ConfigError("a circle layout needs at least 2 labels")
        names = [lab.name for lab in self.labels]
        slots = [lab.slot for lab in self.labels]
        if len(set(names)) != len(names):
            raise ConfigError("label names must be unique")
        if len(set(slots)) != len(slots):
            raise ConfigError(f"label slots collide: {sorted(slots)}")
        for lab in self.labels:
            if not 0 <= lab.slot < len(self.labels):
                raise ConfigError(f"slot {lab.slot} outside [0, {len(self.labels)})")
        for i, lab in enumerate(self.labels):
            if lab.index != i:
                raise ConfigError("label.index must equal list position")
        pc = self.polarity_constants
        for key in ("same", "neutral_cross", "opposite"):
            if key not in pc:
                raise ConfigError(f"polarity_constants missing '{key}'")
        if not pc["same"] < pc["neutral_cross"] < pc["opposite"]:
            raise ConfigError("need same < neutral_cross < opposite")

    @property
    def E(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> list[str]:
        return [lab.name for lab in self.labels]

    def index_of(self, name: str) -> int:
        for lab in self.labels:
            if lab.name == name:
                return lab.index
        raise InvalidLabelError(f"unknown label name: {name!r}")

    def _check(self, i: int):
        if not 0 <= i < self.E:
            raise InvalidLabelError(f"label index {i} outside [0, {self.E})")


def default_config() -> EcmConfig:
    """The 12-label layout with love at slot 0 and 30 degree spacing."""
    labels = tuple(
        EmotionLabel(index=i, name=name, slot=slot, polarity=pol)
        for i, (name, slot, pol) in enumerate(_DEFAULT_LAYOUT)
    )
    return EcmConfig(labels=labels)


def evenly_spaced_config(names: list[str], polarities=None) -> EcmConfig:
    """Place ``names`` on consecutive slots. Handy for reduced-label sweeps."""
    if polarities is None:
        polarities = [Polarity.NEUTRAL] * len(names)
        # Neutral-only layouts would violate the constant ordering use case,
        # so alternate halves instead: first half Positive, second Negative.
        half = (len(names) + 1) // 2
        polarities = [
            Polarity.POSITIVE if i < half else Polarity.NEGATIVE
            for i in range(len(names))
        ]
    labels = tuple(
        EmotionLabel(index=i, name=n, slot=i, polarity=p)
        for i, (n, p) in enumerate(zip(names, polarities))
    )
    return EcmConfig(labels=labels)


def delta_theta(cfg: EcmConfig, i: int, j: int) -> float:
    """Angular difference in radians along the circle, in [0, pi]."""
    return angle_distance_steps(cfg, i, j) * 2.0 * math.pi / cfg.E


def angle_distance_steps(cfg: EcmConfig, i: int, j: int) -> int:
    """Circular step count between two labels, in [0, floor(E/2)]."""
    cfg._check(i)
    cfg._check(j)
    raw = abs(cfg.labels[i].slot - cfg.labels[j].slot)
    return min(raw, cfg.E - raw)


def circumplex_distance(cfg: EcmConfig, i: int, j: int) -> float:
    """Polarity constant plus circular step count."""
    steps = angle_distance_steps(cfg, i, j)
    pi_, pj = cfg.labels[i].polarity, cfg.labels[j].polarity
    pc = cfg.polarity_constants
    if pi_ == pj:
        c = pc["same"]
    elif Polarity.NEUTRAL in (pi_, pj):
        c = pc["neutral_cross"]
    else:
        c = pc["opposite"]
    return c + steps


def target_cosine(cfg: EcmConfig, i: int, j: int) -> float:
    """cos(delta_theta(i, j)); the similarity the circle assigns to a pair."""
    return math.cos(delta_theta(cfg, i, j))


def target_cosine_matrix(cfg: EcmConfig):
    """E x E matrix of target cosines. Returned as nested lists of floats."""
    return [
        [target_cosine(cfg, i, j) for j in range(cfg.E)] for i in range(cfg.E)
    ]


def to_json(cfg: EcmConfig) -> str:
    doc = {
        "version": 1,
        "labels": [
            {"name": lab.name, "slot": lab.slot, "polarity": lab.polarity.value}
            for lab in cfg.labels
        ],
        "polarity_constants": cfg.polarity_constants,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> EcmConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "labels" not in doc:
        raise ConfigError("config document must be an object with a 'labels' list")
    labels = []
    for i, entry in enumerate(doc["labels"]):
        try:
            pol = Polarity(entry["polarity"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"label {i}: bad polarity {entry.get('polarity')!r}") from exc
        try:
            labels.append(
                EmotionLabel(index=i, name=str(entry["name"]), slot=int(entry["slot"]), polarity=pol)
            )
        except KeyError as exc:
            raise ConfigError(f"label {i}: missing field {exc}") from exc
    constants = doc.get("polarity_constants", dict(DEFAULT_POLARITY_CONSTANTS))
    constants = {k: float(v) for k, v in constants.items()}
    return EcmConfig(labels=tuple(labels), polarity_constants=constants)


def save_config(cfg: EcmConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(cfg))


def load_config(path) -> EcmConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())
