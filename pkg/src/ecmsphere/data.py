"""Dataset storage and the planted-circle synthetic generator.

The on-disk layout ("ECM1") is frozen: the 4-byte magic ``ECM1``, a 32-bit
little-endian header length, a UTF-8 JSON header describing dimension, label
names and per-record metadata, then every record's token matrix as row-major
little-endian float32, concatenated in record order. Values are stored in 32
bits and computed on in 64, so a round trip is exact after one float32
quantization.

The generator plants each label's mean direction at its circle coordinates
``(cos theta, sin theta)`` inside the first two axes of R^d, draws signal
tokens from a von Mises-Fisher style perturbation ``normalize(kappa * mu +
gaussian)``, and pads records with scaled random distractor tokens. With
``kappa = inf`` samples sit exactly on their planted directions, which makes
ideal metric values known by construction.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .ecm import EcmConfig
from .errors import ConfigError, ContractError, FormatError, InvalidLabelError

MAGIC = b"ECM1"


@dataclass
class Record:
    id: str
    label_index: int
    token_states: np.ndarray  # (T, d) float64 in memory

    def __post_init__(self):
        self.token_states = np.asarray(self.token_states, dtype=np.float64)
        if self.token_states.ndim != 2 or self.token_states.shape[0] < 1:
            raise ContractError(f"record {self.id!r}: token states must be (T>=1, d)")
        if not np.all(np.isfinite(self.token_states)):
            raise ContractError(f"record {self.id!r}: non-finite token states")


@dataclass
class EmbeddingDataset:
    d: int
    label_names: list[str]
    records: list[Record] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ContractError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if rec.token_states.shape[1] != self.d:
                raise ContractError(
                    f"record {rec.id!r}: dimension {rec.token_states.shape[1]} != {self.d}"
                )
            if not 0 <= rec.label_index < len(self.label_names):
                raise ContractError(f"record {rec.id!r}: label index out of range")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label_index for r in self.records], dtype=np.int64)

    @property
    def sequences(self) -> list[np.ndarray]:
        return [r.token_states for r in self.records]


def save(dataset: EmbeddingDataset, path):
    header = {
        "version": 1,
        "d": dataset.d,
        "label_names": list(dataset.label_names),
        "records": [
            {"id": r.id, "label_index": int(r.label_index), "T": int(r.token_states.shape[0])}
            for r in dataset.records
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for rec in dataset.records:
            fh.write(np.ascontiguousarray(rec.token_states, dtype="<f4").tobytes())


def load(path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < 8:
        raise FormatError("file truncated before header length", offset=4)
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise FormatError("file truncated inside JSON header", offset=len(raw))
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=8) from exc
    if header.get("version") != 1:
        raise FormatError(f"unsupported version {header.get('version')!r}", offset=8)
    d = int(header["d"])
    offset = 8 + header_len
    records = []
    for meta in header["records"]:
        t = int(meta["T"])
        nbytes = t * d * 4
        if offset + nbytes > len(raw):
            raise FormatError(
                f"payload truncated in record {meta['id']!r}: need {nbytes} bytes", offset=offset
            )
        mat = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4").reshape(t, d)
        records.append(
            Record(id=str(meta["id"]), label_index=int(meta["label_index"]), token_states=mat.astype(np.float64))
        )
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes after payload", offset=offset)
    return EmbeddingDataset(d=d, label_names=[str(n) for n in header["label_names"]], records=records)


@dataclass(frozen=True)
class SynthConfig:
    ecm: EcmConfig
    n_per_label: int = 100
    d: int = 16
    T: int = 1
    kappa: float = 50.0  # math.inf plants samples exactly on their directions
    distractor_scale: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.d < 3:
            raise ConfigError("d must be at least 3")
        if self.n_per_label < 1:
            raise ConfigError("n_per_label must be positive")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if not (self.kappa > 0):
            raise ConfigError("kappa must be positive (or inf)")
        if self.distractor_scale < 0:
            raise ConfigError("distractor_scale must be non-negative")


_SPLIT_CODES = {"train": 0, "test": 1}


def planted_direction(ecm: EcmConfig, label_index: int, d: int) -> np.ndarray:
    """The label's circle coordinates embedded in the first two axes of R^d."""
    theta = ecm.labels[label_index].angle(ecm.E)
    mu = np.zeros(d)
    mu[0] = math.cos(theta)
    mu[1] = math.sin(theta)
    return mu


def synth_generate(cfg: SynthConfig, split="train") -> EmbeddingDataset:
    """Deterministic planted dataset; (seed, split) fixes the byte content."""
    if split not in _SPLIT_CODES:
        raise ConfigError(f"split must be one of {sorted(_SPLIT_CODES)}")
    rng = np.random.default_rng([cfg.seed, _SPLIT_CODES[split]])
    records = []
    for label in cfg.ecm.labels:
        mu = planted_direction(cfg.ecm, label.index, cfg.d)
        for i in range(cfg.n_per_label):
            if math.isinf(cfg.kappa):
                signal = mu.copy()
            else:
                noisy = mu * cfg.kappa + rng.standard_normal(cfg.d)
                signal = noisy / np.linalg.norm(noisy)
            tokens = [signal]
            for _ in range(cfg.T - 1):
                raw = rng.standard_normal(cfg.d)
                tokens.append(raw / np.linalg.norm(raw) * cfg.distractor_scale)
            tokens = np.stack(tokens)
            order = rng.permutation(cfg.T)
            records.append(
                Record(
                    id=f"{split}-{label.name}-{i:05d}",
                    label_index=label.index,
                    token_states=tokens[order],
                )
            )
    return EmbeddingDataset(d=cfg.d, label_names=cfg.ecm.names, records=records)


def load_jsonl(path, label_names) -> EmbeddingDataset:
    """Import hand-authored fixtures: one {id, label, vectors} object per line."""
    label_names = list(label_names)
    index = {name: i for i, name in enumerate(label_names)}
    records = []
    d = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: not valid JSON: {exc}") from exc
            try:
                label = doc["label"]
                vectors = np.asarray(doc["vectors"], dtype=np.float64)
                rec_id = str(doc["id"])
            except KeyError as exc:
                raise FormatError(f"line {lineno}: missing field {exc}") from exc
            if label not in index:
                raise InvalidLabelError(f"line {lineno}: unknown label {label!r}")
            if vectors.ndim != 2:
                raise FormatError(f"line {lineno}: vectors must be a list of rows")
            if d is None:
                d = vectors.shape[1]
            records.append(Record(id=rec_id, label_index=index[label], token_states=vectors))
    if d is None:
        raise FormatError("no records in JSON-lines file")
    return EmbeddingDataset(d=d, label_names=label_names, records=records)
