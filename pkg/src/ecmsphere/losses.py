"""Contrastive objectives over a batch of unit-sphere embeddings.

Three objectives, all driven by the circle layout:

  - ``sincere_loss``: InfoNCE over in-batch pairs where each positive term
    competes only against the negatives, never against other positives.
  - ``softcse_loss``: the same, with each negative term weighted by how far
    its label sits on the circle, ``(1 - cos dtheta)`` normalized to mean 1
    per anchor. Near labels repel weakly, antipodal labels strongly.
  - ``circularcse_loss``: squared error driving every pairwise cosine to the
    circle target ``cos dtheta``, with a hinge margin for same-label pairs.

Each objective exists twice: a graph builder used by the trainer (operating
on a taped embedding tensor) and a plain batch evaluator used by tests and
reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .ecm import EcmConfig, target_cosine
from .errors import (
    ConfigError,
    ContractError,
    DegenerateGeometryError,
    EmptyObjectiveError,
    InvalidLabelError,
)

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    margin: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("temperature tau must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")


@dataclass
class LabeledBatch:
    """B unit-norm embeddings with label indices into a circle config."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2:
            raise ContractError("embeddings must be a (B, d) matrix")
        b = self.embeddings.shape[0]
        if b < 2:
            raise ContractError("a batch needs at least 2 samples")
        if self.labels.shape != (b,):
            raise ContractError("labels must align with embeddings")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ContractError(f"embeddings must be unit rows (max deviation {worst:.2e})")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


def _pair_masks(labels):
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    pos = same & ~eye
    neg = ~same
    return pos, neg


def _positive_weight_matrix(labels):
    """w[i, j] = 1 / (valid_anchors * |P_i|) on positive pairs, else 0.

    Anchors without positives are skipped; the outer mean runs over anchors
    that contribute at least one positive term.
    """
    pos, _ = _pair_masks(labels)
    counts = pos.sum(axis=1)
    valid = counts > 0
    if not np.any(valid):
        raise EmptyObjectiveError("no anchor in the batch has a positive sample")
    w = np.zeros(pos.shape)
    rows = np.where(valid)[0]
    w[rows] = pos[rows] / counts[rows, None]
    return w / valid.sum()


def _negative_weight_matrix(labels, ecm: EcmConfig):
    """SoftCSE weights on negative pairs, mean 1 per anchor, else 0."""
    _, neg = _pair_masks(labels)
    raw = np.where(neg, 1.0 - target_matrix(labels, ecm), 0.0)
    counts = neg.sum(axis=1)
    sums = raw.sum(axis=1)
    has_negs = counts > 0
    means = np.zeros(len(labels))
    means[has_negs] = sums[has_negs] / counts[has_negs]
    if np.any(has_negs & (means <= 0.0)):
        bad = int(np.where(has_negs & (means <= 0.0))[0][0])
        raise DegenerateGeometryError(
            f"anchor {bad}: negative-pair angle weights sum to zero"
        )
    weights = np.zeros_like(raw)
    weights[has_negs] = raw[has_negs] / means[has_negs, None]
    return weights


def target_matrix(labels, ecm: EcmConfig):
    """cos(dtheta) for every ordered pair of batch labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= ecm.E):
        raise InvalidLabelError("batch labels fall outside the circle config")
    table = np.array(
        [[target_cosine(ecm, i, j) for j in range(ecm.E)] for i in range(ecm.E)]
    )
    return table[labels[:, None], labels[None, :]]


# -- graph builders (trainer path) --------------------------------------------


def sincere_graph(tape: Tape, emb: Tensor, labels, cfg: LossConfig) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    _, neg = _pair_masks(labels)
    w_pos = _positive_weight_matrix(labels)
    sims = tape.matmul(emb, tape.transpose(emb))
    logits = tape.scale(sims, 1.0 / cfg.tau)
    expl = tape.exp(logits)
    neg_sum = tape.sum_reduce(
        tape.hadamard(expl, tape.constant(neg.astype(np.float64))), axis=1, keepdims=True
    )
    # -log(a_ij / (a_ij + n_i)) = log(a_ij + n_i) - s_ij / tau
    terms = tape.sub(tape.log(tape.add(expl, neg_sum)), logits)
    return tape.sum_reduce(tape.hadamard(terms, tape.constant(w_pos)))


def softcse_graph(tape: Tape, emb: Tensor, labels, cfg: LossConfig, ecm: EcmConfig) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    w_pos = _positive_weight_matrix(labels)
    w_neg = _negative_weight_matrix(labels, ecm)
    sims = tape.matmul(emb, tape.transpose(emb))
    logits = tape.scale(sims, 1.0 / cfg.tau)
    expl = tape.exp(logits)
    neg_sum = tape.sum_reduce(
        tape.hadamard(expl, tape.constant(w_neg)), axis=1, keepdims=True
    )
    terms = tape.sub(tape.log(tape.add(expl, neg_sum)), logits)
    return tape.sum_reduce(tape.hadamard(terms, tape.constant(w_pos)))


def circularcse_graph(tape: Tape, emb: Tensor, labels, cfg: LossConfig, ecm: EcmConfig) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    b = len(labels)
    pos, neg = _pair_masks(labels)
    targets = target_matrix(labels, ecm)
    sims = tape.matmul(emb, tape.transpose(emb))
    diff = tape.sub(sims, tape.constant(targets))
    hinged = tape.relu(tape.sub(tape.absolute(diff), tape.constant(float(cfg.margin))))
    same_sq = tape.hadamard(hinged, hinged)
    diff_sq = tape.hadamard(diff, diff)
    total = tape.add(
        tape.sum_reduce(tape.hadamard(same_sq, tape.constant(pos.astype(np.float64)))),
        tape.sum_reduce(tape.hadamard(diff_sq, tape.constant(neg.astype(np.float64)))),
    )
    return tape.scale(total, 1.0 / (b * (b - 1)))


def build_loss_graph(kind, tape, emb, labels, cfg: LossConfig, ecm: EcmConfig) -> Tensor:
    if kind == "sincere":
        return sincere_graph(tape, emb, labels, cfg)
    if kind == "softcse":
        return softcse_graph(tape, emb, labels, cfg, ecm)
    if kind == "circularcse":
        return circularcse_graph(tape, emb, labels, cfg, ecm)
    raise ConfigError(f"unknown loss kind {kind!r}")


LOSS_KINDS = ("sincere", "softcse", "circularcse")


# -- plain evaluators ----------------------------------------------------------


def _evaluate(builder, batch: LabeledBatch, *args) -> float:
    tape = Tape(checked=True)
    emb = tape.constant(batch.embeddings)
    return float(builder(tape, emb, batch.labels, *args).data)


def sincere_loss(batch: LabeledBatch, cfg: LossConfig) -> float:
    """Mean over anchors and their positives of the one-vs-negatives log loss."""
    return _evaluate(sincere_graph, batch, cfg)


def softcse_loss(batch: LabeledBatch, cfg: LossConfig, ecm: EcmConfig) -> float:
    """SINCERE with circle-aware weights on the negative terms."""
    return _evaluate(softcse_graph, batch, cfg, ecm)


def circularcse_loss(batch: LabeledBatch, cfg: LossConfig, ecm: EcmConfig) -> float:
    """Mean squared gap to the circle's cosine targets over ordered pairs."""
    return _evaluate(circularcse_graph, batch, cfg, ecm)
