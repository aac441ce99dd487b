"""Deterministic mini-batch training of a projection head.

The loop is plain and reproducible: label-stratified batches fixed by
(seed, epoch), one packed forward per batch, reverse-mode gradients, an Adam
step, and, for the normalized head, a weight renormalization after every
step. Given the same dataset, config and seed the final parameters are
bit-identical across runs.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .data import EmbeddingDataset
from .ecm import EcmConfig
from .errors import ConfigError, TrainingDivergedError
from .heads import (
    HeadConfig,
    embed_graph,
    init_params,
    lift_params,
    renormalize_weights,
    validate_params,
)
from .losses import LOSS_KINDS, LossConfig, build_loss_graph

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "sincere"
    head_kind: str = "ngpt"
    learning_rate: float = 5e-5
    epochs: int = 15
    batch_size: int = 128
    seed: int = 42
    tau: float = 0.05
    margin: float = 0.0
    scheduler: str = "constant"

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.head_kind not in ("gpt", "ngpt"):
            raise ConfigError("head_kind must be 'gpt' or 'ngpt'")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("learning_rate, epochs and batch_size must be positive")
        if self.scheduler != "constant":
            raise ConfigError("only the constant schedule is supported")

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, margin=self.margin)


@dataclass
class TrainLog:
    step_losses: list = field(default_factory=list)  # (step, epoch, loss)
    epoch_means: list = field(default_factory=list)
    wall_clock: float = 0.0
    final_checksum: str = ""


def params_checksum(params) -> str:
    digest = hashlib.sha256()
    for name, arr in params.named_arrays():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()


def make_batches(dataset, batch_size, seed, epoch):
    """Label-stratified shuffled index batches, deterministic in (seed, epoch).

    ``dataset`` is an EmbeddingDataset or a plain array of label indices.
    Samples of each label are paired up first so nearly every label present
    in a batch contributes at least two members; leftover singletons are
    spread over batches with spare capacity. Batches never hold fewer than
    two samples.
    """
    if isinstance(dataset, EmbeddingDataset):
        labels = dataset.labels
    else:
        labels = np.asarray(dataset, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ConfigError("dataset is empty")
    if batch_size < 2:
        raise ConfigError("batch_size must be at least 2")
    if batch_size >= n:
        return [list(range(n))]
    rng = np.random.default_rng([seed, epoch])
    pairs, singles = [], []
    for value in np.unique(labels):
        pool = np.where(labels == value)[0]
        pool = pool[rng.permutation(len(pool))]
        for k in range(0, len(pool) - 1, 2):
            pairs.append((int(pool[k]), int(pool[k + 1])))
        if len(pool) % 2:
            singles.append(int(pool[-1]))
    order = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    if singles:
        order = rng.permutation(len(singles))
        singles = [singles[i] for i in order]

    per_batch = batch_size // 2
    batches = []
    for start in range(0, len(pairs), per_batch):
        chunk = pairs[start : start + per_batch]
        batches.append([i for pair in chunk for i in pair])
    cursor = 0
    while singles and cursor < len(batches):
        while singles and len(batches[cursor]) < batch_size:
            batches[cursor].append(singles.pop(0))
        cursor += 1
    while singles:
        batches.append(singles[:batch_size])
        singles = singles[batch_size:]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    return batches


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params_arrays, grads, state, lr):
    """One Adam update with bias correction. Returns (new_arrays, state)."""
    if state is None:
        state = AdamState()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name}", step=state.t + 1)
    state.t += 1
    t = state.t
    out = {}
    for name, arr in params_arrays.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(arr)
            v = np.zeros_like(arr)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        out[name] = arr - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return out, state


def _arrays_to_params(template, arrays):
    kind = template.head_kind
    n_heads = len(template.w_q)
    kwargs = dict(
        w_q=[arrays[f"w_q.{n}"] for n in range(n_heads)],
        w_k=[arrays[f"w_k.{n}"] for n in range(n_heads)],
        w_v=[arrays[f"w_v.{n}"] for n in range(n_heads)],
        w_o=arrays["w_o"],
        mlp_u=arrays["mlp_u"],
        mlp_v=arrays["mlp_v"],
        mlp_o=arrays["mlp_o"],
    )
    if kind == "gpt":
        kwargs.update(gain_attn=arrays["gain_attn"], gain_mlp=arrays["gain_mlp"])
    else:
        kwargs.update(
            alpha_attn=arrays["alpha_attn"],
            alpha_mlp=arrays["alpha_mlp"],
            s_qk=arrays["s_qk"],
            s_u=arrays["s_u"],
            s_v=arrays["s_v"],
        )
    return type(template)(**kwargs)


def train(
    dataset: EmbeddingDataset,
    train_cfg: TrainConfig,
    ecm: EcmConfig,
    head_cfg: HeadConfig,
    params=None,
    step_callback=None,
):
    """Train a head on frozen token states. Returns (params, TrainLog).

    ``step_callback(step, params)``, when given, runs after every completed
    optimizer step (after renormalization for the normalized head).
    """
    if dataset.d != head_cfg.d:
        raise ConfigError(f"dataset dimension {dataset.d} != head dimension {head_cfg.d}")
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    if dataset.label_names and len(dataset.label_names) > ecm.E:
        raise ConfigError("dataset has more labels than the circle config")

    if params is None:
        params = init_params(train_cfg.head_kind, head_cfg, train_cfg.seed)
    elif params.head_kind != train_cfg.head_kind:
        raise ConfigError("provided parameters do not match head_kind")
    validate_params(params, head_cfg)

    loss_cfg = train_cfg.loss_config()
    labels_all = dataset.labels
    sequences = dataset.sequences
    log = TrainLog()
    state = None
    step = 0
    started = time.perf_counter()

    for epoch in range(train_cfg.epochs):
        epoch_losses = []
        for batch in make_batches(labels_all, train_cfg.batch_size, train_cfg.seed, epoch):
            step += 1
            tape = Tape(checked=False)
            tensors = lift_params(tape, params, trainable=True)
            emb = embed_graph(
                tape, tensors, [sequences[i] for i in batch], head_cfg, train_cfg.head_kind
            )
            loss = build_loss_graph(
                train_cfg.loss_kind, tape, emb, labels_all[batch], loss_cfg, ecm
            )
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"loss became non-finite ({loss_value})", step=step, last_good_params=params
                )
            grads = backward(tape, loss)
            arrays = dict(params.named_arrays())
            try:
                arrays, state = adam_step(arrays, grads, state, train_cfg.learning_rate)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    str(exc), step=step, last_good_params=params
                ) from exc
            params = _arrays_to_params(params, arrays)
            if train_cfg.head_kind == "ngpt":
                params = renormalize_weights(params)
            log.step_losses.append((step, epoch + 1, loss_value))
            epoch_losses.append(loss_value)
            if step_callback is not None:
                step_callback(step, params)
        log.epoch_means.append(float(np.mean(epoch_losses)))
    log.wall_clock = time.perf_counter() - started
    log.final_checksum = params_checksum(params)
    return params, log
