"""Projection heads: a standard Transformer block and its normalized variant.

Both heads map a sequence of backbone token states (T x d) to new states and
then to a single unit-norm sentence embedding via pooling. The standard block
(GPT head) uses pre-RMSNorm residual updates in Euclidean space. The
normalized block (nGPT head) keeps every hidden state on the unit sphere and
replaces residual addition with a learnable spherical interpolation; its
weight matrices are rescaled to unit-norm slices after every optimizer step.

Forward passes are expressed as taped primitive graphs so the same code path
serves inference, training, and gradient checking. Batches of independent
sequences are packed into one graph with a block-diagonal attention mask,
which keeps tape sizes independent of batch size.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, DegenerateNormError, DimensionError, FormatError

RMS_EPS = 1e-6
ALPHA_INIT = 0.05
_UNIT_SKIP = 1e-12  # slices already unit to rounding are left untouched

POOLINGS = ("cls", "last", "mean")
CHECKPOINT_MAGIC = b"ECMH"


@dataclass(frozen=True)
class HeadConfig:
    d: int
    n_heads: int
    d_mlp: int
    causal: bool = False
    pooling: str = "mean"

    def __post_init__(self):
        if self.d < 1 or self.n_heads < 1 or self.d_mlp < 1:
            raise ConfigError("d, n_heads and d_mlp must be positive")
        if self.d % self.n_heads != 0:
            raise ConfigError(f"n_heads {self.n_heads} does not divide d {self.d}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")

    @property
    def d_head(self) -> int:
        return self.d // self.n_heads


def default_head_config(d, n_heads=4, d_mlp=None, pooling="mean") -> HeadConfig:
    """Convention: last-token pooling implies a causal mask, others do not."""
    if d_mlp is None:
        d_mlp = 4 * d
    return HeadConfig(d=d, n_heads=n_heads, d_mlp=d_mlp, causal=(pooling == "last"), pooling=pooling)


@dataclass
class GptHeadParams:
    """Weights of the standard block. Arrays are float64."""

    w_q: list
    w_k: list
    w_v: list
    w_o: np.ndarray
    mlp_u: np.ndarray
    mlp_v: np.ndarray
    mlp_o: np.ndarray
    gain_attn: np.ndarray
    gain_mlp: np.ndarray

    head_kind = "gpt"

    def named_arrays(self):
        out = []
        for n, w in enumerate(self.w_q):
            out.append((f"w_q.{n}", w))
        for n, w in enumerate(self.w_k):
            out.append((f"w_k.{n}", w))
        for n, w in enumerate(self.w_v):
            out.append((f"w_v.{n}", w))
        out.append(("w_o", self.w_o))
        out.append(("mlp_u", self.mlp_u))
        out.append(("mlp_v", self.mlp_v))
        out.append(("mlp_o", self.mlp_o))
        out.append(("gain_attn", self.gain_attn))
        out.append(("gain_mlp", self.gain_mlp))
        return out


@dataclass
class NGptHeadParams:
    """Weights of the normalized block plus its interpolation and scale vectors."""

    w_q: list
    w_k: list
    w_v: list
    w_o: np.ndarray
    mlp_u: np.ndarray
    mlp_v: np.ndarray
    mlp_o: np.ndarray
    alpha_attn: np.ndarray
    alpha_mlp: np.ndarray
    s_qk: np.ndarray
    s_u: np.ndarray
    s_v: np.ndarray

    head_kind = "ngpt"

    def named_arrays(self):
        out = []
        for n, w in enumerate(self.w_q):
            out.append((f"w_q.{n}", w))
        for n, w in enumerate(self.w_k):
            out.append((f"w_k.{n}", w))
        for n, w in enumerate(self.w_v):
            out.append((f"w_v.{n}", w))
        out.append(("w_o", self.w_o))
        out.append(("mlp_u", self.mlp_u))
        out.append(("mlp_v", self.mlp_v))
        out.append(("mlp_o", self.mlp_o))
        out.append(("alpha_attn", self.alpha_attn))
        out.append(("alpha_mlp", self.alpha_mlp))
        out.append(("s_qk", self.s_qk))
        out.append(("s_u", self.s_u))
        out.append(("s_v", self.s_v))
        return out


def _expected_shapes(cfg: HeadConfig, head_kind: str):
    shapes = {}
    for n in range(cfg.n_heads):
        shapes[f"w_q.{n}"] = (cfg.d, cfg.d_head)
        shapes[f"w_k.{n}"] = (cfg.d, cfg.d_head)
        shapes[f"w_v.{n}"] = (cfg.d, cfg.d_head)
    shapes["w_o"] = (cfg.d, cfg.d)
    shapes["mlp_u"] = (cfg.d, cfg.d_mlp)
    shapes["mlp_v"] = (cfg.d, cfg.d_mlp)
    shapes["mlp_o"] = (cfg.d_mlp, cfg.d)
    if head_kind == "gpt":
        shapes["gain_attn"] = (cfg.d,)
        shapes["gain_mlp"] = (cfg.d,)
    else:
        shapes["alpha_attn"] = (cfg.d,)
        shapes["alpha_mlp"] = (cfg.d,)
        shapes["s_qk"] = (cfg.d_head,)
        shapes["s_u"] = (cfg.d_mlp,)
        shapes["s_v"] = (cfg.d_mlp,)
    return shapes


def validate_params(params, cfg: HeadConfig):
    expected = _expected_shapes(cfg, params.head_kind)
    named = dict(params.named_arrays())
    if set(named) != set(expected):
        raise DimensionError("parameter set does not match the head configuration")
    for name, arr in named.items():
        if tuple(np.shape(arr)) != expected[name]:
            raise DimensionError(
                f"{name}: shape {np.shape(arr)} != expected {expected[name]}"
            )


# Normalization axis per weight matrix: the axis of length d (the model
# dimension), so every slice that multiplies against a hidden state is a
# unit vector. mlp_o carries d on its second axis, everything else on its
# first; for w_o (d x d) the input axis is used.
_NORM_AXIS = {"w_q": 0, "w_k": 0, "w_v": 0, "w_o": 0, "mlp_u": 0, "mlp_v": 0, "mlp_o": 1}


def _normalize_slices(w, axis):
    sq = np.sum(w * w, axis=axis, keepdims=True)
    if np.any(sq <= 0.0):
        raise DegenerateNormError("weight matrix has an all-zero slice")
    norms = np.sqrt(sq)
    # leaving already-unit slices untouched makes repeated application
    # bit-stable
    scale = np.where(np.abs(norms - 1.0) > _UNIT_SKIP, norms, 1.0)
    return w / scale


def renormalize_weights(params: NGptHeadParams) -> NGptHeadParams:
    """Rescale every weight matrix to unit-norm slices along the model axis.

    Interpolation vectors (alpha) and scale vectors (s) are left untouched.
    Idempotent: a second application returns bit-identical arrays.
    """
    return replace(
        params,
        w_q=[_normalize_slices(w, _NORM_AXIS["w_q"]) for w in params.w_q],
        w_k=[_normalize_slices(w, _NORM_AXIS["w_k"]) for w in params.w_k],
        w_v=[_normalize_slices(w, _NORM_AXIS["w_v"]) for w in params.w_v],
        w_o=_normalize_slices(params.w_o, _NORM_AXIS["w_o"]),
        mlp_u=_normalize_slices(params.mlp_u, _NORM_AXIS["mlp_u"]),
        mlp_v=_normalize_slices(params.mlp_v, _NORM_AXIS["mlp_v"]),
        mlp_o=_normalize_slices(params.mlp_o, _NORM_AXIS["mlp_o"]),
    )


def weight_slice_norms(params):
    """All slice norms of the weight matrices, flattened. Test/debug helper."""
    norms = []
    for name, arr in params.named_arrays():
        base = name.split(".")[0]
        if base in _NORM_AXIS:
            norms.append(np.linalg.norm(arr, axis=_NORM_AXIS[base]).reshape(-1))
    return np.concatenate(norms)


def init_gpt_params(cfg: HeadConfig, seed=0) -> GptHeadParams:
    rng = np.random.default_rng(seed)
    std = cfg.d ** -0.5

    def draw(shape):
        return rng.normal(0.0, std, size=shape)

    params = GptHeadParams(
        w_q=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_k=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_v=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_o=draw((cfg.d, cfg.d)),
        mlp_u=draw((cfg.d, cfg.d_mlp)),
        mlp_v=draw((cfg.d, cfg.d_mlp)),
        mlp_o=draw((cfg.d_mlp, cfg.d)),
        gain_attn=np.ones(cfg.d),
        gain_mlp=np.ones(cfg.d),
    )
    return params


def init_ngpt_params(cfg: HeadConfig, seed=0) -> NGptHeadParams:
    rng = np.random.default_rng(seed)
    std = cfg.d ** -0.5

    def draw(shape):
        return rng.normal(0.0, std, size=shape)

    params = NGptHeadParams(
        w_q=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_k=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_v=[draw((cfg.d, cfg.d_head)) for _ in range(cfg.n_heads)],
        w_o=draw((cfg.d, cfg.d)),
        mlp_u=draw((cfg.d, cfg.d_mlp)),
        mlp_v=draw((cfg.d, cfg.d_mlp)),
        mlp_o=draw((cfg.d_mlp, cfg.d)),
        # small alpha starts the block near the identity map on the sphere
        alpha_attn=np.full(cfg.d, ALPHA_INIT),
        alpha_mlp=np.full(cfg.d, ALPHA_INIT),
        s_qk=np.ones(cfg.d_head),
        s_u=np.ones(cfg.d_mlp),
        s_v=np.ones(cfg.d_mlp),
    )
    return renormalize_weights(params)


def init_params(head_kind: str, cfg: HeadConfig, seed=0):
    if head_kind == "gpt":
        return init_gpt_params(cfg, seed)
    if head_kind == "ngpt":
        return init_ngpt_params(cfg, seed)
    raise ConfigError(f"unknown head kind {head_kind!r}")


# -- packing ----------------------------------------------------------------


def pack_sequences(sequences):
    """Stack sequences into one (M, d) array plus their lengths."""
    arrs = [np.asarray(s, dtype=np.float64) for s in sequences]
    for a in arrs:
        if a.ndim != 2:
            raise DimensionError("each sequence must be a (T, d) matrix")
        if a.shape[0] < 1:
            raise DimensionError("sequences must contain at least one token")
    d = arrs[0].shape[1]
    for a in arrs:
        if a.shape[1] != d:
            raise DimensionError("sequences disagree on the model dimension")
    return np.concatenate(arrs, axis=0), [a.shape[0] for a in arrs]


def _disallowed_mask(lengths, causal):
    """True where attention is forbidden: across sequences, or ahead in time."""
    m = sum(lengths)
    mask = np.ones((m, m), dtype=bool)
    off = 0
    for t in lengths:
        if causal:
            mask[off : off + t, off : off + t] = np.triu(np.ones((t, t), dtype=bool), k=1)
        else:
            mask[off : off + t, off : off + t] = False
        off += t
    return mask


def _pooling_matrix(lengths, strategy):
    b, m = len(lengths), sum(lengths)
    pool = np.zeros((b, m))
    off = 0
    for i, t in enumerate(lengths):
        if strategy == "cls":
            pool[i, off] = 1.0
        elif strategy == "last":
            pool[i, off + t - 1] = 1.0
        else:
            pool[i, off : off + t] = 1.0 / t
        off += t
    return pool


# -- taped graphs -------------------------------------------------------------


def lift_params(tape: Tape, params, trainable=False):
    """Register parameter arrays on a tape; returns name -> Tensor."""
    out = {}
    for name, arr in params.named_arrays():
        out[name] = tape.parameter(arr, name) if trainable else tape.constant(arr)
    return out


def _rms_norm_graph(tape, x, gain):
    sq = tape.hadamard(x, x)
    ms = tape.mean_reduce(sq, axis=-1, keepdims=True)
    rsqrt = tape.exp(tape.scale(tape.log(tape.add(ms, tape.constant(RMS_EPS))), -0.5))
    return tape.hadamard(tape.hadamard(x, rsqrt), gain)


def _attention_graph(tape, p, x, disallowed, cfg: HeadConfig, normalized):
    heads = []
    for n in range(cfg.n_heads):
        q = tape.matmul(x, p[f"w_q.{n}"])
        k = tape.matmul(x, p[f"w_k.{n}"])
        v = tape.matmul(x, p[f"w_v.{n}"])
        if normalized:
            q = tape.hadamard(tape.row_normalize(q), p["s_qk"])
            k = tape.hadamard(tape.row_normalize(k), p["s_qk"])
            logits = tape.scale(tape.matmul(q, tape.transpose(k)), cfg.d_head ** 0.5)
        else:
            logits = tape.scale(tape.matmul(q, tape.transpose(k)), cfg.d_head ** -0.5)
        logits = tape.masked_fill(logits, disallowed, -np.inf)
        heads.append(tape.matmul(tape.row_softmax(logits), v))
    merged = heads[0] if len(heads) == 1 else tape.concat(heads, axis=1)
    return tape.matmul(merged, p["w_o"])


def _gpt_graph(tape, p, x, disallowed, cfg, stages=None):
    attn = _attention_graph(tape, p, _rms_norm_graph(tape, x, p["gain_attn"]), disallowed, cfg, False)
    h1 = tape.add(x, attn)
    h1n = _rms_norm_graph(tape, h1, p["gain_mlp"])
    gate = tape.silu(tape.matmul(h1n, p["mlp_u"]))
    lin = tape.matmul(h1n, p["mlp_v"])
    mlp = tape.matmul(tape.hadamard(gate, lin), p["mlp_o"])
    out = tape.add(h1, mlp)
    if stages is not None:
        stages.update(attn_module=attn, post_attn=h1, mlp_module=mlp, final=out)
    return out


def _ngpt_graph(tape, p, x, disallowed, cfg, stages=None):
    one = tape.constant(1.0)
    attn_n = tape.row_normalize(_attention_graph(tape, p, x, disallowed, cfg, True))
    mix1 = tape.add(
        tape.hadamard(tape.sub(one, p["alpha_attn"]), tape.row_normalize(x)),
        tape.hadamard(p["alpha_attn"], attn_n),
    )
    h1 = tape.row_normalize(mix1)
    u = tape.hadamard(tape.matmul(h1, p["mlp_u"]), p["s_u"])
    v = tape.scale(tape.hadamard(tape.matmul(h1, p["mlp_v"]), p["s_v"]), cfg.d_mlp ** 0.5)
    mlp_n = tape.row_normalize(tape.matmul(tape.hadamard(tape.silu(v), u), p["mlp_o"]))
    mix2 = tape.add(
        tape.hadamard(tape.sub(one, p["alpha_mlp"]), tape.row_normalize(h1)),
        tape.hadamard(p["alpha_mlp"], mlp_n),
    )
    out = tape.row_normalize(mix2)
    if stages is not None:
        stages.update(attn_module=attn_n, post_attn=h1, mlp_module=mlp_n, final=out)
    return out


def block_graph(tape, p, x, disallowed, cfg, head_kind, stages=None):
    if head_kind == "gpt":
        return _gpt_graph(tape, p, x, disallowed, cfg, stages)
    if head_kind == "ngpt":
        return _ngpt_graph(tape, p, x, disallowed, cfg, stages)
    raise ConfigError(f"unknown head kind {head_kind!r}")


def embed_graph(tape, p, sequences, cfg: HeadConfig, head_kind):
    """Packed forward of many sequences down to unit embeddings (B x d)."""
    packed, lengths = pack_sequences(sequences)
    if packed.shape[1] != cfg.d:
        raise DimensionError(f"input dimension {packed.shape[1]} != cfg.d {cfg.d}")
    x = tape.constant(packed)
    out = block_graph(tape, p, x, _disallowed_mask(lengths, cfg.causal), cfg, head_kind)
    pooled = tape.matmul(tape.constant(_pooling_matrix(lengths, cfg.pooling)), out)
    return tape.row_normalize(pooled)


# -- public single-sequence operations ---------------------------------------


def _single_forward(params, h_in, cfg, stages=None):
    h_in = np.asarray(h_in, dtype=np.float64)
    if h_in.ndim != 2 or h_in.shape[1] != cfg.d:
        raise DimensionError(f"expected (T, {cfg.d}) input, got {h_in.shape}")
    validate_params(params, cfg)
    tape = Tape(checked=True)
    p = lift_params(tape, params)
    x = tape.constant(h_in)
    mask = _disallowed_mask([h_in.shape[0]], cfg.causal)
    out = block_graph(tape, p, x, mask, cfg, params.head_kind, stages)
    return out.data


def gpt_block_forward(params: GptHeadParams, h_in, cfg: HeadConfig) -> np.ndarray:
    """h' = h + ATTN(RMSNorm(h)); out = h' + MLP(RMSNorm(h'))."""
    if params.head_kind != "gpt":
        raise ConfigError("gpt_block_forward needs GPT parameters")
    return _single_forward(params, h_in, cfg)


def ngpt_block_forward(params: NGptHeadParams, h_in, cfg: HeadConfig) -> np.ndarray:
    """Spherical-interpolation block; every output row lies on the unit sphere."""
    if params.head_kind != "ngpt":
        raise ConfigError("ngpt_block_forward needs nGPT parameters")
    return _single_forward(params, h_in, cfg)


@dataclass
class BlockTrace:
    """Intermediate stages of one block forward, for manifold visualization."""

    input: np.ndarray
    attn_module: np.ndarray
    post_attn: np.ndarray
    mlp_module: np.ndarray
    final: np.ndarray

    def stage_items(self):
        return [
            ("input", self.input),
            ("post_attn", self.post_attn),
            ("mlp_module", self.mlp_module),
            ("final", self.final),
        ]


def forward_with_trace(params, h_in, cfg: HeadConfig) -> BlockTrace:
    h_in = np.asarray(h_in, dtype=np.float64)
    stages = {}
    _single_forward(params, h_in, cfg, stages)
    return BlockTrace(
        input=h_in,
        attn_module=stages["attn_module"].data,
        post_attn=stages["post_attn"].data,
        mlp_module=stages["mlp_module"].data,
        final=stages["final"].data,
    )


def pool_and_embed(h, strategy) -> np.ndarray:
    """Norm(Pooling(h)) for one sequence; returns a unit vector of length d."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise DimensionError("pooling expects a non-empty (T, d) matrix")
    if strategy not in POOLINGS:
        raise ConfigError(f"pooling must be one of {POOLINGS}")
    tape = Tape(checked=True)
    pooled = tape.matmul(tape.constant(_pooling_matrix([h.shape[0]], strategy)), tape.constant(h))
    return tape.row_normalize(pooled).data[0]


def embed_sequences(params, cfg: HeadConfig, sequences, chunk_tokens=4096) -> np.ndarray:
    """Embed many sequences without gradients, chunked to bound memory."""
    validate_params(params, cfg)
    rows = []
    chunk, used = [], 0
    for seq in sequences:
        t = np.asarray(seq).shape[0]
        if chunk and used + t > chunk_tokens:
            rows.append(_embed_chunk(params, cfg, chunk))
            chunk, used = [], 0
        chunk.append(seq)
        used += t
    if chunk:
        rows.append(_embed_chunk(params, cfg, chunk))
    return np.concatenate(rows, axis=0)


def _embed_chunk(params, cfg, chunk):
    tape = Tape(checked=True)
    p = lift_params(tape, params)
    return embed_graph(tape, p, chunk, cfg, params.head_kind).data


# -- checkpoint serialization --------------------------------------------------


def save_checkpoint(params, cfg: HeadConfig, path):
    """Magic, little-endian header length, JSON header, float64 payload."""
    named = params.named_arrays()
    header = {
        "version": 1,
        "head_kind": params.head_kind,
        "cfg": {
            "d": cfg.d,
            "n_heads": cfg.n_heads,
            "d_mlp": cfg.d_mlp,
            "causal": cfg.causal,
            "pooling": cfg.pooling,
        },
        "params": [{"name": n, "shape": list(np.shape(a))} for n, a in named],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in named:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, cfg). Raises FormatError on a malformed file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}", offset=0)
    if len(raw) < 8:
        raise FormatError("truncated checkpoint header length", offset=4)
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise FormatError("truncated checkpoint header", offset=len(raw))
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}", offset=8) from exc
    cfg = HeadConfig(**header["cfg"])
    head_kind = header["head_kind"]
    offset = 8 + header_len
    arrays = {}
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(raw):
            raise FormatError(f"payload truncated in {meta['name']}", offset=offset)
        arrays[meta["name"]] = (
            np.frombuffer(raw[offset : offset + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        )
        offset += nbytes
    if offset != len(raw):
        raise FormatError("trailing bytes after checkpoint payload", offset=offset)

    def heads_list(prefix):
        return [arrays[f"{prefix}.{n}"] for n in range(cfg.n_heads)]

    if head_kind == "gpt":
        params = GptHeadParams(
            w_q=heads_list("w_q"), w_k=heads_list("w_k"), w_v=heads_list("w_v"),
            w_o=arrays["w_o"], mlp_u=arrays["mlp_u"], mlp_v=arrays["mlp_v"],
            mlp_o=arrays["mlp_o"], gain_attn=arrays["gain_attn"], gain_mlp=arrays["gain_mlp"],
        )
    elif head_kind == "ngpt":
        params = NGptHeadParams(
            w_q=heads_list("w_q"), w_k=heads_list("w_k"), w_v=heads_list("w_v"),
            w_o=arrays["w_o"], mlp_u=arrays["mlp_u"], mlp_v=arrays["mlp_v"],
            mlp_o=arrays["mlp_o"], alpha_attn=arrays["alpha_attn"], alpha_mlp=arrays["alpha_mlp"],
            s_qk=arrays["s_qk"], s_u=arrays["s_u"], s_v=arrays["s_v"],
        )
    else:
        raise FormatError(f"unknown head kind {head_kind!r} in checkpoint", offset=8)
    validate_params(params, cfg)
    return params, cfg
