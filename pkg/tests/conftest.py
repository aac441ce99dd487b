"""Shared fixtures and independent reference implementations.

The reference code here is deliberately written as straightforward
per-position, per-head loops with no shared helpers from the package, so it
can serve as a second, independent route for the dual-implementation tests.
"""

import math

import numpy as np
import pytest

from ecmsphere import default_config
from ecmsphere.heads import RMS_EPS

acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def ecm12():
    return default_config()


def pearson_oracle(xs, ys):
    """Textbook Pearson from raw sums, no numpy corrcoef."""
    n = len(xs)
    sx = sum(xs)
    sy = sum(ys)
    sxx = sum(v * v for v in xs)
    syy = sum(v * v for v in ys)
    sxy = sum(a * b for a, b in zip(xs, ys))
    num = n * sxy - sx * sy
    den = math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))
    return num / den


def naive_silu(x):
    return x / (1.0 + np.exp(-x))


def naive_rms_norm(x, gain):
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        out[t] = x[t] / math.sqrt(np.mean(x[t] ** 2) + RMS_EPS) * gain
    return out


def naive_norm(v):
    return v / np.linalg.norm(v)


def naive_gpt_block(params, x, cfg):
    """Loop transcription of the standard block equations."""
    t_len = x.shape[0]
    xn = naive_rms_norm(x, params.gain_attn)
    head_outs = []
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        q, k, v = xn @ wq, xn @ wk, xn @ wv
        out = np.zeros((t_len, cfg.d_head))
        for t in range(t_len):
            limit = t + 1 if cfg.causal else t_len
            logits = np.array([q[t] @ k[s] for s in range(limit)]) / math.sqrt(cfg.d_head)
            w = np.exp(logits - logits.max())
            w = w / w.sum()
            for s in range(limit):
                out[t] += w[s] * v[s]
        head_outs.append(out)
    attn = np.concatenate(head_outs, axis=1) @ params.w_o
    h1 = x + attn
    h1n = naive_rms_norm(h1, params.gain_mlp)
    mlp = (naive_silu(h1n @ params.mlp_u) * (h1n @ params.mlp_v)) @ params.mlp_o
    return h1 + mlp


def naive_ngpt_block(params, x, cfg):
    """Loop transcription of the normalized block equations."""
    t_len = x.shape[0]
    head_outs = []
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        out = np.zeros((t_len, cfg.d_head))
        for t in range(t_len):
            limit = t + 1 if cfg.causal else t_len
            q = naive_norm(x[t] @ wq) * params.s_qk
            logits = np.array(
                [q @ (naive_norm(x[s] @ wk) * params.s_qk) for s in range(limit)]
            ) * math.sqrt(cfg.d_head)
            w = np.exp(logits - logits.max())
            w = w / w.sum()
            for s in range(limit):
                out[t] += w[s] * (x[s] @ wv)
        head_outs.append(out)
    attn = np.concatenate(head_outs, axis=1) @ params.w_o
    h1 = np.empty_like(x)
    for t in range(t_len):
        mix = (1.0 - params.alpha_attn) * naive_norm(x[t]) + params.alpha_attn * naive_norm(attn[t])
        h1[t] = naive_norm(mix)
    u = (h1 @ params.mlp_u) * params.s_u
    v = (h1 @ params.mlp_v) * params.s_v * math.sqrt(cfg.d_mlp)
    mlp = (naive_silu(v) * u) @ params.mlp_o
    out = np.empty_like(x)
    for t in range(t_len):
        mix = (1.0 - params.alpha_mlp) * naive_norm(h1[t]) + params.alpha_mlp * naive_norm(mlp[t])
        out[t] = naive_norm(mix)
    return out
