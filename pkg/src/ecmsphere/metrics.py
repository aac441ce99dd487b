"""Quantitative and geometric evaluation of embedding spaces.

Clustering quality comes from spherical k-means (cosine distance, restart
selection by minimum inertia) scored with the entropy-based V-Measure.
Alignment with the circle layout comes from the label-pair average cosine
matrix and its Pearson correlation against the circumplex distance (the
polarity constant plus step count). Two deterministic spectral projections,
PCA and classical double-centered MDS, support the 2-D views, and a small
projected optimization verifies the simplex optimum of the one-positive
InfoNCE objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .ecm import EcmConfig, circumplex_distance
from .errors import (
    ConfigError,
    ContractError,
    MissingLabelError,
    UndefinedCorrelationError,
)

KMEANS_MAX_ITER = 300


@dataclass
class ClusteringResult:
    assignments: np.ndarray  # (N,) cluster indices
    centroids: np.ndarray  # (k, d) unit rows
    inertia: float  # sum of (1 - cosine) to the assigned centroid
    restart: int  # which restart won


def _unit_rows(x, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"{what} must be a 2-D matrix")
    norms = np.linalg.norm(x, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ContractError(f"{what} rows must be unit vectors")
    return x


def _lloyd(x, k, rng):
    """One spherical Lloyd run from a random init; returns (assign, c, inertia)."""
    n = x.shape[0]
    centroids = x[rng.choice(n, size=k, replace=False)].copy()
    assign = None
    for _ in range(KMEANS_MAX_ITER):
        sims = x @ centroids.T
        new_assign = np.argmax(sims, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members) == 0:
                # reseed from the point farthest (in cosine) from its centroid
                dist = 1.0 - sims[np.arange(n), assign]
                centroids[j] = x[int(np.argmax(dist))]
                continue
            total = members.sum(axis=0)
            norm = np.linalg.norm(total)
            if norm == 0.0:
                dist = 1.0 - sims[np.arange(n), assign]
                centroids[j] = x[int(np.argmax(dist))]
            else:
                centroids[j] = total / norm
    sims = x @ centroids.T
    assign = np.argmax(sims, axis=1)
    # rounding can push a cosine a few ulp above 1; clamp per-term
    inertia = float(np.sum(np.maximum(1.0 - sims[np.arange(n), assign], 0.0)))
    return assign, centroids, inertia


def spherical_kmeans(x, k, restarts=10, seed=0, jobs=1) -> ClusteringResult:
    """Best-of-restarts spherical k-means.

    Restart ``r`` draws its initialization from a generator seeded with
    (seed, r), so the winner does not depend on execution order; ties on
    inertia go to the lowest restart index. ``jobs > 1`` runs restarts on a
    thread pool; the (inertia, restart) selection keeps the result
    independent of scheduling.
    """
    x = _unit_rows(x, "data")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")

    def one_restart(r):
        rng = np.random.default_rng([seed, r])
        return (r, *_lloyd(x, k, rng))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(one_restart, range(restarts)))
    else:
        runs = [one_restart(r) for r in range(restarts)]
    best = None
    for r, assign, centroids, inertia in runs:
        if best is None or (inertia, r) < (best.inertia, best.restart):
            best = ClusteringResult(assign, centroids, inertia, r)
    return best


def _entropy(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))


def v_measure(true_labels, pred_clusters):
    """Homogeneity, completeness and their harmonic mean, in [0, 1].

    Conventions: a single true class gives homogeneity 1, a single cluster
    gives completeness 1, and v = 0 when both scores are zero.
    """
    true_labels = np.asarray(true_labels)
    pred_clusters = np.asarray(pred_clusters)
    if true_labels.shape != pred_clusters.shape or true_labels.ndim != 1:
        raise ContractError("label arrays must be 1-D and equal length")
    if len(true_labels) == 0:
        raise ContractError("label arrays must be non-empty")
    _, ti = np.unique(true_labels, return_inverse=True)
    _, pi = np.unique(pred_clusters, return_inverse=True)
    n_c, n_k = ti.max() + 1, pi.max() + 1
    contingency = np.zeros((n_c, n_k))
    np.add.at(contingency, (ti, pi), 1.0)
    n = contingency.sum()
    h_c = _entropy(contingency.sum(axis=1))
    h_k = _entropy(contingency.sum(axis=0))
    # conditional entropies from the joint
    nz = contingency > 0
    joint = contingency[nz] / n
    h_ck = float(-np.sum(joint * np.log(contingency[nz] / contingency.sum(axis=0)[np.where(nz)[1]])))
    h_kc = float(-np.sum(joint * np.log(contingency[nz] / contingency.sum(axis=1)[np.where(nz)[0]])))
    hom = 1.0 if h_c == 0.0 else 1.0 - h_ck / h_c
    com = 1.0 if h_k == 0.0 else 1.0 - h_kc / h_k
    # rounding can leave values a few ulp outside [0, 1]
    hom = min(max(hom, 0.0), 1.0)
    com = min(max(com, 0.0), 1.0)
    v = 0.0 if hom + com == 0.0 else 2.0 * hom * com / (hom + com)
    return {"homogeneity": hom, "completeness": com, "v": v}


def avg_cos_sim(x, labels, ecm: EcmConfig) -> np.ndarray:
    """E x E matrix of mean pairwise cosines between (and within) labels.

    Entry (i, j) averages over all N_i * N_j ordered pairs, so the diagonal
    includes each sample paired with itself.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=ecm.E)
    missing = [ecm.labels[i].name for i in range(ecm.E) if counts[i] == 0]
    if missing:
        raise MissingLabelError(f"labels with no samples: {', '.join(missing)}")
    indicator = np.zeros((ecm.E, len(labels)))
    indicator[labels, np.arange(len(labels))] = 1.0
    gram = x @ x.T
    sums = indicator @ gram @ indicator.T
    mat = sums / np.outer(counts, counts)
    return (mat + mat.T) / 2.0


def cd_r(avg_cos_matrix, ecm: EcmConfig) -> float:
    """Pearson correlation between circumplex distance and mean dissimilarity.

    Runs over unordered off-diagonal label pairs (i < j).
    """
    mat = np.asarray(avg_cos_matrix, dtype=np.float64)
    if ecm.E < 3:
        raise ConfigError("correlation needs at least 3 labels")
    if mat.shape != (ecm.E, ecm.E):
        raise ContractError(f"matrix shape {mat.shape} != ({ecm.E}, {ecm.E})")
    xs, ys = [], []
    for i in range(ecm.E):
        for j in range(i + 1, ecm.E):
            xs.append(circumplex_distance(ecm, i, j))
            ys.append(1.0 - mat[i, j])
    xs = np.array(xs)
    ys = np.array(ys)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    ssx = float(np.sum(xc * xc))
    ssy = float(np.sum(yc * yc))
    # a constant series leaves rounding residue ~(eps*scale)^2 per element
    def _is_flat(ss, vals):
        scale = max(1.0, float(np.max(np.abs(vals))))
        return ss <= len(vals) * (1e-12 * scale) ** 2

    if _is_flat(ssx, xs) or _is_flat(ssy, ys):
        raise UndefinedCorrelationError("zero variance in a correlation series")
    return float(np.sum(xc * yc) / math.sqrt(ssx * ssy))


def _fix_signs(components):
    """Flip each column so its largest-magnitude entry is positive."""
    out = components.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col[int(np.argmax(np.abs(col)))] < 0:
            out[:, j] = -col
    return out


@dataclass
class PcaResult:
    y: np.ndarray  # (N, out_dim)
    variance_ratios: np.ndarray  # (out_dim,)
    components: np.ndarray  # (d, out_dim), unit columns
    mean: np.ndarray  # (d,)


def pca_project(x, out_dim) -> PcaResult:
    """Mean-centered PCA with a deterministic sign convention."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= out_dim <= min(n, d):
        raise ConfigError(f"out_dim must be in [1, {min(n, d)}], got {out_dim}")
    mean = x.mean(axis=0)
    centered = x - mean
    denom = max(n - 1, 1)
    cov = centered.T @ centered / denom
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = _fix_signs(eigvecs[:, order])
    total = eigvals.sum()
    ratios = eigvals[:out_dim] / total if total > 0 else np.zeros(out_dim)
    components = eigvecs[:, :out_dim]
    return PcaResult(y=centered @ components, variance_ratios=ratios, components=components, mean=mean)


def mds_project(x, out_dim=2) -> np.ndarray:
    """Classical (double-centering) MDS on pairwise Euclidean distances."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ContractError("MDS needs at least 3 points")
    if not np.all(np.isfinite(x)):
        raise ContractError("MDS input must be finite")
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    d2 = np.maximum(d2, 0.0)
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ d2 @ j
    b = (b + b.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(b)
    order = np.argsort(eigvals)[::-1][:out_dim]
    vals = np.maximum(eigvals[order], 0.0)
    vecs = _fix_signs(eigvecs[:, order])
    return vecs * np.sqrt(vals)


@dataclass
class SimplexReport:
    sims: np.ndarray  # final pairwise inner products (E x E)
    target: float  # -1 / (E - 1)
    max_deviation: float  # max |sim - target| over off-diagonal pairs
    loss: float  # final objective value
    lower_bound: float  # analytic optimum of the objective
    feasible: bool  # whether d admits the regular simplex
    converged: bool
    steps_run: int


def simplex_lower_bound(E, tau) -> float:
    """Objective value at the regular simplex: all cross sims at -1/(E-1)."""
    target = -1.0 / (E - 1)
    return math.log(1.0 + (E - 1) * math.exp((target - 1.0) / tau))


def _simplex_objective(protos, tau, off_diag):
    """Taped population objective; returns (loss value, gradient)."""
    tape = Tape(checked=True)
    p = tape.parameter(protos, "prototypes")
    unit = tape.row_normalize(p)
    sims = tape.matmul(unit, tape.transpose(unit))
    shifted = tape.scale(tape.sub(sims, tape.constant(1.0)), 1.0 / tau)
    masked = tape.hadamard(tape.exp(shifted), tape.constant(off_diag.astype(np.float64)))
    per_anchor = tape.log(tape.add(tape.sum_reduce(masked, axis=1), tape.constant(1.0)))
    loss = tape.mean_reduce(per_anchor)
    return float(loss.data), backward(tape, loss)["prototypes"]


def theory_check_sincere_simplex(
    E, d, tau, steps=4000, lr=0.2, lr_final=1e-3, seed=0, tol=0.02
) -> SimplexReport:
    """Optimize E unit prototypes under the one-positive InfoNCE objective.

    Each prototype is its own positive and every other class is a negative,
    so the population objective per anchor is
    ``log(1 + sum_k exp((s_ik - 1) / tau))``. Updates are projected
    normalized-gradient descent with an exponentially decaying step: the raw
    gradient scales with exp((s - 1) / tau) and vanishes long before the
    optimum, so the direction is kept and the magnitude is scheduled. With
    d >= E-1 the optimum is the regular simplex with pairwise inner products
    -1/(E-1); with smaller d the optimum is constrained and the report shows
    the residual deviation.
    """
    if E < 2:
        raise ConfigError("E must be at least 2")
    if d < 2:
        raise ConfigError("d must be at least 2")
    if tau <= 0:
        raise ConfigError("tau must be positive")
    target = -1.0 / (E - 1)
    feasible = d >= E - 1
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((E, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    off_diag = ~np.eye(E, dtype=bool)
    best_protos = protos
    best_deviation = math.inf
    loss_value = math.inf
    for step in range(1, steps + 1):
        loss_value, grad = _simplex_objective(protos, tau, off_diag)
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        step_size = lr * (lr_final / lr) ** (step / steps)
        protos = protos - step_size * (grad / norm)
        protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        deviation = float(np.max(np.abs((protos @ protos.T)[off_diag] - target)))
        if deviation < best_deviation:
            best_deviation = deviation
            best_protos = protos
    final_dev = float(np.max(np.abs((protos @ protos.T)[off_diag] - target)))
    if final_dev > best_deviation:
        # keep the best configuration seen when the last steps regressed
        protos = best_protos
        final_dev = best_deviation
    loss_value, _ = _simplex_objective(protos, tau, off_diag)
    return SimplexReport(
        sims=protos @ protos.T,
        target=target,
        max_deviation=final_dev,
        loss=loss_value,
        lower_bound=simplex_lower_bound(E, tau),
        feasible=feasible,
        converged=feasible and final_dev <= tol,
        steps_run=steps,
    )


@dataclass
class EvalReport:
    v_measure: float
    homogeneity: float
    completeness: float
    avg_cos_sim: np.ndarray
    cd_r: float
    pca_variance_ratios: np.ndarray
    projections: dict = field(default_factory=dict)  # name -> (N, 2)
    clustering: ClusteringResult | None = None


def evaluate_embeddings(x, labels, ecm: EcmConfig, restarts=10, seed=0, jobs=1) -> EvalReport:
    """Full evaluation: clustering scores, circle alignment, 2-D projections."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    clustering = spherical_kmeans(x, k=ecm.E, restarts=restarts, seed=seed, jobs=jobs)
    scores = v_measure(labels, clustering.assignments)
    matrix = avg_cos_sim(x, labels, ecm)
    correlation = cd_r(matrix, ecm)
    pca = pca_project(x, 2)
    mds = mds_project(x, 2)
    return EvalReport(
        v_measure=scores["v"],
        homogeneity=scores["homogeneity"],
        completeness=scores["completeness"],
        avg_cos_sim=matrix,
        cd_r=correlation,
        pca_variance_ratios=pca.variance_ratios,
        projections={"pca": pca.y, "mds": mds},
        clustering=clustering,
    )


def pca_reduce_for_clustering(x, out_dim) -> np.ndarray:
    """Project rows onto the top principal directions, then renormalize.

    The projection is applied to the raw (uncentered) rows so that at full
    dimension it is exactly a rotation of the unit vectors and clustering
    results match the unreduced ones.
    """
    x = np.asarray(x, dtype=np.float64)
    pca = pca_project(x, out_dim)
    reduced = x @ pca.components
    norms = np.linalg.norm(reduced, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ContractError("a row collapsed to zero under the projection")
    return reduced / norms
