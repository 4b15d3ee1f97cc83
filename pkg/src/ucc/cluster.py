"""Instance clustering on extracted features and the evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError, EmptyBagError, ShapeError
from .kde_pool import KdeConfig, kde_forward
from .ndcore import as_matrix

SPECTRAL_CAP = 4000


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int
    inertia: float | None = None
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_clusters):
            raise ContractError("cluster ids out of range")

    def __len__(self) -> int:
        return self.labels.size


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centers = [x[rng.integers(m)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = rng.choice(m, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def _lloyd(x, centers, max_iters, tol):
    history = []
    for _ in range(max_iters):
        d = _sq_dists(x, centers)
        labels = d.argmin(1)
        cost = d[np.arange(x.shape[0]), labels]
        inertia = float(cost.sum())
        history.append(inertia)
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(0)
            else:
                far = int(cost.argmax())
                new[j] = x[far]
                cost[far] = 0.0
        shift = float(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift <= tol:
            break
    d = _sq_dists(x, centers)
    labels = d.argmin(1)
    inertia = float(d[np.arange(x.shape[0]), labels].sum())
    history.append(inertia)
    return labels, inertia, history


def kmeans(points, n_clusters: int, restarts: int = 10, max_iters: int = 300,
           tol: float = 1e-10, rng: np.random.Generator | int | None = 0) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding; keeps the lowest-inertia restart."""
    x = as_matrix(points, "points")
    if n_clusters < 1 or x.shape[0] < n_clusters:
        raise ContractError(f"need at least {n_clusters} points, got {x.shape[0]}")
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(max(1, restarts)):
        labels, inertia, history = _lloyd(x, _plusplus(x, n_clusters, rng), max_iters, tol)
        # strict comparison keeps the earliest restart on ties
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels, n_clusters, inertia, history)
    return best


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so each round annihilates
    m/2 disjoint off-diagonal pairs at once.  Returns ascending eigenvalues
    and the matching eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ContractError("matrix is not symmetric")
    a = (a + a.T) / 2
    m = a.shape[0]
    v = np.eye(m)
    if m == 1:
        return a.diagonal().copy(), v
    players = list(range(m)) + ([-1] if m % 2 else [])
    n = len(players)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * scale:
            break
        arr = players[:]
        for _ in range(n - 1):
            pairs = [(arr[i], arr[n - 1 - i]) for i in range(n // 2)]
            pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
            p = np.array([pq[0] for pq in pairs])
            q = np.array([pq[1] for pq in pairs])
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if active.any():
                p, q, apq = p[active], q[active], apq[active]
                tau = (a[q, q] - a[p, p]) / (2 * apq)
                big = np.abs(tau) > 1e150
                tau_c = np.where(big, 1.0, tau)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau_c) + np.sqrt(1 + tau_c * tau_c))
                t = np.where(big, 0.5 / np.where(big, tau, 1.0), t)
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = ap * c - aq * s, ap * s + aq * c
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = vp * c - vq * s, vp * s + vq * c
            arr = [arr[0], arr[-1]] + arr[1:-1]
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def normalized_laplacian(points, affinity_scale: float) -> np.ndarray:
    """I - D^-1/2 W D^-1/2 for a Gaussian affinity with zero diagonal."""
    x = as_matrix(points, "points")
    if affinity_scale <= 0:
        raise ContractError("affinity scale must be positive")
    d2 = _sq_dists(x, x)
    w = np.exp(-d2 / (2 * affinity_scale ** 2))
    np.fill_diagonal(w, 0.0)
    deg = w.sum(1)
    inv = np.where(deg > 0, 1 / np.sqrt(np.where(deg > 0, deg, 1)), 0.0)
    lap = np.eye(x.shape[0]) - inv[:, None] * w * inv[None, :]
    return (lap + lap.T) / 2


def spectral(points, n_clusters: int, affinity_scale: float | None = None,
             rng: np.random.Generator | int | None = 0, cap: int = SPECTRAL_CAP,
             solver: str = "jacobi", restarts: int = 10) -> ClusterAssignment:
    """Normalized spectral clustering (Ng-Jordan-Weiss embedding + k-means).

    ``affinity_scale`` defaults to the median pairwise distance.  ``solver``
    may be ``"lapack"`` to swap the Jacobi eigensolver for ``numpy.linalg.eigh``.
    """
    x = as_matrix(points, "points")
    m = x.shape[0]
    if m > cap:
        raise ContractError(f"spectral clustering is capped at {cap} points, got {m}")
    if m < n_clusters:
        raise ContractError(f"need at least {n_clusters} points, got {m}")
    if affinity_scale is None:
        d = np.sqrt(_sq_dists(x, x))
        affinity_scale = float(np.median(d[np.triu_indices(m, 1)])) if m > 1 else 1.0
        affinity_scale = affinity_scale or 1.0
    lap = normalized_laplacian(x, affinity_scale)
    if solver == "jacobi":
        _, vecs = jacobi_eigh(lap)
    elif solver == "lapack":
        _, vecs = np.linalg.eigh(lap)
    else:
        raise ContractError(f"unknown eigensolver {solver!r}")
    emb = vecs[:, :n_clusters]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    res = kmeans(emb, n_clusters, restarts=restarts, rng=rng)
    return ClusterAssignment(res.labels, n_clusters)


def contingency(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred = np.asarray(pred.labels if isinstance(pred, ClusterAssignment) else pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.size} predictions for {truth.size} labels")
    p_ids, p_inv = np.unique(pred, return_inverse=True)
    t_ids, t_inv = np.unique(truth, return_inverse=True)
    table = np.zeros((p_ids.size, t_ids.size), dtype=np.int64)
    np.add.at(table, (p_inv, t_inv), 1)
    return table, p_ids, t_ids


def clustering_accuracy(pred, truth) -> float:
    """Best one-to-one cluster/class matching, as a fraction of points."""
    table, _, _ = contingency(pred, truth)
    if table.size == 0:
        raise EmptyBagError("no points to score")
    rows, cols = linear_sum_assignment(table, maximize=True)
    return int(table[rows, cols].sum()) / int(table.sum())


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log) averaged over distribution rows."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ShapeError("distributions differ in shape")
    mix = 0.5 * (p + q)

    def kl(a, b):
        safe = np.where(a > 0, a, 1.0)
        return np.sum(np.where(a > 0, a * np.log(safe / np.where(a > 0, b, 1.0)), 0.0), axis=1)

    return float(np.mean(0.5 * kl(p, mix) + 0.5 * kl(q, mix)))


@dataclass
class JsMatrix:
    classes: np.ndarray
    values: np.ndarray

    @property
    def min_offdiag(self) -> float:
        k = self.values.shape[0]
        if k < 2:
            return float("nan")
        return float(self.values[~np.eye(k, dtype=bool)].min())


def class_distributions(features, labels, kde: KdeConfig) -> dict:
    f = as_matrix(features, "features")
    labels = np.asarray(labels)
    if labels.shape[0] != f.shape[0]:
        raise ShapeError("one label per feature row required")
    return {c: kde_forward(f[labels == c], kde)[0] for c in np.unique(labels)}


def interclass_js(features, labels, kde: KdeConfig, classes=None) -> JsMatrix:
    labels = np.asarray(labels)
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    for c in classes:
        if not np.any(labels == c):
            raise ContractError(f"class {c} has no instances")
    dists = class_distributions(features, labels, kde)
    k = classes.size
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = js_divergence(dists[classes[i]].values,
                                                  dists[classes[j]].values)
    return JsMatrix(classes, out)
