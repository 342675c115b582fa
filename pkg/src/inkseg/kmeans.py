"""Weighted k-means segmentation: one cluster per character of the transcription."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .ink import CtcSpikes, LabeledSample, normalize

RANDOM, CTC_SPIKES = "random", "ctc_spikes"


@dataclass
class KMeansConfig:
    weight_x: float = 1.0
    weight_y: float = 0.04
    weight_stroke: float = 224.0
    max_iters: int = 300
    tol: float = 1e-6
    init: str = RANDOM
    seed: int = 0
    # normalized coordinates (unit line height) are multiplied by this before weighting
    coord_scale: float = 1.0

    def __post_init__(self):
        if min(self.weight_x, self.weight_y, self.weight_stroke) < 0:
            raise ConfigError("k-means weights must be non-negative")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.init not in (RANDOM, CTC_SPIKES):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.coord_scale <= 0:
            raise ConfigError("coord_scale must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class ClusterState:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)  # inertia after every iteration
    iterations: int = 0


def weighted_features(sample: LabeledSample, cfg: KMeansConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(weighted feature matrix, unweighted normalized points)``."""
    ink = normalize(sample.ink)
    pts = ink.points()
    X = np.column_stack([
        cfg.weight_x * cfg.coord_scale * pts[:, 0],
        cfg.weight_y * cfg.coord_scale * pts[:, 1],
        cfg.weight_stroke * ink.stroke_index().astype(np.float64),
    ])
    return X, pts


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def _kmeanspp(X, k, rng, centroids=(), candidates=None):
    """Extend ``centroids`` to ``k`` rows with k-means++ (D^2) seeding."""
    chosen = [np.asarray(c, dtype=np.float64) for c in centroids]
    pool = np.arange(len(X)) if candidates is None else np.asarray(candidates)
    if len(pool) == 0:
        pool = np.arange(len(X))
    while len(chosen) < k:
        if not chosen:
            i = pool[int(rng.integers(len(pool)))]
        else:
            d = _sq_dist(X[pool], np.array(chosen)).min(axis=1)
            total = d.sum()
            if total > 0:
                i = pool[int(rng.choice(len(pool), p=d / total))]
            else:
                i = pool[int(rng.integers(len(pool)))]
        chosen.append(X[i].copy())
    return np.array(chosen)


def init_centroids(X: np.ndarray, c: int, cfg: KMeansConfig, spikes: CtcSpikes | None = None) -> np.ndarray:
    """Random mode seeds with k-means++; spike mode starts from the feature rows
    at spike indices (first ``c`` of them) and fills any shortfall with
    k-means++ over the remaining points."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == RANDOM:
        return _kmeanspp(X, c, rng)
    if spikes is None or len(spikes) == 0:
        raise InputError("ctc_spikes initialization needs at least one spike")
    idx = spikes.indices[:c]
    rest = np.setdiff1d(np.arange(len(X)), idx)
    return _kmeanspp(X, c, rng, centroids=[X[i] for i in idx], candidates=rest)


def _inertia(X, C, A):
    return float(((X - C[A]) ** 2).sum())


def lloyd(X: np.ndarray, centroids: np.ndarray, max_iters: int = 300, tol: float = 1e-6) -> ClusterState:
    C = np.array(centroids, dtype=np.float64)
    k = C.shape[0]
    prev_assign = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        D = _sq_dist(X, C)
        A = np.argmin(D, axis=1)
        counts = np.bincount(A, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # empty cluster: hand it the point farthest from its own centroid
            d_own = D[np.arange(len(X)), A]
            d_own[counts[A] <= 1] = -1.0
            i = int(np.argmax(d_own))
            if d_own[i] < 0:
                break
            counts[A[i]] -= 1
            A[i] = j
            counts[j] = 1
        for j in range(k):
            members = A == j
            if members.any():
                C[j] = X[members].mean(axis=0)
        inertia = _inertia(X, C, A)
        history.append(inertia)
        if prev_assign is not None and np.array_equal(A, prev_assign):
            break
        if len(history) > 1 and history[-2] - inertia < tol:
            break
        prev_assign = A
    return ClusterState(C, A, history[-1], history, it)


def order_clusters(assignment: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Map cluster ids to slots by ascending mean x, ties by first global index."""
    keys = []
    for j in range(k):
        idx = np.flatnonzero(assignment == j)
        if idx.size:
            keys.append((float(x[idx].mean()), int(idx[0]), j))
        else:
            keys.append((np.inf, len(x), j))
    slot = np.empty(k, dtype=np.int64)
    for s, (_, _, j) in enumerate(sorted(keys)):
        slot[j] = s
    return slot[assignment]


def kmeans_cluster(sample: LabeledSample, cfg: KMeansConfig) -> ClusterState:
    c, p = sample.num_chars, sample.num_points
    if c > p:
        raise InputError(f"{c} characters but only {p} points")
    X, _ = weighted_features(sample, cfg)
    C0 = init_centroids(X, c, cfg, sample.spikes)
    return lloyd(X, C0, cfg.max_iters, cfg.tol)


def kmeans_segment(sample: LabeledSample, cfg: KMeansConfig | None = None) -> np.ndarray:
    cfg = cfg or KMeansConfig()
    state = kmeans_cluster(sample, cfg)
    _, pts = weighted_features(sample, cfg)
    return order_clusters(state.assignment, pts[:, 0], sample.num_chars)
