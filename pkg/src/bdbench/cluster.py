"""Dimensionality reduction and density clustering for the filtering defense.

PCA (exact eigendecomposition of the covariance) fills the reducer role;
HDBSCAN is built from scratch: exact core distances, a Prim MST over
mutual-reachability distances, a single-linkage hierarchy, condensation
at min_cluster_size, and excess-of-mass cluster extraction with noise
labeled -1. Everything is brute-force N^2 by design: desk scale, and the
MST admits an exhaustive spanning-tree oracle in tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .kernels import pairwise_distances, prim_mst

NOISE = -1


@dataclass(frozen=True)
class ReducerConfig:
    method: str = "pca"
    target_dim: int = 10

    def __post_init__(self):
        if self.method != "pca":
            raise ConfigError(f"unknown reducer method {self.method!r}")
        if self.target_dim < 1:
            raise ConfigError("target_dim must be >= 1")


@dataclass(frozen=True)
class Reducer:
    """Fitted PCA projection with orthonormal columns."""

    method: str
    target_dim: int
    mean: np.ndarray
    components: np.ndarray  # (D, target_dim)
    explained_variance_ratio: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components


def pca_fit_transform(X, target_dim: int):
    """Fit PCA and project; returns (Reducer, projected points).

    Components are the top eigenvectors of the covariance matrix with the
    sign convention that each component's largest-magnitude entry is
    positive. Raises when target_dim exceeds the numerical rank.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("pca needs a 2-D array with at least 2 rows")
    n, d = X.shape
    if not 1 <= target_dim <= min(n, d):
        raise ConfigError(f"target_dim must be in [1, {min(n, d)}], got {target_dim}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    evals = np.maximum(evals, 0.0)
    tol = max(n, d) * np.finfo(np.float64).eps * (evals[0] if evals.size else 0.0)
    rank = int(np.sum(evals > tol))
    if target_dim > rank:
        raise ValidationError(
            f"target_dim {target_dim} exceeds the data rank; achievable dim is {rank}"
        )
    comps = evecs[:, :target_dim].copy()
    for j in range(target_dim):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0.0:
            comps[:, j] = -comps[:, j]
    total = float(evals.sum())
    ratios = evals[:target_dim] / total if total > 0.0 else np.zeros(target_dim)
    reducer = Reducer(method="pca", target_dim=target_dim, mean=mean,
                      components=comps, explained_variance_ratio=ratios)
    return reducer, Xc @ comps


def effective_rank(X) -> int:
    """Numerical rank of the centered data, by the PCA eigenvalue tolerance."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    evals = np.linalg.eigvalsh(Xc.T @ Xc / max(1, X.shape[0] - 1))[::-1]
    evals = np.maximum(evals, 0.0)
    tol = max(X.shape) * np.finfo(np.float64).eps * (evals[0] if evals.size else 0.0)
    return int(np.sum(evals > tol))


@dataclass(frozen=True)
class HdbscanConfig:
    min_cluster_size: int = 10
    min_samples: int | None = None
    metric: str = "euclidean"

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ConfigError("min_cluster_size must be >= 2")
        if self.min_samples is None:
            object.__setattr__(self, "min_samples", self.min_cluster_size)
        if self.min_samples < 1:
            raise ConfigError("min_samples must be >= 1")
        if self.metric != "euclidean":
            raise ConfigError(f"unsupported metric {self.metric!r}")


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # per-point int, -1 = noise
    num_clusters: int
    stabilities: dict[int, float]
    condensed_rows: tuple  # (parent, child, lambda, child_size) rows

    def cluster_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = {}
        for lab in self.labels:
            if lab != NOISE:
                sizes[int(lab)] = sizes.get(int(lab), 0) + 1
        return sizes


def core_distances(Y, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest neighbor, self excluded."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if n <= min_samples:
        raise ConfigError(f"need more than min_samples={min_samples} points, got {n}")
    return _core_from_dists(pairwise_distances(Y), min_samples)


def _core_from_dists(dists, min_samples: int) -> np.ndarray:
    # row includes the zero self-distance, so the k-th neighbor excluding
    # self is the k-th order statistic of the full row
    return np.partition(dists, min_samples, axis=1)[:, min_samples]


def mutual_reachability_mst(Y, core):
    """MST edge list over d_mreach(a, b) = max(core_a, core_b, d(a, b)).

    Returns (edges, weights): (N-1, 2) int array and matching weights, in
    the order Prim's algorithm grew the tree.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return prim_mst(pairwise_distances(Y), np.asarray(core, dtype=np.float64))


def _single_linkage(edges, weights, n):
    """Union-find merge list in scipy linkage convention (new ids from n)."""
    order = np.argsort(weights, kind="stable")
    parent = np.arange(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    sizes = np.ones(2 * n - 1, dtype=np.int64)
    children: dict[int, tuple[int, int, float]] = {}
    nxt = n
    for e in order:
        ra, rb = find(edges[e, 0]), find(edges[e, 1])
        children[nxt] = (int(ra), int(rb), float(weights[e]))
        sizes[nxt] = sizes[ra] + sizes[rb]
        parent[ra] = nxt
        parent[rb] = nxt
        nxt += 1
    return children, sizes


def _leaves_under(node, children, n):
    out = []
    stack = [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            left, right, _ = children[x]
            stack.append(left)
            stack.append(right)
    return out


def _condense(children, sizes, n, mcs):
    """Condensed-tree rows (parent, child, lambda, child_size).

    Children >= mcs on both sides of a split become new clusters; smaller
    subtrees spill their points out of the parent at the split's lambda.
    Cluster ids start at n (the root).
    """
    root = 2 * n - 2
    rows = []
    next_id = n + 1
    stack = [(root, n)]
    while stack:
        node, cid = stack.pop()
        left, right, dist = children[node]
        lam = math.inf if dist <= 0.0 else 1.0 / dist
        sl = int(sizes[left]) if left >= n else 1
        sr = int(sizes[right]) if right >= n else 1
        big_l, big_r = sl >= mcs, sr >= mcs
        if big_l and big_r:
            for child, size in ((left, sl), (right, sr)):
                rows.append((cid, next_id, lam, size))
                stack.append((child, next_id))
                next_id += 1
        elif not big_l and not big_r:
            for child in (left, right):
                for p in _leaves_under(child, children, n):
                    rows.append((cid, p, lam, 1))
        else:
            big, small = (left, right) if big_l else (right, left)
            for p in _leaves_under(small, children, n):
                rows.append((cid, p, lam, 1))
            stack.append((big, cid))
    return rows


def _stability_scores(rows, n):
    birth = {n: 0.0}
    for _, child, lam, _ in rows:
        if child >= n:
            birth[child] = lam
    stability: dict[int, float] = {}
    for parent, _, lam, size in rows:
        contrib = (lam - birth[parent]) * size
        if math.isnan(contrib):  # inf - inf on co-located points
            contrib = 0.0
        stability[parent] = stability.get(parent, 0.0) + contrib
    return stability


def hdbscan(Y, config: HdbscanConfig) -> ClusterAssignment:
    """Density clustering with noise; the root cluster is never selected.

    Fewer than 2 * min_cluster_size points can never form a cluster and
    come back all-noise; a fully degenerate input (all points identical)
    is one cluster containing everything.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    mcs = config.min_cluster_size
    labels = np.full(n, NOISE, dtype=np.int64)
    if n < 2 * mcs:
        return ClusterAssignment(labels=labels, num_clusters=0, stabilities={}, condensed_rows=())

    dists = pairwise_distances(Y)
    core = _core_from_dists(dists, config.min_samples)
    edges, weights = prim_mst(dists, core)
    if float(weights.max()) <= 0.0:
        return ClusterAssignment(labels=np.zeros(n, dtype=np.int64), num_clusters=1,
                                 stabilities={0: math.inf}, condensed_rows=())

    children, sizes = _single_linkage(edges, weights, n)
    rows = _condense(children, sizes, n, mcs)
    stability = _stability_scores(rows, n)

    cluster_ids = sorted({child for _, child, _, size in rows if child >= n} )
    cluster_children: dict[int, list[int]] = {}
    cluster_parent: dict[int, int] = {}
    for parent, child, _, _ in rows:
        if child >= n:
            cluster_children.setdefault(parent, []).append(child)
            cluster_parent[child] = parent

    is_selected = {c: True for c in cluster_ids}
    for node in reversed(cluster_ids):
        child_sum = sum(stability.get(c, 0.0) for c in cluster_children.get(node, ()))
        if cluster_children.get(node) and child_sum > stability.get(node, 0.0):
            is_selected[node] = False
            stability[node] = child_sum
        elif is_selected[node]:
            drop = list(cluster_children.get(node, ()))
            while drop:
                c = drop.pop()
                is_selected[c] = False
                drop.extend(cluster_children.get(c, ()))
    selected = {c for c in cluster_ids if is_selected[c]}

    # nearest selected ancestor (inclusive) for every condensed node
    owner: dict[int, int | None] = {n: None}
    for c in cluster_ids:  # increasing ids -> parents first
        owner[c] = c if c in selected else owner[cluster_parent[c]]

    point_rows: dict[int, list[tuple[int, float]]] = {}
    for parent, child, lam, size in rows:
        if child < n:
            point_rows.setdefault(parent, []).append((child, lam))

    members: dict[int, list[int]] = {c: [] for c in selected}
    death: dict[int, float] = {c: 0.0 for c in selected}
    birth_of = {}
    for parent, child, lam, size in rows:
        if child >= n:
            birth_of[child] = lam
    for parent, pts in point_rows.items():
        own = owner.get(parent)
        if own is None:
            continue
        for p, lam in pts:
            members[own].append(p)
            if lam > death[own]:
                death[own] = lam

    # permutation-invariant id assignment: big clusters first, then by the
    # lambda at which the cluster was born and (descending) died
    keyed = sorted(selected, key=lambda c: (-len(members[c]), birth_of.get(c, 0.0), -death[c]))
    stabilities = {}
    for new_id, c in enumerate(keyed):
        labels[members[c]] = new_id
        stabilities[new_id] = stability.get(c, 0.0)

    return ClusterAssignment(labels=labels, num_clusters=len(keyed),
                             stabilities=stabilities, condensed_rows=tuple(rows))


def dump_embeddings_csv(path, ids, Y, labels) -> None:
    """Write (id, y1..yk, cluster) rows for external scatter plotting."""
    Y = np.asarray(Y, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"y{j + 1}" for j in range(Y.shape[1])] + ["cluster"])
        for i, sample_id in enumerate(ids):
            writer.writerow([sample_id] + [repr(float(v)) for v in Y[i]] + [int(labels[i])])
