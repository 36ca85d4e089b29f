"""Pure-numpy kernel backend.

Reference implementations of the hot kernels. The Cython backend in
``_ckernels.pyx`` mirrors these function by function; keep the two in
sync when changing any contract.
"""

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_buckets(tokens, dims):
    """Hash each token to a bucket in [0, dims) via 64-bit FNV-1a over UTF-8."""
    out = np.empty(len(tokens), dtype=np.int64)
    mask = dims - 1
    for i, tok in enumerate(tokens):
        h = _FNV_OFFSET
        for b in tok.encode("utf-8"):
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
        out[i] = h & mask
    return out


def pairwise_distances(X):
    """Full N x N Euclidean distance matrix for an (N, D) float array."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def prim_mst(dists, core):
    """Minimum spanning tree of the implicit mutual-reachability graph.

    Edge weight between a and b is max(core[a], core[b], dists[a, b]).
    Equal-weight candidates are resolved toward the lexicographically
    smallest (min(u, v), max(u, v)) pair. Returns (edges, weights) with
    edges in the order Prim's algorithm added them.
    """
    n = dists.shape[0]
    edges = np.empty((n - 1, 2), dtype=np.int64)
    weights = np.empty(n - 1, dtype=np.float64)

    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_u = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    current = 0

    for step in range(n - 1):
        others = np.nonzero(~in_tree)[0]
        w_new = np.maximum(np.maximum(core[current], core[others]), dists[current, others])
        old_w = best_w[others]
        lo_new = np.minimum(current, others)
        hi_new = np.maximum(current, others)
        lo_old = np.minimum(best_u[others], others)
        hi_old = np.maximum(best_u[others], others)
        tie_better = (lo_new < lo_old) | ((lo_new == lo_old) & (hi_new < hi_old))
        upd = (w_new < old_w) | ((w_new == old_w) & tie_better)
        best_w[others[upd]] = w_new[upd]
        best_u[others[upd]] = current

        cand_w = best_w[others]
        m = cand_w.min()
        tied = others[cand_w == m]
        if tied.size > 1:
            keys = np.stack([np.minimum(best_u[tied], tied), np.maximum(best_u[tied], tied)], axis=1)
            pick = tied[np.lexsort((keys[:, 1], keys[:, 0]))[0]]
        else:
            pick = tied[0]

        edges[step, 0] = best_u[pick]
        edges[step, 1] = pick
        weights[step] = best_w[pick]
        in_tree[pick] = True
        current = pick

    return edges, weights


def mlp_hidden(indptr, idx, val, W1, b1):
    """tanh hidden activations for a CSR batch of hashed token counts."""
    n = len(indptr) - 1
    pre = np.zeros((n, W1.shape[1]))
    if len(idx):
        rows = np.repeat(np.arange(n), np.diff(indptr))
        np.add.at(pre, rows, W1[idx] * val[:, None])
    pre += b1
    return np.tanh(pre)


def sgd_batch_step(indptr, idx, val, y, W1, b1, W2, b2, lr, l2):
    """One in-place minibatch SGD step on the two-layer softmax classifier.

    Minimizes mean cross-entropy plus 0.5 * l2 * (|W1|^2 + |W2|^2); the L2
    term enters the update as weight decay on W1/W2 (biases excluded).
    Returns the objective value at the pre-update parameters.
    """
    n = len(indptr) - 1
    h = mlp_hidden(indptr, idx, val, W1, b1)
    logits = h @ W2 + b2
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)

    with np.errstate(divide="ignore"):  # log(0) -> inf loss signals divergence
        ce = -np.mean(np.log(p[np.arange(n), y]))
    loss = ce
    if l2 > 0.0:
        loss += 0.5 * l2 * (np.dot(W1.ravel(), W1.ravel()) + np.dot(W2.ravel(), W2.ravel()))

    g = p
    g[np.arange(n), y] -= 1.0
    g /= n

    gW2 = h.T @ g
    gb2 = g.sum(axis=0)
    dh = g @ W2.T
    dz = (1.0 - h * h) * dh
    gb1 = dz.sum(axis=0)

    if l2 > 0.0:
        W1 *= 1.0 - lr * l2
        W2 *= 1.0 - lr * l2
    W2 -= lr * gW2
    b2 -= lr * gb2
    b1 -= lr * gb1
    if len(idx):
        rows = np.repeat(np.arange(n), np.diff(indptr))
        np.subtract.at(W1, idx, (lr * val)[:, None] * dz[rows])
    return float(loss)
