"""Pure numpy implementations of the hot kernels.

Semantics must match ``_ckernels.pyx`` exactly; the test-suite runs both.
"""
import numpy as np

# elements of the (rows, N, d) difference block materialized at once
_BLOCK_ELEMENTS = 1 << 22


def pairwise_sq_distances(A, G):
    """Squared Euclidean distances via direct differences (0 exactly for equal rows)."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    n_a, d = A.shape
    n_g = G.shape[0]
    out = np.empty((n_a, n_g), dtype=np.float64)
    if n_a == 0 or n_g == 0:
        return out
    step = max(1, _BLOCK_ELEMENTS // max(1, n_g * d))
    for start in range(0, n_a, step):
        diff = A[start:start + step, None, :] - G[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def pairwise_distances(A, G):
    return np.sqrt(pairwise_sq_distances(A, G))


def ap_cmc(dist, q_pids, q_cams, g_pids, g_cams):
    """Per-query average precision and rank of the first correct match.

    Gallery rows sharing both pid and camid with the query are dropped
    before ranking. Returns ``(ap, first_hit, n_pos)``; ``first_hit`` is a
    0-based rank in the filtered list, ``-1`` when the query has no positive.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n_q = dist.shape[0]
    order = np.argsort(dist, axis=1, kind="stable")
    ap = np.zeros(n_q, dtype=np.float64)
    first_hit = np.full(n_q, -1, dtype=np.int64)
    n_pos = np.zeros(n_q, dtype=np.int64)
    g_pids = np.asarray(g_pids)
    g_cams = np.asarray(g_cams)
    for i in range(n_q):
        idx = order[i]
        same_pid = g_pids[idx] == q_pids[i]
        keep = ~(same_pid & (g_cams[idx] == q_cams[i]))
        matches = same_pid[keep]
        hits = np.flatnonzero(matches)
        if hits.size == 0:
            continue
        n_pos[i] = hits.size
        first_hit[i] = hits[0]
        precision = np.arange(1, hits.size + 1, dtype=np.float64) / (hits + 1)
        ap[i] = precision.sum() / hits.size
    return ap, first_hit, n_pos


def kmeans_assign(X, centers):
    """Index of the nearest center per row (lowest index on ties) and its squared distance."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    sq = pairwise_sq_distances(X, centers)
    labels = np.argmin(sq, axis=1).astype(np.int64)
    return labels, sq[np.arange(X.shape[0]), labels]
