"""Top-k soft-distance loss and its analytic gradients, plus the TEMP baseline.

For a scaled-shifted batch ``zhat`` (B x d) and normalized gallery ``G``
(N x d) with Euclidean distances ``d``, the soft distance is

    H[i, j] = d[i, j] / tau + logsumexp_j'(-d[i, j'] / tau)

i.e. the negative log of the row softmax of ``exp(-d / tau)``. The loss is
the batch mean of the sum of each row's ``k`` smallest ``H`` entries. The
top-k selection is held fixed when differentiating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError

DIST_FLOOR = 1e-12
NORM_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    loss: float
    distances: np.ndarray
    soft: np.ndarray
    mask: np.ndarray
    row_topk_indices: np.ndarray


@dataclass
class Gradients:
    d_zhat: np.ndarray
    d_M: dict[int, np.ndarray]
    d_S: dict[int, np.ndarray]


def euclidean_distances(A, G) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if A.ndim != 2 or G.ndim != 2 or A.shape[1] != G.shape[1]:
        raise ValueError(f"shape mismatch: {A.shape} vs {G.shape}")
    return kernels.pairwise_distances(A, G)


def _log_partition(neg_logits):
    # max-shifted logsumexp along rows
    m = neg_logits.max(axis=1, keepdims=True)
    return m + np.log(np.exp(neg_logits - m).sum(axis=1, keepdims=True))


def soft_distance(dists, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ConfigurationError(f"tau must be > 0, got {tau}")
    scaled = np.asarray(dists, dtype=np.float64) / tau
    return scaled + _log_partition(-scaled)


def softmax_weights(dists, tau: float) -> np.ndarray:
    """Row softmax of ``-d / tau``, equal to ``exp(-H)``."""
    neg = -np.asarray(dists, dtype=np.float64) / tau
    return np.exp(neg - _log_partition(neg))


def topk_indices(values, k: int) -> np.ndarray:
    """Per row, column indices of the ``k`` smallest values; ties go to the lower index."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    values = np.asarray(values)
    k = min(k, values.shape[1])
    return np.argsort(values, axis=1, kind="stable")[:, :k]


def topk_mask(soft, k: int) -> np.ndarray:
    soft = np.asarray(soft)
    idx = topk_indices(soft, k)
    mask = np.zeros(soft.shape, dtype=np.float64)
    np.put_along_axis(mask, idx, 1.0, axis=1)
    return mask


def dart3_loss(zhat, G_tilde, tau: float, k: int) -> LossBreakdown:
    G_tilde = np.asarray(G_tilde, dtype=np.float64)
    if G_tilde.shape[0] == 0:
        raise ConfigurationError("the loss needs a non-empty gallery")
    zhat = np.asarray(zhat, dtype=np.float64)
    if zhat.shape[0] == 0:
        raise ConfigurationError("the loss needs a non-empty batch")
    dists = euclidean_distances(zhat, G_tilde)
    soft = soft_distance(dists, tau)
    idx = topk_indices(soft, k)
    mask = np.zeros(soft.shape, dtype=np.float64)
    np.put_along_axis(mask, idx, 1.0, axis=1)
    loss = float(np.take_along_axis(soft, idx, axis=1).sum(axis=1).mean())
    return LossBreakdown(loss, dists, soft, mask, idx)


def dart3_zhat_gradient(zhat, G_tilde, breakdown: LossBreakdown, tau: float) -> np.ndarray:
    """dL/dzhat with the top-k mask held constant."""
    zhat = np.asarray(zhat, dtype=np.float64)
    G_tilde = np.asarray(G_tilde, dtype=np.float64)
    B = zhat.shape[0]
    n_sel = breakdown.row_topk_indices.shape[1]
    p = softmax_weights(breakdown.distances, tau)
    # sum_j W_ij * u_ij with u_ij = (zhat_i - g_j) / max(d_ij, floor)
    W = (breakdown.mask - n_sel * p) / np.maximum(breakdown.distances, DIST_FLOOR)
    return (W.sum(axis=1, keepdims=True) * zhat - W @ G_tilde) / (B * tau)


def apply_scale_shift(batch_raw, camids, means, scales) -> np.ndarray:
    from .camnorm import normalize_features

    return normalize_features(batch_raw, camids, means, scales)


def chain_to_params(d_zhat, batch_raw, camids, means, scales):
    """Push dL/dzhat back through ``zhat = (z - M[c]) / S[c]``.

    Returns per-camera ``(d_M, d_S)``; only cameras present in the batch get
    an entry.
    """
    batch_raw = np.asarray(batch_raw, dtype=np.float64)
    camids = np.asarray(camids)
    d_M, d_S = {}, {}
    for cam in np.unique(camids):
        cam = int(cam)
        rows = camids == cam
        g = d_zhat[rows]
        S = scales[cam]
        d_M[cam] = -(g.sum(axis=0)) / S
        d_S[cam] = -(g * (batch_raw[rows] - means[cam])).sum(axis=0) / (S * S)
    return d_M, d_S


def _check_finite(grads: Gradients):
    if not np.isfinite(grads.d_zhat).all():
        raise NumericError("non-finite gradient for the adapted batch")
    for name, table in (("M_q", grads.d_M), ("S_q", grads.d_S)):
        for cam, g in table.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name}[camera {cam}]")


def dart3_gradients(batch_raw, camids, means, scales, G_tilde, tau: float, k: int):
    """Loss breakdown and gradients wrt the batch and the query-side parameters."""
    zhat = apply_scale_shift(batch_raw, camids, means, scales)
    breakdown = dart3_loss(zhat, G_tilde, tau, k)
    d_zhat = dart3_zhat_gradient(zhat, G_tilde, breakdown, tau)
    d_M, d_S = chain_to_params(d_zhat, batch_raw, camids, means, scales)
    grads = Gradients(d_zhat, d_M, d_S)
    _check_finite(grads)
    return breakdown, grads


def temp_objective(zhat, G_tilde, k: int):
    """Mean Shannon entropy of the softmax over each row's top-k cosine similarities.

    Returns ``(loss, d_zhat)``.
    """
    zhat = np.asarray(zhat, dtype=np.float64)
    G_tilde = np.asarray(G_tilde, dtype=np.float64)
    B = zhat.shape[0]
    zn = np.maximum(np.linalg.norm(zhat, axis=1, keepdims=True), NORM_FLOOR)
    gn = np.maximum(np.linalg.norm(G_tilde, axis=1, keepdims=True), NORM_FLOOR)
    Gu = G_tilde / gn
    sims = (zhat / zn) @ Gu.T
    idx = topk_indices(-sims, k)
    s = np.take_along_axis(sims, idx, axis=1)
    s_shift = s - s.max(axis=1, keepdims=True)
    logp = s_shift - np.log(np.exp(s_shift).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    loss = float(ent.mean())

    # dH/ds_j = -p_j (log p_j + H)
    d_s = -p * (logp + ent[:, None]) / B
    # ds_ij/dzhat_i = g_j/(|z||g|) - s_ij z_i/|z|^2
    Gsel = Gu[idx]  # B x k x d
    d_zhat = (np.einsum("bk,bkd->bd", d_s, Gsel) / zn
              - (d_s * s).sum(axis=1, keepdims=True) * zhat / zn ** 2)
    return loss, d_zhat


def temp_gradients(batch_raw, camids, means, scales, G_tilde, k: int):
    zhat = apply_scale_shift(batch_raw, camids, means, scales)
    loss, d_zhat = temp_objective(zhat, G_tilde, k)
    d_M, d_S = chain_to_params(d_zhat, batch_raw, camids, means, scales)
    grads = Gradients(d_zhat, d_M, d_S)
    _check_finite(grads)
    return loss, grads
