"""Retrieval and camera-bias metrics.

Retrieval follows the usual cross-camera ReID protocol: for every query the
gallery entries with the same person *and* the same camera are discarded
before ranking, and queries left without any positive are not scored.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camnorm import CameraStats
from .errors import ConfigurationError, DataError, LabelingError
from .objective import euclidean_distances, soft_distance, topk_indices
from .seeding import rng_for
from .store import EmbeddingSet
from .synth import BiasSpec


@dataclass
class EvalReport:
    map_score: float
    cmc: np.ndarray
    nmi_camera: float | None = None
    per_camera: dict[int, dict] = field(default_factory=dict)
    curves: dict[str, list[dict]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    n_valid: int = 0

    @property
    def rank1(self) -> float:
        return float(self.cmc[0]) if len(self.cmc) else 0.0

    def to_dict(self) -> dict:
        return {
            "mAP": self.map_score,
            "rank1": self.rank1,
            "cmc": [float(v) for v in self.cmc],
            "nmi_camera": self.nmi_camera,
            "n_valid_queries": self.n_valid,
            "per_camera": {str(c): v for c, v in sorted(self.per_camera.items())},
            "curves": self.curves,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def per_camera_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["camid", "map", "rank1", "n_queries"])
        for cam, row in sorted(self.per_camera.items()):
            w.writerow([cam, repr(row["map"]), repr(row["rank1"]), row["n_queries"]])
        return buf.getvalue()

    def cmc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "cmc"])
        for r, v in enumerate(self.cmc, start=1):
            w.writerow([r, repr(float(v))])
        return buf.getvalue()


def _require_labels(query: EmbeddingSet):
    if len(query) and (query.pids < 0).any():
        row = int(np.flatnonzero(query.pids < 0)[0])
        raise LabelingError(f"query row {row} has no person ID (pid=-1)")


def evaluate_retrieval(query: EmbeddingSet, gallery: EmbeddingSet, max_rank: int = 50) -> EvalReport:
    """mAP, CMC up to ``max_rank`` and a per-query-camera breakdown."""
    _require_labels(query)
    if len(gallery) == 0:
        raise ConfigurationError("evaluation needs a non-empty gallery")
    dist = euclidean_distances(query.data, gallery.data)
    ap, first_hit, n_pos = kernels.ap_cmc(dist, query.pids, query.camids,
                                          gallery.pids, gallery.camids)
    valid = n_pos > 0
    n_valid = int(valid.sum())
    notes = []
    skipped = len(query) - n_valid
    if skipped:
        notes.append(f"{skipped} queries without cross-camera positives were skipped")
    max_rank = max(1, int(max_rank))
    if n_valid == 0:
        return EvalReport(0.0, np.zeros(max_rank), notes=notes + ["no valid queries"])
    hits = first_hit[valid]
    cmc = np.array([(hits < r).sum() / n_valid for r in range(1, max_rank + 1)])
    per_camera = {}
    for cam in np.unique(query.camids[valid]):
        sel = valid & (query.camids == cam)
        per_camera[int(cam)] = {
            "map": float(ap[sel].mean()),
            "rank1": float((first_hit[sel] == 0).mean()),
            "n_queries": int(sel.sum()),
        }
    return EvalReport(float(ap[valid].mean()), cmc, per_camera=per_camera, notes=notes,
                      n_valid=n_valid)


# --- k-means / NMI ---------------------------------------------------------

def kmeans(X, n_clusters: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd's k-means with k-means++ seeding; returns ``(labels, centers)``.

    A cluster that loses all its points is re-seeded at the point farthest
    from its current center.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n_clusters < 1 or n < n_clusters:
        raise DataError(f"need at least {n_clusters} rows for {n_clusters} clusters, got {n}")
    if np.unique(X, axis=0).shape[0] < n_clusters:
        raise DataError(f"fewer than {n_clusters} distinct rows")
    rng = rng_for(seed, "kmeans")
    centers = np.empty((n_clusters, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = kernels.pairwise_sq_distances(X, centers[:1])[:, 0]
    for c in range(1, n_clusters):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = X[idx]
        closest = np.minimum(closest, kernels.pairwise_sq_distances(X, centers[c:c + 1])[:, 0])

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        labels, sq = kernels.kmeans_assign(X, centers)
        new = centers.copy()
        for c in range(n_clusters):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(sq))
                new[c] = X[far]
                labels[far] = c
                sq[far] = 0.0
        shift = float(((new - centers) ** 2).sum())
        centers = new
        if shift <= tol:
            break
    labels, _ = kernels.kmeans_assign(X, centers)
    return labels, centers


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_info(labels_a, labels_b) -> float:
    """NMI with arithmetic-mean normalization, 2 I(U;V) / (H(U) + H(V)).

    Defined as 0 when either labeling has zero entropy.
    """
    a = np.unique(np.asarray(labels_a), return_inverse=True)[1]
    b = np.unique(np.asarray(labels_b), return_inverse=True)[1]
    if a.shape != b.shape:
        raise ValueError("label arrays differ in length")
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    h_a = _entropy(table.sum(axis=1))
    h_b = _entropy(table.sum(axis=0))
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    n = table.sum()
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, 2.0 * mi / (h_a + h_b))))


def nmi_camera_bias(features: EmbeddingSet, n_clusters: int | None = None, seed: int = 0) -> float:
    """NMI between k-means clusters of ``features`` and their camera IDs."""
    if n_clusters is None:
        n_clusters = len(features.cameras)
    if len(features.cameras) < 2:
        return 0.0
    if n_clusters < 2:
        raise DataError("NMI needs at least 2 clusters")
    labels, _ = kmeans(features.data, n_clusters, seed=seed)
    return normalized_mutual_info(labels, features.camids)


# --- error rate vs nearest-neighbour statistic ------------------------------

CURVE_MEASURES = ("euclidean", "cosine", "entropy_proxy")


def _protocol_distances(query, gallery, dist):
    """Copy of ``dist`` with same-pid-same-camera gallery entries set to +inf."""
    dist = dist.copy()
    junk = (query.pids[:, None] == gallery.pids[None, :]) & \
           (query.camids[:, None] == gallery.camids[None, :])
    dist[junk] = np.inf
    return dist


def error_rate_curve(query: EmbeddingSet, gallery: EmbeddingSet, measure: str = "euclidean",
                     n_bins: int = 8, k: int = 3, tau: float = 100.0) -> list[dict]:
    """Top-1 error rate of equal-count bins of queries sorted by a nearest-match statistic.

    ``euclidean``: distance to the nearest gallery entry; ``cosine``: cosine
    distance to the most similar entry; ``entropy_proxy``: Shannon entropy of
    the renormalized soft-distance weights over the ``k`` nearest entries.
    """
    if measure not in CURVE_MEASURES:
        raise ConfigurationError(f"measure must be one of {CURVE_MEASURES}")
    _require_labels(query)
    if len(gallery) == 0:
        raise ConfigurationError("curve needs a non-empty gallery")
    dist = _protocol_distances(query, gallery, euclidean_distances(query.data, gallery.data))
    has_pos = ((query.pids[:, None] == gallery.pids[None, :]) & np.isfinite(dist)).any(axis=1)
    valid = np.flatnonzero(has_pos)
    if n_bins < 1 or n_bins > valid.size:
        raise DataError(f"cannot split {valid.size} valid queries into {n_bins} bins")
    dist = dist[valid]
    top1 = np.argmin(dist, axis=1)
    wrong = gallery.pids[top1] != query.pids[valid]

    if measure == "euclidean":
        stat = dist[np.arange(valid.size), top1]
    elif measure == "cosine":
        q = np.asarray(query.data[valid], dtype=np.float64)
        g = np.asarray(gallery.data, dtype=np.float64)
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        sims = np.where(np.isfinite(dist), q @ g.T, -np.inf)
        stat = 1.0 - sims.max(axis=1)
    else:
        finite = np.where(np.isfinite(dist), dist, np.finfo(np.float64).max / 4)
        soft = soft_distance(finite, tau)
        idx = topk_indices(soft, k)
        sel = -np.take_along_axis(soft, idx, axis=1)
        sel = sel - sel.max(axis=1, keepdims=True)
        logp = sel - np.log(np.exp(sel).sum(axis=1, keepdims=True))
        stat = -(np.exp(logp) * logp).sum(axis=1)

    order = np.argsort(stat, kind="stable")
    rows = []
    for b, chunk in enumerate(np.array_split(order, n_bins)):
        rows.append({"bin": b, "mean_stat": float(stat[chunk].mean()),
                     "error_rate": float(wrong[chunk].mean()), "count": int(chunk.size)})
    return rows


def curve_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "mean_stat", "error_rate", "count"])
    for r in rows:
        w.writerow([r["bin"], repr(r["mean_stat"]), repr(r["error_rate"]), r["count"]])
    return buf.getvalue()


# --- bias parameter recovery ------------------------------------------------

@dataclass
class RecoveryReport:
    hit_rate: float
    mae: float
    alpha_hit_rate: float
    alpha_mae: float
    beta_hit_rate: float
    beta_mae: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bias_recovery(est: CameraStats, truth: BiasSpec, threshold: float = 0.01) -> RecoveryReport:
    """Compare query-side statistics, read as (alpha, beta) estimates, with the true bias."""
    if set(est.mean_q) != set(truth.alphas):
        raise ConfigurationError(
            f"cameras differ: estimate {sorted(est.mean_q)}, truth {truth.cameras}")
    cams = truth.cameras
    for c in cams:
        if est.mean_q[c].shape != truth.betas[c].shape or est.scale_q[c].shape != truth.alphas[c].shape:
            raise ConfigurationError(
                f"camera {c}: estimate dim {est.mean_q[c].shape[0]}, truth dim {truth.betas[c].shape[0]}")
    a_err = np.concatenate([np.abs(est.scale_q[c] - truth.alphas[c]) for c in cams])
    b_err = np.concatenate([np.abs(est.mean_q[c] - truth.betas[c]) for c in cams])
    both = np.concatenate([a_err, b_err])
    return RecoveryReport(
        hit_rate=float((both < threshold).mean()), mae=float(both.mean()),
        alpha_hit_rate=float((a_err < threshold).mean()), alpha_mae=float(a_err.mean()),
        beta_hit_rate=float((b_err < threshold).mean()), beta_mae=float(b_err.mean()),
    )
