"""Per-camera feature statistics and camera normalization.

Statistics are population moments (divide by N) computed in float64 with a
two-pass algorithm. In ``pooled`` mode each camera's query and gallery rows
are merged before computing one mean/scale pair shared by both roles.
"""
from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, StorageError
from .store import EmbeddingSet

SCALE_FLOOR = 1e-6
POOL_MODES = ("pooled", "separate")


class EmptyCameraWarning(UserWarning):
    pass


def camera_moments(X, camids, scale_floor: float = SCALE_FLOOR):
    """Per-camera ``(means, scales, counts)`` dictionaries for the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    camids = np.asarray(camids)
    means, scales, counts = {}, {}, {}
    for cam in np.unique(camids):
        rows = X[camids == cam]
        mu = rows.mean(axis=0)
        sigma = np.sqrt(np.mean((rows - mu) ** 2, axis=0))
        means[int(cam)] = mu
        scales[int(cam)] = np.maximum(sigma, scale_floor)
        counts[int(cam)] = rows.shape[0]
    return means, scales, counts


def _global_moments(X, scale_floor):
    mu = X.mean(axis=0)
    sigma = np.sqrt(np.mean((X - mu) ** 2, axis=0))
    return mu, np.maximum(sigma, scale_floor)


@dataclass
class CameraStats:
    """The four external parameter dictionaries plus global fallback moments.

    ``mean_q``/``scale_q`` are the learnable query-side parameters once
    passed through :func:`init_external_params`; ``mean_g``/``scale_g`` stay
    frozen.
    """

    mean_q: dict[int, np.ndarray]
    scale_q: dict[int, np.ndarray]
    mean_g: dict[int, np.ndarray]
    scale_g: dict[int, np.ndarray]
    counts_q: dict[int, int] = field(default_factory=dict)
    counts_g: dict[int, int] = field(default_factory=dict)
    global_mean: np.ndarray | None = None
    global_scale: np.ndarray | None = None
    scale_floor: float = SCALE_FLOOR
    pool_mode: str = "pooled"
    warnings: list[str] = field(default_factory=list)
    learnable: tuple[str, ...] = ()
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if set(self.mean_q) != set(self.scale_q) or set(self.mean_g) != set(self.scale_g):
            raise ConfigurationError("mean and scale dictionaries must share camera keys")

    @property
    def dim(self) -> int:
        for v in list(self.mean_q.values()) + list(self.mean_g.values()):
            return v.shape[0]
        return 0 if self.global_mean is None else self.global_mean.shape[0]

    def copy(self) -> "CameraStats":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        def role(means, scales, counts):
            return {"cameras": {
                str(c): {"mean": means[c].tolist(), "scale": scales[c].tolist(),
                         "count": int(counts.get(c, 0))}
                for c in sorted(means)
            }}

        doc = {
            "scale_floor": self.scale_floor,
            "pool_mode": self.pool_mode,
            "query": role(self.mean_q, self.scale_q, self.counts_q),
            "gallery": role(self.mean_g, self.scale_g, self.counts_g),
            "warnings": list(self.warnings),
        }
        if self.global_mean is not None:
            doc["global"] = {"mean": self.global_mean.tolist(),
                             "scale": self.global_scale.tolist()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraStats":
        try:
            def role(name):
                cams = doc[name]["cameras"]
                return (
                    {int(c): np.asarray(v["mean"], dtype=np.float64) for c, v in cams.items()},
                    {int(c): np.asarray(v["scale"], dtype=np.float64) for c, v in cams.items()},
                    {int(c): int(v.get("count", 0)) for c, v in cams.items()},
                )

            mq, sq, cq = role("query")
            mg, sg, cg = role("gallery")
            glob = doc.get("global")
            return cls(
                mq, sq, mg, sg, cq, cg,
                global_mean=None if glob is None else np.asarray(glob["mean"], dtype=np.float64),
                global_scale=None if glob is None else np.asarray(glob["scale"], dtype=np.float64),
                scale_floor=float(doc.get("scale_floor", SCALE_FLOOR)),
                pool_mode=doc.get("pool_mode", "pooled"),
                warnings=list(doc.get("warnings", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed camera statistics: {exc}") from exc

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "CameraStats":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


def compute_camera_stats(query: EmbeddingSet, gallery: EmbeddingSet, pool_mode: str = "pooled",
                         scale_floor: float = SCALE_FLOOR, cameras=None) -> CameraStats:
    """Per-camera means and scales for both roles.

    ``cameras`` optionally lists the expected camera IDs; any of them with
    no rows in either set is left out and reported through
    :class:`EmptyCameraWarning` and ``CameraStats.warnings``. In separate
    mode a camera missing from one role takes the statistic of the other.
    """
    if pool_mode not in POOL_MODES:
        raise ConfigurationError(f"pool_mode must be one of {POOL_MODES}, got {pool_mode!r}")
    Xq = np.asarray(query.data, dtype=np.float64)
    Xg = np.asarray(gallery.data, dtype=np.float64)
    if query.dim != gallery.dim:
        raise ConfigurationError(f"query dim {query.dim} != gallery dim {gallery.dim}")
    X_all = np.concatenate([Xq, Xg])
    cam_all = np.concatenate([query.camids, gallery.camids])
    notes = []
    if cameras is not None:
        present = set(cam_all.tolist())
        for cam in sorted(set(int(c) for c in cameras) - present):
            msg = f"camera {cam} has no samples in query or gallery; omitted"
            warnings.warn(msg, EmptyCameraWarning, stacklevel=2)
            notes.append(msg)
    if X_all.shape[0] == 0:
        raise ConfigurationError("cannot compute statistics from empty query and gallery")

    pooled_m, pooled_s, pooled_n = camera_moments(X_all, cam_all, scale_floor)
    g_mean, g_scale = _global_moments(X_all, scale_floor)
    if pool_mode == "pooled":
        mq, sq, cq = pooled_m, pooled_s, pooled_n
        mg, sg, cg = copy.deepcopy(pooled_m), copy.deepcopy(pooled_s), dict(pooled_n)
    else:
        mq, sq, cq = camera_moments(Xq, query.camids, scale_floor)
        mg, sg, cg = camera_moments(Xg, gallery.camids, scale_floor)
        for cam in pooled_m:
            if cam not in mq:
                mq[cam], sq[cam], cq[cam] = pooled_m[cam].copy(), pooled_s[cam].copy(), 0
            if cam not in mg:
                mg[cam], sg[cam], cg[cam] = pooled_m[cam].copy(), pooled_s[cam].copy(), 0
    return CameraStats(mq, sq, mg, sg, cq, cg, g_mean, g_scale, scale_floor, pool_mode, notes)


def _lookup(camids, table, fallback, what):
    rows = []
    for cam in camids:
        vec = table.get(int(cam))
        if vec is None:
            if fallback is None:
                raise ConfigurationError(f"no {what} for camera {int(cam)}")
            vec = fallback
        rows.append(vec)
    return np.stack(rows)


def normalize_features(X, camids, means, scales, fallback=None) -> np.ndarray:
    """Rowwise ``(x - mean[c]) / scale[c]`` in float64.

    ``fallback`` is an optional ``(mean, scale)`` pair used for cameras not
    in the dictionaries; without it an unknown camera is an error.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return X.copy()
    fb_m, fb_s = (None, None) if fallback is None else fallback
    mu = _lookup(camids, means, fb_m, "mean")
    sigma = _lookup(camids, scales, fb_s, "scale")
    if mu.shape[1] != X.shape[1]:
        raise ConfigurationError(f"statistics have dim {mu.shape[1]}, features have {X.shape[1]}")
    return (X - mu) / sigma


def normalize(eset: EmbeddingSet, means, scales, fallback=None) -> EmbeddingSet:
    return eset.with_data(normalize_features(eset.data, eset.camids, means, scales, fallback))


def init_external_params(stats: CameraStats) -> CameraStats:
    """Independent copy with the query partition marked learnable, gallery frozen."""
    params = stats.copy()
    params.learnable = ("mean_q", "scale_q")
    params.frozen = ("mean_g", "scale_g")
    return params
