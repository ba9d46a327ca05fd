"""Synthetic identity embeddings and the per-camera affine bias model.

Clean features ``z*`` are Gaussian identity clusters. A camera ``c`` observes
``z = alpha_c * z* + beta_c`` elementwise, optionally with per-sample
Gaussian noise added to ``alpha_c`` and ``beta_c``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, NumericError, StorageError, UsageError
from .seeding import rng_for
from .store import EmbeddingSet

ALPHA_FLOOR = 1e-3


@dataclass
class SynthConfig:
    n_ids: int = 50
    samples_per_id_query: int = 2
    samples_per_id_gallery: int = 4
    dim: int = 64
    n_cameras: int = 6
    id_center_sigma: float = 1.0
    within_id_sigma: float = 0.3
    seed: int = 0
    # identity i gets spread within_id_sigma * (1 + spread_gradient * i / (n_ids - 1))
    spread_gradient: float = 0.0
    # consecutive cameras each identity cycles through per role; 0 = all cameras
    query_cameras_per_id: int = 0
    gallery_cameras_per_id: int = 0
    # emit rows in a seeded random order instead of grouped by identity
    shuffle: bool = True

    def __post_init__(self):
        for name in ("n_ids", "samples_per_id_query", "samples_per_id_gallery",
                     "dim", "n_cameras"):
            if int(getattr(self, name)) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.id_center_sigma > 0:
            raise UsageError("id_center_sigma must be > 0")
        if self.within_id_sigma < 0 or not self.within_id_sigma < self.id_center_sigma:
            raise UsageError("within_id_sigma must satisfy 0 <= within_id_sigma < id_center_sigma")
        if self.spread_gradient < 0:
            raise UsageError("spread_gradient must be >= 0")
        for name in ("query_cameras_per_id", "gallery_cameras_per_id"):
            if not 0 <= getattr(self, name) <= self.n_cameras:
                raise UsageError(f"{name} must be in [0, n_cameras]")

    @property
    def cluster_separation(self) -> float:
        """Expected distance between two identity centers."""
        return self.id_center_sigma * np.sqrt(2.0 * self.dim)


@dataclass
class BiasSpec:
    alphas: dict[int, np.ndarray]
    betas: dict[int, np.ndarray]
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.alphas = {int(c): np.asarray(v, dtype=np.float64) for c, v in self.alphas.items()}
        self.betas = {int(c): np.asarray(v, dtype=np.float64) for c, v in self.betas.items()}
        if set(self.alphas) != set(self.betas):
            raise ConfigurationError("alphas and betas must cover the same cameras")
        dims = {v.shape for v in self.alphas.values()} | {v.shape for v in self.betas.values()}
        if len(dims) > 1:
            raise ConfigurationError(f"bias vectors disagree in shape: {sorted(dims)}")
        if any((v <= 0).any() for v in self.alphas.values()):
            raise ConfigurationError("alpha entries must be positive")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")

    @property
    def cameras(self) -> list[int]:
        return sorted(self.alphas)

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "cameras": {
                str(c): {"alpha": self.alphas[c].tolist(), "beta": self.betas[c].tolist()}
                for c in self.cameras
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BiasSpec":
        cams = doc["cameras"]
        return cls(
            alphas={int(c): v["alpha"] for c, v in cams.items()},
            betas={int(c): v["beta"] for c, v in cams.items()},
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
        )

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "BiasSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"{path}: malformed bias spec ({exc})") from exc


def random_bias_spec(cameras, dim, *, beta_norm, alpha_low=0.5, alpha_high=1.5,
                     noise_sigma=0.0, seed=0) -> BiasSpec:
    """Per-camera alphas uniform in ``[alpha_low, alpha_high]`` and betas of norm ``beta_norm``."""
    if not 0 < alpha_low <= alpha_high:
        raise UsageError("need 0 < alpha_low <= alpha_high")
    alphas, betas = {}, {}
    for cam in sorted(int(c) for c in cameras):
        rng = rng_for(seed, "bias_spec", cam)
        alphas[cam] = rng.uniform(alpha_low, alpha_high, size=dim)
        direction = rng.standard_normal(dim)
        betas[cam] = beta_norm * direction / np.linalg.norm(direction)
    return BiasSpec(alphas, betas, noise_sigma)


def generate_clean(config: SynthConfig):
    """Draw clean query and gallery sets from Gaussian identity clusters.

    Cameras are assigned round-robin per identity: query sample ``s`` of
    identity ``i`` gets camera ``(i + s % wq) % n_cameras`` and gallery
    sample ``s`` gets ``(i + 1 + s % wg) % n_cameras``, where ``wq``/``wg``
    are the per-role camera windows. Every identity is therefore seen by at
    least two cameras whenever ``n_cameras >= 2``.

    Returns ``(query, gallery, centers)`` where ``centers`` is the
    ``n_ids x dim`` matrix of identity centers.
    """
    c = config
    centers = rng_for(c.seed, "centers").normal(0.0, c.id_center_sigma, size=(c.n_ids, c.dim))
    grade = np.linspace(0.0, 1.0, c.n_ids) if c.n_ids > 1 else np.zeros(1)
    spreads = c.within_id_sigma * (1.0 + c.spread_gradient * grade)

    def draw(role, per_id, cam_offset, window):
        stream = 0 if role == "query" else 1
        rng = rng_for(c.seed, "samples", stream)
        ids = np.repeat(np.arange(c.n_ids), per_id)
        slot = np.tile(np.arange(per_id), c.n_ids)
        noise = rng.standard_normal((ids.size, c.dim)) * spreads[ids, None]
        data = centers[ids] + noise
        cams = (ids + cam_offset + slot % (window or c.n_cameras)) % c.n_cameras
        if c.shuffle:
            order = rng_for(c.seed, "row_order", stream).permutation(ids.size)
            data, ids, cams = data[order], ids[order], cams[order]
        return EmbeddingSet(data, ids, cams, role)

    query = draw("query", c.samples_per_id_query, 0, c.query_cameras_per_id)
    gallery = draw("gallery", c.samples_per_id_gallery, 1, c.gallery_cameras_per_id)
    return query, gallery, centers


def standardize_per_camera(eset: EmbeddingSet) -> EmbeddingSet:
    """Rescale so each camera's rows have population mean 0 and std 1 per dimension."""
    from .camnorm import camera_moments, normalize_features

    means, scales, _ = camera_moments(eset.data, eset.camids)
    return eset.with_data(normalize_features(eset.data, eset.camids, means, scales))


def _check_covered(camids, spec: BiasSpec, dim: int):
    missing = sorted(set(np.unique(camids).tolist()) - set(spec.alphas))
    if missing:
        raise ConfigurationError(f"bias spec has no entry for cameras {missing}")
    for v in spec.alphas.values():
        if v.shape != (dim,):
            raise ConfigurationError(f"bias vectors have shape {v.shape}, data dim is {dim}")
        break


def bias_features(z, camids, spec: BiasSpec, rng=None) -> np.ndarray:
    """Float64 core of :func:`apply_bias`; ``rng`` is required when noise is on."""
    z = np.asarray(z, dtype=np.float64)
    camids = np.asarray(camids)
    _check_covered(camids, spec, z.shape[1])
    alpha = np.stack([spec.alphas[int(c)] for c in camids]) if len(z) else np.empty_like(z)
    beta = np.stack([spec.betas[int(c)] for c in camids]) if len(z) else np.empty_like(z)
    if spec.noise_sigma > 0:
        alpha = np.maximum(alpha + rng.normal(0.0, spec.noise_sigma, size=z.shape), ALPHA_FLOOR)
        beta = beta + rng.normal(0.0, spec.noise_sigma, size=z.shape)
    return alpha * z + beta


def apply_bias(clean: EmbeddingSet, spec: BiasSpec, seed: int = 0, stream: int = 0) -> EmbeddingSet:
    """Biased copy of ``clean``; ``stream`` separates noise draws sharing one seed."""
    rng = rng_for(seed, "bias_noise", stream)
    return clean.with_data(bias_features(clean.data, clean.camids, spec, rng))


def unbias_features(z, camids, spec: BiasSpec) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    camids = np.asarray(camids)
    _check_covered(camids, spec, z.shape[1])
    if any((v < ALPHA_FLOOR).any() for v in spec.alphas.values()):
        raise NumericError(f"alpha entries below {ALPHA_FLOOR} cannot be inverted")
    if not len(z):
        return z.copy()
    alpha = np.stack([spec.alphas[int(c)] for c in camids])
    beta = np.stack([spec.betas[int(c)] for c in camids])
    return (z - beta) / alpha


def recover_unbiased(biased: EmbeddingSet, spec: BiasSpec) -> EmbeddingSet:
    return biased.with_data(unbias_features(biased.data, biased.camids, spec))
