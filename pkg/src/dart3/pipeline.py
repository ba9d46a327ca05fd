"""Method selector shared by the CLI and experiments."""
from __future__ import annotations

import numpy as np

from .adapter import AdapterConfig, init_adapter, run_stream
from .camnorm import CameraStats, normalize_features
from .errors import ConfigurationError
from .store import EmbeddingSet

METHODS = ("noadapt", "norm", "dart3_lite", "temp_lite")


def query_fallback(stats: CameraStats, config: AdapterConfig, dim: int):
    if config.unseen_camera_fallback == "identity":
        return np.zeros(dim), np.ones(dim)
    if stats.global_mean is None:
        return None
    return stats.global_mean, stats.global_scale


def run_method(method: str, query: EmbeddingSet, gallery: EmbeddingSet, stats: CameraStats | None,
               config: AdapterConfig, grounding_pool: EmbeddingSet | None = None):
    """Return ``(query_out, gallery_out, diagnostics)`` for one method.

    ``diagnostics`` is ``None`` for the non-adaptive methods.
    """
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}, got {method!r}")
    if method == "noadapt":
        return query, gallery, None
    if stats is None:
        raise ConfigurationError(f"method {method!r} needs camera statistics")
    g_tilde = gallery.with_data(
        normalize_features(gallery.data, gallery.camids, stats.mean_g, stats.scale_g))
    if method == "norm":
        fb = query_fallback(stats, config, query.dim)
        q_tilde = normalize_features(query.data, query.camids, stats.mean_q, stats.scale_q, fb)
        return query.with_data(q_tilde), g_tilde, None
    objective = "dart3" if method == "dart3_lite" else "temp"
    if config.objective != objective:
        config = AdapterConfig(**{**config.__dict__, "objective": objective})
    state = init_adapter(stats, gallery, config, grounding_pool)
    adapted, diags = run_stream(query, state, config)
    return adapted, g_tilde, diags
