"""Online adaptation of per-camera query scale-shift parameters.

The gallery is normalized once with the frozen gallery statistics. Each
query batch is mapped through ``zhat = (z - M_q[c]) / S_q[c]``, scored
against the normalized gallery, and ``M_q``/``S_q`` take ``steps_per_batch``
optimizer steps. The batch is returned using the updated parameters.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .camnorm import CameraStats, normalize_features
from .errors import ConfigurationError, NumericError
from .objective import dart3_gradients, dart3_loss, temp_gradients, temp_objective
from .optim import make_optimizer
from .seeding import rng_for
from .store import EmbeddingSet

MODES = ("non_episodic", "episodic")
OBJECTIVES = ("dart3", "temp")
OPTIMIZERS = ("adam", "sgd")
FALLBACKS = ("global_stats", "identity")


@dataclass
class AdapterConfig:
    tau: float = 100.0
    k: int = 3
    lr: float = 1e-4
    steps_per_batch: int = 1
    batch_size: int = 32
    mode: str = "non_episodic"
    objective: str = "dart3"
    grounding_per_batch: int = 0
    optimizer: str = "adam"
    seed: int = 0
    unseen_camera_fallback: str = "global_stats"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if self.steps_per_batch < 1:
            raise ConfigurationError("steps_per_batch must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.grounding_per_batch < 0:
            raise ConfigurationError("grounding_per_batch must be >= 0")
        for name, allowed in (("mode", MODES), ("objective", OBJECTIVES),
                              ("optimizer", OPTIMIZERS),
                              ("unseen_camera_fallback", FALLBACKS)):
            if getattr(self, name) not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}")


@dataclass
class BatchDiagnostics:
    batch_index: int
    losses: list[float]
    final_loss: float
    params_norm: float
    wall_ms: float

    def to_dict(self, timing: bool = True) -> dict:
        doc = {"batch_index": self.batch_index, "losses": self.losses,
               "final_loss": self.final_loss, "params_norm": self.params_norm}
        if timing:
            doc["wall_ms"] = self.wall_ms
        return doc


@dataclass
class RunDiagnostics:
    batches: list[BatchDiagnostics] = field(default_factory=list)
    n_learnable: int = 0
    wall_ms: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        doc = {"n_learnable": self.n_learnable,
               "batches": [b.to_dict(timing) for b in self.batches]}
        if timing:
            doc["wall_ms"] = self.wall_ms
        return doc


@dataclass
class AdapterState:
    mean_q: dict[int, np.ndarray]
    scale_q: dict[int, np.ndarray]
    mean_g: dict[int, np.ndarray]
    scale_g: dict[int, np.ndarray]
    gallery_tilde: np.ndarray
    optimizer: object
    scale_floor: float
    global_mean: np.ndarray | None = None
    global_scale: np.ndarray | None = None
    grounding_pool: EmbeddingSet | None = None
    batches_seen: int = 0
    snapshot: dict = field(default_factory=dict)

    @property
    def n_learnable(self) -> int:
        return sum(v.size for v in self.mean_q.values()) + sum(v.size for v in self.scale_q.values())

    def params_norm(self) -> float:
        sq = sum(float(v @ v) for v in self.mean_q.values())
        sq += sum(float(v @ v) for v in self.scale_q.values())
        return float(np.sqrt(sq))

    def _capture(self) -> dict:
        return {"mean_q": copy.deepcopy(self.mean_q), "scale_q": copy.deepcopy(self.scale_q),
                "optimizer": self.optimizer.state_dict()}

    def _restore(self, saved: dict) -> None:
        self.mean_q = copy.deepcopy(saved["mean_q"])
        self.scale_q = copy.deepcopy(saved["scale_q"])
        self.optimizer.load_state_dict(saved["optimizer"])

    def reset(self) -> None:
        """Return parameters and optimizer moments to the initial snapshot."""
        self._restore(self.snapshot)


def init_adapter(stats: CameraStats, gallery: EmbeddingSet, config: AdapterConfig,
                 grounding_pool: EmbeddingSet | None = None) -> AdapterState:
    if len(gallery) == 0:
        raise ConfigurationError("adaptation needs a non-empty gallery")
    missing = sorted(set(gallery.cameras) - set(stats.mean_g))
    if missing:
        raise ConfigurationError(f"statistics do not cover gallery cameras {missing}")
    if config.grounding_per_batch > 0 and (grounding_pool is None or len(grounding_pool) == 0):
        raise ConfigurationError("grounding_per_batch > 0 needs a non-empty grounding pool")
    g_tilde = normalize_features(gallery.data, gallery.camids, stats.mean_g, stats.scale_g)
    g_tilde.flags.writeable = False
    state = AdapterState(
        mean_q=copy.deepcopy(stats.mean_q),
        scale_q=copy.deepcopy(stats.scale_q),
        mean_g=copy.deepcopy(stats.mean_g),
        scale_g=copy.deepcopy(stats.scale_g),
        gallery_tilde=g_tilde,
        optimizer=make_optimizer(config.optimizer, config.lr),
        scale_floor=stats.scale_floor,
        global_mean=None if stats.global_mean is None else stats.global_mean.copy(),
        global_scale=None if stats.global_scale is None else stats.global_scale.copy(),
        grounding_pool=grounding_pool,
    )
    for table in (state.mean_g, state.scale_g):
        for v in table.values():
            v.flags.writeable = False
    state.snapshot = state._capture()
    return state


def _register_unseen(camids, state: AdapterState, fallback: str, dim: int) -> None:
    for cam in np.unique(camids):
        cam = int(cam)
        if cam in state.mean_q:
            continue
        if fallback == "identity":
            mu, sigma = np.zeros(dim), np.ones(dim)
        else:
            if state.global_mean is None:
                raise ConfigurationError(
                    f"camera {cam} is unseen and no global statistics are available")
            mu, sigma = state.global_mean.copy(), state.global_scale.copy()
        state.mean_q[cam] = mu
        state.scale_q[cam] = sigma
        # the episodic snapshot starts the new camera from the same fallback
        state.snapshot["mean_q"][cam] = mu.copy()
        state.snapshot["scale_q"][cam] = sigma.copy()


def apply_params(batch, camids, state: AdapterState,
                 fallback: str = "global_stats") -> np.ndarray:
    """Scale-shift a raw batch with the current query parameters (float64)."""
    batch = np.asarray(batch, dtype=np.float64)
    if fallback not in FALLBACKS:
        raise ConfigurationError(f"fallback must be one of {FALLBACKS}")
    _register_unseen(camids, state, fallback, batch.shape[1])
    return normalize_features(batch, camids, state.mean_q, state.scale_q)


def _objective_grads(X, cams, state, config):
    if config.objective == "dart3":
        bd, grads = dart3_gradients(X, cams, state.mean_q, state.scale_q,
                                    state.gallery_tilde, config.tau, config.k)
        return bd.loss, grads
    return temp_gradients(X, cams, state.mean_q, state.scale_q, state.gallery_tilde, config.k)


def _objective_value(X, cams, state, config) -> float:
    zhat = normalize_features(X, cams, state.mean_q, state.scale_q)
    if config.objective == "dart3":
        return dart3_loss(zhat, state.gallery_tilde, config.tau, config.k).loss
    return temp_objective(zhat, state.gallery_tilde, config.k)[0]


def _grounding_rows(state: AdapterState, config: AdapterConfig):
    pool = state.grounding_pool
    rng = rng_for(config.seed, "grounding", state.batches_seen)
    pick = rng.integers(0, len(pool), size=config.grounding_per_batch)
    return np.asarray(pool.data[pick], dtype=np.float64), pool.camids[pick]


def adapt_batch(batch, camids, state: AdapterState, config: AdapterConfig):
    """Adapt on one batch; returns ``(adapted float64 features, BatchDiagnostics)``.

    On a non-finite loss or parameter the state is rolled back to its
    pre-batch value and :class:`NumericError` is raised.
    """
    t0 = time.perf_counter()
    batch = np.asarray(batch, dtype=np.float64)
    camids = np.asarray(camids, dtype=np.int64)
    if config.mode == "episodic":
        state.reset()
    fallback = config.unseen_camera_fallback
    _register_unseen(camids, state, fallback, batch.shape[1])
    X, cams = batch, camids
    if config.grounding_per_batch > 0:
        gX, gc = _grounding_rows(state, config)
        _register_unseen(gc, state, fallback, batch.shape[1])
        X, cams = np.concatenate([batch, gX]), np.concatenate([camids, gc])

    saved = state._capture()
    losses = []
    try:
        for _ in range(config.steps_per_batch):
            loss, grads = _objective_grads(X, cams, state, config)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at batch {state.batches_seen}")
            losses.append(loss)
            params, flat = {}, {}
            for cam in grads.d_M:
                params[("M", cam)] = state.mean_q[cam]
                params[("S", cam)] = state.scale_q[cam]
                flat[("M", cam)] = grads.d_M[cam]
                flat[("S", cam)] = grads.d_S[cam]
            state.optimizer.step(params, flat)
            for cam in grads.d_S:
                np.maximum(state.scale_q[cam], state.scale_floor, out=state.scale_q[cam])
                if not (np.isfinite(state.mean_q[cam]).all() and np.isfinite(state.scale_q[cam]).all()):
                    raise NumericError(f"non-finite parameters for camera {cam}")
        final_loss = _objective_value(X, cams, state, config)
    except NumericError:
        state._restore(saved)
        raise
    adapted = normalize_features(batch, camids, state.mean_q, state.scale_q)
    diag = BatchDiagnostics(state.batches_seen, losses, final_loss, state.params_norm(),
                            (time.perf_counter() - t0) * 1e3)
    state.batches_seen += 1
    return adapted, diag


def run_stream(query: EmbeddingSet, state: AdapterState, config: AdapterConfig):
    """Adapt over consecutive query batches; returns ``(adapted set, RunDiagnostics)``."""
    t0 = time.perf_counter()
    diags = RunDiagnostics()
    out = np.empty((len(query), query.dim), dtype=np.float64)
    for start in range(0, len(query), config.batch_size):
        stop = start + config.batch_size
        adapted, diag = adapt_batch(query.data[start:stop], query.camids[start:stop], state, config)
        out[start:stop] = adapted
        diags.batches.append(diag)
    diags.n_learnable = state.n_learnable
    diags.wall_ms = (time.perf_counter() - t0) * 1e3
    return query.with_data(out), diags
