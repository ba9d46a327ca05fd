"""Test-time adaptation of per-camera scale-shift parameters over ReID embeddings."""
from .adapter import AdapterConfig, AdapterState, adapt_batch, apply_params, init_adapter, run_stream
from .camnorm import CameraStats, compute_camera_stats, init_external_params, normalize
from .errors import Dart3Error
from .metrics import EvalReport, bias_recovery, error_rate_curve, evaluate_retrieval, nmi_camera_bias
from .objective import dart3_gradients, dart3_loss, soft_distance, temp_objective, topk_mask
from .store import EmbeddingSet, camera_partition, load_embedding_set, save_embedding_set
from .synth import BiasSpec, SynthConfig, apply_bias, generate_clean, recover_unbiased

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AdapterState", "adapt_batch", "apply_params", "init_adapter", "run_stream",
    "CameraStats", "compute_camera_stats", "init_external_params", "normalize",
    "Dart3Error",
    "EvalReport", "bias_recovery", "error_rate_curve", "evaluate_retrieval", "nmi_camera_bias",
    "dart3_gradients", "dart3_loss", "soft_distance", "temp_objective", "topk_mask",
    "EmbeddingSet", "camera_partition", "load_embedding_set", "save_embedding_set",
    "BiasSpec", "SynthConfig", "apply_bias", "generate_clean", "recover_unbiased",
]
