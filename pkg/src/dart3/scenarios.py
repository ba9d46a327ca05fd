"""Ready-made synthetic benchmark scenarios.

``camera_shift`` is the default experiment: unit-norm-scale embeddings
(d=64, 50 identities, 6 cameras), every identity queried from a single
camera and enrolled in the gallery from all cameras, a per-camera affine
bias whose shift is twice the identity cluster separation, and per-sample
bias noise of 0.05. Because each query camera sees its own subset of
identities, per-camera normalization leaves a camera-specific offset that
test-time adaptation can correct.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .synth import BiasSpec, SynthConfig, apply_bias, generate_clean, random_bias_spec
from .store import EmbeddingSet


@dataclass
class Scenario:
    synth: SynthConfig
    beta_scale: float = 2.0
    alpha_low: float = 0.5
    alpha_high: float = 1.5
    noise_sigma: float = 0.05
    # adapter batch size used with this scenario
    batch_size: int = 8


@dataclass
class ScenarioData:
    clean_query: EmbeddingSet
    clean_gallery: EmbeddingSet
    query: EmbeddingSet
    gallery: EmbeddingSet
    spec: BiasSpec


CAMERA_SHIFT = Scenario(
    SynthConfig(n_ids=50, samples_per_id_query=20, samples_per_id_gallery=6, dim=64,
                n_cameras=6, id_center_sigma=0.125, within_id_sigma=0.1,
                query_cameras_per_id=1, gallery_cameras_per_id=0),
)


def bias_pair(clean_q: EmbeddingSet, clean_g: EmbeddingSet, spec: BiasSpec,
              seed: int) -> ScenarioData:
    """Bias a clean query/gallery pair with independent noise streams."""
    query = apply_bias(clean_q, spec, seed=seed)
    gallery = apply_bias(clean_g, spec, seed=seed, stream=1)
    return ScenarioData(clean_q, clean_g, query, gallery, spec)


def scenario_spec(scenario: Scenario, seed: int) -> BiasSpec:
    synth = scenario.synth
    return random_bias_spec(
        range(synth.n_cameras), synth.dim,
        beta_norm=scenario.beta_scale * synth.cluster_separation,
        alpha_low=scenario.alpha_low, alpha_high=scenario.alpha_high,
        noise_sigma=scenario.noise_sigma, seed=seed)


def build(scenario: Scenario, seed: int) -> ScenarioData:
    """Generate clean and biased query/gallery sets for one seed."""
    synth = replace(scenario.synth, seed=seed)
    clean_q, clean_g, _ = generate_clean(synth)
    return bias_pair(clean_q, clean_g, scenario_spec(scenario, seed), seed)
