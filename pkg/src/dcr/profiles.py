"""Named configuration profiles.

``desk`` finishes CPU suites in tens of minutes (small windows, thin
model, 60 training epochs so the per-instance easiness has room to
anneal); ``paper-shape`` mirrors the full-scale geometry (10 s
observation, 6-layer 1024-wide transformer) for long runs.
"""

from __future__ import annotations

from .curriculum import ScheduleSpec
from .dataset import DatasetLayout, GrammarSpec, default_grammar
from .engine import ConfigError, TrainConfig
from .objectives import LossWeights
from .reasoners import ReasonerConfig

PROFILES = ("desk", "paper-shape")

DESK_TRAIN_SEGMENTS = 2000
DESK_VAL_SEGMENTS = 1000


def profile_layout(profile: str) -> DatasetLayout:
    if profile == "desk":
        return DatasetLayout(fps=4, tau_a=1.0, tau_o=2.5)
    if profile == "paper-shape":
        return DatasetLayout(fps=4, tau_a=1.0, tau_o=10.0)
    raise ConfigError(f"unknown profile {profile!r}")


def profile_grammar(profile: str, seed: int = 0) -> GrammarSpec:
    profile_layout(profile)  # validate the name
    return default_grammar(seed=seed)


def profile_config(profile: str, architecture: str = "transformer", seed: int = 0) -> TrainConfig:
    if architecture not in ("transformer", "lstm"):
        raise ConfigError(f"unknown architecture {architecture!r}")
    if profile == "desk":
        reasoner = ReasonerConfig(
            architecture=architecture,
            input_dim=64,
            latent_dim=128,
            layers=2 if architecture == "transformer" else 1,
            heads=4,
            dropout=0.1,
            max_positions=64,
        )
        return TrainConfig(
            reasoner=reasoner,
            weights=LossWeights(lambda_cls=0.5, lambda_rec=1.0, epsilon=0.2),
            schedule=ScheduleSpec(kind="instance_local"),
            pretrain_epochs=12,
            train_epochs=60,
            batch_size=64,
            base_lr=1e-3 if architecture == "transformer" else 1e-2,
            pretrain_lr=1e-3,
            seed=seed,
        )
    if profile == "paper-shape":
        reasoner = ReasonerConfig(
            architecture=architecture,
            input_dim=64,
            latent_dim=1024,
            layers=6 if architecture == "transformer" else 1,
            heads=16,
            dropout=0.1,
            max_positions=64,
        )
        return TrainConfig(
            reasoner=reasoner,
            weights=LossWeights(lambda_cls=0.5, lambda_rec=1.0, epsilon=0.2),
            schedule=ScheduleSpec(kind="instance_local"),
            pretrain_epochs=50,
            train_epochs=100,
            batch_size=128,
            base_lr=1e-4 if architecture == "transformer" else 1e-2,
            pretrain_lr=1e-4,
            seed=seed,
        )
    raise ConfigError(f"unknown profile {profile!r}")


def order_probe_grammar(seed: int = 0) -> GrammarSpec:
    """Grammar tuned for the order-recovery benchmark: fixed-length
    segments whose drift ramp spans the whole pre-action window and a
    deep envelope, so every window position has a distinct signature."""
    return default_grammar(
        seed=seed,
        ramp=12,
        duration_range=(16, 16),
        noise_scale=0.01,
        envelope_amp=0.5,
    )


def order_probe_config(seed: int = 0) -> TrainConfig:
    """Pre-training run settings for the K=16 order-recovery benchmark."""
    reasoner = ReasonerConfig(
        architecture="transformer",
        input_dim=64,
        latent_dim=64,
        layers=2,
        heads=4,
        dropout=0.0,
        max_positions=64,
    )
    return TrainConfig(
        reasoner=reasoner,
        weights=LossWeights(),
        schedule=ScheduleSpec(),
        pretrain_epochs=50,
        train_epochs=50,
        batch_size=64,
        pretrain_lr=3e-3,
        temperature=0.1,
        seed=seed,
    )


ORDER_PROBE_LAYOUT = DatasetLayout(fps=4, tau_a=1.0, tau_o=2.0)  # K = 16
ORDER_PROBE_SEGMENTS = 3000
