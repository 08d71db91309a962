"""Tuned experiment recipes for the benchmark presets.

These are the configurations the acceptance experiments run with; the CLI
uses them as defaults for SCM and image datasets so a bare ``train``
invocation reproduces the benchmark behavior.
"""

from __future__ import annotations

from .model import ModelConfig
from .scm_datagen import GeneratorSpec
from .trainer import TrainConfig

__all__ = ["scm_model_config", "scm_train_config",
           "mnist_model_config", "mnist_train_config"]


def scm_model_config(spec: GeneratorSpec, **overrides) -> ModelConfig:
    """Estimation model for the numerical SCM benchmarks."""
    kwargs = dict(
        latent_dims=spec.latent_dims,
        exo_dims=spec.exo_dims,
        obs_dims=spec.obs_dims,
        flow_type="affine",
        alpha_recon=1.0,
        alpha_ind=0.2,
        alpha_sparsity=0.02,
        cross_weight=5.0,
        acyclicity_weight=20.0,
        adjacency_init_scale=-2.0,
        conditioner_spectral_limit=1.5,
        nondegeneracy_margin=1.4,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def scm_train_config(seed: int = 0, epochs: int = 100, **overrides) -> TrainConfig:
    kwargs = dict(
        epochs=epochs,
        batch_size=256,
        learning_rate=1e-3,
        seed=seed,
        eval_every=10,
        sparsity_warmup_epochs=max(epochs * 2 // 5, 1),
        graph_refit_epochs=60,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def mnist_model_config(image_shapes=((28, 28, 3), (28, 28, 1)),
                       **overrides) -> ModelConfig:
    """Conv-encoder model for the paired image dataset."""
    obs_dims = tuple(int(s[0] * s[1] * s[2]) for s in image_shapes)
    kwargs = dict(
        latent_dims=(2, 2),
        exo_dims=(6, 6),
        obs_dims=obs_dims,
        encoder_type="conv",
        image_channels=tuple(s[2] for s in image_shapes),
        hidden_width=256,
        flow_type="affine",
        alpha_recon=1.0,
        alpha_ind=2.0,
        alpha_sparsity=0.2,
        cross_weight=5.0,
        acyclicity_weight=20.0,
        adjacency_init_scale=-2.0,
        conditioner_spectral_limit=1.5,
        nondegeneracy_margin=1.4,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def mnist_train_config(seed: int = 0, epochs: int = 40, **overrides) -> TrainConfig:
    kwargs = dict(
        epochs=epochs,
        batch_size=128,
        learning_rate=1e-3,
        seed=seed,
        eval_every=10,
        sparsity_warmup_epochs=max(epochs * 2 // 5, 1),
        graph_refit_epochs=30,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
