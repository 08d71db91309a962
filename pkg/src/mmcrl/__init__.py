"""Multimodal causal representation learning toolkit.

Synthetic multimodal SCM generation, identifiability-condition checks,
flow-based latent estimation under a learnable adjacency, disentanglement
and graph-recovery metrics, and PC discovery over recovered latents.
"""

from .scm_datagen import (GeneratorSpec, LatentGraph, MultimodalDataset,
                          StructuralModel, case_preset, generate_dataset,
                          sample_latent_graph, sample_structural_model)
from .theory_check import (SupportMatrix, check_condition1, check_condition2,
                           check_sparsity_inequality, compute_d_star,
                           overlap_rows)
from .metrics import MetricsReport, mcc, mcc_per_modality, r2, shd
from .model import ModelConfig, MultimodalModel
from .trainer import TrainConfig, binarize_adjacency, load_checkpoint, train
from .evaluate import evaluate_model, recovered_latents
from .discovery import pc_orient, pc_skeleton
from .mnist_pipeline import build_variant_mnist

__version__ = "0.1.0"

__all__ = [
    "GeneratorSpec", "LatentGraph", "MultimodalDataset", "StructuralModel",
    "case_preset", "generate_dataset", "sample_latent_graph",
    "sample_structural_model",
    "SupportMatrix", "check_condition1", "check_condition2",
    "check_sparsity_inequality", "compute_d_star", "overlap_rows",
    "MetricsReport", "mcc", "mcc_per_modality", "r2", "shd",
    "ModelConfig", "MultimodalModel",
    "TrainConfig", "binarize_adjacency", "load_checkpoint", "train",
    "evaluate_model", "recovered_latents",
    "pc_orient", "pc_skeleton",
    "build_variant_mnist",
]
