"""Turn a trained model plus a dataset into a MetricsReport.

MCC/R2 are reported when the dataset carries ground-truth latents; graph
recovery (SHD of the thresholded inter-modal skeleton, aligned by the
block-restricted MCC permutation) when it carries the true graph.
"""

from __future__ import annotations

import numpy as np
import torch

from .metrics import MetricsReport, mcc, mcc_per_modality, r2, shd
from .model import MultimodalModel
from .scm_datagen import MultimodalDataset
from .trainer import binarize_adjacency

__all__ = ["evaluate_model", "recovered_latents", "inter_modal_mask"]


def recovered_latents(model: MultimodalModel, dataset: MultimodalDataset,
                      batch_size: int = 4096) -> np.ndarray:
    """Deterministic latent estimates for every sample (eval mode)."""
    model.eval()
    chunks = []
    n = dataset.n_samples
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            xs = [torch.from_numpy(np.ascontiguousarray(
                x[lo:lo + batch_size], dtype=np.float32))
                for x in dataset.observations]
            chunks.append(model.latents(xs).numpy())
    return np.concatenate(chunks, axis=0).astype(np.float64)


def inter_modal_mask(modality_of: np.ndarray) -> np.ndarray:
    modality_of = np.asarray(modality_of)
    return modality_of[:, None] != modality_of[None, :]


def evaluate_model(model: MultimodalModel, dataset: MultimodalDataset,
                   threshold: float | None = None, seed: int | None = None,
                   dataset_id: str | None = None,
                   checkpoint_id: str | None = None) -> MetricsReport:
    z_est = recovered_latents(model, dataset)
    modality_of = np.concatenate([
        np.full(d, m) for m, d in enumerate(model.config.latent_dims)])
    report = MetricsReport(seed=seed, dataset_id=dataset_id,
                           checkpoint_id=checkpoint_id)

    adj_est = binarize_adjacency(model, threshold)
    report.extra["gates"] = np.round(
        model.adjacency.gates().detach().numpy(), 4).tolist()
    report.extra["adjacency_est"] = adj_est.astype(int).tolist()

    block_perm = None
    if dataset.latents is not None:
        z_true = np.asarray(dataset.latents, dtype=np.float64)
        if z_true.shape[1] == z_est.shape[1]:
            score, perm = mcc(z_true, z_est)
            block_score, block_perm = mcc_per_modality(z_true, z_est, modality_of)
            report.mcc = round(score, 6)
            report.mcc_per_modality = round(block_score, 6)
            report.mcc_permutation = perm.tolist()
            report.r2 = round(r2(z_true, z_est), 6)

    if dataset.graph is not None and block_perm is not None:
        aligned = adj_est[np.ix_(block_perm, block_perm)]
        mask = inter_modal_mask(dataset.graph.modality_of)
        report.shd = shd(dataset.graph.adjacency & mask, aligned & mask)
        report.extra["shd_full_skeleton"] = shd(dataset.graph.adjacency, aligned)
        report.extra["adjacency_true"] = dataset.graph.adjacency.astype(int).tolist()
        report.extra["adjacency_est_aligned"] = aligned.astype(int).tolist()
    return report
