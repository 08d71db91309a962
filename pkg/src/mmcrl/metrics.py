"""Disentanglement and graph-recovery metrics: MCC, R2, SHD."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

__all__ = ["mcc", "mcc_per_modality", "r2", "shd", "MetricsReport"]


def _abs_correlation(z_true: np.ndarray, z_est: np.ndarray,
                     rank_based: bool = False) -> np.ndarray:
    """|corr| between every (true, estimated) column pair; constant columns
    contribute zero."""
    zt = np.asarray(z_true, dtype=float)
    ze = np.asarray(z_est, dtype=float)
    if rank_based:
        zt = rankdata(zt, axis=0)
        ze = rankdata(ze, axis=0)
    zt = zt - zt.mean(axis=0)
    ze = ze - ze.mean(axis=0)
    st = zt.std(axis=0)
    se = ze.std(axis=0)
    st_safe = np.where(st > 0, st, 1.0)
    se_safe = np.where(se > 0, se, 1.0)
    corr = (zt / st_safe).T @ (ze / se_safe) / zt.shape[0]
    corr[st == 0, :] = 0.0
    corr[:, se == 0] = 0.0
    return np.abs(corr)


def mcc(z_true: np.ndarray, z_est: np.ndarray,
        rank_based: bool = False) -> tuple[float, np.ndarray]:
    """Mean correlation coefficient under the optimal column assignment.

    Solves a linear sum assignment over the absolute correlation matrix and
    returns (score, perm) where column perm[k] of ``z_est`` is matched to
    column k of ``z_true``.
    """
    z_true = np.asarray(z_true)
    z_est = np.asarray(z_est)
    if z_true.ndim != 2 or z_est.ndim != 2:
        raise ValueError("inputs must be 2-D (samples x latents)")
    if z_true.shape[1] != z_est.shape[1]:
        raise ValueError("column counts differ")
    if z_true.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    corr = _abs_correlation(z_true, z_est, rank_based=rank_based)
    rows, cols = linear_sum_assignment(-corr)
    perm = np.empty(z_true.shape[1], dtype=int)
    perm[rows] = cols
    return float(corr[rows, cols].mean()), perm


def mcc_per_modality(z_true: np.ndarray, z_est: np.ndarray,
                     modality_of: np.ndarray,
                     rank_based: bool = False) -> tuple[float, np.ndarray]:
    """MCC with the assignment restricted to stay within each modality block.

    Returns the mean matched |correlation| over all components and the
    block-respecting permutation (est column matched to each true column).
    """
    modality_of = np.asarray(modality_of, dtype=int)
    perm = np.empty(z_true.shape[1], dtype=int)
    scores = []
    for m in np.unique(modality_of):
        idx = np.flatnonzero(modality_of == m)
        sub_score, sub_perm = mcc(z_true[:, idx], z_est[:, idx], rank_based)
        perm[idx] = idx[sub_perm]
        scores.append(sub_score * idx.size)
    return float(sum(scores) / z_true.shape[1]), perm


def r2(z_true: np.ndarray, z_est: np.ndarray, train_fraction: float = 0.5,
       split_seed: int = 0) -> float:
    """Held-out variance explained by the best linear map from z_est to z_true.

    Fits least squares (with intercept) on a train split and averages
    1 - SSE/SST over true dimensions on the held-out split.
    """
    z_true = np.asarray(z_true, dtype=float)
    z_est = np.asarray(z_est, dtype=float)
    if z_true.shape[0] != z_est.shape[0]:
        raise ValueError("row counts differ")
    n = z_true.shape[0]
    order = np.random.Generator(np.random.Philox(split_seed)).permutation(n)
    n_train = max(int(n * train_fraction), z_est.shape[1] + 2)
    tr, ho = order[:n_train], order[n_train:]
    if ho.size < 2:
        tr = ho = np.arange(n)
    x_tr = np.column_stack([z_est[tr], np.ones(tr.size)])
    x_ho = np.column_stack([z_est[ho], np.ones(ho.size)])
    beta, *_ = np.linalg.lstsq(x_tr, z_true[tr], rcond=None)
    resid = z_true[ho] - x_ho @ beta
    sse = (resid ** 2).sum(axis=0)
    sst = ((z_true[ho] - z_true[ho].mean(axis=0)) ** 2).sum(axis=0)
    sst = np.where(sst > 0, sst, 1.0)
    return float(np.mean(1.0 - sse / sst))


def _skeleton_pairs(adj: np.ndarray) -> set[tuple[int, int]]:
    adj = np.asarray(adj, dtype=bool)
    sym = adj | adj.T
    rows, cols = np.nonzero(np.triu(sym, k=1))
    return {(int(i), int(j)) for i, j in zip(rows, cols)}


def shd(g_true: np.ndarray, g_est: np.ndarray, directed: bool = False) -> int:
    """Structural Hamming distance.

    Skeleton mode (default) counts the symmetric difference of undirected
    edge sets; directed mode counts additions, deletions and reversals
    (a reversal costing one).
    """
    g_true = np.asarray(g_true, dtype=bool)
    g_est = np.asarray(g_est, dtype=bool)
    if g_true.shape != g_est.shape:
        raise ValueError("graphs must have the same node set")
    if not directed:
        return len(_skeleton_pairs(g_true) ^ _skeleton_pairs(g_est))
    count = 0
    d = g_true.shape[0]
    for i in range(d):
        for j in range(i + 1, d):
            true_pair = (bool(g_true[i, j]), bool(g_true[j, i]))
            est_pair = (bool(g_est[i, j]), bool(g_est[j, i]))
            if true_pair != est_pair:
                count += 1
    return count


@dataclass
class MetricsReport:
    """Serializable evaluation summary for one trained run."""

    mcc: float | None = None
    mcc_per_modality: float | None = None
    mcc_permutation: list[int] | None = None
    r2: float | None = None
    shd: int | None = None
    seed: int | None = None
    dataset_id: str | None = None
    checkpoint_id: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))
