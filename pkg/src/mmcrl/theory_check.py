"""Numerical and combinatorial verification of the identifiability conditions.

Two families of checks run against a ground-truth structural model:

* invertibility / linear-independence probes on the mixing and cross-modal
  maps (full column rank of numerical Jacobians at random points), and
* the structural-sparsity inequality on sub-matrices of the latent
  partial-derivative matrix G(z, eps), quantified over nonempty upstream /
  downstream subsets and random invertible block-diagonal mixings T.

The quantification over *all* invertible block-diagonal T is not checkable;
identity plus Monte-Carlo samples makes this a falsification test, not a
proof.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np

from .scm_datagen import LatentGraph, StructuralModel
from .seeds import stream

__all__ = [
    "SupportMatrix",
    "UpDownSets",
    "overlap_rows",
    "compute_d_star",
    "check_sparsity_inequality",
    "up_down_sets",
    "latent_partial_derivatives",
    "check_condition1",
    "check_condition2",
]

MAX_EXACT_COLS = 8
MAX_EXACT_OVERLAP_ROWS = 16
MAX_EXACT_TOTAL_LATENTS = 12


class SizeLimitError(ValueError):
    """Exact subset enumeration refused: input too large."""


@dataclass
class SupportMatrix:
    """A real matrix with a tolerance deciding support membership."""

    entries: np.ndarray
    zero_tol: float = 1e-6

    def __post_init__(self):
        self.entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if not np.isfinite(self.entries).all():
            raise ValueError("entries must be finite")
        if self.zero_tol <= 0:
            raise ValueError("zero_tol must be > 0")

    @property
    def support(self) -> np.ndarray:
        return np.abs(self.entries) > self.zero_tol

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass
class UpDownSets:
    """Per-modality upstream (cross-modal parents) / downstream (cross-modal
    children) latent index sets."""

    upstream: list[set[int]]
    downstream: list[set[int]]


def up_down_sets(graph: LatentGraph) -> UpDownSets:
    m_of = graph.modality_of
    n_mod = graph.num_modalities
    up = [set() for _ in range(n_mod)]
    down = [set() for _ in range(n_mod)]
    rows, cols = np.nonzero(graph.adjacency)
    for child, parent in zip(rows, cols):
        if m_of[child] != m_of[parent]:
            up[m_of[parent]].add(int(parent))
            down[m_of[child]].add(int(child))
    return UpDownSets(upstream=up, downstream=down)


def overlap_rows(a: SupportMatrix) -> SupportMatrix:
    """Sub-matrix of rows with more than one entry above the tolerance."""
    keep = a.support.sum(axis=1) > 1
    return SupportMatrix(a.entries[keep].reshape(int(keep.sum()), a.shape[1]),
                         zero_tol=a.zero_tol)


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    tol = max(mat.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    return int((sv > tol).sum())


def compute_d_star(a: SupportMatrix, mode: str = "exact",
                   num_samples: int = 2000, rng_seed: int = 0) -> int:
    """Largest rank-deficient row-subset size within Overlap(a).

    Exact mode enumerates every subset of Overlap(a)'s rows and needs
    small inputs; sampled mode draws random subsets and returns a lower
    bound.
    """
    ov = overlap_rows(a)
    n_rows, d2 = ov.shape
    if n_rows == 0:
        return 0
    if mode == "exact":
        if d2 > MAX_EXACT_COLS:
            raise SizeLimitError(
                f"exact mode supports at most {MAX_EXACT_COLS} columns (got {d2})")
        if n_rows > MAX_EXACT_OVERLAP_ROWS:
            raise SizeLimitError(
                f"exact mode supports at most {MAX_EXACT_OVERLAP_ROWS} overlap "
                f"rows (got {n_rows})")
        best = 0
        for size in range(n_rows, 0, -1):
            for subset in itertools.combinations(range(n_rows), size):
                if _rank(ov.entries[list(subset)]) < d2:
                    best = size
                    break
            if best:
                break
        return best
    if mode == "sampled":
        rng = stream(rng_seed, "d-star-sampled")
        best = 0
        if _rank(ov.entries) < d2:
            return n_rows
        for _ in range(num_samples):
            size = int(rng.integers(1, n_rows + 1))
            if size <= best:
                continue
            subset = rng.choice(n_rows, size=size, replace=False)
            if _rank(ov.entries[subset]) < d2:
                best = size
        return best
    raise ValueError(f"unknown mode {mode!r}")


def check_sparsity_inequality(a: SupportMatrix, mode: str = "exact") -> dict:
    """Evaluate |union of column supports| - d* > max column support size."""
    supp = a.support
    lhs = int(supp.any(axis=1).sum()) - compute_d_star(a, mode=mode)
    rhs = int(supp.sum(axis=0).max()) if a.shape[1] else 0
    return {"holds": lhs > rhs, "lhs": lhs, "rhs": rhs}


def latent_partial_derivatives(model: StructuralModel, z: np.ndarray,
                               eps: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference matrix G with G[i, j] = d g_{z_i} / d z_j at (z, eps).

    Derivatives are of each mechanism with respect to its direct parent
    values; non-parent entries are structurally zero.
    """
    d = model.graph.num_latents
    g = np.zeros((d, d))
    for i in range(d):
        parents = model.graph.parents(i)
        for j in parents:
            k = int(np.flatnonzero(parents == j)[0])
            hi = z[parents].copy(); hi[k] += h
            lo = z[parents].copy(); lo[k] -= h
            g[i, j] = float((model.mechanisms[i].mean_part(hi[None, :])
                             - model.mechanisms[i].mean_part(lo[None, :]))[0]) / (2 * h)
    return g


@dataclass
class ConditionReport:
    """Outcome of one condition check for one modality."""

    modality: int
    condition: str
    holds: bool
    margin: float | None = None
    min_singular_value: float | None = None
    points_tested: int = 0
    notes: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _sample_points(model: StructuralModel, num_points: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = model.graph.num_latents
    d_eta = model.spec.total_exo
    eps = rng.standard_normal((num_points, d))
    eta = rng.standard_normal((num_points, d_eta))
    z = model.latents_from_noise(eps)
    return z, eps, eta


def check_condition1(model: StructuralModel, graph: LatentGraph,
                     num_points: int = 64, rng_seed: int = 0) -> list[ConditionReport]:
    """Invertibility (A1) and cross-modal linear-independence (A2) probes.

    A1: the Jacobian of (z^(m), eta^(m)) -> x^(m) has full column rank at
    every sampled point. A2: the Jacobian of z^(m) -> x^(-m), propagated
    through the latent mechanisms and the other modalities' mixing maps,
    has full column rank at every sampled point.
    """
    spec = model.spec
    rng = stream(rng_seed, "condition1")
    z_pts, eps_pts, eta_pts = _sample_points(model, num_points, rng)
    reports = []
    for m in range(spec.num_modalities):
        min_sv_a1 = np.inf
        for z, eta in zip(z_pts, eta_pts):
            jac = model.mixing_jacobian(m, z[spec.latent_slice(m)],
                                        eta[spec.exo_slice(m)])
            sv = np.linalg.svd(jac, compute_uv=False)
            min_sv_a1 = min(min_sv_a1, sv.min())
        holds_a1 = min_sv_a1 > _rank_tol_for(spec, m)
        reports.append(ConditionReport(
            modality=m, condition="A1", holds=bool(holds_a1),
            min_singular_value=float(min_sv_a1), points_tested=num_points))

        min_sv_a2 = np.inf
        for z, eps, eta in zip(z_pts, eps_pts, eta_pts):
            jac = _cross_modal_jacobian(model, m, z, eps, eta)
            sv = np.linalg.svd(jac, compute_uv=False)
            min_sv_a2 = min(min_sv_a2, sv.min() if sv.size else 0.0)
        holds_a2 = min_sv_a2 > _rank_tol_for(spec, m)
        reports.append(ConditionReport(
            modality=m, condition="A2", holds=bool(holds_a2),
            min_singular_value=float(min_sv_a2), points_tested=num_points))
    return reports


def _rank_tol_for(spec, m: int) -> float:
    return max(spec.obs_dims) * np.finfo(float).eps * 100


def _cross_modal_jacobian(model: StructuralModel, m: int, z: np.ndarray,
                          eps: np.ndarray, eta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d x^(-m) / d z^(m): perturb modality-m latents, recompute descendants
    in other modalities (their noise held fixed), then apply their mixers."""
    spec = model.spec
    own = set(np.flatnonzero(model.graph.modality_of == m).tolist())
    order = model.graph.topological_order()

    def other_obs(z_m_values: np.ndarray) -> np.ndarray:
        z_full = z.copy()
        z_full[list(sorted(own))] = z_m_values
        for i in order:
            if i in own:
                continue
            pa = model.mechanisms[i].parents
            z_full[i] = float(model.mechanisms[i].mean_part(z_full[pa][None, :])[0]) + eps[i]
        outs = []
        for n_mod in range(spec.num_modalities):
            if n_mod == m:
                continue
            block = np.concatenate([z_full[spec.latent_slice(n_mod)],
                                    eta[spec.exo_slice(n_mod)]])
            outs.append(model.mixers[n_mod](block[None, :])[0])
        return np.concatenate(outs) if outs else np.zeros(0)

    base = z[list(sorted(own))]
    cols = []
    for j in range(base.size):
        hi = base.copy(); hi[j] += h
        lo = base.copy(); lo[j] -= h
        cols.append((other_obs(hi) - other_obs(lo)) / (2 * h))
    return np.stack(cols, axis=1) if cols else np.zeros((0, 0))


def _random_block_diag(sizes: list[int], rng: np.random.Generator) -> np.ndarray:
    """Invertible block-diagonal matrix; singular draws are resampled."""
    total = sum(sizes)
    t = np.zeros((total, total))
    row = 0
    for s in sizes:
        for _ in range(100):
            block = rng.standard_normal((s, s))
            if abs(np.linalg.det(block)) > 1e-6:
                break
        t[row:row + s, row:row + s] = block
        row += s
    return t


def check_condition2(model: StructuralModel, graph: LatentGraph,
                     num_points: int = 16, num_T_samples: int = 8,
                     rng_seed: int = 0, zero_tol: float = 1e-6) -> list[ConditionReport]:
    """Structural-sparsity inequality over upstream/downstream subsets.

    For each modality m, each latent component i of m and each nonempty
    subset U of the other upstream (resp. downstream) components, the
    column (resp. row) sub-matrix of G indexed by U + {i}, mixed by T,
    must satisfy: |union of supports| - d* > support size of component i's
    own cross-modal column (resp. row). Tested at ``num_points`` sampled
    points with T = identity plus ``num_T_samples`` random invertible
    block-diagonal matrices.
    """
    if graph.num_latents > MAX_EXACT_TOTAL_LATENTS:
        raise SizeLimitError(
            f"exact mode supports at most {MAX_EXACT_TOTAL_LATENTS} latents")
    spec = model.spec
    rng = stream(rng_seed, "condition2")
    z_pts, eps_pts, _ = _sample_points(model, num_points, rng)
    uds = up_down_sets(graph)
    m_of = graph.modality_of
    n_mod = graph.num_modalities

    gs = [latent_partial_derivatives(model, z, eps)
          for z, eps in zip(z_pts, eps_pts)]

    reports = []
    for m in range(n_mod):
        own = sorted(np.flatnonzero(m_of == m).tolist())
        others = sorted(set(range(graph.num_latents)) - set(own))
        other_sizes = [int((m_of == n).sum()) for n in range(n_mod) if n != m]
        up = sorted(uds.upstream[m])
        down = sorted(uds.downstream[m])
        if not up and not down:
            reports.append(ConditionReport(
                modality=m, condition="condition2", holds=True, margin=None,
                points_tested=num_points, notes="no cross-modal influence"))
            continue

        ts = [np.eye(len(others))]
        ts += [_random_block_diag(other_sizes, rng) for _ in range(num_T_samples)]

        worst = np.inf
        tests = 0
        for g in gs:
            g_cols = g[np.ix_(others, own)]       # cross-modal influence of m
            g_rows = g[np.ix_(own, others)]       # cross-modal influence on m
            for t in ts:
                t_inv = np.linalg.inv(t)
                mixed_cols = t @ g_cols
                mixed_rows = g_rows @ t_inv
                for local_i, i in enumerate(own):
                    up_pool = [own.index(u) for u in up if u != i]
                    for r in range(1, len(up_pool) + 1):
                        for u_set in itertools.combinations(up_pool, r):
                            cols = sorted(set(u_set) | {local_i})
                            a = SupportMatrix(mixed_cols[:, cols], zero_tol=zero_tol)
                            lhs = int(a.support.any(axis=1).sum()) - compute_d_star(a)
                            rhs = int((np.abs(g_cols[:, local_i]) > zero_tol).sum())
                            worst = min(worst, lhs - rhs)
                            tests += 1
                    down_pool = [own.index(dn) for dn in down if dn != i]
                    for r in range(1, len(down_pool) + 1):
                        for d_set in itertools.combinations(down_pool, r):
                            rows = sorted(set(d_set) | {local_i})
                            a = SupportMatrix(mixed_rows[rows, :].T, zero_tol=zero_tol)
                            lhs = int(a.support.any(axis=1).sum()) - compute_d_star(a)
                            rhs = int((np.abs(g_rows[local_i, :]) > zero_tol).sum())
                            worst = min(worst, lhs - rhs)
                            tests += 1
        if tests == 0:
            # cross-modal edges exist but every subset pool is empty: the
            # inequality is never exercised, so nothing can falsify it
            reports.append(ConditionReport(
                modality=m, condition="condition2", holds=True, margin=None,
                points_tested=num_points,
                notes="no testable subset (single cross-modal component)"))
            continue
        reports.append(ConditionReport(
            modality=m, condition="condition2", holds=bool(worst > 0),
            margin=float(worst), points_tested=num_points,
            notes=f"{tests} subset tests, {len(ts)} mixing matrices"))
    return reports
