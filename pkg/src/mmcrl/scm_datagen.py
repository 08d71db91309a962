"""Synthetic multimodal SCM datasets with controlled inter-modal sparsity.

A dataset is produced in three steps: sample a latent DAG whose inter-modal
edge count is pinned by a sparsity ratio, sample a structural model (one
small network per latent component plus one mixing MLP per modality), then
push i.i.d. Gaussian noise through both. All randomness is drawn from named
streams keyed on the spec seed, so equal (spec, seed) gives byte-identical
output regardless of host parallelism.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np

from .seeds import stream

__all__ = [
    "GeneratorSpec",
    "LatentGraph",
    "StructuralModel",
    "MultimodalDataset",
    "sample_latent_graph",
    "sample_structural_model",
    "generate_dataset",
    "case_preset",
    "ABLATION_RATIOS",
]

_SV_FLOOR = 1e-2          # minimum singular value for sampled weight matrices
_MAX_RESAMPLE = 50
_PROBE_POINTS = 100       # injectivity probe sample count
_PROBE_TOL = 1e-6


class ModelSamplingError(RuntimeError):
    """Raised when weight resampling cannot satisfy the full-rank floor."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Complete description of one synthetic multimodal experiment."""

    num_modalities: int
    latent_dims: tuple[int, ...]
    exo_dims: tuple[int, ...]
    obs_dims: tuple[int, ...]
    sparsity_ratio: float
    n_samples: int = 10000
    seed: int = 0
    mixing_depth: int = 3
    leaky_slope: float = 0.2
    intra_edge_prob: float = 0.5
    signal_std: float = 1.5   # parent-effect scale relative to unit noise
    noise_law: str = "gaussian"
    enforce_connectivity: bool = True

    def __post_init__(self):
        object.__setattr__(self, "latent_dims", tuple(int(d) for d in self.latent_dims))
        object.__setattr__(self, "exo_dims", tuple(int(d) for d in self.exo_dims))
        object.__setattr__(self, "obs_dims", tuple(int(d) for d in self.obs_dims))
        self.validate()

    def validate(self):
        m = self.num_modalities
        if m < 1:
            raise ValueError("num_modalities must be >= 1")
        for name, dims in (("latent_dims", self.latent_dims),
                           ("exo_dims", self.exo_dims),
                           ("obs_dims", self.obs_dims)):
            if len(dims) != m:
                raise ValueError(f"{name} must have one entry per modality")
            if any(d < 1 for d in dims):
                raise ValueError(f"{name} entries must be >= 1")
        for i in range(m):
            if self.obs_dims[i] < self.latent_dims[i] + self.exo_dims[i]:
                raise ValueError(
                    f"modality {i}: obs_dims must be >= latent_dims + exo_dims "
                    "(information preservation)")
        if not 0.0 <= self.sparsity_ratio <= 1.0:
            raise ValueError("sparsity_ratio must be in [0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.mixing_depth < 1:
            raise ValueError("mixing_depth must be >= 1")
        if not 0.0 < self.leaky_slope <= 1.0:
            raise ValueError("leaky_slope must be in (0, 1]")
        if not 0.0 <= self.intra_edge_prob <= 1.0:
            raise ValueError("intra_edge_prob must be in [0, 1]")
        if self.signal_std <= 0:
            raise ValueError("signal_std must be > 0")
        if self.noise_law != "gaussian":
            raise ValueError(f"unsupported noise law {self.noise_law!r}")

    @property
    def total_latents(self) -> int:
        return sum(self.latent_dims)

    @property
    def total_exo(self) -> int:
        return sum(self.exo_dims)

    def latent_slice(self, m: int) -> slice:
        start = sum(self.latent_dims[:m])
        return slice(start, start + self.latent_dims[m])

    def exo_slice(self, m: int) -> slice:
        start = sum(self.exo_dims[:m])
        return slice(start, start + self.exo_dims[m])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(**d)


@dataclass
class LatentGraph:
    """Directed acyclic adjacency over all latent components.

    ``adjacency[i, j] == True`` means z_j is a parent of z_i.
    """

    adjacency: np.ndarray
    modality_of: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=bool)
        self.modality_of = np.asarray(self.modality_of, dtype=int)
        self.validate()

    def validate(self):
        d = self.adjacency.shape[0]
        if self.adjacency.shape != (d, d):
            raise ValueError("adjacency must be square")
        if self.modality_of.shape != (d,):
            raise ValueError("modality_of must map every latent index")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency has a nonzero diagonal")
        if len(self.topological_order()) != d:
            raise ValueError("adjacency is cyclic")
        counts = np.bincount(self.modality_of, minlength=self.num_modalities)
        if (counts == 0).any():
            raise ValueError("every modality needs at least one latent")

    @property
    def num_latents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_modalities(self) -> int:
        return int(self.modality_of.max()) + 1

    def parents(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; shorter than d when the graph is cyclic."""
        d = self.adjacency.shape[0]
        indeg = self.adjacency.sum(axis=1).astype(int)
        ready = sorted(np.flatnonzero(indeg == 0).tolist())
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for child in np.flatnonzero(self.adjacency[:, i]):
                indeg[child] -= 1
                if indeg[child] == 0:
                    ready.append(int(child))
            ready.sort()
        return order

    def inter_modal_edges(self) -> list[tuple[int, int]]:
        """(child, parent) pairs whose endpoints live in different modalities."""
        rows, cols = np.nonzero(self.adjacency)
        return [(int(i), int(j)) for i, j in zip(rows, cols)
                if self.modality_of[i] != self.modality_of[j]]

    def latents_of(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.modality_of == m)

    def to_dict(self) -> dict:
        return {"adjacency": self.adjacency.astype(int).tolist(),
                "modality_of": self.modality_of.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentGraph":
        return cls(np.asarray(d["adjacency"], dtype=bool),
                   np.asarray(d["modality_of"], dtype=int))


def sample_latent_graph(spec: GeneratorSpec, rng_seed: int) -> LatentGraph:
    """Sample a latent DAG with exactly round((1 - ratio) * P) inter-modal edges.

    P counts unordered cross-modal latent pairs; each chosen pair is oriented
    by a single global random topological order, which guarantees acyclicity.
    With connectivity enforcement on, the subset is resampled until every
    modality touches at least one inter-modal edge.
    """
    rng = stream(rng_seed, "latent-graph")
    d = spec.total_latents
    modality_of = np.concatenate([np.full(spec.latent_dims[m], m)
                                  for m in range(spec.num_modalities)])
    order = rng.permutation(d)
    position = np.empty(d, dtype=int)
    position[order] = np.arange(d)

    adjacency = np.zeros((d, d), dtype=bool)

    def orient(a: int, b: int) -> tuple[int, int]:
        # child, parent with the parent earlier in the global order
        return (b, a) if position[a] < position[b] else (a, b)

    for m in range(spec.num_modalities):
        idx = np.flatnonzero(modality_of == m)
        for a, b in itertools.combinations(idx.tolist(), 2):
            if rng.random() < spec.intra_edge_prob:
                child, parent = orient(a, b)
                adjacency[child, parent] = True

    pairs = [(a, b) for a, b in itertools.combinations(range(d), 2)
             if modality_of[a] != modality_of[b]]
    p_total = len(pairs)
    n_edges = int(round((1.0 - spec.sparsity_ratio) * p_total))

    if spec.enforce_connectivity and p_total > 0:
        min_required = (spec.num_modalities + 1) // 2
        if n_edges < min_required:
            raise ValueError(
                f"cannot keep every modality connected with {n_edges} "
                f"inter-modal edges (need >= {min_required}); lower the "
                "sparsity ratio or disable connectivity enforcement")

    chosen: list[tuple[int, int]] = []
    if n_edges > 0:
        for _ in range(1000):
            pick = rng.choice(p_total, size=n_edges, replace=False)
            chosen = [pairs[k] for k in sorted(pick.tolist())]
            if not spec.enforce_connectivity:
                break
            touched = set()
            for a, b in chosen:
                touched.add(int(modality_of[a]))
                touched.add(int(modality_of[b]))
            if len(touched) == spec.num_modalities:
                break
        else:
            raise ValueError("could not satisfy modality connectivity; "
                             "inter-modal edge budget too small")
    for a, b in chosen:
        child, parent = orient(a, b)
        adjacency[child, parent] = True

    return LatentGraph(adjacency, modality_of)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def _sample_full_rank(rng: np.random.Generator, rows: int, cols: int,
                      scale: float) -> np.ndarray:
    """Gaussian matrix with min singular value above the floor; resampled."""
    for _ in range(_MAX_RESAMPLE):
        w = rng.normal(size=(rows, cols)) * scale
        if np.linalg.svd(w, compute_uv=False).min() >= _SV_FLOOR:
            return w
    raise ModelSamplingError(
        f"no full-rank {rows}x{cols} weight matrix after {_MAX_RESAMPLE} draws")


@dataclass
class _LatentMechanism:
    """z_i = w2 . tanh(W1 @ pa + b1) + b2 + eps_i (noise enters additively)."""

    parents: np.ndarray
    w1: np.ndarray | None = None
    b1: np.ndarray | None = None
    w2: np.ndarray | None = None
    b2: float = 0.0

    def mean_part(self, pa_values: np.ndarray) -> np.ndarray:
        if self.parents.size == 0:
            return np.zeros(pa_values.shape[0] if pa_values.ndim == 2 else ())
        h = np.tanh(pa_values @ self.w1.T + self.b1)
        return h @ self.w2 + self.b2


@dataclass
class _MixingMap:
    """Stack of weight layers with leaky-ReLU activations between them."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        h = inputs
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < len(self.weights) - 1:
                h = _leaky(h, self.slope)
        return h


@dataclass
class StructuralModel:
    """Sampled generating functions: per-latent mechanisms and mixing maps."""

    spec: GeneratorSpec
    graph: LatentGraph
    mechanisms: list[_LatentMechanism] = field(repr=False, default_factory=list)
    mixers: list[_MixingMap] = field(repr=False, default_factory=list)

    def latent_component(self, i: int, pa_values: np.ndarray,
                         eps_i: np.ndarray | float) -> np.ndarray:
        """Evaluate g_{z_i}(Pa(z_i), eps_i); pa_values columns follow parents(i)."""
        return self.mechanisms[i].mean_part(np.atleast_2d(pa_values)) + eps_i

    def latents_from_noise(self, eps: np.ndarray) -> np.ndarray:
        """Push noise through the causal mechanisms in topological order."""
        eps = np.atleast_2d(eps)
        z = np.zeros_like(eps)
        for i in self.graph.topological_order():
            pa = self.mechanisms[i].parents
            z[:, i] = self.mechanisms[i].mean_part(z[:, pa]) + eps[:, i]
        return z

    def mix(self, z: np.ndarray, eta: np.ndarray) -> list[np.ndarray]:
        """Apply every modality's mixing map to its (z, eta) block."""
        z = np.atleast_2d(z)
        eta = np.atleast_2d(eta)
        out = []
        for m in range(self.spec.num_modalities):
            block = np.concatenate(
                [z[:, self.spec.latent_slice(m)], eta[:, self.spec.exo_slice(m)]],
                axis=1)
            out.append(self.mixers[m](block))
        return out

    def mixing_jacobian(self, m: int, z_m: np.ndarray, eta_m: np.ndarray,
                        h: float = 1e-5) -> np.ndarray:
        """Central-difference Jacobian of (z^(m), eta^(m)) -> x^(m)."""
        point = np.concatenate([np.ravel(z_m), np.ravel(eta_m)])
        q = point.size
        cols = []
        for j in range(q):
            hi = point.copy(); hi[j] += h
            lo = point.copy(); lo[j] -= h
            cols.append((self.mixers[m](hi[None, :])[0]
                         - self.mixers[m](lo[None, :])[0]) / (2 * h))
        return np.stack(cols, axis=1)


def sample_structural_model(spec: GeneratorSpec, graph: LatentGraph,
                            rng_seed: int) -> StructuralModel:
    """Sample mechanisms and mixing maps, resampling until the maps pass
    the full-rank floor and the injectivity probe."""
    if graph.num_latents != spec.total_latents:
        raise ValueError("graph does not match spec dimensions")

    mechanisms = []
    hidden = 16
    for i in range(spec.total_latents):
        rng = stream(rng_seed, "mechanism", i)
        parents = graph.parents(i)
        mech = _LatentMechanism(parents=parents)
        if parents.size:
            p = parents.size
            mech.w1 = _sample_full_rank(rng, hidden, p, 1.0 / np.sqrt(p))
            mech.b1 = rng.normal(size=hidden) * 0.1
            w2 = rng.normal(size=hidden)
            # normalize the parent contribution to the configured signal scale
            probe = rng.normal(size=(256, p))
            amp = np.tanh(probe @ mech.w1.T + mech.b1) @ w2
            mech.w2 = w2 * (spec.signal_std / max(np.std(amp), 1e-3))
            mech.b2 = float(rng.normal() * 0.1)
        mechanisms.append(mech)

    mixers = []
    for m in range(spec.num_modalities):
        d_in = spec.latent_dims[m] + spec.exo_dims[m]
        d_out = spec.obs_dims[m]
        for attempt in range(_MAX_RESAMPLE):
            rng = stream(rng_seed, "mixing", m, attempt)
            weights, biases = [], []
            sizes = [d_in] + [d_out] * spec.mixing_depth
            for k in range(spec.mixing_depth):
                weights.append(_sample_full_rank(
                    rng, sizes[k + 1], sizes[k], 1.0 / np.sqrt(sizes[k])))
                biases.append(rng.normal(size=sizes[k + 1]) * 0.1)
            mixer = _MixingMap(weights, biases, spec.leaky_slope)
            if _injectivity_probe(mixer, d_in, stream(rng_seed, "probe", m, attempt)):
                mixers.append(mixer)
                break
        else:
            raise ModelSamplingError(
                f"modality {m}: mixing map failed the injectivity probe "
                f"{_MAX_RESAMPLE} times")

    return StructuralModel(spec=spec, graph=graph,
                           mechanisms=mechanisms, mixers=mixers)


def _injectivity_probe(mixer: _MixingMap, d_in: int,
                       rng: np.random.Generator) -> bool:
    """Numerical Jacobian has full column rank at every probe point."""
    points = rng.normal(size=(_PROBE_POINTS, d_in))
    h = 1e-5
    for point in points:
        cols = []
        for j in range(d_in):
            hi = point.copy(); hi[j] += h
            lo = point.copy(); lo[j] -= h
            cols.append((mixer(hi[None, :])[0] - mixer(lo[None, :])[0]) / (2 * h))
        jac = np.stack(cols, axis=1)
        if np.linalg.svd(jac, compute_uv=False).min() <= _PROBE_TOL:
            return False
    return True


@dataclass
class MultimodalDataset:
    """Per-modality observations plus optional ground truth."""

    observations: list[np.ndarray]
    latents: np.ndarray | None = None
    exogenous: np.ndarray | None = None
    noise: np.ndarray | None = None
    graph: LatentGraph | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = [np.asarray(x, dtype=np.float32) for x in self.observations]
        for name in ("latents", "exogenous", "noise"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float32))
        self.validate()

    def validate(self):
        if not self.observations:
            raise ValueError("dataset needs at least one modality")
        n = self.observations[0].shape[0]
        for x in self.observations:
            if x.ndim != 2 or x.shape[0] != n:
                raise ValueError("observation row counts disagree")
        for name in ("latents", "exogenous", "noise"):
            v = getattr(self, name)
            if v is not None and v.shape[0] != n:
                raise ValueError(f"{name} row count disagrees with observations")
        if self.graph is not None and self.latents is not None:
            if self.graph.num_latents != self.latents.shape[1]:
                raise ValueError("graph size does not match latents")

    @property
    def n_samples(self) -> int:
        return self.observations[0].shape[0]

    @property
    def num_modalities(self) -> int:
        return len(self.observations)


def generate_dataset(spec: GeneratorSpec, graph: LatentGraph,
                     model: StructuralModel, n: int | None = None) -> MultimodalDataset:
    """Draw n i.i.d. samples from the structural model."""
    n = spec.n_samples if n is None else int(n)
    if n < 1:
        raise ValueError("n must be >= 1")

    eps = np.stack([stream(spec.seed, "eps", i).standard_normal(n)
                    for i in range(spec.total_latents)], axis=1)
    eta = np.stack([stream(spec.seed, "eta", k).standard_normal(n)
                    for k in range(spec.total_exo)], axis=1)

    z = model.latents_from_noise(eps)
    xs = model.mix(z, eta)

    return MultimodalDataset(
        observations=[x.astype(np.float32) for x in xs],
        latents=z, exogenous=eta, noise=eps, graph=graph,
        provenance={"kind": "scm", "spec": spec.to_dict()})


ABLATION_RATIOS = (0.0, 0.25, 0.5, 0.75)

_CASE_TABLE = {
    1: dict(num_modalities=2, latent_dims=(2, 2), exo_dims=(1, 1), obs_dims=(15, 15)),
    2: dict(num_modalities=2, latent_dims=(3, 3), exo_dims=(1, 1), obs_dims=(20, 20)),
    3: dict(num_modalities=4, latent_dims=(2, 2, 2, 2), exo_dims=(1, 1, 1, 1),
            obs_dims=(15, 15, 15, 15)),
}


def case_preset(case_id, ratio: float | None = None, *, seed: int = 0,
                n_samples: int = 10000) -> GeneratorSpec:
    """Benchmark presets: numbered cases plus the sparsity-ratio ablation.

    ``case_preset(1|2|3)`` gives the multi-modality cases (default sparsity
    0.75); ``case_preset("ablation", r)`` fixes case-1 dimensions at ratio r.
    """
    if case_id == "ablation":
        if ratio is None:
            raise ValueError("ablation preset needs a sparsity ratio")
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("sparsity ratio must be in [0, 1]")
        dims = _CASE_TABLE[1]
        return GeneratorSpec(sparsity_ratio=float(ratio), seed=seed,
                             n_samples=n_samples, **dims)
    if case_id not in _CASE_TABLE:
        raise ValueError(f"unknown case id {case_id!r}")
    dims = _CASE_TABLE[case_id]
    sparsity = 0.75 if ratio is None else float(ratio)
    return GeneratorSpec(sparsity_ratio=sparsity, seed=seed,
                         n_samples=n_samples, **dims)
