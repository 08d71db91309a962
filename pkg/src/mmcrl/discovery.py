"""Constraint-based causal skeleton discovery over recovered latents.

Classic PC with Fisher-z partial-correlation tests on continuous data.
Edge removals are committed level-by-level against a fixed adjacency
snapshot (PC-stable) and iteration follows lexicographic node order, so
the output is deterministic given the column order and independent of
row order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

__all__ = ["pc_skeleton", "pc_orient", "PCSkeleton", "OrientedGraph",
           "fisher_z_test", "edges_json", "to_dot"]


@dataclass
class PCSkeleton:
    adjacency: np.ndarray                      # boolean, symmetric
    separating_sets: dict[tuple[int, int], tuple[int, ...]]
    test_failures: list[dict] = field(default_factory=list)
    n_tests: int = 0

    def edge_list(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]


@dataclass
class OrientedGraph:
    """Partially directed graph: directed[i, j] means i -> j."""

    directed: np.ndarray
    undirected: np.ndarray

    def edge_list(self) -> list[tuple[int, int, str]]:
        out = []
        rows, cols = np.nonzero(self.directed)
        out += [(int(i), int(j), "->") for i, j in zip(rows, cols)]
        rows, cols = np.nonzero(np.triu(self.undirected, k=1))
        out += [(int(i), int(j), "--") for i, j in zip(rows, cols)]
        return sorted(out)


def fisher_z_test(corr: np.ndarray, n: int, i: int, j: int,
                  cond: tuple[int, ...]) -> tuple[float, bool]:
    """p-value of partial correlation rho_{ij.cond}; singular conditioning
    sub-matrices are flagged by returning (nan, False)."""
    idx = [i, j, *cond]
    sub = corr[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        return float("nan"), True
    denom = prec[0, 0] * prec[1, 1]
    if denom <= 0:
        return float("nan"), True
    r = -prec[0, 1] / math.sqrt(denom)
    r = max(min(r, 1.0 - 1e-12), -1.0 + 1e-12)
    dof = n - len(cond) - 3
    if dof <= 0:
        return float("nan"), True
    stat = math.sqrt(dof) * abs(0.5 * math.log((1 + r) / (1 - r)))
    return 2.0 * (1.0 - norm.cdf(stat)), False


def pc_skeleton(data: np.ndarray, alpha: float = 0.01,
                max_cond_set: int = 3) -> PCSkeleton:
    """Skeleton phase of PC on an (n x p) matrix of continuous columns."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be 2-D")
    n, p = data.shape
    if n <= p + max_cond_set + 3:
        raise ValueError("need n > p + max_cond_set + 3 samples")
    std = data.std(axis=0)
    standardized = (data - data.mean(axis=0)) / np.where(std > 0, std, 1.0)
    corr = np.corrcoef(standardized, rowvar=False)
    corr = np.atleast_2d(corr)

    adj = np.ones((p, p), dtype=bool) & ~np.eye(p, dtype=bool)
    sepsets: dict[tuple[int, int], tuple[int, ...]] = {}
    failures: list[dict] = []
    n_tests = 0

    for level in range(0, max_cond_set + 1):
        snapshot = adj.copy()
        to_remove: list[tuple[int, int, tuple[int, ...]]] = []
        for i in range(p):
            for j in range(i + 1, p):
                if not adj[i, j]:
                    continue
                found = False
                for anchor, other in ((i, j), (j, i)):
                    neighbors = sorted(np.flatnonzero(snapshot[anchor]).tolist())
                    candidates = [k for k in neighbors if k != other]
                    if len(candidates) < level:
                        continue
                    for cond in itertools.combinations(candidates, level):
                        p_value, failed = fisher_z_test(corr, n, i, j, cond)
                        n_tests += 1
                        if failed:
                            failures.append({"i": i, "j": j, "cond": list(cond)})
                            to_remove.append((i, j, cond))
                            found = True
                            break
                        if p_value > alpha:
                            to_remove.append((i, j, cond))
                            found = True
                            break
                    if found:
                        break
                if found:
                    continue
        for i, j, cond in to_remove:
            adj[i, j] = adj[j, i] = False
            sepsets[(i, j)] = sepsets[(j, i)] = tuple(cond)
        if not adj.any():
            break

    return PCSkeleton(adjacency=adj, separating_sets=sepsets,
                      test_failures=failures, n_tests=n_tests)


def pc_orient(skeleton: PCSkeleton) -> OrientedGraph:
    """Collider orientation from separating sets followed by Meek rules."""
    adj = skeleton.adjacency.copy()
    p = adj.shape[0]
    directed = np.zeros((p, p), dtype=bool)

    # v-structures: i - k - j with i, j nonadjacent and k outside sepset(i, j)
    for k in range(p):
        neighbors = sorted(np.flatnonzero(adj[k]).tolist())
        for i, j in itertools.combinations(neighbors, 2):
            if adj[i, j]:
                continue
            sep = skeleton.separating_sets.get((i, j), ())
            if k not in sep:
                directed[i, k] = True
                directed[j, k] = True

    # conflicting colliders (a->b and b->a) fall back to undirected
    conflict = directed & directed.T
    directed &= ~conflict

    undirected = adj & ~(directed | directed.T)

    changed = True
    while changed:
        changed = False
        for a in range(p):
            for b in range(p):
                if not undirected[a, b]:
                    continue
                # Meek 1: c -> a - b with c, b nonadjacent gives a -> b
                rule1 = any(directed[c, a] and not adj[c, b] and c != b
                            for c in range(p))
                # Meek 2: a -> c -> b with a - b gives a -> b
                rule2 = any(directed[a, c] and directed[c, b] for c in range(p))
                # Meek 3: a - c -> b and a - d -> b, c/d nonadjacent
                rule3 = False
                for c, d in itertools.combinations(range(p), 2):
                    if (undirected[a, c] and undirected[a, d] and not adj[c, d]
                            and directed[c, b] and directed[d, b]):
                        rule3 = True
                        break
                if rule1 or rule2 or rule3:
                    directed[a, b] = True
                    undirected[a, b] = undirected[b, a] = False
                    changed = True
    return OrientedGraph(directed=directed, undirected=undirected)


def edges_json(graph: OrientedGraph, names: list[str] | None = None) -> str:
    p = graph.directed.shape[0]
    names = names or [f"v{i}" for i in range(p)]
    edges = [{"source": names[i], "target": names[j], "mark": mark}
             for i, j, mark in graph.edge_list()]
    return json.dumps({"nodes": names, "edges": edges}, indent=2)


def to_dot(graph: OrientedGraph, names: list[str] | None = None) -> str:
    p = graph.directed.shape[0]
    names = names or [f"v{i}" for i in range(p)]
    lines = ["digraph pc {"]
    for name in names:
        lines.append(f'  "{name}";')
    for i, j, mark in graph.edge_list():
        attr = " [dir=none]" if mark == "--" else ""
        lines.append(f'  "{names[i]}" -> "{names[j]}"{attr};')
    lines.append("}")
    return "\n".join(lines)
