"""Componentwise conditional flows mapping latents to independent noise.

Each latent coordinate gets its own strictly monotone invertible 1-D map,
conditioned on a context vector (the gated parents of that coordinate).
Two families are provided: a conditional affine map and a monotone
rational-quadratic spline with linear tails. Both initialize to the
identity so an untrained flow leaves its input untouched.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["ComponentwiseFlow", "build_flow"]

_MIN_BIN = 1e-3
_MIN_DERIV = 1e-3
# _MIN_DERIV + softplus(x) = 1 at this offset: unit spline derivatives at init
_DERIV_OFFSET = math.log(math.expm1(1.0 - _MIN_DERIV))


class _Conditioner(nn.Module):
    """Small MLP from a context vector to per-coordinate transform params.

    The output layer is zero-initialized so every flow starts at identity.
    A spectral-norm projection (see ``constrain``) bounds the network's
    sensitivity, so a small adjacency gate cannot be amplified back into a
    fully informative signal.
    """

    def __init__(self, context_dim: int, out_dim: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(context_dim, hidden), nn.LeakyReLU(0.1),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.1),
            nn.Linear(hidden, out_dim))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, ctx: torch.Tensor) -> torch.Tensor:
        return self.net(ctx)

    @torch.no_grad()
    def constrain(self, limit: float) -> None:
        """Project every layer onto a spectral-norm ball of radius ``limit``."""
        for layer in self.net:
            if isinstance(layer, nn.Linear):
                sigma = torch.linalg.matrix_norm(layer.weight, 2)
                # small tolerance keeps the projection idempotent
                if sigma > limit * (1.0 + 1e-6):
                    layer.weight.mul_(limit / sigma)


class _AffineBlock(nn.Module):
    """eps = (z - shift(ctx)) * exp(log_scale(ctx)) per coordinate."""

    param_count = 2

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.conditioners = nn.ModuleList(
            [_Conditioner(dim, self.param_count, hidden) for _ in range(dim)])

    def _params(self, ctx_rows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw = torch.stack([cond(ctx_rows[:, i]) for i, cond in
                           enumerate(self.conditioners)], dim=1)
        # bounded slopes and shifts keep the conditional likelihood from
        # being gamed by making latents mutually predictable
        log_scale = 3.0 * torch.tanh(raw[..., 0] / 3.0)
        shift = 4.0 * torch.tanh(raw[..., 1] / 4.0)
        return log_scale, shift

    def forward(self, z: torch.Tensor, ctx_rows: torch.Tensor):
        log_scale, shift = self._params(ctx_rows)
        eps = (z - shift) * torch.exp(log_scale)
        return eps, log_scale

    def inverse(self, eps: torch.Tensor, ctx_rows: torch.Tensor):
        log_scale, shift = self._params(ctx_rows)
        return eps * torch.exp(-log_scale) + shift


class _SplineBlock(nn.Module):
    """Monotone rational-quadratic spline on [-bound, bound], identity tails."""

    def __init__(self, dim: int, num_bins: int = 8, bound: float = 5.0,
                 hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.num_bins = num_bins
        self.bound = bound
        self.param_count = 3 * num_bins + 1
        self.conditioners = nn.ModuleList(
            [_Conditioner(dim, self.param_count, hidden) for _ in range(dim)])

    def _knots(self, ctx_rows: torch.Tensor):
        raw = torch.stack([cond(ctx_rows[:, i]) for i, cond in
                           enumerate(self.conditioners)], dim=1)
        # soft-clamp keeps bins and derivatives away from degenerate values
        raw = 5.0 * torch.tanh(raw / 5.0)
        k = self.num_bins
        widths = F.softmax(raw[..., :k], dim=-1)
        widths = _MIN_BIN + (1 - _MIN_BIN * k) * widths
        heights = F.softmax(raw[..., k:2 * k], dim=-1)
        heights = _MIN_BIN + (1 - _MIN_BIN * k) * heights
        derivs = _MIN_DERIV + F.softplus(raw[..., 2 * k:] + _DERIV_OFFSET)

        xk = torch.cumsum(widths, dim=-1) * (2 * self.bound)
        xk = F.pad(xk, (1, 0)) - self.bound
        yk = torch.cumsum(heights, dim=-1) * (2 * self.bound)
        yk = F.pad(yk, (1, 0)) - self.bound
        # unit boundary derivatives keep the spline C1 with the identity tails
        derivs = torch.cat([torch.ones_like(derivs[..., :1]),
                            derivs[..., 1:-1],
                            torch.ones_like(derivs[..., :1])], dim=-1)
        return xk, yk, derivs

    def _transform(self, value: torch.Tensor, ctx_rows: torch.Tensor,
                   invert: bool):
        xk, yk, derivs = self._knots(ctx_rows)
        ref = yk if invert else xk
        inside = (value > -self.bound) & (value < self.bound)
        v = torch.clamp(value, -self.bound, self.bound - 1e-7)
        idx = (torch.searchsorted(ref[..., 1:].contiguous(),
                                  v.unsqueeze(-1), right=False)
               .squeeze(-1).clamp(0, self.num_bins - 1))

        gather = lambda t, i: torch.gather(t, -1, i.unsqueeze(-1)).squeeze(-1)
        x0 = gather(xk, idx)
        x1 = gather(xk, idx + 1)
        y0 = gather(yk, idx)
        y1 = gather(yk, idx + 1)
        d0 = gather(derivs, idx)
        d1 = gather(derivs, idx + 1)
        w = x1 - x0
        h = y1 - y0
        s = h / w

        if not invert:
            xi = (v - x0) / w
            omx = 1 - xi
            denom = s + (d1 + d0 - 2 * s) * xi * omx
            out = y0 + h * (s * xi * xi + d0 * xi * omx) / denom
            deriv = (s * s * (d1 * xi * xi + 2 * s * xi * omx + d0 * omx * omx)
                     / (denom * denom))
            out = torch.where(inside, out, value)
            logdet = torch.where(inside, torch.log(deriv),
                                 torch.zeros_like(deriv))
            return out, logdet
        dy = v - y0
        a = h * (s - d0) + dy * (d1 + d0 - 2 * s)
        b = h * d0 - dy * (d1 + d0 - 2 * s)
        c = -s * dy
        disc = b * b - 4 * a * c
        disc = torch.clamp(disc, min=0.0)
        xi = (2 * c) / (-b - torch.sqrt(disc) - 1e-12 * (b == 0))
        xi = torch.clamp(xi, 0.0, 1.0)
        out = x0 + xi * w
        return torch.where(inside, out, value)

    def forward(self, z: torch.Tensor, ctx_rows: torch.Tensor):
        return self._transform(z, ctx_rows, invert=False)

    def inverse(self, eps: torch.Tensor, ctx_rows: torch.Tensor):
        return self._transform(eps, ctx_rows, invert=True)


class ComponentwiseFlow(nn.Module):
    """Stack of conditional blocks; every block sees the same context rows.

    ``forward(z, ctx_rows)`` maps latents to noise estimates and returns the
    per-sample sum of log-derivatives; ``inverse`` recovers the latents.
    ``ctx_rows`` has shape (batch, dim, dim): row i conditions coordinate i.
    """

    def __init__(self, dim: int, flow_type: str = "spline", depth: int = 2,
                 num_bins: int = 8, bound: float = 5.0, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.flow_type = flow_type
        if flow_type == "affine":
            blocks = [_AffineBlock(dim, hidden) for _ in range(depth)]
        elif flow_type == "spline":
            blocks = [_SplineBlock(dim, num_bins, bound, hidden)
                      for _ in range(depth)]
        else:
            raise ValueError(f"unknown flow type {flow_type!r}")
        # float32 spline inversion loses ~1e-4; the blocks run in float64
        self.blocks = nn.ModuleList(blocks).double()

    def forward(self, z: torch.Tensor, ctx_rows: torch.Tensor):
        out = z.double()
        ctx = ctx_rows.double()
        logdet = torch.zeros_like(out)
        for block in self.blocks:
            out, ld = block(out, ctx)
            logdet = logdet + ld
        return out.to(z.dtype), logdet.sum(dim=-1).to(z.dtype)

    def inverse(self, eps: torch.Tensor, ctx_rows: torch.Tensor):
        out = eps.double()
        ctx = ctx_rows.double()
        for block in reversed(self.blocks):
            out = block.inverse(out, ctx)
        return out.to(eps.dtype)

    @torch.no_grad()
    def constrain(self, limit: float) -> None:
        if limit <= 0:
            return
        for block in self.blocks:
            for cond in block.conditioners:
                cond.constrain(limit)


def build_flow(dim: int, flow_type: str = "spline", depth: int = 2,
               num_bins: int = 8, bound: float = 5.0,
               hidden: int = 64) -> ComponentwiseFlow:
    return ComponentwiseFlow(dim, flow_type, depth, num_bins, bound, hidden)
