"""Estimation network: per-modality autoencoders, flow-based noise
estimation under a learnable adjacency matrix, and the training losses.

The latent head of each encoder is deterministic and passed through a
standardization layer (running batch statistics, no learnable affine) so
the flow likelihood cannot be gamed by shrinking the latent scale. The
exogenous head is a Gaussian posterior whose reparameterized sample feeds
the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .flows import build_flow

__all__ = [
    "ModelConfig", "AdjacencyParam", "EncoderOutput", "MultimodalModel",
    "loss_recon", "kl_standard_normal", "NumericalError",
]


class NumericalError(RuntimeError):
    """A loss term became non-finite; carries the offending term's name."""

    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term


@dataclass
class ModelConfig:
    """Architecture and objective weights for one estimation model."""

    latent_dims: tuple[int, ...]
    exo_dims: tuple[int, ...]
    obs_dims: tuple[int, ...]
    hidden_width: int = 128
    hidden_depth: int = 3
    flow_type: str = "spline"          # "spline" | "affine"
    flow_depth: int = 2
    flow_bins: int = 8
    flow_bound: float = 5.0
    flow_hidden: int = 64
    adjacency_init_scale: float = 0.0  # logit offset at initialization
    alpha_recon: float = 1.0
    alpha_ind: float = 0.1
    alpha_sparsity: float = 0.05
    cross_dependence: bool = True      # decorrelate [eta-hats, eps-hats] jointly
    cross_weight: float = 5.0          # weight of the decorrelation inside L_Ind
    nondegeneracy_weight: float = 1.0  # barrier against collinear latent blocks
    nondegeneracy_margin: float = 1.4  # -logdet corr above this is penalized
    conditioner_spectral_limit: float = 1.5  # per-layer Lipschitz cap (0 = off)
    adjacency_threshold: float = 0.3
    encoder_type: str = "mlp"          # "mlp" | "conv" (28x28 image modalities)
    image_channels: tuple[int, ...] = ()
    acyclicity_weight: float = 0.0     # optional penalty, off by default

    def __post_init__(self):
        self.latent_dims = tuple(int(d) for d in self.latent_dims)
        self.exo_dims = tuple(int(d) for d in self.exo_dims)
        self.obs_dims = tuple(int(d) for d in self.obs_dims)
        if not (len(self.latent_dims) == len(self.exo_dims) == len(self.obs_dims)):
            raise ValueError("per-modality dim lists must have equal length")
        if any(d < 1 for d in self.latent_dims + self.exo_dims + self.obs_dims):
            raise ValueError("dims must be positive")
        for name in ("alpha_recon", "alpha_ind", "alpha_sparsity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.adjacency_threshold < 1.0:
            raise ValueError("adjacency_threshold must be in (0, 1)")
        if self.encoder_type not in ("mlp", "conv"):
            raise ValueError(f"unknown encoder type {self.encoder_type!r}")
        if self.encoder_type == "conv" and len(self.image_channels) != len(self.obs_dims):
            raise ValueError("conv encoders need image_channels per modality")

    @property
    def num_modalities(self) -> int:
        return len(self.latent_dims)

    @property
    def total_latents(self) -> int:
        return sum(self.latent_dims)

    def latent_slice(self, m: int) -> slice:
        start = sum(self.latent_dims[:m])
        return slice(start, start + self.latent_dims[m])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("latent_dims", "exo_dims", "obs_dims", "image_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class EncoderOutput:
    """Deterministic latent estimate plus Gaussian exogenous posterior."""

    z_hat: torch.Tensor
    eta_mean: torch.Tensor
    eta_logvar: torch.Tensor


class AdjacencyParam(nn.Module):
    """Continuous relaxation of the learnable adjacency matrix.

    gate(i, j) = sigmoid(logits[i, j]) with a structural zero on the
    diagonal; gate(i, j) > 0 lets z_j condition the flow of z_i.
    """

    def __init__(self, dim: int, init_scale: float = 0.0):
        super().__init__()
        self.dim = dim
        self.logits = nn.Parameter(torch.full((dim, dim), float(init_scale)))
        mask = 1.0 - torch.eye(dim)
        self.register_buffer("offdiag", mask)

    def gates(self) -> torch.Tensor:
        return torch.sigmoid(self.logits) * self.offdiag

    def binarize(self, threshold: float) -> np.ndarray:
        with torch.no_grad():
            return (self.gates() > threshold).cpu().numpy()


class _MlpEncoder(nn.Module):
    def __init__(self, obs_dim: int, latent_dim: int, exo_dim: int,
                 width: int, depth: int):
        super().__init__()
        layers: list[nn.Module] = []
        d = obs_dim
        for _ in range(depth):
            layers += [nn.Linear(d, width), nn.LeakyReLU(0.1)]
            d = width
        self.trunk = nn.Sequential(*layers)
        self.z_head = nn.Linear(d, latent_dim)
        self.eta_head = nn.Linear(d, 2 * exo_dim)
        self.z_norm = nn.BatchNorm1d(latent_dim, affine=False, momentum=0.05)
        self.exo_dim = exo_dim

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        h = self.trunk(x)
        z = self.z_norm(self.z_head(h))
        eta = self.eta_head(h)
        mean, logvar = eta[:, :self.exo_dim], eta[:, self.exo_dim:]
        return EncoderOutput(z, mean, torch.clamp(logvar, -10.0, 10.0))


class _MlpDecoder(nn.Module):
    def __init__(self, obs_dim: int, latent_dim: int, exo_dim: int,
                 width: int, depth: int):
        super().__init__()
        layers: list[nn.Module] = []
        d = latent_dim + exo_dim
        for _ in range(depth):
            layers += [nn.Linear(d, width), nn.LeakyReLU(0.1)]
            d = width
        layers.append(nn.Linear(d, obs_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, eta: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([z, eta], dim=1))


class _ConvEncoder(nn.Module):
    """28x28 image encoder used by the image experiments."""

    def __init__(self, channels: int, latent_dim: int, exo_dim: int, width: int):
        super().__init__()
        self.channels = channels
        self.conv = nn.Sequential(
            nn.Conv2d(channels, 32, 4, stride=2, padding=1), nn.LeakyReLU(0.1),
            nn.Conv2d(32, 64, 4, stride=2, padding=1), nn.LeakyReLU(0.1))
        self.fc = nn.Sequential(nn.Linear(64 * 7 * 7, width), nn.LeakyReLU(0.1))
        self.z_head = nn.Linear(width, latent_dim)
        self.eta_head = nn.Linear(width, 2 * exo_dim)
        self.z_norm = nn.BatchNorm1d(latent_dim, affine=False, momentum=0.05)
        self.exo_dim = exo_dim

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        img = x.reshape(x.shape[0], self.channels, 28, 28)
        h = self.fc(self.conv(img).flatten(1))
        z = self.z_norm(self.z_head(h))
        eta = self.eta_head(h)
        mean, logvar = eta[:, :self.exo_dim], eta[:, self.exo_dim:]
        return EncoderOutput(z, mean, torch.clamp(logvar, -10.0, 10.0))


class _ConvDecoder(nn.Module):
    def __init__(self, channels: int, latent_dim: int, exo_dim: int, width: int):
        super().__init__()
        self.channels = channels
        self.fc = nn.Sequential(
            nn.Linear(latent_dim + exo_dim, width), nn.LeakyReLU(0.1),
            nn.Linear(width, 64 * 7 * 7), nn.LeakyReLU(0.1))
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(64, 32, 4, stride=2, padding=1), nn.LeakyReLU(0.1),
            nn.ConvTranspose2d(32, channels, 4, stride=2, padding=1))

    def forward(self, z: torch.Tensor, eta: torch.Tensor) -> torch.Tensor:
        h = self.fc(torch.cat([z, eta], dim=1))
        img = self.deconv(h.reshape(-1, 64, 7, 7))
        return torch.sigmoid(img).flatten(1)


def loss_recon(xs: list[torch.Tensor], x_hats: list[torch.Tensor]) -> torch.Tensor:
    """Sum over modalities of squared reconstruction error, batch-averaged."""
    total = 0.0
    for x, x_hat in zip(xs, x_hats):
        total = total + ((x - x_hat) ** 2).sum(dim=1)
    return total.mean()


def kl_standard_normal(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mean, exp(logvar)) || N(0, 1)) summed over coords,
    batch-averaged."""
    kl = 0.5 * (mean ** 2 + torch.exp(logvar) - 1.0 - logvar)
    return kl.sum(dim=1).mean()


class MultimodalModel(nn.Module):
    """Encoders, decoders, adjacency gates and the componentwise flow."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        enc, dec = [], []
        for m in range(config.num_modalities):
            if config.encoder_type == "conv":
                ch = config.image_channels[m]
                enc.append(_ConvEncoder(ch, config.latent_dims[m],
                                        config.exo_dims[m], config.hidden_width))
                dec.append(_ConvDecoder(ch, config.latent_dims[m],
                                        config.exo_dims[m], config.hidden_width))
            else:
                enc.append(_MlpEncoder(config.obs_dims[m], config.latent_dims[m],
                                       config.exo_dims[m], config.hidden_width,
                                       config.hidden_depth))
                dec.append(_MlpDecoder(config.obs_dims[m], config.latent_dims[m],
                                       config.exo_dims[m], config.hidden_width,
                                       config.hidden_depth))
        self.encoders = nn.ModuleList(enc)
        self.decoders = nn.ModuleList(dec)
        self.adjacency = AdjacencyParam(config.total_latents,
                                        config.adjacency_init_scale)
        self.flow = build_flow(config.total_latents, config.flow_type,
                               config.flow_depth, config.flow_bins,
                               config.flow_bound, config.flow_hidden)
        self.constrain()  # spectral budget holds from the first step

    # -- encoding / decoding -------------------------------------------------

    def encode(self, m: int, x: torch.Tensor) -> EncoderOutput:
        if x.shape[1] != self.config.obs_dims[m]:
            raise ValueError(f"modality {m}: expected {self.config.obs_dims[m]} "
                             f"input dims, got {x.shape[1]}")
        return self.encoders[m](x)

    def decode(self, m: int, z: torch.Tensor, eta: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.config.latent_dims[m]:
            raise ValueError(f"modality {m}: latent dim mismatch")
        if eta.shape[1] != self.config.exo_dims[m]:
            raise ValueError(f"modality {m}: exogenous dim mismatch")
        return self.decoders[m](z, eta)

    def encode_all(self, xs: list[torch.Tensor]) -> list[EncoderOutput]:
        return [self.encode(m, x) for m, x in enumerate(xs)]

    def latents(self, xs: list[torch.Tensor]) -> torch.Tensor:
        """Concatenated deterministic latent estimates for all modalities."""
        return torch.cat([out.z_hat for out in self.encode_all(xs)], dim=1)

    # -- flow ----------------------------------------------------------------

    def flow_noise(self, z_all: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Map latents to noise estimates under the gated parent contexts."""
        gates = self.adjacency.gates()
        ctx_rows = gates.unsqueeze(0) * z_all.unsqueeze(1)
        eps_hat, logdet = self.flow(z_all, ctx_rows)
        if not torch.isfinite(logdet).all():
            raise NumericalError("flow_logdet")
        return eps_hat, logdet

    def invert_noise(self, eps_hat: torch.Tensor, z_context: torch.Tensor) -> torch.Tensor:
        """Recover latents from noise given fixed context latents."""
        gates = self.adjacency.gates()
        ctx_rows = gates.unsqueeze(0) * z_context.unsqueeze(1)
        return self.flow.inverse(eps_hat, ctx_rows)

    @torch.no_grad()
    def constrain(self) -> None:
        """Project flow conditioners onto their spectral-norm budget; called
        by the trainer after each optimizer step."""
        self.flow.constrain(self.config.conditioner_spectral_limit)

    # -- losses ---------------------------------------------------------------

    def loss_sparsity(self) -> torch.Tensor:
        return self.adjacency.gates().abs().sum()

    def loss_ind(self, enc_outs: list[EncoderOutput], eta_samples: list[torch.Tensor],
                 eps_hat: torch.Tensor, logdet: torch.Tensor) -> dict[str, torch.Tensor]:
        """Independence objective: exogenous-posterior KL, flow NLL of the
        noise estimates, and (optionally) a joint decorrelation penalty over
        [eta-hats, eps-hats]."""
        kl_eta = sum(kl_standard_normal(o.eta_mean, o.eta_logvar)
                     for o in enc_outs)
        d = eps_hat.shape[1]
        nll = (0.5 * (eps_hat ** 2).sum(dim=1)
               + 0.5 * d * math.log(2 * math.pi) - logdet).mean()
        terms = {"kl_eta": kl_eta, "nll_eps": nll}
        total = kl_eta + nll
        if self.config.cross_dependence:
            gamma = torch.cat(list(eta_samples) + [eps_hat], dim=1)
            terms["cross_dep"] = _decorrelation_penalty(gamma)
            total = total + self.config.cross_weight * terms["cross_dep"]
        return {"total": total, **terms}

    def total_loss(self, xs: list[torch.Tensor],
                   generator: torch.Generator | None = None,
                   sparsity_scale: float = 1.0,
                   alpha_ind: float | None = None,
                   alpha_sparsity: float | None = None,
                   acyclicity_weight: float | None = None) -> tuple[torch.Tensor, dict]:
        """Weighted objective and per-term breakdown for one batch.

        ``sparsity_scale`` lets the trainer anneal the L1 pressure without
        touching the configured weight; the alpha overrides serve the
        graph-refit stage.
        """
        cfg = self.config
        a_ind = cfg.alpha_ind if alpha_ind is None else alpha_ind
        a_sp = cfg.alpha_sparsity if alpha_sparsity is None else alpha_sparsity
        a_acyc = cfg.acyclicity_weight if acyclicity_weight is None else acyclicity_weight
        enc_outs = self.encode_all(xs)
        eta_samples = []
        for out in enc_outs:
            std = torch.exp(0.5 * out.eta_logvar)
            noise = torch.randn(std.shape, generator=generator, dtype=std.dtype)
            eta_samples.append(out.eta_mean + std * noise)
        x_hats = [self.decode(m, enc_outs[m].z_hat, eta_samples[m])
                  for m in range(cfg.num_modalities)]
        z_all = torch.cat([o.z_hat for o in enc_outs], dim=1)
        eps_hat, logdet = self.flow_noise(z_all)

        recon = loss_recon(xs, x_hats)
        ind = self.loss_ind(enc_outs, eta_samples, eps_hat, logdet)
        sparsity = self.loss_sparsity()

        total = (cfg.alpha_recon * recon + a_ind * ind["total"]
                 + a_sp * sparsity_scale * sparsity)
        breakdown = {"recon": recon, "ind": ind["total"],
                     "sparsity": sparsity, "kl_eta": ind["kl_eta"],
                     "nll_eps": ind["nll_eps"]}
        if a_acyc > 0:
            gates = self.adjacency.gates()
            # gates are nonnegative already, so the exponential trace acts on
            # them directly; a 2-cycle costs ~g_ij * g_ji instead of the much
            # smaller squared-gate version; annealed together with the L1
            acyc = torch.trace(torch.matrix_exp(gates)) - gates.shape[0]
            total = total + a_acyc * sparsity_scale * acyc
            breakdown["acyclicity"] = acyc
        if cfg.nondegeneracy_weight > 0:
            barrier = z_all.new_zeros(())
            for m in range(cfg.num_modalities):
                block = z_all[:, cfg.latent_slice(m)]
                if block.shape[1] >= 2 and block.shape[0] > block.shape[1] + 1:
                    barrier = barrier + torch.relu(
                        _decorrelation_penalty(block) * 2.0
                        - cfg.nondegeneracy_margin)
            total = total + cfg.nondegeneracy_weight * barrier
            breakdown["nondegen"] = barrier
        breakdown["total"] = total
        if "cross_dep" in ind:
            breakdown["cross_dep"] = ind["cross_dep"]
        for name, value in breakdown.items():
            if not torch.isfinite(value).all():
                raise NumericalError(name)
        return total, breakdown


def _decorrelation_penalty(gamma: torch.Tensor) -> torch.Tensor:
    """-0.5 * logdet of the correlation matrix of gamma's columns.

    Non-negative; zero exactly when the columns are uncorrelated. Together
    with the marginal terms this approximates the KL of the joint
    [eta-hats, eps-hats] to a standard normal.
    """
    b, d = gamma.shape
    if b <= d + 1:
        return gamma.new_zeros(())
    centered = gamma - gamma.mean(dim=0, keepdim=True)
    cov = centered.T @ centered / (b - 1)
    std = torch.sqrt(torch.clamp(torch.diagonal(cov), min=1e-8))
    corr = cov / (std[:, None] * std[None, :])
    corr = corr + 1e-5 * torch.eye(d, dtype=gamma.dtype)
    sign, logabsdet = torch.linalg.slogdet(corr)
    return -0.5 * logabsdet
