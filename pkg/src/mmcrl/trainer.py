"""Config-driven optimization loop with seed control and checkpointing.

Training is deterministic given (dataset, configs, seed) on a fixed
platform: model initialization, batch order and posterior sampling all
draw from named torch generators derived from the config seed. Checkpoints
serialize parameters, optimizer moments and RNG states into the same
tensor-directory container used for datasets, so a resumed run reproduces
the exact loss trajectory of an uninterrupted one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import container
from .model import ModelConfig, MultimodalModel, NumericalError
from .scm_datagen import MultimodalDataset
from .seeds import derive_seed

__all__ = [
    "TrainConfig", "TrainingLog", "train", "binarize_adjacency",
    "save_checkpoint", "load_checkpoint",
]


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    eval_every: int = 5
    checkpoint_dir: str | None = None
    patience: int = 20
    val_fraction: float = 0.1
    sparsity_warmup_epochs: int = 0   # L1 weight ramps 0 -> full over this span
    adjacency_lr_scale: float = 10.0  # logits move faster than net weights
    graph_refit_epochs: int = 0       # post-fit stage: only flow + adjacency
    refit_alpha_ind: float = 1.0
    refit_alpha_sparsity: float = 0.05
    refit_acyclicity_weight: float = 5.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.sparsity_warmup_epochs < 0 or self.adjacency_lr_scale <= 0:
            raise ValueError("invalid sparsity_warmup_epochs or adjacency_lr_scale")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainingLog:
    records: list[dict]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records) + "\n"


def _dataset_tensors(dataset: MultimodalDataset) -> list[torch.Tensor]:
    return [torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
            for x in dataset.observations]


def _split(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.Generator(np.random.Philox(derive_seed(seed, "split"))).permutation(n)
    n_val = int(n * val_fraction)
    return order[n_val:], order[:n_val]


def _make_optimizer(model: MultimodalModel, cfg: TrainConfig) -> torch.optim.Adam:
    adj_params = list(model.adjacency.parameters())
    adj_ids = {id(p) for p in adj_params}
    rest = [p for p in model.parameters() if id(p) not in adj_ids]
    return torch.optim.Adam([
        {"params": rest, "lr": cfg.learning_rate},
        {"params": adj_params, "lr": cfg.learning_rate * cfg.adjacency_lr_scale},
    ])


def _sparsity_scale(epoch: int, warmup: int) -> float:
    if warmup <= 0:
        return 1.0
    return min(1.0, (epoch + 1) / warmup)


def train(dataset: MultimodalDataset, model_config: ModelConfig,
          train_config: TrainConfig,
          resume_from: str | None = None) -> tuple[MultimodalModel, TrainingLog]:
    """Minimize the weighted objective by Adam; returns the trained model
    and the per-epoch log. Aborts with ``NumericalError`` naming the term
    if any loss becomes non-finite."""
    for m, x in enumerate(dataset.observations):
        if x.shape[1] != model_config.obs_dims[m]:
            raise ValueError(f"modality {m}: dataset has {x.shape[1]} dims, "
                             f"model expects {model_config.obs_dims[m]}")
    if train_config.batch_size > dataset.n_samples:
        raise ValueError("batch_size exceeds the dataset size")

    if resume_from is not None:
        model, optimizer, g_train, start_epoch, records = load_checkpoint(
            resume_from, with_optimizer=True)
    else:
        torch.manual_seed(derive_seed(train_config.seed, "model-init"))
        model = MultimodalModel(model_config)
        optimizer = _make_optimizer(model, train_config)
        g_train = torch.Generator().manual_seed(
            derive_seed(train_config.seed, "train-stream"))
        start_epoch = 0
        records = []

    xs_all = _dataset_tensors(dataset)
    train_idx, val_idx = _split(dataset.n_samples, train_config.val_fraction,
                                train_config.seed)
    xs_train = [x[train_idx] for x in xs_all]
    xs_val = [x[val_idx] for x in xs_all] if val_idx.size else None

    z_true = None
    if dataset.latents is not None:
        z_true = np.asarray(dataset.latents, dtype=np.float64)

    best_val = float("inf")
    stale_evals = 0
    n_train = train_idx.size
    t0 = time.time()

    for epoch in range(start_epoch, train_config.epochs):
        model.train()
        scale = _sparsity_scale(epoch, train_config.sparsity_warmup_epochs)
        perm = torch.randperm(n_train, generator=g_train)
        sums: dict[str, float] = {}
        n_batches = 0
        for lo in range(0, n_train, train_config.batch_size):
            sel = perm[lo:lo + train_config.batch_size]
            if sel.numel() < 2:
                continue
            batch = [x[sel] for x in xs_train]
            optimizer.zero_grad()
            total, breakdown = model.total_loss(batch, generator=g_train,
                                                sparsity_scale=scale)
            total.backward()
            optimizer.step()
            model.constrain()
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach())
            n_batches += 1

        record = {"epoch": epoch, "wall_time": round(time.time() - t0, 3)}
        for k, v in sums.items():
            record[k] = v / max(n_batches, 1)

        if (epoch + 1) % train_config.eval_every == 0 or epoch == train_config.epochs - 1:
            model.eval()
            if xs_val is not None:
                with torch.no_grad():
                    g_eval = torch.Generator().manual_seed(
                        derive_seed(train_config.seed, "eval-stream", epoch))
                    val_total, _ = model.total_loss(xs_val, generator=g_eval)
                record["val_loss"] = float(val_total)
                if record["val_loss"] < best_val - 1e-9:
                    best_val = record["val_loss"]
                    stale_evals = 0
                else:
                    stale_evals += 1
            if z_true is not None:
                from .metrics import mcc, r2
                with torch.no_grad():
                    z_est = model.latents(xs_all).numpy().astype(np.float64)
                record["mcc"] = round(mcc(z_true, z_est)[0], 6)
                record["r2"] = round(r2(z_true, z_est), 6)
        records.append(record)

        if stale_evals > train_config.patience:
            record["early_stop"] = True
            break

    if train_config.graph_refit_epochs > 0:
        _graph_refit(model, xs_train, xs_all, z_true, train_config, g_train,
                     records)

    log = TrainingLog(records)
    if train_config.checkpoint_dir:
        ckpt = Path(train_config.checkpoint_dir)
        save_checkpoint(ckpt, model, optimizer, g_train,
                        epoch=records[-1]["epoch"] + 1 if records else 0,
                        records=records, train_config=train_config)
        (ckpt / "log.jsonl").write_text(log.to_jsonl())
    return model, log


def _graph_refit(model: MultimodalModel, xs_train, xs_all, z_true,
                 train_config: TrainConfig, g_train: torch.Generator,
                 records: list[dict]) -> None:
    """Freeze the autoencoders and re-fit only the flow and adjacency with
    strong independence/sparsity pressure; the latent estimates stay fixed,
    so gate separation no longer competes with identification."""
    model.eval()  # latent standardization uses frozen running statistics
    for p in model.parameters():
        p.requires_grad_(False)
    trainable = list(model.adjacency.parameters()) + list(model.flow.parameters())
    for p in trainable:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam([
        {"params": list(model.flow.parameters()), "lr": train_config.learning_rate},
        {"params": list(model.adjacency.parameters()),
         "lr": train_config.learning_rate * train_config.adjacency_lr_scale},
    ])
    n_train = xs_train[0].shape[0]
    warmup = max(train_config.graph_refit_epochs // 3, 1)
    t0 = time.time()
    for epoch in range(train_config.graph_refit_epochs):
        scale = _sparsity_scale(epoch, warmup)
        perm = torch.randperm(n_train, generator=g_train)
        sums: dict[str, float] = {}
        n_batches = 0
        for lo in range(0, n_train, train_config.batch_size):
            sel = perm[lo:lo + train_config.batch_size]
            if sel.numel() < 2:
                continue
            batch = [x[sel] for x in xs_train]
            optimizer.zero_grad()
            total, breakdown = model.total_loss(
                batch, generator=g_train, sparsity_scale=scale,
                alpha_ind=train_config.refit_alpha_ind,
                alpha_sparsity=train_config.refit_alpha_sparsity,
                acyclicity_weight=train_config.refit_acyclicity_weight)
            total.backward()
            optimizer.step()
            model.constrain()
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach())
            n_batches += 1
        record = {"epoch": epoch, "phase": "refit",
                  "wall_time": round(time.time() - t0, 3)}
        for k, v in sums.items():
            record[k] = v / max(n_batches, 1)
        records.append(record)
    for p in model.parameters():
        p.requires_grad_(True)


def binarize_adjacency(model: MultimodalModel, threshold: float | None = None) -> np.ndarray:
    """Boolean adjacency: edge (i, j) present iff gate(i, j) > threshold."""
    if threshold is None:
        threshold = model.config.adjacency_threshold
    return model.adjacency.binarize(threshold)


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(path, model: MultimodalModel,
                    optimizer: torch.optim.Optimizer | None = None,
                    generator: torch.Generator | None = None,
                    epoch: int = 0, records: list[dict] | None = None,
                    train_config: TrainConfig | None = None) -> str:
    fields: dict[str, np.ndarray] = {}
    for key, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.int64 or key.endswith("num_batches_tracked"):
            arr = arr.astype(np.int64)
        fields[f"model.{key}"] = arr
    if optimizer is not None:
        params = [p for group in optimizer.param_groups for p in group["params"]]
        for idx, p in enumerate(params):
            state = optimizer.state.get(p, {})
            for name, value in state.items():
                if isinstance(value, torch.Tensor):
                    fields[f"optim.{idx}.{name}"] = value.detach().cpu().numpy()
                else:
                    fields[f"optim.{idx}.{name}"] = np.asarray([value], dtype=np.float32)
    if generator is not None:
        fields["rng.torch"] = generator.get_state().numpy()
    meta = {"kind": "checkpoint", "step": int(epoch),
            "model_config": model.config.to_dict()}
    if train_config is not None:
        meta["train_config"] = train_config.to_dict()
    if records is not None:
        meta["records"] = records
    return container.save_tensors(path, fields, meta)


def load_checkpoint(path, with_optimizer: bool = False):
    """Rebuild the model (and optionally optimizer/RNG/log) from a container.

    Returns the model alone, or a (model, optimizer, generator, epoch,
    records) tuple when ``with_optimizer`` is set.
    """
    fields, manifest = container.load_tensors(path)
    meta = manifest["meta"]
    config = ModelConfig.from_dict(meta["model_config"])
    model = MultimodalModel(config)
    state = {}
    for key, arr in fields.items():
        if key.startswith("model."):
            name = key[len("model."):]
            ref = model.state_dict()[name]
            state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype).reshape(ref.shape)
    model.load_state_dict(state)
    if not with_optimizer:
        return model

    tc = TrainConfig.from_dict(meta["train_config"]) if "train_config" in meta \
        else TrainConfig()
    optimizer = _make_optimizer(model, tc)
    params = [p for group in optimizer.param_groups for p in group["params"]]
    per_param: dict[int, dict] = {}
    for key, arr in fields.items():
        if key.startswith("optim."):
            _, idx, name = key.split(".", 2)
            per_param.setdefault(int(idx), {})[name] = arr
    for idx, entries in per_param.items():
        state_entry = {}
        for name, arr in entries.items():
            if name == "step":
                state_entry[name] = torch.tensor(float(arr.reshape(-1)[0]))
            else:
                ref = params[idx]
                state_entry[name] = torch.from_numpy(
                    np.ascontiguousarray(arr)).to(ref.dtype).reshape(ref.shape)
        optimizer.state[params[idx]] = state_entry

    generator = torch.Generator()
    if "rng.torch" in fields:
        generator.set_state(torch.from_numpy(
            np.ascontiguousarray(fields["rng.torch"], dtype=np.uint8)))
    return model, optimizer, generator, int(meta.get("step", 0)), list(meta.get("records", []))
