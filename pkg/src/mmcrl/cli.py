"""Experiment command line: one entry point, one subcommand per stage.

Every subcommand reads an optional JSON config (unknown keys rejected)
plus flag overrides, writes its artifacts under ``--out`` together with a
``config.resolved.json`` sufficient to reproduce the run, and exits 0 on
success, 2 on a config error, 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import container
from .model import ModelConfig, NumericalError
from .scm_datagen import (GeneratorSpec, ModelSamplingError, case_preset,
                          generate_dataset, sample_latent_graph,
                          sample_structural_model)
from .trainer import TrainConfig, binarize_adjacency, load_checkpoint, train

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DATA_DIR_ENV = "MMCRL_DATA_DIR"


class ConfigError(ValueError):
    pass


def _allowed_keys(cls) -> set[str]:
    return {f.name for f in dataclass_fields(cls)}


def _check_keys(d: dict, allowed: set[str], context: str) -> dict:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    return d


def _load_config(path: str | None, allowed_sections: dict[str, set[str]]) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    _check_keys(raw, set(allowed_sections), "config section")
    for section, keys in allowed_sections.items():
        if section in raw:
            _check_keys(raw[section], keys, section)
    return raw


def _write_resolved(out: Path, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str))


# -- generate -----------------------------------------------------------------

def _cmd_generate(args) -> int:
    cfg = _load_config(args.config, {"spec": _allowed_keys(GeneratorSpec)})
    if "spec" in cfg:
        spec_kwargs = dict(cfg["spec"])
        if args.sparsity is not None:
            spec_kwargs["sparsity_ratio"] = args.sparsity
        if args.seed is not None:
            spec_kwargs["seed"] = args.seed
        if args.n is not None:
            spec_kwargs["n_samples"] = args.n
        try:
            spec = GeneratorSpec(**spec_kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    else:
        if args.case is None:
            raise ConfigError("need --case or a config with a spec section")
        case: int | str = args.case
        if case == "ablation":
            if args.sparsity is None:
                raise ConfigError("--case ablation needs --sparsity")
        try:
            spec = case_preset(case if case == "ablation" else int(case),
                               args.sparsity,
                               seed=args.seed if args.seed is not None else 0,
                               n_samples=args.n if args.n is not None else 10000)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    graph = sample_latent_graph(spec, spec.seed)
    model = sample_structural_model(spec, graph, spec.seed)
    dataset = generate_dataset(spec, graph, model)
    out = Path(args.out)
    content_hash = container.save_dataset(out, dataset)
    _write_resolved(out, {"command": "generate", "spec": spec.to_dict(),
                          "content_hash": content_hash})
    print(f"dataset written to {out} ({content_hash[:19]})")
    print(f"inter-modal edges: {len(graph.inter_modal_edges())}")
    return 0


# -- check-conditions ---------------------------------------------------------

def _rebuild_from_dataset(path: str):
    dataset = container.load_dataset(path)
    spec = container.spec_from_provenance(dataset.provenance)
    if spec is None:
        raise ConfigError(f"{path} carries no generator spec to rebuild from")
    graph = sample_latent_graph(spec, spec.seed)
    model = sample_structural_model(spec, graph, spec.seed)
    return spec, graph, model


def _cmd_check_conditions(args) -> int:
    from .theory_check import check_condition1, check_condition2

    if args.dataset:
        spec, graph, model = _rebuild_from_dataset(args.dataset)
    elif args.case is not None:
        try:
            spec = case_preset(int(args.case), args.sparsity,
                               seed=args.seed if args.seed is not None else 0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        graph = sample_latent_graph(spec, spec.seed)
        model = sample_structural_model(spec, graph, spec.seed)
    else:
        raise ConfigError("need --dataset or --case")

    reports = check_condition1(model, graph, num_points=args.num_points,
                               rng_seed=spec.seed)
    reports += check_condition2(model, graph, num_points=min(args.num_points, 16),
                                num_T_samples=args.num_t_samples,
                                rng_seed=spec.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = [r.to_dict() for r in reports]
    (out / "conditions.json").write_text(json.dumps(payload, indent=2))
    _write_resolved(out, {"command": "check-conditions", "spec": spec.to_dict(),
                          "num_points": args.num_points,
                          "num_t_samples": args.num_t_samples})
    for r in reports:
        status = "holds" if r.holds else "FAILS"
        print(f"modality {r.modality} {r.condition}: {status}"
              + (f" (margin {r.margin})" if r.margin is not None else "")
              + (f" ({r.notes})" if r.notes else ""))
    print(f"report written to {out / 'conditions.json'}")
    return 0


# -- train --------------------------------------------------------------------

def _model_config_for_dataset(dataset, overrides: dict) -> ModelConfig:
    prov = dataset.provenance
    kwargs: dict = {}
    if prov.get("kind") == "scm":
        spec = GeneratorSpec.from_dict(prov["spec"])
        kwargs.update(latent_dims=spec.latent_dims, exo_dims=spec.exo_dims,
                      obs_dims=spec.obs_dims)
    elif prov.get("kind") == "variant-mnist":
        shapes = prov.get("image_shapes", [[28, 28, 3], [28, 28, 1]])
        kwargs.update(latent_dims=(2, 2), exo_dims=(6, 6),
                      obs_dims=tuple(int(np.prod(s)) for s in shapes),
                      encoder_type="conv",
                      image_channels=tuple(s[2] for s in shapes),
                      hidden_width=256)
    else:
        kwargs.update(obs_dims=tuple(x.shape[1] for x in dataset.observations))
    kwargs.update(overrides)
    if "latent_dims" not in kwargs:
        raise ConfigError("latent_dims not derivable from dataset; set them "
                          "in the config's model section")
    try:
        return ModelConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, {"model": _allowed_keys(ModelConfig),
                                     "train": _allowed_keys(TrainConfig)})
    dataset = container.load_dataset(args.dataset)

    model_overrides = dict(cfg.get("model", {}))
    if args.flow:
        model_overrides["flow_type"] = args.flow
    for key, value in (("alpha_ind", args.alpha_ind),
                       ("alpha_sparsity", args.alpha_sp),
                       ("alpha_recon", args.alpha_recon),
                       ("adjacency_threshold", args.tau)):
        if value is not None:
            model_overrides[key] = value
    model_config = _model_config_for_dataset(dataset, model_overrides)

    train_kwargs = dict(cfg.get("train", {}))
    for key, value in (("epochs", args.epochs), ("batch_size", args.batch_size),
                       ("learning_rate", args.lr), ("seed", args.seed)):
        if value is not None:
            train_kwargs[key] = value
    out = Path(args.out)
    train_kwargs["checkpoint_dir"] = str(out / "checkpoint")
    try:
        train_config = TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    _write_resolved(out, {"command": "train", "dataset": str(args.dataset),
                          "dataset_id": container.dataset_id(args.dataset),
                          "model": model_config.to_dict(),
                          "train": train_config.to_dict()})
    model, log = train(dataset, model_config, train_config)
    (out / "log.jsonl").write_text(log.to_jsonl())
    final = log.records[-1] if log.records else {}
    print(f"checkpoint written to {out / 'checkpoint'}")
    print(f"final loss: {final.get('total', float('nan')):.6f} "
          f"(epoch {final.get('epoch', -1)})")
    return 0


# -- evaluate -----------------------------------------------------------------

def _cmd_evaluate(args) -> int:
    from .evaluate import evaluate_model

    model = load_checkpoint(args.checkpoint)
    dataset = container.load_dataset(args.dataset)
    report = evaluate_model(model, dataset, threshold=args.tau,
                            dataset_id=container.dataset_id(args.dataset),
                            checkpoint_id=container.dataset_id(args.checkpoint),
                            seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics_report.json").write_text(report.to_json())
    _write_resolved(out, {"command": "evaluate", "checkpoint": str(args.checkpoint),
                          "dataset": str(args.dataset), "tau": args.tau})
    absent = [k for k in ("mcc", "r2") if getattr(report, k) is None]
    print(f"metrics report written to {out / 'metrics_report.json'}")
    print(f"mcc={report.mcc} r2={report.r2} shd={report.shd}"
          + (f" (absent: {','.join(absent)})" if absent else ""))
    return 0


# -- discover -----------------------------------------------------------------

def _cmd_discover(args) -> int:
    from .discovery import edges_json, pc_orient, pc_skeleton, to_dot
    from .evaluate import recovered_latents

    blocks = []
    names: list[str] = []
    if args.matrix:
        arr = np.load(args.matrix)
        blocks.append(np.asarray(arr, dtype=float))
        names += [f"x{i}" for i in range(arr.shape[1])]
    elif args.checkpoint and args.dataset:
        model = load_checkpoint(args.checkpoint)
        dataset = container.load_dataset(args.dataset)
        z = recovered_latents(model, dataset)
        blocks.append(z)
        names += [f"z{i}" for i in range(z.shape[1])]
    else:
        raise ConfigError("need --matrix or both --checkpoint and --dataset")
    if args.aux:
        aux = np.loadtxt(args.aux, delimiter=",", skiprows=1, ndmin=2)
        header = Path(args.aux).read_text().splitlines()[0].split(",")
        blocks.append(aux)
        names += [h.strip() for h in header]
    data = np.concatenate(blocks, axis=1)

    skeleton = pc_skeleton(data, alpha=args.alpha, max_cond_set=args.max_cond_set)
    oriented = pc_orient(skeleton)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.json").write_text(edges_json(oriented, names))
    (out / "graph.dot").write_text(to_dot(oriented, names))
    _write_resolved(out, {"command": "discover", "alpha": args.alpha,
                          "max_cond_set": args.max_cond_set,
                          "columns": names,
                          "n_tests": skeleton.n_tests,
                          "test_failures": len(skeleton.test_failures)})
    print(f"graph written to {out / 'graph.json'} "
          f"({len(oriented.edge_list())} edges)")
    return 0


# -- mnist-build ----------------------------------------------------------------

def _cmd_mnist_build(args) -> int:
    from .mnist_pipeline import build_variant_mnist

    data_root = os.environ.get(DATA_DIR_ENV, "")
    mnist_dir = args.mnist_dir or (Path(data_root) / "mnist" if data_root else None)
    fashion_dir = args.fashion_dir or (Path(data_root) / "fashion-mnist"
                                       if data_root else None)
    if not mnist_dir or not fashion_dir:
        raise ConfigError(f"set --mnist-dir/--fashion-dir or {DATA_DIR_ENV}")
    try:
        dataset = build_variant_mnist(mnist_dir, fashion_dir, seed=args.seed or 0,
                                      n_pairs=args.n or 8000)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    content_hash = container.save_dataset(out, dataset)
    _write_resolved(out, {"command": "mnist-build", "seed": args.seed or 0,
                          "n_pairs": args.n or 8000,
                          "content_hash": content_hash})
    print(f"variant-mnist dataset written to {out} ({content_hash[:19]})")
    return 0


# -- report ---------------------------------------------------------------------

def _cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    for run in args.runs:
        run = Path(run)
        report_file = run / "metrics_report.json"
        if not report_file.exists():
            print(f"skipping {run}: no metrics_report.json", file=sys.stderr)
            continue
        payload = json.loads(report_file.read_text())
        row = {"run": run.name,
               "mcc": payload.get("mcc"), "r2": payload.get("r2"),
               "shd": payload.get("shd"), "seed": payload.get("seed"),
               "dataset_id": payload.get("dataset_id")}
        resolved = run / "config.resolved.json"
        if resolved.exists():
            rc = json.loads(resolved.read_text())
            row["sparsity_ratio"] = (rc.get("spec", {}) or {}).get("sparsity_ratio",
                                                                   rc.get("sparsity_ratio"))
        rows.append(row)
    if not rows:
        raise ConfigError("no usable run directories")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    headers = ["run", "sparsity_ratio", "seed", "mcc", "r2", "shd"]
    lines = [",".join(headers)]
    for row in rows:
        lines.append(",".join("" if row.get(h) is None else str(row.get(h))
                              for h in headers))
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))

    by_ratio: dict[float, list[float]] = {}
    for row in rows:
        if row.get("sparsity_ratio") is not None and row.get("mcc") is not None:
            by_ratio.setdefault(float(row["sparsity_ratio"]), []).append(row["mcc"])
    if by_ratio:
        ratios = sorted(by_ratio)
        means = [float(np.mean(by_ratio[r])) for r in ratios]
        spread = [float(np.std(by_ratio[r])) for r in ratios]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar([str(r) for r in ratios], means, yerr=spread, color="#4878cf",
               capsize=4)
        ax.set_xlabel("sparsity ratio")
        ax.set_ylabel("MCC")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        fig.savefig(out / "mcc_vs_sparsity.png", dpi=150)
        fig.savefig(out / "mcc_vs_sparsity.svg")
        plt.close(fig)
        print(f"chart written to {out / 'mcc_vs_sparsity.png'}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcrl",
        description="multimodal causal representation learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic SCM dataset")
    p.add_argument("--case", help="1, 2, 3 or 'ablation'")
    p.add_argument("--sparsity", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("check-conditions",
                       help="verify identifiability conditions on a generator")
    p.add_argument("--dataset")
    p.add_argument("--case", type=int)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-points", type=int, default=64)
    p.add_argument("--num-t-samples", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_check_conditions)

    p = sub.add_parser("train", help="fit the estimation model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--flow", choices=["spline", "affine"])
    p.add_argument("--alpha-ind", type=float)
    p.add_argument("--alpha-sp", type=float)
    p.add_argument("--alpha-recon", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("discover", help="PC skeleton + orientation over latents")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--matrix", help=".npy matrix instead of a checkpoint")
    p.add_argument("--aux", help="CSV with a header row of auxiliary columns")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--max-cond-set", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("mnist-build", help="build the variant-mnist dataset")
    p.add_argument("--mnist-dir")
    p.add_argument("--fashion-dir")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mnist_build)

    p = sub.add_parser("report", help="aggregate run directories into a table")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ModelSamplingError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
