import json
import os
from pathlib import Path

import numpy as np
import pytest

from mmcrl.cli import main

from helpers_idx import write_glyph_archives


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "c1"
    code = main(["generate", "--case", "1", "--sparsity", "0.75",
                 "--seed", "7", "--n", "500", "--out", str(out)])
    assert code == 0
    return out


class TestGenerate:
    def test_creates_manifest_and_resolved_config(self, dataset_dir):
        assert (dataset_dir / "manifest.json").exists()
        resolved = json.loads((dataset_dir / "config.resolved.json").read_text())
        assert resolved["spec"]["sparsity_ratio"] == 0.75
        assert resolved["spec"]["seed"] == 7

    def test_unknown_case_is_config_error(self, tmp_path):
        assert main(["generate", "--case", "9", "--out", str(tmp_path / "x")]) == 2

    def test_config_file_with_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"spec": {"bogus_key": 1}}))
        code = main(["generate", "--config", str(cfg),
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_config_file_spec_section(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"spec": {
            "num_modalities": 2, "latent_dims": [2, 2], "exo_dims": [1, 1],
            "obs_dims": [15, 15], "sparsity_ratio": 0.5, "n_samples": 50}}))
        out = tmp_path / "d"
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        from mmcrl import container
        ds = container.load_dataset(out)
        assert ds.n_samples == 50


class TestCheckConditions:
    def test_report_written(self, dataset_dir, tmp_path):
        out = tmp_path / "cond"
        code = main(["check-conditions", "--dataset", str(dataset_dir),
                     "--num-points", "4", "--num-t-samples", "2",
                     "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "conditions.json").read_text())
        conditions = {r["condition"] for r in payload}
        assert {"A1", "A2", "condition2"} <= conditions
        for record in payload:
            assert {"modality", "condition", "holds", "margin",
                    "min_singular_value", "points_tested"} <= set(record)

    def test_needs_source(self, tmp_path):
        assert main(["check-conditions", "--out", str(tmp_path / "x")]) == 2


class TestTrainEvaluateDiscoverReport:
    @pytest.fixture(scope="class")
    def trained(self, dataset_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("train") / "run"
        cfg = out.parent / "cfg.json"
        cfg.write_text(json.dumps({
            "model": {"hidden_width": 16, "hidden_depth": 1,
                      "flow_type": "affine", "flow_depth": 1,
                      "flow_hidden": 16},
            "train": {"epochs": 2, "batch_size": 128, "eval_every": 1}}))
        code = main(["train", "--dataset", str(dataset_dir),
                     "--config", str(cfg), "--seed", "3", "--out", str(out)])
        assert code == 0
        return out

    def test_train_outputs(self, trained):
        assert (trained / "checkpoint" / "manifest.json").exists()
        assert (trained / "log.jsonl").exists()
        resolved = json.loads((trained / "config.resolved.json").read_text())
        assert resolved["train"]["seed"] == 3
        for line in (trained / "log.jsonl").read_text().strip().splitlines():
            record = json.loads(line)
            assert {"epoch", "wall_time", "recon", "ind", "sparsity"} <= set(record)

    def test_train_unknown_config_key_rejected(self, dataset_dir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"train": {"epoch": 2}}))
        code = main(["train", "--dataset", str(dataset_dir),
                     "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert code == 2

    def test_evaluate_writes_report(self, trained, dataset_dir, tmp_path):
        out = tmp_path / "eval"
        code = main(["evaluate", "--checkpoint", str(trained / "checkpoint"),
                     "--dataset", str(dataset_dir), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "metrics_report.json").read_text())
        assert report["mcc"] is not None
        assert report["shd"] is not None
        assert report["dataset_id"]

    def test_evaluate_without_ground_truth_absent_metrics(self, trained,
                                                          dataset_dir, tmp_path):
        from mmcrl import container
        ds = container.load_dataset(dataset_dir)
        import mmcrl as m
        bare = m.MultimodalDataset(observations=ds.observations)
        bare_dir = tmp_path / "bare"
        container.save_dataset(bare_dir, bare)
        out = tmp_path / "eval2"
        code = main(["evaluate", "--checkpoint", str(trained / "checkpoint"),
                     "--dataset", str(bare_dir), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "metrics_report.json").read_text())
        assert report["mcc"] is None and report["r2"] is None

    def test_discover_from_matrix(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(size=5000)
        y = x + rng.normal(size=5000)
        z = y + rng.normal(size=5000)
        mat = tmp_path / "m.npy"
        np.save(mat, np.stack([x, y, z], axis=1))
        out = tmp_path / "disc"
        code = main(["discover", "--matrix", str(mat), "--out", str(out)])
        assert code == 0
        graph = json.loads((out / "graph.json").read_text())
        pairs = {(e["source"], e["target"]) for e in graph["edges"]}
        assert pairs == {("x0", "x1"), ("x1", "x2")}
        assert (out / "graph.dot").exists()

    def test_discover_from_checkpoint(self, trained, dataset_dir, tmp_path):
        out = tmp_path / "disc2"
        code = main(["discover", "--checkpoint", str(trained / "checkpoint"),
                     "--dataset", str(dataset_dir), "--alpha", "0.01",
                     "--out", str(out)])
        assert code == 0
        assert (out / "graph.json").exists()

    def test_discover_with_aux_columns(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.normal(size=4000)
        np.save(tmp_path / "m.npy", x[:, None])
        aux = tmp_path / "aux.csv"
        y = x + rng.normal(size=4000)
        aux.write_text("age\n" + "\n".join(str(v) for v in y) + "\n")
        out = tmp_path / "disc3"
        code = main(["discover", "--matrix", str(tmp_path / "m.npy"),
                     "--aux", str(aux), "--out", str(out)])
        assert code == 0
        graph = json.loads((out / "graph.json").read_text())
        assert graph["nodes"] == ["x0", "age"]
        assert graph["edges"]

    def test_report_aggregates_runs(self, trained, dataset_dir, tmp_path):
        eval_out = tmp_path / "run1"
        main(["evaluate", "--checkpoint", str(trained / "checkpoint"),
              "--dataset", str(dataset_dir), "--out", str(eval_out)])
        # fake a second run with a sparsity ratio for the chart path
        run2 = tmp_path / "run2"
        run2.mkdir()
        (run2 / "metrics_report.json").write_text(json.dumps(
            {"mcc": 0.9, "r2": 0.8, "shd": 0, "seed": 1}))
        (run2 / "config.resolved.json").write_text(json.dumps(
            {"sparsity_ratio": 0.75}))
        out = tmp_path / "rep"
        code = main(["report", "--runs", str(eval_out), str(run2),
                     "--out", str(out)])
        assert code == 0
        rows = json.loads((out / "report.json").read_text())
        assert len(rows) == 2
        assert (out / "report.csv").exists()
        assert (out / "mcc_vs_sparsity.png").exists()
        assert (out / "mcc_vs_sparsity.svg").exists()

    def test_report_no_runs_is_config_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--runs", str(empty),
                     "--out", str(tmp_path / "r")]) == 2


class TestMnistBuild:
    def test_build_from_archives(self, tmp_path, monkeypatch):
        root = tmp_path / "data"
        write_glyph_archives(root / "mnist", n_per_class=12, seed=0)
        write_glyph_archives(root / "fashion-mnist", n_per_class=12, seed=1)
        monkeypatch.setenv("MMCRL_DATA_DIR", str(root))
        out = tmp_path / "vm"
        code = main(["mnist-build", "--n", "24", "--seed", "2",
                     "--out", str(out)])
        assert code == 0
        from mmcrl import container
        ds = container.load_dataset(out)
        assert ds.n_samples == 24
        assert ds.provenance["kind"] == "variant-mnist"

    def test_missing_archives_config_error(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MMCRL_DATA_DIR", str(tmp_path / "void"))
        assert main(["mnist-build", "--out", str(tmp_path / "x")]) == 2

    def test_no_data_dir_env_or_flags(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MMCRL_DATA_DIR", raising=False)
        assert main(["mnist-build", "--out", str(tmp_path / "x")]) == 2
