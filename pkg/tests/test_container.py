import json

import numpy as np
import pytest

import mmcrl
from mmcrl import container


@pytest.fixture()
def small_dataset():
    spec = mmcrl.case_preset(1, n_samples=40, seed=5)
    graph = mmcrl.sample_latent_graph(spec, spec.seed)
    model = mmcrl.sample_structural_model(spec, graph, spec.seed)
    return mmcrl.generate_dataset(spec, graph, model)


class TestTensorDir:
    def test_round_trip(self, tmp_path):
        fields = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
                  "b": np.arange(4, dtype=np.int64)}
        h = container.save_tensors(tmp_path / "t", fields, meta={"k": 1})
        loaded, manifest = container.load_tensors(tmp_path / "t")
        np.testing.assert_array_equal(loaded["a"], fields["a"])
        np.testing.assert_array_equal(loaded["b"], fields["b"])
        assert manifest["meta"]["k"] == 1
        assert manifest["content_hash"] == h

    def test_hash_detects_corruption(self, tmp_path):
        container.save_tensors(tmp_path / "t", {"a": np.zeros(4, np.float32)})
        target = tmp_path / "t" / "a.bin"
        raw = bytearray(target.read_bytes())
        raw[0] ^= 0xFF
        target.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="hash"):
            container.load_tensors(tmp_path / "t")

    def test_files_are_little_endian_float32(self, tmp_path):
        arr = np.array([1.5, -2.0], dtype=np.float32)
        container.save_tensors(tmp_path / "t", {"x": arr})
        raw = (tmp_path / "t" / "x.bin").read_bytes()
        assert np.frombuffer(raw, dtype="<f4").tolist() == [1.5, -2.0]


class TestDatasetContainer:
    def test_round_trip(self, tmp_path, small_dataset):
        container.save_dataset(tmp_path / "d", small_dataset)
        back = container.load_dataset(tmp_path / "d")
        assert back.num_modalities == small_dataset.num_modalities
        for a, b in zip(back.observations, small_dataset.observations):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.latents, small_dataset.latents)
        np.testing.assert_array_equal(back.graph.adjacency,
                                      small_dataset.graph.adjacency)
        assert back.provenance == json.loads(json.dumps(small_dataset.provenance))

    def test_manifest_carries_spec_echo(self, tmp_path, small_dataset):
        container.save_dataset(tmp_path / "d", small_dataset)
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        echo = manifest["meta"]["provenance"]["spec"]
        assert echo["obs_dims"] == [15, 15]
        assert "content_hash" in manifest

    def test_dataset_id_stable(self, tmp_path, small_dataset):
        container.save_dataset(tmp_path / "d1", small_dataset)
        container.save_dataset(tmp_path / "d2", small_dataset)
        assert container.dataset_id(tmp_path / "d1") == \
            container.dataset_id(tmp_path / "d2")

    def test_optional_fields_absent(self, tmp_path):
        ds = mmcrl.MultimodalDataset(
            observations=[np.zeros((5, 3), np.float32)])
        container.save_dataset(tmp_path / "d", ds)
        back = container.load_dataset(tmp_path / "d")
        assert back.latents is None and back.graph is None
