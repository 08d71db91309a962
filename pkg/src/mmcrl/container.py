"""On-disk tensor containers shared by datasets and checkpoints.

A container is a directory holding one little-endian raw tensor file per
field plus ``manifest.json`` describing shapes, dtypes, field names, any
extra metadata (spec echo, config echo, step counter) and a content hash
over the field bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .scm_datagen import GeneratorSpec, LatentGraph, MultimodalDataset

__all__ = [
    "save_tensors", "load_tensors",
    "save_dataset", "load_dataset", "dataset_id",
]

FORMAT = "mmcrl-tensor-dir-v1"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1"}


def _field_file(name: str) -> str:
    return name.replace("/", "__").replace(".", "__") + ".bin"


def save_tensors(path, fields: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write fields + manifest.json under ``path``; returns the content hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest_fields = {}
    hasher = hashlib.sha256()
    for name in sorted(fields):
        arr = np.asarray(fields[name])
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise ValueError(f"unsupported field dtype {dtype_name} for {name!r}")
        arr = np.ascontiguousarray(arr.astype(_DTYPES[dtype_name]))
        fname = _field_file(name)
        raw = arr.tobytes()
        (path / fname).write_bytes(raw)
        hasher.update(name.encode())
        hasher.update(raw)
        manifest_fields[name] = {"file": fname, "shape": list(arr.shape),
                                 "dtype": dtype_name}
    content_hash = "sha256:" + hasher.hexdigest()
    manifest = {"format": FORMAT, "fields": manifest_fields,
                "content_hash": content_hash}
    if meta:
        manifest["meta"] = meta
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return content_hash


def load_tensors(path, verify: bool = True) -> tuple[dict[str, np.ndarray], dict]:
    """Read all fields and the manifest; optionally verify the content hash."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} directory: {path}")
    fields = {}
    hasher = hashlib.sha256()
    for name in sorted(manifest["fields"]):
        info = manifest["fields"][name]
        raw = (path / info["file"]).read_bytes()
        hasher.update(name.encode())
        hasher.update(raw)
        arr = np.frombuffer(raw, dtype=_DTYPES[info["dtype"]])
        fields[name] = arr.reshape(info["shape"]).astype(info["dtype"])
    if verify and manifest.get("content_hash") != "sha256:" + hasher.hexdigest():
        raise ValueError(f"content hash mismatch in {path}")
    return fields, manifest


def save_dataset(path, dataset: MultimodalDataset) -> str:
    """Serialize a MultimodalDataset to a container directory."""
    fields = {f"observations_{m}": x for m, x in enumerate(dataset.observations)}
    for name in ("latents", "exogenous", "noise"):
        v = getattr(dataset, name)
        if v is not None:
            fields[name] = v
    meta = {"kind": "dataset",
            "num_modalities": dataset.num_modalities,
            "provenance": dataset.provenance}
    if dataset.graph is not None:
        meta["graph"] = dataset.graph.to_dict()
    return save_tensors(path, fields, meta)


def load_dataset(path) -> MultimodalDataset:
    fields, manifest = load_tensors(path)
    meta = manifest.get("meta", {})
    n_mod = meta.get("num_modalities")
    if n_mod is None:
        n_mod = sum(1 for k in fields if k.startswith("observations_"))
    observations = [fields[f"observations_{m}"] for m in range(n_mod)]
    graph = LatentGraph.from_dict(meta["graph"]) if "graph" in meta else None
    return MultimodalDataset(
        observations=observations,
        latents=fields.get("latents"),
        exogenous=fields.get("exogenous"),
        noise=fields.get("noise"),
        graph=graph,
        provenance=meta.get("provenance", {}))


def dataset_id(path) -> str:
    """Short identifier: first 12 hex chars of the container's content hash."""
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    return manifest["content_hash"].split(":", 1)[1][:12]


def spec_from_provenance(provenance: dict) -> GeneratorSpec | None:
    if provenance.get("kind") == "scm" and "spec" in provenance:
        return GeneratorSpec.from_dict(provenance["spec"])
    return None
