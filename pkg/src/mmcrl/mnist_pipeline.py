"""Two-modality image dataset: colored digits paired with rotated fashion
items, linked by a cross-modal class map.

Latent ground truth per pair: digit class c, hue (a jittered monotone map
of c), fashion class f = g(c) for a fixed seeded bijection g, and rotation
angle (a jittered monotone map of f, within +/-45 degrees). The ground
truth graph has the three directed edges c -> hue, c -> f, f -> angle.

Raw images come from standard IDX archives (as distributed for MNIST and
Fashion-MNIST); nothing is downloaded here.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
from scipy.ndimage import rotate

from .scm_datagen import LatentGraph, MultimodalDataset
from .seeds import stream

__all__ = ["build_variant_mnist", "read_idx", "write_idx",
           "COLORED_SHAPE", "FASHION_SHAPE"]

COLORED_SHAPE = (28, 28, 3)
FASHION_SHAPE = (28, 28, 1)

_IMAGE_FILES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
_LABEL_FILES = ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")

_DOWNLOAD_HINT = (
    "expected IDX archives (train-images-idx3-ubyte[.gz] and "
    "train-labels-idx1-ubyte[.gz]); fetch the standard MNIST / "
    "Fashion-MNIST training archives and point --mnist-dir/--fashion-dir "
    "(or MMCRL_DATA_DIR) at them")


def read_idx(path) -> np.ndarray:
    """Read one IDX tensor file, transparently handling gzip."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        zeros, dtype_code, ndim = struct.unpack(">HBB", fh.read(4))
        if zeros != 0 or dtype_code != 0x08:
            raise ValueError(f"{path}: not an unsigned-byte IDX file")
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: truncated IDX payload")
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def _find_archive(directory: Path, names: tuple[str, ...]) -> Path:
    for name in names:
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"no IDX archive found under {directory}: "
                            f"{_DOWNLOAD_HINT}")


def _load_class_images(directory) -> tuple[np.ndarray, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory; {_DOWNLOAD_HINT}")
    images = read_idx(_find_archive(directory, _IMAGE_FILES))
    labels = read_idx(_find_archive(directory, _LABEL_FILES))
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValueError("image archive must hold 28x28 images")
    if labels.shape[0] != images.shape[0]:
        raise ValueError("image/label counts disagree")
    return images, labels


def _hue_to_rgb(hue: np.ndarray) -> np.ndarray:
    """Fully saturated hue wheel; hue in [0, 1), output (n, 3) in [0, 1]."""
    h6 = (hue % 1.0) * 6.0
    k = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    one = np.ones_like(f)
    table = [
        (one, f, 0 * f), (1 - f, one, 0 * f), (0 * f, one, f),
        (0 * f, 1 - f, one), (f, 0 * f, one), (one, 0 * f, 1 - f),
    ]
    rgb = np.zeros((hue.shape[0], 3))
    for code, (r, g, b) in enumerate(table):
        sel = k == code
        rgb[sel, 0] = r[sel]
        rgb[sel, 1] = g[sel]
        rgb[sel, 2] = b[sel]
    return rgb


def build_variant_mnist(raw_mnist_dir, raw_fashion_dir, seed: int = 0,
                        n_pairs: int = 8000) -> MultimodalDataset:
    """Assemble paired colored-digit / rotated-fashion observations."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    digit_images, digit_labels = _load_class_images(raw_mnist_dir)
    fashion_images, fashion_labels = _load_class_images(raw_fashion_dir)

    digit_pool = [np.flatnonzero(digit_labels == c) for c in range(10)]
    fashion_pool = [np.flatnonzero(fashion_labels == c) for c in range(10)]
    for c in range(10):
        if digit_pool[c].size == 0 or fashion_pool[c].size == 0:
            raise ValueError(f"class {c} missing from a raw archive")

    # fixed cross-modal class map and monotone effect tables
    g_map = stream(seed, "class-map").permutation(10)
    hue_table = (np.arange(10) + 0.5) / 10.0          # hue in (0, 1)
    angle_table = np.linspace(-40.0, 40.0, 10)        # degrees

    rng_class = stream(seed, "digit-class")
    rng_hue = stream(seed, "hue-jitter")
    rng_angle = stream(seed, "angle-jitter")
    rng_pick_d = stream(seed, "digit-pick")
    rng_pick_f = stream(seed, "fashion-pick")

    c = rng_class.integers(0, 10, size=n_pairs)
    hue = hue_table[c] + rng_hue.normal(0.0, 0.005, size=n_pairs)
    f = g_map[c]
    angle = np.clip(angle_table[f] + rng_angle.normal(0.0, 0.45, size=n_pairs),
                    -45.0, 45.0)

    colored = np.empty((n_pairs,) + COLORED_SHAPE, dtype=np.float32)
    fashion = np.empty((n_pairs,) + FASHION_SHAPE, dtype=np.float32)
    rgb = _hue_to_rgb(hue)
    for k in range(n_pairs):
        d_idx = digit_pool[c[k]][rng_pick_d.integers(0, digit_pool[c[k]].size)]
        gray = digit_images[d_idx].astype(np.float32) / 255.0
        colored[k] = gray[:, :, None] * rgb[k][None, None, :]

        f_idx = fashion_pool[f[k]][rng_pick_f.integers(0, fashion_pool[f[k]].size)]
        img = fashion_images[f_idx].astype(np.float32) / 255.0
        rotated = rotate(img, angle[k], reshape=False, order=1, mode="constant")
        fashion[k, :, :, 0] = np.clip(rotated, 0.0, 1.0)

    latents = np.stack([c.astype(np.float64), hue,
                        f.astype(np.float64), angle], axis=1)
    adjacency = np.zeros((4, 4), dtype=bool)
    adjacency[1, 0] = True   # hue <- digit class
    adjacency[2, 0] = True   # fashion class <- digit class
    adjacency[3, 2] = True   # angle <- fashion class
    graph = LatentGraph(adjacency, np.asarray([0, 0, 1, 1]))

    return MultimodalDataset(
        observations=[colored.reshape(n_pairs, -1),
                      fashion.reshape(n_pairs, -1)],
        latents=latents, graph=graph,
        provenance={"kind": "variant-mnist", "seed": int(seed),
                    "n_pairs": int(n_pairs),
                    "class_map": g_map.tolist(),
                    "image_shapes": [list(COLORED_SHAPE), list(FASHION_SHAPE)]})
