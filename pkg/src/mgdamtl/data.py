"""Datasets: IDX files, MultiMNIST composites and synthetic multi-task problems."""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .core_types import STREAM_DATA, GradientMatrix, LossVector, rng_stream
from .models import Batch, EncoderSpec, HeadSpec, LossKind, MtlModel, encode, head_forward

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
_IDX_RANK = {IDX_LABELS: 1, IDX_IMAGES: 3}

DATASET_VERSION = 1


@dataclass(frozen=True)
class IdxTensor:
    magic: int
    dims: tuple[int, ...]
    data: bytes

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.dims)


def parse_idx(buf: bytes) -> IdxTensor:
    """Parse an unsigned-byte IDX file (rank 1 labels or rank 3 images)."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise ValueError(f"truncated IDX header at offset 0: expected 4 bytes, got {len(buf)}")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in _IDX_RANK:
        raise ValueError(f"unsupported IDX magic 0x{magic:08x} at offset 0 "
                         f"(expected 0x{IDX_LABELS:08x} or 0x{IDX_IMAGES:08x})")
    rank = _IDX_RANK[magic]
    header = 4 + 4 * rank
    if len(buf) < header:
        raise ValueError(f"truncated IDX header at offset 4: expected {4 * rank} bytes, got {len(buf) - 4}")
    dims = struct.unpack(f">{rank}I", buf[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    got = len(buf) - header
    if got != expected:
        kind = "truncated" if got < expected else "oversized"
        raise ValueError(f"{kind} IDX payload at offset {header}: expected {expected}, got {got}")
    return IdxTensor(magic, tuple(int(d) for d in dims), buf[header:])


def encode_idx(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr)
    if a.dtype != np.uint8:
        raise ValueError(f"IDX writer only supports uint8, got {a.dtype}")
    magic = {1: IDX_LABELS, 3: IDX_IMAGES}.get(a.ndim)
    if magic is None:
        raise ValueError(f"IDX writer supports rank 1 or 3, got rank {a.ndim}")
    return struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes()


def read_idx(path: str | os.PathLike) -> IdxTensor:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return parse_idx(fh.read())


def write_idx(arr: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_idx(arr))


@dataclass
class MultiTaskDataset:
    """Inputs, one label array per task, and a split tag per example."""

    inputs: np.ndarray
    labels: list[np.ndarray]
    split: np.ndarray
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        self.split = np.asarray(self.split, dtype="<U5")
        if self.split.shape != (n,):
            raise ValueError(f"split tags must have length {n}")
        unknown = set(np.unique(self.split)) - {"train", "val", "test"}
        if unknown:
            raise ValueError(f"unknown split tags {sorted(unknown)}")
        for t, y in enumerate(self.labels):
            if len(y) != n:
                raise ValueError(f"task {t} has {len(y)} labels for {n} inputs")

    @property
    def n_tasks(self) -> int:
        return len(self.labels)

    def indices(self, split: str) -> np.ndarray:
        return np.nonzero(self.split == split)[0]

    def flat_inputs(self, idx=None) -> np.ndarray:
        x = self.inputs if idx is None else self.inputs[idx]
        x = x.reshape(x.shape[0], -1)
        if x.dtype == np.uint8:
            return x.astype(np.float64) / 255.0
        return x.astype(np.float64)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.flat_inputs(idx), [y[idx] for y in self.labels])

    def split_batch(self, split: str) -> Batch:
        return self.batch(self.indices(split))

    def save(self, path: str | os.PathLike) -> None:
        header = {"format": "mgdamtl-dataset", "version": DATASET_VERSION, "seed": int(self.seed),
                  "config": self.config}
        arrays = {"header": np.array(json.dumps(header, sort_keys=True)), "inputs": self.inputs,
                  "split": self.split}
        for t, y in enumerate(self.labels):
            arrays[f"labels_{t}"] = y
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike, expect_seed: int | None = None,
             expect_config: dict | None = None) -> "MultiTaskDataset":
        """Load a cache file; raises if its seed or config differs from the expected ones."""
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != "mgdamtl-dataset" or header.get("version") != DATASET_VERSION:
                raise ValueError(f"{path}: not a version-{DATASET_VERSION} dataset cache")
            if expect_seed is not None and header["seed"] != expect_seed:
                raise ValueError(f"{path}: stale cache (seed {header['seed']}, expected {expect_seed})")
            if expect_config is not None and header["config"] != json.loads(json.dumps(expect_config)):
                raise ValueError(f"{path}: stale cache (config differs)")
            n_tasks = sum(1 for k in data.files if k.startswith("labels_"))
            return cls(data["inputs"].copy(), [data[f"labels_{t}"].copy() for t in range(n_tasks)],
                       data["split"].copy(), header["seed"], header["config"])


def compose_pair(top_left: np.ndarray, bottom_right: np.ndarray, shift: int = 8, combine: str = "max") -> np.ndarray:
    """Overlay two equal-size images on a canvas ``shift`` pixels larger."""
    h, w = top_left.shape
    canvas_a = np.zeros((h + shift, w + shift), dtype=np.uint8)
    canvas_b = np.zeros_like(canvas_a)
    canvas_a[:h, :w] = top_left
    canvas_b[shift:, shift:] = bottom_right
    if combine == "max":
        return np.maximum(canvas_a, canvas_b)
    if combine == "clip-sum":
        return np.minimum(canvas_a.astype(np.int32) + canvas_b, 255).astype(np.uint8)
    raise ValueError(f"unknown overlap rule {combine!r}")


def multimnist_partners(n_source: int, n_composites: int, seed: int,
                        stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Base index ``k mod n_source`` and a partner drawn uniformly from the other images."""
    if n_source < 2:
        raise ValueError(f"need at least 2 source images, got {n_source}")
    rng = rng_stream(seed, STREAM_DATA, 10 + stream)
    base = np.arange(n_composites) % n_source
    r = rng.integers(0, n_source - 1, size=n_composites)
    partner = np.where(r < base, r, r + 1)
    return base, partner


def build_multimnist(images: np.ndarray, labels: np.ndarray, seed: int, n_composites: int | None = None,
                     shift: int = 8, combine: str = "max", split: str = "train",
                     stream: int = 0) -> MultiTaskDataset:
    """Two-digit composites: image ``i`` top-left, a random other image bottom-right.

    Task 0 is the top-left digit, task 1 the bottom-right digit. With
    ``n_composites`` larger than the source set, base images are reused in
    order with fresh partners.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise ValueError("empty source image set")
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise ValueError(f"expected images (n, h, w) and labels (n,), got {images.shape} and {labels.shape}")
    n = images.shape[0] if n_composites is None else int(n_composites)
    base, partner = multimnist_partners(images.shape[0], n, seed, stream)
    h, w = images.shape[1:]
    out = np.zeros((n, h + shift, w + shift), dtype=np.uint8)
    for k in range(n):
        out[k] = compose_pair(images[base[k]], images[partner[k]], shift, combine)
    config = {"kind": "multimnist", "n_source": int(images.shape[0]), "n_composites": n, "shift": shift,
              "combine": combine}
    return MultiTaskDataset(out, [labels[base].astype(np.int64), labels[partner].astype(np.int64)],
                            np.full(n, split), seed, config)


def multimnist_splits(train_images, train_labels, test_images, test_labels, seed: int, n_train: int = 10_000,
                      n_test: int = 2_000, val_fraction: float = 0.1, shift: int = 8,
                      combine: str = "max") -> MultiTaskDataset:
    """Train/val composites from the training source, test composites from the test source."""
    tr = build_multimnist(train_images, train_labels, seed, n_train, shift, combine)
    te = build_multimnist(test_images, test_labels, seed, n_test, shift, combine, split="test", stream=1)
    n_val = int(round(val_fraction * n_train))
    split = np.full(n_train, "train", dtype="<U5")
    split[rng_stream(seed, STREAM_DATA, 1).permutation(n_train)[:n_val]] = "val"
    config = dict(tr.config, n_train=n_train, n_test=n_test, val_fraction=val_fraction)
    return MultiTaskDataset(np.concatenate([tr.inputs, te.inputs]),
                            [np.concatenate([a, b]) for a, b in zip(tr.labels, te.labels)],
                            np.concatenate([split, te.split]), seed, config)


def load_mnist_dir(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read the four standard MNIST IDX files (optionally gzipped) from ``path``."""
    names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
             "t10k-labels-idx1-ubyte"]
    out = []
    for name in names:
        for cand in (name, name + ".gz"):
            p = os.path.join(path, cand)
            if os.path.exists(p):
                out.append(read_idx(p).to_array())
                break
        else:
            raise FileNotFoundError(f"missing {name}[.gz] in {path}")
    return tuple(out)


def digits_as_mnist(seed: int = 0, size: int = 28, box: int = 20, test_fraction: float = 1 / 6):
    """MNIST-shaped stand-in built from scikit-learn's bundled 8x8 digits.

    Each digit is upsampled to ``box`` x ``box``, rescaled to 0..255 and
    centred on a ``size`` x ``size`` canvas. Returns
    ``(train_images, train_labels, test_images, test_labels)`` as uint8.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = digits.images / 16.0
    up = np.stack([zoom(im, box / 8.0, order=1) for im in imgs])
    up = np.clip(np.rint(up * 255.0), 0, 255).astype(np.uint8)
    pad = (size - box) // 2
    canvas = np.zeros((len(up), size, size), dtype=np.uint8)
    canvas[:, pad:pad + box, pad:pad + box] = up
    labels = digits.target.astype(np.uint8)
    order = rng_stream(seed, STREAM_DATA, 2).permutation(len(labels))
    n_test = int(round(test_fraction * len(labels)))
    te, tr = order[:n_test], order[n_test:]
    return canvas[tr], labels[tr], canvas[te], labels[te]


@dataclass(frozen=True)
class QuadraticTasks:
    """``L_t(theta) = |theta - c_t|^2``; the Pareto set is the convex hull of the centres."""

    centers: np.ndarray

    @property
    def n_tasks(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def losses(self, theta) -> LossVector:
        diff = np.asarray(theta, dtype=np.float64) - self.centers
        return LossVector(np.einsum("ij,ij->i", diff, diff))

    def gradients(self, theta) -> GradientMatrix:
        return GradientMatrix(2.0 * (np.asarray(theta, dtype=np.float64) - self.centers))

    def hull_distance(self, theta) -> float:
        """Euclidean distance from ``theta`` to the convex hull of the centres."""
        from .oracles import face_enumeration_min_norm

        diff = np.asarray(theta, dtype=np.float64) - self.centers
        _, val = face_enumeration_min_norm(diff @ diff.T)
        return float(np.sqrt(val))

    def in_pareto_set(self, theta, tol: float = 1e-6) -> bool:
        return self.hull_distance(theta) <= tol


def synth_quadratic_tasks(n_tasks: int, dim: int, centers=None, seed: int = 0) -> QuadraticTasks:
    if n_tasks < 2:
        raise ValueError("need at least two tasks")
    if centers is None:
        centers = rng_stream(seed, STREAM_DATA, 0).normal(size=(n_tasks, dim))
    c = np.array(centers, dtype=np.float64)
    if c.shape != (n_tasks, dim):
        raise ValueError(f"centres must have shape {(n_tasks, dim)}, got {c.shape}")
    if len({tuple(r) for r in c.tolist()}) != n_tasks:
        raise ValueError("centres must be distinct")
    return QuadraticTasks(c)


def _split_tags(n: int, seed: int, val_fraction: float, test_fraction: float) -> np.ndarray:
    tags = np.full(n, "train", dtype="<U5")
    perm = rng_stream(seed, STREAM_DATA, 1).permutation(n)
    n_val, n_test = int(round(val_fraction * n)), int(round(test_fraction * n))
    tags[perm[:n_val]] = "val"
    tags[perm[n_val:n_val + n_test]] = "test"
    return tags


def synth_mtl_regression(n_tasks: int, d_in: int, d_repr: int, noise: float, seed: int, n_samples: int = 1000,
                         hidden: int = 0, val_fraction: float = 0.1,
                         test_fraction: float = 0.1) -> tuple[MultiTaskDataset, MtlModel]:
    """Teacher-student regression.

    A random teacher (linear encoder, or tanh MLP when ``hidden > 0``) with
    one scalar head per task produces targets; Gaussian noise of standard
    deviation ``noise`` is added, so the achievable per-task loss is about
    ``noise**2``. Returns the dataset and the teacher.
    """
    enc = EncoderSpec("mlp" if hidden else "linear", d_in, d_repr, hidden)
    heads = [HeadSpec(1, LossKind.MSE)] * n_tasks
    teacher = MtlModel.init(enc, heads, seed=10_000 + seed)
    rng = rng_stream(seed, STREAM_DATA, 0)
    x = rng.normal(size=(n_samples, d_in))
    z, _ = encode(teacher, x)
    ys = [head_forward(teacher, t, z)[:, 0] + noise * rng.normal(size=n_samples) for t in range(n_tasks)]
    config = {"kind": "regression", "n_tasks": n_tasks, "d_in": d_in, "d_repr": d_repr, "noise": noise,
              "n_samples": n_samples, "hidden": hidden}
    return MultiTaskDataset(x, ys, _split_tags(n_samples, seed, val_fraction, test_fraction), seed, config), teacher


def synth_competing_tasks(seed: int, n_samples: int = 512, angle_deg: float = 60.0, noise: float = 0.0,
                          val_fraction: float = 0.1, test_fraction: float = 0.1) -> MultiTaskDataset:
    """Two scalar regression tasks that need different 1-D representations.

    ``x`` is standard normal in 2-D and task ``t`` has target ``u_t . x`` for
    unit vectors ``u_0``, ``u_1`` separated by ``angle_deg``. A student whose
    representation is one-dimensional must pick a direction between them, so
    the tasks compete for it while dedicated models fit both exactly.
    """
    rng = rng_stream(seed, STREAM_DATA, 0)
    x = rng.normal(size=(n_samples, 2))
    phi = rng.uniform(0, 2 * np.pi)
    ang = np.deg2rad(angle_deg)
    u0 = np.array([np.cos(phi), np.sin(phi)])
    u1 = np.array([np.cos(phi + ang), np.sin(phi + ang)])
    ys = [x @ u0 + noise * rng.normal(size=n_samples), x @ u1 + noise * rng.normal(size=n_samples)]
    config = {"kind": "competing", "n_samples": n_samples, "angle_deg": angle_deg, "noise": noise}
    return MultiTaskDataset(x, ys, _split_tags(n_samples, seed, val_fraction, test_fraction), seed, config)
