"""Dataset readers and the synthetic covariance-discriminative task."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
CONTAINER_FORMAT = "gcpool-dataset"
CONTAINER_VERSION = 1


class FormatError(ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "all"
    num_classes: int = 10
    # model input = (pixels - pixel_offset) / pixel_scale
    pixel_offset: float = 0.0
    pixel_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes,
                       self.pixel_offset, self.pixel_scale, dict(self.meta))

    def to_pixels(self, images: np.ndarray | None = None) -> np.ndarray:
        images = self.images if images is None else images
        return np.clip(images * self.pixel_scale + self.pixel_offset, 0.0, 1.0)

    def from_pixels(self, pixels: np.ndarray) -> np.ndarray:
        return (pixels - self.pixel_offset) / self.pixel_scale


# -- IDX / CIFAR-10 ----------------------------------------------------------

def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (MNIST layout).

    Image files (magic 0x803) come back as float64 in [0, 1] with shape
    ``(n, rows, cols)``; label files (magic 0x801) as int64 of shape ``(n,)``.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC):
        raise FormatError(
            f"{path}: bad magic, expected 0x{IDX_IMAGE_MAGIC:08x} or 0x{IDX_LABEL_MAGIC:08x},"
            f" got 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) < head + count:
        raise FormatError(f"{path}: expected {count} data bytes, file has {len(raw) - head}",
                          len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)
    if magic == IDX_LABEL_MAGIC:
        return data.astype(np.int64)
    return data.astype(np.float64) / 255.0


def load_mnist(images_path, labels_path, split: str = "train") -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise FormatError("image and label files do not match")
    return Dataset(images[:, None, :, :], labels, split, 10)


def read_cifar10_bin(path, split: str = "train") -> Dataset:
    """Parse a CIFAR-10 binary batch: 3073-byte records, label then planar RGB."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}",
                          len(raw) - len(raw) % CIFAR_RECORD)
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= 10)
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    images = recs[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, split, 10)


# -- synthetic covariance task ---------------------------------------------

@dataclass(frozen=True)
class SyntheticCovTaskSpec:
    classes: int = 4
    channels: int = 4
    height: int = 8
    width: int = 8
    spectrum_ratio: float = 0.6  # eigenvalue i is ratio**i before trace normalization
    train_per_class: int = 128
    test_per_class: int = 64
    seed: int = 0

    @property
    def spatial(self) -> int:
        return self.height * self.width


def class_covariances(spec: SyntheticCovTaskSpec) -> np.ndarray:
    """Per-class covariances ``R_c diag(s) R_c^T`` sharing one spectrum of trace ``d``."""
    d = spec.channels
    if d < 2 or spec.classes < 2:
        raise ValueError("need at least 2 channels and 2 classes")
    if not 0.0 < spec.spectrum_ratio < 1.0:
        raise ValueError(f"spectrum_ratio must lie in (0, 1), got {spec.spectrum_ratio}; "
                         "a flat spectrum makes every class covariance identical")
    s = spec.spectrum_ratio ** np.arange(d)
    s = s * (d / s.sum())
    rng = np.random.default_rng([spec.seed, 1])
    covs = []
    for _ in range(spec.classes):
        Q, R = np.linalg.qr(rng.standard_normal((d, d)))
        Q = Q * np.sign(np.diag(R))
        covs.append((Q * s) @ Q.T)
    return np.stack(covs)


def sample_class(cov: np.ndarray, n_samples: int, n_rows: int, rng) -> np.ndarray:
    """Draw ``n_samples`` matrices of ``n_rows`` zero-mean rows with covariance ``cov``."""
    w, V = np.linalg.eigh(cov)
    L = V * np.sqrt(np.maximum(w, 0.0))
    z = rng.standard_normal((n_samples, n_rows, cov.shape[0]))
    return z @ L.T


def gen_cov_task(spec: SyntheticCovTaskSpec, seed: int | None = None) -> tuple[Dataset, Dataset]:
    """Generate ``(train, test)`` splits of the covariance task.

    Each sample is a ``channels x height x width`` image whose pixel vectors
    are i.i.d. zero-mean Gaussian with the class covariance.  Class means are
    all zero and the class covariances share one trace, so only second-order
    structure separates the classes.  Gaussian draws use numpy's PCG64
    ``standard_normal``.
    """
    if seed is not None and seed != spec.seed:
        spec = SyntheticCovTaskSpec(**{**spec.__dict__, "seed": seed})
    covs = class_covariances(spec)
    d = spec.channels
    pixel_scale = 8.0 * np.sqrt(covs[:, np.arange(d), np.arange(d)].max())
    out = []
    for split, per_class, stream in (("train", spec.train_per_class, 2),
                                     ("test", spec.test_per_class, 3)):
        rng = np.random.default_rng([spec.seed, stream])
        xs, ys = [], []
        for c in range(spec.classes):
            x = sample_class(covs[c], per_class, spec.spatial, rng)
            xs.append(x)
            ys.append(np.full(per_class, c, dtype=np.int64))
        X = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(len(y))
        X, y = X[perm], y[perm]
        images = X.transpose(0, 2, 1).reshape(len(y), d, spec.height, spec.width)
        meta = {"task": "cov", "spec": dict(spec.__dict__), "covariances": covs.tolist()}
        out.append(Dataset(images, y, split, spec.classes, 0.5, pixel_scale, meta))
    return out[0], out[1]


# -- container -------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset to the versioned ``.npz`` container described in the README."""
    header = {
        "format": CONTAINER_FORMAT, "version": CONTAINER_VERSION, "split": ds.split,
        "num_classes": ds.num_classes, "pixel_offset": ds.pixel_offset,
        "pixel_scale": ds.pixel_scale, "meta": ds.meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8),
                 images=np.ascontiguousarray(ds.images, dtype="<f8"),
                 labels=np.ascontiguousarray(ds.labels, dtype="<i8"))


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CONTAINER_FORMAT:
            raise FormatError(f"{path}: not a {CONTAINER_FORMAT} container")
        if header.get("version") != CONTAINER_VERSION:
            raise FormatError(f"{path}: unsupported container version {header.get('version')}")
        return Dataset(np.array(data["images"], dtype=np.float64),
                       np.array(data["labels"], dtype=np.int64), header["split"],
                       header["num_classes"], header["pixel_offset"], header["pixel_scale"],
                       header["meta"])
