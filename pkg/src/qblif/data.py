"""Datasets, file loaders and temporal encoders.

Feature tensors are sample-first. Static datasets have shape
``(n, *feature_shape)``; framed (temporal) datasets have shape
``(n, frames, *feature_shape)``. Encoders return network input of shape
``(T, n, *feature_shape)``.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError

TASKS = ("gaussians", "temporal-xor")

# 13-byte event record: u64 timestamp (us), u16 x, u16 y, u8 polarity.
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])

_IDX_TYPES = {0x08: np.dtype("u1"), 0x09: np.dtype("i1"), 0x0B: np.dtype(">i2"),
              0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    framed: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def feature_shape(self) -> tuple:
        return self.features.shape[2:] if self.framed else self.features.shape[1:]

    def subset(self, idx, split=None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes,
                       split or self.split, self.framed)


def generate_synthetic(task: str, n_samples: int, seed: int = 0, **options) -> Dataset:
    """Deterministic toy datasets.

    ``gaussians``: ``n_classes`` isotropic clusters in ``dim`` dimensions whose
    centres are ``separation`` standard deviations apart (options
    ``n_classes=4, dim=8, separation=10.0, sigma=0.1``).

    ``temporal-xor``: two pulses drawn from ``n_patterns`` distinct patterns
    arrive in the first and last of ``frames`` frames; the label says whether
    the first pulse has the lower pattern index. Summing the frames erases
    the order, so a single-frame encoding carries no class information
    (options ``n_patterns=4, dim=16, frames=2, noise=0.3``).
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be > 0")
    rng = np.random.default_rng(seed)
    if task == "gaussians":
        n_classes = options.pop("n_classes", 4)
        dim = options.pop("dim", 8)
        separation = options.pop("separation", 10.0)
        sigma = options.pop("sigma", 0.1)
        _no_extra(options)
        if dim < n_classes:
            raise ValueError("dim must be >= n_classes")
        centres = np.eye(n_classes, dim) * (separation * sigma / np.sqrt(2.0))
        labels = rng.integers(0, n_classes, n_samples)
        features = centres[labels] + rng.normal(0.0, sigma, (n_samples, dim))
        return Dataset(features, labels, n_classes)
    if task == "temporal-xor":
        n_patterns = options.pop("n_patterns", 4)
        dim = options.pop("dim", 16)
        frames = options.pop("frames", 2)
        noise = options.pop("noise", 0.3)
        _no_extra(options)
        if n_patterns < 2 or frames < 2:
            raise ValueError("need at least 2 patterns and 2 frames")
        patterns = _block_patterns(n_patterns, dim)
        first = rng.integers(0, n_patterns, n_samples)
        second = (first + rng.integers(1, n_patterns, n_samples)) % n_patterns
        labels = (first < second).astype(np.int64)
        features = np.zeros((n_samples, frames, dim))
        features[:, 0] = patterns[first]
        features[:, -1] = patterns[second]
        if noise:
            features[:, [0, -1]] += rng.normal(0.0, noise, (n_samples, 2, dim))
        return Dataset(features, labels, 2, framed=True)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def _no_extra(options):
    if options:
        raise ValueError(f"unexpected options: {sorted(options)}")


def _block_patterns(n_patterns, dim):
    patterns = np.zeros((n_patterns, dim))
    width = max(dim // n_patterns, 1)
    for i in range(n_patterns):
        patterns[i, (i * width) % dim:(i * width) % dim + width] = 1.0
    return patterns


def train_test_split(dataset: Dataset, test_fraction: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = int(round(len(dataset) * test_fraction))
    return dataset.subset(order[n_test:], "train"), dataset.subset(order[:n_test], "test")


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

def encode_direct(features, T: int) -> np.ndarray:
    """Repeat static features at every step: ``(T, n, ...)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    features = np.asarray(features, dtype=np.float64)
    return np.broadcast_to(features, (T,) + features.shape).copy()


def encode_frames(features, T: int) -> np.ndarray:
    """Re-bin ``(n, F, ...)`` frames into ``T`` equal-duration steps by summation."""
    if T < 1:
        raise ValueError("T must be >= 1")
    features = np.asarray(features, dtype=np.float64)
    n_frames = features.shape[1]
    out = np.zeros((T, features.shape[0]) + features.shape[2:])
    for f in range(n_frames):
        out[f * T // n_frames] += features[:, f]
    return out


def encode(dataset: Dataset, T: int) -> np.ndarray:
    return encode_frames(dataset.features, T) if dataset.framed else encode_direct(dataset.features, T)


# ---------------------------------------------------------------------------
# IDX images
# ---------------------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError("IDX file is truncated")
    zero, dtype_code, ndim = struct.unpack(">HBB", blob[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise FormatError("bad IDX magic number")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError("IDX header is truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    dtype = _IDX_TYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) != header + count * dtype.itemsize:
        raise FormatError(f"IDX payload has {len(blob) - header} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(blob, dtype=dtype, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    codes = {v.newbyteorder(">").str if v.itemsize > 1 else v.str: k for k, v in _IDX_TYPES.items()}
    dtype = array.dtype.newbyteorder(">") if array.dtype.itemsize > 1 else array.dtype
    code = codes.get(dtype.str)
    if code is None:
        raise FormatError(f"dtype {array.dtype} cannot be stored as IDX")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(dtype).tobytes())


def load_labels(path) -> np.ndarray:
    """Labels from an IDX file or a delimiter-separated text file (last column)."""
    path = Path(path)
    head = path.read_bytes()[:2]
    if head == b"\x00\x00":
        return read_idx(path).astype(np.int64).ravel()
    labels = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        field = re.split(r"[,\t; ]+", line)[-1]
        try:
            labels.append(int(field))
        except ValueError:
            if not labels:  # header row
                continue
            raise FormatError(f"bad label {field!r}") from None
    return np.asarray(labels, dtype=np.int64)


def load_idx_images(path, labels_path=None, n_classes: int | None = None) -> Dataset:
    """Unsigned-byte IDX images scaled to [0, 1], shape ``(n, H, W)``."""
    images = read_idx(path)
    if images.dtype != np.uint8:
        raise FormatError("expected unsigned-byte images")
    features = images.astype(np.float64) / 255.0
    if labels_path is None:
        labels = np.zeros(len(features), dtype=np.int64)
    else:
        labels = load_labels(labels_path)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, n_classes)


# ---------------------------------------------------------------------------
# event streams
# ---------------------------------------------------------------------------

def read_events(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) % EVENT_DTYPE.itemsize:
        raise FormatError(f"event file size {len(blob)} is not a multiple of {EVENT_DTYPE.itemsize}")
    return np.frombuffer(blob, dtype=EVENT_DTYPE).copy()


def write_events(path, events):
    Path(path).write_bytes(np.asarray(events, dtype=EVENT_DTYPE).tobytes())


def make_events(t, x, y, p) -> np.ndarray:
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
    return ev


def bin_events(events, T: int, resolution, t_start=None, duration=None) -> np.ndarray:
    """Accumulate events into ``T`` equal-duration frames, shape ``(T, 2, H, W)``.

    The window is ``[t_start, t_start + duration)``; by default it spans the
    first to the last event inclusive. Channel 1 holds positive polarity.
    """
    events = np.asarray(events, dtype=EVENT_DTYPE)
    if events.size == 0:
        raise ValueError("empty event stream")
    if T < 1:
        raise ValueError("T must be >= 1")
    h, w = resolution
    t = events["t"].astype(np.int64)
    t0 = int(t.min()) if t_start is None else int(t_start)
    span = int(t.max()) - t0 + 1 if duration is None else int(duration)
    if span <= 0:
        raise ValueError("duration must be positive")
    idx = (t - t0) * T // span
    keep = (idx >= 0) & (idx < T)
    frames = np.zeros((T, 2, h, w))
    pol = (events["p"][keep] > 0).astype(np.int64)
    np.add.at(frames, (idx[keep], pol, events["y"][keep].astype(np.int64),
                       events["x"][keep].astype(np.int64)), 1.0)
    return frames


def events_dataset(streams, labels, T: int, resolution, n_classes: int | None = None) -> Dataset:
    """Framed dataset of shape ``(n, T, 2, H, W)`` from a list of event arrays."""
    features = np.stack([bin_events(ev, T, resolution) for ev in streams])
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(labels.max()) + 1
    return Dataset(features, labels, n_classes, framed=True)
