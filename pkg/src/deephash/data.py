"""Datasets: synthetic generation, stratified splitting and on-disk formats.

Two feature formats are supported:

* ``feat-bin``: ``b"FEAT"``, u32 version, u64 n, u32 d, then ``n*d`` f32
  features (row-major) and ``n`` u32 labels, all little-endian.
* ``csv``: one ``label,f0,...,f{d-1}`` line per row, no header.

Packed sign codes use the ``BCOD`` layout (see :func:`write_codes`).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BadMagicError, ConfigError, FormatError, TruncatedError

FEAT_MAGIC = b"FEAT"
BCOD_MAGIC = b"BCOD"
FORMAT_VERSION = 1

_FEAT_HEADER = struct.Struct("<4sIQI")  # 20 bytes
_BCOD_HEADER = struct.Struct("<4sIQI")


@dataclass
class Dataset:
    """Feature matrix with dense integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int = field(default=-1)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match n={self.features.shape[0]}"
            )
        if self.n_classes < 0:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.n_classes)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact comparison of features, labels and class count."""
        return (
            self.n_classes == other.n_classes
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class BlobSpec:
    classes: int = 10
    dim: int = 64
    samples_per_class: int = 200
    center_scale: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self):
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if not self.center_scale > 0:
            raise ConfigError(f"center_scale must be > 0, got {self.center_scale}")
        if not self.noise_sigma > 0:
            raise ConfigError(f"noise_sigma must be > 0, got {self.noise_sigma}")


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Class centers used by :func:`generate_blobs` for ``spec`` (float64)."""
    rng = np.random.default_rng(spec.seed)
    return rng.normal(0.0, spec.center_scale, size=(spec.classes, spec.dim))


def generate_blobs(spec: BlobSpec) -> Dataset:
    """Gaussian class blobs: isotropic noise around normally drawn centers.

    Rows are grouped by class (class 0 first). Output is a pure function of
    ``spec``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.center_scale, size=(spec.classes, spec.dim))
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.noise_sigma, size=(labels.size, spec.dim))
    return Dataset(centers[labels] + noise, labels, spec.classes)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split.

    For each class, ``round(test_fraction * count)`` shuffled rows go to the
    test set. Both outputs keep the original row order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(ds.n, dtype=bool)
    for c in range(ds.n_classes):
        rows = np.flatnonzero(ds.labels == c)
        if rows.size == 0:
            continue
        if rows.size < 2:
            raise ConfigError(f"class {c} has fewer than 2 samples; cannot split")
        n_test = int(round(test_fraction * rows.size))
        test_mask[rng.permutation(rows)[:n_test]] = True
    return ds.subset(np.flatnonzero(~test_mask)), ds.subset(np.flatnonzero(test_mask))


def _check_dense(labels: np.ndarray, n_classes: int | None) -> int:
    if labels.size == 0:
        return 0 if n_classes is None else n_classes
    if n_classes is not None:
        if labels.max() >= n_classes:
            raise FormatError(f"label {int(labels.max())} out of range for {n_classes} classes")
        return n_classes
    c = int(labels.max()) + 1
    missing = np.setdiff1d(np.arange(c), labels)
    if missing.size:
        raise FormatError(f"class labels are not dense; missing {missing[:10].tolist()}")
    return c


def write_features(ds: Dataset, path, format: str = "feat-bin") -> None:
    path = Path(path)
    if format == "feat-bin":
        header = _FEAT_HEADER.pack(FEAT_MAGIC, FORMAT_VERSION, ds.n, ds.d)
        with open(path, "wb") as f:
            f.write(header)
            f.write(ds.features.astype("<f4").tobytes())
            f.write(ds.labels.astype("<u4").tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            for label, row in zip(ds.labels, ds.features):
                writer.writerow([int(label)] + [str(v) for v in row])
    else:
        raise ValueError(f"unknown feature format {format!r}")


def read_features(path, format: str = "feat-bin", n_classes: int | None = None) -> Dataset:
    """Load a dataset written by :func:`write_features` or any conforming tool.

    Labels must be dense ``0..C-1`` unless ``n_classes`` is given, in which
    case they only need to be below it.
    """
    path = Path(path)
    if format == "feat-bin":
        raw = path.read_bytes()
        if len(raw) < _FEAT_HEADER.size:
            raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
        magic, version, n, d = _FEAT_HEADER.unpack_from(raw)
        if magic != FEAT_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}, expected {FEAT_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        expected = _FEAT_HEADER.size + 4 * n * d + 4 * n
        if len(raw) < expected:
            raise TruncatedError(f"{path}: expected {expected} bytes, found {len(raw)}")
        if len(raw) > expected:
            raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
        off = _FEAT_HEADER.size
        feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off + 4 * n * d)
    elif format == "csv":
        rows, lab = [], []
        with open(path, newline="") as f:
            for lineno, rec in enumerate(csv.reader(f), start=1):
                if not rec:
                    continue
                try:
                    lab.append(int(rec[0]))
                    rows.append([float(v) for v in rec[1:]])
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
                if rows and len(rows[-1]) != len(rows[0]):
                    raise FormatError(f"{path}:{lineno}: expected {len(rows[0])} features")
                if lab[-1] < 0:
                    raise FormatError(f"{path}:{lineno}: negative label {lab[-1]}")
        d = len(rows[0]) if rows else 0
        feats = np.array(rows, dtype=np.float32).reshape(len(rows), d)
        labels = np.array(lab, dtype=np.int64)
    else:
        raise ValueError(f"unknown feature format {format!r}")
    labels = labels.astype(np.int64)
    c = _check_dense(labels, n_classes)
    try:
        return Dataset(feats.copy(), labels, c)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_codes(codes, labels, path) -> None:
    """Write packed codes in the BCOD layout.

    ``b"BCOD"``, u32 version, u64 n, u32 nbits, then ``ceil(nbits/64)`` u64
    words per row and ``n`` u32 labels (little-endian). Bit ``j`` of a code
    lives in word ``j // 64`` at position ``j % 64``; ``+1`` is a set bit.
    """
    labels = np.asarray(labels)
    if labels.shape != (codes.n,):
        raise ValueError(f"{labels.shape[0]} labels for {codes.n} codes")
    with open(path, "wb") as f:
        f.write(_BCOD_HEADER.pack(BCOD_MAGIC, FORMAT_VERSION, codes.n, codes.nbits))
        f.write(codes.words.astype("<u8").tobytes())
        f.write(labels.astype("<u4").tobytes())


def read_codes(path):
    """Inverse of :func:`write_codes`; returns ``(PackedCodes, labels)``."""
    from .hashing import PackedCodes, words_per_row

    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _BCOD_HEADER.size:
        raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, n, nbits = _BCOD_HEADER.unpack_from(raw)
    if magic != BCOD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {BCOD_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if nbits < 1:
        raise FormatError(f"{path}: nbits must be >= 1, got {nbits}")
    w = words_per_row(nbits)
    expected = _BCOD_HEADER.size + 8 * n * w + 4 * n
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes (nbits/word count mismatch?)")
    off = _BCOD_HEADER.size
    words = np.frombuffer(raw, dtype="<u8", count=n * w, offset=off).astype(np.uint64)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off + 8 * n * w).astype(np.int64)
    codes = PackedCodes(words.reshape(n, w), nbits)
    return codes, labels
