"""Datasets, Dirichlet partitioning, synthetic surrogates and augmentation mixing.

Binary container (``.altds``), all integers little-endian::

    bytes 0-7    magic  b"ALTFLDS1"
    bytes 8-11   uint32 header length H
    next H bytes UTF-8 JSON header:
                 {"shape": [n, C, H, W], "dtype": "float32" | "float64" | "uint8",
                  "scale": float, "num_classes": int}
    samples      n*C*H*W values of ``dtype``, C order; value = stored * scale
    labels       n int32
    provenance   n uint8, 0 = authentic, 1 = synthetic
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

MAGIC = b"ALTFLDS1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "uint8": "u1"}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray          # (n, C, H, W) float64
    labels: np.ndarray           # (n,) int64
    num_classes: int
    synthetic: np.ndarray        # (n,) bool, per-sample provenance

    def __post_init__(self):
        if len(self.samples) == 0:
            raise DataError("dataset is empty")
        if not (len(self.samples) == len(self.labels) == len(self.synthetic)):
            raise DataError("samples, labels and provenance differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError("label outside class range")

    @classmethod
    def create(cls, samples, labels, num_classes=None, synthetic=False) -> "Dataset":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples[:, None, None, :]
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        flags = np.broadcast_to(np.asarray(synthetic, dtype=bool), labels.shape).copy()
        return cls(samples, labels, int(num_classes), flags)

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return self.samples.shape[1:]

    @property
    def provenance(self) -> str:
        if self.synthetic.all():
            return "synthetic"
        return "mixed" if self.synthetic.any() else "authentic"

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.samples[idx], self.labels[idx], self.num_classes, self.synthetic[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def flat(self) -> np.ndarray:
        return self.samples.reshape(len(self), -1)


# --- file I/O ------------------------------------------------------------------

def write_dataset(ds: Dataset, path, dtype: str = "float32", scale: float = 1.0) -> None:
    if dtype not in _DTYPES:
        raise DataError(f"unsupported dtype {dtype!r}")
    header = json.dumps({"shape": [len(ds), *ds.shape], "dtype": dtype, "scale": scale,
                         "num_classes": ds.num_classes}, sort_keys=True).encode()
    stored = ds.samples / scale
    if dtype == "uint8":
        stored = np.rint(stored)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(stored.astype(_DTYPES[dtype]).tobytes())
        fh.write(ds.labels.astype("<i4").tobytes())
        fh.write(ds.synthetic.astype("u1").tobytes())


def _parse(buf: bytes) -> Dataset:
    if buf[:8] != MAGIC:
        raise DataError("not a dataset container (bad magic)")
    (hlen,) = struct.unpack("<I", buf[8:12])
    header = json.loads(buf[12:12 + hlen])
    shape = tuple(header["shape"])
    dt = np.dtype(_DTYPES[header["dtype"]])
    n = shape[0]
    count = int(np.prod(shape))
    pos = 12 + hlen
    samples = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(shape)
    pos += count * dt.itemsize
    labels = np.frombuffer(buf, dtype="<i4", count=n, offset=pos)
    pos += 4 * n
    flags = np.frombuffer(buf, dtype="u1", count=n, offset=pos)
    if pos + n != len(buf):
        raise DataError("trailing or missing bytes in dataset container")
    return Dataset(samples.astype(np.float64) * header.get("scale", 1.0), labels.astype(np.int64),
                   int(header["num_classes"]), flags.astype(bool))


def read_dataset(path) -> Dataset:
    return _parse(Path(path).read_bytes())


def read_csv(path, shape, num_classes=None) -> Dataset:
    """Rows of ``label,v1,...,vK`` (optional header line skipped), K = prod(shape)."""
    text = Path(path).read_text().splitlines()
    if text and not text[0].split(",")[0].strip().lstrip("-").isdigit():
        text = text[1:]
    arr = np.loadtxt(io.StringIO("\n".join(text)), delimiter=",", ndmin=2)
    labels = arr[:, 0].astype(np.int64)
    samples = arr[:, 1:].reshape(len(arr), *shape)
    return Dataset.create(samples, labels, num_classes)


def load_dataset(path, shape=None) -> Dataset:
    path = Path(path)
    if path.suffix == ".csv":
        if shape is None:
            raise DataError("CSV datasets need an explicit sample shape")
        return read_csv(path, shape)
    return read_dataset(path)


def load_digits8() -> Dataset:
    """Bundled 8x8 ten-class digit images, pixels scaled to [0, 1], duplicates removed."""
    buf = resources.files("altfl").joinpath("resources/digits8.altds").read_bytes()
    return _parse(buf)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


# --- partitioning and augmentation ----------------------------------------------

@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    alpha: float
    seed: int = 0
    min_size: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise DataError("need at least one client")
        if not self.alpha > 0:
            raise DataError(f"Dirichlet concentration must be positive, got {self.alpha}")


def dirichlet_partition(ds: Dataset, spec: PartitionSpec, max_tries: int = 1000) -> list[Dataset]:
    """Split ``ds`` across clients with per-class Dirichlet(alpha) proportions.

    Whole draws are repeated (from the same seeded stream) until every client
    holds at least ``spec.min_size`` samples.
    """
    if ds.synthetic.any():
        raise DataError("only authentic datasets are partitioned")
    counts = ds.class_counts()
    n = spec.num_clients
    present = np.flatnonzero(counts)
    if len(present) < ds.num_classes:
        raise DataError(f"classes {sorted(set(range(ds.num_classes)) - set(present))} are empty")
    if counts.min() < n:
        raise DataError(f"class {int(counts.argmin())} has fewer samples than clients")
    rng = np.random.default_rng(spec.seed)
    by_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    for _ in range(max_tries):
        shards = [[] for _ in range(n)]
        for idx in by_class:
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(n, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for client, part in enumerate(np.split(idx, cuts)):
                shards[client].append(part)
        shards = [np.sort(np.concatenate(s)) for s in shards]
        if min(len(s) for s in shards) >= spec.min_size:
            return [ds.subset(s) for s in shards]
    raise DataError(f"no partition with {spec.min_size}+ samples per client after {max_tries} draws")


def iid_split(ds: Dataset, sizes, seed: int) -> list[Dataset]:
    """Uniformly random disjoint shards of the requested sizes."""
    sizes = [int(s) for s in sizes]
    if sum(sizes) > len(ds):
        raise DataError("requested shard sizes exceed dataset size")
    order = np.random.default_rng(seed).permutation(len(ds))
    cuts = np.cumsum(sizes)[:-1]
    return [ds.subset(np.sort(part)) for part in np.split(order[:sum(sizes)], cuts)]


@dataclass(frozen=True)
class AugmentationSpec:
    ratio: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise DataError(f"augmentation ratio must lie in [0, 1), got {self.ratio}")


def synthetic_count(ratio: float, n: int) -> int:
    return math.ceil(round(ratio * n, 9))


def mix_augment(authentic: Dataset, synthetic: Dataset | None, spec: AugmentationSpec,
                seed: int) -> Dataset:
    """Replace ceil(r*n) uniformly chosen authentic samples by synthetic ones."""
    n = len(authentic)
    k = synthetic_count(spec.ratio, n)
    if k == 0:
        return authentic
    if synthetic is None or len(synthetic) == 0:
        raise DataError("augmentation ratio > 0 needs a non-empty synthetic dataset")
    rng = np.random.default_rng(seed)
    slots = rng.choice(n, size=k, replace=False)
    donors = rng.choice(len(synthetic), size=k, replace=k > len(synthetic))
    samples = authentic.samples.copy()
    labels = authentic.labels.copy()
    flags = authentic.synthetic.copy()
    samples[slots] = synthetic.samples[donors]
    labels[slots] = synthetic.labels[donors]
    flags[slots] = True
    return Dataset(samples, labels, authentic.num_classes, flags)


def surrogate_synthetic(ds: Dataset, seed: int, var_floor: float = 1e-6) -> Dataset:
    """Class-conditional diagonal Gaussian draws with the source's label counts."""
    rng = np.random.default_rng(seed)
    flat = ds.flat()
    out = np.empty_like(flat)
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        mu = flat[idx].mean(axis=0)
        var = np.maximum(flat[idx].var(axis=0), var_floor)
        out[idx] = rng.normal(mu, np.sqrt(var), size=(len(idx), flat.shape[1]))
    return Dataset(out.reshape(ds.samples.shape), ds.labels.copy(), ds.num_classes,
                   np.ones(len(ds), dtype=bool))


def total_variation_from_uniform(ds: Dataset) -> float:
    p = ds.class_counts() / len(ds)
    return 0.5 * float(np.abs(p - 1.0 / ds.num_classes).sum())
