"""Synthetic datasets, non-IID Dirichlet partitioning and text serialization.

The generator produces a Gaussian mixture with one well-separated component
per class, a desk-scale stand-in for image benchmarks. Partitioning draws
per-class client proportions from a symmetric Dirichlet, the standard way
of dialing label heterogeneity with a single concentration parameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .topology import NodeId

Array = np.ndarray

DATASET_SCHEMA = "fedagg-dataset/1"


@dataclass(frozen=True)
class LabeledSample:
    x: Array
    y: int
    sample_id: int


@dataclass
class Dataset:
    """A labeled sample collection with fixed input dim and class count."""

    samples: list[LabeledSample]
    input_dim: int
    classes: int

    def __len__(self) -> int:
        return len(self.samples)

    def matrix(self) -> tuple[Array, Array]:
        X = np.stack([s.x for s in self.samples])
        y = np.array([s.y for s in self.samples], dtype=np.int64)
        return X, y

    def label_counts(self) -> Array:
        counts = np.zeros(self.classes, dtype=np.int64)
        for s in self.samples:
            counts[s.y] += 1
        return counts


@dataclass
class ClientDataset:
    client: NodeId
    samples: list[LabeledSample]

    @property
    def size(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class PartitionConfig:
    k: int
    alpha: float
    seed: int
    max_retries: int = 100

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"client count must be >= 1, got {self.k}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def generate_synthetic(
    classes: int, input_dim: int, n: int, spread: float, seed: int
) -> Dataset:
    """Gaussian mixture with one component per class.

    Component means are rejection-sampled until pairwise separation is at
    least 4x spread; labels are balanced to within one sample; everything is
    deterministic per seed.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if n < classes:
        raise ValueError(f"need at least one sample per class, got n={n}")
    if input_dim < 1:
        raise ValueError(f"input dim must be >= 1, got {input_dim}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    min_sep = 4.0 * spread
    # Fixed-size placement box, widened automatically when rejection sampling
    # cannot fit all components. Keeping the box independent of the class
    # count gives mean placement a prefix property: two generators with the
    # same seed lay down the same leading components, so a public mixture
    # with extra components strictly covers the private one.
    box = max(4.0 * spread, 1.0)
    means: list[Array] = []
    while len(means) < classes:
        for _ in range(1000):
            cand = rng.uniform(-box, box, size=input_dim)
            if all(np.linalg.norm(cand - m) >= max(min_sep, 1e-9) for m in means):
                means.append(cand)
                break
        else:
            box *= 1.5  # widen the placement box and keep trying
    base, extra = divmod(n, classes)
    labels = np.concatenate(
        [np.full(base + (1 if c < extra else 0), c, dtype=np.int64) for c in range(classes)]
    )
    rng.shuffle(labels)
    samples = [
        LabeledSample(
            x=means[int(y)] + spread * rng.standard_normal(input_dim),
            y=int(y),
            sample_id=i,
        )
        for i, y in enumerate(labels)
    ]
    return Dataset(samples=samples, input_dim=input_dim, classes=classes)


def dirichlet_partition(
    dataset: Dataset, cfg: PartitionConfig, client_ids: list[NodeId] | None = None
) -> list[ClientDataset]:
    """Split a dataset into K disjoint non-IID client shards.

    Per class, client proportions are drawn from Dirichlet(alpha, ..., alpha)
    and the class's samples are split accordingly. Draws are repeated (whole
    partitions, bounded by ``max_retries``) until every client is nonempty.
    Clients are named ``client-0`` ... unless explicit ids are given.
    """
    if len(dataset) < cfg.k:
        raise ValueError(f"dataset of {len(dataset)} samples cannot feed {cfg.k} clients")
    if client_ids is None:
        client_ids = [f"client-{i}" for i in range(cfg.k)]
    if len(client_ids) != cfg.k:
        raise ValueError(f"{len(client_ids)} client ids for K={cfg.k}")
    by_class: dict[int, list[LabeledSample]] = {c: [] for c in range(dataset.classes)}
    for s in dataset.samples:
        by_class[s.y].append(s)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_retries):
        parts: list[list[LabeledSample]] = [[] for _ in range(cfg.k)]
        for c in range(dataset.classes):
            members = by_class[c]
            if not members:
                continue
            order = rng.permutation(len(members))
            proportions = rng.dirichlet(np.full(cfg.k, cfg.alpha))
            cuts = (np.cumsum(proportions) * len(members)).astype(int)[:-1]
            for client, chunk in enumerate(np.split(order, cuts)):
                parts[client].extend(members[i] for i in chunk)
        if all(parts):
            return [
                ClientDataset(client=cid, samples=sorted(p, key=lambda s: s.sample_id))
                for cid, p in zip(client_ids, parts)
            ]
    raise ValueError(
        f"could not give every one of {cfg.k} clients data within "
        f"{cfg.max_retries} draws (alpha={cfg.alpha})"
    )


def split_train_test(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Disjoint stratified split, deterministic per seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train: list[LabeledSample] = []
    test: list[LabeledSample] = []
    by_class: dict[int, list[LabeledSample]] = {}
    for s in dataset.samples:
        by_class.setdefault(s.y, []).append(s)
    for c in sorted(by_class):
        members = by_class[c]
        order = rng.permutation(len(members))
        n_test = int(round(len(members) * test_fraction))
        for j, i in enumerate(order):
            (test if j < n_test else train).append(members[i])
    train.sort(key=lambda s: s.sample_id)
    test.sort(key=lambda s: s.sample_id)
    return (
        Dataset(train, dataset.input_dim, dataset.classes),
        Dataset(test, dataset.input_dim, dataset.classes),
    )


def mean_label_tv(parts: list[ClientDataset], classes: int) -> float:
    """Mean total-variation distance of client label distributions from global."""
    all_samples = [s for p in parts for s in p.samples]
    global_counts = np.zeros(classes)
    for s in all_samples:
        global_counts[s.y] += 1
    global_dist = global_counts / global_counts.sum()
    tvs = []
    for p in parts:
        counts = np.zeros(classes)
        for s in p.samples:
            counts[s.y] += 1
        tvs.append(0.5 * np.abs(counts / counts.sum() - global_dist).sum())
    return float(np.mean(tvs))


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    """Plain decimal text: one header line, one sample per line.

    Floats are written with repr so a round-trip is bit-exact.
    """
    lines = [f"{DATASET_SCHEMA} {len(dataset)} {dataset.input_dim} {dataset.classes}"]
    for s in dataset.samples:
        coords = " ".join(repr(float(v)) for v in s.x)
        lines.append(f"{s.sample_id} {s.y} {coords}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text(encoding="ascii").strip().splitlines()
    if not text:
        raise ValueError(f"{path}: empty dataset file")
    header = text[0].split()
    if len(header) != 4 or header[0] != DATASET_SCHEMA:
        raise ValueError(f"{path}: bad header {text[0]!r}")
    n, input_dim, classes = (int(v) for v in header[1:])
    if len(text) - 1 != n:
        raise ValueError(f"{path}: header promises {n} samples, file has {len(text) - 1}")
    samples = []
    ids = set()
    for line in text[1:]:
        fields = line.split()
        sample_id, y = int(fields[0]), int(fields[1])
        x = np.array([float(v) for v in fields[2:]], dtype=np.float64)
        if x.shape[0] != input_dim:
            raise ValueError(f"{path}: sample {sample_id} has {x.shape[0]} coords")
        if not 0 <= y < classes:
            raise ValueError(f"{path}: sample {sample_id} label {y} out of range")
        if sample_id in ids:
            raise ValueError(f"{path}: duplicate sample id {sample_id}")
        ids.add(sample_id)
        samples.append(LabeledSample(x=x, y=y, sample_id=sample_id))
    return Dataset(samples=samples, input_dim=input_dim, classes=classes)
