"""Experiment configuration, the end-to-end pipeline and run comparison.

A single JSON document fully determines a sequential run: dataset
generation, partitioning, autoencoder pretraining, topology, method and
every hyperparameter all flow from (config, seed), so the metrics bytes are
reproducible. Wall-clock timing is recorded only when explicitly enabled,
because a timed column would break byte-level reproducibility.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import data as data_mod
from .autoencoder import (
    default_embedding_dim,
    make_autoencoder_specs,
    pretrain,
)
from .data import Dataset, PartitionConfig, dirichlet_partition, split_train_test
from .nn_core import ModelSpec
from .orchestrator import (
    BaselineConfig,
    MetricsPoint,
    RunResult,
    build_states,
    run_fedagg,
    run_hierfavg,
)
from .protocol import DistillConfig
from .seeding import derive_seed
from .topology import EecNet, TierLayout, TreeLayout, build_tree

CONFIG_SCHEMA = "fedagg-experiment/1"
METRICS_SCHEMA = "fedagg-metrics/1"


class ConfigError(ValueError):
    """Config parsing or validation failure; message names the field."""


@dataclass
class DatasetSection:
    classes: int = 4
    input_dim: int = 8
    n: int = 1000
    spread: float = 1.0
    test_fraction: float = 0.2
    path: str | None = None
    seed: int | None = None  # default: derived from the global seed


@dataclass
class PartitionSection:
    k: int | None = None  # default: the topology's leaf count
    alpha: float = 1.0
    seed: int | None = None


@dataclass
class TopologySection:
    tier_counts: list[int] = field(default_factory=lambda: [1, 2, 4])
    tier_specs: list[str] = field(default_factory=lambda: ["cloud", "edge", "device"])


@dataclass
class AutoencoderSection:
    embedding_dim: int | None = None
    hidden_width: int | None = None
    epochs: int = 150
    lr: float = 0.01
    batch_size: int = 16
    public_n: int = 400
    public_components: int | None = None  # default: 2x the dataset's classes
    seed: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    epochs: int = 10
    method: str = "fedagg"
    output_dir: str = "runs"
    record_wall_time: bool = False
    intermediate_exchange: str = "per_child"
    compare_thresholds: list[float] = field(default_factory=lambda: [0.6, 0.8])
    dataset: DatasetSection = field(default_factory=DatasetSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    topology: TopologySection = field(default_factory=TopologySection)
    model_specs: dict[str, ModelSpec] = field(default_factory=dict)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    distill: DistillConfig = field(default_factory=DistillConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)


_DEFAULT_MODEL_SPECS = {
    "device": ModelSpec((8, 8, 4)),
    "edge": ModelSpec((8, 16, 4)),
    "cloud": ModelSpec((8, 32, 16, 4)),
}


def _take(section: dict, allowed: set[str], where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")
    return dict(section)


def _parse_model_specs(raw: dict, where: str) -> dict[str, ModelSpec]:
    specs = {}
    for name, val in raw.items():
        if isinstance(val, dict):
            body = _take(val, {"layer_widths", "activation"}, f"{where}.{name}")
            widths = body.get("layer_widths")
            activation = body.get("activation", "relu")
        else:
            widths, activation = val, "relu"
        if not isinstance(widths, (list, tuple)):
            raise ConfigError(f"{where}.{name} must list layer widths")
        try:
            specs[name] = ModelSpec(tuple(int(w) for w in widths), str(activation))
        except ValueError as exc:
            raise ConfigError(f"{where}.{name}: {exc}") from exc
    return specs


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a raw JSON document; unknown keys are rejected by name."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    doc = _take(
        doc,
        {"schema", "seed", "epochs", "method", "output_dir", "record_wall_time",
         "intermediate_exchange", "compare_thresholds", "dataset", "partition",
         "topology", "model_specs", "autoencoder", "distill", "baseline"},
        "config",
    )
    schema = doc.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}")

    cfg = ExperimentConfig()
    cfg.seed = int(doc.get("seed", cfg.seed))
    cfg.epochs = int(doc.get("epochs", cfg.epochs))
    if cfg.epochs < 0:
        raise ConfigError("epochs must be >= 0")
    cfg.method = str(doc.get("method", cfg.method))
    if cfg.method not in ("fedagg", "hierfavg"):
        raise ConfigError(f"method must be 'fedagg' or 'hierfavg', got {cfg.method!r}")
    cfg.output_dir = str(doc.get("output_dir", cfg.output_dir))
    cfg.record_wall_time = bool(doc.get("record_wall_time", False))
    cfg.intermediate_exchange = str(doc.get("intermediate_exchange", "per_child"))
    if cfg.intermediate_exchange not in ("per_child", "after_children"):
        raise ConfigError(
            f"intermediate_exchange must be 'per_child' or 'after_children', "
            f"got {cfg.intermediate_exchange!r}"
        )
    thresholds = doc.get("compare_thresholds", cfg.compare_thresholds)
    cfg.compare_thresholds = [float(t) for t in thresholds]

    ds = _take(
        doc.get("dataset", {}),
        {"classes", "input_dim", "n", "spread", "test_fraction", "path", "seed"},
        "dataset",
    )
    raw = {**DatasetSection().__dict__, **ds}
    cfg.dataset = DatasetSection(
        classes=int(raw["classes"]),
        input_dim=int(raw["input_dim"]),
        n=int(raw["n"]),
        spread=float(raw["spread"]),
        test_fraction=float(raw["test_fraction"]),
        path=None if raw["path"] is None else str(raw["path"]),
        seed=None if raw["seed"] is None else int(raw["seed"]),
    )
    if not 0.0 < cfg.dataset.test_fraction < 1.0:
        raise ConfigError("dataset.test_fraction must lie in (0, 1)")

    part = _take(doc.get("partition", {}), {"k", "alpha", "seed"}, "partition")
    raw = {**PartitionSection().__dict__, **part}
    cfg.partition = PartitionSection(
        k=None if raw["k"] is None else int(raw["k"]),
        alpha=float(raw["alpha"]),
        seed=None if raw["seed"] is None else int(raw["seed"]),
    )
    if cfg.partition.alpha <= 0:
        raise ConfigError("partition.alpha must be positive")

    topo = _take(doc.get("topology", {}), {"tier_counts", "tier_specs"}, "topology")
    raw = {**TopologySection().__dict__, **topo}
    cfg.topology = TopologySection(
        tier_counts=[int(c) for c in raw["tier_counts"]],
        tier_specs=[str(s) for s in raw["tier_specs"]],
    )
    if len(cfg.topology.tier_counts) != len(cfg.topology.tier_specs):
        raise ConfigError("topology.tier_counts and topology.tier_specs differ in length")
    if len(cfg.topology.tier_counts) < 2:
        raise ConfigError("topology needs at least two tiers")

    cfg.model_specs = dict(_DEFAULT_MODEL_SPECS)
    cfg.model_specs.update(_parse_model_specs(doc.get("model_specs", {}), "model_specs"))
    for name in cfg.topology.tier_specs:
        if name not in cfg.model_specs:
            raise ConfigError(f"topology references unknown model spec {name!r}")

    ae = _take(
        doc.get("autoencoder", {}),
        {"embedding_dim", "hidden_width", "epochs", "lr", "batch_size",
         "public_n", "public_components", "seed"},
        "autoencoder",
    )
    raw = {**AutoencoderSection().__dict__, **ae}
    cfg.autoencoder = AutoencoderSection(
        embedding_dim=None if raw["embedding_dim"] is None else int(raw["embedding_dim"]),
        hidden_width=None if raw["hidden_width"] is None else int(raw["hidden_width"]),
        epochs=int(raw["epochs"]),
        lr=float(raw["lr"]),
        batch_size=int(raw["batch_size"]),
        public_n=int(raw["public_n"]),
        public_components=(
            None if raw["public_components"] is None else int(raw["public_components"])
        ),
        seed=None if raw["seed"] is None else int(raw["seed"]),
    )

    dist = _take(
        doc.get("distill", {}),
        {"beta", "gamma", "temperature", "lr", "batch_size", "passes_per_exchange"},
        "distill",
    )
    try:
        cfg.distill = DistillConfig(**{
            "beta": float(dist.get("beta", 10.0)),
            "gamma": float(dist.get("gamma", 1.0)),
            "temperature": float(dist.get("temperature", 3.0)),
            "lr": float(dist.get("lr", 0.001)),
            "batch_size": int(dist.get("batch_size", 8)),
            "passes_per_exchange": int(dist.get("passes_per_exchange", 1)),
        })
    except ValueError as exc:
        raise ConfigError(f"distill: {exc}") from exc

    base = _take(doc.get("baseline", {}), {"kappa1", "kappa2"}, "baseline")
    try:
        cfg.baseline = BaselineConfig(
            kappa1=int(base.get("kappa1", 1)), kappa2=int(base.get("kappa2", 1))
        )
    except ValueError as exc:
        raise ConfigError(f"baseline: {exc}") from exc

    leaf_count = cfg.topology.tier_counts[-1]
    if cfg.partition.k is None:
        cfg.partition.k = leaf_count
    if cfg.partition.k != leaf_count:
        raise ConfigError(
            f"partition.k={cfg.partition.k} does not match the topology's "
            f"{leaf_count} leaves"
        )
    # The capacity ladder must consume the dataset's shape.
    ds_cfg = cfg.dataset
    if ds_cfg.path is None:
        for name in cfg.topology.tier_specs:
            spec = cfg.model_specs[name]
            if spec.input_dim != ds_cfg.input_dim or spec.output_dim != ds_cfg.classes:
                raise ConfigError(
                    f"model spec {name!r} has shape {spec.layer_widths} but the dataset "
                    f"is {ds_cfg.input_dim}-dimensional with {ds_cfg.classes} classes"
                )
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc)


def _canonical(cfg: ExperimentConfig) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "epochs": cfg.epochs,
        "method": cfg.method,
        "intermediate_exchange": cfg.intermediate_exchange,
        "dataset": dict(cfg.dataset.__dict__),
        "partition": dict(cfg.partition.__dict__),
        "topology": dict(cfg.topology.__dict__),
        "model_specs": {
            name: {"layer_widths": list(s.layer_widths), "activation": s.activation}
            for name, s in sorted(cfg.model_specs.items())
        },
        "autoencoder": dict(cfg.autoencoder.__dict__),
        "distill": {
            "beta": cfg.distill.beta, "gamma": cfg.distill.gamma,
            "temperature": cfg.distill.temperature, "lr": cfg.distill.lr,
            "batch_size": cfg.distill.batch_size,
            "passes_per_exchange": cfg.distill.passes_per_exchange,
        },
        "baseline": {"kappa1": cfg.baseline.kappa1, "kappa2": cfg.baseline.kappa2},
    }


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of everything that shapes the run except seed and output paths."""
    blob = json.dumps(_canonical(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def build_topology(cfg: ExperimentConfig) -> EecNet:
    tiers = [
        TierLayout(count=c, model_spec=cfg.model_specs[name])
        for c, name in zip(cfg.topology.tier_counts, cfg.topology.tier_specs)
    ]
    return build_tree(TreeLayout(tiers=tiers))


def prepare_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.path is not None:
        full = data_mod.load_dataset(ds.path)
    else:
        seed = ds.seed if ds.seed is not None else derive_seed(cfg.seed, "dataset")
        full = data_mod.generate_synthetic(ds.classes, ds.input_dim, ds.n, ds.spread, seed)
    return split_train_test(full, ds.test_fraction, derive_seed(cfg.seed, "split"))


def pretrain_autoencoder_for(cfg: ExperimentConfig):
    """Pretrain the shared pair on a broader public mixture.

    The public mixture shares the dataset's component-placement stream and
    adds extra components, so its support strictly covers the private data
    while its samples are all fresh draws. This mirrors pretraining on a
    large open corpus that spans the clients' domain.
    """
    ds, ae = cfg.dataset, cfg.autoencoder
    components = (
        ae.public_components if ae.public_components is not None else 2 * ds.classes
    )
    placement_seed = ds.seed if ds.seed is not None else derive_seed(cfg.seed, "dataset")
    public = data_mod.generate_synthetic(
        components, ds.input_dim, ae.public_n, ds.spread, placement_seed
    )
    X_public = public.matrix()[0]
    emb = ae.embedding_dim if ae.embedding_dim is not None else default_embedding_dim(ds.input_dim)
    enc_spec, dec_spec = make_autoencoder_specs(ds.input_dim, emb, ae.hidden_width)
    seed = ae.seed if ae.seed is not None else derive_seed(cfg.seed, "ae")
    return pretrain(enc_spec, dec_spec, X_public, ae.epochs, ae.lr, seed, ae.batch_size)


def metrics_filename(cfg: ExperimentConfig) -> str:
    return f"{cfg.method}-{config_hash(cfg)}-s{cfg.seed}.csv"


def write_metrics(
    path: str | Path, cfg: ExperimentConfig, rows: list[MetricsPoint], tier_count: int
) -> None:
    tier_cols = [f"tier{t}_accuracy" for t in range(1, tier_count + 1)]
    header = ["schema", "config_hash", "method", "epoch", "cloud_accuracy",
              *tier_cols, "wall_time_ms"]
    digest = config_hash(cfg)
    lines = [",".join(header)]
    for row in rows:
        cells = [METRICS_SCHEMA, digest, cfg.method, str(row.epoch), repr(row.cloud_accuracy)]
        cells += [repr(row.tier_accuracy[t]) for t in range(1, tier_count + 1)]
        cells.append(str(row.wall_time_ms))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def execute(cfg: ExperimentConfig) -> tuple[RunResult, EecNet, dict]:
    """Run the configured experiment in memory; returns (result, net, states)."""
    train, test = prepare_dataset(cfg)
    net = build_topology(cfg)
    leaves = net.leaves
    part_seed = (
        cfg.partition.seed if cfg.partition.seed is not None
        else derive_seed(cfg.seed, "partition")
    )
    assert cfg.partition.k is not None
    parts = dirichlet_partition(
        train, PartitionConfig(k=cfg.partition.k, alpha=cfg.partition.alpha, seed=part_seed),
        client_ids=leaves,
    )
    client_data = {p.client: p for p in parts}
    ae = pretrain_autoencoder_for(cfg)
    states = build_states(net, ae, client_data, derive_seed(cfg.seed, "models"))
    if cfg.method == "fedagg":
        result = run_fedagg(
            net, states, cfg.distill, cfg.epochs, test,
            seed=cfg.seed,
            record_wall_time=cfg.record_wall_time,
            intermediate_exchange=cfg.intermediate_exchange,
        )
    else:
        result = run_hierfavg(
            net, states, cfg.baseline, cfg.distill.lr, cfg.distill.batch_size,
            cfg.epochs, test, seed=cfg.seed, record_wall_time=cfg.record_wall_time,
        )
    return result, net, states


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Execute the pipeline and write one metrics CSV; returns its path."""
    result, net, _ = execute(cfg)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / metrics_filename(cfg)
    write_metrics(path, cfg, result.rows, net.tier_count)
    return path


# ---------------------------------------------------------------------------
# Comparison reports
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    path: str
    method: str
    final_accuracy: float
    best_accuracy: float
    first_epoch_reaching: dict[float, int | None]


def read_metrics(path: str | Path) -> tuple[str, list[dict]]:
    lines = Path(path).read_text(encoding="ascii").strip().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    required = {"schema", "method", "epoch", "cloud_accuracy"}
    if not required <= set(header):
        raise ValueError(f"{path}: metrics header is missing {sorted(required - set(header))}")
    rows = []
    for line in lines[1:]:
        cells = dict(zip(header, line.split(",")))
        if cells["schema"] != METRICS_SCHEMA:
            raise ValueError(f"{path}: unexpected metrics schema {cells['schema']!r}")
        rows.append(cells)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows[0]["method"], rows


def summarize_run(path: str | Path, thresholds: list[float]) -> RunSummary:
    method, rows = read_metrics(path)
    accs = [(int(r["epoch"]), float(r["cloud_accuracy"])) for r in rows]
    reaching: dict[float, int | None] = {}
    for th in thresholds:
        reaching[th] = next((e for e, a in accs if a >= th), None)
    return RunSummary(
        path=str(path),
        method=method,
        final_accuracy=accs[-1][1],
        best_accuracy=max(a for _, a in accs),
        first_epoch_reaching=reaching,
    )


def compare_runs(paths: list[str | Path], thresholds: list[float]) -> str:
    """Text report across runs; '-' marks a never-reached threshold."""
    if len(paths) < 2:
        raise ValueError("need at least two metrics files to compare")
    summaries = [summarize_run(p, thresholds) for p in paths]
    th_cols = [f"epoch@{th:g}" for th in thresholds]
    header = ["method", "file", "final", "best", *th_cols]
    table = [header]
    for s in summaries:
        cells = [s.method, Path(s.path).name, f"{s.final_accuracy:.4f}", f"{s.best_accuracy:.4f}"]
        for th in thresholds:
            e = s.first_epoch_reaching[th]
            cells.append("-" if e is None else str(e))
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in table]
    return "\n".join(lines)
