"""End-to-end training over the tree.

The main schedule recursively walks the tree once per epoch: every leaf
exchanges with its parent, and every intermediate node, per child, first
recurses into that child's subtree and then exchanges with its own parent.
An initialization phase first propagates embeddings from the leaves to the
root, so each node's store holds exactly the embeddings originating in its
own subtree.

Also implements the hierarchical parameter-averaging baseline (local SGD on
devices, sample-count-weighted averaging at edges every round and at the
cloud every kappa2 rounds), which requires one model structure everywhere.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderParams, encode_batch
from .data import ClientDataset, Dataset, LabeledSample
from .nn_core import (
    CrossEntropyHead,
    ModelParams,
    ModelSpec,
    backward,
    forward_batch,
    init_params,
    sgd_step,
)
from .protocol import (
    DistillConfig,
    EmbeddingRecord,
    EmbeddingStore,
    PeerModel,
    bsbodp,
)
from .seeding import derive_seed
from .topology import EecNet, NodeDescriptor, NodeId, descendants, leaves_of

CHECKPOINT_SCHEMA = "fedagg-checkpoint/1"


class BottleneckError(ValueError):
    """Raised when parameter averaging meets heterogeneous model structures."""


@dataclass(frozen=True)
class BaselineConfig:
    """Aggregation cadence for hierarchical averaging."""

    kappa1: int = 1  # local epochs between edge aggregations
    kappa2: int = 1  # edge rounds between cloud aggregations

    def __post_init__(self) -> None:
        if self.kappa1 < 1 or self.kappa2 < 1:
            raise ValueError("kappa1 and kappa2 must be >= 1")


@dataclass
class NodeState:
    """Everything one computing node holds during a run."""

    descriptor: NodeDescriptor
    model: ModelParams
    autoencoder: AutoencoderParams  # decoder-only on non-leaf nodes
    store: EmbeddingStore
    private_data: ClientDataset | None = None

    def __post_init__(self) -> None:
        if self.model.spec != self.descriptor.model_spec:
            raise ValueError(
                f"model spec does not match descriptor for {self.descriptor.id!r}"
            )
        if self.descriptor.children and self.private_data is not None:
            raise ValueError(
                f"non-leaf {self.descriptor.id!r} must not hold private data"
            )


States = dict[NodeId, NodeState]


@dataclass
class TrainingAudit:
    """Counts raw-sample reads per node; a non-leaf read is a violation."""

    raw_accesses: dict[NodeId, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    def note_private_access(self, node_id: NodeId, is_leaf: bool, count: int) -> None:
        self.raw_accesses[node_id] = self.raw_accesses.get(node_id, 0) + count
        if not is_leaf:
            self.violations.append(f"non-leaf {node_id!r} read {count} raw samples")


@dataclass
class MetricsPoint:
    epoch: int
    cloud_accuracy: float
    tier_accuracy: dict[int, float]
    wall_time_ms: int = 0


@dataclass
class RunResult:
    rows: list[MetricsPoint]
    audit: TrainingAudit


def build_states(
    net: EecNet,
    ae: AutoencoderParams,
    client_data: dict[NodeId, ClientDataset],
    seed: int,
) -> States:
    """Fresh node states: per-node model init, shared autoencoder deployment."""
    leaves = set(net.leaves)
    unknown = set(client_data) - leaves
    if unknown:
        raise ValueError(f"client data assigned to non-leaf nodes {sorted(unknown)}")
    if ae.encoder is None:
        raise ValueError("deployment needs the full autoencoder (encoder included)")
    decoder_copy = ae.decoder_only()
    states: States = {}
    for v in sorted(net.nodes):
        d = net.descriptor(v)
        is_leaf = not d.children
        states[v] = NodeState(
            descriptor=d,
            model=init_params(d.model_spec, derive_seed(seed, "model", v)),
            autoencoder=ae if is_leaf else decoder_copy,
            store=EmbeddingStore(owner=v),
            private_data=client_data.get(v) if is_leaf else None,
        )
    return states


def init_phase(net: EecNet, states: States, audit: TrainingAudit | None = None) -> None:
    """Propagate embeddings up the tree; replaces every store (idempotent)."""

    def visit(v: NodeId) -> None:
        d = net.descriptor(v)
        if not d.children:
            st = states[v]
            if st.private_data is None or not st.private_data.samples:
                raise ValueError(f"leaf {v!r} has no private data")
            if st.autoencoder.encoder is None:
                raise ValueError(f"leaf {v!r} holds no encoder")
            samples = st.private_data.samples
            if audit is not None:
                audit.note_private_access(v, is_leaf=True, count=len(samples))
            E = encode_batch(st.autoencoder, np.stack([s.x for s in samples]))
            st.store = EmbeddingStore.build(
                v,
                [
                    EmbeddingRecord(
                        eps=E[i], label=s.y, origin_leaf=v, sample_id=s.sample_id
                    )
                    for i, s in enumerate(samples)
                ],
            )
        else:
            records: list[EmbeddingRecord] = []
            for u in d.children:
                visit(u)
                records.extend(states[u].store.records)
            states[v].store = EmbeddingStore.build(v, records)

    visit(net.root)


def _make_peer(states: States, v: NodeId, audit: TrainingAudit | None) -> PeerModel:
    st = states[v]
    is_leaf = not st.descriptor.children
    private = None
    if is_leaf:
        assert st.private_data is not None
        private = st.private_data.samples
        if audit is not None:
            audit.note_private_access(v, is_leaf=True, count=len(private))
    return PeerModel(node_id=v, params=st.model, is_leaf=is_leaf, private=private)


def fedagg_train_epoch(
    net: EecNet,
    states: States,
    cfg: DistillConfig,
    *,
    epoch: int = 0,
    seed: int = 0,
    audit: TrainingAudit | None = None,
    exchange_log: list[tuple[NodeId, NodeId]] | None = None,
    intermediate_exchange: str = "per_child",
) -> None:
    """One recursion over the tree, exactly as the schedule prints it.

    Intermediate nodes exchange with their parent once per child by default;
    ``intermediate_exchange="after_children"`` hoists that to a single
    exchange after the child loop.
    """
    if intermediate_exchange not in ("per_child", "after_children"):
        raise ValueError(f"unknown intermediate_exchange {intermediate_exchange!r}")
    for v in net.nodes:
        if not len(states[v].store):
            raise ValueError(f"store of {v!r} is empty; run init_phase first")

    counter = itertools.count()

    def exchange(child: NodeId, parent_id: NodeId) -> None:
        k = next(counter)
        shared = states[child].store.records
        child_peer = _make_peer(states, child, audit)
        parent_peer = _make_peer(states, parent_id, audit)
        p_child, p_parent = bsbodp(
            child_peer,
            parent_peer,
            states[child].autoencoder,
            shared,
            cfg,
            seed=derive_seed(seed, "exchange", epoch, k, child, parent_id),
        )
        states[child].model = p_child
        states[parent_id].model = p_parent
        if exchange_log is not None:
            exchange_log.append((child, parent_id))

    def train(v: NodeId) -> None:
        d = net.descriptor(v)
        if v == net.root:
            for u in d.children:
                train(u)
        elif not d.children:
            exchange(v, d.parent)
        else:
            for u in d.children:
                train(u)
                if intermediate_exchange == "per_child":
                    exchange(v, d.parent)
            if intermediate_exchange == "after_children":
                exchange(v, d.parent)

    train(net.root)


def evaluate(model: ModelParams, test_set: Dataset) -> float:
    """Fraction of test samples whose argmax logit matches the label."""
    if not len(test_set):
        raise ValueError("empty test set")
    X, y = test_set.matrix()
    pred = forward_batch(model, X).argmax(axis=1)
    return float(np.mean(pred == y))


def _metrics_point(
    net: EecNet, states: States, test_set: Dataset, epoch: int, wall_ms: int
) -> MetricsPoint:
    per_tier: dict[int, list[float]] = {}
    for v in sorted(net.nodes):
        acc = evaluate(states[v].model, test_set)
        per_tier.setdefault(net.descriptor(v).tier, []).append(acc)
    return MetricsPoint(
        epoch=epoch,
        cloud_accuracy=evaluate(states[net.root].model, test_set),
        tier_accuracy={t: float(np.mean(a)) for t, a in sorted(per_tier.items())},
        wall_time_ms=wall_ms,
    )


def run_fedagg(
    net: EecNet,
    states: States,
    cfg: DistillConfig,
    epochs: int,
    test_set: Dataset,
    *,
    seed: int = 0,
    start_epoch: int = 0,
    record_wall_time: bool = False,
    intermediate_exchange: str = "per_child",
    audit: TrainingAudit | None = None,
) -> RunResult:
    """Init once, then train epochs ``start_epoch`` .. ``epochs``-1.

    The epoch column counts completed training epochs, so row 0 (or
    ``start_epoch`` on a resumed run) is the post-init evaluation. States are
    updated in place.
    """
    audit = audit if audit is not None else TrainingAudit()
    init_phase(net, states, audit=audit)
    rows = [_metrics_point(net, states, test_set, start_epoch, 0)]
    for epoch in range(start_epoch, epochs):
        t0 = time.perf_counter()
        fedagg_train_epoch(
            net,
            states,
            cfg,
            epoch=epoch,
            seed=seed,
            audit=audit,
            intermediate_exchange=intermediate_exchange,
        )
        wall = int((time.perf_counter() - t0) * 1000) if record_wall_time else 0
        rows.append(_metrics_point(net, states, test_set, epoch + 1, wall))
    return RunResult(rows=rows, audit=audit)


# ---------------------------------------------------------------------------
# Local training and the hierarchical parameter-averaging baseline
# ---------------------------------------------------------------------------


def train_local_ce(
    params: ModelParams,
    samples: list[LabeledSample],
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> ModelParams:
    """Plain cross-entropy minibatch SGD over one node's samples."""
    if not samples:
        raise ValueError("no samples to train on")
    n = len(samples)
    for epoch in range(int(epochs)):
        order = np.random.default_rng(derive_seed(seed, "epoch", epoch)).permutation(n)
        for start in range(0, n, batch_size):
            chunk = [samples[i] for i in order[start : start + batch_size]]
            entries = [(s.x, CrossEntropyHead(s.y)) for s in chunk]
            params = sgd_step(params, backward(params, entries), lr)
    return params


def weighted_average(models: list[ModelParams], weights: list[float]) -> ModelParams:
    """Sample-count-weighted parameter average of structurally equal models."""
    if not models:
        raise ValueError("nothing to average")
    spec = models[0].spec
    if any(m.spec != spec for m in models):
        raise BottleneckError("cannot average models with different structures")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != len(models) or (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be nonnegative and sum to a positive value")
    w = w / w.sum()
    return ModelParams(
        spec,
        [
            sum(w[k] * m.weights[l] for k, m in enumerate(models))
            for l in range(spec.n_layers)
        ],
        [
            sum(w[k] * m.biases[l] for k, m in enumerate(models))
            for l in range(spec.n_layers)
        ],
    )


def _subtree_sample_count(net: EecNet, states: States, v: NodeId) -> int:
    total = 0
    for leaf in leaves_of(net, v):
        data = states[leaf].private_data
        if data is None or not data.samples:
            raise ValueError(f"leaf {leaf!r} has no private data")
        total += len(data.samples)
    return total


def run_hierfavg(
    net: EecNet,
    states: States,
    baseline: BaselineConfig,
    lr: float,
    batch_size: int,
    epochs: int,
    test_set: Dataset,
    *,
    seed: int = 0,
    record_wall_time: bool = False,
    audit: TrainingAudit | None = None,
) -> RunResult:
    """Hierarchical parameter averaging over the same tree.

    Per round: every device trains ``kappa1`` local epochs; every non-root
    inner tier replaces each node's model with the sample-count-weighted
    average of its children's models; every ``kappa2`` rounds the cloud
    averages its children and broadcasts the global model to all nodes,
    otherwise each tier-2 aggregate is pushed back down its own subtree.
    Requires an identical model structure on every node.
    """
    audit = audit if audit is not None else TrainingAudit()
    specs = {states[v].model.spec for v in net.nodes}
    if len(specs) != 1:
        raise BottleneckError(
            "hierarchical parameter averaging requires the same model structure on "
            f"all computing nodes; found {len(specs)} distinct structures"
        )
    rows = [_metrics_point(net, states, test_set, 0, 0)]
    for rnd in range(1, int(epochs) + 1):
        t0 = time.perf_counter()
        for leaf in net.leaves:
            st = states[leaf]
            assert st.private_data is not None
            audit.note_private_access(leaf, is_leaf=True, count=len(st.private_data.samples))
            st.model = train_local_ce(
                st.model,
                st.private_data.samples,
                baseline.kappa1,
                lr,
                batch_size,
                derive_seed(seed, "hier-local", rnd, leaf),
            )
        for tier in range(net.tier_count - 1, 1, -1):
            for v in net.tier_nodes(tier):
                children = net.children(v)
                if not children:
                    continue
                states[v].model = weighted_average(
                    [states[u].model for u in children],
                    [_subtree_sample_count(net, states, u) for u in children],
                )
        if rnd % baseline.kappa2 == 0:
            children = net.children(net.root)
            states[net.root].model = weighted_average(
                [states[u].model for u in children],
                [_subtree_sample_count(net, states, u) for u in children],
            )
            global_model = states[net.root].model
            for v in net.nodes:
                if v != net.root:
                    states[v].model = global_model.copy()
        else:
            for v in net.tier_nodes(2):
                for u in descendants(net, v):
                    states[u].model = states[v].model.copy()
        wall = int((time.perf_counter() - t0) * 1000) if record_wall_time else 0
        rows.append(_metrics_point(net, states, test_set, rnd, wall))
    return RunResult(rows=rows, audit=audit)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, net: EecNet, states: States, epoch: int) -> None:
    """Versioned npz dump of all node models plus the shared autoencoder.

    Private datasets and stores are not serialized: both are deterministic
    functions of the experiment config and the stored autoencoder, so a
    resumed run rebuilds them bit-exactly.
    """
    arrays: dict[str, np.ndarray] = {}
    activations: dict[str, str] = {}
    for v, st in sorted(states.items()):
        activations[v] = st.model.spec.activation
        for l, (W, b) in enumerate(zip(st.model.weights, st.model.biases)):
            arrays[f"model|{v}|W{l}"] = W
            arrays[f"model|{v}|b{l}"] = b
    ae = states[net.leaves[0]].autoencoder
    assert ae.encoder is not None
    for part, model in (("enc", ae.encoder), ("dec", ae.decoder)):
        activations[f"ae_{part}"] = model.spec.activation
        for l, (W, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"ae|{part}|W{l}"] = W
            arrays[f"ae|{part}|b{l}"] = b
    meta = {"schema": CHECKPOINT_SCHEMA, "epoch": int(epoch), "activations": activations}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _model_from_arrays(
    npz: object, prefix: str, activation: str
) -> ModelParams:
    weights, biases = [], []
    l = 0
    while f"{prefix}|W{l}" in npz.files:  # type: ignore[attr-defined]
        weights.append(npz[f"{prefix}|W{l}"])  # type: ignore[index]
        biases.append(npz[f"{prefix}|b{l}"])  # type: ignore[index]
        l += 1
    if not weights:
        raise ValueError(f"checkpoint holds no arrays under {prefix!r}")
    widths = (weights[0].shape[1], *[W.shape[0] for W in weights])
    params = ModelParams(ModelSpec(widths, activation), weights, biases)
    params.validate()
    return params


def load_checkpoint(
    path: str | Path, net: EecNet, client_data: dict[NodeId, ClientDataset]
) -> tuple[States, int]:
    """Rebuild states from a checkpoint; stores stay empty until init runs."""
    npz = np.load(path, allow_pickle=False)
    meta = json.loads(str(npz["meta"][()]))
    if meta.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unexpected checkpoint schema {meta.get('schema')!r}")
    activations = meta["activations"]
    ae = AutoencoderParams(
        encoder=_model_from_arrays(npz, "ae|enc", activations["ae_enc"]),
        decoder=_model_from_arrays(npz, "ae|dec", activations["ae_dec"]),
    )
    decoder_copy = ae.decoder_only()
    states: States = {}
    for v in sorted(net.nodes):
        d = net.descriptor(v)
        model = _model_from_arrays(npz, f"model|{v}", activations[v])
        if model.spec != d.model_spec:
            raise ValueError(f"checkpointed model for {v!r} does not match the topology spec")
        is_leaf = not d.children
        states[v] = NodeState(
            descriptor=d,
            model=model,
            autoencoder=ae if is_leaf else decoder_copy,
            store=EmbeddingStore(owner=v),
            private_data=client_data.get(v) if is_leaf else None,
        )
    return states, int(meta["epoch"])
