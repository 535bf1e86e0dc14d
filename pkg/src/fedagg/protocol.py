"""Bridge-sample online distillation between a parent-child node pair.

One exchange runs two directional passes. In each pass the teacher
regenerates bridge samples from the shared embedding store, extracts its
logits on them once, and the student then runs minibatch SGD against a
distillation objective:

* non-leaf student: cross-entropy on the bridge samples' labels plus a
  beta-weighted KL term pulling the student's distribution toward the
  teacher's tempered distribution (teacher logits divided by T, student
  at temperature 1, student-first KL);
* leaf student: cross-entropy on its raw private samples plus gamma times
  the non-leaf objective on the aligned bridge samples.

The teacher is never mutated by a pass. Raw private data never crosses a
node boundary: only embeddings, labels and logits move.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autoencoder import AutoencoderParams, decode_batch
from .data import LabeledSample
from .nn_core import (
    Array,
    CrossEntropyHead,
    KLMatchHead,
    LossEntry,
    ModelParams,
    ScaledHead,
    SumHead,
    backward,
    batch_loss,
    forward_batch,
    sgd_step,
    softmax_temperature,
)
from .seeding import derive_seed
from .topology import NodeId

RecordKey = tuple[NodeId, int]


class AlignmentError(ValueError):
    """An embedding record has no matching logits or private sample."""


@dataclass(frozen=True)
class EmbeddingRecord:
    """One unit of transported knowledge: embedding, label and provenance."""

    eps: Array
    label: int
    origin_leaf: NodeId
    sample_id: int

    @property
    def key(self) -> RecordKey:
        return (self.origin_leaf, self.sample_id)


@dataclass
class EmbeddingStore:
    """A node's received embeddings, deterministically ordered."""

    owner: NodeId
    records: list[EmbeddingRecord] = field(default_factory=list)

    @staticmethod
    def build(owner: NodeId, records: Sequence[EmbeddingRecord]) -> "EmbeddingStore":
        ordered = sorted(records, key=lambda r: r.key)
        keys = [r.key for r in ordered]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate (origin, sample) keys in store for {owner!r}")
        return EmbeddingStore(owner=owner, records=list(ordered))

    def keys(self) -> set[RecordKey]:
        return {r.key for r in self.records}

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class LogitsEntry:
    origin_leaf: NodeId
    sample_id: int
    z: Array


@dataclass
class LogitsPacket:
    """Teacher logits aligned one-to-one with requested embedding records."""

    entries: list[LogitsEntry]

    def as_dict(self) -> dict[RecordKey, Array]:
        return {(e.origin_leaf, e.sample_id): e.z for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DistillConfig:
    beta: float = 10.0
    gamma: float = 1.0
    temperature: float = 3.0
    lr: float = 0.001
    batch_size: int = 8
    passes_per_exchange: int = 1

    def __post_init__(self) -> None:
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be nonnegative")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.passes_per_exchange < 1:
            raise ValueError("batch_size and passes_per_exchange must be >= 1")


@dataclass
class PeerModel:
    """One side of an exchange: the node's trainable model plus what it owns.

    ``private`` must hold the leaf's raw samples when ``is_leaf`` is true and
    stays None for non-leaf peers, mirroring where raw data may live.
    """

    node_id: NodeId
    params: ModelParams
    is_leaf: bool
    private: list[LabeledSample] | None = None

    def __post_init__(self) -> None:
        if self.is_leaf and self.private is None:
            raise ValueError(f"leaf peer {self.node_id!r} needs its private samples")
        if not self.is_leaf and self.private is not None:
            raise ValueError(f"non-leaf peer {self.node_id!r} must not carry raw samples")


def extract_logits(
    model: ModelParams, decoder: AutoencoderParams, records: Sequence[EmbeddingRecord]
) -> LogitsPacket:
    """Teacher side of a pass: logits on bridge samples decoded from embeddings."""
    if not records:
        return LogitsPacket(entries=[])
    bridges = decode_batch(decoder, np.stack([r.eps for r in records]))
    logits = forward_batch(model, bridges)
    return LogitsPacket(
        entries=[
            LogitsEntry(origin_leaf=r.origin_leaf, sample_id=r.sample_id, z=logits[i])
            for i, r in enumerate(records)
        ]
    )


def _bridge_head(record: EmbeddingRecord, teacher_z: Array, cfg: DistillConfig) -> SumHead:
    teacher_probs = softmax_temperature(teacher_z, cfg.temperature)
    return SumHead(
        CrossEntropyHead(record.label),
        ScaledHead(KLMatchHead(teacher_probs), cfg.beta),
    )


def non_leaf_entries(
    decoder: AutoencoderParams,
    batch: Sequence[EmbeddingRecord],
    teacher_logits: LogitsPacket,
    cfg: DistillConfig,
) -> list[LossEntry]:
    """Loss batch whose mean equals the non-leaf objective over ``batch``."""
    if not batch:
        raise ValueError("empty embedding batch")
    lookup = teacher_logits.as_dict()
    bridges = decode_batch(decoder, np.stack([r.eps for r in batch]))
    entries: list[LossEntry] = []
    for i, r in enumerate(batch):
        if r.key not in lookup:
            raise AlignmentError(f"no teacher logits for record {r.key}")
        entries.append((bridges[i], _bridge_head(r, lookup[r.key], cfg)))
    return entries


def _align_private(
    private_batch: Sequence[LabeledSample], emb_batch: Sequence[EmbeddingRecord]
) -> list[LabeledSample]:
    """Private samples reordered to match the embedding batch, or raise."""
    private_by_id = {s.sample_id: s for s in private_batch}
    if len(private_by_id) != len(private_batch):
        raise AlignmentError("duplicate sample ids in private batch")
    if len(private_batch) != len(emb_batch):
        raise AlignmentError(
            f"{len(private_batch)} private samples but {len(emb_batch)} embedding records"
        )
    aligned = []
    for r in emb_batch:
        s = private_by_id.get(r.sample_id)
        if s is None:
            raise AlignmentError(f"embedding record {r.key} has no private sample")
        if s.y != r.label:
            raise AlignmentError(f"label mismatch for sample {r.sample_id}")
        aligned.append(s)
    return aligned


def leaf_entries(
    decoder: AutoencoderParams,
    private_batch: Sequence[LabeledSample],
    emb_batch: Sequence[EmbeddingRecord],
    teacher_logits: LogitsPacket,
    cfg: DistillConfig,
) -> list[LossEntry]:
    """Loss batch whose mean equals the leaf objective over the aligned batch.

    The raw and bridge halves carry weights 2 and 2*gamma so that averaging
    over the doubled batch reproduces mean(raw CE) + gamma * mean(bridge
    objective) exactly.
    """
    aligned = _align_private(private_batch, emb_batch)
    lookup = teacher_logits.as_dict()
    bridges = decode_batch(decoder, np.stack([r.eps for r in emb_batch]))
    raw: list[LossEntry] = []
    bridged: list[LossEntry] = []
    for i, (s, r) in enumerate(zip(aligned, emb_batch)):
        if r.key not in lookup:
            raise AlignmentError(f"no teacher logits for record {r.key}")
        raw.append((s.x, ScaledHead(CrossEntropyHead(s.y), 2.0)))
        bridged.append(
            (bridges[i], ScaledHead(_bridge_head(r, lookup[r.key], cfg), 2.0 * cfg.gamma))
        )
    return raw + bridged


def non_leaf_loss(
    student: ModelParams,
    decoder: AutoencoderParams,
    batch: Sequence[EmbeddingRecord],
    teacher_logits: LogitsPacket,
    cfg: DistillConfig,
) -> float:
    """Mean over the batch of CE on bridge samples + beta * KL to the teacher."""
    return batch_loss(student, non_leaf_entries(decoder, batch, teacher_logits, cfg))


def leaf_loss(
    student: ModelParams,
    decoder: AutoencoderParams,
    private_batch: Sequence[LabeledSample],
    emb_batch: Sequence[EmbeddingRecord],
    teacher_logits: LogitsPacket,
    cfg: DistillConfig,
) -> float:
    """Mean CE on raw private samples + gamma * non-leaf objective on bridges."""
    aligned = _align_private(private_batch, emb_batch)
    raw_ce = batch_loss(student, [(s.x, CrossEntropyHead(s.y)) for s in aligned])
    bridge = non_leaf_loss(student, decoder, emb_batch, teacher_logits, cfg)
    return raw_ce + cfg.gamma * bridge


def bsbodp_directional(
    student: PeerModel,
    teacher: PeerModel,
    decoder: AutoencoderParams,
    shared: Sequence[EmbeddingRecord],
    cfg: DistillConfig,
    *,
    seed: int = 0,
) -> ModelParams:
    """One directional pass; returns the updated student parameters.

    The teacher extracts logits once over all shared records, then the
    student runs ``passes_per_exchange`` epochs of minibatch SGD over them.
    Minibatch order is a pure function of (pass index, store order, seed),
    so equal seeds replay bit-identical updates. The teacher's parameters
    are read, never written.
    """
    if not shared:
        raise ValueError("no shared embedding records for this exchange")
    packet = extract_logits(teacher.params, decoder, shared)
    private_by_id: dict[int, LabeledSample] = {}
    if student.is_leaf:
        assert student.private is not None
        private_by_id = {s.sample_id: s for s in student.private}
        for r in shared:
            if r.origin_leaf != student.node_id:
                raise AlignmentError(
                    f"leaf {student.node_id!r} asked to train on foreign record {r.key}"
                )
            if r.sample_id not in private_by_id:
                raise AlignmentError(f"no private sample behind record {r.key}")
    params = student.params
    n = len(shared)
    for pass_idx in range(cfg.passes_per_exchange):
        order = np.random.default_rng(derive_seed(seed, "pass", pass_idx)).permutation(n)
        for start in range(0, n, cfg.batch_size):
            chunk = [shared[i] for i in order[start : start + cfg.batch_size]]
            if student.is_leaf:
                priv = [private_by_id[r.sample_id] for r in chunk]
                entries = leaf_entries(decoder, priv, chunk, packet, cfg)
            else:
                entries = non_leaf_entries(decoder, chunk, packet, cfg)
            params = sgd_step(params, backward(params, entries), cfg.lr)
    return params


def bsbodp(
    v1: PeerModel,
    v2: PeerModel,
    decoder: AutoencoderParams,
    shared: Sequence[EmbeddingRecord],
    cfg: DistillConfig,
    *,
    seed: int = 0,
) -> tuple[ModelParams, ModelParams]:
    """Full exchange: v1 learns from v2, then v2 learns from the updated v1.

    Callers pair a node with its tree parent; the orchestrator, which owns
    the topology, is the layer that enforces that pairing and derives the
    shared record set (the child's store).
    """
    p1 = bsbodp_directional(
        v1, v2, decoder, shared, cfg, seed=derive_seed(seed, "dir", 0)
    )
    v1_updated = replace(v1, params=p1)
    p2 = bsbodp_directional(
        v2, v1_updated, decoder, shared, cfg, seed=derive_seed(seed, "dir", 1)
    )
    return p1, p2
