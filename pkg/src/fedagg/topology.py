"""Tree topology of computing nodes: tiers, parent/child/leaf queries, and
dynamic node migration governed by an interaction-protocol compatibility
relation.

Trees are strictly layered: tier 1 is the single root (cloud), the last
tier is exactly the leaf set (devices), and every child sits one tier below
its parent. Migration retargets a node to a new parent on the same tier as
its current parent; whether that is allowed depends on the protocol kind:
an equivalence protocol accepts any same-tier retarget, a partial-order
protocol accepts only when the moving node's model is dominated by the new
parent's model under the configured comparator.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .nn_core import ModelSpec

NodeId = str

ROLES = ("cloud", "edge", "device")


class TopologyError(ValueError):
    """Structural violation: cycle, multiple roots, orphan, or tier gap."""


class MigrationError(TopologyError):
    """A migration was rejected; carries the compatibility verdict."""


@dataclass(frozen=True)
class NodeDescriptor:
    id: NodeId
    tier: int
    role: str
    model_spec: ModelSpec
    parent: NodeId | None
    children: tuple[NodeId, ...]


@dataclass
class EecNet:
    """A validated layered tree of computing nodes."""

    nodes: dict[NodeId, NodeDescriptor]
    root: NodeId
    tier_count: int

    def descriptor(self, v: NodeId) -> NodeDescriptor:
        try:
            return self.nodes[v]
        except KeyError:
            raise TopologyError(f"unknown node {v!r}") from None

    def children(self, v: NodeId) -> tuple[NodeId, ...]:
        return self.descriptor(v).children

    def is_leaf(self, v: NodeId) -> bool:
        return not self.descriptor(v).children

    def tier_nodes(self, tier: int) -> list[NodeId]:
        return sorted(v for v, d in self.nodes.items() if d.tier == tier)

    @property
    def leaves(self) -> list[NodeId]:
        return sorted(v for v in self.nodes if self.is_leaf(v))


def parent(net: EecNet, v: NodeId) -> NodeId:
    """The unique parent of a non-root node."""
    d = net.descriptor(v)
    if d.parent is None:
        raise TopologyError(f"root {v!r} has no parent")
    return d.parent


def leaves_of(net: EecNet, v: NodeId) -> set[NodeId]:
    """All leaf descendants of v (v itself when v is a leaf)."""
    d = net.descriptor(v)
    if not d.children:
        return {v}
    out: set[NodeId] = set()
    stack = list(d.children)
    while stack:
        u = stack.pop()
        du = net.descriptor(u)
        if du.children:
            stack.extend(du.children)
        else:
            out.add(u)
    return out


def _role_for_tier(tier: int, tier_count: int) -> str:
    if tier == 1:
        return "cloud"
    if tier == tier_count:
        return "device"
    return "edge"


@dataclass(frozen=True)
class TierLayout:
    count: int
    model_spec: ModelSpec


@dataclass
class TreeLayout:
    """Description consumed by :func:`build_tree`.

    ``tiers[0]`` is tier 1 (must have count 1). Node ids may be given
    explicitly per tier; otherwise they are generated (``cloud``,
    ``edge2-00`` ..., ``dev-000`` ...). Parents may be given explicitly,
    otherwise each tier is split contiguously and near-evenly over the tier
    above. ``spec_overrides`` swaps in per-node model specs (heterogeneous
    devices, per-node capacities) on top of the tier defaults.
    """

    tiers: list[TierLayout]
    node_ids: list[list[NodeId]] | None = None
    parent_map: dict[NodeId, NodeId] | None = field(default=None)
    spec_overrides: dict[NodeId, ModelSpec] | None = None


def _auto_ids(tier: int, count: int, tier_count: int) -> list[NodeId]:
    role = _role_for_tier(tier, tier_count)
    if role == "cloud":
        return ["cloud"]
    if role == "device":
        return [f"dev-{i:03d}" for i in range(count)]
    return [f"edge{tier}-{i:02d}" for i in range(count)]


def build_tree(layout: TreeLayout) -> EecNet:
    """Construct and validate a layered tree from a layout description."""
    if not layout.tiers:
        raise TopologyError("layout has no tiers")
    tier_count = len(layout.tiers)
    if tier_count < 2:
        raise TopologyError("need at least two tiers (a root and leaves)")
    if layout.tiers[0].count != 1:
        raise TopologyError(
            f"tier 1 must contain exactly one root, got {layout.tiers[0].count} (multiple roots)"
        )
    if any(t.count < 1 for t in layout.tiers):
        raise TopologyError("every tier needs at least one node")

    ids_per_tier: list[list[NodeId]] = []
    for t, tl in enumerate(layout.tiers, start=1):
        if layout.node_ids is not None:
            ids = list(layout.node_ids[t - 1])
            if len(ids) != tl.count:
                raise TopologyError(
                    f"tier {t} lists {len(ids)} ids for {tl.count} nodes"
                )
        else:
            ids = _auto_ids(t, tl.count, tier_count)
        ids_per_tier.append(ids)

    flat = [v for ids in ids_per_tier for v in ids]
    if len(set(flat)) != len(flat):
        raise TopologyError("duplicate node ids in layout")
    tier_of = {v: t for t, ids in enumerate(ids_per_tier, start=1) for v in ids}

    parent_of: dict[NodeId, NodeId] = {}
    if layout.parent_map is not None:
        for v in flat:
            if tier_of[v] == 1:
                if v in layout.parent_map:
                    raise TopologyError(f"root {v!r} must not list a parent")
                continue
            if v not in layout.parent_map:
                raise TopologyError(f"orphaned node {v!r}: no parent assigned")
            p = layout.parent_map[v]
            if p == v:
                raise TopologyError(f"cycle: node {v!r} lists itself as parent")
            if p not in tier_of:
                raise TopologyError(f"node {v!r} names unknown parent {p!r}")
            if tier_of[p] != tier_of[v] - 1:
                raise TopologyError(
                    f"tier gap: {v!r} (tier {tier_of[v]}) under {p!r} (tier {tier_of[p]})"
                )
            parent_of[v] = p
        extra = set(layout.parent_map) - set(flat)
        if extra:
            raise TopologyError(f"parent map names unknown nodes {sorted(extra)}")
    else:
        for t in range(2, tier_count + 1):
            above, here = ids_per_tier[t - 2], ids_per_tier[t - 1]
            for i, v in enumerate(here):
                parent_of[v] = above[i * len(above) // len(here)]

    children_of: dict[NodeId, list[NodeId]] = {v: [] for v in flat}
    for v, p in parent_of.items():
        children_of[p].append(v)

    overrides = layout.spec_overrides or {}
    unknown_overrides = set(overrides) - set(flat)
    if unknown_overrides:
        raise TopologyError(f"spec overrides name unknown nodes {sorted(unknown_overrides)}")
    nodes: dict[NodeId, NodeDescriptor] = {}
    for t, (ids, tl) in enumerate(zip(ids_per_tier, layout.tiers), start=1):
        for v in ids:
            nodes[v] = NodeDescriptor(
                id=v,
                tier=t,
                role=_role_for_tier(t, tier_count),
                model_spec=overrides.get(v, tl.model_spec),
                parent=parent_of.get(v),
                children=tuple(sorted(children_of[v])),
            )
    net = EecNet(nodes=nodes, root=ids_per_tier[0][0], tier_count=tier_count)
    validate_tree(net)
    return net


def validate_tree(net: EecNet) -> None:
    """Check every structural invariant; raises TopologyError on violation."""
    roots = [v for v, d in net.nodes.items() if d.parent is None]
    if roots != [net.root]:
        raise TopologyError(f"expected single root {net.root!r}, found {roots}")
    if net.descriptor(net.root).tier != 1:
        raise TopologyError("root must sit on tier 1")
    edge_count = 0
    for v, d in net.nodes.items():
        if d.parent is not None:
            edge_count += 1
            p = net.descriptor(d.parent)
            if p.tier != d.tier - 1:
                raise TopologyError(f"tier gap at {v!r}")
            if v not in p.children:
                raise TopologyError(f"{v!r} missing from its parent's child list")
        for c in d.children:
            if net.descriptor(c).parent != v:
                raise TopologyError(f"child link {v!r}->{c!r} not mirrored")
        if not d.children and d.tier != net.tier_count:
            raise TopologyError(f"leaf {v!r} is not on the last tier")
        if d.children and d.tier == net.tier_count:
            raise TopologyError(f"last-tier node {v!r} has children")
    if edge_count != len(net.nodes) - 1:
        raise TopologyError("edge count does not match a tree")
    # Reachability from the root rules out disconnected cycles.
    seen: set[NodeId] = set()
    stack = [net.root]
    while stack:
        v = stack.pop()
        if v in seen:
            raise TopologyError(f"cycle reaching {v!r}")
        seen.add(v)
        stack.extend(net.descriptor(v).children)
    if seen != set(net.nodes):
        raise TopologyError(f"orphaned nodes {sorted(set(net.nodes) - seen)}")


# ---------------------------------------------------------------------------
# Interaction-protocol compatibility
# ---------------------------------------------------------------------------

SpecComparator = Callable[[ModelSpec, ModelSpec], bool]


def submodel_leq(a: ModelSpec, b: ModelSpec) -> bool:
    """Default partial order: equal depth, widths elementwise <=, size <=."""
    if len(a.layer_widths) != len(b.layer_widths):
        return False
    return (
        all(x <= y for x, y in zip(a.layer_widths, b.layer_widths))
        and a.param_count <= b.param_count
    )


@dataclass(frozen=True)
class MigrationVerdict:
    allowed: bool
    reason: str


@dataclass(frozen=True)
class ProtocolCompat:
    """Model-compatibility relation between interacting nodes.

    ``equivalence`` accepts every pair (model-agnostic interaction);
    ``partial_order`` accepts child-under-parent only when the comparator
    says child_model <= parent_model. The default comparator treats one
    dense spec as a sub-capacity of another.
    """

    kind: str
    comparator: SpecComparator | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("equivalence", "partial_order"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")

    def accepts(self, child_model: ModelSpec, parent_model: ModelSpec) -> MigrationVerdict:
        if self.kind == "equivalence":
            return MigrationVerdict(True, "equivalence protocol accepts any pairing")
        cmp = self.comparator or submodel_leq
        if cmp(child_model, parent_model):
            return MigrationVerdict(True, "child model is dominated by new parent model")
        return MigrationVerdict(
            False, "partial-order comparator rejects child model under new parent model"
        )


def equivalence_protocol() -> ProtocolCompat:
    return ProtocolCompat(kind="equivalence")


def partial_order_protocol(comparator: SpecComparator | None = None) -> ProtocolCompat:
    return ProtocolCompat(kind="partial_order", comparator=comparator)


def can_migrate(
    net: EecNet, v: NodeId, new_parent: NodeId, compat: ProtocolCompat
) -> MigrationVerdict:
    """Whether v may retarget to new_parent under the protocol relation."""
    dv = net.descriptor(v)
    dp = net.descriptor(new_parent)
    if dv.parent is None:
        raise TopologyError("the root cannot migrate")
    current = net.descriptor(dv.parent)
    if dp.tier != current.tier:
        raise TopologyError(
            f"new parent {new_parent!r} is on tier {dp.tier}, expected tier {current.tier}"
        )
    if new_parent in descendants(net, v) or new_parent == v:
        raise TopologyError(f"{new_parent!r} lies inside the subtree of {v!r}")
    return compat.accepts(dv.model_spec, dp.model_spec)


def descendants(net: EecNet, v: NodeId) -> set[NodeId]:
    """All strict descendants of v."""
    out: set[NodeId] = set()
    stack = list(net.descriptor(v).children)
    while stack:
        u = stack.pop()
        out.add(u)
        stack.extend(net.descriptor(u).children)
    return out


def migrate(net: EecNet, v: NodeId, new_parent: NodeId, compat: ProtocolCompat) -> EecNet:
    """Reattach v (with its whole subtree) under new_parent; returns a new net.

    Tiers are unchanged because the new parent sits on the same tier as the
    old one. The returned tree is fully re-validated.
    """
    verdict = can_migrate(net, v, new_parent, compat)
    if not verdict.allowed:
        raise MigrationError(f"migration of {v!r} under {new_parent!r} rejected: {verdict.reason}")
    old_parent = parent(net, v)
    nodes = dict(net.nodes)
    nodes[v] = replace(nodes[v], parent=new_parent)
    nodes[old_parent] = replace(
        nodes[old_parent],
        children=tuple(c for c in nodes[old_parent].children if c != v),
    )
    nodes[new_parent] = replace(
        nodes[new_parent],
        children=tuple(sorted((*nodes[new_parent].children, v))),
    )
    out = EecNet(nodes=nodes, root=net.root, tier_count=net.tier_count)
    validate_tree(out)
    return out
