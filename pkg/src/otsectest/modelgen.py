"""Dual-viewpoint system model, attack paths, CAEX-flavored XML exchange, deltas.

The system viewpoint groups assets into deployment nodes: every distinct
connection endpoint set (``S01+S02+H10``) becomes a node, and assets that
never appear in a composite endpoint get a singleton node. An asset that
appears in several nodes has one primary placement; further placements are
kept as references.

The control viewpoint maps each asset to the behaviors derived from its
method rows.
"""

from __future__ import annotations

import dataclasses
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from otsectest.assessment import Version, parse_version
from otsectest.errors import DanglingReference, FsmError, InputError, SchemaViolation, UnknownAsset
from otsectest.inventory import (
    Asset,
    AssetType,
    Connection,
    Inventory,
    MethodKind,
    MethodOperation,
    format_endpoint,
)
from otsectest.testgen import Efsm, Fsm, format_machine, parse_machine

DEFAULT_STUB = "no behavior specified"


@dataclass(frozen=True)
class DeploymentNode:
    id: str
    members: frozenset[str]
    refs: frozenset[str] = frozenset()

    @property
    def assets(self) -> frozenset[str]:
        return self.members | self.refs


@dataclass(frozen=True)
class ModelEdge:
    id: str
    source: str
    target: str
    protocol: str


@dataclass(frozen=True)
class SystemViewpoint:
    nodes: tuple[DeploymentNode, ...] = ()
    edges: tuple[ModelEdge, ...] = ()

    def node(self, node_id: str) -> DeploymentNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def nodes_of(self, asset_id: str) -> list[DeploymentNode]:
        return [n for n in self.nodes if asset_id in n.assets]


@dataclass(frozen=True)
class RangeGuard:
    name: str
    low: float
    high: float
    unit: str

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class Machine:
    name: str
    machine: Union[Fsm, Efsm]


@dataclass(frozen=True)
class OpaqueStub:
    name: str
    text: str


Behavior = Union[RangeGuard, Machine, OpaqueStub]


@dataclass(frozen=True)
class ControlViewpoint:
    behaviors: Mapping[str, tuple[Behavior, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class Annotation:
    asset_id: str
    text: str
    provenance: str = ""


@dataclass(frozen=True)
class PolicyBinding:
    asset_id: str
    policy_id: str
    provenance: str = ""


@dataclass(frozen=True)
class SystemModel:
    assets: tuple[Asset, ...] = ()
    system: SystemViewpoint = SystemViewpoint()
    control: ControlViewpoint = ControlViewpoint()
    revision: int = 0
    annotations: tuple[Annotation, ...] = ()
    bindings: tuple[PolicyBinding, ...] = ()

    def asset(self, asset_id: str) -> Asset:
        for a in self.assets:
            if a.id == asset_id:
                return a
        raise UnknownAsset(asset_id)

    def behaviors(self, asset_id: str) -> tuple[Behavior, ...]:
        return self.control.behaviors.get(asset_id, ())


# Deltas ----------------------------------------------------------------------

@dataclass(frozen=True)
class SetVersion:
    asset_id: str
    version: Version
    provenance: str = ""

    def __str__(self) -> str:
        return f"SetVersion({self.asset_id}, {self.version.raw})"


@dataclass(frozen=True)
class Annotate:
    asset_id: str
    text: str
    provenance: str = ""

    def __str__(self) -> str:
        return f'Annotate({self.asset_id}, "{self.text}")'


@dataclass(frozen=True)
class AddPolicyBinding:
    asset_id: str
    policy_id: str
    provenance: str = ""

    def __str__(self) -> str:
        return f"AddPolicyBinding({self.asset_id}, {self.policy_id})"


ModelDelta = Union[SetVersion, Annotate, AddPolicyBinding]


def _by_asset(items):
    # stable: per-asset order is kept, which is all the XML form can express
    return tuple(sorted(items, key=lambda item: item.asset_id))


def apply_delta(model: SystemModel, delta: ModelDelta) -> SystemModel:
    """Return a copy of ``model`` with ``delta`` applied and the revision bumped."""
    asset = model.asset(delta.asset_id)
    changes: dict = {"revision": model.revision + 1}
    if isinstance(delta, SetVersion):
        updated = dataclasses.replace(asset, version=delta.version)
        changes["assets"] = tuple(updated if a.id == asset.id else a for a in model.assets)
    elif isinstance(delta, Annotate):
        changes["annotations"] = _by_asset(model.annotations + (Annotation(asset.id, delta.text, delta.provenance),))
    elif isinstance(delta, AddPolicyBinding):
        changes["bindings"] = _by_asset(model.bindings + (PolicyBinding(asset.id, delta.policy_id, delta.provenance),))
    else:
        raise TypeError(f"not a model delta: {delta!r}")
    return dataclasses.replace(model, **changes)


def apply_deltas(model: SystemModel, deltas: Iterable[ModelDelta]) -> SystemModel:
    for delta in deltas:
        model = apply_delta(model, delta)
    return model


# Building --------------------------------------------------------------------

def build_system_viewpoint(assets: Iterable[Asset], connections: Iterable[Connection]) -> SystemViewpoint:
    assets = list(assets)
    connections = list(connections)
    known = {a.id for a in assets}
    for conn in connections:
        missing = conn.assets - known
        if missing:
            raise DanglingReference(f"connection {conn.id} references {', '.join(sorted(missing))}")

    groups: set[frozenset[str]] = set()
    for conn in connections:
        groups.add(conn.source)
        groups.add(conn.destination)
    in_composite = set().union(*(g for g in groups if len(g) > 1)) if groups else set()
    for asset_id in known - in_composite:
        groups.add(frozenset([asset_id]))

    by_id = {format_endpoint(g): g for g in groups}
    primary: dict[str, str] = {}
    for asset_id in sorted(known):
        candidates = sorted(nid for nid, g in by_id.items() if asset_id in g)
        # a dedicated singleton node wins over composites
        primary[asset_id] = asset_id if asset_id in by_id else candidates[0]

    nodes = tuple(
        DeploymentNode(
            id=nid,
            members=frozenset(a for a in g if primary[a] == nid),
            refs=frozenset(a for a in g if primary[a] != nid),
        )
        for nid, g in sorted(by_id.items())
    )
    edges = tuple(sorted(
        (ModelEdge(c.id, format_endpoint(c.source), format_endpoint(c.destination), c.protocol)
         for c in connections),
        key=lambda e: e.id,
    ))
    return SystemViewpoint(nodes, edges)


def behavior_for(method: MethodOperation) -> Behavior:
    if method.kind is MethodKind.NUMERIC_RANGE and method.range is not None:
        return RangeGuard(method.name, method.range.low, method.range.high, method.range.unit)
    if method.kind is MethodKind.PSEUDO_CODE:
        try:
            return Machine(method.name, parse_machine(method.body))
        except FsmError:
            pass
    return OpaqueStub(method.name, method.body)


def build_control_viewpoint(assets: Iterable[Asset], methods: Iterable[MethodOperation]) -> ControlViewpoint:
    methods = list(methods)
    behaviors = {}
    for asset in sorted(assets, key=lambda a: a.id):
        own = tuple(behavior_for(m) for m in methods if m.asset_id == asset.id)
        behaviors[asset.id] = own or (OpaqueStub("", DEFAULT_STUB),)
    return ControlViewpoint(behaviors)


def build_model(inventory: Inventory) -> SystemModel:
    return SystemModel(
        assets=tuple(sorted(inventory.assets, key=lambda a: a.id)),
        system=build_system_viewpoint(inventory.assets, inventory.connections),
        control=build_control_viewpoint(inventory.assets, inventory.methods),
    )


# Attack paths ----------------------------------------------------------------

Path = tuple[str, ...]  # node, edge, node, edge, ..., node


def attack_paths(model: SystemModel, source: str, target: str, max_len: int | None = None) -> list[Path]:
    """All simple undirected paths between the nodes hosting two assets.

    A path may not revisit a node, nor enter a node hosting an asset it has
    already passed through: an asset deployed on two workstations is one
    asset, so hopping between its placements is not a new foothold. Paths
    are ordered by their edge-id sequence; ``max_len`` counts edges and
    defaults to the node count.
    """
    model.asset(source)
    model.asset(target)
    view = model.system
    if max_len is None:
        max_len = len(view.nodes)
    if max_len < 0:
        raise ValueError("max_len must be >= 0")

    adjacency: dict[str, list[tuple[str, str]]] = {n.id: [] for n in view.nodes}
    for e in view.edges:
        if e.source == e.target:
            continue
        adjacency[e.source].append((e.id, e.target))
        adjacency[e.target].append((e.id, e.source))
    nodes = {n.id: n for n in view.nodes}
    goals = {n.id for n in view.nodes_of(target)}

    found: list[Path] = []

    def extend(path: list[str], seen: frozenset[str], length: int) -> None:
        here = path[-1]
        if here in goals:
            found.append(tuple(path))
            return
        if length == max_len:
            return
        for edge_id, nxt in adjacency[here]:
            hosted = nodes[nxt].assets
            if hosted & seen:
                continue
            extend(path + [edge_id, nxt], seen | hosted, length + 1)

    for start in view.nodes_of(source):
        extend([start.id], start.assets, 0)
    found.sort(key=lambda p: (p[1::2], p[0::2]))
    return found


# CAEX-flavored XML -----------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def export_caex(model: SystemModel) -> bytes:
    """Serialize ``model`` as deterministic UTF-8 XML with 2-space indentation."""
    assets = {a.id: a for a in model.assets}
    root = ET.Element("ModelRoot", revision=str(model.revision))
    hierarchy = ET.SubElement(root, "InstanceHierarchy")
    for node in sorted(model.system.nodes, key=lambda n: n.id):
        element = ET.SubElement(hierarchy, "InternalElement", id=node.id)
        for asset_id in sorted(node.members):
            asset = assets[asset_id]
            attrs = {"id": asset.id, "type": asset.asset_type.value, "name": asset.name}
            if asset.product:
                attrs["product"] = asset.product
            if asset.version is not None:
                attrs["version"] = asset.version.raw
            if asset.purdue_level is not None:
                attrs["purdueLevel"] = str(asset.purdue_level)
            asset_el = ET.SubElement(element, "Asset", attrs)
            for note in model.annotations:
                if note.asset_id == asset_id:
                    ET.SubElement(asset_el, "Annotation", provenance=note.provenance).text = note.text
            for binding in model.bindings:
                if binding.asset_id == asset_id:
                    ET.SubElement(asset_el, "PolicyBinding", policy=binding.policy_id,
                                  provenance=binding.provenance)
        for asset_id in sorted(node.refs):
            ET.SubElement(element, "AssetRef", id=asset_id)
        for asset_id in sorted(node.members):
            for behavior in model.behaviors(asset_id):
                _behavior_element(element, asset_id, behavior)
    for edge in sorted(model.system.edges, key=lambda e: e.id):
        ET.SubElement(hierarchy, "InternalLink", {
            "id": edge.id, "from": edge.source, "to": edge.target, "protocol": edge.protocol,
        })
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def _behavior_element(parent: ET.Element, asset_id: str, behavior: Behavior) -> None:
    if isinstance(behavior, RangeGuard):
        ET.SubElement(parent, "Behavior", {
            "asset": asset_id, "kind": "RangeGuard", "name": behavior.name,
            "low": _fmt_float(behavior.low), "high": _fmt_float(behavior.high), "unit": behavior.unit,
        })
    elif isinstance(behavior, Machine):
        kind = "EFSM" if isinstance(behavior.machine, Efsm) else "FSM"
        el = ET.SubElement(parent, "Behavior", {
            "asset": asset_id, "kind": "Machine", "name": behavior.name, "machine": kind,
        })
        el.text = format_machine(behavior.machine)
    else:
        el = ET.SubElement(parent, "Behavior", {"asset": asset_id, "kind": "OpaqueStub", "name": behavior.name})
        el.text = behavior.text


def _attr(el: ET.Element, name: str, path: str) -> str:
    value = el.get(name)
    if value is None:
        raise SchemaViolation(path, f"missing attribute {name!r}")
    return value


def import_caex(doc: bytes | str) -> SystemModel:
    """Rebuild a :class:`SystemModel` from :func:`export_caex` output."""
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise SchemaViolation("/", f"not well-formed XML: {exc}") from None
    if root.tag != "ModelRoot":
        raise SchemaViolation(f"/{root.tag}", "root element must be ModelRoot")
    try:
        revision = int(_attr(root, "revision", "/ModelRoot"))
    except ValueError:
        raise SchemaViolation("/ModelRoot", "revision is not an integer") from None
    children = list(root)
    if len(children) != 1 or children[0].tag != "InstanceHierarchy":
        raise SchemaViolation("/ModelRoot", "expected exactly one InstanceHierarchy")
    hierarchy = children[0]

    assets: list[Asset] = []
    annotations: list[Annotation] = []
    bindings: list[PolicyBinding] = []
    nodes: list[DeploymentNode] = []
    edges: list[ModelEdge] = []
    behaviors: dict[str, list[Behavior]] = {}
    base = "/ModelRoot/InstanceHierarchy"
    for index, el in enumerate(hierarchy):
        path = f"{base}/{el.tag}[{index}]"
        if el.tag == "InternalElement":
            members, refs = set(), set()
            for j, child in enumerate(el):
                cpath = f"{path}/{child.tag}[{j}]"
                if child.tag == "Asset":
                    asset = _read_asset(child, cpath)
                    assets.append(asset)
                    members.add(asset.id)
                    for k, sub in enumerate(child):
                        spath = f"{cpath}/{sub.tag}[{k}]"
                        if sub.tag == "Annotation":
                            annotations.append(Annotation(asset.id, sub.text or "", sub.get("provenance", "")))
                        elif sub.tag == "PolicyBinding":
                            bindings.append(PolicyBinding(asset.id, _attr(sub, "policy", spath),
                                                          sub.get("provenance", "")))
                        else:
                            raise SchemaViolation(spath, "unexpected element")
                elif child.tag == "AssetRef":
                    refs.add(_attr(child, "id", cpath))
                elif child.tag == "Behavior":
                    owner = _attr(child, "asset", cpath)
                    behaviors.setdefault(owner, []).append(_read_behavior(child, cpath))
                else:
                    raise SchemaViolation(cpath, "unexpected element")
            nodes.append(DeploymentNode(_attr(el, "id", path), frozenset(members), frozenset(refs)))
        elif el.tag == "InternalLink":
            edges.append(ModelEdge(_attr(el, "id", path), _attr(el, "from", path),
                                   _attr(el, "to", path), _attr(el, "protocol", path)))
        else:
            raise SchemaViolation(path, "unexpected element")

    known = {a.id for a in assets}
    node_ids = {n.id for n in nodes}
    for e in edges:
        if e.source not in node_ids or e.target not in node_ids:
            raise SchemaViolation(f"{base}/InternalLink[@id={e.id}]", "link endpoint is not a node")
    for owner in behaviors:
        if owner not in known:
            raise SchemaViolation(f"{base}/InternalElement/Behavior[@asset={owner}]", "unknown asset")
    return SystemModel(
        assets=tuple(sorted(assets, key=lambda a: a.id)),
        system=SystemViewpoint(tuple(sorted(nodes, key=lambda n: n.id)), tuple(sorted(edges, key=lambda e: e.id))),
        control=ControlViewpoint({k: tuple(behaviors.get(k, ())) for k in sorted(known) if k in behaviors}),
        revision=revision,
        annotations=_by_asset(annotations),
        bindings=_by_asset(bindings),
    )


def _read_asset(el: ET.Element, path: str) -> Asset:
    try:
        version = el.get("version")
        level = el.get("purdueLevel")
        return Asset(
            id=_attr(el, "id", path),
            asset_type=AssetType(_attr(el, "type", path)),
            name=_attr(el, "name", path),
            product=el.get("product"),
            version=parse_version(version) if version is not None else None,
            purdue_level=int(level) if level is not None else None,
        )
    except (InputError, ValueError) as exc:
        raise SchemaViolation(path, str(exc)) from None


def _read_behavior(el: ET.Element, path: str) -> Behavior:
    kind = _attr(el, "kind", path)
    name = _attr(el, "name", path)
    try:
        if kind == "RangeGuard":
            return RangeGuard(name, float(_attr(el, "low", path)), float(_attr(el, "high", path)),
                              _attr(el, "unit", path))
        if kind == "Machine":
            return Machine(name, parse_machine(el.text or ""))
    except (FsmError, ValueError) as exc:
        raise SchemaViolation(path, str(exc)) from None
    if kind == "OpaqueStub":
        return OpaqueStub(name, el.text or "")
    raise SchemaViolation(path, f"unknown behavior kind {kind!r}")
