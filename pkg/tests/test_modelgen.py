import random

import pytest
from hypothesis import given, settings, strategies as st

from otsectest.assessment import parse_version
from otsectest.errors import DanglingReference, SchemaViolation, UnknownAsset
from otsectest.inventory import Asset, AssetType, Connection, Inventory
from otsectest.modelgen import (
    AddPolicyBinding,
    Annotate,
    OpaqueStub,
    RangeGuard,
    SetVersion,
    SystemModel,
    apply_delta,
    apply_deltas,
    attack_paths,
    build_model,
    build_system_viewpoint,
    export_caex,
    import_caex,
)

from generators import random_inventory
from oracles import brute_force_paths

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_plant_system_viewpoint(plant_model):
    view = plant_model.system
    ids = [n.id for n in view.nodes]
    assert "H10+S01+S02" in ids and "H11+S02+S04" in ids
    # H01-H09 and S03 as singletons plus the two workstation composites
    assert ids == [f"H0{i}" for i in range(1, 10)] + ["H10+S01+S02", "H11+S02+S04", "S03"]
    assert len(view.edges) == 11
    # S02 sits in both workstation nodes; one placement is a reference
    placements = view.nodes_of("S02")
    assert len(placements) == 2
    assert sum("S02" in n.members for n in placements) == 1


def test_node_partition(plant_model):
    members = [n.members for n in plant_model.system.nodes]
    union = frozenset().union(*members)
    assert union == {a.id for a in plant_model.assets}
    assert sum(len(m) for m in members) == len(union)


def test_empty_and_single_asset():
    assert build_system_viewpoint([], []).nodes == ()
    view = build_system_viewpoint([Asset("H01", AssetType.HARDWARE, "Sensor")], [])
    assert [n.id for n in view.nodes] == ["H01"] and view.edges == ()


def test_dangling_connection_rejected():
    with pytest.raises(DanglingReference):
        build_system_viewpoint([Asset("H01", AssetType.HARDWARE, "x")],
                               [Connection("C1", frozenset({"H01"}), frozenset({"H02"}), "HART")])


def test_control_viewpoint(plant_model):
    h02 = plant_model.behaviors("H02")
    assert h02[0] == RangeGuard("Pressure Range", 0.02, 700.0, "bar")
    assert h02[1] == RangeGuard("Temperature Range", -40.0, 100.0, "°C")
    assert plant_model.behaviors("H01") == (OpaqueStub("", "no behavior specified"),)
    (archive,) = plant_model.behaviors("S02")
    assert isinstance(archive, OpaqueStub) and archive.text.startswith("Achieving values")


def test_single_path_h10_to_h07(plant_model):
    paths = attack_paths(plant_model, "H10", "H07", max_len=5)
    assert paths == [("H10+S01+S02", "C09", "H09", "C07", "H07")]
    assert attack_paths(plant_model, "H10", "H07") == paths


def test_trivial_paths(plant_model):
    assert attack_paths(plant_model, "H01", "H01") == [("H01",)]
    assert attack_paths(plant_model, "S03", "H07") == []
    assert attack_paths(plant_model, "H01", "H07", max_len=1) == []
    with pytest.raises(UnknownAsset):
        attack_paths(plant_model, "H99", "H07")


def test_paths_sorted_by_edges(plant_model):
    paths = attack_paths(plant_model, "H01", "S04")
    keys = [p[1::2] for p in paths]
    assert keys == sorted(keys)
    # the route through both workstation nodes would pass S02 twice
    assert paths == [("H01", "C01", "H05", "C05", "H07", "C07", "H09", "C10", "H11+S02+S04")]


def _small_model(rng):
    while True:
        model = build_model(random_inventory(rng, max_assets=6, max_connections=9))
        if len(model.system.nodes) <= 8:
            return model


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_paths_match_brute_force(seed):
    rng = random.Random(seed)
    model = _small_model(rng)
    ids = [a.id for a in model.assets]
    source, target = rng.choice(ids), rng.choice(ids)
    max_len = rng.randint(0, len(model.system.nodes))
    nodes = {n.id: set(n.assets) for n in model.system.nodes}
    edges = [(e.id, e.source, e.target) for e in model.system.edges]
    starts = {n.id for n in model.system.nodes_of(source)}
    goals = {n.id for n in model.system.nodes_of(target)}
    assert set(attack_paths(model, source, target, max_len)) == brute_force_paths(nodes, edges, starts, goals, max_len)


def test_export_counts(plant_model):
    doc = export_caex(plant_model).decode()
    assert doc.count("<InternalElement ") == 12
    assert doc.count("<InternalLink ") == 11
    assert doc.startswith("<?xml")


def test_export_empty_model():
    doc = export_caex(SystemModel())
    assert b"<InstanceHierarchy />" in doc
    assert import_caex(doc) == SystemModel()


def test_plant_round_trip(plant_model):
    assert import_caex(export_caex(plant_model)) == plant_model


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_generated_round_trip(seed):
    rng = random.Random(seed)
    model = build_model(random_inventory(rng))
    ids = [a.id for a in model.assets]
    for _ in range(rng.randint(0, 3)):
        asset_id = rng.choice(ids)
        delta = rng.choice([
            SetVersion(asset_id, parse_version("V7.1 Upd3"), "P02"),
            Annotate(asset_id, "proof-test <interval> & \"docs\"", "P01"),
            AddPolicyBinding(asset_id, "P03", "T01"),
        ])
        model = apply_delta(model, delta)
    doc = export_caex(model)
    assert import_caex(doc) == model
    assert export_caex(import_caex(doc)) == doc


@pytest.mark.parametrize("doc", [
    b"<Other/>",
    b"not xml",
    b'<ModelRoot revision="x"><InstanceHierarchy/></ModelRoot>',
    b'<ModelRoot revision="0"><InstanceHierarchy><Foo/></InstanceHierarchy></ModelRoot>',
    b'<ModelRoot revision="0"><InstanceHierarchy><InternalLink id="C1" from="a" to="b" protocol="x"/>'
    b"</InstanceHierarchy></ModelRoot>",
])
def test_schema_violations(doc):
    with pytest.raises(SchemaViolation):
        import_caex(doc)


def test_empty_hierarchy_keeps_revision():
    model = import_caex(b'<ModelRoot revision="4"><InstanceHierarchy/></ModelRoot>')
    assert model.revision == 4 and model.assets == ()


def test_set_version(plant_model):
    new = apply_delta(plant_model, SetVersion("S02", parse_version("V7.1 Upd3")))
    assert new.asset("S02").version == parse_version("V7.1 Upd3")
    assert (plant_model.revision, new.revision) == (0, 1)
    assert plant_model.asset("S02").version == parse_version("V7.0")


def test_annotate(plant_model):
    new = apply_deltas(plant_model, [Annotate("H07", "SIS proof-test interval documented", "P01")])
    assert new.annotations[0].text == "SIS proof-test interval documented"
    assert new.revision == 1


def test_delta_on_unknown_asset(plant_model):
    with pytest.raises(UnknownAsset):
        apply_delta(plant_model, Annotate("H99", "x"))


def test_export_is_deterministic(plant_inventory):
    assert export_caex(build_model(plant_inventory)) == export_caex(build_model(plant_inventory))


def test_empty_inventory_model():
    model = build_model(Inventory())
    assert model.system.nodes == () and model.control.behaviors == {}
