import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from otsectest.assessment import Version, parse_version
from otsectest.cli import load_stubs
from otsectest.conditions import evaluate, parse_condition
from otsectest.errors import DigestMismatch, UnboundIdentifier
from otsectest.inventory import (
    Asset,
    AssetType,
    Level,
    MethodKind,
    MethodOperation,
    PatchUpdate,
    Policy,
    PolicyType,
    TestCase,
)
from otsectest.modelgen import (
    Annotate,
    Machine,
    RangeGuard,
    SetVersion,
    SystemModel,
    apply_deltas,
)
from otsectest.engine import (
    Verdict,
    derive_deltas,
    format_reports,
    lint_pseudocode,
    patch_digest,
    recommend,
    run_test,
    run_tests,
)
from otsectest.testgen import parse_machine

from conftest import PLANT_DIR

FAILING_SIS = """
state running initial
state tripped
trans running -reset/50-> running
trans running -shutdown/150-> tripped
trans tripped -reset/50-> running
trans tripped -shutdown/150-> tripped
"""


def _case(inv, test_id):
    return next(tc for tc in inv.testcases if tc.id == test_id)


@pytest.fixture
def stubs():
    return load_stubs(PLANT_DIR)


def test_evaluate_examples():
    env = {"Current Version": parse_version("V7.0"), "Updated Version": parse_version("V7.1")}
    assert not evaluate(parse_condition("Current Version = Updated Version"), env)
    assert evaluate(parse_condition("x in [0, 100]"), {"x": 42})
    with pytest.raises(UnboundIdentifier):
        evaluate(parse_condition("x < y"), {"y": 1})


def test_t01_passes_with_conforming_stub(plant_inventory, plant_model, stubs):
    report = run_test(_case(plant_inventory, "T01"), plant_model, plant_inventory.policies, (), stubs)
    assert report.verdict is Verdict.PASS
    assert report.recommended == () and report.derived_deltas == ()
    assert dict(report.observed) == {"State": "tripped", "Output value": 0.0}
    assert report.post_held is True


def test_t01_without_behavior_is_error(plant_inventory, plant_model):
    report = run_test(_case(plant_inventory, "T01"), plant_model, plant_inventory.policies)
    assert report.verdict is Verdict.ERROR
    assert "reset" in report.reason


def test_forced_sis_failure(plant_inventory, plant_model):
    stubs = {"H07": (Machine("stub", parse_machine(FAILING_SIS)),)}
    report = run_test(_case(plant_inventory, "T01"), plant_model, plant_inventory.policies, (), stubs)
    assert report.verdict is Verdict.FAIL
    assert report.recommended == ("P01", "P03")
    assert [type(d) for d in report.derived_deltas] == [Annotate, Annotate]
    assert {d.provenance for d in report.derived_deltas} == {"P01", "P03"}
    assert "proof-test intervals are documented" in report.derived_deltas[0].text


def test_t02_fails_and_recommends_patch(plant_inventory, plant_model, plant_cves):
    report = run_test(_case(plant_inventory, "T02"), plant_model, plant_inventory.policies, plant_cves)
    assert report.verdict is Verdict.FAIL
    assert report.recommended == ("P02",)
    assert report.derived_deltas[0] == SetVersion("S02", parse_version("V7.1 Upd3"), "P02")
    assert dict(report.observed) == {
        "Current Version": parse_version("V7.0"), "Updated Version": parse_version("V7.1 Upd3")}
    # V7.0 predates the affected range
    assert report.matched_cves == ()


def test_t02_passes_after_mitigation(plant_inventory, plant_model, plant_cves):
    tc = _case(plant_inventory, "T02")
    first = run_test(tc, plant_model, plant_inventory.policies, plant_cves)
    patched = apply_deltas(plant_model, first.derived_deltas)
    again = run_test(tc, patched, plant_inventory.policies, plant_cves)
    assert again.verdict is Verdict.PASS
    assert again.recommended == ()


def test_vulnerable_version_reports_cve(plant_inventory, plant_model, plant_cves):
    from otsectest.modelgen import apply_delta

    model = apply_delta(plant_model, SetVersion("S02", parse_version("V7.1")))
    report = run_test(_case(plant_inventory, "T02"), model, plant_inventory.policies, plant_cves)
    assert report.matched_cves == ("CVE-2018-13804",)
    assert report.verdict is Verdict.FAIL


def test_unknown_target(plant_inventory, plant_model):
    tc = dataclasses.replace(_case(plant_inventory, "T02"), target=frozenset({"H99"}))
    report = run_test(tc, plant_model)
    assert report.verdict is Verdict.ERROR
    assert "H99" in report.reason


def test_precondition_not_met(plant_inventory, plant_model):
    tc = dataclasses.replace(_case(plant_inventory, "T02"), target=frozenset({"H07"}))
    report = run_test(tc, plant_model, plant_inventory.policies)
    assert report.verdict is Verdict.ERROR and not report.pre_held


def test_numeric_action_against_range(plant_inventory, plant_model):
    base = _case(plant_inventory, "T01")
    tc = dataclasses.replace(base, target=frozenset({"H02"}), action=("350",), post="",
                             expected="Output value in [Range Low, Range High]")
    assert run_test(tc, plant_model).verdict is Verdict.PASS
    tc = dataclasses.replace(tc, action=("900",))
    assert run_test(tc, plant_model, plant_inventory.policies).recommended == ("P01", "P03")


def test_cve_check_action(plant_inventory, plant_model, plant_cves):
    from otsectest.modelgen import apply_delta

    model = apply_delta(plant_model, SetVersion("S02", parse_version("V7.1 Upd1")))
    tc = dataclasses.replace(_case(plant_inventory, "T02"), action=("CVE Check",), post="",
                             expected="Max CVSS < 7.0")
    report = run_test(tc, model, plant_inventory.policies, plant_cves)
    assert report.verdict is Verdict.FAIL
    assert dict(report.observed)["Max CVSS"] == 9.3


def test_recommend_rule(plant_inventory):
    policies = plant_inventory.policies
    tc = _case(plant_inventory, "T01")
    assert recommend(tc, Verdict.FAIL, policies) == ["P01", "P03"]
    assert recommend(tc, Verdict.PASS, policies) == []
    assert recommend(tc, Verdict.ERROR, policies) == []
    assert recommend(_case(plant_inventory, "T02"), Verdict.FAIL, policies) == ["P02"]
    dual = dataclasses.replace(tc, criteria=PolicyType.SAFETY_SECURITY)
    assert recommend(dual, Verdict.FAIL, policies) == ["P03"]


def test_digest_checked(plant_inventory, plant_model):
    p02 = next(p for p in plant_inventory.policies if p.id == "P02")
    assert p02.mitigations[0].digest == patch_digest("SIMATIC IT Production Suite", parse_version("V7.1 Upd3"))
    bad = dataclasses.replace(p02, mitigations=(
        dataclasses.replace(p02.mitigations[0], digest="sha256:" + "0" * 64),))
    with pytest.raises(DigestMismatch):
        derive_deltas(bad, _case(plant_inventory, "T02"), plant_model)


def test_digest_mismatch_noted_in_report(plant_inventory, plant_model):
    policies = tuple(
        dataclasses.replace(p, mitigations=(dataclasses.replace(p.mitigations[0], digest="sha256:00"),))
        if p.id == "P02" else p
        for p in plant_inventory.policies
    )
    report = run_test(_case(plant_inventory, "T02"), plant_model, policies)
    assert report.verdict is Verdict.FAIL
    assert report.derived_deltas == ()
    assert report.notes and "integrity" in report.notes[0]


def test_p01_annotates_sis(plant_inventory, plant_model):
    p01 = next(p for p in plant_inventory.policies if p.id == "P01")
    deltas = derive_deltas(p01, _case(plant_inventory, "T01"), plant_model)
    assert deltas == [Annotate("H07", p01.constraint_text, "P01")]


versions = st.builds(Version, st.integers(0, 9), st.integers(0, 9), st.integers(0, 4))


@settings(max_examples=100, deadline=None)
@given(versions, versions)
def test_rerun_after_patch_passes(current, fixed):
    asset = Asset("S02", AssetType.SOFTWARE, "MES", "WinCC", current)
    model = SystemModel(assets=(asset,))
    policy = Policy("P02", "Patch", "c", PolicyType.SECURITY, (PatchUpdate("WinCC", fixed),))
    tc = TestCase("T02", "t", frozenset({"S02"}), PolicyType.SECURITY, "", ("Current Version Check",), "",
                  "Current Version >= Updated Version")
    report = run_test(tc, model, [policy])
    if current >= fixed:
        assert report.verdict is Verdict.PASS
        return
    assert report.verdict is Verdict.FAIL
    assert report.derived_deltas == (SetVersion("S02", fixed, "P02"),)
    assert run_test(tc, apply_deltas(model, report.derived_deltas), [policy]).verdict is Verdict.PASS


def test_parallel_matches_sequential(plant_inventory, plant_model, plant_cves, stubs):
    args = (plant_inventory.testcases, plant_model, plant_inventory.policies, plant_cves, stubs)
    seq = run_tests(*args)
    assert [r.test_id for r in seq] == ["T01", "T02"]
    assert run_tests(*args, max_workers=4) == seq


def test_format_reports(plant_inventory, plant_model, plant_cves, stubs):
    reports = run_tests(plant_inventory.testcases, plant_model, plant_inventory.policies, plant_cves, stubs)
    text = format_reports(reports)
    assert "verdict      Pass" in text and "verdict      Fail" in text
    assert "SetVersion(S02, V7.1 Upd3) by P02" in text
    assert format_reports(reports, records_format=True).startswith("test: T01\nverdict: Pass\n")
    assert format_reports([]) == ""


def test_lint_pseudocode():
    methods = [
        MethodOperation("H07", "Logic", MethodKind.PSEUDO_CODE, "IF a THEN GOTO 10\n" + "x" * 130),
        MethodOperation("H07", "Machine", MethodKind.PSEUDO_CODE, "state a initial\ntrans a -go-> a"),
        MethodOperation("H07", "Range", MethodKind.NUMERIC_RANGE, "from 1 bar to 2 bar"),
    ]
    diags = lint_pseudocode(methods)
    assert [(d.record_id, d.severity) for d in diags] == [("H07/Logic", Level.WARNING)] * 2
