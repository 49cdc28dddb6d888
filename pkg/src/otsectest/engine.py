"""Rule-based verification and validation of test cases against the system model.

A test case runs in four steps: the precondition is checked against
bindings drawn from the model, the action tokens are executed against the
target's behaviors, the expected condition is evaluated on the resulting
bindings, and on failure the policy catalog is consulted for mitigations
that are turned into model deltas.
"""

from __future__ import annotations

import enum
import hashlib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from otsectest.assessment import CveRecord, Version, match_cves, product_matches
from otsectest.conditions import (
    ConditionExpr,
    Environment,
    Value,
    evaluate,
    identifiers,
    normalize_name,
    parse_condition,
)
from otsectest.errors import (
    DigestMismatch,
    OtSecTestError,
    UndefinedAction,
    UnknownAsset,
)
from otsectest.inventory import (
    Diagnostic,
    Level,
    MethodKind,
    MethodOperation,
    NetworkRestriction,
    PatchUpdate,
    Policy,
    PolicyType,
    ProcedureCheck,
    TableKind,
    TestCase,
)
from otsectest.modelgen import (
    Annotate,
    Behavior,
    Machine,
    ModelDelta,
    RangeGuard,
    SetVersion,
    SystemModel,
)
from otsectest.testgen import Efsm, Fsm, is_machine_text

__all__ = [
    "ConditionExpr", "Environment", "TestReport", "Verdict", "derive_deltas", "evaluate",
    "lint_pseudocode", "model_environment", "parse_condition", "patch_digest", "recommend",
    "run_test", "run_tests",
]


class Verdict(enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    ERROR = "Error"


@dataclass(frozen=True)
class TestReport:
    test_id: str
    verdict: Verdict
    pre_held: bool
    observed: tuple[tuple[str, Value], ...] = ()
    expected_held: bool = False
    recommended: tuple[str, ...] = ()
    matched_cves: tuple[str, ...] = ()
    derived_deltas: tuple[ModelDelta, ...] = ()
    expected: str = ""
    post_held: bool | None = None
    reason: str = ""
    notes: tuple[str, ...] = ()

    __test__ = False  # not a pytest class


# Environments ----------------------------------------------------------------

def _bind_asset(env: Environment, model: SystemModel, asset_id: str) -> None:
    asset = model.asset(asset_id)
    env.bind("Asset ID", asset.id)
    env.bind("Asset Type", asset.asset_type.value)
    env.bind("Asset Name", asset.name)
    if asset.product:
        env.bind("Product", asset.product)
    if asset.version is not None:
        env.bind("Version", asset.version)
    if asset.purdue_level is not None:
        env.bind("Purdue Level", float(asset.purdue_level))
    guards = [b for b in model.behaviors(asset_id) if isinstance(b, RangeGuard)]
    for guard in guards:
        env.bind(f"{guard.name} Low", guard.low)
        env.bind(f"{guard.name} High", guard.high)
    if guards:
        env.bind("Range Low", guards[0].low)
        env.bind("Range High", guards[0].high)
        env.bind("Unit", guards[0].unit)


def model_environment(model: SystemModel, targets: Iterable[str] = ()) -> Environment:
    """Bindings visible to conditions.

    Every versioned asset contributes ``<id> Version``; target assets also
    bind unqualified names (``Version``, ``Asset Type``, range bounds, ...).
    """
    env = Environment()
    for asset in model.assets:
        if asset.version is not None:
            env.bind(f"{asset.id} Version", asset.version)
    for asset_id in sorted(targets):
        _bind_asset(env, model, asset_id)
    return env


# Actions ---------------------------------------------------------------------

def _number_or_text(token: str) -> Value:
    try:
        return float(token)
    except ValueError:
        return token


class _MachineRun:
    def __init__(self, name: str, machine: Fsm | Efsm):
        self.name = name
        self.machine = machine
        self.state = machine.initial
        self.valuation = machine.initial_valuation() if isinstance(machine, Efsm) else ()

    def accepts(self, token: str) -> bool:
        return any(t.input == token for t in self.machine.transitions)

    def step(self, token: str) -> str | None:
        if isinstance(self.machine, Fsm):
            hit = self.machine.step(self.state, token)
            if hit is None:
                raise UndefinedAction(token)
            self.state = hit[1].target
            return hit[1].output
        options = [(t, v) for t, v in self.machine.enabled(self.state, self.valuation) if t.input == token]
        if len(options) != 1:
            raise UndefinedAction(token)
        t, self.valuation = options[0]
        self.state = t.target
        return t.output


def _newest_fix(product: str, policies: Iterable[Policy]) -> Version | None:
    fixes = [
        m.fixed_version
        for p in policies for m in p.mitigations
        if isinstance(m, PatchUpdate) and product_matches(m.product, product)
    ]
    return max(fixes) if fixes else None


def _current_version_check(env, model, asset_id, policies, cve_db):
    asset = model.asset(asset_id)
    if asset.version is None:
        raise UndefinedAction("Current Version Check")
    env.bind("Current Version", asset.version)
    fix = _newest_fix(asset.product, policies) if asset.product else None
    env.bind("Updated Version", fix if fix is not None else asset.version)


def _cve_check(env, model, asset_id, policies, cve_db):
    hits = match_cves(model.asset(asset_id), cve_db)
    env.bind("CVE Count", float(len(hits)))
    env.bind("Max CVSS", max((score for _, score in hits), default=0.0))


NAMED_CHECKS = {
    "current version check": _current_version_check,
    "cve check": _cve_check,
}


def _execute(tc: TestCase, model: SystemModel, env: Environment, policies, cve_db, stubs) -> None:
    behaviors = {a: list(stubs.get(a, ())) + list(model.behaviors(a)) for a in tc.target}
    runs = {
        a: [_MachineRun(b.name, b.machine) for b in found if isinstance(b, Machine)]
        for a, found in behaviors.items()
    }
    for token in tc.action:
        for asset_id in sorted(tc.target):
            run = next((r for r in runs[asset_id] if r.accepts(token)), None)
            if run is not None:
                output = run.step(token)
                env.bind("State", run.state)
                if output is not None:
                    env.bind("Output value", _number_or_text(output))
                continue
            check = NAMED_CHECKS.get(normalize_name(token))
            if check is not None:
                check(env, model, asset_id, policies, cve_db)
                continue
            guards = [b for b in behaviors[asset_id] if isinstance(b, RangeGuard)]
            value = _number_or_text(token)
            if guards and isinstance(value, float):
                env.bind("Output value", value)
                continue
            raise UndefinedAction(token)


# Recommendation and deltas ---------------------------------------------------

def recommend(tc: TestCase, verdict: Verdict, policies: Iterable[Policy]) -> list[str]:
    """Policy ids to apply after a failed test.

    Policies of the test's own criteria are always recommended. Dual
    safety & security policies concern security threats to safety functions,
    so they join only when the test exercises safety.
    """
    if verdict is not Verdict.FAIL:
        return []
    wanted = {tc.criteria}
    if tc.criteria in (PolicyType.SAFETY, PolicyType.SAFETY_SECURITY):
        wanted.add(PolicyType.SAFETY_SECURITY)
    return sorted(p.id for p in policies if p.policy_type in wanted)


def patch_digest(product: str, version: Version) -> str:
    """Content digest of a patch descriptor, in ``sha256:<hex>`` form."""
    payload = f"{' '.join(product.split())}@{version.canonical()}".encode("utf-8")
    return "sha256:" + hashlib.sha256(payload).hexdigest()


def derive_deltas(policy: Policy, tc: TestCase, model: SystemModel) -> list[ModelDelta]:
    """Model changes that fulfil ``policy`` for the targets of ``tc``.

    Patches only apply to targets running a matching product below the fixed
    version. A patch carrying a digest is checked before anything is emitted.
    """
    deltas: list[ModelDelta] = []
    for mitigation in policy.mitigations:
        if isinstance(mitigation, PatchUpdate):
            if mitigation.digest is not None:
                expected = patch_digest(mitigation.product, mitigation.fixed_version)
                if mitigation.digest.lower() != expected:
                    raise DigestMismatch(
                        f"{policy.id}: digest of {mitigation.product} {mitigation.fixed_version} "
                        f"is {expected}, entry says {mitigation.digest}")
            for asset_id in sorted(tc.target):
                asset = model.asset(asset_id)
                if not asset.product or not product_matches(asset.product, mitigation.product):
                    continue
                if asset.version is None or asset.version < mitigation.fixed_version:
                    deltas.append(SetVersion(asset_id, mitigation.fixed_version, policy.id))
        elif isinstance(mitigation, (NetworkRestriction, ProcedureCheck)):
            for asset_id in sorted(tc.target):
                deltas.append(Annotate(asset_id, mitigation.text, policy.id))
    return deltas


# Running ---------------------------------------------------------------------

def _observed(env: Environment, exprs: Sequence[ConditionExpr]) -> tuple[tuple[str, Value], ...]:
    names: list[str] = []
    for expr in exprs:
        for name in identifiers(expr):
            if normalize_name(name) not in map(normalize_name, names):
                names.append(name)
    return tuple((name, env.get(name)) for name in names if name in env)


def run_test(
    tc: TestCase,
    model: SystemModel,
    policies: Sequence[Policy] = (),
    cve_db: Sequence[CveRecord] = (),
    stubs: Mapping[str, Sequence[Behavior]] | None = None,
) -> TestReport:
    """Execute one test case against ``model``.

    ``stubs`` maps asset ids to sandbox behaviors that take precedence over
    the model's own behaviors when actions are executed.
    """
    stubs = stubs or {}
    for asset_id in sorted(tc.target):
        try:
            model.asset(asset_id)
        except UnknownAsset as exc:
            return TestReport(tc.id, Verdict.ERROR, False, expected=tc.expected, reason=str(exc))

    cves: list[str] = []
    for asset_id in sorted(tc.target):
        for rec, _ in match_cves(model.asset(asset_id), cve_db):
            if rec.cve_id not in cves:
                cves.append(rec.cve_id)

    env = model_environment(model, tc.target)

    def error(reason: str, pre_held: bool, observed=()) -> TestReport:
        return TestReport(tc.id, Verdict.ERROR, pre_held, tuple(observed), expected=tc.expected,
                          matched_cves=tuple(cves), reason=reason)

    try:
        pre_held = evaluate(parse_condition(tc.pre), env) if tc.pre else True
    except OtSecTestError as exc:
        return error(f"precondition: {exc}", False)
    if not pre_held:
        return error("precondition not met", False)

    try:
        _execute(tc, model, env, policies, cve_db, stubs)
    except OtSecTestError as exc:
        return error(str(exc), True)

    expected_expr = parse_condition(tc.expected)
    post_expr = parse_condition(tc.post) if tc.post else None
    exprs = [e for e in (post_expr, expected_expr) if e is not None]
    observed = _observed(env, exprs)
    try:
        post_held = evaluate(post_expr, env) if post_expr is not None else None
        expected_held = evaluate(expected_expr, env)
    except OtSecTestError as exc:
        return error(str(exc), True, observed)

    verdict = Verdict.PASS if expected_held else Verdict.FAIL
    recommended = recommend(tc, verdict, policies)
    by_id = {p.id: p for p in policies}
    deltas: list[ModelDelta] = []
    notes: list[str] = []
    for policy_id in recommended:
        try:
            deltas.extend(derive_deltas(by_id[policy_id], tc, model))
        except DigestMismatch as exc:
            notes.append(f"integrity check failed: {exc}")
    return TestReport(
        test_id=tc.id,
        verdict=verdict,
        pre_held=True,
        observed=observed,
        expected_held=expected_held,
        recommended=tuple(recommended),
        matched_cves=tuple(cves),
        derived_deltas=tuple(deltas),
        expected=tc.expected,
        post_held=post_held,
        notes=tuple(notes),
    )


def run_tests(
    testcases: Iterable[TestCase],
    model: SystemModel,
    policies: Sequence[Policy] = (),
    cve_db: Sequence[CveRecord] = (),
    stubs: Mapping[str, Sequence[Behavior]] | None = None,
    max_workers: int = 1,
) -> list[TestReport]:
    """Run test cases (optionally in parallel); reports come back sorted by test id."""
    testcases = list(testcases)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(lambda tc: run_test(tc, model, policies, cve_db, stubs), testcases))
    else:
        reports = [run_test(tc, model, policies, cve_db, stubs) for tc in testcases]
    return sorted(reports, key=lambda r: r.test_id)


# Pseudo-code lint ------------------------------------------------------------

MAX_LINE = 120
_JUMP_RE = re.compile(r"\b(GOTO|JMP|JMPC|JMPCN)\b", re.IGNORECASE)


def lint_pseudocode(methods: Iterable[MethodOperation]) -> list[Diagnostic]:
    """Structural warnings for pseudo-code bodies that are not machine descriptions."""
    diags = []
    for method in methods:
        if method.kind is not MethodKind.PSEUDO_CODE or is_machine_text(method.body):
            continue
        for lineno, line in enumerate(method.body.splitlines(), start=1):
            if len(line) > MAX_LINE:
                diags.append(Diagnostic(Level.WARNING, TableKind.METHODS, method.record_id,
                                        f"line {lineno} longer than {MAX_LINE} characters"))
            if _JUMP_RE.search(line):
                diags.append(Diagnostic(Level.WARNING, TableKind.METHODS, method.record_id,
                                        f"line {lineno} uses an unstructured jump"))
    return diags


# Report formatting -----------------------------------------------------------

def format_value(value: Value) -> str:
    if isinstance(value, Version):
        return value.raw
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def _report_fields(report: TestReport) -> list[tuple[str, str]]:
    observed = ", ".join(f"{name} = {format_value(v)}" for name, v in report.observed)
    deltas = "; ".join(f"{d} by {d.provenance}" if d.provenance else str(d) for d in report.derived_deltas)
    fields = [
        ("test", report.test_id),
        ("verdict", report.verdict.value),
        ("observed", observed),
        ("expected", report.expected),
        ("recommended", ", ".join(report.recommended)),
        ("cves", ", ".join(report.matched_cves)),
        ("deltas", deltas),
    ]
    if report.reason:
        fields.append(("reason", report.reason))
    fields += [("note", note) for note in report.notes]
    return fields


def format_reports(reports: Iterable[TestReport], records_format: bool = False) -> str:
    from otsectest import records

    if records_format:
        return records.format_records(_report_fields(r) for r in reports)
    blocks = []
    for report in reports:
        lines = [f"{key:<12} {value}".rstrip() for key, value in _report_fields(report)]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")
