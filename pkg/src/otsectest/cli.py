"""``otsectest`` command-line driver.

Exit status: 0 when everything passed, 1 when a test failed, 2 on input
faults, inventory errors or Error verdicts.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from otsectest import engine, modelgen, testgen
from otsectest.assessment import (
    CveRecord,
    load_cve_snapshot,
    match_cves,
    severity_rating,
)
from otsectest.errors import OtSecTestError
from otsectest.inventory import Inventory, has_errors, load_inventory
from otsectest.modelgen import Machine, SystemModel

log = logging.getLogger("otsectest")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
CONFIG_ENV = "OTSECTEST_CONFIG"

_KEY_ALIASES = {
    "inventory": "inventory_dir", "inventory_dir": "inventory_dir",
    "cve_snapshot": "cve_snapshot",
    "out": "output_dir", "output_dir": "output_dir",
    "max_path_len": "max_path_len", "state_budget": "state_budget",
    "format": "report_format", "report_format": "report_format",
}


@dataclass(frozen=True)
class RunConfig:
    inventory_dir: Path = Path(".")
    cve_snapshot: Path | None = None
    output_dir: Path = Path("out")
    max_path_len: int | None = None
    state_budget: int = 10_000
    report_format: str = "text"

    def __post_init__(self):
        if not str(self.inventory_dir) or not str(self.output_dir):
            raise ValueError("paths must be non-empty")
        if self.state_budget < 1 or (self.max_path_len is not None and self.max_path_len < 1):
            raise ValueError("budgets must be >= 1")
        if self.report_format not in ("text", "records"):
            raise ValueError(f"unknown report format {self.report_format!r}")


class UsageError(Exception):
    pass


def read_config_file(path: Path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _KEY_ALIASES:
            raise UsageError(f"{path}:{lineno}: expected 'key = value' with a known key")
        values[_KEY_ALIASES[key]] = value.strip()
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, str] = {}
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        base = path.parent
        values = read_config_file(path)
        for key in ("inventory_dir", "cve_snapshot", "output_dir"):
            if key in values:
                values[key] = str(base / values[key])
    for key in _KEY_ALIASES.values():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    try:
        return RunConfig(
            inventory_dir=Path(values.get("inventory_dir", ".")),
            cve_snapshot=Path(values["cve_snapshot"]) if values.get("cve_snapshot") else None,
            output_dir=Path(values.get("output_dir", "out")),
            max_path_len=int(values["max_path_len"]) if values.get("max_path_len") else None,
            state_budget=int(values.get("state_budget", 10_000)),
            report_format=values.get("report_format", "text"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# Loading ---------------------------------------------------------------------

def load_stubs(inventory_dir: Path) -> dict[str, tuple[Machine, ...]]:
    """Sandbox behaviors from ``<inventory>/stubs/<asset-id>.fsm``."""
    stubs = {}
    folder = inventory_dir / "stubs"
    if folder.is_dir():
        for path in sorted(folder.glob("*.fsm")):
            machine = testgen.parse_machine(path.read_text(encoding="utf-8"))
            stubs[path.stem] = (Machine(f"stub:{path.stem}", machine),)
    return stubs


def load_cves(config: RunConfig) -> list[CveRecord]:
    if config.cve_snapshot is None:
        return []
    if not config.cve_snapshot.is_file():
        raise FileNotFoundError(f"file not found: {config.cve_snapshot}")
    return load_cve_snapshot(config.cve_snapshot)


def _write(path: Path, text: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, str):
        text = text.encode("utf-8")
    path.write_bytes(text)


def _diagnostics(inventory: Inventory):
    return inventory.validate() + engine.lint_pseudocode(inventory.methods)


# Section renderers -----------------------------------------------------------

def render_testgen(model: SystemModel, stubs, state_budget: int) -> str:
    blocks = []
    sources = [(a, b, "model") for a in sorted(model.control.behaviors) for b in model.behaviors(a)]
    sources += [(a, b, "stub") for a in sorted(stubs) for b in stubs[a]]
    for asset_id, behavior, origin in sources:
        if not isinstance(behavior, Machine):
            continue
        lines = [f"asset: {asset_id}", f"behavior: {behavior.name}", f"origin: {origin}"]
        try:
            fsm = testgen.as_fsm(behavior.machine, state_budget)
            cover = testgen.generate_state_cover(fsm)
            for state, seq in cover.items():
                lines.append(f"state_cover: {state} <- {' '.join(seq.inputs) or '(empty)'}")
            tour = testgen.generate_transition_tour(fsm)
            lines.append(f"tour: {' '.join(tour.inputs) or '(empty)'}")
            lines.append(f"coverage: {testgen.coverage(fsm, [tour]):.3f}")
        except OtSecTestError as exc:
            lines.append(f"error: {exc}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def render_assessment(model: SystemModel, cves: Sequence[CveRecord]) -> str:
    blocks = []
    for asset in model.assets:
        if not asset.product or asset.version is None:
            continue
        hits = match_cves(asset, cves)
        lines = [f"asset: {asset.id}", f"product: {asset.product}", f"version: {asset.version.raw}"]
        for rec, score in hits:
            origin = "stored" if rec.stored_score is not None else "computed"
            line = f"cve: {rec.cve_id} score {score:.1f} ({origin}) {severity_rating(score).value}"
            if rec.score_disagrees:
                line += f" [computed {rec.computed_score:.1f} differs]"
            lines.append(line)
            if rec.mitigation:
                lines.append(f"mitigation: {rec.mitigation}")
        if not hits:
            lines.append("cve: none")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def render_paths(model: SystemModel, source: str, target: str, max_len: int | None) -> str:
    paths = modelgen.attack_paths(model, source, target, max_len)
    out = [f"{source} -> {target}: {len(paths)} path(s)"]
    protocol = {e.id: e.protocol for e in model.system.edges}
    for p in paths:
        parts = [p[0]]
        for edge_id, node in zip(p[1::2], p[2::2]):
            parts.append(f"-{edge_id}/{protocol[edge_id]}- {node}")
        out.append("  " + " ".join(parts))
    return "\n".join(out) + "\n"


def _exit_for(reports) -> int:
    verdicts = {r.verdict for r in reports}
    if engine.Verdict.ERROR in verdicts:
        return EXIT_ERROR
    if engine.Verdict.FAIL in verdicts:
        return EXIT_FAIL
    return EXIT_OK


def _report_name(config: RunConfig, stem: str) -> str:
    return f"{stem}.rec" if config.report_format == "records" else f"{stem}.txt"


# Commands --------------------------------------------------------------------

def cmd_validate(config: RunConfig, args) -> int:
    inventory = load_inventory(config.inventory_dir)
    diags = _diagnostics(inventory)
    for d in diags:
        print(d)
    errors = has_errors(diags)
    print(f"{len(diags)} diagnostic(s), {'errors found' if errors else 'no errors'}")
    return EXIT_ERROR if errors else EXIT_OK


def _checked_inventory(config: RunConfig) -> Inventory | None:
    inventory = load_inventory(config.inventory_dir)
    diags = _diagnostics(inventory)
    if has_errors(diags):
        for d in diags:
            print(d, file=sys.stderr)
        return None
    return inventory


def cmd_model(config: RunConfig, args) -> int:
    inventory = _checked_inventory(config)
    if inventory is None:
        return EXIT_ERROR
    model = modelgen.build_model(inventory)
    _write(config.output_dir / "model.aml", modelgen.export_caex(model))
    print(f"model: {len(model.system.nodes)} node(s), {len(model.system.edges)} edge(s)")
    if args.path:
        text = render_paths(model, args.path[0], args.path[1], config.max_path_len)
        _write(config.output_dir / "attack_paths.txt", text)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_testgen(config: RunConfig, args) -> int:
    inventory = _checked_inventory(config)
    if inventory is None:
        return EXIT_ERROR
    model = modelgen.build_model(inventory)
    text = render_testgen(model, load_stubs(config.inventory_dir), config.state_budget)
    _write(config.output_dir / "testgen.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_assess(config: RunConfig, args) -> int:
    inventory = _checked_inventory(config)
    if inventory is None:
        return EXIT_ERROR
    model = modelgen.build_model(inventory)
    text = render_assessment(model, load_cves(config))
    _write(config.output_dir / "assessment.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def _run_and_report(config: RunConfig, inventory: Inventory, model: SystemModel, cves, stem: str):
    reports = engine.run_tests(inventory.testcases, model, inventory.policies, cves,
                               load_stubs(config.inventory_dir))
    text = engine.format_reports(reports, records_format=config.report_format == "records")
    _write(config.output_dir / _report_name(config, stem), text)
    return reports, text


def cmd_run(config: RunConfig, args) -> int:
    inventory = _checked_inventory(config)
    if inventory is None:
        return EXIT_ERROR
    if args.model:
        model = modelgen.import_caex(Path(args.model).read_bytes())
    else:
        model = modelgen.build_model(inventory)
    reports, text = _run_and_report(config, inventory, model, load_cves(config), "report")
    sys.stdout.write(text)
    return _exit_for(reports)


def cmd_pipeline(config: RunConfig, args) -> int:
    inventory = load_inventory(config.inventory_dir)
    diags = _diagnostics(inventory)
    _write(config.output_dir / "diagnostics.txt", "".join(f"{d}\n" for d in diags))
    if has_errors(diags):
        for d in diags:
            print(d, file=sys.stderr)
        return EXIT_ERROR
    cves = load_cves(config)
    stubs = load_stubs(config.inventory_dir)

    model = modelgen.build_model(inventory)
    _write(config.output_dir / "model.aml", modelgen.export_caex(model))
    _write(config.output_dir / "testgen.txt", render_testgen(model, stubs, config.state_budget))
    _write(config.output_dir / "assessment.txt", render_assessment(model, cves))

    reports, text = _run_and_report(config, inventory, model, cves, "report")
    deltas = [d for r in reports for d in r.derived_deltas]
    _write(config.output_dir / "deltas.txt",
           "".join(f"{d} by {d.provenance}\n" for d in deltas))
    if deltas:
        mitigated = modelgen.apply_deltas(model, deltas)
        _write(config.output_dir / "model.rev1.aml", modelgen.export_caex(mitigated))
        _run_and_report(config, inventory, mitigated, cves, "report.rev1")

    for r in reports:
        print(f"{r.test_id}: {r.verdict.value}" + (f" -> {', '.join(r.recommended)}" if r.recommended else ""))
    return _exit_for(reports)


COMMANDS = {
    "validate": cmd_validate,
    "model": cmd_model,
    "testgen": cmd_testgen,
    "run": cmd_run,
    "assess": cmd_assess,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV})")
    common.add_argument("--inventory", "--inventory-dir", dest="inventory_dir")
    common.add_argument("--cve-snapshot", dest="cve_snapshot")
    common.add_argument("--out", "--output-dir", dest="output_dir")
    common.add_argument("--format", "--report-format", dest="report_format", choices=["text", "records"])
    common.add_argument("--max-path-len", dest="max_path_len", type=int)
    common.add_argument("--state-budget", dest="state_budget", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="otsectest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check inventory tables")
    model = sub.add_parser("model", parents=[common], help="build and export the system model")
    model.add_argument("--path", nargs=2, metavar=("FROM", "TO"), help="enumerate attack paths")
    sub.add_parser("testgen", parents=[common], help="generate test sequences for behavior machines")
    run = sub.add_parser("run", parents=[common], help="run test cases")
    run.add_argument("--model", help="run against an exported .aml model instead of the inventory")
    sub.add_parser("assess", parents=[common], help="match assets against the CVE snapshot")
    sub.add_parser("pipeline", parents=[common], help="validate, model, generate, run and assess")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config, args)
    except (UsageError, OtSecTestError, OSError) as exc:
        print(f"otsectest: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
