"""Plant inventory tables: typed records, CSV/record parsing, referential checks.

Five tables describe the system under test: assets, connections between
them, methods/operations the assets perform, the safety/security policy
catalog, and test cases. ``parse_table`` handles one file at a time;
``validate_inventory`` performs the cross-table checks.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Union

from otsectest import records
from otsectest.assessment import Version, parse_version
from otsectest.conditions import parse_condition
from otsectest.errors import (
    DuplicateId,
    EmptyComponent,
    InputError,
    MalformedRow,
    NotARange,
    UnitMismatch,
    UnknownEnumValue,
)

_ID_RE = re.compile(r"^[^\s+;|,]+$")


class TableKind(enum.Enum):
    ASSETS = "assets"
    CONNECTIONS = "connections"
    METHODS = "methods"
    POLICIES = "policies"
    TESTCASES = "testcases"


TABLE_ORDER = list(TableKind)


class TableFormat(enum.Enum):
    CSV = "csv"
    RECORDS = "rec"


class AssetType(enum.Enum):
    HARDWARE = "Hardware"
    SOFTWARE = "Software"


class MethodKind(enum.Enum):
    NUMERIC_RANGE = "NumericRange"
    PSEUDO_CODE = "PseudoCode"
    TEXTUAL = "Textual"


class PolicyType(enum.Enum):
    SAFETY = "Safety"
    SECURITY = "Security"
    SAFETY_SECURITY = "SafetySecurity"


class Level(enum.Enum):
    ERROR = "Error"
    WARNING = "Warning"


@dataclass(frozen=True)
class Asset:
    id: str
    asset_type: AssetType
    name: str
    product: str | None = None
    version: Version | None = None
    purdue_level: int | None = None

    def __post_init__(self):
        if self.purdue_level is not None and not 0 <= self.purdue_level <= 5:
            raise InputError(f"{self.id}: purdue level {self.purdue_level} outside 0..5")


@dataclass(frozen=True)
class Connection:
    id: str
    source: frozenset[str]
    destination: frozenset[str]
    protocol: str

    def __post_init__(self):
        if not self.source or not self.destination:
            raise InputError(f"{self.id}: empty endpoint")

    @property
    def assets(self) -> frozenset[str]:
        return self.source | self.destination


@dataclass(frozen=True)
class NumericRange:
    low: float
    high: float
    unit: str


@dataclass(frozen=True)
class MethodOperation:
    asset_id: str
    name: str
    kind: MethodKind
    body: str
    range: NumericRange | None = None
    language: str | None = None

    @property
    def record_id(self) -> str:
        return f"{self.asset_id}/{self.name}"


@dataclass(frozen=True)
class PatchUpdate:
    product: str
    fixed_version: Version
    digest: str | None = None


@dataclass(frozen=True)
class NetworkRestriction:
    text: str


@dataclass(frozen=True)
class ProcedureCheck:
    text: str


Mitigation = Union[PatchUpdate, NetworkRestriction, ProcedureCheck]


@dataclass(frozen=True)
class Policy:
    id: str
    name: str
    constraint_text: str
    policy_type: PolicyType
    mitigations: tuple[Mitigation, ...] = ()
    cve_refs: tuple[str, ...] = ()
    stored_score: float | None = None

    def __post_init__(self):
        if self.stored_score is not None and not 0.0 <= self.stored_score <= 10.0:
            raise InputError(f"{self.id}: stored score {self.stored_score} outside [0, 10]")


@dataclass(frozen=True)
class TestCase:
    id: str
    name: str
    target: frozenset[str]
    criteria: PolicyType
    pre: str
    action: tuple[str, ...]
    post: str
    expected: str

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class Diagnostic:
    severity: Level
    table: TableKind
    record_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity.value}: {self.table.value} {self.record_id}: {self.message}"


@dataclass(frozen=True)
class Inventory:
    assets: tuple[Asset, ...] = ()
    connections: tuple[Connection, ...] = ()
    methods: tuple[MethodOperation, ...] = ()
    policies: tuple[Policy, ...] = ()
    testcases: tuple[TestCase, ...] = ()

    def asset(self, asset_id: str) -> Asset | None:
        return next((a for a in self.assets if a.id == asset_id), None)

    def validate(self) -> list[Diagnostic]:
        return validate_inventory(self.assets, self.connections, self.methods, self.policies, self.testcases)


# Field-level grammars --------------------------------------------------------

def parse_endpoint(token: str) -> frozenset[str]:
    """Split a ``+``-joined endpoint such as ``S01+S02+H10`` into its asset ids."""
    if not token or not token.strip():
        raise EmptyComponent("empty endpoint")
    parts = [p.strip() for p in token.split("+")]
    if any(not p for p in parts):
        raise EmptyComponent(f"empty component in endpoint {token!r}")
    for p in parts:
        _check_id(p)
    return frozenset(parts)


def format_endpoint(ids: Iterable[str]) -> str:
    return "+".join(sorted(ids))


_RANGE_RE = re.compile(
    r"^\s*from\s+([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*(\S+)"
    r"\s+to\s+([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*(\S+)\s*$",
    re.IGNORECASE,
)

_SI_PREFIXES = {
    "G": Decimal("1e9"), "M": Decimal("1e6"), "k": Decimal("1e3"), "h": Decimal("1e2"),
    "da": Decimal("1e1"), "d": Decimal("1e-1"), "c": Decimal("1e-2"), "m": Decimal("1e-3"),
    "µ": Decimal("1e-6"), "u": Decimal("1e-6"), "n": Decimal("1e-9"),
}


def _unit_readings(unit: str) -> dict[str, Decimal]:
    readings = {unit: Decimal(1)}
    for prefix, factor in _SI_PREFIXES.items():
        if unit.startswith(prefix) and len(unit) > len(prefix):
            readings.setdefault(unit[len(prefix):], factor)
    return readings


def parse_numeric_range(body: str) -> tuple[float, float, str]:
    """Parse ``from <n> <unit> to <n> <unit>``, converting to the larger stated unit."""
    m = _RANGE_RE.match(body)
    if m is None:
        raise NotARange(f"not a numeric range: {body!r}")
    lo_text, lo_unit, hi_text, hi_unit = m.groups()
    try:
        lo, hi = Decimal(lo_text), Decimal(hi_text)
    except InvalidOperation:
        raise NotARange(f"bad number in {body!r}") from None
    if lo_unit == hi_unit:
        unit = lo_unit
    else:
        lo_read, hi_read = _unit_readings(lo_unit), _unit_readings(hi_unit)
        common = sorted(set(lo_read) & set(hi_read), key=len, reverse=True)
        if not common:
            raise UnitMismatch(f"cannot convert between {lo_unit!r} and {hi_unit!r}")
        base = common[0]
        lo_f, hi_f = lo_read[base], hi_read[base]
        target = max(lo_f, hi_f)
        unit = lo_unit if lo_f >= hi_f else hi_unit
        lo, hi = lo * lo_f / target, hi * hi_f / target
    if not lo < hi:
        raise NotARange(f"empty range in {body!r}")
    return float(lo), float(hi), unit


def _check_id(value: str) -> str:
    if not _ID_RE.match(value):
        raise InputError(f"malformed id {value!r}")
    return value


def _enum(cls, value: str, index: int, field_name: str, aliases: dict[str, str] | None = None):
    key = re.sub(r"[\s&_]+", "", value).casefold()
    for member in cls:
        if member.value.casefold() == key:
            return member
    if aliases and key in aliases:
        return cls(aliases[key])
    raise UnknownEnumValue(index, field_name, value, [m.value for m in cls])


_MITIGATION_KINDS = {"patch": PatchUpdate, "restrict": NetworkRestriction, "procedure": ProcedureCheck}


def parse_mitigation(text: str) -> Mitigation:
    """``patch:<product>@<version>[#<digest>]``, ``restrict:<text>`` or ``procedure:<text>``."""
    kind, sep, payload = text.partition(":")
    kind = kind.strip().lower()
    payload = payload.strip()
    if not sep or kind not in _MITIGATION_KINDS or not payload:
        raise InputError(f"malformed mitigation {text!r}")
    if kind == "patch":
        payload, _, digest = payload.partition("#")
        product, at, version = payload.rpartition("@")
        if not at or not product.strip():
            raise InputError(f"patch mitigation needs 'product@version': {text!r}")
        return PatchUpdate(product.strip(), parse_version(version), digest.strip() or None)
    return _MITIGATION_KINDS[kind](payload)


def format_mitigation(m: Mitigation) -> str:
    if isinstance(m, PatchUpdate):
        text = f"patch:{m.product}@{m.fixed_version.raw}"
        return f"{text}#{m.digest}" if m.digest else text
    if isinstance(m, NetworkRestriction):
        return f"restrict:{m.text}"
    return f"procedure:{m.text}"


def _split_list(text: str | None, sep: str) -> list[str]:
    if not text:
        return []
    return [part.strip() for part in text.split(sep) if part.strip()]


# Table schemas ---------------------------------------------------------------

COLUMNS: dict[TableKind, list[str]] = {
    TableKind.ASSETS: ["id", "type", "name", "product", "version", "purdue_level"],
    TableKind.CONNECTIONS: ["id", "source", "destination", "protocol"],
    TableKind.METHODS: ["asset_id", "name", "description", "kind", "language"],
    TableKind.POLICIES: ["id", "name", "constraint", "type", "mitigations", "cve_refs", "score"],
    TableKind.TESTCASES: ["id", "name", "target", "pre", "action", "post", "expected", "criteria"],
}

REQUIRED: dict[TableKind, set[str]] = {
    TableKind.ASSETS: {"id", "type", "name"},
    TableKind.CONNECTIONS: {"id", "source", "destination", "protocol"},
    TableKind.METHODS: {"asset_id", "name", "description"},
    TableKind.POLICIES: {"id", "name", "constraint", "type"},
    TableKind.TESTCASES: {"id", "name", "target", "expected", "criteria"},
}

# header spellings used by the source tables
_ALIASES = {
    "assetid": "id", "assettype": "type", "assetname": "name", "purdue": "purdue_level",
    "purduelevel": "purdue_level", "connectionid": "id", "sourceassetid": "source",
    "destinationassetid": "destination", "communicationprotocol": "protocol",
    "methodoperation": "name", "method": "name", "codedescription": "description",
    "policyid": "id", "policyname": "name", "policyconstraint": "constraint",
    "policytype": "type", "testid": "id", "testname": "name", "testattribute": "target",
    "expectedresults": "expected", "precondition": "pre", "postcondition": "post",
    "actions": "action", "cves": "cve_refs", "storedscore": "score", "mitigation": "mitigations",
}

_ID_FIELD = {
    TableKind.ASSETS: "id", TableKind.CONNECTIONS: "id", TableKind.POLICIES: "id",
    TableKind.TESTCASES: "id",
}


def _canonical_column(name: str, kind: TableKind) -> str:
    key = re.sub(r"[\s/_\-]+", "", name).casefold()
    for col in COLUMNS[kind]:
        if col.replace("_", "") == key:
            return col
    if kind is TableKind.METHODS and key == "assetid":
        return "asset_id"
    return _ALIASES.get(key, name.strip().lower())


def _build(kind: TableKind, row: dict[str, list[str]], index: int):
    def get(name: str) -> str:
        values = row.get(name)
        return values[0].strip() if values else ""

    def need(name: str) -> str:
        value = get(name)
        if not value:
            raise MalformedRow(index, f"missing value for {name!r}")
        return value

    try:
        if kind is TableKind.ASSETS:
            version = get("version")
            level = get("purdue_level")
            return Asset(
                id=_check_id(need("id")),
                asset_type=_enum(AssetType, need("type"), index, "asset_type"),
                name=need("name"),
                product=get("product") or None,
                version=parse_version(version) if version else None,
                purdue_level=int(level) if level else None,
            )
        if kind is TableKind.CONNECTIONS:
            return Connection(
                id=_check_id(need("id")),
                source=parse_endpoint(need("source")),
                destination=parse_endpoint(need("destination")),
                protocol=need("protocol"),
            )
        if kind is TableKind.METHODS:
            body = row.get("description", [""])[0]
            body = body.strip()
            kind_text = get("kind")
            language = get("language") or None
            if kind_text:
                method_kind = _enum(MethodKind, kind_text, index, "kind")
            else:
                method_kind = _infer_method_kind(body, language)
            rng = None
            if method_kind is MethodKind.NUMERIC_RANGE:
                rng = NumericRange(*parse_numeric_range(body))
            return MethodOperation(
                asset_id=_check_id(need("asset_id")),
                name=need("name"),
                kind=method_kind,
                body=body,
                range=rng,
                language=language,
            )
        if kind is TableKind.POLICIES:
            mitigations = []
            for value in row.get("mitigations", []):
                mitigations += [parse_mitigation(m) for m in _split_list(value, "|")]
            score = get("score")
            cves = []
            for value in row.get("cve_refs", []):
                cves += _split_list(value, ";")
            return Policy(
                id=_check_id(need("id")),
                name=need("name"),
                constraint_text=need("constraint"),
                policy_type=_enum(PolicyType, need("type"), index, "policy_type"),
                mitigations=tuple(mitigations),
                cve_refs=tuple(cves),
                stored_score=float(score) if score else None,
            )
        pre, post, expected = get("pre"), get("post"), need("expected")
        for text in (pre, post, expected):
            if text:
                parse_condition(text)
        return TestCase(
            id=_check_id(need("id")),
            name=need("name"),
            target=parse_endpoint(need("target")),
            criteria=_enum(PolicyType, need("criteria"), index, "criteria"),
            pre=pre,
            action=tuple(_split_list(get("action"), ";")),
            post=post,
            expected=expected,
        )
    except MalformedRow:
        raise
    except (InputError, ValueError) as exc:
        raise MalformedRow(index, str(exc)) from None


def _infer_method_kind(body: str, language: str | None) -> MethodKind:
    try:
        parse_numeric_range(body)
        return MethodKind.NUMERIC_RANGE
    except (NotARange, UnitMismatch):
        pass
    return MethodKind.PSEUDO_CODE if language else MethodKind.TEXTUAL


def _decode(content: bytes | str) -> str:
    if isinstance(content, bytes):
        try:
            return content.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise MalformedRow(0, f"content is not UTF-8: {exc}") from None
    return content


def _rows_csv(text: str, kind: TableKind) -> list[dict[str, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    header = None
    rows = []
    for raw in reader:
        if not raw or all(not cell.strip() for cell in raw):
            continue
        if header is None:
            header = [_canonical_column(h, kind) for h in raw]
            missing = REQUIRED[kind] - set(header)
            if missing:
                raise MalformedRow(0, f"header lacks column(s) {sorted(missing)}")
            continue
        if len(raw) > len(header):
            raise MalformedRow(len(rows), f"{len(raw)} fields, header has {len(header)}")
        rows.append({col: [cell] for col, cell in zip(header, raw)})
    return rows


def _rows_records(text: str, kind: TableKind) -> list[dict[str, list[str]]]:
    rows = []
    for rec in records.parse_records(text):
        row: dict[str, list[str]] = {}
        for key, value in rec:
            row.setdefault(_canonical_column(key, kind), []).append(value)
        rows.append(row)
    return rows


def parse_table(kind: TableKind, content: bytes | str, format: TableFormat = TableFormat.CSV) -> list:
    """Parse one inventory table into typed records, preserving file order.

    Only per-record invariants and id uniqueness are checked; references
    across tables are left to :func:`validate_inventory`.
    """
    kind = TableKind(kind)
    format = TableFormat(format)
    text = _decode(content)
    rows = _rows_csv(text, kind) if format is TableFormat.CSV else _rows_records(text, kind)
    out = []
    seen: set[str] = set()
    for index, row in enumerate(rows):
        item = _build(kind, row, index)
        id_field = _ID_FIELD.get(kind)
        if id_field is not None:
            if item.id in seen:
                raise DuplicateId(item.id, index)
            seen.add(item.id)
        out.append(item)
    return out


def _fields(kind: TableKind, item) -> dict[str, list[str]]:
    if kind is TableKind.ASSETS:
        return {
            "id": [item.id], "type": [item.asset_type.value], "name": [item.name],
            "product": [item.product or ""], "version": [item.version.raw if item.version else ""],
            "purdue_level": ["" if item.purdue_level is None else str(item.purdue_level)],
        }
    if kind is TableKind.CONNECTIONS:
        return {
            "id": [item.id], "source": [format_endpoint(item.source)],
            "destination": [format_endpoint(item.destination)], "protocol": [item.protocol],
        }
    if kind is TableKind.METHODS:
        return {
            "asset_id": [item.asset_id], "name": [item.name], "description": [item.body],
            "kind": [item.kind.value], "language": [item.language or ""],
        }
    if kind is TableKind.POLICIES:
        return {
            "id": [item.id], "name": [item.name], "constraint": [item.constraint_text],
            "type": [item.policy_type.value],
            "mitigations": [format_mitigation(m) for m in item.mitigations],
            "cve_refs": ["; ".join(item.cve_refs)],
            "score": ["" if item.stored_score is None else repr(item.stored_score)],
        }
    return {
        "id": [item.id], "name": [item.name], "target": [format_endpoint(item.target)],
        "pre": [item.pre], "action": ["; ".join(item.action)], "post": [item.post],
        "expected": [item.expected], "criteria": [item.criteria.value],
    }


def serialize_table(kind: TableKind, items: Iterable, format: TableFormat = TableFormat.CSV) -> str:
    """Inverse of :func:`parse_table`."""
    kind = TableKind(kind)
    format = TableFormat(format)
    columns = COLUMNS[kind]
    if format is TableFormat.CSV:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for item in items:
            fields = _fields(kind, item)
            joined = {c: (" | ".join(v) if c == "mitigations" else (v[0] if v else "")) for c, v in fields.items()}
            writer.writerow([joined[c] for c in columns])
        return buf.getvalue()
    blocks = []
    for item in items:
        fields = _fields(kind, item)
        block = []
        for col in columns:
            key = "mitigation" if col == "mitigations" else col
            block += [(key, v) for v in fields[col] if v != ""]
        blocks.append(block)
    return records.format_records(blocks)


# Cross-table validation ------------------------------------------------------

def validate_inventory(
    assets: Iterable[Asset],
    connections: Iterable[Connection],
    methods: Iterable[MethodOperation] = (),
    policies: Iterable[Policy] = (),
    testcases: Iterable[TestCase] = (),
) -> list[Diagnostic]:
    """Referential integrity of an inventory; Errors for dangling ids, Warnings otherwise."""
    assets = list(assets)
    known = {a.id for a in assets}
    diags: list[Diagnostic] = []

    connected: set[str] = set()
    for conn in connections:
        connected |= conn.assets
        for ref in sorted(conn.assets - known):
            diags.append(Diagnostic(Level.ERROR, TableKind.CONNECTIONS, conn.id, f"dangling reference {ref}"))
    for asset in assets:
        if asset.id not in connected:
            diags.append(Diagnostic(Level.WARNING, TableKind.ASSETS, asset.id, "asset has no connections"))
    for method in methods:
        if method.asset_id not in known:
            diags.append(Diagnostic(Level.ERROR, TableKind.METHODS, method.record_id,
                                    f"dangling reference {method.asset_id}"))
    for policy in policies:
        if not policy.mitigations:
            diags.append(Diagnostic(Level.WARNING, TableKind.POLICIES, policy.id, "policy has no mitigations"))
    for tc in testcases:
        for ref in sorted(tc.target - known):
            diags.append(Diagnostic(Level.ERROR, TableKind.TESTCASES, tc.id, f"dangling reference {ref}"))

    order = {kind: n for n, kind in enumerate(TABLE_ORDER)}
    return sorted(diags, key=lambda d: (order[d.table], d.record_id))


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.severity is Level.ERROR for d in diagnostics)


# Directory loading -----------------------------------------------------------

def table_path(directory: Path, kind: TableKind) -> Path | None:
    for fmt in TableFormat:
        path = directory / f"{kind.value}.{fmt.value}"
        if path.is_file():
            return path
    return None


def load_inventory(directory: str | Path) -> Inventory:
    """Load ``<table>.csv`` (or ``<table>.rec``) files from ``directory``.

    ``assets`` is mandatory; every other table defaults to empty.
    """
    directory = Path(directory)
    tables = {}
    for kind in TableKind:
        path = table_path(directory, kind)
        if path is None:
            if kind is TableKind.ASSETS:
                raise FileNotFoundError(f"file not found: {directory / 'assets.csv'}")
            tables[kind] = ()
            continue
        fmt = TableFormat(path.suffix.lstrip("."))
        try:
            tables[kind] = tuple(parse_table(kind, path.read_bytes(), fmt))
        except InputError as exc:
            raise InputError(f"{path.name}: {exc}") from exc
    return Inventory(
        assets=tables[TableKind.ASSETS],
        connections=tables[TableKind.CONNECTIONS],
        methods=tables[TableKind.METHODS],
        policies=tables[TableKind.POLICIES],
        testcases=tables[TableKind.TESTCASES],
    )
