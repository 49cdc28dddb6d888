"""Vulnerability assessment: OT version grammar, CVSS v3.1 base scoring, CVE matching."""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from otsectest import records
from otsectest.errors import (
    DuplicateMetric,
    InputError,
    MalformedRow,
    MalformedVector,
    MalformedVersion,
    MissingMetric,
    OutOfRange,
)

if TYPE_CHECKING:
    from otsectest.inventory import Asset, Diagnostic


_VERSION_RE = re.compile(r"^\s*V(\d+)\.(\d+)(?:\s+Upd(\d+))?\s*$", re.IGNORECASE)


@functools.total_ordering
@dataclass(frozen=True)
class Version:
    """Dotted OT product version such as ``V7.1 Upd3``.

    Equality and ordering use ``(major, minor, update)`` only; ``raw`` keeps
    the spelling found in the input.
    """

    major: int
    minor: int
    update: int = 0
    raw: str = field(default="", compare=False)

    def __post_init__(self):
        if min(self.major, self.minor, self.update) < 0:
            raise MalformedVersion(f"negative component in {self.key}")
        if not self.raw:
            object.__setattr__(self, "raw", self.canonical())

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.major, self.minor, self.update)

    def canonical(self) -> str:
        text = f"V{self.major}.{self.minor}"
        return f"{text} Upd{self.update}" if self.update else text

    def __lt__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return self.key < other.key

    def __str__(self) -> str:
        return self.raw


def parse_version(text: str) -> Version:
    m = _VERSION_RE.match(text)
    if m is None:
        raise MalformedVersion(f"not a version: {text!r}")
    major, minor, update = m.groups()
    return Version(int(major), int(minor), int(update or 0), raw=text.strip())


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def compare_versions(a: Version, b: Version) -> Ordering:
    if a.key < b.key:
        return Ordering.LESS
    if a.key > b.key:
        return Ordering.GREATER
    return Ordering.EQUAL


# CVSS v3.1 -------------------------------------------------------------------

class AttackVector(enum.Enum):
    NETWORK = "N"
    ADJACENT = "A"
    LOCAL = "L"
    PHYSICAL = "P"


class AttackComplexity(enum.Enum):
    LOW = "L"
    HIGH = "H"


class PrivilegesRequired(enum.Enum):
    NONE = "N"
    LOW = "L"
    HIGH = "H"


class UserInteraction(enum.Enum):
    NONE = "N"
    REQUIRED = "R"


class Scope(enum.Enum):
    UNCHANGED = "U"
    CHANGED = "C"


class Impact(enum.Enum):
    NONE = "N"
    LOW = "L"
    HIGH = "H"


_METRICS = {
    "AV": AttackVector,
    "AC": AttackComplexity,
    "PR": PrivilegesRequired,
    "UI": UserInteraction,
    "S": Scope,
    "C": Impact,
    "I": Impact,
    "A": Impact,
}


@dataclass(frozen=True)
class CvssVector:
    av: AttackVector
    ac: AttackComplexity
    pr: PrivilegesRequired
    ui: UserInteraction
    scope: Scope
    c: Impact
    i: Impact
    a: Impact

    def __str__(self) -> str:
        parts = zip(_METRICS, (self.av, self.ac, self.pr, self.ui, self.scope, self.c, self.i, self.a))
        return "CVSS:3.1/" + "/".join(f"{name}:{value.value}" for name, value in parts)


def parse_cvss_vector(text: str) -> CvssVector:
    parts = text.strip().split("/")
    if parts[0] != "CVSS:3.1":
        raise MalformedVector(f"expected 'CVSS:3.1' prefix in {text!r}")
    seen: dict[str, enum.Enum] = {}
    for part in parts[1:]:
        name, sep, code = part.partition(":")
        if not sep or name not in _METRICS:
            raise MalformedVector(f"bad metric {part!r}")
        if name in seen:
            raise DuplicateMetric(name)
        try:
            seen[name] = _METRICS[name](code)
        except ValueError:
            raise MalformedVector(f"bad value {code!r} for metric {name}") from None
    for name in _METRICS:
        if name not in seen:
            raise MissingMetric(name)
    return CvssVector(*(seen[name] for name in _METRICS))


_AV_WEIGHT = {AttackVector.NETWORK: 0.85, AttackVector.ADJACENT: 0.62,
              AttackVector.LOCAL: 0.55, AttackVector.PHYSICAL: 0.2}
_AC_WEIGHT = {AttackComplexity.LOW: 0.77, AttackComplexity.HIGH: 0.44}
_PR_WEIGHT = {
    Scope.UNCHANGED: {PrivilegesRequired.NONE: 0.85, PrivilegesRequired.LOW: 0.62, PrivilegesRequired.HIGH: 0.27},
    Scope.CHANGED: {PrivilegesRequired.NONE: 0.85, PrivilegesRequired.LOW: 0.68, PrivilegesRequired.HIGH: 0.5},
}
_UI_WEIGHT = {UserInteraction.NONE: 0.85, UserInteraction.REQUIRED: 0.62}
_CIA_WEIGHT = {Impact.HIGH: 0.56, Impact.LOW: 0.22, Impact.NONE: 0.0}


def roundup(value: float) -> float:
    """Smallest one-decimal number >= value, robust to float noise (CVSS v3.1 Appendix A)."""
    int_input = round(value * 100_000)
    if int_input % 10_000 == 0:
        return int_input / 100_000.0
    return (math.floor(int_input / 10_000) + 1) / 10.0


def base_score(v: CvssVector) -> float:
    iss = 1 - (1 - _CIA_WEIGHT[v.c]) * (1 - _CIA_WEIGHT[v.i]) * (1 - _CIA_WEIGHT[v.a])
    changed = v.scope is Scope.CHANGED
    if changed:
        impact = 7.52 * (iss - 0.029) - 3.25 * (iss - 0.02) ** 15
    else:
        impact = 6.42 * iss
    exploitability = 8.22 * _AV_WEIGHT[v.av] * _AC_WEIGHT[v.ac] * _PR_WEIGHT[v.scope][v.pr] * _UI_WEIGHT[v.ui]
    if impact <= 0:
        return 0.0
    if changed:
        return roundup(min(1.08 * (impact + exploitability), 10))
    return roundup(min(impact + exploitability, 10))


class Severity(enum.Enum):
    NONE = "None"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    CRITICAL = "Critical"


def severity_rating(score: float) -> Severity:
    if not 0.0 <= score <= 10.0:
        raise OutOfRange(f"score {score} outside [0.0, 10.0]")
    if score == 0.0:
        return Severity.NONE
    if score < 4.0:
        return Severity.LOW
    if score < 7.0:
        return Severity.MEDIUM
    if score < 9.0:
        return Severity.HIGH
    return Severity.CRITICAL


# CVE snapshot ----------------------------------------------------------------

_CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
SCORE_DISAGREEMENT = 0.5


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    product: str
    affected_low: Version
    affected_high: Version
    vector: CvssVector | None = None
    stored_score: float | None = None
    summary: str = ""
    mitigation: str = ""

    def __post_init__(self):
        if not _CVE_RE.match(self.cve_id):
            raise InputError(f"malformed CVE id {self.cve_id!r}")
        if not self.affected_low < self.affected_high:
            raise InputError(f"{self.cve_id}: empty affected range")
        if self.stored_score is not None and not 0.0 <= self.stored_score <= 10.0:
            raise OutOfRange(f"{self.cve_id}: score {self.stored_score}")

    def affects(self, version: Version) -> bool:
        return self.affected_low <= version < self.affected_high

    @property
    def computed_score(self) -> float | None:
        return None if self.vector is None else base_score(self.vector)

    @property
    def effective_score(self) -> float:
        if self.stored_score is not None:
            return self.stored_score
        if self.vector is not None:
            return base_score(self.vector)
        return 0.0

    @property
    def score_disagrees(self) -> bool:
        """Stored and computed scores both present and more than 0.5 apart."""
        computed = self.computed_score
        if computed is None or self.stored_score is None:
            return False
        return abs(computed - self.stored_score) > SCORE_DISAGREEMENT


def normalize_product(text: str) -> str:
    return " ".join(text.casefold().split())


def product_matches(a: str, b: str) -> bool:
    """Whole-word prefix match in either direction after case/whitespace folding."""
    x, y = normalize_product(a).split(), normalize_product(b).split()
    if not x or not y:
        return False
    n = min(len(x), len(y))
    return x[:n] == y[:n]


def match_cves(
    asset: Asset,
    db: Iterable[CveRecord],
    diagnostics: list[Diagnostic] | None = None,
) -> list[tuple[CveRecord, float]]:
    """CVE records affecting ``asset``, most severe first.

    Assets lacking a product or version cannot be matched; a Warning is
    appended to ``diagnostics`` when a list is supplied.
    """
    if not asset.product or asset.version is None:
        if diagnostics is not None:
            from otsectest.inventory import Diagnostic, Level, TableKind

            diagnostics.append(Diagnostic(
                Level.WARNING, TableKind.ASSETS, asset.id,
                "no product/version; CVE matching skipped"))
        return []
    hits = [
        (rec, rec.effective_score)
        for rec in db
        if product_matches(rec.product, asset.product) and rec.affects(asset.version)
    ]
    hits.sort(key=lambda pair: (-pair[1], pair[0].cve_id))
    return hits


def parse_cve_snapshot(text: str) -> list[CveRecord]:
    out = []
    for index, rec in enumerate(records.parse_records(text)):
        try:
            vector = records.first(rec, "vector")
            score = records.first(rec, "score")
            out.append(CveRecord(
                cve_id=_required(rec, "cve", index),
                product=_required(rec, "product", index),
                affected_low=parse_version(_required(rec, "affected_low", index)),
                affected_high=parse_version(_required(rec, "affected_high", index)),
                vector=parse_cvss_vector(vector) if vector else None,
                stored_score=float(score) if score else None,
                summary=records.first(rec, "summary", ""),
                mitigation=records.first(rec, "mitigation", ""),
            ))
        except MalformedRow:
            raise
        except (InputError, ValueError) as exc:
            raise MalformedRow(index, str(exc)) from None
    return out


def format_cve_snapshot(db: Iterable[CveRecord]) -> str:
    blocks = []
    for rec in db:
        block = [("cve", rec.cve_id), ("product", rec.product),
                 ("affected_low", rec.affected_low.raw), ("affected_high", rec.affected_high.raw)]
        if rec.vector is not None:
            block.append(("vector", str(rec.vector)))
        if rec.stored_score is not None:
            block.append(("score", repr(rec.stored_score)))
        block += [("summary", rec.summary), ("mitigation", rec.mitigation)]
        blocks.append(block)
    return records.format_records(blocks)


def load_cve_snapshot(path: str | Path) -> list[CveRecord]:
    return parse_cve_snapshot(Path(path).read_text(encoding="utf-8"))


def _required(rec: records.Record, key: str, index: int) -> str:
    value = records.first(rec, key)
    if not value:
        raise MalformedRow(index, f"missing field {key!r}")
    return value
