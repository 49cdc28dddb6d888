"""Model-based safety and security testing toolkit for OT environments."""

from otsectest.assessment import (
    CveRecord,
    CvssVector,
    Severity,
    Version,
    base_score,
    compare_versions,
    match_cves,
    parse_cvss_vector,
    parse_version,
    severity_rating,
)
from otsectest.engine import TestReport, evaluate, parse_condition, recommend, run_test
from otsectest.inventory import Inventory, load_inventory, parse_table, validate_inventory
from otsectest.modelgen import (
    SystemModel,
    apply_delta,
    attack_paths,
    build_model,
    export_caex,
    import_caex,
)
from otsectest.testgen import (
    Efsm,
    Fsm,
    TestSequence,
    coverage,
    generate_state_cover,
    generate_transition_tour,
    unfold_efsm,
)

__version__ = "0.1.0"

__all__ = [
    "CveRecord",
    "CvssVector",
    "Efsm",
    "Fsm",
    "Inventory",
    "Severity",
    "SystemModel",
    "TestReport",
    "TestSequence",
    "Version",
    "apply_delta",
    "attack_paths",
    "base_score",
    "build_model",
    "compare_versions",
    "coverage",
    "evaluate",
    "export_caex",
    "generate_state_cover",
    "generate_transition_tour",
    "import_caex",
    "load_inventory",
    "match_cves",
    "parse_condition",
    "parse_cvss_vector",
    "parse_table",
    "parse_version",
    "recommend",
    "run_test",
    "severity_rating",
    "unfold_efsm",
    "validate_inventory",
]
