from pathlib import Path

import pytest

from otsectest.assessment import load_cve_snapshot
from otsectest.inventory import load_inventory
from otsectest.modelgen import build_model

FIXTURES = Path(__file__).parent / "fixtures"
PLANT_DIR = FIXTURES / "example_plant"
PLANT_CVES = FIXTURES / "example_cves.rec"


@pytest.fixture
def plant_inventory():
    return load_inventory(PLANT_DIR)


@pytest.fixture
def plant_model(plant_inventory):
    return build_model(plant_inventory)


@pytest.fixture
def plant_cves():
    return load_cve_snapshot(PLANT_CVES)
