import shutil

import pytest

from otsectest.cli import main
from otsectest.modelgen import import_caex
from otsectest.assessment import parse_version

from conftest import PLANT_CVES, PLANT_DIR


def _pipeline(out, inventory=PLANT_DIR, *extra):
    return main(["pipeline", "--inventory", str(inventory), "--cve-snapshot", str(PLANT_CVES),
                 "--out", str(out), *extra])


def test_validate_plant(capsys):
    assert main(["validate", "--inventory", str(PLANT_DIR)]) == 0
    assert "no errors" in capsys.readouterr().out


def test_validate_missing_assets(tmp_path, capsys):
    assert main(["validate", "--inventory", str(tmp_path)]) == 2
    assert "file not found" in capsys.readouterr().err


def test_validate_dangling_connection(tmp_path, capsys):
    inv = tmp_path / "inv"
    shutil.copytree(PLANT_DIR, inv)
    with (inv / "connections.csv").open("a") as fh:
        fh.write("C99,H01,H99,HART\n")
    assert main(["validate", "--inventory", str(inv)]) == 2
    assert "dangling reference H99" in capsys.readouterr().out


def test_pipeline_plant(tmp_path, capsys):
    out = tmp_path / "out"
    assert _pipeline(out) == 1
    printed = capsys.readouterr().out
    assert "T01: Pass" in printed and "T02: Fail -> P02" in printed
    names = sorted(p.name for p in out.iterdir())
    assert names == ["assessment.txt", "deltas.txt", "diagnostics.txt", "model.aml", "model.rev1.aml",
                     "report.rev1.txt", "report.txt", "testgen.txt"]
    rev1 = import_caex((out / "model.rev1.aml").read_bytes())
    assert rev1.asset("S02").version == parse_version("V7.1 Upd3")
    assert rev1.revision == 2
    assert "SetVersion(S02, V7.1 Upd3) by P02" in (out / "deltas.txt").read_text()
    assert "Fail" not in (out / "report.rev1.txt").read_text()
    assert "tour: reset shutdown" in (out / "testgen.txt").read_text()


def test_run_against_mitigated_model(tmp_path):
    out = tmp_path / "out"
    _pipeline(out)
    code = main(["run", "--inventory", str(PLANT_DIR), "--cve-snapshot", str(PLANT_CVES),
                 "--out", str(tmp_path / "rerun"), "--model", str(out / "model.rev1.aml")])
    assert code == 0


def test_pipeline_records_format(tmp_path):
    out = tmp_path / "out"
    assert _pipeline(out, PLANT_DIR, "--format", "records") == 1
    assert (out / "report.rec").read_text().startswith("test: T01\n")


def test_empty_inventory(tmp_path):
    inv = tmp_path / "inv"
    inv.mkdir()
    (inv / "assets.csv").write_text("id,type,name\n")
    out = tmp_path / "out"
    assert main(["pipeline", "--inventory", str(inv), "--out", str(out)]) == 0
    assert (out / "report.txt").read_text() == ""
    assert not (out / "model.rev1.aml").exists()


def test_error_verdict_beats_fail(tmp_path):
    inv = tmp_path / "inv"
    shutil.copytree(PLANT_DIR, inv)
    shutil.rmtree(inv / "stubs")
    assert _pipeline(tmp_path / "out", inv) == 2


def test_config_file_and_override(tmp_path, monkeypatch):
    cfg = tmp_path / "run.conf"
    cfg.write_text(f"# plant fixture\ninventory = {PLANT_DIR}\nout = result\nformat = records\n")
    assert main(["model", "--config", str(cfg), "--path", "H10", "H07"]) == 0
    text = (tmp_path / "result" / "attack_paths.txt").read_text()
    assert text.startswith("H10 -> H07: 1 path(s)")
    monkeypatch.setenv("OTSECTEST_CONFIG", str(cfg))
    assert main(["model", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "model.aml").exists()


def test_bad_config(tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("colour = blue\n")
    assert main(["validate", "--config", str(cfg)]) == 2
    assert main(["validate", "--config", str(tmp_path / "absent.conf")]) == 2
    assert main(["validate", "--inventory", str(PLANT_DIR), "--state-budget", "0"]) == 2


def test_assess_and_testgen(tmp_path, capsys):
    assert main(["assess", "--inventory", str(PLANT_DIR), "--cve-snapshot", str(PLANT_CVES),
                 "--out", str(tmp_path)]) == 0
    assert "asset: S02" in capsys.readouterr().out
    assert main(["testgen", "--inventory", str(PLANT_DIR), "--out", str(tmp_path)]) == 0
    assert "coverage: 1.000" in capsys.readouterr().out


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
