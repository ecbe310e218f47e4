import copy
import csv
import json

import pytest

from ivnsec import cli
from ivnsec.scenario import FIXTURES, ScenarioInvalid, fixture_path, load_document, validate, validate_document
from ivnsec.simcore import build_summary

from tests.conftest import cached_run


def doc(name="local_dos"):
    with open(fixture_path(name)) as fh:
        return json.load(fh)


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_validate_clean(name):
    assert validate(fixture_path(name)) == []


@pytest.mark.parametrize("name", ["static_provisioning", "port_scan", "port_scan_permissive", "local_dos"])
def test_short_fixtures_meet_expectations(name):
    summary = build_summary(cached_run(name, 42))
    for key, want in doc(name)["expected"].items():
        got = summary[key]
        if key == "rules":
            assert {sw: r["total"] for sw, r in got.items()} == want
        elif isinstance(want, dict):
            assert want["min"] <= got <= want["max"]
        else:
            assert got == want


def _break(path, value, name="local_dos"):
    d = doc(name)
    node = d
    for part in path[:-1]:
        node = node[part]
    node[path[-1]] = value
    return d


@pytest.mark.parametrize("path,value,pointer", [
    (("attacks", 0, "entry"), "nowhere", "/attacks/0/entry"),
    (("duration_s",), -1, "/duration_s"),
    (("matrix", 0, "dst"), "ghost", "/matrix/0/dst"),
])
def test_errors_carry_json_pointers(path, value, pointer):
    errors = validate_document(_break(path, value))
    assert errors and errors[0][0] == pointer
    with pytest.raises(ScenarioInvalid):
        load_document(_break(path, value))


def test_overlapping_monitors_rejected():
    d = doc()
    extra = copy.deepcopy(d["nads"][0]["monitors"][0])
    extra["id"] = "video_copy"
    d["nads"][0]["monitors"].append(extra)
    [(pointer, message)] = validate_document(d)
    assert pointer == "/nads/0/monitors/1" and "AmbiguousMonitors" in message


def test_empty_replay_slice_rejected():
    d = doc()
    d["attacks"][0].update(kind="replay", source="video", slice_s=[1, 1])
    [(pointer, message)] = validate_document(d)
    assert pointer == "/attacks/0/slice_s" and "EmptySlice" in message


def test_parse_seed_range():
    assert cli.parse_seed_range("1..3") == [1, 2, 3]
    assert cli.parse_seed_range("4,7") == [4, 7]
    with pytest.raises(Exception):
        cli.parse_seed_range("3..1")


def test_cli_validate(tmp_path, capsys):
    assert cli.main(["validate", "port_scan"]) == cli.EXIT_OK
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_break(("attacks", 0, "entry"), "nowhere")))
    assert cli.main(["validate", str(bad)]) == cli.EXIT_INVALID
    assert "/attacks/0/entry" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == cli.EXIT_INVALID
    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json")
    assert cli.main(["run", str(garbled)]) == cli.EXIT_INVALID


def test_cli_run_writes_artefacts(tmp_path):
    out = tmp_path / "scan"
    assert cli.main(["run", "port_scan", "--seed", "42", "--out", str(out)]) == cli.EXIT_OK
    for name in ("events.jsonl", "nads_intervals.csv", "timings.csv", "summary.json", "acl_violations.jsonl",
                 "flow_tables/sw1.jsonl", "flow_tables/sw2.jsonl"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["responses_observed"] == 0


def test_cli_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "static_provisioning"]) == cli.EXIT_OK
    assert (tmp_path / "env" / "summary.json").exists()


def test_cli_sweep_rows(tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["run", "port_scan_permissive", "--seeds", "1..3", "--out", str(out)]) == cli.EXIT_OK
    assert sorted(p.name for p in out.glob("seed-*")) == ["seed-1", "seed-2", "seed-3"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [1, 2, 3] and len(summary["runs"]) == 3
    with open(out / "timings.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "scenario"


def test_cli_runtime_error_exit_code(tmp_path, monkeypatch):
    def boom(scn, seed):
        raise RuntimeError("engine failure")
    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "static_provisioning", "--out", str(tmp_path)]) == cli.EXIT_RUNTIME
