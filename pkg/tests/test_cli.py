import copy
import csv
import io
import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from causalpir.cli import (EXIT_INFEASIBLE, EXIT_OK, EXIT_SIZE_CAP, EXIT_VALIDATION, FIXTURES, ScenarioError,
                           build_scenario, fixture_path, load_scenario, main, moment_table, render_json,
                           run_scenario, validate)
from causalpir.core import FiniteDomain, table_from_dict

F = Fraction


def cli(*args):
    return subprocess.run([sys.executable, "-m", "causalpir", *args], capture_output=True, text=True, timeout=120)


def write(tmp_path, data, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


# --- schema and loading --------------------------------------------------------------

@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_validate(name):
    data = json.loads(fixture_path(name).read_text())
    validate(data)
    assert load_scenario(name) == data


def test_validation_errors():
    with pytest.raises(ScenarioError):
        validate({"version": "2", "task": {"name": "pir"}})
    with pytest.raises(ScenarioError):
        validate({"version": "1", "task": {"name": "no-such-task"}})
    with pytest.raises(ScenarioError):
        load_scenario("no-such-fixture")


def test_moment_parser():
    d = FiniteDomain([("X", (-1, 0, 2)), ("Y", (1, 3))])
    assert np.array_equal(moment_table(d, "E[X]"), d.grid("X"))
    assert np.array_equal(moment_table(d, "E[X*Y^2]"), d.grid("X") * d.grid("Y") ** 2)
    assert np.array_equal(moment_table(d, "E[2*X]"), 2 * d.grid("X"))
    for bad in ("X", "E[Z]", "E[X+Y]"):
        with pytest.raises(ScenarioError):
            moment_table(d, bad)
    cat = FiniteDomain([("A", ("u", "v"))])
    with pytest.raises(ScenarioError):
        moment_table(cat, "E[A]")


def test_empty_relation_rejected_in_process():
    data = copy.deepcopy(load_scenario("device"))
    data["relation"]["members"] = []
    with pytest.raises(ScenarioError):
        build_scenario(data)


# --- runs ---------------------------------------------------------------------------------

def test_device_table():
    r = cli("run", "device")
    assert r.returncode == EXIT_OK
    rows = {tuple(line.split()[:2]): line.split()[2] for line in r.stdout.splitlines()
            if line[:1].isdigit()}
    assert rows[("1", "2")] == rows[("1", "3")] == "1/6"
    assert rows[("2", "1")] == rows[("3", "1")] == "1/3"
    assert rows[("2", "2")] == "0"


def test_parity_exit_code():
    r = cli("run", "parity")
    assert r.returncode == EXIT_INFEASIBLE
    assert "infeasible at step 2" in r.stdout


def test_parity_markov_flag():
    rep = run_scenario(load_scenario("parity"), {"feasibility_scope": "markov"})
    assert rep.status == "non-unique" and rep.exit_code == EXIT_OK


def test_empty_relation_exit_code(tmp_path):
    data = copy.deepcopy(load_scenario("device"))
    data["relation"]["members"] = []
    path = write(tmp_path, data, "empty.json")
    r = cli("run", path)
    assert r.returncode == EXIT_VALIDATION
    assert r.stdout == ""
    assert "error" in r.stderr
    j = cli("run", path, "--format", "json")
    assert j.returncode == EXIT_VALIDATION
    assert json.loads(j.stderr)["error"]["code"]


def test_malformed_json_exit_code(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli("run", str(p)).returncode == EXIT_VALIDATION


def test_size_cap_exit_code(tmp_path):
    data = copy.deepcopy(load_scenario("device"))
    data["task"] = {"name": "census", "cause": "X", "n": 10000}
    r = cli("run", write(tmp_path, data))
    assert r.returncode == EXIT_SIZE_CAP
    assert "cap" in r.stderr


def test_list_examples():
    r = cli("list-examples", "--format", "json")
    assert r.returncode == EXIT_OK
    names = [e["name"] for e in json.loads(r.stdout)]
    assert names == list(FIXTURES) and len(names) == 7


@pytest.mark.parametrize("name", FIXTURES)
def test_every_fixture_runs_in_process(name):
    expected = EXIT_INFEASIBLE if name == "parity" else EXIT_OK
    rep = run_scenario(load_scenario(name))
    assert rep.exit_code == expected
    json.loads(render_json(rep))


def test_main_in_process(capsys):
    assert main(["run", "chain-N", "--format", "json"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    weights = [F(w) for w in out["tables"]["joint"]["weights"]]
    assert sorted(w for w in weights if w) == [F(1, 8), F(1, 8), F(1, 4), F(1, 2)]


def test_task_and_cause_overrides():
    rep = run_scenario(load_scenario("device"), {"cause": "Y"})
    assert rep.tables["joint"][(1, 2)] == F(1, 3)
    rep = run_scenario(load_scenario("device"), {"name": "infer-direction"})
    assert rep.values["direction"] == "X->Y"
    assert rep.values["likelihood_X->Y"] == F(1, 3) and rep.values["likelihood_Y->X"] == F(1, 6)


# --- output formats ----------------------------------------------------------------------

def test_json_is_byte_identical_across_runs():
    a = cli("run", "sun-lauderdale-grid", "--format", "json")
    b = cli("run", "sun-lauderdale-grid", "--format", "json")
    assert a.returncode == EXIT_OK
    assert a.stdout == b.stdout


def test_csv_rows():
    r = cli("run", "device", "--format", "csv")
    rows = list(csv.reader(io.StringIO(r.stdout)))
    assert rows[0] == ["X", "Y", "probability"]
    assert len(rows) == 10
    assert sum(F(row[2]) for row in rows[1:]) == 1


def test_json_table_round_trip(tmp_path):
    r = cli("run", "device", "--format", "json")
    table = json.loads(r.stdout)["tables"]["joint"]
    t = table_from_dict(table)
    assert t.exact and t[(1, 2)] == F(1, 6)
    shown = cli("run", write(tmp_path, {"version": "1", "table": table, "task": {"name": "show"}}),
                "--format", "json")
    assert shown.returncode == EXIT_OK
    assert json.loads(shown.stdout)["tables"]["joint"] == table


def test_float_tables_round_trip_losslessly():
    rep = run_scenario(load_scenario("sun-lauderdale-grid"))
    out = json.loads(render_json(rep))
    name, table = next(iter(out["tables"].items()))
    back = table_from_dict(table)
    assert np.array_equal(back.array(), rep.tables[name].array())
