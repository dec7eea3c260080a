import csv
import json

import numpy as np
import pytest

from fuincentive import cli
from fuincentive.client_game import EquilibriumResult
from fuincentive.errors import IntegrityError

HOMOGENEOUS = {
    "seed": 1,
    "num_remaining": 3,
    "budget": 2.0,
    "profile": {
        "gram": [[0.7] * 4 for _ in range(4)],
        "alpha": [0.2, 0.3, 0.5],
        "cost": [0.2, 0.3, 0.5],
        "removed_weights": [0.5],
    },
}
SMALL = {"seed": 7, "num_remaining": 3, "num_removed": 1, "points_per_class_cap": 20}


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def report(path):
    return json.loads(open(path).read())


def test_nash_homogeneous_override_gives_full_participation(tmp_path):
    cfg = write(tmp_path, "h.json", HOMOGENEOUS)
    out = tmp_path / "o" / "r.json"
    code = cli.main(["--mode", "nash", "--config", cfg, "--out", str(out), "--payments", "1", "1", "1", "--quiet"])
    assert code == cli.EXIT_OK
    eq = report(out)["canonical"]["outputs"]["equilibrium"]
    assert eq["x_star"] == [1.0, 1.0, 1.0] and eq["converged"]


def test_csv_layout(tmp_path):
    cfg = write(tmp_path, "h.json", HOMOGENEOUS)
    out = tmp_path / "r.json"
    cli.main(["--mode", "nash", "--config", cfg, "--out", str(out), "--quiet"])
    raw = (tmp_path / "r.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert tuple(rows[0]) == cli.CSV_COLUMNS
    assert [r["client_id"] for r in rows] == ["0", "1", "2"]
    assert [float(r["participation"]) for r in rows] == [0.0, 0.0, 0.0]


def test_report_echoes_config_and_separates_timing(tmp_path):
    cfg = write(tmp_path, "s.json", SMALL)
    out = tmp_path / "r.json"
    cli.main(["--mode", "nash", "--config", cfg, "--out", str(out), "--seed-override", "9", "--quiet"])
    rep = report(out)
    assert rep["canonical"]["config"]["seed"] == 9
    assert rep["canonical"]["config"]["num_remaining"] == 3
    assert "total" in rep["timing"]
    summary = rep["canonical"]["outputs"]["profile_summary"]
    assert len(summary["pairwise_distance"]) == 3 and len(summary["het_to_removed"]) == 3


def test_same_request_twice_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "s.json", SMALL)
    texts = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        assert cli.main(["--mode", "haipo", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        texts.append(cli.canonical_json(report(out)["canonical"]))
    assert texts[0] == texts[1]


def test_sweep_rows_follow_value_order(tmp_path):
    cfg = write(tmp_path, "s.json", SMALL)
    out = tmp_path / "sw.json"
    code = cli.main(["--mode", "sweep", "--config", cfg, "--out", str(out), "--sweep-key", "dirichlet_beta",
                     "--sweep-values", "0.2", "0.5", "0.8", "--sweep-mode", "nash", "--quiet"])
    assert code == 0
    rows = report(out)["canonical"]["sweep"]["rows"]
    assert [r["value"] for r in rows] == [0.2, 0.5, 0.8]
    assert [r["config"]["dirichlet_beta"] for r in rows] == [0.2, 0.5, 0.8]
    for v in ("0p2", "0p5", "0p8"):
        assert (tmp_path / f"sw_dirichlet_beta_{v}.csv").exists()


def test_uniform_mode_compares_against_haipo(tmp_path):
    cfg = write(tmp_path, "h.json", HOMOGENEOUS)
    out = tmp_path / "u.json"
    assert cli.main(["--mode", "uniform", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    table = report(out)["canonical"]["outputs"]["comparison"]["table"]
    assert table["haipo"]["payment_total"] == table["uniform"]["payment_total"] == 0.0
    assert table["utility_gap"] >= -1e-9
    assert set(table["haipo"]["correlations"]) == {"alpha", "het_to_removed"}


def test_oracle_suite_runs(tmp_path):
    cfg = write(tmp_path, "s.json", SMALL)
    out = tmp_path / "q.json"
    code = cli.main(["--mode", "oracle-suite", "--config", cfg, "--out", str(out), "--grid-points", "101", "--quiet"])
    suite = report(out)["canonical"]["outputs"]["oracle_suite"]
    assert code == (0 if suite["passed"] else cli.EXIT_INTEGRITY)
    assert {c["check"] for c in suite["checks"]} >= {"best_response", "impact_derivative", "nash"}


@pytest.mark.parametrize("payload,needle", [
    ({"num_remaining": 3}, "seed"),
    ({"seed": 1, "bogus": 1}, "unknown"),
    ({"seed": 1, "dirichlet_beta": -1}, "dirichlet_beta"),
    ({"seed": 1, "profile": {"gram": [[1.0]]}}, "profile"),
])
def test_config_errors_exit_2(tmp_path, capsys, payload, needle):
    cfg = write(tmp_path, "bad.json", payload)
    code = cli.main(["--mode", "nash", "--config", cfg, "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and needle in err["message"]


def test_missing_file_and_bad_payments_exit_2(tmp_path):
    assert cli.main(["--mode", "nash", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r.json")]) == 2
    cfg = write(tmp_path, "s.json", SMALL)
    assert cli.main(["--mode", "nash", "--config", cfg, "--out", str(tmp_path / "r.json"), "--payments", "1"]) == 2
    assert cli.main(["--mode", "sweep", "--config", cfg, "--out", str(tmp_path / "r.json")]) == 2


def test_nonconvergence_exit_3_still_writes_report(tmp_path, monkeypatch):
    def stuck(profile, p, **kw):
        return EquilibriumResult(np.zeros(profile.n_clients), 5, 0.5, False, False, 0.5)

    monkeypatch.setattr(cli, "nash_solve", stuck)
    cfg = write(tmp_path, "s.json", SMALL)
    out = tmp_path / "r.json"
    assert cli.main(["--mode", "nash", "--config", cfg, "--out", str(out), "--quiet"]) == cli.EXIT_NONCONVERGED
    assert report(out)["canonical"]["converged"] is False


def test_integrity_error_exit_4(tmp_path, monkeypatch, capsys):
    def broken(profile, p, **kw):
        raise IntegrityError("negative squared norm")

    monkeypatch.setattr(cli, "nash_solve", broken)
    cfg = write(tmp_path, "s.json", SMALL)
    assert cli.main(["--mode", "nash", "--config", cfg, "--out", str(tmp_path / "r.json")]) == cli.EXIT_INTEGRITY
    assert json.loads(capsys.readouterr().err.strip())["error"] == "integrity"


def test_budget_override_reaches_profile(tmp_path):
    cfg = write(tmp_path, "s.json", SMALL)
    out = tmp_path / "r.json"
    cli.main(["--mode", "nash", "--config", cfg, "--out", str(out), "--budget-override", "4.5", "--quiet"])
    rep = report(out)["canonical"]
    assert rep["config"]["budget"] == 4.5 and rep["outputs"]["profile_summary"]["budget"] == 4.5


def test_canonical_json_replaces_non_finite():
    text = cli.canonical_json({"b": float("nan"), "a": np.float64(1.5), "c": np.array([1, 2])})
    assert json.loads(text) == {"a": 1.5, "b": None, "c": [1, 2]}
    assert text.index('"a"') < text.index('"b"')
