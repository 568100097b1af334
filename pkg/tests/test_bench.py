import numpy as np
import pytest

from kktgp import bench, io, mining
from kktgp.scenarios import Annulus, Scenario, get_scenario


def test_oracle_classifier_makes_no_errors():
    sc = get_scenario("cup")
    rep = bench.eval_classifier(lambda Z, tau: sc.value(Z) <= 0, sc, grid_n=60)
    for r in rep.rows:
        assert r.fs_pct == 0.0 and r.fu_pct == 0.0


def test_always_safe_rate_equals_unsafe_area():
    sc = get_scenario("cup")
    rep = bench.eval_classifier(lambda Z, tau: np.ones(len(Z), bool), sc, taus=(0.0,), grid_n=100)
    Z = sc.grid(100)
    assert rep.row(0.0).fs_pct == pytest.approx(100.0 * np.mean(sc.value(Z) > 0))
    assert rep.row(0.0).fu_pct == 0.0


def test_boundary_points_are_not_errors():
    # a 5x5 grid over [-2, 2]^2 puts (±1, 0), (±2, 0) and their rotations on the walls
    sc = Scenario("t", "point", Annulus((0, 0), 1.0, 2.0), "path", 0.5, ((-2, -2), (2, 2)), 5)
    never = bench.eval_classifier(lambda Z, tau: np.zeros(len(Z), bool), sc, taus=(0.0,))
    always = bench.eval_classifier(lambda Z, tau: np.ones(len(Z), bool), sc, taus=(0.0,))
    assert never.n_excluded == 8 and never.n_grid == 25
    G = sc.grid()
    v = sc.value(G)
    assert never.row(0).fu_pct == pytest.approx(100 * np.sum(v < -1e-9) / 25)
    assert always.row(0).fs_pct == pytest.approx(100 * np.sum(v > 1e-9) / 25)


def test_csv_layout():
    rep = bench.MetricsReport((bench.MetricsRow(0.0, 0.0, 0.5), bench.MetricsRow(2.33, 0.01, 1.6)),
                              100, 0)
    assert rep.to_csv() == "tau,fs_pct,fu_pct\n0,0.000000,0.500000\n2.33,0.010000,1.600000\n"
    with pytest.raises(KeyError):
        rep.row(1.0)


def test_model_metrics_are_pure(cup, cup_model):
    a = bench.eval_metrics(cup_model, cup, grid_n=50)
    b = bench.eval_metrics(cup_model, cup, grid_n=50)
    assert a.to_csv() == b.to_csv()
    assert [r.tau for r in a.rows] == list(bench.TAUS)
    fs = [r.fs_pct for r in a.rows]
    assert np.all(np.diff(fs) <= 0)  # more caution never adds false-safe points
    assert all(0 <= r.fs_pct <= 100 and 0 <= r.fu_pct <= 100 for r in a.rows)


# files ---------------------------------------------------------------------------------


def test_demo_file_round_trip(tmp_path, cup, cup_certified):
    demos = [c.demo for c in cup_certified]
    path = tmp_path / "demos.json"
    io.save_demos(path, cup, demos)
    sc, back = io.load_demos(path)
    assert sc.name == "cup" and len(back) == len(demos)
    for a, b in zip(demos, back):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.task.goal, b.task.goal)


def test_empty_demo_files(tmp_path, cup):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    with pytest.raises(mining.EmptyDatasetError, match="no demonstrations"):
        io.load_demos(empty)
    none = tmp_path / "none.json"
    io.save_demos(none, cup, [])
    with pytest.raises(mining.EmptyDatasetError):
        io.load_demos(none)


def test_version_mismatch(tmp_path, cup, cup_certified):
    d = io.demos_to_dict(cup, [cup_certified[0].demo])
    d["format_version"] = 99
    with pytest.raises(io.FormatError):
        io.demos_from_dict(d)


def test_evidence_file_round_trip(tmp_path, cup, cup_dataset):
    path = tmp_path / "evidence.json"
    io.save_evidence(path, cup_dataset.evidence, cup_dataset.feas_states, cup)
    ds, sc = io.load_evidence(path)
    np.testing.assert_array_equal(ds.D_kappa, cup_dataset.D_kappa)
    np.testing.assert_array_equal(ds.D_grad, cup_dataset.D_grad)
    assert sc.name == "cup"
