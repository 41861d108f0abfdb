import json

import numpy as np
import pytest

from aerialmpc import kinematics as kin
from aerialmpc.harness.cli import main
from aerialmpc.harness.config import ConfigError, load_config
from aerialmpc.harness.metrics import collapse_modes, compute_metrics, stable_window_start
from aerialmpc.harness.runner import (DATASET_COLUMNS, LOG_COLUMNS, collect_dataset, metrics_from_log, read_log,
                                      run_experiment)
from aerialmpc.harness.trajectories import clover_trajectory, moving_target_trajectory


# --- trajectories ---------------------------------------------------------------------------


def test_clover_start_and_periodicity():
    s = clover_trajectory(0.0, 0.5, 40.0, (0.0, 0.0, 1.0))
    assert np.array_equal(s.p, [0.5, 0.0, 1.0]) and s.d_g == 1.0
    end = clover_trajectory(40.0, 0.5, 40.0, (0.0, 0.0, 1.0))
    assert np.max(np.abs(end.p - s.p)) < 1e-12
    with pytest.raises(ValueError):
        clover_trajectory(0.0, period=0.0)


def test_clover_velocity_matches_finite_difference():
    h = 1e-5
    for t in np.linspace(0.1, 39.9, 97):
        v = clover_trajectory(t).v
        fd = (clover_trajectory(t + h).p - clover_trajectory(t - h).p) / (2 * h)
        assert np.linalg.norm(fd - v) <= 1e-3 * max(np.linalg.norm(v), 1e-6)
    # the path stays at constant height
    assert all(clover_trajectory(t).p[2] == 1.0 for t in np.linspace(0, 40, 13))


def test_moving_target_examples():
    s0 = moving_target_trajectory(0.0)
    assert np.allclose(s0.p, [0.0, 1.4, 0.6], atol=1e-15) and s0.d_g == 0.0
    assert np.allclose(moving_target_trajectory(10.0).p, [0.0, 1.9, 0.6], atol=1e-12)
    for t in (0.0, 3.0, 100.0):
        assert np.array_equal(moving_target_trajectory(t).v, [0.0, 0.05, 0.0])
    with pytest.raises(ValueError):
        moving_target_trajectory(-1.0)


# --- metrics --------------------------------------------------------------------------------


def test_constant_error_log():
    t = 0.02 * np.arange(500)
    m = compute_metrics(t, np.full(500, 0.01))
    assert m.mean_error == pytest.approx(0.01, abs=1e-15) and m.max_error == pytest.approx(0.01, abs=1e-15)
    assert m.converged and m.catch_up_time == 0.0 and m.status == "ok"


def test_catch_up_time_of_synthetic_log():
    t = 0.02 * np.arange(2000)
    err = np.where(t < 15.0, 1.0 - t / 20.0, 0.02)
    # a brief dip below the threshold before 15 s must not count as catching up
    err[(t > 8.0) & (t < 9.0)] = 0.01
    m = compute_metrics(t, err)
    assert m.catch_up_time == pytest.approx(15.0, abs=1e-9)
    assert m.mean_error == pytest.approx(0.02) and m.converged


def test_stable_window_mean_matches_independent_recomputation():
    rng = np.random.default_rng(2)
    t = 0.02 * np.arange(3000)
    err = np.abs(rng.normal(0.02, 0.01, 3000))
    err[:400] += 0.2
    err[1000] = 0.3  # single spike inside the window still counts in the mean
    m = compute_metrics(t, err)
    # row-by-row recomputation: find the first row followed by 2 s of sub-threshold rows
    first = None
    for i in range(len(t)):
        j = i
        while j < len(t) and err[j] < 0.05 and t[j] - t[i] < 2.0:
            j += 1
        if j < len(t) and err[j] < 0.05 and t[j] - t[i] >= 2.0 - 1e-12 and np.all(err[i:j + 1] < 0.05):
            first = i
            break
    assert first is not None and m.catch_up_time == t[first]
    total, count = 0.0, 0
    for e in err[first:]:
        total += e
        count += 1
    assert m.mean_error == pytest.approx(total / count, rel=1e-12)
    assert m.max_error == pytest.approx(0.3)


def test_window_never_reached_is_flagged():
    t = 0.02 * np.arange(100)
    m = compute_metrics(t, np.full(100, 0.2))
    assert not m.converged and m.status == "not_converged" and np.isnan(m.catch_up_time)
    assert m.mean_error == pytest.approx(0.2)
    assert stable_window_start(t, np.full(100, 0.01), hold=10.0) is None
    assert compute_metrics([], []).status == "empty"


def test_mode_summary():
    modes = ["flight"] * 3 + ["coordinated"] * 5 + ["hover"] * 2
    assert collapse_modes(modes) == ["flight", "coordinated", "hover"]
    m = compute_metrics(0.02 * np.arange(10), np.zeros(10), gammas=np.linspace(0, 1, 10), modes=modes,
                        solve_times=np.full(10, 0.004))
    assert m.mode_fractions == {"coordinated": 0.5, "flight": 0.3, "hover": 0.2}
    assert m.gamma_min == 0.0 and m.gamma_max == 1.0
    assert m.solve_ms_p99 == pytest.approx(4.0)


# --- configuration --------------------------------------------------------------------------


def test_config_rejects_unknown_and_malformed_keys(tmp_path):
    with pytest.raises(ConfigError):
        load_config(mpc__bogus="1")
    with pytest.raises(ConfigError):
        load_config(mpc__w1="1, 2")
    with pytest.raises(ConfigError):
        load_config(experiment__variant="pid")
    with pytest.raises(ConfigError):
        load_config(experiment__duration="-1")
    bad = tmp_path / "bad.ini"
    bad.write_text("[nosuchsection]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_layering_and_digest(tmp_path):
    user = tmp_path / "user.ini"
    user.write_text("[mpc]\nhorizon = 7\n")
    cfg = load_config(user)
    assert cfg.mpc.horizon == 7 and cfg.mpc.w1[0] == load_config().mpc.w1[0]
    assert cfg.digest != load_config().digest
    assert load_config().digest == load_config().digest


# --- run loop -------------------------------------------------------------------------------


def test_zero_duration_run_writes_header_only(tmp_path):
    cfg = load_config(experiment__variant="integral-baseline", experiment__duration="0")
    r = run_experiment(cfg, tmp_path / "empty.csv")
    assert r.exit_code == 0 and r.metrics.n_cycles == 0 and r.metrics.status == "empty"
    lines = (tmp_path / "empty.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("# aerialmpc-log v1 config=")
    assert lines[1].split(",") == LOG_COLUMNS


def test_run_log_closure_and_replay(tmp_path):
    cfg = load_config(experiment__variant="integral-baseline", experiment__duration="3")
    r = run_experiment(cfg, tmp_path / "run.csv")
    assert r.exit_code == 0
    _, d = read_log(r.log_path)
    assert len(d["t"]) == 150
    k_b = cfg.k_b
    for i, a in enumerate("xyz"):
        recon = d[f"dtgt_{a}"] + k_b[i] * (d[f"pbd_{a}"] - d[f"pbprev_{a}"])
        assert np.allclose(recon, d[f"vb_{a}"], rtol=0, atol=1e-12)
    replayed = metrics_from_log(r.log_path)
    assert json.dumps(replayed.to_dict(), sort_keys=True) == json.dumps(r.metrics.to_dict(), sort_keys=True)
    saved = json.loads((tmp_path / "run.metrics.json").read_text())
    assert saved["mean_error"] == r.metrics.mean_error


def test_missing_model_artifact(tmp_path):
    from aerialmpc.harness.runner import MissingArtifact
    cfg = load_config(experiment__model=str(tmp_path / "none.model"), experiment__duration="1")
    with pytest.raises(MissingArtifact):
        run_experiment(cfg, tmp_path / "x.csv")


# --- data collection ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def short_dataset(tmp_path_factory):
    cfg = load_config()
    path = tmp_path_factory.mktemp("collect") / "data.csv"
    stages = [(8.0, 0.0, 6.0), (3.5, 0.3, 6.0)]
    rows = collect_dataset(cfg, path, stages=stages)
    _, data = read_log(path)
    return cfg, rows, data, path


def test_collect_row_count_and_schema(short_dataset):
    cfg, rows, data, path = short_dataset
    assert rows == 600 and len(data["t"]) == 600
    assert list(data) == DATASET_COLUMNS
    assert np.array_equal(np.unique(data["stage"]), [0.0, 1.0])
    assert path.read_text().startswith("# aerialmpc-dataset v1 config=" + cfg.digest)
    # default schedule: four stages of 150 s at 50 Hz
    assert cfg.collect.stage_duration * len(cfg.collect.ee_periods) / cfg.dt == pytest.approx(30000)


def test_collect_residual_target_closure(short_dataset):
    cfg, _, data, _ = short_dataset
    for i, a in enumerate("xyz"):
        recon = data[f"delta_{a}"] + cfg.k_b[i] * (data[f"pbd_{a}"] - data[f"pbprev_{a}"])
        assert np.allclose(recon, data[f"v_{a}"], rtol=0, atol=1e-12)


def test_collect_stays_in_learning_space_and_has_residual(short_dataset):
    cfg, _, data, _ = short_dataset
    p_o = kin.fk_manipulator(cfg.q_home, cfg.geometry)
    peb = np.column_stack([data[f"peb_{a}"] for a in "xyz"])
    half_box = np.array([0.075, 0.075, 0.05]) + 0.02
    assert np.all(np.abs(peb - p_o) <= half_box)
    # the arm actually moves through the box
    assert np.all(np.ptp(peb, axis=0) > 0.03)
    delta = np.column_stack([data[f"delta_{a}"] for a in "xyz"])
    assert np.all(np.mean(np.abs(delta), axis=0) > 1e-3)


# --- command line ---------------------------------------------------------------------------


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("collect", "train", "track", "follow", "replay"):
        assert name in out
    with pytest.raises(SystemExit) as exc:
        main(["track", "--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--variant", "--seed", "--out"):
        assert flag in out


def test_cli_usage_errors(capsys):
    for argv in (["fly"], ["track", "--bogus"], ["track", "--variant", "pid"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_cli_error_exit_codes(tmp_path):
    out = str(tmp_path / "r.csv")
    assert main(["track", "--set", "mpc.nonsense=1", "--duration", "1", "--out", out]) == 3
    assert main(["track", "--model", str(tmp_path / "none.model"), "--duration", "1", "--out", out]) == 4
    assert main(["replay", str(tmp_path / "none.csv")]) == 4
    assert main(["train", "--data", str(tmp_path / "none.csv")]) == 4
    assert main(["track", "--variant", "integral-baseline", "--set", "plant.envelope=1e-3",
                 "--duration", "1", "--out", out]) == 5


def test_cli_track_is_deterministic_and_replayable(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["track", "--variant", "integral-baseline", "--seed", "7", "--duration", "2",
                     "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    capsys.readouterr()
    assert main(["replay", str(paths[0])]) == 0
    replayed = json.loads(capsys.readouterr().out)
    original = json.loads((tmp_path / "a.metrics.json").read_text())
    assert json.dumps(replayed, sort_keys=True) == json.dumps(original, sort_keys=True)


def test_cli_collect_then_train(tmp_path, capsys):
    data, model = tmp_path / "d.csv", tmp_path / "m.model"
    assert main(["collect", "--duration", "1", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(model), "--epochs", "2"]) == 0
    out = capsys.readouterr().out
    assert "wrote 200 rows" in out and "final mse" in out and model.exists()
