import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from cogradio import metrics
from cogradio.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from cogradio.harness import fmt
from cogradio.predictor import RnnModel

PLAN = {"n_channels": 10, "m_s": 4, "t_frame": 0.1, "t_c": 0.01, "t_s": 0.005}


def write_cfg(tmp_path, name="cfg.json", **doc):
    base = {"channel": {"p": 0.2, "q": 0.3}, "reward": {"r_t": 1, "c_c": 9, "c_s": 0.05}, "horizon": 1500, "seed": 3}
    path = tmp_path / name
    path.write_text(json.dumps(base | doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_fmt_is_fixed():
    assert fmt(0.1) == "0.1" and fmt(1 / 3) == "0.333333333333" and fmt(7) == "7"
    assert fmt(np.int64(3)) == "3" and fmt(True) == "1" and fmt(math.inf) == "inf"
    assert fmt(2.5e-17) == "2.5e-17"


# -- roc ------------------------------------------------------------------------

def test_roc_nb1_false_alarm(tmp_path):
    lam = math.log(10)
    cfg = write_cfg(tmp_path, detector={"nb": 1, "thresholds": [lam, 2 * lam]})
    assert main(["roc", "--config", cfg, "--out", str(tmp_path / "r"), "--trials", "20000"]) == EXIT_OK
    rows = read_csv(tmp_path / "r" / "roc.csv")
    assert list(rows[0]) == ["lambda", "pf_analytic", "pd_analytic", "pf_empirical", "pd_empirical", "trials"]
    assert float(rows[0]["pf_analytic"]) == pytest.approx(0.1, rel=1e-11)
    sigma = math.sqrt(0.1 * 0.9 / 20000)
    assert abs(float(rows[0]["pf_empirical"]) - 0.1) <= 4 * sigma


def test_roc_trials_usage_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["roc", "--config", cfg, "--out", str(tmp_path / "r"), "--trials", "0"]) == EXIT_CONFIG
    assert "trials" in capsys.readouterr().err


def test_roc_same_seed_same_bytes(tmp_path):
    cfg = write_cfg(tmp_path, detector={"nb": 10})
    for d in ("a", "b"):
        main(["roc", "--config", cfg, "--out", str(tmp_path / d), "--trials", "2000"])
    assert (tmp_path / "a/roc.csv").read_bytes() == (tmp_path / "b/roc.csv").read_bytes()
    main(["roc", "--config", cfg, "--out", str(tmp_path / "c"), "--trials", "2000", "--seed", "4"])
    assert (tmp_path / "a/roc.csv").read_bytes() != (tmp_path / "c/roc.csv").read_bytes()


def test_roc_literal_mode_uses_printed_false_alarm(tmp_path):
    cfg = write_cfg(tmp_path, channel={"p": 0.2, "q": 0.3, "sigma_s2": 0.5}, detector={"nb": 1, "thresholds": [1.0]})
    main(["roc", "--config", cfg, "--out", str(tmp_path / "n"), "--trials", "1000"])
    main(["roc", "--config", cfg, "--out", str(tmp_path / "l"), "--trials", "1000", "--paper-literal"])
    pf_n = float(read_csv(tmp_path / "n/roc.csv")[0]["pf_analytic"])
    pf_l = float(read_csv(tmp_path / "l/roc.csv")[0]["pf_analytic"])
    assert pf_n == pytest.approx(math.exp(-1.0), rel=1e-11)
    assert pf_l == pytest.approx(math.exp(-2.0), rel=1e-11)


def test_roc_plot(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = write_cfg(tmp_path)
    assert main(["roc", "--config", cfg, "--out", str(tmp_path / "r"), "--trials", "1000", "--plot"]) == EXIT_OK
    assert (tmp_path / "r/roc.svg").read_text().lstrip().startswith("<?xml")


# -- sense-plan ---------------------------------------------------------------------

def test_sense_plan_worked_example(tmp_path, capsys):
    cfg = write_cfg(tmp_path, plan=PLAN)
    assert main(["sense-plan", "--config", cfg, "--out", str(tmp_path / "p")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[-1].split()[-1] == "3"
    rows = {r["quantity"]: r["value"] for r in read_csv(tmp_path / "p/sense_plan.csv")}
    assert rows == {"t_s": "0.005", "t_c": "0.01", "l_channels": "3"}


def test_sense_plan_unbounded_budget(tmp_path, capsys):
    plan = {"n_channels": 10, "m_s": 3, "t_frame": 0.1, "t_c": 0.01, "snr": 0.5, "bandwidth": 6e6, "p_d": 0.5, "p_f": 0.5}
    assert main(["sense-plan", "--config", write_cfg(tmp_path, plan=plan)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].split()[-1] == "0" and lines[-1].split()[-1] == "4"


def test_sense_plan_errors(tmp_path, capsys):
    plan = dict(PLAN)
    del plan["m_s"]
    assert main(["sense-plan", "--config", write_cfg(tmp_path, plan=plan)]) == EXIT_CONFIG
    assert "plan.m_s" in capsys.readouterr().err
    budget = PLAN | {"t_c": 0.2}
    assert main(["sense-plan", "--config", write_cfg(tmp_path, plan=budget)]) == EXIT_CONFIG
    assert main(["sense-plan", "--config", write_cfg(tmp_path)]) == EXIT_CONFIG


def test_sense_plan_literal_undefined_is_numeric_failure(tmp_path, capsys):
    plan = {"n_channels": 10, "m_s": 4, "t_frame": 0.1, "t_c": 0.01, "snr": 0.1, "bandwidth": 6e6, "p_d": 0.9, "p_f": 0.1}
    cfg = write_cfg(tmp_path, plan=plan)
    assert main(["sense-plan", "--config", cfg]) == EXIT_OK
    capsys.readouterr()
    assert main(["sense-plan", "--config", cfg, "--paper-literal"]) == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


# -- simulate -------------------------------------------------------------------------

def test_simulate_sleep_and_genie(tmp_path):
    for name in ("sleep", "genie"):
        cfg = write_cfg(tmp_path, f"{name}.json", policy={"name": name}, scenario={"n_channels": 3, "n_users": 2})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
    sleep = json.loads((tmp_path / "sleep/summary.json").read_text())
    genie = json.loads((tmp_path / "genie/summary.json").read_text())
    assert sleep["throughput"] == 0 and sleep["total_reward"] == 0
    assert genie["collisions"] == 0 and genie["successes"] > 0


def test_simulate_csv_matches_summary(tmp_path):
    cfg = write_cfg(tmp_path, channel={"p": 0.1, "q": 0.05}, policy={"name": "myopic", "sense_margin": 0.3},
                    scenario={"n_channels": 2, "n_users": 2, "imperfect_sensing": True}, detector={"nb": 20})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv(tmp_path / "s/slots.csv")
    assert list(rows[0]) == ["slot", "user", "channel", "action", "true_state", "belief", "reward", "collision"]
    summary = json.loads((tmp_path / "s/summary.json").read_text())
    assert sum(float(r["reward"]) for r in rows) == pytest.approx(summary["total_reward"], abs=1e-9)
    assert sum(int(r["collision"]) for r in rows) == summary["collisions"]
    assert sum(r["action"] == "1" for r in rows) == summary["sensing_count"]


# -- sweep -------------------------------------------------------------------------------

def test_sweep_shapes(tmp_path):
    cfg = write_cfg(tmp_path, channel={"p": 0.1, "q": 0.05}, scenario={"n_channels": 3})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "one"), "--densities", "2"]) == EXIT_OK
    assert len(read_csv(tmp_path / "one/sweep.csv")) == 1
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "w"), "--densities", "1", "2", "4", "6", "9"]) == 0
    rows = read_csv(tmp_path / "w/sweep.csv")
    per_user = [float(r["per_user_normalized_throughput"]) for r in rows if int(r["users"]) > 3]
    assert all(a >= b for a, b in zip(per_user, per_user[1:]))
    assert all(0 <= float(r["normalized_throughput"]) <= 1 for r in rows)


def test_sweep_zero_idle_channel(tmp_path):
    cfg = write_cfg(tmp_path, channel={"p": 0.0, "q": 0.3}, policy={"name": "genie"}, scenario={"n_channels": 2})
    main(["sweep", "--config", cfg, "--out", str(tmp_path / "z"), "--densities", "1", "2", "5"])
    assert {r["normalized_throughput"] for r in read_csv(tmp_path / "z/sweep.csv")} == {"0"}


def test_sweep_channels_per_user_from_plan(tmp_path):
    cfg = write_cfg(tmp_path, plan=PLAN | {"t_s": 0.03}, policy={"name": "myopic"})
    main(["sweep", "--config", cfg, "--out", str(tmp_path / "p"), "--densities", "1", "4", "20"])
    rows = read_csv(tmp_path / "p/sweep.csv")
    # time budget ceil(0.09 / 0.06) = 2 caps the even share
    assert [r["channels_per_user"] for r in rows] == ["2", "2", "1"]


# -- train ---------------------------------------------------------------------------------

def small_predictor(**kw):
    return {"train_slots": 300, "val_slots": 120, "test_slots": 120} | kw


def test_train_outputs(tmp_path):
    cfg = write_cfg(tmp_path, predictor=small_predictor())
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == EXIT_OK
    log = read_csv(tmp_path / "t/training_log.csv")
    assert len(log) == 400 and list(log[0]) == ["epoch", "rmse_train", "rmse_val"]
    m = json.loads((tmp_path / "t/metrics.json").read_text())
    for key in ("rmse_train", "rmse_validation_test", "mse", "psnr_db", "snr_db"):
        assert math.isfinite(m[key])
    assert m["reference"] == metrics.REFERENCE_VALUES
    model = RnnModel.load(tmp_path / "t/model.bin")
    assert model.hidden_size == 8


def test_train_metrics_recomputed_from_predictions(tmp_path):
    cfg = write_cfg(tmp_path, predictor=small_predictor(epochs=20))
    main(["train", "--config", cfg, "--out", str(tmp_path / "t")])
    check_train_metrics(tmp_path / "t")


def check_train_metrics(out, tol=1e-12):
    rows = read_csv(out / "predictions.csv")
    m = json.loads((out / "metrics.json").read_text())
    by = {}
    for r in rows:
        by.setdefault(r["split"], []).append((float(r["target"]), float(r["prediction"])))
    tr = np.array(by["train"])
    held = np.array(by["validation"] + by["test"])
    mse = metrics.mse(held[:, 0], held[:, 1])
    assert abs(m["rmse_train"] - metrics.rmse(tr[:, 0], tr[:, 1])) <= tol
    assert abs(m["rmse_validation_test"] - math.sqrt(mse)) <= tol
    assert abs(m["mse"] - mse) <= tol
    assert abs(m["psnr_db"] - metrics.psnr_db(1.0, mse)) <= tol
    assert abs(m["snr_db"] - metrics.snr_db(np.mean(held[:, 0] ** 2), mse)) <= tol


def test_train_zero_learning_rate_is_flat(tmp_path):
    cfg = write_cfg(tmp_path, predictor=small_predictor(epochs=5, learning_rate=0.0))
    main(["train", "--config", cfg, "--out", str(tmp_path / "t"), "--model-format", "json"])
    log = read_csv(tmp_path / "t/training_log.csv")
    assert len({r["rmse_train"] for r in log}) == 1 and len({r["rmse_val"] for r in log}) == 1
    assert (tmp_path / "t/model.json").exists()


def test_train_constant_init_flag(tmp_path):
    cfg = write_cfg(tmp_path, predictor=small_predictor(epochs=2))
    main(["train", "--config", cfg, "--out", str(tmp_path / "t"), "--init", "constant:0.5"])
    man = json.loads((tmp_path / "t/manifest.json").read_text())
    assert man["config"]["predictor"]["init_mode"] == "constant"
    assert main(["train", "--config", cfg, "--init", "nope:1"]) == EXIT_CONFIG


def test_train_from_trace_csv(tmp_path):
    from cogradio._rng import make_rng
    from cogradio.channel import ChannelParams, SlotState, generate_trace

    trace = tmp_path / "trace.csv"
    generate_trace(ChannelParams(0.2, 0.3), 400, SlotState.IDLE, make_rng(0)).to_csv(trace)
    cfg = write_cfg(tmp_path, predictor={"epochs": 3, "trace_csv": str(trace)})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == EXIT_OK
    assert "bayes_hit_rate_test" not in json.loads((tmp_path / "t/metrics.json").read_text())


# -- manifests, replay, report ---------------------------------------------------------------

def run_and_replay(tmp_path, argv, files):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(out_a)]) == EXIT_OK
    man = out_a / "manifest.json"
    assert main([argv[0], "--config", str(man), "--out", str(out_b)]) == EXIT_OK
    for f in files:
        assert (out_a / f).read_bytes() == (out_b / f).read_bytes()
    return json.loads(man.read_text())


def test_manifest_contents_and_replay(tmp_path):
    cfg = write_cfg(tmp_path, detector={"nb": 5})
    man = run_and_replay(tmp_path, ["roc", "--config", cfg, "--trials", "1500"], ["roc.csv"])
    assert man["args"] == {"trials": 1500} and man["seed"] == 3 and man["command"] == "roc"
    assert set(man["outputs"]) == {"roc.csv"} and len(man["config_sha256"]) == 64
    from cogradio.config import from_dict

    assert from_dict(man["config"]).sha256() == man["config_sha256"]


def test_replay_rejects_other_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["roc", "--config", cfg, "--out", str(tmp_path / "r"), "--trials", "1000"])
    assert main(["simulate", "--config", str(tmp_path / "r/manifest.json")]) == EXIT_CONFIG


def test_report_detects_changes(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["roc", "--config", cfg, "--out", str(tmp_path / "r"), "--trials", "1000"])
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == EXIT_OK
    assert "roc" in capsys.readouterr().out
    (tmp_path / "r/roc.csv").write_text("tampered\n")
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "CHANGED" in capsys.readouterr().out


def test_bad_invocations(tmp_path):
    assert main([]) == EXIT_CONFIG
    assert main(["roc"]) == EXIT_CONFIG
    assert main(["roc", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert main(["--version"]) == EXIT_OK


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, plan=PLAN)
    res = subprocess.run([sys.executable, "-m", "cogradio", "sense-plan", "--config", cfg], capture_output=True, text=True)
    assert res.returncode == 0 and "T_c" in res.stdout
