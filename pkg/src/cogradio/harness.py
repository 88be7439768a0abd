"""Experiment drivers behind the command-line subcommands.

Every driver writes its outputs into a directory together with
``manifest.json``: the canonical configuration, its SHA-256, the command
arguments, the tool version, and a SHA-256 per output file.  Feeding the
manifest back as ``--config`` replays the run and must reproduce the same
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, metrics
from ._rng import make_rng, spawn
from .channel import OccupancyTrace, SlotState, generate_trace, stationary_idle_prob
from .config import ConfigError, ScenarioConfig, from_dict, load_document
from .mac import (
    GeniePolicy,
    MyopicPolicy,
    Scenario,
    SleepPolicy,
    density_sweep,
    dp_policy,
    run_simulation,
)
from .predictor import RnnModel, bayes_hit_rate, forward_batch, make_windows, synthetic_features, train
from .sensing import (
    SensingPlan,
    analytic_pd_nb,
    analytic_pf_nb,
    analytic_pf_nb_printed,
    empirical_roc,
    sensing_plan,
)

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
MIN_TRIALS = 1000


def fmt(x) -> str:
    """Fixed CSV number format: integers verbatim, floats to 12 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunOutput:
    out_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)

    def write(self, name: str, text: str | bytes) -> Path:
        path = self.out_dir / name
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text, newline="")
        self.files[name] = path
        return path


def _begin(out_dir) -> RunOutput:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RunOutput(out)


def _finish(run: RunOutput, command: str, cfg: ScenarioConfig, args: dict) -> RunOutput:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "cogradio",
        "tool_version": __version__,
        "command": command,
        "seed": cfg.seed,
        "args": args,
        "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(),
        "outputs": {name: sha256_file(p) for name, p in sorted(run.files.items()) if not name.endswith(".svg")},
    }
    path = run.out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    run.data["manifest"] = manifest
    return run


def load_run_config(path) -> tuple[ScenarioConfig, dict | None]:
    """Load a scenario config or a run manifest.

    Returns the config and, for a manifest, its ``{"command", "args"}``.
    """
    doc = load_document(path)
    if "manifest_version" in doc:
        if doc["manifest_version"] != MANIFEST_VERSION:
            raise ConfigError("manifest_version", f"unsupported version {doc['manifest_version']}")
        cfg = from_dict(doc["config"])
        return cfg, {"command": doc["command"], "args": doc.get("args", {})}
    return from_dict(doc), None


# -- roc ---------------------------------------------------------------------

def default_thresholds(nb: int, sigma_n2: float, sigma_s2: float, count: int = 21) -> list[float]:
    """Thresholds spanning the bulk of both hypotheses' statistic laws."""
    lo = sigma_n2 * max(0.05, 1.0 - 3.0 / math.sqrt(nb))
    hi = (sigma_n2 + sigma_s2) * (1.0 + 3.0 / math.sqrt(nb))
    return [float(v) for v in np.linspace(lo, hi, count)]


def roc_rows(cfg: ScenarioConfig, trials: int, seed: int, thresholds=None):
    ch = cfg.channel
    nb = cfg.detector.nb
    lam = thresholds or cfg.detector.thresholds or default_thresholds(nb, ch.sigma_n2, ch.sigma_s2)
    pf_emp, pd_emp = empirical_roc(lam, nb, ch.sigma_n2, ch.sigma_s2, trials, make_rng(seed))
    rows = []
    for i, t in enumerate(lam):
        if cfg.paper_literal:
            pf = analytic_pf_nb_printed(t, nb, ch.sigma_s2)
        else:
            pf = analytic_pf_nb(t, nb, ch.sigma_n2)
        pd = analytic_pd_nb(t, nb, ch.sigma_n2, ch.sigma_s2)
        rows.append((t, pf, pd, pf_emp[i], pd_emp[i], trials))
    return rows


ROC_HEADER = ["lambda", "pf_analytic", "pd_analytic", "pf_empirical", "pd_empirical", "trials"]


def cmd_roc(cfg: ScenarioConfig, out_dir, trials: int = 10_000, plot: bool = False) -> RunOutput:
    if trials < MIN_TRIALS:
        raise ConfigError("trials", f"need at least {MIN_TRIALS} Monte-Carlo trials, got {trials}")
    run = _begin(out_dir)
    rows = roc_rows(cfg, trials, cfg.seed)
    run.write("roc.csv", csv_text(ROC_HEADER, rows))
    run.data["rows"] = rows
    if plot:
        from .plots import roc_svg

        run.write("roc.svg", roc_svg(rows))
    return _finish(run, "roc", cfg, {"trials": trials})


# -- sense-plan --------------------------------------------------------------

def plan_for(cfg: ScenarioConfig, m_s: int | None = None) -> SensingPlan:
    if cfg.plan is None:
        raise ConfigError("plan", "missing required section")
    pl = cfg.plan
    return sensing_plan(
        n_channels=pl.n_channels,
        m_s=pl.m_s if m_s is None else m_s,
        t_frame=pl.t_frame,
        t_c=pl.t_c,
        t_b1=pl.t_b1,
        t_b2=pl.t_b2,
        t_ms=pl.t_ms,
        t_sifs=pl.t_sifs,
        t_s=pl.t_s,
        snr=pl.snr,
        bandwidth=pl.bandwidth,
        p_d=pl.p_d,
        p_f=pl.p_f,
        form=cfg.sensing_time_form,
    )


def cmd_sense_plan(cfg: ScenarioConfig, out_dir=None) -> tuple[SensingPlan, str]:
    plan = plan_for(cfg)
    table = "\n".join(
        [
            f"{'quantity':<10} {'value':>20}",
            f"{'t_s [s]':<10} {fmt(plan.t_s):>20}",
            f"{'T_c [s]':<10} {fmt(plan.t_c):>20}",
            f"{'L':<10} {plan.l_channels:>20d}",
        ]
    )
    if out_dir is not None:
        run = _begin(out_dir)
        run.write(
            "sense_plan.csv",
            csv_text(["quantity", "value"], [("t_s", plan.t_s), ("t_c", plan.t_c), ("l_channels", plan.l_channels)]),
        )
        _finish(run, "sense-plan", cfg, {})
    return plan, table


# -- simulate / sweep --------------------------------------------------------

def build_policy(cfg: ScenarioConfig, horizon: int | None = None):
    name = cfg.policy.name
    if name == "dp":
        return dp_policy(cfg.channel, cfg.reward, horizon or cfg.horizon, cfg.policy.grid)
    if name == "myopic":
        return MyopicPolicy(cfg.reward, cfg.policy.sense_margin)
    if name == "sleep":
        return SleepPolicy()
    if name == "genie":
        return GeniePolicy()
    raise ConfigError("policy.name", f"unknown policy {name!r}")


def _sensing_errors(cfg: ScenarioConfig):
    if not cfg.scenario.imperfect_sensing:
        return None
    ch, nb, lam = cfg.channel, cfg.detector.nb, cfg.threshold
    pd = analytic_pd_nb(lam, nb, ch.sigma_n2, ch.sigma_s2)
    pf = analytic_pf_nb_printed(lam, nb, ch.sigma_s2) if cfg.paper_literal else analytic_pf_nb(lam, nb, ch.sigma_n2)
    return (pd, pf)


def build_scenario(cfg: ScenarioConfig, n_users: int | None = None) -> Scenario:
    m = cfg.scenario.n_users if n_users is None else n_users
    per_user = plan_for(cfg, m).l_channels if cfg.plan is not None else None
    return Scenario(
        channel=cfg.channel,
        reward=cfg.reward,
        policy=build_policy(cfg),
        horizon=cfg.horizon,
        n_channels=cfg.scenario.n_channels,
        n_users=m,
        channels_per_user=per_user,
        imperfect_sensing=_sensing_errors(cfg),
        slot_duration=cfg.slot_duration,
    )


SLOT_HEADER = ["slot", "user", "channel", "action", "true_state", "belief", "reward", "collision"]


def cmd_simulate(cfg: ScenarioConfig, out_dir) -> RunOutput:
    cfg.reward.protects_primary(cfg.channel)
    run = _begin(out_dir)
    result = run_simulation(build_scenario(cfg), cfg.seed, record=True)
    rows = (
        (r.slot, r.user, r.channel, int(r.action), int(r.true_state), r.belief, r.reward, int(r.collision))
        for r in result.records
    )
    run.write("slots.csv", csv_text(SLOT_HEADER, rows))
    summary = result.summary.as_dict()
    summary["policy"] = cfg.policy.name
    run.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.data["summary"] = summary
    run.data["records"] = result.records
    return _finish(run, "simulate", cfg, {})


SWEEP_HEADER = [
    "density",
    "users",
    "channels_per_user",
    "normalized_throughput",
    "per_user_normalized_throughput",
    "collisions",
]


def cmd_sweep(cfg: ScenarioConfig, out_dir, densities=None, jobs: int = 1, plot: bool = False) -> RunOutput:
    dens = list(densities) if densities else list(cfg.densities)
    if not dens:
        raise ConfigError("densities", "empty density list")
    run = _begin(out_dir)
    base = build_scenario(cfg)
    per_user = (lambda m: plan_for(cfg, m).l_channels) if cfg.plan is not None else None
    rows = density_sweep(base, dens, cfg.seed, cfg.scenario.area_km2, per_user, jobs=jobs)
    table = [
        (r.density, r.users, r.channels_per_user, r.normalized_throughput, r.per_user_normalized_throughput, r.collisions)
        for r in rows
    ]
    run.write("sweep.csv", csv_text(SWEEP_HEADER, table))
    run.data["rows"] = rows
    if plot:
        from .plots import sweep_svg

        run.write("sweep.svg", sweep_svg(rows))
    return _finish(run, "sweep", cfg, {"densities": dens})


# -- train -------------------------------------------------------------------

def _training_traces(cfg: ScenarioConfig, seed: int):
    pc = cfg.predictor
    if pc.trace_csv:
        full = OccupancyTrace.from_csv(pc.trace_csv, cfg.slot_duration).states
        n = len(full)
        a, b = int(0.7 * n), int(0.85 * n)
        if min(a, b - a, n - b) <= pc.rnn.window + 1:
            raise ConfigError("predictor.trace_csv", f"trace of {n} slots is too short for window {pc.rnn.window}")
        return (
            OccupancyTrace(full[:a], cfg.slot_duration),
            OccupancyTrace(full[a:b], cfg.slot_duration),
            OccupancyTrace(full[b:], cfg.slot_duration),
        )
    rngs = spawn(seed, 3)
    pi = stationary_idle_prob(cfg.channel)
    out = []
    for rng, length in zip(rngs, (pc.train_slots, pc.val_slots, pc.test_slots)):
        init = SlotState.IDLE if rng.random() < pi else SlotState.BUSY
        out.append(generate_trace(cfg.channel, length, init, rng, cfg.slot_duration))
    return tuple(out)


def train_metrics(targets: np.ndarray, predictions: np.ndarray, rmse_train: float) -> dict:
    """Table-style summary for held-out predictions of a +/-1 series.

    PSNR uses a peak of 1 (the series amplitude); SNR compares the mean
    target power with the mean squared prediction error.
    """
    m = metrics.mse(targets, predictions)
    p_sig = float(np.mean(targets * targets))
    return {
        "rmse_train": rmse_train,
        "rmse_validation_test": math.sqrt(m),
        "mse": m,
        "psnr_db": metrics.psnr_db(1.0, m),
        "snr_db": metrics.snr_db(p_sig, m) if m > 0 else math.inf,
    }


TRAIN_LOG_HEADER = ["epoch", "rmse_train", "rmse_val"]
PRED_HEADER = ["split", "index", "target", "prediction"]


def cmd_train(cfg: ScenarioConfig, out_dir, model_format: str = "bin") -> RunOutput:
    pc = cfg.predictor
    rnn = pc.rnn
    run = _begin(out_dir)
    seed_traces, seed_train = spawn_seeds(cfg.seed)
    tr, va, te = _training_traces(cfg, seed_traces)
    rng = make_rng(seed_train)
    init = RnnModel.initialize(rnn, rng)
    model, report = train(rnn, tr, va, rng, model=init)

    # side features carry no signal, so fresh draws are fine for scoring
    splits = {}
    for name, trace in (("train", tr), ("validation", va), ("test", te)):
        feats = synthetic_features(len(trace), rng) if rnn.feature_mode else None
        x, t = make_windows(trace.encode(), rnn.window, feats)
        splits[name] = (x, t, forward_batch(model, x))

    x_tr, t_tr, y_tr = splits["train"]
    held_t = np.concatenate([splits["validation"][1], splits["test"][1]])
    held_y = np.concatenate([splits["validation"][2], splits["test"][2]])
    summary = train_metrics(held_t, held_y, metrics.rmse(t_tr, y_tr))
    untrained_val = metrics.rmse(splits["validation"][1], forward_batch(init, splits["validation"][0]))
    summary.update(
        {
            "rmse_validation": metrics.rmse(splits["validation"][1], splits["validation"][2]),
            "rmse_test": metrics.rmse(splits["test"][1], splits["test"][2]),
            "rmse_validation_untrained": untrained_val,
            "nrmse_validation_test": metrics.nrmse(held_t, held_y, observed_min=-1.0, observed_max=1.0),
            "hit_rate_test": float(np.mean((splits["test"][2] > rnn.classify_threshold) == (splits["test"][1] > 0))),
            "epochs": rnn.epochs,
            "reference": dict(metrics.REFERENCE_VALUES),
        }
    )
    if not pc.trace_csv:
        summary["bayes_hit_rate_test"] = bayes_hit_rate(te.encode(), cfg.channel.p, cfg.channel.q, rnn.window)

    ext = "json" if model_format == "json" else "bin"
    run.write(f"model.{ext}", model.to_json() if ext == "json" else model.to_bytes())
    run.write(
        "training_log.csv",
        csv_text(TRAIN_LOG_HEADER, ((i + 1, a, b) for i, (a, b) in enumerate(zip(report.train_rmse, report.val_rmse)))),
    )
    pred_rows = []
    for name, (_, t, y) in splits.items():
        pred_rows.extend((name, i, t[i], y[i]) for i in range(t.size))
    run.write("predictions.csv", csv_text(PRED_HEADER, pred_rows))
    run.write("metrics.json", json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n")
    run.data.update({"model": model, "report": report, "metrics": summary, "splits": splits})
    return _finish(run, "train", cfg, {"model_format": ext})


def spawn_seeds(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return a, b


# -- report ------------------------------------------------------------------

def verify_manifest(manifest_path) -> dict:
    """Check the recorded output checksums of one run directory."""
    path = Path(manifest_path)
    doc = json.loads(path.read_text())
    status = {}
    for name, digest in doc.get("outputs", {}).items():
        f = path.parent / name
        status[name] = "missing" if not f.exists() else ("ok" if sha256_file(f) == digest else "modified")
    return {
        "dir": str(path.parent),
        "command": doc.get("command"),
        "seed": doc.get("seed"),
        "config_sha256": doc.get("config_sha256"),
        "tool_version": doc.get("tool_version"),
        "files": status,
    }


def cmd_report(dirs, out_dir=None) -> tuple[list[dict], str]:
    entries = []
    for d in dirs:
        p = Path(d)
        manifests = [p] if p.is_file() else sorted(p.rglob(MANIFEST))
        entries.extend(verify_manifest(m) for m in manifests)
    lines = [f"{'command':<11} {'seed':>6} {'config':<12} {'files':<8} dir"]
    for e in entries:
        ok = all(v == "ok" for v in e["files"].values())
        lines.append(
            f"{e['command']:<11} {e['seed']!s:>6} {e['config_sha256'][:12]:<12} {'ok' if ok else 'CHANGED':<8} {e['dir']}"
        )
    text = "\n".join(lines)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return entries, text


__all__ = [
    "cmd_roc",
    "cmd_sense_plan",
    "cmd_simulate",
    "cmd_sweep",
    "cmd_train",
    "cmd_report",
    "load_run_config",
    "fmt",
]
