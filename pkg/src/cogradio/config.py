"""Scenario configuration: JSON loading, validation, canonical form."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .channel import ChannelError, ChannelParams
from .mac import RewardParams, ScenarioError
from .predictor import PredictorError, RnnConfig
from .sensing import SensingError, SensingTimeForm

LITERAL_THRESHOLD = 0.181
DEFAULT_THRESHOLD = 1.0


class ConfigError(ValueError):
    """Configuration problem; the message starts with the offending key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_NUM = "number"
_INT = "integer"
_BOOL = "boolean"
_STR = "string"
_NUMS = "list of numbers"


def _check_type(path: str, value: Any, kind: str):
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected {kind}, got {value!r}")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected {kind}, got {value!r}")
        return value
    if kind == _NUMS:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected {kind}, got {value!r}")
        return [_check_type(f"{path}[{i}]", v, _NUM) for i, v in enumerate(value)]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected {kind}, got {value!r}")
    if kind == _INT:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected {kind}, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return float(value)


def _read_section(doc: dict, path: str, schema: dict[str, tuple[str | None, bool]]) -> dict:
    """Validate ``doc`` against ``{key: (kind, required)}``; unknown keys are errors.

    A ``None`` kind passes the value through for a nested section.
    """
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    for key in doc:
        if key not in schema:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    out = {}
    for key, (kind, required) in schema.items():
        kp = f"{path}.{key}" if path else key
        if key not in doc or doc[key] is None:
            if required:
                raise ConfigError(kp, "missing required key")
            continue
        out[key] = doc[key] if kind is None else _check_type(kp, doc[key], kind)
    return out


_CHANNEL = {
    "p": (_NUM, True),
    "q": (_NUM, True),
    "sigma_s2": (_NUM, False),
    "sigma_n2": (_NUM, False),
    "require_positive_correlation": (_BOOL, False),
    "slot_duration": (_NUM, False),
}
_DETECTOR = {"threshold": (_NUM, False), "nb": (_INT, False), "u": (_INT, False), "thresholds": (_NUMS, False)}
_PLAN = {
    "n_channels": (_INT, True),
    "m_s": (_INT, True),
    "t_frame": (_NUM, True),
    "t_c": (_NUM, False),
    "t_b1": (_NUM, False),
    "t_b2": (_NUM, False),
    "t_ms": (_NUM, False),
    "t_sifs": (_NUM, False),
    "t_s": (_NUM, False),
    "snr": (_NUM, False),
    "bandwidth": (_NUM, False),
    "p_d": (_NUM, False),
    "p_f": (_NUM, False),
    "sensing_time_form": (_STR, False),
}
_REWARD = {"r_t": (_NUM, True), "c_c": (_NUM, True), "c_s": (_NUM, True)}
_POLICY = {"name": (_STR, False), "sense_margin": (_NUM, False), "grid": (_INT, False)}
_SCENARIO = {
    "n_channels": (_INT, False),
    "n_users": (_INT, False),
    "area_km2": (_NUM, False),
    "imperfect_sensing": (_BOOL, False),
}
_PREDICTOR = {
    "hidden_size": (_INT, False),
    "window": (_INT, False),
    "learning_rate": (_NUM, False),
    "epochs": (_INT, False),
    "init_weight": (_NUM, False),
    "init_mode": (_STR, False),
    "classify_threshold": (_NUM, False),
    "feature_mode": (_BOOL, False),
    "batch_size": (_INT, False),
    "lr_decay": (_NUM, False),
    "train_slots": (_INT, False),
    "val_slots": (_INT, False),
    "test_slots": (_INT, False),
    "trace_csv": (_STR, False),
}
_TOP = {
    "channel": (None, True),
    "detector": (None, False),
    "plan": (None, False),
    "reward": (None, False),
    "policy": (None, False),
    "scenario": (None, False),
    "predictor": (None, False),
    "horizon": (_INT, False),
    "seed": (_INT, False),
    "densities": (_NUMS, False),
    "paper_literal": (_BOOL, False),
    "output_dir": (_STR, False),
}

POLICIES = ("dp", "myopic", "sleep", "genie")


@dataclass
class DetectorSection:
    threshold: float | None = None
    nb: int = 1
    u: int = 1
    thresholds: list[float] | None = None


@dataclass
class PlanSection:
    n_channels: int
    m_s: int
    t_frame: float
    t_c: float | None = None
    t_b1: float | None = None
    t_b2: float | None = None
    t_ms: float | None = None
    t_sifs: float | None = None
    t_s: float | None = None
    snr: float | None = None
    bandwidth: float | None = None
    p_d: float | None = None
    p_f: float | None = None
    sensing_time_form: str = "product"


@dataclass
class PolicySection:
    name: str = "dp"
    sense_margin: float = 0.0
    grid: int = 1001


@dataclass
class ScenarioSection:
    n_channels: int = 1
    n_users: int = 1
    area_km2: float = 1.0
    imperfect_sensing: bool = False


@dataclass
class PredictorSection:
    rnn: RnnConfig = field(default_factory=RnnConfig)
    train_slots: int = 10_000
    val_slots: int = 2_000
    test_slots: int = 2_000
    trace_csv: str | None = None


@dataclass
class ScenarioConfig:
    channel: ChannelParams
    slot_duration: float = 0.01
    detector: DetectorSection = field(default_factory=DetectorSection)
    plan: PlanSection | None = None
    reward: RewardParams = field(default_factory=lambda: RewardParams(1.0, 9.0, 0.05))
    policy: PolicySection = field(default_factory=PolicySection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    horizon: int = 1000
    seed: int = 0
    densities: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0, 32.0])
    paper_literal: bool = False
    output_dir: str | None = None

    @property
    def threshold(self) -> float:
        """Detector threshold; literal mode falls back to 0.181."""
        if self.detector.threshold is not None:
            return self.detector.threshold
        return LITERAL_THRESHOLD if self.paper_literal else DEFAULT_THRESHOLD

    @property
    def sensing_time_form(self) -> SensingTimeForm:
        if self.paper_literal:
            return SensingTimeForm.RADICAL
        return SensingTimeForm(self.plan.sensing_time_form if self.plan else "product")

    def to_dict(self) -> dict:
        """Canonical JSON-ready form; ``from_dict(to_dict())`` is an identity."""
        ch = self.channel
        d = {
            "channel": {
                "p": ch.p,
                "q": ch.q,
                "sigma_s2": ch.sigma_s2,
                "sigma_n2": ch.sigma_n2,
                "require_positive_correlation": ch.require_positive_correlation,
                "slot_duration": self.slot_duration,
            },
            "detector": asdict(self.detector),
            "reward": asdict(self.reward),
            "policy": asdict(self.policy),
            "scenario": asdict(self.scenario),
            "predictor": {
                **asdict(self.predictor.rnn),
                "train_slots": self.predictor.train_slots,
                "val_slots": self.predictor.val_slots,
                "test_slots": self.predictor.test_slots,
                "trace_csv": self.predictor.trace_csv,
            },
            "horizon": self.horizon,
            "seed": self.seed,
            "densities": list(self.densities),
            "paper_literal": self.paper_literal,
            "output_dir": self.output_dir,
        }
        if self.plan is not None:
            d["plan"] = asdict(self.plan)
        return d

    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _build(path: str, factory, kwargs):
    try:
        return factory(**kwargs)
    except (ChannelError, ScenarioError, PredictorError, SensingError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def from_dict(doc: dict) -> ScenarioConfig:
    top = _read_section(doc, "", _TOP)
    ch = _read_section(top["channel"], "channel", _CHANNEL)
    slot_duration = ch.pop("slot_duration", 0.01)
    if not slot_duration > 0:
        raise ConfigError("channel.slot_duration", "must be positive")
    cfg = ScenarioConfig(channel=_build("channel", ChannelParams, ch), slot_duration=slot_duration)

    if "detector" in top:
        det = _read_section(top["detector"], "detector", _DETECTOR)
        cfg.detector = DetectorSection(**det)
        if cfg.detector.threshold is not None and not cfg.detector.threshold > 0:
            raise ConfigError("detector.threshold", "must be positive")
        for key in ("nb", "u"):
            if getattr(cfg.detector, key) < 1:
                raise ConfigError(f"detector.{key}", "must be >= 1")
        if cfg.detector.thresholds is not None and (
            not cfg.detector.thresholds or any(t <= 0 for t in cfg.detector.thresholds)
        ):
            raise ConfigError("detector.thresholds", "must be a nonempty list of positive numbers")

    if "plan" in top:
        plan = _read_section(top["plan"], "plan", _PLAN)
        if "t_c" not in plan:
            for key in ("t_b1", "t_b2", "t_ms", "t_sifs"):
                if key not in plan:
                    raise ConfigError(f"plan.{key}", "missing required key (or give plan.t_c)")
        if "t_s" not in plan:
            for key in ("snr", "bandwidth", "p_d", "p_f"):
                if key not in plan:
                    raise ConfigError(f"plan.{key}", "missing required key (or give plan.t_s)")
        cfg.plan = PlanSection(**plan)
        if cfg.plan.sensing_time_form not in {f.value for f in SensingTimeForm}:
            raise ConfigError("plan.sensing_time_form", f"unknown form {cfg.plan.sensing_time_form!r}")
        if cfg.plan.n_channels < 1 or cfg.plan.m_s < 1:
            raise ConfigError("plan", "n_channels and m_s must be >= 1")

    if "reward" in top:
        cfg.reward = _build("reward", RewardParams, _read_section(top["reward"], "reward", _REWARD))

    if "policy" in top:
        cfg.policy = PolicySection(**_read_section(top["policy"], "policy", _POLICY))
        if cfg.policy.name not in POLICIES:
            raise ConfigError("policy.name", f"unknown policy {cfg.policy.name!r}; choose from {', '.join(POLICIES)}")
        if cfg.policy.grid < 2:
            raise ConfigError("policy.grid", "needs at least 2 points")

    if "scenario" in top:
        cfg.scenario = ScenarioSection(**_read_section(top["scenario"], "scenario", _SCENARIO))
        if cfg.scenario.n_channels < 1 or cfg.scenario.n_users < 1:
            raise ConfigError("scenario", "n_channels and n_users must be >= 1")
        if not cfg.scenario.area_km2 > 0:
            raise ConfigError("scenario.area_km2", "must be positive")
    if cfg.plan is not None and "scenario" in top and "n_channels" in top["scenario"]:
        if cfg.scenario.n_channels != cfg.plan.n_channels:
            raise ConfigError("scenario.n_channels", "disagrees with plan.n_channels")
    if cfg.plan is not None:
        cfg.scenario.n_channels = cfg.plan.n_channels
        if "n_users" not in top.get("scenario", {}):
            cfg.scenario.n_users = cfg.plan.m_s

    if "predictor" in top:
        pr = _read_section(top["predictor"], "predictor", _PREDICTOR)
        extra = {k: pr.pop(k) for k in ("train_slots", "val_slots", "test_slots", "trace_csv") if k in pr}
        if "batch_size" in top["predictor"] and top["predictor"]["batch_size"] is None:
            pr["batch_size"] = None
        rnn = _build("predictor", RnnConfig, pr)
        cfg.predictor = PredictorSection(rnn=rnn, **extra)
        for key in ("train_slots", "val_slots", "test_slots"):
            if getattr(cfg.predictor, key) <= rnn.window + 1:
                raise ConfigError(f"predictor.{key}", f"must exceed window + 1 = {rnn.window + 1}")

    for key in ("horizon", "seed", "densities", "paper_literal", "output_dir"):
        if key in top:
            setattr(cfg, key, top[key])
    if cfg.horizon < 1:
        raise ConfigError("horizon", "must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if "densities" in top and (
        not cfg.densities or any(d <= 0 for d in cfg.densities) or cfg.densities != sorted(cfg.densities)
    ):
        raise ConfigError("densities", "must be a nonempty ascending list of positive numbers")
    return cfg


def load_document(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("", f"{path}: top level must be an object")
    return doc


def load_config(path: str | Path) -> ScenarioConfig:
    return from_dict(load_document(path))


def merged(cfg: ScenarioConfig, **overrides) -> ScenarioConfig:
    out = copy.deepcopy(cfg)
    for k, v in overrides.items():
        if v is not None:
            setattr(out, k, v)
    return out
