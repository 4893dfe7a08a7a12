"""Run configuration: presets, key=value config files, resolved-config dump.

Three presets: `paper` (the published hyperparameter tables), `desk`
(200k-step laptop scale with the session schedule scaled in proportion),
and `test` (minutes-scale nets and schedules driven by the acceptance
suite). A plain INI file plus --set overrides refine a preset; unknown
sections or keys are rejected, and the fully resolved configuration is
written into every run directory.
"""

from __future__ import annotations

import configparser
import io
import os

from . import dsd
from . import envs
from . import preference as pref
from . import sac
from . import trainer as tr

PRESETS = ("paper", "desk", "test")

# (section, key) -> value, applied on top of the paper-table defaults
_PRESET_OVERRIDES: dict[str, dict[tuple[str, str], object]] = {
    "paper": {
        ("trainer", "total_steps"): 999_975,  # 13333 episodes of 75
        ("feedback", "start_step"): 30_000,
        ("feedback", "frequency"): 12_000,
        ("schedule", "tau"): 30_000,
    },
    "desk": {
        ("trainer", "total_steps"): 199_950,  # 2666 episodes of 75
        ("feedback", "start_step"): 6_000,
        ("feedback", "frequency"): 2_400,
        ("schedule", "tau"): 6_000,
        ("trainer", "checkpoint_interval"): 50_000,
    },
    "test": {
        ("trainer", "total_steps"): 15_000,
        ("trainer", "metrics_interval"): 250,
        ("trainer", "checkpoint_interval"): 15_000,
        ("sac", "hidden"): (64, 64),
        ("sac", "batch_size"): 128,
        ("sac", "update_to_data"): 2,
        ("sac", "learning_starts"): 600,
        ("sac", "replay_capacity"): 15_000,
        ("sac", "lr_critic"): 5e-4,
        ("sac", "lr_actor"): 2e-4,
        ("sac", "entropy_coef_init"): 0.05,
        ("dsd", "hidden"): (64, 64),
        ("dsd", "lr_phi"): 1e-3,
        ("reward", "hidden"): (16, 16),
        ("reward", "epochs_per_session"): 60,
        ("reward", "updates_per_session"): 1000,
        ("reward", "stop_accuracy"): 0.995,
        ("reward", "lr"): 1e-3,
        ("feedback", "start_step"): 3_000,
        ("feedback", "frequency"): 1_200,
        ("schedule", "tau"): 3_000,
        ("env", "room_radius"): 2.0,
        ("env", "hazards"): "0.88,0.88,0.5; 0.88,-0.88,0.5; -0.88,0.88,0.5; -0.88,-0.88,0.5",
    },
}

_SECTIONS = {
    "run": {"preset", "mode", "seed", "output_dir"},
    "env": {
        "room_radius",
        "hazards",
        "max_steps",
        "step_scale",
        "state_stack",
        "random_start",
        "gt_spec",
    },
    "sac": {
        "lr_critic",
        "lr_actor",
        "policy_frequency",
        "update_to_data",
        "batch_size",
        "gamma",
        "replay_capacity",
        "hidden",
        "target_smoothing",
        "n_quantiles",
        "n_critics",
        "top_quantiles_to_drop",
        "learning_starts",
        "entropy_coef_init",
        "lr_entropy",
    },
    "dsd": {"skill_dim", "hidden", "lr_phi", "lambda_init", "epsilon", "lr_lambda"},
    "reward": {
        "ensemble_size",
        "hidden",
        "lr",
        "minibatch",
        "epochs_per_session",
        "updates_per_session",
        "stop_accuracy",
        "heldout_fraction",
    },
    "schedule": {"tau", "c", "alpha_set"},
    "feedback": {
        "queries_per_session",
        "sessions",
        "frequency",
        "start_step",
        "sampling",
        "total_budget",
    },
    "trainer": {
        "total_steps",
        "metrics_interval",
        "checkpoint_interval",
        "max_store_episodes",
        "allow_negative_alpha",
    },
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, example) -> object:
    raw = raw.strip()
    if isinstance(example, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(example, int):
        return int(raw)
    if isinstance(example, float):
        return float(raw)
    if isinstance(example, tuple):
        elem = example[0] if example else 0
        conv = float if isinstance(elem, float) else int
        return tuple(conv(float(x)) for x in raw.split(","))
    return raw


def read_config_file(path) -> dict[tuple[str, str], str]:
    """INI file -> {(section, key): raw value}; unknown keys are fatal."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    out: dict[tuple[str, str], str] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            out[(section, key)] = value
    return out


def parse_set_overrides(pairs: list[str]) -> dict[tuple[str, str], str]:
    out: dict[tuple[str, str], str] = {}
    for item in pairs:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        addr, value = item.split("=", 1)
        section, key = addr.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown config key {addr!r}")
        out[(section, key)] = value
    return out


def build_trainer_config(
    preset: str = "desk",
    mode: str = "hasd",
    seed: int = 0,
    raw_overrides: dict[tuple[str, str], str] | None = None,
) -> tr.TrainerConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    if mode not in tr.MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    values: dict[tuple[str, str], object] = dict(_PRESET_OVERRIDES[preset])
    # mode wiring: schedule flavor and the lsd alpha=0 baseline
    values[("schedule", "mode")] = "conditioned" if mode == "alpha-hasd" else "fixed"
    if mode == "lsd":
        values[("schedule", "c")] = 0.0
        values[("feedback", "total_budget")] = 0
    if raw_overrides:
        defaults = _section_defaults()
        nullable = {
        ("feedback", "total_budget"),
        ("sac", "lr_entropy"),
        ("reward", "updates_per_session"),
        ("reward", "stop_accuracy"),
    }
        for (section, key), raw in raw_overrides.items():
            if section == "run":
                continue
            if (section, key) in nullable and str(raw).lower() in ("none", ""):
                values[(section, key)] = None
                continue
            example = defaults[(section, key)]
            values[(section, key)] = (
                _parse_value(raw, example) if isinstance(raw, str) else raw
            )

    def section_kwargs(section: str, cls_defaults: dict) -> dict:
        kw = {}
        for (sec, key), v in values.items():
            if sec == section and key in cls_defaults:
                kw[key] = v
        return kw

    env_kw = section_kwargs("env", {f: None for f in _SECTIONS["env"]})
    if "hazards" in env_kw:
        env_kw["hazards"] = _parse_hazards(env_kw["hazards"])
    cfg = tr.TrainerConfig(
        mode=mode,
        seed=seed,
        env=envs.Nav2dConfig(**env_kw),
        sac=sac.SacConfig(**section_kwargs("sac", {f: None for f in _SECTIONS["sac"]})),
        dsd=dsd.DsdConfig(**section_kwargs("dsd", {f: None for f in _SECTIONS["dsd"]})),
        reward=pref.RewardConfig(**section_kwargs("reward", {f: None for f in _SECTIONS["reward"]})),
        schedule=tr.AlphaSchedule(
            **section_kwargs("schedule", {f: None for f in (_SECTIONS["schedule"] | {"mode"})})
        ),
        feedback=pref.FeedbackSchedule(
            **section_kwargs("feedback", {f: None for f in _SECTIONS["feedback"]})
        ),
        **section_kwargs("trainer", {f: None for f in _SECTIONS["trainer"]}),
    )
    return cfg


def _parse_hazards(raw) -> list[envs.HazardCircle]:
    if not isinstance(raw, str):
        return raw
    hazards = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        cx, cy, r = (float(x) for x in chunk.split(","))
        hazards.append(envs.HazardCircle((cx, cy), r))
    return hazards


def _section_defaults() -> dict[tuple[str, str], object]:
    """Example value per key, used for type-directed parsing."""
    cfg = tr.TrainerConfig(total_steps=75)
    out: dict[tuple[str, str], object] = {}
    for key in _SECTIONS["env"]:
        out[("env", key)] = "" if key == "hazards" else getattr(cfg.env, key)
    for key in _SECTIONS["sac"]:
        v = getattr(cfg.sac, key)
        out[("sac", key)] = 0.0 if key == "lr_entropy" and v is None else v
    for key in _SECTIONS["dsd"]:
        out[("dsd", key)] = getattr(cfg.dsd, key)
    for key in _SECTIONS["reward"]:
        v = getattr(cfg.reward, key)
        out[("reward", key)] = 0 if key in ("updates_per_session", "stop_accuracy") and v is None else v
    for key in _SECTIONS["schedule"]:
        out[("schedule", key)] = (1.0,) if key == "alpha_set" else getattr(cfg.schedule, key)
    for key in _SECTIONS["feedback"]:
        v = getattr(cfg.feedback, key)
        out[("feedback", key)] = 0 if v is None else v
    for key in _SECTIONS["trainer"]:
        out[("trainer", key)] = getattr(cfg, key)
    return out


def write_resolved_config(cfg: tr.TrainerConfig, preset: str, out_dir) -> str:
    """Every resolved value as INI, for reproduction; returns the path."""
    parser = configparser.ConfigParser()
    d = cfg.to_dict()
    parser["run"] = {"preset": preset, "mode": cfg.mode, "seed": str(cfg.seed)}
    parser["env"] = {
        k: _fmt(v) for k, v in d["env"].items() if k != "hazards"
    }
    parser["env"]["hazards"] = "; ".join(
        f"{h[0]},{h[1]},{h[2]}" for h in d["env"]["hazards"]
    )
    parser["sac"] = {k: _fmt(v) for k, v in d["sac"].items()}
    parser["dsd"] = {k: _fmt(v) for k, v in d["dsd"].items()}
    parser["reward"] = {k: _fmt(v) for k, v in d["reward"].items()}
    # schedule.mode is implied by the run mode, so it is not re-read
    parser["schedule"] = {k: _fmt(v) for k, v in d["schedule"].items() if k != "mode"}
    parser["feedback"] = {k: _fmt(v) for k, v in d["feedback"].items()}
    parser["trainer"] = {
        k: _fmt(d[k])
        for k in (
            "total_steps",
            "metrics_interval",
            "checkpoint_interval",
            "max_store_episodes",
            "allow_negative_alpha",
        )
    }
    buf = io.StringIO()
    parser.write(buf)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.ini")
    with open(path, "w") as f:
        f.write(buf.getvalue())
    return path


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)
