"""INI-style scenario files.

Four sections map onto ScenarioConfig fields::

    [plant]     step, ripple_fraction, ripple_frequency, initial_state
    [filters]   lambda, regressor_scale, normalization
    [drem]      a, c, d, gamma1..gamma4, gain_multiplier, cadence
    [scenario]  id, duration, schedule, theta_init, prewarm, estimator_delay,
                hold_on_input_step, record_every, decimation,
                convergence_tol, decay_fraction

``schedule`` is written as ``Mode3@0, Mode1@0.02``. Missing keys keep the
scenario's defaults; unknown sections or keys raise ConfigError.
"""
from __future__ import annotations

import configparser
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .harness import CUSTOM, MODE_TRACKING, STC_COLD_START, ScenarioConfig, modes_config, stc_config
from .simulator import STEADY_STATE


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _str(s):
    return s.strip()


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _initial_state(s):
    s = s.strip()
    return STEADY_STATE if s.lower() == STEADY_STATE else float(s)


def parse_schedule(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        label, sep, t = item.partition("@")
        if not sep:
            raise ValueError(f"schedule entry {item!r} is not of the form Mode@time")
        out.append((float(t), label.strip()))
    return out


def format_schedule(schedule) -> str:
    return ", ".join(f"{m}@{t!r}" for t, m in schedule)


# section -> {ini key: (field, parser)}
KEYS = {
    "plant": {
        "step": ("step", _float),
        "ripple_fraction": ("ripple_fraction", _float),
        "ripple_frequency": ("ripple_frequency", _float),
        "initial_state": ("initial_state", _initial_state),
    },
    "filters": {
        "lambda": ("lam", _float),
        "regressor_scale": ("regressor_scale", _float),
        "normalization": ("normalization", _str),
    },
    "drem": {
        "a": ("a", _float),
        "c": ("c", _float),
        "d": ("d", _float),
        "gamma1": ("gamma1", _float),
        "gamma2": ("gamma2", _float),
        "gamma3": ("gamma3", _float),
        "gamma4": ("gamma4", _float),
        "gain_multiplier": ("gain_multiplier", _float),
        "cadence": ("cadence", _int),
    },
    "scenario": {
        "id": ("scenario", _str),
        "duration": ("duration", _float),
        "schedule": ("schedule", parse_schedule),
        "theta_init": ("theta_init", _str),
        "prewarm": ("prewarm", _float),
        "estimator_delay": ("estimator_delay", _optional_float),
        "hold_on_input_step": ("hold_on_input_step", _bool),
        "record_every": ("record_every", _int),
        "decimation": ("decimation", _int),
        "convergence_tol": ("convergence_tol", _float),
        "decay_fraction": ("decay_fraction", _float),
    },
}


def _base_for(scenario: Optional[str]) -> ScenarioConfig:
    if scenario == MODE_TRACKING:
        return modes_config()
    if scenario == CUSTOM:
        return stc_config(scenario=CUSTOM)
    return stc_config()


def parse_config(text: str, scenario: Optional[str] = None, source: str = "<string>") -> ScenarioConfig:
    """Build a ScenarioConfig from INI text.

    Defaults come from ``scenario`` (or the file's ``[scenario] id``), so a file
    only needs the keys it changes.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    values = {}
    for section in cp.sections():
        if section not in KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in KEYS[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            name, conv = KEYS[section][key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None

    file_id = values.get("scenario")
    if scenario and file_id and file_id != scenario:
        raise ConfigError(f"{source}: file is for scenario {file_id!r}, requested {scenario!r}")
    sid = scenario or file_id or STC_COLD_START
    base = _base_for(sid)
    gammas = list(base.gammas)
    for i in range(4):
        g = values.pop(f"gamma{i + 1}", None)
        if g is not None:
            gammas[i] = g
    values["gammas"] = tuple(gammas)
    values["scenario"] = sid
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, scenario: Optional[str] = None) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror or exc}") from None
    return parse_config(text, scenario, str(p))


def dump_config(cfg: ScenarioConfig) -> str:
    """INI text that ``parse_config`` maps back onto ``cfg``."""
    init = cfg.initial_state if cfg.initial_state == STEADY_STATE else repr(float(cfg.initial_state))
    delay = "auto" if cfg.estimator_delay is None else repr(cfg.estimator_delay)
    sections = {
        "plant": {
            "step": repr(cfg.step),
            "ripple_fraction": repr(cfg.ripple_fraction),
            "ripple_frequency": repr(cfg.ripple_frequency),
            "initial_state": init,
        },
        "filters": {
            "lambda": repr(cfg.lam),
            "regressor_scale": repr(cfg.regressor_scale),
            "normalization": cfg.normalization,
        },
        "drem": {
            "a": repr(cfg.a),
            "c": repr(cfg.c),
            "d": repr(cfg.d),
            **{f"gamma{i + 1}": repr(g) for i, g in enumerate(cfg.gammas)},
            "gain_multiplier": repr(cfg.gain_multiplier),
            "cadence": str(cfg.cadence),
        },
        "scenario": {
            "id": cfg.scenario,
            "duration": repr(cfg.duration),
            "schedule": format_schedule(cfg.schedule),
            "theta_init": cfg.theta_init,
            "prewarm": repr(cfg.prewarm),
            "estimator_delay": delay,
            "hold_on_input_step": "true" if cfg.hold_on_input_step else "false",
            "record_every": str(cfg.record_every),
            "decimation": str(cfg.decimation),
            "convergence_tol": repr(cfg.convergence_tol),
            "decay_fraction": repr(cfg.decay_fraction),
        },
    }
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
        lines.append("")
    return "\n".join(lines)
