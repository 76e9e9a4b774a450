"""Scenario files: one ``key = value`` per line, ``#`` starts a comment.

Absent keys keep their defaults.  The keys and their types are listed in
:data:`KEYS`; anything else is rejected with its line number.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Callable, Dict, Tuple

from .protocol import ProtocolConfig
from .simulator import AttackConfig, ConfigError, ScenarioConfig


class ConfigParseError(ConfigError):
    """Malformed config line."""

    def __init__(self, line: int, key: str, message: str):
        ValueError.__init__(self, f"line {line}: {key}: {message}" if key else f"line {line}: {message}")
        self.key = key
        self.line = line


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _optional_float(text: str):
    return None if text.lower() in ("none", "auto") else float(text)


def _area(text: str) -> Tuple[float, float]:
    parts = text.lower().replace("*", "x").split("x")
    if len(parts) == 1:
        side = float(parts[0])
        return (side, side)
    if len(parts) == 2:
        return (float(parts[0]), float(parts[1]))
    raise ValueError(f"expected W or WxH, got {text!r}")


# key -> (section, field, converter); section is "scenario", "protocol" or "attack"
KEYS: Dict[str, Tuple[str, str, Callable]] = {
    "n_nodes": ("scenario", "n_nodes", _int),
    "sim_time_s": ("scenario", "sim_time_s", float),
    "area_m": ("scenario", "area_m", _area),
    "tx_range_m": ("scenario", "tx_range_m", float),
    "initial_energy_j": ("scenario", "initial_energy_j", float),
    "tx_power_w": ("scenario", "tx_power_w", float),
    "rx_power_w": ("scenario", "rx_power_w", float),
    "sense_power_w": ("scenario", "sense_power_w", float),
    "sampling_period_s": ("scenario", "sampling_period_s", float),
    "buffer_capacity": ("scenario", "buffer_capacity", _int),
    "field_mean": ("scenario", "field_mean", float),
    "field_std": ("scenario", "field_std", float),
    "radio_loss_prob": ("scenario", "radio_loss_prob", float),
    "msg_airtime_s": ("scenario", "msg_airtime_s", float),
    "mac_backoff_s": ("scenario", "mac_backoff_s", float),
    "accuracy_tol": ("scenario", "accuracy_tol", float),
    "rng_seed": ("scenario", "rng_seed", _int),
    "send_change_fraction": ("protocol", "broadcast_threshold", float),
    "broadcast_threshold": ("protocol", "broadcast_threshold", float),
    "threshold_mode": ("protocol", "threshold_mode", str),
    "deviation_sigma": ("protocol", "deviation_sigma", float),
    "deviation_scale": ("protocol", "deviation_scale", str),
    "sharp_fall_threshold": ("protocol", "sharp_fall_threshold", _optional_float),
    "hard_truncate": ("protocol", "hard_truncate", _bool),
    "challenge_window_s": ("protocol", "challenge_window", float),
    "min_responders": ("protocol", "min_responders", _int),
    "security": ("protocol", "security", _bool),
    "two_hop": ("protocol", "two_hop", _bool),
    "warmup_s": ("protocol", "warmup_s", float),
    "compromised_fraction": ("attack", "compromised_fraction", float),
    "attack_mode": ("attack", "mode", str),
    "offset_sigmas": ("attack", "offset_sigmas", float),
    "attack_start_s": ("attack", "start_time_s", float),
}


def apply_overrides(cfg: ScenarioConfig, values: Dict[str, object]) -> ScenarioConfig:
    """Return ``cfg`` with already converted ``{key: value}`` pairs applied."""
    groups: Dict[str, Dict[str, object]] = {"scenario": {}, "protocol": {}, "attack": {}}
    for key, value in values.items():
        section, name, _ = KEYS[key]
        groups[section][name] = value
    protocol = replace(cfg.protocol, **groups["protocol"])
    attack = replace(cfg.attack, **groups["attack"])
    return replace(cfg, protocol=protocol, attack=attack, **groups["scenario"])


def parse_config_text(text: str) -> ScenarioConfig:
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigParseError(lineno, "", f"expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigParseError(lineno, key, "unknown key")
        try:
            values[key] = KEYS[key][2](value)
        except ValueError as exc:
            raise ConfigParseError(lineno, key, str(exc)) from None
    cfg = apply_overrides(ScenarioConfig(), values)
    cfg.validate()
    return cfg


def parse_config(path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises ``FileNotFoundError`` for a missing file and :class:`ConfigError`
    (whose ``key`` names the bad setting) for anything invalid.
    """
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: ScenarioConfig) -> str:
    """Effective config in the file format; parsing it back gives ``cfg``."""
    p, a = cfg.protocol, cfg.attack
    sections = {"scenario": cfg, "protocol": p, "attack": a}
    lines = []
    for key, (section, name, _) in KEYS.items():
        if key == "send_change_fraction":
            continue
        v = getattr(sections[section], name)
        if isinstance(v, bool):
            text = "on" if v else "off"
        elif v is None:
            text = "auto"
        elif isinstance(v, tuple):
            text = f"{v[0]!r}x{v[1]!r}"
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def _all_fields_covered() -> bool:
    # every tunable dataclass field is reachable from some key
    covered = {(s, n) for s, n, _ in KEYS.values()}
    need = {("scenario", f.name) for f in fields(ScenarioConfig) if f.name not in ("protocol", "attack")}
    need |= {("protocol", f.name) for f in fields(ProtocolConfig)}
    need |= {("attack", f.name) for f in fields(AttackConfig)}
    return need <= covered
