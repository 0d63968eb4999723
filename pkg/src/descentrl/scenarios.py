"""Scenario presets and the sectioned key/value config-file loader.

Presets cover the experiment matrix: nominal Mars descent, Mars with engine
failure, Mars with a low-Isp engine (large mass swing), Mars flown on radar
altimeter returns (velocity-pointed and target-pointed beams), the asteroid
landing with randomized environmental dynamics, and a toy point-mass used by
smoke tests. Any numeric quantity can be overridden from an INI-style file.
"""

from __future__ import annotations

import configparser
from dataclasses import fields

import numpy as np

from .envs import ConfigError, EnvConfig, LanderEnv, ToyPointMassEnv


def mars() -> EnvConfig:
    return EnvConfig(scenario="mars")


def mars_deterministic() -> EnvConfig:
    """Nominal gravity and mass, no disturbances; baseline sanity runs."""
    return EnvConfig(
        scenario="mars-deterministic",
        g_scale_lo=1.0,
        g_scale_hi=1.0,
        mass_lo=2000.0,
        mass_hi=2000.0,
        f_env_sigma=np.zeros(3),
    )


def mars_failure() -> EnvConfig:
    return EnvConfig(
        scenario="mars-failure",
        t_max=24000.0,
        p_fail=0.5,
    )


def mars_highmass() -> EnvConfig:
    return EnvConfig(scenario="mars-highmass", isp=225.0 / 6.0)


def mars_altimeter() -> EnvConfig:
    return EnvConfig(scenario="mars-altimeter", obs_mode="altimeter")


def mars_altimeter_target() -> EnvConfig:
    return EnvConfig(
        scenario="mars-altimeter-target",
        obs_mode="altimeter_target",
        pos_min=np.array([0.0, -500.0, 1000.0]),
        pos_max=np.array([1000.0, 500.0, 1000.0]),
        vel_min=np.array([-30.0, -30.0, -50.0]),
        vel_max=np.array([-10.0, 30.0, -40.0]),
    )


def asteroid() -> EnvConfig:
    return EnvConfig(
        scenario="asteroid",
        pos_min=np.array([900.0, 900.0, 900.0]),
        pos_max=np.array([1100.0, 1100.0, 1100.0]),
        vel_min=np.array([-1.0, -1.0, -1.0]),
        vel_max=np.array([-1.0, -1.0, -1.0]),
        g_min=np.array([-100e-6, -100e-6, -100e-6]),
        g_max=np.array([-1e-6, -1e-6, -1e-6]),
        omega_min=np.array([-1e-3, -1e-3, -1e-3]),
        omega_max=np.array([1e-3, 1e-3, 1e-3]),
        srp_min=np.array([-1e-6, -1e-6, -1e-6]),
        srp_max=np.array([1e-6, 1e-6, 1e-6]),
        mass_lo=450.0,
        mass_hi=500.0,
        dry_mass=300.0,
        r_offset=np.array([0.0, 0.0, 250.0]),
        f_env_sigma=np.array([0.02, 0.02, 0.02]),
        thrust_mode="pulsed",
        t_min=0.0,
        t_max=2.0,
        init_thrust_bias=0.0,
        alpha=-1.0,
        beta=-0.01,
        shaping="direct",
        v_o=1.0,
        tau1=300.0,
        r_lim=1.0,
        v_lim=0.2,
        gs_lim=0.0,
        dt=6.0,
        max_steps=500,
    )


SCENARIOS = {
    "mars": mars,
    "mars-deterministic": mars_deterministic,
    "mars-failure": mars_failure,
    "mars-highmass": mars_highmass,
    "mars-altimeter": mars_altimeter,
    "mars-altimeter-target": mars_altimeter_target,
    "asteroid": asteroid,
}


def scenario_config(key: str) -> EnvConfig:
    if key == "toy":
        raise ConfigError("the toy scenario has no EnvConfig; use make_env")
    try:
        return SCENARIOS[key]()
    except KeyError:
        raise ConfigError(
            f"unknown scenario {key!r}; choose from {sorted(SCENARIOS) + ['toy']}"
        ) from None


def make_env(key: str, overrides: dict | None = None, terrain=None):
    """Instantiate an environment for a scenario key, with optional overrides."""
    if key == "toy":
        return ToyPointMassEnv()
    config = scenario_config(key)
    if overrides:
        apply_overrides(config, overrides)
    config.validate()
    return LanderEnv(config, terrain=terrain)


_ENV_FIELDS = {f.name: f for f in fields(EnvConfig)}


def _parse_like(current, raw: str):
    raw = raw.strip()
    if isinstance(current, np.ndarray):
        return np.array([float(tok) for tok in raw.replace(",", " ").split()])
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None or isinstance(current, str):
        if raw.lower() in ("none", "auto"):
            return None
        # unset optional vectors (g_min/g_max) and v_o accept numbers too
        try:
            toks = raw.replace(",", " ").split()
            if len(toks) > 1:
                return np.array([float(t) for t in toks])
            return float(raw)
        except ValueError:
            return raw
    raise ConfigError(f"cannot parse override value {raw!r}")


def load_config_file(path) -> tuple[dict, dict]:
    """Read an INI-style file; returns (env overrides, train overrides).

    Every section other than [train] contributes env-config keys; section
    names are organizational only. Keys must match EnvConfig field names.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    env_over: dict = {}
    train_over: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "train":
                train_over[key] = raw.strip()
            else:
                if key not in _ENV_FIELDS:
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                env_over[key] = raw
    return env_over, train_over


def apply_overrides(config: EnvConfig, overrides: dict) -> EnvConfig:
    for key, raw in overrides.items():
        if key not in _ENV_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(config, key)
        value = _parse_like(current, raw) if isinstance(raw, str) else raw
        setattr(config, key, value)
    config.validate()
    return config
