"""Flat key-value configuration files.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored.  Lists are whitespace-separated.  Unknown keys are rejected by
name.  Example::

    # acquisition
    matrix = 112 112
    te_ms = 3 5.6 8.2 10.8 13.4
    snr = 30
    heat_start = 5
    heat_stop = 45
"""

from __future__ import annotations

import math
from typing import Optional

from .phantom import (HeatingProtocol, SonicationEvent, disk_phantom,
                      fat_layer_phantom)
from .sim import AcquisitionParams


class ConfigError(ValueError):
    pass


def _to_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default); None default means "absent unless set"
SCHEMA = {
    # acquisition
    "matrix": (lambda s: tuple(int(v) for v in s.split()), (112, 112)),
    "tr_ms": (float, 50.0),
    "te_ms": (lambda s: tuple(float(v) for v in s.split()),
              (3.0, 5.6, 8.2, 10.8, 13.4)),
    "fa_deg": (lambda s: tuple(float(v) for v in s.split()), (10.0, 35.0)),
    "b0_t": (float, 3.0),
    "alpha_ppm_per_degc": (float, 0.01),
    "n_keep": (int, 16),
    "snr": (float, math.inf),
    "n_dynamics": (int, 60),
    "seed": (int, 0),
    # phantom
    "phantom": (str, "disk"),
    "phantom_seed": (int, 0),
    "b1_amplitude": (float, 0.0),
    # heating protocol
    "focus": (lambda s: tuple(float(v) for v in s.split()), None),
    "power_degc_per_s": (float, 1.5),
    "sigma_f_vox": (float, 2.0),
    "tau_cool_s": (float, 60.0),
    "kappa_vox2_per_s": (float, 0.05),
    "frame_dt_s": (float, 0.8),
    "heat_start": (int, 5),
    "heat_stop": (int, None),
    # network / training
    "base_channels": (int, 16),
    "kernel": (lambda s: tuple(int(v) for v in s.split()), (5, 5)),
    "learning_rate": (float, None),
    "batch_size": (int, None),
    "epochs": (int, None),
    "max_steps": (int, None),
    "augment_rot90": (_to_bool, False),
    "t1_max_ms": (float, 5000.0),
    "dtype": (str, "float32"),
    # comparison / reports
    "methods": (lambda s: tuple(s.split()), None),
    "echoes": (lambda s: tuple(int(v) for v in s.split()), None),
    "roi": (lambda s: tuple(int(v) for v in s.split()), None),
    "slope_roi": (lambda s: tuple(int(v) for v in s.split()), None),
    # service
    "host": (str, "127.0.0.1"),
    "port": (int, 8765),
    "frame_period_s": (float, 0.8),
    "serve_mode": (str, "full"),
    "baseline_temp_degc": (float, 37.0),
}


def parse_config(text: str) -> dict:
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}")
    return cfg


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return parse_config("")
    with open(path) as f:
        return parse_config(f.read())


def build_scene(cfg: dict):
    """(phantom, protocol, params) from a parsed configuration."""
    shape = tuple(cfg["matrix"])
    if cfg["phantom"] == "disk":
        ph = disk_phantom(shape, seed=cfg["phantom_seed"],
                          b1_amplitude=cfg["b1_amplitude"])
    elif cfg["phantom"] == "fat_layer":
        ph = fat_layer_phantom(shape, seed=cfg["phantom_seed"],
                               b1_amplitude=cfg["b1_amplitude"])
    else:
        raise ConfigError(f"unknown phantom {cfg['phantom']!r}")

    params = AcquisitionParams(
        tr_ms=cfg["tr_ms"], te_ms=cfg["te_ms"], fa1_deg=cfg["fa_deg"][0],
        fa2_deg=cfg["fa_deg"][1], b0_t=cfg["b0_t"],
        alpha_ppm_per_degc=cfg["alpha_ppm_per_degc"], matrix=shape,
        n_keep=cfg["n_keep"], noise_snr=cfg["snr"])

    focus = cfg["focus"] or (shape[0] // 2, shape[1] // 2)
    schedule = [SonicationEvent(t_index=cfg["heat_start"], on=True)]
    if cfg["heat_stop"] is not None:
        schedule.append(SonicationEvent(t_index=cfg["heat_stop"], on=False))
    proto = HeatingProtocol(
        focus=tuple(focus), power=cfg["power_degc_per_s"],
        sigma_f=cfg["sigma_f_vox"], tau_cool=cfg["tau_cool_s"],
        kappa=cfg["kappa_vox2_per_s"], frame_dt=cfg["frame_dt_s"],
        schedule=schedule)
    return ph, proto, params
