"""Digital phantoms and focal-heating dynamics.

The heating model is deliberately minimal: Gaussian focal deposition,
Newtonian cooling toward baseline, and isotropic diffusion, integrated with
explicit Euler steps.  It produces smooth hotspot evolutions of the kind seen
in gel/tissue sonication experiments without simulating acoustics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

WATER_DT1_PER_DEGC = 7.04   # ms/degC, aqueous tissue default
FAT_DT1_PER_DEGC = 5.0      # ms/degC, adipose default (configurable)


@dataclass(frozen=True)
class PhantomSpec:
    """Per-voxel ground-truth tissue maps.

    All maps share one 2D shape.  ``fat`` voxels are PRF-inactive: heating
    changes their T1 but not their phase.  ``b1_scale`` is the actual/nominal
    flip-angle ratio field seen by every excitation.
    """

    m0: np.ndarray            # arbitrary units, >= 0
    t1_ms: np.ndarray         # baseline T1, > 0 where m0 > 0
    t2star_ms: np.ndarray     # > 0 where m0 > 0
    fat: np.ndarray           # bool, PRF-inactive voxels
    baseline_phase: np.ndarray  # rad
    dt1_per_degc: np.ndarray  # ms/degC T1-temperature slope
    b1_scale: Optional[np.ndarray] = None      # actual FA / nominal FA
    coil_sens: Optional[tuple] = None          # optional complex maps

    def __post_init__(self):
        maps = {
            "m0": self.m0, "t1_ms": self.t1_ms, "t2star_ms": self.t2star_ms,
            "fat": self.fat, "baseline_phase": self.baseline_phase,
            "dt1_per_degc": self.dt1_per_degc,
        }
        shape = np.asarray(self.m0).shape
        for name, m in maps.items():
            m = np.asarray(m)
            if m.shape != shape:
                raise ValueError(f"{name} shape {m.shape} != m0 shape {shape}")
            if name != "fat" and not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(self.m0 < 0):
            raise ValueError("m0 must be non-negative")
        support = self.m0 > 0
        if np.any(self.t1_ms[support] <= 0) or np.any(self.t2star_ms[support] <= 0):
            raise ValueError("t1_ms and t2star_ms must be positive on the subject")
        if self.b1_scale is not None and np.asarray(self.b1_scale).shape != shape:
            raise ValueError("b1_scale shape mismatch")

    @property
    def shape(self):
        return np.asarray(self.m0).shape

    @property
    def support(self) -> np.ndarray:
        return np.asarray(self.m0) > 0

    def b1(self) -> np.ndarray:
        if self.b1_scale is None:
            return np.ones(self.shape)
        return np.asarray(self.b1_scale, dtype=np.float64)


@dataclass(frozen=True)
class TemperatureField:
    """Temperature change above baseline at one dynamic index."""

    dt: np.ndarray      # degC
    t_index: int = 0

    def __post_init__(self):
        dt = np.asarray(self.dt, dtype=np.float64)
        if not np.all(np.isfinite(dt)):
            raise ValueError("temperature field contains non-finite entries")
        if self.t_index == 0 and np.any(dt != 0):
            raise ValueError("temperature change must be zero at t_index 0")
        object.__setattr__(self, "dt", dt)


@dataclass(frozen=True)
class SonicationEvent:
    """Schedule entry: settings that take effect from ``t_index`` onward.

    ``focus``/``power`` of None inherit the protocol defaults.
    """

    t_index: int
    on: bool
    focus: Optional[tuple] = None
    power: Optional[float] = None


@dataclass(frozen=True)
class HeatingProtocol:
    """Focal heating dynamics parameters plus an on/off schedule."""

    focus: tuple                  # (row, col) voxel coordinates
    power: float                  # degC/s peak heating rate
    sigma_f: float = 2.0          # voxels, Gaussian focal width
    tau_cool: float = 60.0        # s, Newtonian cooling constant
    kappa: float = 0.05           # voxel^2/s, isotropic diffusion
    frame_dt: float = 0.8         # s between dynamics
    schedule: Sequence[SonicationEvent] = field(default_factory=tuple)

    def __post_init__(self):
        if self.sigma_f <= 0:
            raise ValueError("sigma_f must be positive")
        if self.tau_cool <= 0:
            raise ValueError("tau_cool must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.frame_dt <= 0:
            raise ValueError("frame_dt must be positive")
        # explicit-Euler stability limits
        if self.frame_dt * self.kappa * 4 > 1:
            raise ValueError(
                f"unstable: frame_dt*kappa*4 = {self.frame_dt * self.kappa * 4:.3g} > 1")
        if self.frame_dt > self.tau_cool:
            raise ValueError("frame_dt must not exceed tau_cool")
        object.__setattr__(self, "schedule", tuple(self.schedule))

    def settings_at(self, t_index: int):
        """Resolve (on, focus, power) active while stepping from ``t_index``."""
        on, focus, power = False, self.focus, self.power
        for ev in sorted(self.schedule, key=lambda e: e.t_index):
            if ev.t_index > t_index:
                break
            on = ev.on
            if ev.focus is not None:
                focus = tuple(ev.focus)
            if ev.power is not None:
                power = ev.power
        return on, focus, power


def focal_gaussian(shape, focus, sigma_f: float) -> np.ndarray:
    """Unit-peak Gaussian deposition profile centered on ``focus``."""
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[1])[None, :]
    r2 = (rows - focus[0]) ** 2 + (cols - focus[1]) ** 2
    return np.exp(-r2 / (2.0 * sigma_f ** 2))


def laplacian_neumann(f: np.ndarray) -> np.ndarray:
    """5-point Laplacian with zero-flux (edge-replicated) boundaries."""
    p = np.pad(f, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * f


def heating_step(dt_map: np.ndarray, proto: HeatingProtocol, on: bool,
                 focus=None, power=None) -> np.ndarray:
    """One explicit-Euler update of the temperature-change field."""
    focus = proto.focus if focus is None else focus
    power = proto.power if power is None else power
    dt_map = np.asarray(dt_map, dtype=np.float64)
    rate = -dt_map / proto.tau_cool + proto.kappa * laplacian_neumann(dt_map)
    if on:
        rate = rate + power * focal_gaussian(dt_map.shape, focus, proto.sigma_f)
    return dt_map + proto.frame_dt * rate


def step_heating(field_: TemperatureField, proto: HeatingProtocol) -> TemperatureField:
    """Advance the field one frame, applying the protocol's schedule."""
    on, focus, power = proto.settings_at(field_.t_index)
    nxt = heating_step(field_.dt, proto, on, focus, power)
    return TemperatureField(dt=nxt, t_index=field_.t_index + 1)


def _polynomial_field(shape, amplitude, rng):
    """Smooth 2D quadratic-in-(x, y) field in [1 - a, 1 + a]."""
    y = np.linspace(-1, 1, shape[0])[:, None]
    x = np.linspace(-1, 1, shape[1])[None, :]
    c = rng.uniform(-1, 1, size=6)
    f = c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x ** 2 + c[5] * y ** 2
    span = np.abs(f).max()
    if span == 0:
        return np.ones(shape)
    return 1.0 + amplitude * f / span


def disk_phantom(shape=(112, 112), seed: int = 0, texture: float = 0.15,
                 b1_amplitude: float = 0.0, n_inclusions: int = 4) -> PhantomSpec:
    """Uniform gel-like water disk with small inclusions and smooth texture.

    The inclusions and a band-limited texture give the object the
    high-frequency content an undersampled acquisition actually loses.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    radius = 0.38 * min(h, w)
    disk = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2

    m0 = np.where(disk, 1.0, 0.0)
    t1 = np.where(disk, 1000.0, 1.0)
    t2s = np.where(disk, 30.0, 1.0)

    # low-pass random texture, zero outside the disk
    if texture > 0:
        noise = rng.standard_normal(shape)
        kspec = np.fft.fftshift(np.fft.fft2(noise))
        fy = np.fft.fftshift(np.fft.fftfreq(h))[:, None]
        fx = np.fft.fftshift(np.fft.fftfreq(w))[None, :]
        kspec *= np.exp(-((fy ** 2 + fx ** 2) / (2 * 0.08 ** 2)))
        smooth = np.real(np.fft.ifft2(np.fft.ifftshift(kspec)))
        smooth /= max(np.abs(smooth).max(), 1e-12)
        m0 = np.where(disk, 1.0 + texture * smooth, 0.0)

    for _ in range(n_inclusions):
        ir = rng.uniform(0.1, 0.6) * radius
        ang = rng.uniform(0, 2 * np.pi)
        icy, icx = cy + ir * np.sin(ang), cx + ir * np.cos(ang)
        irad = rng.uniform(0.04, 0.10) * min(h, w)
        blob = (rows - icy) ** 2 + (cols - icx) ** 2 <= irad ** 2
        m0[blob & disk] *= rng.uniform(0.55, 0.85)
        t1[blob & disk] = rng.uniform(700.0, 1500.0)

    phase = 0.3 * _polynomial_field(shape, 1.0, rng) - 0.3
    b1 = _polynomial_field(shape, b1_amplitude, rng) if b1_amplitude > 0 else None
    return PhantomSpec(
        m0=m0, t1_ms=t1, t2star_ms=t2s, fat=np.zeros(shape, dtype=bool),
        baseline_phase=phase, dt1_per_degc=np.full(shape, WATER_DT1_PER_DEGC),
        b1_scale=b1)


def fat_layer_phantom(shape=(112, 112), seed: int = 0,
                      b1_amplitude: float = 0.0) -> PhantomSpec:
    """Water disk with a horizontal adipose band (PRF-inactive, short T1)."""
    base = disk_phantom(shape, seed=seed, b1_amplitude=b1_amplitude)
    h = shape[0]
    band = slice(int(0.62 * h), int(0.74 * h))
    fat = np.zeros(shape, dtype=bool)
    fat[band, :] = base.support[band, :]
    t1 = base.t1_ms.copy()
    t1[fat] = 350.0
    t2s = base.t2star_ms.copy()
    t2s[fat] = 20.0
    slope = base.dt1_per_degc.copy()
    slope[fat] = FAT_DT1_PER_DEGC
    return replace(base, t1_ms=t1, t2star_ms=t2s, fat=fat, dt1_per_degc=slope)
