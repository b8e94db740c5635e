"""Classical parameter estimation: PRF temperature, VFA T1, B1, thermal dose.

Every estimator returns its map together with a validity mask; downstream
metrics exclude invalid voxels.  Phase is always the principal value in
(-pi, pi], so temperature changes beyond the wrap limit
``pi / prf_rad_per_degc(TE)`` alias (about 29.2 degC at TE 13.4 ms, 3 T,
0.01 ppm/degC).  No unwrapping is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sim import AcquisitionParams, spgr_signal

_DEGENERATE_EPS = 1e-12


@dataclass
class TemperatureMap:
    dt: np.ndarray          # degC
    valid: np.ndarray       # bool
    te_ms: float
    t_index: Optional[int] = None


@dataclass
class T1Map:
    t1_ms: np.ndarray
    valid: np.ndarray
    m0: Optional[np.ndarray] = None
    t_index: Optional[int] = None


@dataclass
class B1Map:
    scale: np.ndarray       # actual FA / nominal FA
    valid: np.ndarray


def wrap_limit_degc(params: AcquisitionParams, te_ms: float) -> float:
    """Largest unambiguous temperature change at this echo time."""
    return float(np.pi / params.prf_rad_per_degc(te_ms))


def prf_delta_t(pre: np.ndarray, treat: np.ndarray, te_ms: float,
                params: AcquisitionParams) -> TemperatureMap:
    """PRF temperature change from the phase of pre * conj(treat)."""
    pre = np.asarray(pre, dtype=np.complex128)
    treat = np.asarray(treat, dtype=np.complex128)
    if pre.shape != treat.shape:
        raise ValueError("image dimensions must match")
    if te_ms not in params.te_ms:
        raise ValueError(f"te_ms {te_ms} not among acquired echoes {params.te_ms}")
    prod = pre * np.conj(treat)
    valid = np.abs(prod) > 0
    dt = np.zeros(pre.shape)
    dt[valid] = np.angle(prod[valid]) / params.prf_rad_per_degc(te_ms)
    return TemperatureMap(dt=dt, valid=valid, te_ms=te_ms)


def despot1_two_point(s1_mag, s2_mag, fa1_eff_deg, fa2_eff_deg,
                      tr_ms: float) -> T1Map:
    """Two-point variable-flip-angle T1 (plus M0 by back-substitution).

    Works on the linearized form: E1 is the slope of S/sin(FA) against
    S/tan(FA).  Voxels with a degenerate denominator or E1 outside (0, 1)
    are flagged invalid.  Flip angles must already be B1-corrected.
    """
    s1 = np.asarray(s1_mag, dtype=np.float64)
    s2 = np.asarray(s2_mag, dtype=np.float64)
    if s1.shape != s2.shape:
        raise ValueError("signal shapes must match")
    if np.any(s1 < 0) or np.any(s2 < 0):
        raise ValueError("magnitudes must be non-negative")
    a1 = np.deg2rad(np.broadcast_to(np.asarray(fa1_eff_deg, dtype=np.float64), s1.shape))
    a2 = np.deg2rad(np.broadcast_to(np.asarray(fa2_eff_deg, dtype=np.float64), s1.shape))

    num = s2 / np.sin(a2) - s1 / np.sin(a1)
    den = s2 / np.tan(a2) - s1 / np.tan(a1)
    valid = np.abs(den) > _DEGENERATE_EPS
    e1 = np.zeros(s1.shape)
    np.divide(num, den, out=e1, where=valid)
    valid &= (e1 > 0) & (e1 < 1)

    t1 = np.zeros(s1.shape)
    t1[valid] = -tr_ms / np.log(e1[valid])
    m0 = np.zeros(s1.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        m0_all = s1 * (1 - e1 * np.cos(a1)) / (np.sin(a1) * (1 - e1))
    m0[valid] = m0_all[valid]
    valid = valid & (m0 > 0)
    t1[~valid] = 0
    m0[~valid] = 0
    return T1Map(t1_ms=t1, valid=valid, m0=m0)


def _spgr_fa_mag(m0, t1_ms, fa_rad, tr_ms):
    e1 = np.exp(-tr_ms / t1_ms)
    return m0 * np.sin(fa_rad) * (1 - e1) / (1 - e1 * np.cos(fa_rad))


def srvfa_t1(s1_pre_mag, s2_treat_mag, fa1_eff_deg, fa2_eff_deg, tr_ms: float,
             m0_pre, t1_pre, method: str = "invert",
             t1_max_ms: float = 10000.0, tol_ms: float = 1e-3) -> T1Map:
    """Single-reference VFA T1 during treatment.

    ``method="invert"`` (reference implementation): invert the spoiled-GRE
    magnitude at the higher flip angle for T1 with M0 frozen at its
    pretreatment value.  The signal is strictly decreasing in T1, so a
    safeguarded bisection converges to ``tol_ms``.

    ``method="kappa"``: two-point fit against the stale pretreatment
    lower-FA signal, then a multiplicative correction
    kappa = T1_pre / T1_apparent(t0) estimated once at pretreatment.
    """
    s1 = np.asarray(s1_pre_mag, dtype=np.float64)
    s2 = np.asarray(s2_treat_mag, dtype=np.float64)
    m0 = np.asarray(m0_pre, dtype=np.float64)
    t1p = np.asarray(t1_pre, dtype=np.float64)
    a2 = np.deg2rad(np.broadcast_to(np.asarray(fa2_eff_deg, dtype=np.float64), s2.shape))

    if method == "kappa":
        apparent = despot1_two_point(s1, s2, fa1_eff_deg, fa2_eff_deg, tr_ms)
        s2_pre = _spgr_fa_mag(m0, np.where(t1p > 0, t1p, 1.0), a2, tr_ms)
        apparent0 = despot1_two_point(s1, s2_pre, fa1_eff_deg, fa2_eff_deg, tr_ms)
        valid = apparent.valid & apparent0.valid & (apparent0.t1_ms > 0) & (t1p > 0)
        t1 = np.zeros(s2.shape)
        t1[valid] = (t1p[valid] / apparent0.t1_ms[valid]) * apparent.t1_ms[valid]
        return T1Map(t1_ms=t1, valid=valid, m0=m0)
    if method != "invert":
        raise ValueError(f"unknown srVFA method {method!r}")

    valid = (m0 > 0) & (t1p > 0) & (s2 > 0)
    # achievable range: S(T1) decreases from the tol-floor value toward 0
    s_hi = _spgr_fa_mag(m0, np.full(s2.shape, tol_ms), a2, tr_ms)
    valid &= s2 <= s_hi

    lo = np.full(s2.shape, tol_ms)
    hi = np.full(s2.shape, t1_max_ms)
    s_lo_end = _spgr_fa_mag(m0, hi, a2, tr_ms)
    valid &= s2 >= s_lo_end          # hotter than t1_max_ms -> invalid

    n_iter = int(np.ceil(np.log2(t1_max_ms / tol_ms))) + 2
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        # signal decreases with T1: S(mid) > s2 means the root is above mid
        above = _spgr_fa_mag(m0, mid, a2, tr_ms) > s2
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    t1 = np.where(valid, 0.5 * (lo + hi), 0.0)
    return T1Map(t1_ms=t1, valid=valid, m0=m0)


def curve_fit_t1(mags_per_fa, fas_eff_deg, tr_ms: float,
                 max_iter: int = 100, rel_tol: float = 1e-10) -> T1Map:
    """Per-voxel nonlinear least squares of the spoiled-GRE model in (M0, T1).

    Levenberg-Marquardt with per-voxel damping, initialized from the
    two-point fit of the first and last flip angles.  Voxels that fail to
    converge fall back to the two-point value and are flagged invalid.
    """
    mags = [np.asarray(m, dtype=np.float64) for m in mags_per_fa]
    if len(mags) < 2:
        raise ValueError("need at least two flip-angle measurements")
    shape = mags[0].shape
    fas = [np.deg2rad(np.broadcast_to(np.asarray(f, dtype=np.float64), shape))
           for f in fas_eff_deg]
    if len(fas) != len(mags):
        raise ValueError("one flip angle per measurement required")

    init = despot1_two_point(mags[0], mags[-1],
                             np.rad2deg(fas[0]), np.rad2deg(fas[-1]), tr_ms)
    fit_mask = init.valid
    m0 = np.where(fit_mask, init.m0, 1.0)
    t1 = np.where(fit_mask, init.t1_ms, 1000.0)

    y = np.stack(mags)          # [K, ...]
    a = np.stack(fas)

    def model_and_jac(m0v, t1v):
        e1 = np.exp(-tr_ms / t1v)
        c, s = np.cos(a), np.sin(a)
        den = 1 - e1 * c
        f = m0v * s * (1 - e1) / den
        df_dm0 = s * (1 - e1) / den
        de1_dt1 = e1 * tr_ms / t1v ** 2
        df_de1 = m0v * s * (c - 1) / den ** 2
        return f, df_dm0, df_de1 * de1_dt1

    def cost_of(m0v, t1v):
        e1 = np.exp(-tr_ms / t1v)
        f = m0v * np.sin(a) * (1 - e1) / (1 - e1 * np.cos(a))
        return ((f - y) ** 2).sum(axis=0)

    lam = np.full(shape, 1e-3)
    cost = cost_of(m0, t1)
    converged = np.zeros(shape, dtype=bool)
    for _ in range(max_iter):
        f, j0, j1 = model_and_jac(m0, t1)
        r = f - y
        # damped 2x2 normal equations per voxel
        a00 = (j0 * j0).sum(axis=0) * (1 + lam)
        a11 = (j1 * j1).sum(axis=0) * (1 + lam)
        a01 = (j0 * j1).sum(axis=0)
        b0 = -(j0 * r).sum(axis=0)
        b1 = -(j1 * r).sum(axis=0)
        det = a00 * a11 - a01 ** 2
        ok = np.abs(det) > _DEGENERATE_EPS
        safe_det = np.where(ok, det, 1.0)
        cand_m0 = m0 + np.where(ok, (b0 * a11 - b1 * a01) / safe_det, 0.0)
        cand_t1 = np.clip(t1 + np.where(ok, (a00 * b1 - a01 * b0) / safe_det, 0.0),
                          1.0, 1e7)
        cand_cost = cost_of(cand_m0, cand_t1)
        accept = fit_mask & ok & ~converged & (cand_cost <= cost)
        rel = np.abs(cost - cand_cost) / np.maximum(cost, 1e-300)
        converged |= accept & (rel < rel_tol)
        m0 = np.where(accept, cand_m0, m0)
        t1 = np.where(accept, cand_t1, t1)
        cost = np.where(accept, cand_cost, cost)
        lam = np.where(accept, lam * 0.5, lam * 4.0)
        converged |= fit_mask & (cost <= (y ** 2).sum(axis=0) * 1e-28)
        if bool(np.all(converged | ~fit_mask)):
            break

    valid = fit_mask & converged & (t1 > 0) & (m0 > 0)
    # non-converged voxels keep the two-point estimate but stay flagged
    t1 = np.where(fit_mask & ~converged, init.t1_ms, t1)
    m0 = np.where(fit_mask & ~converged, init.m0, m0)
    return T1Map(t1_ms=np.where(fit_mask, t1, 0.0), valid=valid,
                 m0=np.where(fit_mask, m0, 0.0))


def delta_t1(t1_now: T1Map, t1_pre: T1Map) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise T1 change in ms; validity is the AND of both inputs."""
    if t1_now.t1_ms.shape != t1_pre.t1_ms.shape:
        raise ValueError("map dimensions must match")
    valid = t1_now.valid & t1_pre.valid
    d = np.where(valid, t1_now.t1_ms - t1_pre.t1_ms, 0.0)
    return d, valid


def afi_b1_map(s1: np.ndarray, s2: np.ndarray, tr1_ms: float, tr2_ms: float,
               fa_nominal_deg: float, clamp_margin: float = 0.05) -> B1Map:
    """Actual-flip-angle B1 map from the dual-TR signal ratio.

    cos(FA) = (r n - 1) / (n - r), n = TR2/TR1, r = |S2|/|S1| clamped into
    its physical domain (1/n, 1).  Ratios farther than ``clamp_margin``
    outside that interval mark the voxel invalid.
    """
    if not tr2_ms > tr1_ms > 0:
        raise ValueError("need tr2_ms > tr1_ms > 0")
    n = tr2_ms / tr1_ms
    mag1 = np.abs(np.asarray(s1, dtype=np.complex128))
    mag2 = np.abs(np.asarray(s2, dtype=np.complex128))
    if mag1.shape != mag2.shape:
        raise ValueError("image dimensions must match")

    valid = mag1 > 0
    r = np.ones(mag1.shape)
    np.divide(mag2, mag1, out=r, where=valid)
    valid &= (r > 1.0 / n - clamp_margin) & (r < 1.0 + clamp_margin)
    tiny = 1e-12
    r = np.clip(r, 1.0 / n + tiny, 1.0 - tiny)
    cos_fa = (r * n - 1.0) / (n - r)
    fa = np.rad2deg(np.arccos(np.clip(cos_fa, -1.0, 1.0)))
    scale = np.where(valid, fa / fa_nominal_deg, 0.0)
    valid &= scale > 0
    return B1Map(scale=scale, valid=valid)


def cem43_dose(dt_series, baseline_temp_degc: float, frame_dt_s: float) -> np.ndarray:
    """Cumulative equivalent minutes at 43 degC (Sapareto-Dewey).

    CEM43 = sum over frames of (dt/60) * R^(43 - T), with R = 0.5 above
    43 degC and 0.25 below.
    """
    dose = None
    for frame in dt_series:
        dt = frame.dt if isinstance(frame, TemperatureMap) else np.asarray(frame)
        t = baseline_temp_degc + dt
        r = np.where(t >= 43.0, 0.5, 0.25)
        inc = (frame_dt_s / 60.0) * r ** (43.0 - t)
        dose = inc if dose is None else dose + inc
    if dose is None:
        raise ValueError("empty temperature series")
    return dose
