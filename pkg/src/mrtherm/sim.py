"""Spoiled gradient-echo forward model and dynamic session generation.

Sign convention: heating lowers the water proton resonance frequency, so a
treatment voxel accrues phase ``baseline - prf_rad_per_degc * dT``.  The
temperature estimator divides the phase of ``pre * conj(treat)`` by the same
positive coefficient, which makes heating come out positive.  Fat voxels keep
their baseline phase (PRF-inactive); their temperature is only visible
through T1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kspace import fft2c, make_center_mask, subject_mask, SamplingMask
from .phantom import HeatingProtocol, PhantomSpec, TemperatureField, step_heating

GAMMA_RAD_PER_S_T = 2 * math.pi * 42.577e6  # proton gyromagnetic ratio


@dataclass(frozen=True)
class AcquisitionParams:
    """Sequence and reconstruction constants for one session."""

    tr_ms: float = 50.0
    te_ms: tuple = (3.0, 5.6, 8.2, 10.8, 13.4)
    fa1_deg: float = 10.0
    fa2_deg: float = 35.0
    b0_t: float = 3.0
    gamma_rad_per_s_t: float = GAMMA_RAD_PER_S_T
    alpha_ppm_per_degc: float = 0.01
    matrix: tuple = (112, 112)
    n_keep: int = 16
    noise_snr: float = math.inf       # math.inf = noiseless
    afi_tr1_ms: float = 25.0          # dual-TR B1 mapping
    afi_tr2_ms: float = 125.0
    afi_fa_deg: float = 60.0

    def __post_init__(self):
        if self.tr_ms <= 0:
            raise ValueError("tr_ms must be positive")
        tes = tuple(float(t) for t in self.te_ms)
        if not tes or any(t <= 0 for t in tes) or list(tes) != sorted(tes):
            raise ValueError("te_ms must be positive and ascending")
        if not 0 < self.fa1_deg < self.fa2_deg < 90:
            raise ValueError("need 0 < fa1 < fa2 < 90 degrees")
        if self.alpha_ppm_per_degc == 0:
            raise ValueError("alpha_ppm_per_degc must be nonzero")
        if self.afi_tr2_ms <= self.afi_tr1_ms or self.afi_tr1_ms <= 0:
            raise ValueError("need afi_tr2_ms > afi_tr1_ms > 0")
        if not (len(self.matrix) == 2 and all(int(n) >= 1 for n in self.matrix)):
            raise ValueError("matrix must be two positive sizes")
        if not 1 <= self.n_keep <= self.matrix[0]:
            raise ValueError("n_keep must lie in [1, phase encodes]")
        object.__setattr__(self, "te_ms", tes)
        object.__setattr__(self, "matrix", (int(self.matrix[0]), int(self.matrix[1])))

    def prf_rad_per_degc(self, te_ms: float) -> float:
        """Phase accrued per degC at echo time ``te_ms``."""
        return (self.gamma_rad_per_s_t * self.alpha_ppm_per_degc * 1e-6
                * self.b0_t * te_ms * 1e-3)

    def mask(self) -> SamplingMask:
        return make_center_mask(self.matrix[0], self.n_keep)


def spgr_signal(m0, t1_ms, t2star_ms, fa_deg, tr_ms, te_ms):
    """Steady-state spoiled-GRE magnitude.

    m0 * sin(FA) * (1 - E1) / (1 - E1 cos(FA)) * exp(-TE/T2*),  E1 = exp(-TR/T1)

    Array arguments broadcast; scalars work too.
    """
    t1 = np.asarray(t1_ms, dtype=np.float64)
    t2s = np.asarray(t2star_ms, dtype=np.float64)
    if np.any(t1 <= 0) or np.any(t2s <= 0) or tr_ms <= 0 or te_ms <= 0:
        raise ValueError("t1_ms, t2star_ms, tr_ms, te_ms must be positive")
    fa = np.deg2rad(np.asarray(fa_deg, dtype=np.float64))
    if np.any(fa <= 0) or np.any(fa >= np.pi):
        raise ValueError("flip angle must lie in (0, 180) degrees")
    e1 = np.exp(-tr_ms / t1)
    return (np.asarray(m0, dtype=np.float64) * np.sin(fa) * (1.0 - e1)
            / (1.0 - e1 * np.cos(fa)) * np.exp(-te_ms / t2s))


def _heated_t1(phantom: PhantomSpec, dt: np.ndarray) -> np.ndarray:
    t1 = phantom.t1_ms + phantom.dt1_per_degc * dt
    if np.any(t1[phantom.support] <= 0):
        raise ValueError("heating drove T1 non-positive; unphysical protocol")
    return t1


def _noise_sigma(phantom: PhantomSpec, params: AcquisitionParams) -> float:
    """Per-voxel complex-noise sigma: mean baseline magnitude at TE1/FA2 over SNR."""
    if math.isinf(params.noise_snr):
        return 0.0
    mag = spgr_signal(phantom.m0, phantom.t1_ms, phantom.t2star_ms,
                      params.fa2_deg * phantom.b1(), params.tr_ms, params.te_ms[0])
    mean_mag = mag[phantom.support].mean()
    return float(mean_mag / params.noise_snr)


def synthesize_frame(phantom: PhantomSpec, dt_field: TemperatureField,
                     params: AcquisitionParams, fa_deg: float,
                     rng: Optional[np.random.Generator] = None):
    """Complex images for one dynamic, one per echo time.

    T1 shifts linearly with temperature everywhere; phase shifts with
    temperature on water voxels only.  Complex Gaussian noise at the
    configured SNR is drawn independently per echo when ``rng`` is given.
    """
    if np.asarray(dt_field.dt).shape != phantom.shape:
        raise ValueError("temperature field shape != phantom shape")
    t1 = _heated_t1(phantom, dt_field.dt)
    fa_eff = fa_deg * phantom.b1()
    sigma = _noise_sigma(phantom, params) if rng is not None else 0.0
    water = ~phantom.fat

    frames = []
    for te in params.te_ms:
        mag = spgr_signal(phantom.m0, t1, phantom.t2star_ms, fa_eff,
                          params.tr_ms, te)
        phase = phantom.baseline_phase.copy()
        phase[water] -= params.prf_rad_per_degc(te) * dt_field.dt[water]
        img = mag * np.exp(1j * phase)
        if sigma > 0:
            img = img + sigma * (rng.standard_normal(phantom.shape)
                                 + 1j * rng.standard_normal(phantom.shape))
        frames.append(img.astype(np.complex128))
    return frames


def afi_ratio(fa_deg, n: float):
    """Idealized dual-TR signal ratio r = (1 + n cos a) / (n + cos a)."""
    c = np.cos(np.deg2rad(np.asarray(fa_deg, dtype=np.float64)))
    return (1.0 + n * c) / (n + c)


def synthesize_afi_pair(phantom: PhantomSpec, true_fa_deg, tr1_ms: float,
                        tr2_ms: float, rng: Optional[np.random.Generator] = None,
                        noise_snr: float = math.inf):
    """Dual-TR image pair whose ratio encodes the actual flip angle.

    The pair is generated with the idealized ratio model r = S2/S1 =
    (1 + n cos FA)/(n + cos FA), n = TR2/TR1, so inverting the ratio recovers
    the flip-angle map exactly in the noiseless case.
    """
    if not tr2_ms > tr1_ms > 0:
        raise ValueError("need tr2_ms > tr1_ms > 0")
    n = tr2_ms / tr1_ms
    fa = np.asarray(true_fa_deg, dtype=np.float64)
    base = phantom.m0 * np.sin(np.deg2rad(fa)) * np.exp(1j * phantom.baseline_phase)
    s1 = base.astype(np.complex128)
    s2 = (afi_ratio(fa, n) * base).astype(np.complex128)
    if rng is not None and not math.isinf(noise_snr):
        sigma = float(np.abs(s1[phantom.support]).mean() / noise_snr)
        for s in (s1, s2):
            s += sigma * (rng.standard_normal(phantom.shape)
                          + 1j * rng.standard_normal(phantom.shape))
    return s1, s2


@dataclass
class SessionDataset:
    """One simulated treatment session.

    Pretreatment k-space is fully sampled at both flip angles; treatment
    k-space holds only the masked center rows at the higher flip angle.  The
    fully sampled treatment k-space is kept alongside as training labels and
    as the reference reconstruction of the comparison study.
    """

    params: AcquisitionParams
    pretreat_full_k: dict            # fa index (1|2) -> list per TE of [H, W]
    b1_pair: tuple                   # two complex AFI images
    treat_k: list                    # per t_index: list per TE (masked rows)
    treat_full_k: list               # per t_index: list per TE (fully sampled)
    ground_truth_dt: list            # per t_index: [H, W] degC
    ground_truth_t1: list            # per t_index: [H, W] ms
    mask: SamplingMask
    seed: int = 0

    @property
    def n_dynamics(self) -> int:
        return len(self.treat_k)

    @property
    def n_echoes(self) -> int:
        return len(self.params.te_ms)

    def subject(self) -> np.ndarray:
        """Support mask derived from the pretreatment FA2 TE1 magnitude."""
        from .kspace import ifft2c
        return subject_mask(np.abs(ifft2c(self.pretreat_full_k[2][0])))


def generate_session(phantom: PhantomSpec, proto: HeatingProtocol,
                     params: AcquisitionParams, n_dynamics: int,
                     seed: int = 0) -> SessionDataset:
    """Simulate pretreatment and treatment acquisitions of one session.

    Deterministic for a fixed seed: every frame draws noise from its own
    stream keyed by (seed, stage, t_index).
    """
    if n_dynamics < 1:
        raise ValueError("n_dynamics must be >= 1")
    if phantom.shape != params.matrix:
        raise ValueError(
            f"phantom shape {phantom.shape} != acquisition matrix {params.matrix}")

    noisy = not math.isinf(params.noise_snr)

    def stream(*key):
        return np.random.default_rng((seed,) + key) if noisy else None

    baseline = TemperatureField(dt=np.zeros(phantom.shape), t_index=0)
    pretreat = {}
    for fa_idx, fa in ((1, params.fa1_deg), (2, params.fa2_deg)):
        imgs = synthesize_frame(phantom, baseline, params, fa, stream(0, fa_idx))
        pretreat[fa_idx] = [fft2c(im) for im in imgs]

    fa_map = params.afi_fa_deg * phantom.b1()
    b1_pair = synthesize_afi_pair(phantom, fa_map, params.afi_tr1_ms,
                                  params.afi_tr2_ms, stream(1),
                                  noise_snr=params.noise_snr)

    mask = params.mask()
    treat_k, treat_full_k, gt_dt, gt_t1 = [], [], [], []
    field_ = baseline
    for t in range(n_dynamics):
        if t > 0:
            field_ = step_heating(field_, proto)
        imgs = synthesize_frame(phantom, field_, params, params.fa2_deg,
                                stream(2, t))
        full = [fft2c(im) for im in imgs]
        masked = []
        for k in full:
            km = np.zeros_like(k)
            km[mask.keep] = k[mask.keep]
            masked.append(km)
        treat_full_k.append(full)
        treat_k.append(masked)
        gt_dt.append(field_.dt.copy())
        gt_t1.append(_heated_t1(phantom, field_.dt))

    return SessionDataset(params=params, pretreat_full_k=pretreat,
                          b1_pair=b1_pair, treat_k=treat_k,
                          treat_full_k=treat_full_k, ground_truth_dt=gt_dt,
                          ground_truth_t1=gt_t1, mask=mask, seed=seed)
