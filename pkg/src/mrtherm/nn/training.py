"""Training and inference for the two-stage mapping cascade.

Stage one (the reconstruction net) maps an undersampled complex frame, split
into real/imaginary channels and optionally joined by the fully sampled
pretreatment magnitude, to the fully sampled complex frame.  Stage two (the
T1 net) regresses per-patch T1 maps from the current higher-flip-angle
magnitude, the pretreatment lower-flip-angle magnitude, and the B1 map,
using single-reference VFA T1 as the label.

Inputs are masked to the subject support and scaled by the 99th percentile
of a magnitude channel that is available both at training and at inference
time, so no statistics leak across the train/infer boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..kspace import channels_to_complex, ifft2c, subject_mask
from ..thermometry import T1Map, afi_b1_map, despot1_two_point, srvfa_t1
from .adadelta import Adadelta
from .patches import patch_merge, patch_split, patch_split_overlapping
from .unet import UNet, UNetSpec


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int = 100
    rho: float = 0.95
    epsilon: float = 1e-6
    seed: int = 0
    base_channels: int = 16
    kernel: tuple = (5, 5)
    use_hr_prior: bool = True          # reconstruction-net variant switch
    augment_rot90: bool = False
    patch: tuple = (32, 32)            # T1-net tiling
    t1_max_ms: float = 5000.0          # T1 label normalization
    dtype: str = "float32"
    max_steps: Optional[int] = None
    target_loss_frac: Optional[float] = None   # stop at this fraction of step-0 loss

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def accnet_config(**overrides) -> TrainConfig:
    """Reconstruction-net defaults: Adadelta lr 1e-2, batch 12, 100 epochs."""
    cfg = TrainConfig(learning_rate=1e-2, batch_size=12, epochs=100)
    return replace(cfg, **overrides) if overrides else cfg


def procnet_config(**overrides) -> TrainConfig:
    """T1-net defaults: Adadelta lr 1e-5, batch 200, 100 epochs."""
    cfg = TrainConfig(learning_rate=1e-5, batch_size=200, epochs=100)
    return replace(cfg, **overrides) if overrides else cfg


def _p99(mag, mask):
    vals = mag[mask] if mask is not None and mask.any() else mag.ravel()
    s = float(np.percentile(vals, 99))
    return s if s > 0 else 1.0


def norm_scale_recon(lr_complex, hr_prior_mag, subject) -> float:
    """Scale for reconstruction-net channels: P99 of the prior magnitude if
    available, else of the zero-filled magnitude."""
    ref = hr_prior_mag if hr_prior_mag is not None else np.abs(lr_complex)
    return _p99(ref, subject)


def _recon_sample(lr_complex, hr_prior_mag, subject):
    s = norm_scale_recon(lr_complex, hr_prior_mag, subject)
    chans = [lr_complex.real, lr_complex.imag]
    if hr_prior_mag is not None:
        chans.append(hr_prior_mag)
    x = np.stack([c * subject / s for c in chans], axis=-1)
    return x, s


def recon_training_set(datasets, use_hr_prior: bool, frames=None,
                       te_indices=None):
    """Stack (inputs, labels, loss masks) over sessions, frames and echoes."""
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    xs, ys, ms = [], [], []
    for ds in datasets:
        subject = ds.subject()
        fr = range(ds.n_dynamics) if frames is None else frames
        tes = range(ds.n_echoes) if te_indices is None else te_indices
        for l in tes:
            prior = np.abs(ifft2c(ds.pretreat_full_k[2][l])) if use_hr_prior else None
            for t in fr:
                zf = ifft2c(ds.treat_k[t][l])
                x, s = _recon_sample(zf, prior, subject)
                full = ifft2c(ds.treat_full_k[t][l])
                y = np.stack([full.real * subject / s,
                              full.imag * subject / s], axis=-1)
                xs.append(x)
                ys.append(y)
                ms.append(subject[..., None].astype(np.float64))
    return np.stack(xs), np.stack(ys), np.stack(ms)


def _run_training(net: UNet, x, y, m, cfg: TrainConfig,
                  on_epoch: Optional[Callable] = None):
    """Masked-MSE minimization loop shared by both nets."""
    dtype = np.dtype(cfg.dtype)
    x = x.astype(dtype)
    y = y.astype(dtype)
    m = m.astype(dtype)
    opt = Adadelta(net.params(), cfg.learning_rate, cfg.rho, cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    history = []
    n = x.shape[0]
    done = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb, mb = x[idx], y[idx], m[idx]
            if cfg.augment_rot90:
                k = int(rng.integers(0, 4))
                if k:
                    xb = np.rot90(xb, k, axes=(1, 2)).copy()
                    yb = np.rot90(yb, k, axes=(1, 2)).copy()
                    mb = np.rot90(mb, k, axes=(1, 2)).copy()
            pred = net.forward(xb, train=True)
            diff = (pred - yb) * mb
            denom = float(mb.sum()) * yb.shape[-1]
            if denom == 0:
                continue
            loss = float((diff ** 2).sum() / denom)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at step {len(history)}")
            history.append(loss)
            net.backward(2.0 * diff / denom)
            opt.step(net.grads())
            net.step_count += 1
            if cfg.target_loss_frac is not None and \
                    loss < cfg.target_loss_frac * history[0]:
                done = True
                break
            if cfg.max_steps is not None and len(history) >= cfg.max_steps:
                done = True
                break
        if on_epoch is not None:
            on_epoch(net, epoch, history)
        if done:
            break
    return history


def train_recon_net(datasets, cfg: TrainConfig, frames=None, te_indices=None,
                    on_epoch=None):
    """Train the undersampled-to-full complex reconstruction net.

    Returns (net, per-step loss history).  ``cfg.use_hr_prior`` selects the
    3-channel (with pretreatment magnitude) or 2-channel variant.
    """
    x, y, m = recon_training_set(datasets, cfg.use_hr_prior, frames, te_indices)
    spec = UNetSpec(in_channels=3 if cfg.use_hr_prior else 2, out_channels=2,
                    base_channels=cfg.base_channels, kernel=cfg.kernel)
    net = UNet(spec, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    history = _run_training(net, x, y, m, cfg, on_epoch)
    return net, history


def infer_recon_net(net: UNet, lr_complex, hr_prior_mag=None, subject=None):
    """Reconstruct a full complex frame from an undersampled one."""
    lr_complex = np.asarray(lr_complex, dtype=np.complex128)
    expects_prior = net.spec.in_channels == 3
    if expects_prior and hr_prior_mag is None:
        raise ValueError("this net was built with a prior channel; pass hr_prior_mag")
    if not expects_prior:
        hr_prior_mag = None
    if subject is None:
        ref = hr_prior_mag if hr_prior_mag is not None else np.abs(lr_complex)
        subject = subject_mask(ref)
    x, s = _recon_sample(lr_complex, hr_prior_mag, subject)
    out = net.forward(x[None], train=False)[0]
    return channels_to_complex(out) * s


def t1_inputs(ds, te_index: int = 0):
    """Shared channels for T1 labelling/inference from one session's
    pretreatment data: (pre-FA1 mag, pre-FA2 mag, B1 scale, effective FAs,
    pretreatment fit, subject mask)."""
    p = ds.params
    subject = ds.subject()
    pre1 = np.abs(ifft2c(ds.pretreat_full_k[1][te_index]))
    pre2 = np.abs(ifft2c(ds.pretreat_full_k[2][te_index]))
    b1 = afi_b1_map(ds.b1_pair[0], ds.b1_pair[1], p.afi_tr1_ms, p.afi_tr2_ms,
                    p.afi_fa_deg)
    b1_scale = np.where(b1.valid, b1.scale, 1.0)
    fa1_eff = p.fa1_deg * b1_scale
    fa2_eff = p.fa2_deg * b1_scale
    pre_fit = despot1_two_point(pre1, pre2, fa1_eff, fa2_eff, p.tr_ms)
    return pre1, pre2, b1_scale, fa1_eff, fa2_eff, pre_fit, subject


def srvfa_label(ds, mag_fa2_now, te_index: int = 0, method: str = "invert"):
    """Single-reference VFA T1 label for the current FA2 magnitude."""
    pre1, _, _, fa1_eff, fa2_eff, pre_fit, subject = t1_inputs(ds, te_index)
    lab = srvfa_t1(pre1, mag_fa2_now, fa1_eff, fa2_eff, ds.params.tr_ms,
                   pre_fit.m0, pre_fit.t1_ms, method=method)
    valid = lab.valid & pre_fit.valid & subject
    return T1Map(t1_ms=np.where(valid, lab.t1_ms, 0.0), valid=valid)


def t1_training_set(datasets, cfg: TrainConfig, frames=None):
    """Patchwise (inputs, labels, masks) with 50% overlap tiling."""
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    xs, ys, ms = [], [], []
    for ds in datasets:
        pre1, _, b1_scale, _, _, _, subject = t1_inputs(ds)
        s = _p99(pre1, subject)
        fr = range(ds.n_dynamics) if frames is None else frames
        for t in fr:
            mag2 = np.abs(ifft2c(ds.treat_full_k[t][0]))
            lab = srvfa_label(ds, mag2)
            chans = [mag2 * subject / s, pre1 * subject / s,
                     b1_scale * subject]
            label = lab.t1_ms / cfg.t1_max_ms
            mask = (lab.valid & subject).astype(np.float64)
            tiles = [patch_split_overlapping(c, cfg.patch) for c in chans]
            lab_t = patch_split_overlapping(label, cfg.patch)
            msk_t = patch_split_overlapping(mask, cfg.patch)
            for i in range(lab_t.shape[0]):
                if msk_t[i].sum() == 0:
                    continue
                xs.append(np.stack([tl[i] for tl in tiles], axis=-1))
                ys.append(lab_t[i][..., None])
                ms.append(msk_t[i][..., None])
    return np.stack(xs), np.stack(ys), np.stack(ms)


def train_t1_net(datasets, cfg: TrainConfig, frames=None, on_epoch=None):
    """Train the patchwise T1 regression net against srVFA labels."""
    x, y, m = t1_training_set(datasets, cfg, frames)
    spec = UNetSpec(in_channels=3, out_channels=1,
                    base_channels=cfg.base_channels, kernel=cfg.kernel)
    net = UNet(spec, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    history = _run_training(net, x, y, m, cfg, on_epoch)
    return net, history


def infer_t1_net(net: UNet, hr_mag_fa2, pre_mag_fa1, b1_scale,
                 t1_max_ms: float = 5000.0, patch=(32, 32),
                 subject=None) -> T1Map:
    """Patch-split, forward, merge, denormalize; floor at 1 ms."""
    hr_mag_fa2 = np.asarray(hr_mag_fa2, dtype=np.float64)
    pre_mag_fa1 = np.asarray(pre_mag_fa1, dtype=np.float64)
    b1_scale = np.asarray(b1_scale, dtype=np.float64)
    if subject is None:
        subject = subject_mask(pre_mag_fa1)
    s = _p99(pre_mag_fa1, subject)
    chans = [hr_mag_fa2 * subject / s, pre_mag_fa1 * subject / s,
             b1_scale * subject]
    tiles = np.stack([patch_split(c, patch) for c in chans], axis=-1)
    out = net.forward(tiles, train=False)[..., 0]
    merged = patch_merge(out, hr_mag_fa2.shape)
    t1 = np.maximum(merged * t1_max_ms, 1.0)
    return T1Map(t1_ms=t1, valid=np.asarray(subject, dtype=bool))
