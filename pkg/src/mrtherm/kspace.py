"""Centered Fourier transforms, Cartesian undersampling, and basic reconstructions.

Conventions used throughout the package:

* images and k-space frames are 2D complex ndarrays ``[n_pe, n_fe]`` where the
  first axis holds phase encodes and the second frequency encodes;
* undersampling removes whole phase-encode rows (axis 0), frequency encodes
  are always fully sampled;
* the FFT pair is unitary (``1/sqrt(N)`` each direction) so image and k-space
  energies match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_complex_2d(a, name="array"):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ValueError(f"{name} contains non-finite entries")
    return a.astype(np.complex128, copy=False)


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered, unitary 2D FFT (image -> k-space)."""
    img = _as_complex_2d(img, "image")
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img), norm="ortho"))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Centered, unitary 2D inverse FFT (k-space -> image)."""
    k = _as_complex_2d(k, "k-space")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k), norm="ortho"))


@dataclass(frozen=True)
class SamplingMask:
    """Phase-encode sampling pattern: ``keep[i]`` is True for acquired rows."""

    keep: np.ndarray

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 1 or keep.size < 1:
            raise ValueError("mask must be a non-empty 1D boolean vector")
        object.__setattr__(self, "keep", keep)

    @property
    def n_total(self) -> int:
        return self.keep.size

    @property
    def n_keep(self) -> int:
        return int(self.keep.sum())

    @property
    def acceleration(self) -> float:
        return self.n_total / self.n_keep


def make_center_mask(n_total: int, n_keep: int) -> SamplingMask:
    """Contiguous centered block of ``n_keep`` phase-encode lines.

    The block always contains the DC row (index ``n_total // 2`` in the
    centered convention).  For even ``n_keep`` the block is asymmetric by one
    line toward the low-index side: ``[n/2 - k/2, n/2 + k/2)``.
    """
    if not 1 <= n_keep <= n_total:
        raise ValueError(f"need 1 <= n_keep <= n_total, got {n_keep}/{n_total}")
    start = n_total // 2 - n_keep // 2
    keep = np.zeros(n_total, dtype=bool)
    keep[start:start + n_keep] = True
    return SamplingMask(keep)


def apply_mask(k: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Zero all phase-encode rows not acquired under ``mask``."""
    k = _as_complex_2d(k, "k-space")
    if mask.n_total != k.shape[0]:
        raise ValueError(
            f"mask length {mask.n_total} != phase encodes {k.shape[0]}")
    out = np.zeros_like(k)
    out[mask.keep] = k[mask.keep]
    return out


def zero_fill_recon(k: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Reconstruct by zero-filling unacquired rows and inverse transforming."""
    return ifft2c(apply_mask(k, mask))


def keyhole_recon(k_dyn: np.ndarray, k_ref: np.ndarray,
                  mask: SamplingMask) -> np.ndarray:
    """Keyhole reconstruction: dynamic center lines, reference periphery.

    ``k_dyn`` supplies the rows acquired under ``mask`` (low spatial
    frequencies of the current frame); every other row is borrowed from the
    fully sampled reference ``k_ref``.
    """
    k_dyn = _as_complex_2d(k_dyn, "dynamic k-space")
    k_ref = _as_complex_2d(k_ref, "reference k-space")
    if k_dyn.shape != k_ref.shape:
        raise ValueError(
            f"shape mismatch: dynamic {k_dyn.shape} vs reference {k_ref.shape}")
    if mask.n_total != k_dyn.shape[0]:
        raise ValueError(
            f"mask length {mask.n_total} != phase encodes {k_dyn.shape[0]}")
    merged = k_ref.copy()
    merged[mask.keep] = k_dyn[mask.keep]
    return ifft2c(merged)


def complex_to_channels(img: np.ndarray) -> np.ndarray:
    """Split a complex image into a real ``[H, W, 2]`` stack (re, im)."""
    img = _as_complex_2d(img, "image")
    return np.stack([img.real, img.imag], axis=-1)


def channels_to_complex(stack: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`complex_to_channels`; requires C == 2."""
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[-1] != 2:
        raise ValueError(
            f"expected [H, W, 2] channel stack, got shape {stack.shape}")
    return stack[..., 0] + 1j * stack[..., 1]


def roemer_combine(coil_imgs, sens, subject=None):
    """Sensitivity-weighted coil combination.

    combined = sum_c conj(sens_c) * img_c / sum_c |sens_c|^2

    Voxels with zero sensitivity norm (inside ``subject`` if given, else
    anywhere) are set to 0 and flagged invalid.

    Returns (combined image, valid mask).
    """
    imgs = [_as_complex_2d(c, f"coil image {i}") for i, c in enumerate(coil_imgs)]
    sens = [_as_complex_2d(s, f"sensitivity {i}") for i, s in enumerate(sens)]
    if len(imgs) != len(sens) or not imgs:
        raise ValueError("need one sensitivity map per coil image")
    shape = imgs[0].shape
    if any(a.shape != shape for a in imgs + sens):
        raise ValueError("coil images and sensitivities must share one shape")

    num = np.zeros(shape, dtype=np.complex128)
    den = np.zeros(shape, dtype=np.float64)
    for img, s in zip(imgs, sens):
        num += np.conj(s) * img
        den += np.abs(s) ** 2

    valid = den > 0
    if subject is not None:
        valid |= ~np.asarray(subject, dtype=bool)
    out = np.zeros(shape, dtype=np.complex128)
    np.divide(num, den, out=out, where=den > 0)
    out[den <= 0] = 0
    return out, valid


def subject_mask(mag: np.ndarray, theta: float = 0.05) -> np.ndarray:
    """Support mask: True where magnitude >= theta * P99(magnitude).

    P99 instead of the max keeps the threshold stable under noise spikes.
    An all-zero image yields an all-false mask.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitude image must be non-negative")
    ref = np.percentile(mag, 99)
    if ref <= 0:
        return np.zeros(mag.shape, dtype=bool)
    return mag >= theta * ref
