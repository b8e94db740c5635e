"""Patch tiling with an exact inverse.

Inference path: symmetric zero-pad the image to a multiple of the patch
size, tile without overlap, and merge by reassembling and cropping the pad,
so merge(split(x)) == x exactly.  The training path additionally produces a
denser 50%-overlap tiling of the same padded grid (augmentation only; it has
no inverse).
"""

from __future__ import annotations

import numpy as np


def _pad_sym(img, patch):
    h, w = img.shape
    ph = (-h) % patch[0]
    pw = (-w) % patch[1]
    pads = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2))
    return np.pad(img, pads), pads


def patch_split(img: np.ndarray, patch=(32, 32)) -> np.ndarray:
    """Non-overlapping tiles [M, p, q] of the symmetrically padded image."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected 2D image, got shape {img.shape}")
    if min(patch) < 1:
        raise ValueError("patch sides must be >= 1")
    padded, _ = _pad_sym(img, patch)
    gh = padded.shape[0] // patch[0]
    gw = padded.shape[1] // patch[1]
    return (padded.reshape(gh, patch[0], gw, patch[1])
            .transpose(0, 2, 1, 3)
            .reshape(gh * gw, patch[0], patch[1]))


def patch_merge(patches: np.ndarray, shape: tuple) -> np.ndarray:
    """Inverse of :func:`patch_split` for an original image of ``shape``."""
    patches = np.asarray(patches)
    if patches.ndim != 3:
        raise ValueError(f"expected [M, p, q] patches, got {patches.shape}")
    m, p, q = patches.shape
    h, w = shape
    gh = -(-h // p)
    gw = -(-w // q)
    if gh * gw != m:
        raise ValueError(f"{m} patches cannot tile a {h}x{w} image")
    padded = (patches.reshape(gh, gw, p, q)
              .transpose(0, 2, 1, 3)
              .reshape(gh * p, gw * q))
    ph = gh * p - h
    pw = gw * q - w
    return padded[ph // 2:ph // 2 + h, pw // 2:pw // 2 + w]


def patch_split_overlapping(img: np.ndarray, patch=(32, 32)) -> np.ndarray:
    """50%-overlap tiles of the padded grid (training augmentation)."""
    img = np.asarray(img)
    padded, _ = _pad_sym(img, patch)
    sh, sw = max(patch[0] // 2, 1), max(patch[1] // 2, 1)
    out = []
    for top in range(0, padded.shape[0] - patch[0] + 1, sh):
        for left in range(0, padded.shape[1] - patch[1] + 1, sw):
            out.append(padded[top:top + patch[0], left:left + patch[1]])
    return np.stack(out)
