"""Quantitative map evaluation: NMSE, SSIM, Bland-Altman, linear fit, ROI stats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    nmse: float
    ssim: float
    bias: float
    loa_half_width: float
    slope: Optional[float] = None
    r_squared: Optional[float] = None
    ssim_dynamic_range: Optional[float] = None


def _masked(x, y, mask):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("arrays must share one shape")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("mask shape mismatch")
    return x[mask], y[mask]


def nmse(x, y, mask=None) -> float:
    """Normalized mean-square error: sum((x-y)^2) / sum(y^2) over the mask."""
    xv, yv = _masked(x, y, mask)
    ref = float((yv ** 2).sum())
    if ref <= 0:
        raise ValueError("reference has zero norm on the mask")
    return float(((xv - yv) ** 2).sum() / ref)


def center_quarter(img: np.ndarray) -> np.ndarray:
    """Centered crop of half the height and half the width."""
    h, w = img.shape
    return img[h // 4:h // 4 + h // 2, w // 4:w // 4 + w // 2]


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_means(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via separable correlation."""
    k = win.shape[0]
    g = win[:, (k - 1) // 2].copy()
    g /= g.sum()
    from numpy.lib.stride_tricks import sliding_window_view
    rows = sliding_window_view(img, k, axis=0)
    tmp = rows @ g
    cols = sliding_window_view(tmp, k, axis=1)
    return cols @ g


def ssim(x, y, dynamic_range: float) -> float:
    """Mean local structural similarity over the center quarter.

    Gaussian 11x11 window (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2,
    C3 = C2/2, with the luminance/contrast/structure exponents all 1.  The
    center crop excludes background influence; local statistics use valid
    windowing, so the crop must be at least the window size.
    """
    if dynamic_range <= 0:
        raise ValueError("dynamic_range must be positive")
    x = center_quarter(np.asarray(x, dtype=np.float64))
    y = center_quarter(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError("images must share one shape")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"center quarter {x.shape} smaller than the {SSIM_WINDOW}px window")

    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _window_means(x, win)
    mu_y = _window_means(y, win)
    xx = _window_means(x * x, win) - mu_x ** 2
    yy = _window_means(y * y, win) - mu_y ** 2
    xy = _window_means(x * y, win) - mu_x * mu_y
    # weighted variances can go slightly negative in float arithmetic
    xx = np.maximum(xx, 0.0)
    yy = np.maximum(yy, 0.0)

    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    c3 = c2 / 2.0
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    con = (2 * np.sqrt(xx) * np.sqrt(yy) + c2) / (xx + yy + c2)
    struct = (xy + c3) / (np.sqrt(xx) * np.sqrt(yy) + c3)
    return float(np.mean(lum * con * struct))


def bland_altman(x, y, mask=None) -> tuple[float, float]:
    """(bias, half-width of the 1.96-sigma limits of agreement) for x - y."""
    xv, yv = _masked(x, y, mask)
    if xv.size < 2:
        raise ValueError("need at least two voxels for agreement limits")
    d = xv - yv
    return float(d.mean()), float(1.96 * d.std())


def linear_fit(dt1, dtemp, mask=None) -> tuple[float, float]:
    """OLS slope of dt1 against dtemp (intercept fitted) and its R^2."""
    yv, xv = _masked(dt1, dtemp, mask)
    if xv.size < 2:
        raise ValueError("need at least two points")
    vx = xv.var()
    if vx <= 0:
        raise ValueError("zero variance in the temperature axis")
    slope = float(np.cov(xv, yv, bias=True)[0, 1] / vx)
    intercept = float(yv.mean() - slope * xv.mean())
    resid = yv - (slope * xv + intercept)
    sst = ((yv - yv.mean()) ** 2).sum()
    r2 = 1.0 if sst == 0 else float(1.0 - (resid ** 2).sum() / sst)
    return slope, r2


def roi_stats(map_series, roi: tuple) -> list[tuple[float, float]]:
    """Per-frame (mean, max) over a rectangular ROI ``(x, y, w, h)``.

    ``x`` is the column of the left edge, ``y`` the row of the top edge.
    """
    x, y, w, h = (int(v) for v in roi)
    out = []
    for frame in map_series:
        arr = np.asarray(frame, dtype=np.float64)
        rows, cols = arr.shape
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > cols or y + h > rows:
            raise ValueError(f"ROI {roi} outside map bounds {arr.shape}")
        patch = arr[y:y + h, x:x + w]
        out.append((float(patch.mean()), float(patch.max())))
    return out
