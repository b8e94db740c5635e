"""Session reconstruction, the six-method comparison study, and timing.

Method names:

* ``full_fit``      fully sampled + per-voxel curve fitting (the reference)
* ``keyhole_proc``  keyhole reconstruction + T1 net
* ``zerofill_proc`` zero-filled reconstruction + T1 net
* ``cascaded_hr``   reconstruction net with pretreatment prior + T1 net
* ``cascaded_nohr`` reconstruction net without the prior + T1 net
* ``full_proc``     fully sampled + T1 net (no temperature map, like the
  study it mirrors)

Temperature maps always use the fully sampled pretreatment frame as the
phase reference; each method contributes its own treatment-frame phase.
T1-change maps subtract one common pretreatment two-angle fit.  Every map
is also compared against the simulator's ground truth in separate columns,
since unlike a scanner the simulator knows it.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kspace import ifft2c, keyhole_recon
from .metrics import bland_altman, linear_fit, nmse, roi_stats, ssim
from .nn.training import infer_recon_net, infer_t1_net, t1_inputs
from .thermometry import TemperatureMap, curve_fit_t1, prf_delta_t

ALL_METHODS = ("full_fit", "keyhole_proc", "zerofill_proc", "cascaded_hr",
               "cascaded_nohr", "full_proc")
# methods whose temperature map is reported (the reference study skips the
# fully-sampled + T1-net combination for temperature)
DT_METHODS = ("full_fit", "keyhole_proc", "zerofill_proc", "cascaded_hr",
              "cascaded_nohr")
STAGES = ("recon", "acc", "proc", "prf")

_NEEDED_NETS = {
    "keyhole_proc": ("proc",),
    "zerofill_proc": ("proc",),
    "full_proc": ("proc",),
    "cascaded_hr": ("acc_hr", "proc"),
    "cascaded_nohr": ("acc_nohr", "proc"),
}


@dataclass
class FrameMaps:
    t_index: int
    method: str
    dt: dict                      # te index -> TemperatureMap
    dt1: np.ndarray
    dt1_valid: np.ndarray
    latency_s: dict               # stage -> seconds


@dataclass
class ComparisonConfig:
    methods: tuple = ALL_METHODS
    session_path: Optional[str] = None
    weight_paths: dict = field(default_factory=dict)   # acc_hr/acc_nohr/proc
    output_dir: str = "reports"
    rois: tuple = ()              # (x, y, w, h) rectangles
    echoes: Optional[tuple] = None   # te indices for temperature maps
    slope_roi: Optional[tuple] = None
    frames: Optional[tuple] = None   # restrict to these dynamics
    t1_max_ms: float = 5000.0

    def __post_init__(self):
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if "full_fit" not in self.methods:
            raise ValueError("full_fit is the reference method and cannot be "
                             "dropped from the study")


def _required_nets(methods):
    need = set()
    for m in methods:
        need.update(_NEEDED_NETS.get(m, ()))
    return need


def pretreat_t1_baseline(session):
    """Pretreatment T1 from the fully sampled two-angle data (curve fit)."""
    pre1, pre2, _, fa1_eff, fa2_eff, _, subject = t1_inputs(session)
    fit = curve_fit_t1([pre1, pre2], [fa1_eff, fa2_eff], session.params.tr_ms)
    return fit, subject


def reconstruct_frame(session, t: int, method: str, nets, te_indices):
    """Per-method complex treatment images for the requested echoes.

    Returns (images dict te->complex image, stage latency dict).
    """
    lat = {s: 0.0 for s in STAGES}
    imgs = {}
    p = session.params
    for l in te_indices:
        prior_k = session.pretreat_full_k[2][l]
        if method in ("full_fit", "full_proc"):
            t0 = time.perf_counter()
            imgs[l] = ifft2c(session.treat_full_k[t][l])
            lat["recon"] += time.perf_counter() - t0
        elif method == "keyhole_proc":
            t0 = time.perf_counter()
            imgs[l] = keyhole_recon(session.treat_k[t][l], prior_k, session.mask)
            lat["recon"] += time.perf_counter() - t0
        elif method == "zerofill_proc":
            t0 = time.perf_counter()
            imgs[l] = ifft2c(session.treat_k[t][l])
            lat["recon"] += time.perf_counter() - t0
        elif method in ("cascaded_hr", "cascaded_nohr"):
            t0 = time.perf_counter()
            zf = ifft2c(session.treat_k[t][l])
            lat["recon"] += time.perf_counter() - t0
            net = nets["acc_hr" if method == "cascaded_hr" else "acc_nohr"]
            prior = np.abs(ifft2c(prior_k)) if method == "cascaded_hr" else None
            t0 = time.perf_counter()
            imgs[l] = infer_recon_net(net, zf, prior)
            lat["acc"] += time.perf_counter() - t0
        else:
            raise ValueError(f"unknown method {method!r}")
    return imgs, lat


def run_session(session, method: str, nets=None, te_indices=None,
                t1_max_ms: float = 5000.0, frames=None):
    """Stream a session through one method; maps plus per-stage latency."""
    nets = nets or {}
    missing = [n for n in _required_nets([method]) if n not in nets]
    if missing:
        raise ValueError(f"method {method!r} needs trained weights: {missing}")
    p = session.params
    te_indices = tuple(te_indices) if te_indices is not None \
        else tuple(range(session.n_echoes))
    if 0 not in te_indices:
        te_indices = (0,) + te_indices      # T1 mapping reads the first echo

    pre_fit, subject = pretreat_t1_baseline(session)
    pre1, _, b1_scale, fa1_eff, fa2_eff, _, _ = t1_inputs(session)
    pre_imgs = {l: ifft2c(session.pretreat_full_k[2][l]) for l in te_indices}

    results = []
    frame_iter = range(session.n_dynamics) if frames is None else frames
    for t in frame_iter:
        imgs, lat = reconstruct_frame(session, t, method, nets, te_indices)

        t0 = time.perf_counter()
        mag2_now = np.abs(imgs[0])
        if method == "full_fit":
            fit = curve_fit_t1([pre1, mag2_now], [fa1_eff, fa2_eff], p.tr_ms)
        else:
            fit = infer_t1_net(nets["proc"], mag2_now, pre1, b1_scale,
                               t1_max_ms=t1_max_ms, subject=subject)
        lat["proc"] += time.perf_counter() - t0
        dt1_valid = fit.valid & pre_fit.valid & subject
        dt1 = np.where(dt1_valid, fit.t1_ms - pre_fit.t1_ms, 0.0)

        dt_maps = {}
        if method in DT_METHODS:
            t0 = time.perf_counter()
            for l in te_indices:
                m = prf_delta_t(pre_imgs[l], imgs[l], p.te_ms[l], p)
                m.valid &= subject
                m.dt = np.where(m.valid, m.dt, 0.0)
                m.t_index = t
                dt_maps[l] = m
            lat["prf"] += time.perf_counter() - t0

        results.append(FrameMaps(t_index=t, method=method, dt=dt_maps,
                                 dt1=dt1, dt1_valid=dt1_valid, latency_s=lat))
    return results


def ground_truth_maps(session, te_indices):
    """Simulator truth in the same FrameMaps form (for oracle columns)."""
    out = []
    base_t1 = session.ground_truth_t1[0]
    subject = session.subject()
    for t in range(session.n_dynamics):
        dt = {l: TemperatureMap(
            dt=np.where(subject, session.ground_truth_dt[t], 0.0),
            valid=subject, te_ms=session.params.te_ms[l], t_index=t)
            for l in te_indices}
        dt1 = np.where(subject, session.ground_truth_t1[t] - base_t1, 0.0)
        out.append(FrameMaps(t_index=t, method="truth", dt=dt, dt1=dt1,
                             dt1_valid=subject, latency_s={}))
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.9g}"


def _write_atomic(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _map_metrics(x, x_valid, ref, ref_valid, subject):
    mask = x_valid & ref_valid & subject
    x = np.where(mask, x, 0.0)
    ref = np.where(mask, ref, 0.0)
    rng_ = float(np.abs(ref[mask]).max()) if mask.any() else 0.0
    row = {"nmse": None, "ssim": None, "bias": None, "loa": None,
           "dynamic_range": rng_ if rng_ > 0 else None}
    if mask.sum() >= 2 and rng_ > 0:
        row["nmse"] = nmse(x, ref, mask)
        row["ssim"] = ssim(x, ref, rng_)
        bias, loa = bland_altman(x, ref, mask)
        row["bias"], row["loa"] = bias, loa
    return row


def run_comparison_study(cfg: ComparisonConfig, session=None, nets=None):
    """Run every configured method over the session and write report files.

    Returns the summary dict.  ``session`` and ``nets`` may be passed
    directly; otherwise they are loaded from the configured paths.
    """
    from . import container

    if session is None:
        if not cfg.session_path:
            raise ValueError("no session given and no session_path configured")
        session = container.load_session(cfg.session_path)
    if nets is None:
        nets = {}
        for name in _required_nets(cfg.methods):
            if name not in cfg.weight_paths:
                raise ValueError(f"missing weights for variant {name!r}")
            nets[name] = container.load_weights(cfg.weight_paths[name])
    else:
        missing = [n for n in _required_nets(cfg.methods) if n not in nets]
        if missing:
            raise ValueError(f"missing weights for variant {missing[0]!r}")

    te_indices = tuple(cfg.echoes) if cfg.echoes is not None \
        else tuple(range(session.n_echoes))
    if 0 not in te_indices:
        te_indices = (0,) + te_indices
    headline = te_indices[-1]

    by_method = {}
    latency_rows = []
    for method in cfg.methods:
        frames = run_session(session, method, nets, te_indices,
                             cfg.t1_max_ms, frames=cfg.frames)
        by_method[method] = frames
        for fr in frames:
            for stage in STAGES:
                latency_rows.append((fr.t_index, method, stage,
                                     fr.latency_s.get(stage, 0.0)))

    truth = ground_truth_maps(session, te_indices)
    subject = session.subject()
    ref_frames = by_method["full_fit"]
    frame_ids = [fr.t_index for fr in ref_frames]

    header = ("frame,method,kind,te_ms,nmse,ssim,bias,loa,dynamic_range,"
              "nmse_truth,ssim_truth")
    lines = [header]
    stats = {m: {"dt_ssim": [], "dt_nmse": [], "dt1_ssim": [], "dt1_nmse": []}
             for m in cfg.methods}
    for i, fi in enumerate(frame_ids):
        ref = ref_frames[i]
        tr = truth[fi]
        for method in cfg.methods:
            fr = by_method[method][i]
            row = _map_metrics(fr.dt1, fr.dt1_valid, ref.dt1, ref.dt1_valid,
                               subject)
            tr_row = _map_metrics(fr.dt1, fr.dt1_valid, tr.dt1, tr.dt1_valid,
                                  subject)
            lines.append(",".join([
                str(fi), method, "dt1", _fmt(session.params.te_ms[0]),
                _fmt(row["nmse"]), _fmt(row["ssim"]), _fmt(row["bias"]),
                _fmt(row["loa"]), _fmt(row["dynamic_range"]),
                _fmt(tr_row["nmse"]), _fmt(tr_row["ssim"])]))
            if row["ssim"] is not None:
                stats[method]["dt1_ssim"].append(row["ssim"])
                stats[method]["dt1_nmse"].append(row["nmse"])
            if not fr.dt:
                continue
            for l in te_indices:
                row = _map_metrics(fr.dt[l].dt, fr.dt[l].valid,
                                   ref.dt[l].dt, ref.dt[l].valid, subject)
                tr_row = _map_metrics(fr.dt[l].dt, fr.dt[l].valid,
                                      tr.dt[l].dt, tr.dt[l].valid, subject)
                lines.append(",".join([
                    str(fi), method, "dt", _fmt(session.params.te_ms[l]),
                    _fmt(row["nmse"]), _fmt(row["ssim"]), _fmt(row["bias"]),
                    _fmt(row["loa"]), _fmt(row["dynamic_range"]),
                    _fmt(tr_row["nmse"]), _fmt(tr_row["ssim"])]))
                if l == headline and row["ssim"] is not None:
                    stats[method]["dt_ssim"].append(row["ssim"])
                    stats[method]["dt_nmse"].append(row["nmse"])

    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_atomic(os.path.join(cfg.output_dir, "frames.csv"),
                  "\n".join(lines) + "\n")

    roi_lines = ["frame,method,kind,roi,mean,max"]
    for r_i, roi in enumerate(cfg.rois):
        for method in cfg.methods:
            frames = by_method[method]
            dt1_series = [fr.dt1 for fr in frames]
            for fi, (mean, mx) in zip(frame_ids, roi_stats(dt1_series, roi)):
                roi_lines.append(f"{fi},{method},dt1,{r_i},{_fmt(mean)},{_fmt(mx)}")
            if frames[0].dt:
                dt_series = [fr.dt[headline].dt for fr in frames]
                for fi, (mean, mx) in zip(frame_ids, roi_stats(dt_series, roi)):
                    roi_lines.append(
                        f"{fi},{method},dt,{r_i},{_fmt(mean)},{_fmt(mx)}")
    _write_atomic(os.path.join(cfg.output_dir, "roi.csv"),
                  "\n".join(roi_lines) + "\n")

    lat_lines = ["frame,method,stage,seconds"]
    for t, method, stage, sec in latency_rows:
        lat_lines.append(f"{t},{method},{stage},{sec:.6f}")
    _write_atomic(os.path.join(cfg.output_dir, "latency.csv"),
                  "\n".join(lat_lines) + "\n")

    summary = {"methods": {}, "acquisition": timing_report(
        latency_rows, session.params)}
    for method in cfg.methods:
        agg = {}
        for key, vals in stats[method].items():
            if vals:
                agg[key + "_mean"] = float(np.mean(vals))
        slope = _method_slope(by_method, method, cfg, subject)
        if slope is not None:
            agg["dt1_vs_dt_slope"], agg["dt1_vs_dt_r2"] = slope
        summary["methods"][method] = agg
    _write_atomic(os.path.join(cfg.output_dir, "summary.json"),
                  json.dumps(_round_floats(summary), indent=2, sort_keys=True)
                  + "\n")
    return summary


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


def _method_slope(by_method, method, cfg, subject):
    """T1-change against temperature-change fit inside the slope ROI."""
    frames = by_method[method]
    dt_frames = frames if frames[0].dt else by_method["full_fit"]
    roi = cfg.slope_roi or (cfg.rois[0] if cfg.rois else None)
    if roi is None:
        return None
    x0, y0, w, h = (int(v) for v in roi)
    sel = np.zeros_like(subject)
    sel[y0:y0 + h, x0:x0 + w] = True
    headline = max(dt_frames[0].dt)
    xs, ys = [], []
    for fr, dfr in zip(frames, dt_frames):
        mask = fr.dt1_valid & dfr.dt[headline].valid & subject & sel
        if mask.any():
            ys.append(fr.dt1[mask])
            xs.append(dfr.dt[headline].dt[mask])
    if not xs:
        return None
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if x.size < 2 or x.var() == 0:
        return None
    return linear_fit(y, x)


def timing_report(latency_rows, params) -> dict:
    """Per-stage latency quantiles plus the acquisition-time arithmetic."""
    report = {
        "full_scan_s": params.tr_ms * params.matrix[0] / 1000.0,
        "undersampled_scan_s": params.tr_ms * params.n_keep / 1000.0,
        "stages_ms": {},
    }
    if latency_rows:
        by_stage = {}
        for row in latency_rows:
            t, stage, sec = row[0], row[-2], row[-1]
            by_stage.setdefault(stage, []).append(sec * 1000.0)
        for stage, vals in sorted(by_stage.items()):
            v = np.asarray(vals)
            report["stages_ms"][stage] = {
                "median": float(np.median(v)),
                "p95": float(np.percentile(v, 95)),
            }
    return report
