"""Command-line entry points.

    mrtherm simulate  --config c.cfg --out session.mrts
    mrtherm train-acc --session session.mrts --out acc.mrts [--no-hr]
    mrtherm train-proc --session session.mrts --out proc.mrts
    mrtherm recon     --session s.mrts --mode cascaded_hr --weights-acc a.mrts
                      --weights-proc p.mrts --out maps.mrts
    mrtherm compare   --session s.mrts --out-dir reports --weights-acc-hr ...
    mrtherm serve     --config c.cfg [--port N] [--max-frames N]

``MRTHERM_PORT`` overrides the configured service port.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import container
from .config import ConfigError, build_scene, load_config
from .pipeline import ALL_METHODS, ComparisonConfig, run_comparison_study, run_session
from .sim import generate_session


def _train_cfg(cfg, factory, **overrides):
    from .nn import training
    kw = dict(base_channels=cfg["base_channels"], kernel=cfg["kernel"],
              augment_rot90=cfg["augment_rot90"], t1_max_ms=cfg["t1_max_ms"],
              dtype=cfg["dtype"], seed=cfg["seed"])
    for key in ("learning_rate", "batch_size", "epochs", "max_steps"):
        if cfg[key] is not None:
            kw[key] = cfg[key]
    kw.update(overrides)
    return factory(**kw)


def _write_loss_csv(path, history):
    lines = ["step,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(history)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_simulate(args):
    cfg = load_config(args.config)
    phantom, proto, params = build_scene(cfg)
    ds = generate_session(phantom, proto, params, cfg["n_dynamics"],
                          seed=cfg["seed"])
    container.save_session(args.out, ds)
    print(f"wrote session with {ds.n_dynamics} dynamics to {args.out}")


def cmd_train_acc(args):
    from .nn import accnet_config, train_recon_net

    cfg = load_config(args.config)
    ds = container.load_session(args.session)
    tcfg = _train_cfg(cfg, accnet_config, use_hr_prior=not args.no_hr)
    ckpt_dir = args.checkpoint_dir

    def on_epoch(net, epoch, history):
        if ckpt_dir:
            os.makedirs(ckpt_dir, exist_ok=True)
            container.save_weights(
                os.path.join(ckpt_dir, f"epoch{epoch:03d}.mrts"), net)

    net, history = train_recon_net(ds, tcfg, on_epoch=on_epoch)
    container.save_weights(args.out, net)
    _write_loss_csv(args.loss_csv or args.out + ".loss.csv", history)
    print(f"trained {len(history)} steps; final loss {history[-1]:.6g}")


def cmd_train_proc(args):
    from .nn import procnet_config, train_t1_net

    cfg = load_config(args.config)
    ds = container.load_session(args.session)
    tcfg = _train_cfg(cfg, procnet_config)
    ckpt_dir = args.checkpoint_dir

    def on_epoch(net, epoch, history):
        if ckpt_dir:
            os.makedirs(ckpt_dir, exist_ok=True)
            container.save_weights(
                os.path.join(ckpt_dir, f"epoch{epoch:03d}.mrts"), net)

    net, history = train_t1_net(ds, tcfg, on_epoch=on_epoch)
    container.save_weights(args.out, net)
    _write_loss_csv(args.loss_csv or args.out + ".loss.csv", history)
    print(f"trained {len(history)} steps; final loss {history[-1]:.6g}")


def _load_nets(args):
    nets = {}
    if getattr(args, "weights_acc", None):
        key = "acc_nohr" if getattr(args, "no_hr", False) else "acc_hr"
        nets[key] = container.load_weights(args.weights_acc)
    for key, path in (("acc_hr", getattr(args, "weights_acc_hr", None)),
                      ("acc_nohr", getattr(args, "weights_acc_nohr", None)),
                      ("proc", getattr(args, "weights_proc", None))):
        if path:
            nets[key] = container.load_weights(path)
    return nets


def cmd_recon(args):
    cfg = load_config(args.config)
    ds = container.load_session(args.session)
    nets = _load_nets(args)
    frames = run_session(ds, args.mode, nets, te_indices=cfg["echoes"],
                         t1_max_ms=cfg["t1_max_ms"])
    arrays = {}
    lat_lines = ["frame,stage,seconds"]
    for fr in frames:
        arrays[f"dt1/t{fr.t_index:04d}"] = fr.dt1.astype(np.float32)
        for l, tm in fr.dt.items():
            arrays[f"dt/te{l}/t{fr.t_index:04d}"] = tm.dt.astype(np.float32)
        for stage, sec in fr.latency_s.items():
            lat_lines.append(f"{fr.t_index},{stage},{sec:.6f}")
    container.save_arrays(args.out, arrays)
    log_path = args.latency_log or args.out + ".latency.csv"
    with open(log_path, "w") as f:
        f.write("\n".join(lat_lines) + "\n")
    print(f"reconstructed {len(frames)} frames with {args.mode} -> {args.out}")


def cmd_compare(args):
    cfg = load_config(args.config)
    ccfg = ComparisonConfig(
        methods=cfg["methods"] or ALL_METHODS,
        session_path=args.session,
        weight_paths={k: v for k, v in (
            ("acc_hr", args.weights_acc_hr),
            ("acc_nohr", args.weights_acc_nohr),
            ("proc", args.weights_proc)) if v},
        output_dir=args.out_dir,
        rois=(cfg["roi"],) if cfg["roi"] else (),
        echoes=cfg["echoes"],
        slope_roi=cfg["slope_roi"],
        t1_max_ms=cfg["t1_max_ms"])
    summary = run_comparison_study(ccfg)
    print(f"wrote reports to {args.out_dir}")
    for method, agg in summary["methods"].items():
        ssim = agg.get("dt_ssim_mean")
        print(f"  {method}: dt ssim {ssim:.4f}" if ssim is not None
              else f"  {method}: (no temperature map)")


def cmd_serve(args):
    import asyncio

    from .service import FrameWorker, SessionService

    cfg = load_config(args.config)
    phantom, proto, params = build_scene(cfg)
    nets = _load_nets(args)
    mode = args.mode or cfg["serve_mode"]
    worker = FrameWorker(phantom, proto, params, mode=mode, nets=nets,
                         baseline_temp_degc=cfg["baseline_temp_degc"],
                         seed=cfg["seed"])
    period = args.frame_period if args.frame_period is not None \
        else cfg["frame_period_s"]
    service = SessionService(worker, frame_period_s=period,
                             max_frames=args.max_frames)
    port = int(os.environ.get("MRTHERM_PORT", args.port or cfg["port"]))
    host = args.host or cfg["host"]
    print(f"serving on ws://{host}:{port} (mode {mode}, "
          f"{period:.3g} s/frame)", flush=True)
    asyncio.run(service.run(host, port))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mrtherm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a session dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-acc", help="train the reconstruction net")
    p.add_argument("--config")
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-hr", action="store_true",
                   help="train the 2-channel variant without the prior")
    p.add_argument("--loss-csv")
    p.add_argument("--checkpoint-dir")
    p.set_defaults(func=cmd_train_acc)

    p = sub.add_parser("train-proc", help="train the T1 net")
    p.add_argument("--config")
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--checkpoint-dir")
    p.set_defaults(func=cmd_train_proc)

    p = sub.add_parser("recon", help="reconstruct a session with one method")
    p.add_argument("--config")
    p.add_argument("--session", required=True)
    p.add_argument("--mode", required=True, choices=ALL_METHODS)
    p.add_argument("--weights-acc")
    p.add_argument("--weights-acc-hr")
    p.add_argument("--weights-acc-nohr")
    p.add_argument("--weights-proc")
    p.add_argument("--no-hr", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--latency-log")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("compare", help="run the six-method comparison study")
    p.add_argument("--config")
    p.add_argument("--session", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--weights-acc-hr")
    p.add_argument("--weights-acc-nohr")
    p.add_argument("--weights-proc")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="run the live steerable session service")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--mode", choices=("full", "zerofill", "keyhole",
                                      "cascaded_hr", "cascaded_nohr"))
    p.add_argument("--frame-period", type=float)
    p.add_argument("--max-frames", type=int)
    p.add_argument("--weights-acc-hr")
    p.add_argument("--weights-acc-nohr")
    p.add_argument("--weights-proc")
    p.set_defaults(func=cmd_serve)

    args = ap.parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, container.ContainerError, ValueError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
