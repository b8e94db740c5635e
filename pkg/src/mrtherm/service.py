"""Live steerable session service.

Streams one JSON frame message per simulated dynamic over a WebSocket and
accepts steering commands that take effect at the next frame boundary:

    client -> server:
        {"type": "sonicate", "on": bool, "focus": [x, y], "power": float}
        {"type": "reset"}
        {"type": "set_roi", "rect": [x, y, w, h]}
    server -> client (one per dynamic):
        {"type": "frame", "t": int, "dt_map": <base64 f32 rows>,
         "dt1_map": <base64 f32 rows>, "roi": {"mean": f, "max": f},
         "dose_max": f, "latency_ms": {"recon": f, "acc": f, "proc": f,
         "prf": f}}

On connect the server sends a single
``{"type": "hello", "shape": [H, W], "frame_period_s": f, "roi": [...]}``
so the console knows how to lay the row-major f32 payload out.  Wire
coordinates are ``[x, y]`` = (column, row).

The frame worker is the only mutator of simulation state; per-client sender
queues are bounded and drop the oldest frame first, so a lagging consumer
never stalls the loop.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import time
from typing import Optional

import numpy as np

from .kspace import fft2c, ifft2c, keyhole_recon, subject_mask
from .nn.training import infer_recon_net, infer_t1_net
from .phantom import HeatingProtocol, PhantomSpec, TemperatureField, heating_step
from .sim import AcquisitionParams, synthesize_frame
from .thermometry import (afi_b1_map, curve_fit_t1, prf_delta_t, srvfa_t1)

log = logging.getLogger("mrtherm.service")

SERVE_MODES = ("full", "zerofill", "keyhole", "cascaded_hr", "cascaded_nohr")


def _b64_f32(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


class FrameWorker:
    """Simulation + reconstruction state machine; one step per dynamic."""

    def __init__(self, phantom: PhantomSpec, proto: HeatingProtocol,
                 params: AcquisitionParams, mode: str = "full", nets=None,
                 baseline_temp_degc: float = 37.0, seed: int = 0):
        if mode not in SERVE_MODES:
            raise ValueError(f"unknown serve mode {mode!r}")
        nets = nets or {}
        if mode in ("cascaded_hr", "cascaded_nohr"):
            key = "acc_hr" if mode == "cascaded_hr" else "acc_nohr"
            if key not in nets:
                raise ValueError(f"serve mode {mode!r} needs weights {key!r}")
        self.phantom = phantom
        self.proto = proto
        self.params = params
        self.mode = mode
        self.nets = nets
        self.baseline_temp = baseline_temp_degc
        self.seed = seed

        h, w = phantom.shape
        self.on = False
        self.focus = tuple(proto.focus)
        self.power = proto.power
        self.roi = (w // 2 - 4, h // 2 - 4, 8, 8)
        self.t = 0
        self.dt = np.zeros(phantom.shape)
        self.dose = np.zeros(phantom.shape)

        # pretreatment stage (fully sampled, both flip angles, B1 pair)
        base = TemperatureField(dt=np.zeros(phantom.shape), t_index=0)
        rng = np.random.default_rng((seed, 0)) if np.isfinite(params.noise_snr) else None
        self._pre1 = synthesize_frame(phantom, base, params, params.fa1_deg, rng)
        self._pre2 = synthesize_frame(phantom, base, params, params.fa2_deg, rng)
        self._pre2_k = [fft2c(im) for im in self._pre2]
        self.subject = subject_mask(np.abs(self._pre2[0]))
        from .sim import synthesize_afi_pair
        fa_map = params.afi_fa_deg * phantom.b1()
        s1, s2 = synthesize_afi_pair(phantom, fa_map, params.afi_tr1_ms,
                                     params.afi_tr2_ms, rng,
                                     noise_snr=params.noise_snr)
        b1 = afi_b1_map(s1, s2, params.afi_tr1_ms, params.afi_tr2_ms,
                        params.afi_fa_deg)
        self.b1_scale = np.where(b1.valid, b1.scale, 1.0)
        self.fa1_eff = params.fa1_deg * self.b1_scale
        self.fa2_eff = params.fa2_deg * self.b1_scale
        pre1_mag = np.abs(self._pre1[0])
        pre2_mag = np.abs(self._pre2[0])
        self.pre_fit = curve_fit_t1([pre1_mag, pre2_mag],
                                    [self.fa1_eff, self.fa2_eff], params.tr_ms)
        self.pre1_mag = pre1_mag
        self.mask = params.mask()
        self.headline = len(params.te_ms) - 1

    # -- commands ------------------------------------------------------------

    def apply_command(self, cmd: dict):
        kind = cmd.get("type")
        if kind == "sonicate":
            if "on" in cmd:
                self.on = bool(cmd["on"])
            if cmd.get("focus") is not None:
                x, y = cmd["focus"]
                h, w = self.phantom.shape
                self.focus = (int(np.clip(y, 0, h - 1)),
                              int(np.clip(x, 0, w - 1)))
            if cmd.get("power") is not None:
                self.power = float(cmd["power"])
        elif kind == "reset":
            self.dt = np.zeros(self.phantom.shape)
            self.dose = np.zeros(self.phantom.shape)
            self.on = False
        elif kind == "set_roi":
            x, y, w, h = (int(v) for v in cmd["rect"])
            rows, cols = self.phantom.shape
            if w < 1 or h < 1 or x < 0 or y < 0 or x + w > cols or y + h > rows:
                raise ValueError(f"ROI {cmd['rect']} out of bounds")
            self.roi = (x, y, w, h)
        else:
            raise ValueError(f"unknown command type {kind!r}")

    # -- frame computation -----------------------------------------------------

    def _reconstruct(self, imgs, lat):
        p = self.params
        te_idx = (0, self.headline) if self.headline != 0 else (0,)
        out = {}
        for l in te_idx:
            k_full = fft2c(imgs[l])
            if self.mode == "full":
                t0 = time.perf_counter()
                out[l] = ifft2c(k_full)
                lat["recon"] += time.perf_counter() - t0
                continue
            km = np.zeros_like(k_full)
            km[self.mask.keep] = k_full[self.mask.keep]
            if self.mode == "zerofill":
                t0 = time.perf_counter()
                out[l] = ifft2c(km)
                lat["recon"] += time.perf_counter() - t0
            elif self.mode == "keyhole":
                t0 = time.perf_counter()
                out[l] = keyhole_recon(km, self._pre2_k[l], self.mask)
                lat["recon"] += time.perf_counter() - t0
            else:
                t0 = time.perf_counter()
                zf = ifft2c(km)
                lat["recon"] += time.perf_counter() - t0
                net = self.nets["acc_hr" if self.mode == "cascaded_hr"
                                else "acc_nohr"]
                prior = np.abs(self._pre2[l]) if self.mode == "cascaded_hr" \
                    else None
                t0 = time.perf_counter()
                out[l] = infer_recon_net(net, zf, prior)
                lat["acc"] += time.perf_counter() - t0
        return out

    def step(self) -> dict:
        """Advance one dynamic and return the frame message payload."""
        p = self.params
        if self.t > 0:
            self.dt = heating_step(self.dt, self.proto, self.on, self.focus,
                                   self.power)
        rng = np.random.default_rng((self.seed, 2, self.t)) \
            if np.isfinite(p.noise_snr) else None
        field_ = TemperatureField(dt=self.dt, t_index=self.t)
        imgs = synthesize_frame(self.phantom, field_, p, p.fa2_deg, rng)

        lat = {"recon": 0.0, "acc": 0.0, "proc": 0.0, "prf": 0.0}
        recon = self._reconstruct(imgs, lat)

        t0 = time.perf_counter()
        mag2 = np.abs(recon[0])
        if "proc" in self.nets:
            fit = infer_t1_net(self.nets["proc"], mag2, self.pre1_mag,
                               self.b1_scale, subject=self.subject)
        else:
            fit = srvfa_t1(self.pre1_mag, mag2, self.fa1_eff, self.fa2_eff,
                           p.tr_ms, self.pre_fit.m0, self.pre_fit.t1_ms)
        lat["proc"] = time.perf_counter() - t0
        dt1_valid = fit.valid & self.pre_fit.valid & self.subject
        dt1 = np.where(dt1_valid, fit.t1_ms - self.pre_fit.t1_ms, 0.0)

        t0 = time.perf_counter()
        te_l = self.headline
        tmap = prf_delta_t(self._pre2[te_l], recon[te_l], p.te_ms[te_l], p)
        dt_map = np.where(tmap.valid & self.subject, tmap.dt, 0.0)
        lat["prf"] = time.perf_counter() - t0

        temp = self.baseline_temp + dt_map
        r = np.where(temp >= 43.0, 0.5, 0.25)
        self.dose += (self.proto.frame_dt / 60.0) * r ** (43.0 - temp)

        x, y, w, h = self.roi
        patch = dt_map[y:y + h, x:x + w]
        msg = {
            "type": "frame",
            "t": self.t,
            "dt_map": _b64_f32(dt_map),
            "dt1_map": _b64_f32(dt1),
            "roi": {"mean": float(patch.mean()), "max": float(patch.max())},
            "dose_max": float(self.dose[self.subject].max()
                              if self.subject.any() else 0.0),
            "latency_ms": {k: round(v * 1000.0, 3) for k, v in lat.items()},
        }
        self.t += 1
        return msg


class DropOldestQueue:
    """Bounded queue that evicts the oldest item instead of blocking."""

    def __init__(self, maxsize: int = 8):
        self._q: asyncio.Queue = asyncio.Queue(maxsize=maxsize)
        self.drops = 0

    def push(self, item):
        while True:
            try:
                self._q.put_nowait(item)
                return
            except asyncio.QueueFull:
                try:
                    self._q.get_nowait()
                    self.drops += 1
                except asyncio.QueueEmpty:
                    pass

    async def pop(self):
        return await self._q.get()


class SessionService:
    def __init__(self, worker: FrameWorker, frame_period_s: float = 0.8,
                 queue_size: int = 8, max_frames: Optional[int] = None):
        self.worker = worker
        self.period = frame_period_s
        self.queue_size = queue_size
        self.max_frames = max_frames
        self.queues: dict = {}
        self.commands: list = []
        self.total_drops = 0

    def hello(self) -> str:
        h, w = self.worker.phantom.shape
        return json.dumps({"type": "hello", "shape": [h, w],
                           "frame_period_s": self.period,
                           "roi": list(self.worker.roi)})

    async def handler(self, ws):
        q = DropOldestQueue(self.queue_size)
        self.queues[ws] = q
        sender = asyncio.ensure_future(self._sender(ws, q))
        try:
            await ws.send(self.hello())
            async for raw in ws:
                try:
                    cmd = json.loads(raw)
                except json.JSONDecodeError:
                    log.warning("ignoring non-JSON message")
                    continue
                self.commands.append(cmd)
        finally:
            self.total_drops += q.drops
            del self.queues[ws]
            sender.cancel()

    async def _sender(self, ws, q: DropOldestQueue):
        try:
            while True:
                await ws.send(await q.pop())
        except asyncio.CancelledError:
            pass
        except Exception:
            pass

    async def frame_loop(self):
        frames = 0
        while self.max_frames is None or frames < self.max_frames:
            started = time.perf_counter()
            pending, self.commands = self.commands, []
            for cmd in pending:
                try:
                    self.worker.apply_command(cmd)
                except (ValueError, KeyError, TypeError) as e:
                    log.warning("rejected command %s: %s", cmd, e)
            text = json.dumps(self.worker.step())
            for q in list(self.queues.values()):
                q.push(text)
            frames += 1
            elapsed = time.perf_counter() - started
            await asyncio.sleep(max(0.0, self.period - elapsed))

    async def run(self, host: str, port: int, ready=None):
        import websockets

        async with websockets.serve(self.handler, host, port):
            if ready is not None:
                ready.set()
            await self.frame_loop()
