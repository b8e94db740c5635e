import time
import numpy as np
from mrtherm.phantom import disk_phantom, HeatingProtocol, SonicationEvent
from mrtherm.sim import AcquisitionParams, generate_session
from mrtherm.nn import (accnet_config, procnet_config, train_recon_net, train_t1_net)
from mrtherm.pipeline import ComparisonConfig, run_comparison_study

t_all = time.perf_counter()
shape = (48, 48)
ph = disk_phantom(shape, seed=7, b1_amplitude=0.15)
params = AcquisitionParams(matrix=shape, n_keep=7, te_ms=(3.0, 13.4), noise_snr=30.0)
proto = HeatingProtocol(focus=(24, 24), power=1.1, sigma_f=2.0,
                        schedule=[SonicationEvent(3, True), SonicationEvent(20, False)])
n_dyn = 24
ds = generate_session(ph, proto, params, n_dyn, seed=11)
train_frames = [t for t in range(n_dyn) if t % 2 == 0]
test_frames = [t for t in range(n_dyn) if t % 2 == 1]

t0 = time.perf_counter()
acc_hr, h1 = train_recon_net(ds, accnet_config(learning_rate=1.0, batch_size=8,
    epochs=1000, max_steps=220, seed=1), frames=train_frames)
print(f"acc_hr: {h1[0]:.3g}->{h1[-1]:.4g} ({time.perf_counter()-t0:.0f}s)", flush=True)

t0 = time.perf_counter()
acc_nohr, h2 = train_recon_net(ds, accnet_config(learning_rate=1.0, batch_size=8,
    epochs=1000, max_steps=220, seed=1, use_hr_prior=False), frames=train_frames)
print(f"acc_nohr: {h2[0]:.3g}->{h2[-1]:.4g} ({time.perf_counter()-t0:.0f}s)", flush=True)

t0 = time.perf_counter()
proc, h3 = train_t1_net(ds, procnet_config(learning_rate=0.3, batch_size=32,
    epochs=1000, max_steps=500, seed=2), frames=train_frames)
print(f"proc: {h3[0]:.3g}->{h3[-1]:.4g} min {min(h3):.4g} ({time.perf_counter()-t0:.0f}s)", flush=True)

t0 = time.perf_counter()
cfg = ComparisonConfig(output_dir="/tmp/e2e_reports", rois=((20, 20, 9, 9),),
                       echoes=(1,), frames=tuple(test_frames))
summary = run_comparison_study(cfg, session=ds,
    nets={"acc_hr": acc_hr, "acc_nohr": acc_nohr, "proc": proc})
print(f"comparison: {time.perf_counter()-t0:.0f}s")
import csv
rows = list(csv.DictReader(open("/tmp/e2e_reports/frames.csv")))
for m in ("full_fit","keyhole_proc","zerofill_proc","cascaded_hr","cascaded_nohr","full_proc"):
    dt = [r for r in rows if r["method"]==m and r["kind"]=="dt" and r["ssim"]]
    dt1 = [r for r in rows if r["method"]==m and r["kind"]=="dt1" and r["ssim"]]
    f = lambda rs, k: np.mean([float(r[k]) for r in rs]) if rs else float('nan')
    print(f"  {m:14s} dt ssim {f(dt,'ssim'):.4f} nmse {f(dt,'nmse'):.3e} truth_ssim {f(dt,'ssim_truth'):.4f} | "
          f"dt1 ssim {f(dt1,'ssim'):.4f} truth_ssim {f(dt1,'ssim_truth'):.4f}")
for m, agg in summary["methods"].items():
    if "dt1_vs_dt_slope" in agg:
        print(f"  slope {m}: {agg['dt1_vs_dt_slope']:.3f} r2 {agg['dt1_vs_dt_r2']:.3f}")
print(f"total {time.perf_counter()-t_all:.0f}s")
