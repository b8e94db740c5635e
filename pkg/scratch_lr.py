import time
import numpy as np
from mrtherm.phantom import disk_phantom, HeatingProtocol, SonicationEvent
from mrtherm.sim import AcquisitionParams, generate_session
from mrtherm.nn import accnet_config, procnet_config, train_recon_net, train_t1_net

shape = (48, 48)
ph = disk_phantom(shape, seed=7, b1_amplitude=0.15)
params = AcquisitionParams(matrix=shape, n_keep=7, te_ms=(3.0, 13.4), noise_snr=30.0)
proto = HeatingProtocol(focus=(24, 24), power=1.1, sigma_f=2.0,
                        schedule=[SonicationEvent(3, True), SonicationEvent(20, False)])
ds = generate_session(ph, proto, params, 24, seed=11)
train_frames = [t for t in range(24) if t % 2 == 0]

for lr in (1.0, 0.3):
    t0 = time.perf_counter()
    cfg = accnet_config(learning_rate=lr, batch_size=8, epochs=1000, max_steps=200, seed=1)
    net, h = train_recon_net(ds, cfg, frames=train_frames)
    print(f"acc lr={lr}: loss {h[0]:.3g} -> 50:{h[49]:.3g} 100:{h[99]:.3g} 200:{h[-1]:.3g} ({time.perf_counter()-t0:.0f}s)", flush=True)

for lr in (1.0, 0.3):
    t0 = time.perf_counter()
    cfg = procnet_config(learning_rate=lr, batch_size=32, epochs=1000, max_steps=200, seed=2)
    net, h = train_t1_net(ds, cfg, frames=train_frames)
    print(f"proc lr={lr}: loss {h[0]:.3g} -> 50:{h[49]:.3g} 100:{h[99]:.3g} 200:{h[-1]:.3g} ({time.perf_counter()-t0:.0f}s)", flush=True)
