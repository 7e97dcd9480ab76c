"""Probe: lr 1e-3, 30 epochs, seed 0, variants full/t1/nosg/orf/js."""
import sys
import time

sys.path.insert(0, "src")

import numpy as np

from spikesal.spikeio.synthetic import SyntheticConfig, make_synthetic_dataset
from spikesal.training import TrainConfig, train

ds = make_synthetic_dataset(SyntheticConfig())
n_val = len(ds) // 4
val = ds[len(ds) - n_val:]
zeros_mae = float(np.mean([np.abs(
    s.masks[(len(s.masks) // 2)].astype(np.float64)).mean() for s in val]))
print(f"all-zeros floor (approx) = {zeros_mae:.4f}", flush=True)

VARIANTS = {
    "full": {},
    "t1": {"time_steps": 1},
    "nosg": {"global_debias": False},
    "orf": {"fusion": "or"},
    "js": {"distance": "js"},
}

which = sys.argv[1:] or list(VARIANTS)
for name in which:
    kw = VARIANTS[name]
    cfg = TrainConfig(lr=1e-3, epochs=30, seed=0, **kw)
    t0 = time.time()
    _, _, logs = train(None, None, ds, cfg)
    dt = time.time() - t0
    curve = [round(e["val_mae"], 4) for e in logs]
    print(f"seed0 {name}: {dt:.0f}s final={curve[-1]} min={min(curve)}",
          flush=True)
    print(f"  curve={curve}", flush=True)
    if "critic_flips" in logs[0]:
        print(f"  flips={[e['critic_flips'] for e in logs]}", flush=True)
