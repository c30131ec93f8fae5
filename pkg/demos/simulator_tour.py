"""Tour of the packet-level simulator: how PRBs turn into latency."""

# %% one slice, two UEs, channel frozen so the numbers are easy to follow
import numpy as np

from slicelab.core import SimConfig, SliceConfig
from slicelab.kpm import conformance_ratio
from slicelab.ransim import RanSimulator

cfg = SimConfig(sigma_eta=0.0, slices=[SliceConfig(n_ues=2), SliceConfig(n_ues=2)])
sim = RanSimulator(cfg, seed=3)
print("spectral efficiency per UE:", sim.efficiencies().round(2))

# %% sweep the PRB budget of slice 0 and watch the latency tail
for prbs in (4, 6, 8, 12, 20):
    sim.reset(3)
    lat = []
    for _ in range(8):
        lat += sim.step_epoch({0: prbs})[0].latencies_ms
    lat = np.array(lat)
    print(f"{prbs:3d} PRBs  mean {lat.mean():7.1f} ms  p99 {np.percentile(lat, 99):7.1f} ms  "
          f"within 50 ms {conformance_ratio(lat.tolist(), 50.0):.3f}")

# %% below the offered load the queue never drains: latency grows epoch after epoch
sim.reset(3)
for n in range(5):
    rep = sim.step_epoch({0: 4})[0]
    print(f"epoch {n}: {len(rep.delivered)} packets, worst {max(rep.latencies_ms):.0f} ms, backlog {sim.backlog_bits(0)} bits")
