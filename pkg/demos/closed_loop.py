"""An xApp driving the RAN over the newline-delimited wire protocol."""

# %%
import numpy as np

from slicelab.agents import ConstantAgent, PPOAgent
from slicelab.controlloop import SlaSchedule, XApp, run_closed_loop, run_socket_loop
from slicelab.core import PpoConfig, SimConfig, SlaSpec
from slicelab.ransim import RanSimulator

slas = SlaSchedule({0: SlaSpec(110.0, 0.99), 1: SlaSpec(50.0, 0.99)}, [(20, 1, SlaSpec(30.0, 0.9))])

# %% a constant controller: each decision lands one epoch later
trace = run_closed_loop(RanSimulator(SimConfig(), seed=1), {0: ConstantAgent(10), 1: ConstantAgent(30)}, slas, 5)
for alloc in trace.applied:
    print(alloc)

# %% same untrained policy in-process and over a localhost socket
def agents():
    return {s: PPOAgent(49, PpoConfig(), np.random.default_rng(s)) for s in (0, 1)}

local = run_closed_loop(RanSimulator(SimConfig(), seed=1), agents(), slas, 40, mode="sample")
wire = run_socket_loop(lambda: RanSimulator(SimConfig(), seed=1), XApp(agents(), slas, 50, 2, mode="sample"), 40)
print("identical traces:", local.key() == wire.key())
print("slice 1 lambda before/after the switch:",
      local.for_slice(1)[19].obs.lambda_ms, local.for_slice(1)[21].obs.lambda_ms)
