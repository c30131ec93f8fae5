"""How the per-epoch reward trades SLA conformance against PRB usage."""

# %%
import numpy as np

from slicelab.agents import reward

C = 50
for phi_meas in (1.0, 0.99, 0.984, 0.95, 0.8):
    row = [reward(0.99, phi_meas, a, C) for a in (5, 10, 20, 50)]
    print(f"measured {phi_meas:5.3f}: " + "  ".join(f"{r:.3f}" for r in row))

# %% one late packet out of 62 costs far more than a handful of PRBs
meet, miss = reward(0.99, 1.0, 10, C), reward(0.99, 61 / 62, 10, C)
print(f"meeting the SLA pays {meet - miss:.3f} more; each extra PRB costs {1 / C:.3f}")

# %% the two indicator conventions differ only in when the PRB bonus is paid
grid = np.linspace(0.9, 1.0, 6)
print([round(reward(0.95, p, 10, C, indicator_mode="as-written"), 3) for p in grid])
print([round(reward(0.95, p, 10, C), 3) for p in grid])
