"""Per-epoch reward: sigmoid SLA term plus a resource-saving bonus."""

from __future__ import annotations

import math

INDICATOR_MODES = ("as-written", "corrected")


def reward(
    phi_sla: float,
    phi_meas: float,
    a: int,
    C: int,
    k: float = 20.0,
    indicator_mode: str = "corrected",
) -> float:
    """Reward for granting ``a`` of ``C`` PRBs given target and measured conformance.

    ``corrected`` pays the bonus ``1 - a/C`` only while the SLA holds
    (``phi_meas >= phi_sla``); ``as-written`` pays it when
    ``phi_meas <= phi_sla``.
    """
    if k <= 0:
        raise ValueError("sigmoid slope k must be positive")
    if a > C:
        raise ValueError(f"action {a} exceeds capacity {C}")
    if a < 0:
        raise ValueError(f"negative PRB count {a}")
    x = k * (phi_sla - phi_meas)
    # 1 / (1 + e^x) without overflow
    if x >= 0:
        ex = math.exp(-x)
        sig = ex / (1.0 + ex)
    else:
        sig = 1.0 / (1.0 + math.exp(x))
    if indicator_mode == "corrected":
        bonus = phi_meas >= phi_sla
    elif indicator_mode == "as-written":
        bonus = phi_meas <= phi_sla
    else:
        raise ValueError(f"unknown indicator mode {indicator_mode!r}")
    return sig + (1.0 - a / C) * (1.0 if bonus else 0.0)
