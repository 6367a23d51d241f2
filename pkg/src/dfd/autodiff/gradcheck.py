from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(f, x, step=1e-4, tol=1e-4, max_coords=None, seed=0, floor=1e-3):
    """Compare the reverse-mode gradient of scalar ``f`` at ``x`` against
    central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    near-zero gradients from dominating the report. ``max_coords`` limits
    the check to a random subset of coordinates.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    f(probe).backward()
    analytic = np.zeros(base.size) if probe.grad is None else probe.grad.reshape(-1)

    coords = np.arange(base.size)
    if max_coords is not None and base.size > max_coords:
        coords = np.random.default_rng(seed).choice(base.size, max_coords, replace=False)

    worst_rel = worst_abs = 0.0
    flat = base.reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(Tensor(base.copy())).data)
        flat[i] = orig - step
        lo = float(f(Tensor(base.copy())).data)
        flat[i] = orig
        num = (hi - lo) / (2 * step)
        ana = float(analytic[i])
        err = abs(ana - num)
        worst_abs = max(worst_abs, err)
        worst_rel = max(worst_rel, err / max(abs(ana), abs(num), floor))
    return GradCheckReport(worst_rel, worst_abs, len(coords), tol)
