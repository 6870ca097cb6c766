"""
Beta-prior penalties
====================

Each preset pushes gate values a different way. The sign of the gradient
tells which: gradient descent moves k against it.
"""

# %%
import numpy as np

from gendropout.regularizers import gd_penalty, gd_penalty_grad, preset

grid = np.array([0.01, 0.25, 0.5, 0.75, 0.99])

# %%
for name in ("dropout_pp_flat", "dropout_pp_half", "dropout_pp_one", "dropout_pp_zero"):
    cfg = preset(name, 1.0)
    g = gd_penalty_grad(grid, cfg)
    print(f"{name:<16} alpha={cfg.alpha:<4} beta={cfg.beta:<4} grad {np.array2string(g, precision=2)}")

# %% [markdown]
# SAL uses alpha, beta < 1: the penalty peaks in the interior, so gates drift
# to 0 or 1. A larger beta/alpha ratio makes 0 the cheaper end.

# %%
for ratio in (1, 10, 100):
    cfg = preset("sal", ratio, s=0.005)
    ends = gd_penalty([1e-6], cfg), gd_penalty([1 - 1e-6], cfg)
    print(f"ratio {ratio:>3}: penalty at 0 {ends[0]:.4f}, at 1 {ends[1]:.4f}")
