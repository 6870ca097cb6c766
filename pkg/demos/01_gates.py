"""
Bernoulli gates
===============

A gate multiplies a unit's output by theta ~ bernoulli(k). Training samples
theta, evaluation rescales by k, and the Heaviside mode thresholds k at 0.5.
"""

# %%
import numpy as np

from gendropout.gates import GateMode, GateParams, apply_gate, clip, sample_mask
from gendropout.oracle import binomial_check

k = GateParams(np.array([0.0, 0.2, 0.5, 0.9, 1.0]), "per_unit", "fc1")
x = np.ones((3, 5))

# %% [markdown]
# One mask per minibatch: every row of the batch sees the same theta.

# %%
rng = np.random.default_rng(0)
mask = sample_mask(k, GateMode.TRAIN, rng)
print("mask      ", mask)
print("train out\n", apply_gate(x, k, mask, GateMode.TRAIN))
print("eval out  ", apply_gate(x, k, None, GateMode.EVAL)[0])
print("heaviside ", sample_mask(k, GateMode.HEAVISIDE))

# %% [markdown]
# Sampling frequency matches k within four standard errors.

# %%
for p in (0.1, 0.5, 0.9):
    draws = sample_mask(GateParams(np.full(10_000, p), "per_unit", "g"), GateMode.TRAIN, rng)
    print(f"k={p}: rate {draws.mean():.4f}  ok={binomial_check(draws, p)}")

# %%
# k is squashed into [0, 1] before sampling
print(clip(np.array([-0.3, 0.4, 1.7])))
