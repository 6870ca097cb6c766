"""
Training with learnable dropout
===============================

A one-hidden-layer net on two Gaussian blobs. Gates start at 1 and the
learnt retain probabilities are logged every epoch.
"""

# %%
import sys

from gendropout.data import synthetic_blobs
from gendropout.network import GateSpec, build, mlp_spec
from gendropout.regularizers import preset
from gendropout.train import MetricsWriter, TrainConfig, evaluate, train

train_set = synthetic_blobs(400, classes=2, dim=2, separation=4.0, seed=0)
test_set = synthetic_blobs(400, classes=2, dim=2, separation=4.0, seed=1)
net = build(mlp_spec(2, [32], 2, GateSpec("per_unit", 1.0)), seed=0)

# %% [markdown]
# The half preset pulls k toward 0.5. Its penalty gradient grows like 1/(1 - k)
# near k = 1, so the clamp width eps is raised from 1e-6 to 0.01: that caps
# the pull at k = 1 and lets the gates leave it smoothly.

# %%
reg = preset("dropout_pp_half", 2.0, eps=0.01)
cfg = TrainConfig(epochs=15, batch_size=32, regularizer=reg, seed=0)
with MetricsWriter(None, net.gate_sites(), reg, sys.stdout) as log:
    history = train(net, train_set, test_set, cfg, on_epoch=log)

# %%
print("final test error", evaluate(net, test_set))
print("learnt k", net.gates["fc1"].k.round(2))
