"""
Architecture selection
======================

SAL drives gates to 0 or 1. Gates near 0 mark units that can be deleted;
the pruned net is smaller and behaves almost the same.
"""

# %%
import numpy as np

from gendropout.data import synthetic_blobs
from gendropout.gates import GateMode
from gendropout.network import GateSpec, build, forward, mlp_spec
from gendropout.prune import gate_histogram, prune
from gendropout.regularizers import preset
from gendropout.train import TrainConfig, evaluate, train

tr = synthetic_blobs(200, 2, 2, 10.0, seed=0)
te = synthetic_blobs(200, 2, 2, 10.0, seed=1)
net = build(mlp_spec(2, [64], 2, GateSpec("per_unit", 0.5)), 0)
train(net, tr, te, TrainConfig(epochs=100, regularizer=preset("sal", 10, s=0.05)))

# %%
print("gate histogram (10 bins):", gate_histogram(net.gates["fc1"].k, 10))

# %%
pruned, report = prune(net, "auto")
print(report.table("SAL", evaluate(net, te), evaluate(pruned, te)))

# %% [markdown]
# Units removed at an exact zero change nothing; units just below the
# threshold change the logits a little.

# %%
diff = np.abs(forward(net, te.images, GateMode.EVAL)[0] - forward(pruned, te.images, GateMode.EVAL)[0])
print("max logit change", diff.max())
