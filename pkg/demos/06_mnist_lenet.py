"""
MNIST and LeNet
===============

The shipped IDX files hold 8,000 training and 2,000 test digits. LeNet
parameter counts for the widths that pruning produces, then one short
epoch on a 1,000-digit subset.
"""

# %%
from gendropout.data import load_mnist, subset
from gendropout.network import GateSpec, build, lenet_spec, param_count
from gendropout.regularizers import preset
from gendropout.train import TrainConfig, train

for widths in [(20, 50, 500, 10), (20, 50, 20, 10), (11, 33, 38, 10), (18, 50, 296, 10)]:
    print("-".join(map(str, widths)), f"{param_count(lenet_spec(widths)):,}")

# %%
tr, te = load_mnist(split="train"), load_mnist(split="t10k")
small = subset(tr, 1000, seed=0)
spec = lenet_spec(conv_gate=GateSpec("per_channel", 1.0), dense_gate=GateSpec("per_unit", 1.0))
net = build(spec, 0)
history = train(net, small, te, TrainConfig(epochs=1, regularizer=preset("dropout_pp_flat")))
print(history[-1])
