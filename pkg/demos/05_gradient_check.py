"""
Checking gradients
==================

Analytic gradients of the network are compared with central differences;
the single-sample training loss is compared with the exact expectation over
every gate configuration.
"""

# %%
import numpy as np

from gendropout.gates import GateMode
from gendropout.network import GateSpec, backward, build, forward, mlp_spec
from gendropout.oracle import check_gradients, enumerate_expected_loss
from gendropout.tensor import softmax_cross_entropy

net = build(mlp_spec(3, [5], 2, GateSpec("per_unit", 0.6)), 0)
rng = np.random.default_rng(0)
x, y = rng.uniform(-1, 1, (4, 3)), np.array([0, 1, 1, 0])


def loss_for(setter):
    def fn(v):
        n = net.copy()
        setter(n, v)
        return softmax_cross_entropy(forward(n, x, GateMode.EVAL)[0], y)[0]
    return fn


def set_w0(n, v):
    n.weights[0] = v


def set_k(n, v):
    n.gates["fc1"].k = v


# %%
_, trace = forward(net, x, GateMode.EVAL)
g = backward(net, trace, y)
print(check_gradients({"w0": (loss_for(set_w0), net.weights[0], g.weights[0]),
                       "k": (loss_for(set_k), net.gates["fc1"].k, g.gates["fc1"])}))

# %%
exact = enumerate_expected_loss(net, x, y)
losses = [softmax_cross_entropy(forward(net, x, GateMode.TRAIN, rng)[0], y)[0] for _ in range(20_000)]
print(f"exact {exact:.5f}  monte carlo {np.mean(losses):.5f} +- {np.std(losses) / np.sqrt(len(losses)):.5f}")
