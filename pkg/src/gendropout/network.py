"""Declarative gated networks: specification, construction, forward and backward.

Supported layers are ``conv5`` (5x5 valid convolution, ReLU, 2x2 max-pool),
``dense`` (affine + ReLU) and ``output`` (affine logits). A gate, when
present, multiplies the layer output after the nonlinearity (and after
pooling). An optional per-activation gate can sit on the raw input.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, SpecError
from .gates import (GateGranularity, GateMode, GateParams, apply_gate,
                    gate_backward, sample_mask)
from .regularizers import penalty_and_grad

__all__ = [
    "LayerKind",
    "GateSpec",
    "LayerSpec",
    "NetworkSpec",
    "Network",
    "Trace",
    "GradientSet",
    "build",
    "forward",
    "backward",
    "param_count",
    "gate_count",
    "lenet_spec",
    "mlp_spec",
    "INPUT_SITE",
]

INPUT_SITE = "input"
KERNEL = 5


class LayerKind(str, enum.Enum):
    CONV5 = "conv5"
    DENSE = "dense"
    OUTPUT = "output"


@dataclass(frozen=True)
class GateSpec:
    granularity: GateGranularity
    init: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "granularity", GateGranularity(self.granularity))
        if not 0.0 <= self.init <= 1.0:
            raise SpecError(f"gate init must lie in [0, 1], got {self.init}")


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    width: int
    gate: Optional[GateSpec] = None
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if int(self.width) != self.width or self.width < 1:
            raise SpecError(f"layer width must be a positive integer, got {self.width}")
        object.__setattr__(self, "width", int(self.width))
        if self.gate is None:
            return
        g = self.gate.granularity
        if self.kind is LayerKind.OUTPUT:
            raise SpecError("output layer cannot carry a gate")
        if self.kind is LayerKind.CONV5 and g is GateGranularity.PER_UNIT:
            raise SpecError("conv5 gates must be per_channel or per_activation")
        if self.kind is LayerKind.DENSE and g is not GateGranularity.PER_UNIT:
            raise SpecError("dense gates must be per_unit")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]
    input_gate: Optional[GateSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_gate is not None and self.input_gate.granularity is not GateGranularity.PER_ACTIVATION:
            raise SpecError("the input gate must be per_activation")
        self.output_shapes()  # validates spatial arithmetic

    def layer_names(self) -> List[str]:
        names, counts = [], {LayerKind.CONV5: 0, LayerKind.DENSE: 0}
        for layer in self.layers:
            if layer.kind is LayerKind.OUTPUT:
                default = "out"
            else:
                counts[layer.kind] += 1
                default = f"{'conv' if layer.kind is LayerKind.CONV5 else 'fc'}{counts[layer.kind]}"
            names.append(layer.name or default)
        if len(set(names)) != len(names) or INPUT_SITE in names:
            raise SpecError(f"layer names must be unique and not '{INPUT_SITE}': {names}")
        return names

    def output_shapes(self) -> List[Tuple[int, ...]]:
        """Shape of each layer's (gated) output, per example."""
        if not self.layers or self.layers[-1].kind is not LayerKind.OUTPUT:
            raise SpecError("the last layer must be an output layer")
        if any(l.kind is LayerKind.OUTPUT for l in self.layers[:-1]):
            raise SpecError("only the last layer may be an output layer")
        names = self.layer_names()
        shape = self.input_shape
        shapes = []
        for name, layer in zip(names, self.layers):
            if layer.kind is LayerKind.CONV5:
                if len(shape) != 3:
                    raise SpecError(f"layer '{name}': conv5 needs a C x H x W input, got {shape}")
                _, h, w = shape
                ho, wo = h - KERNEL + 1, w - KERNEL + 1
                if ho < 1 or wo < 1:
                    raise SpecError(f"layer '{name}': 5x5 kernel larger than input {h}x{w}")
                if ho % 2 or wo % 2:
                    raise SpecError(f"layer '{name}': conv output {ho}x{wo} cannot be max-pooled by 2")
                shape = (layer.width, ho // 2, wo // 2)
            else:
                shape = (layer.width,)
            shapes.append(shape)
        return shapes

    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def architecture(self) -> str:
        return "-".join(str(l.width) for l in self.layers)

    def with_widths(self, widths: Sequence[int]) -> "NetworkSpec":
        if len(widths) != len(self.layers):
            raise SpecError(f"expected {len(self.layers)} widths, got {len(widths)}")
        layers = tuple(replace(l, width=int(w)) for l, w in zip(self.layers, widths))
        return replace(self, layers=layers)

    def to_dict(self) -> dict:
        def gate(g):
            return None if g is None else {"granularity": g.granularity.value, "init": g.init}
        return {
            "input_shape": list(self.input_shape),
            "input_gate": gate(self.input_gate),
            "layers": [
                {"kind": l.kind.value, "width": l.width, "gate": gate(l.gate), "name": l.name}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        def gate(g):
            return None if g is None else GateSpec(g["granularity"], float(g.get("init", 1.0)))
        layers = tuple(
            LayerSpec(l["kind"], l["width"], gate(l.get("gate")), l.get("name"))
            for l in d["layers"]
        )
        return cls(tuple(d["input_shape"]), layers, gate(d.get("input_gate")))


def lenet_spec(widths=(20, 50, 500, 10), conv_gate: Optional[GateSpec] = None,
               dense_gate: Optional[GateSpec] = None, input_gate: Optional[GateSpec] = None,
               input_shape=(1, 28, 28)) -> NetworkSpec:
    """Two conv5 layers, one hidden dense layer and a 10-way output."""
    c1, c2, d1, out = widths
    return NetworkSpec(
        input_shape,
        (LayerSpec(LayerKind.CONV5, c1, conv_gate),
         LayerSpec(LayerKind.CONV5, c2, conv_gate),
         LayerSpec(LayerKind.DENSE, d1, dense_gate),
         LayerSpec(LayerKind.OUTPUT, out)),
        input_gate,
    )


def mlp_spec(input_dim: int, hidden: Sequence[int], classes: int,
             gate: Optional[GateSpec] = None) -> NetworkSpec:
    layers = [LayerSpec(LayerKind.DENSE, h, gate) for h in hidden]
    layers.append(LayerSpec(LayerKind.OUTPUT, classes))
    return NetworkSpec((input_dim,), tuple(layers))


def _param_shapes(spec: NetworkSpec):
    shapes = []
    prev = spec.input_shape
    for layer, out in zip(spec.layers, spec.output_shapes()):
        if layer.kind is LayerKind.CONV5:
            shapes.append(((layer.width, prev[0], KERNEL, KERNEL), (layer.width,)))
        else:
            shapes.append(((int(np.prod(prev)), layer.width), (layer.width,)))
        prev = out
    return shapes


def param_count(spec: NetworkSpec) -> int:
    """Number of weights and biases (gate parameters excluded)."""
    return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in _param_shapes(spec))


def _gate_shape(spec: GateSpec, block: Tuple[int, ...]) -> Tuple[int, ...]:
    if spec.granularity is GateGranularity.PER_ACTIVATION:
        return block
    return (block[0],)


def gate_count(spec: NetworkSpec) -> int:
    n = 0
    if spec.input_gate is not None:
        n += int(np.prod(spec.input_shape))
    for layer, out in zip(spec.layers, spec.output_shapes()):
        if layer.gate is not None:
            n += int(np.prod(_gate_shape(layer.gate, out)))
    return n


@dataclass
class Network:
    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    gates: Dict[str, GateParams] = field(default_factory=dict)

    @property
    def layer_names(self) -> List[str]:
        return self.spec.layer_names()

    def copy(self) -> "Network":
        return Network(self.spec,
                       [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases],
                       {s: g.copy() for s, g in self.gates.items()})

    def gate_list(self) -> List[GateParams]:
        """Gate sites in sampling order (input first, then by layer)."""
        return [self.gates[s] for s in self.gate_sites()]

    def gate_sites(self) -> List[str]:
        sites = [INPUT_SITE] if INPUT_SITE in self.gates else []
        sites += [n for n in self.layer_names if n in self.gates]
        return sites


def build(spec: NetworkSpec, seed=0) -> Network:
    """He-normal weights, zero biases, gates at their init constant."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for wshape, bshape in _param_shapes(spec):
        fan_in = int(np.prod(wshape[1:])) if len(wshape) == 4 else wshape[0]
        weights.append(rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(bshape))
    gates = {}
    if spec.input_gate is not None:
        gates[INPUT_SITE] = GateParams(np.full(spec.input_shape, spec.input_gate.init),
                                       spec.input_gate.granularity, INPUT_SITE)
    for name, layer, out in zip(spec.layer_names(), spec.layers, spec.output_shapes()):
        if layer.gate is not None:
            gates[name] = GateParams(np.full(_gate_shape(layer.gate, out), layer.gate.init),
                                     layer.gate.granularity, name)
    return Network(spec, weights, biases, gates)


@dataclass
class Trace:
    """Everything ``backward`` needs from one forward pass."""

    mode: GateMode
    batch_size: int
    logits: np.ndarray
    masks: Dict[str, Optional[np.ndarray]]
    tape: list  # (kind, payload) in forward order


@dataclass
class GradientSet:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    gates: Dict[str, np.ndarray]
    loss: float = 0.0
    penalty: float = 0.0


def _gate_forward(net, site, x, mode, rng, masks, tape, used_masks):
    params = net.gates[site]
    if masks is not None and site in masks:
        mask = masks[site]
    else:
        mask = sample_mask(params, mode, rng)
    used_masks[site] = mask
    try:
        y = apply_gate(x, params, mask, mode)
    except DimensionError as exc:
        raise DimensionError(f"gate '{site}': {exc}") from exc
    tape.append(("gate", (site, x, mask)))
    return y


def forward(net: Network, batch, mode: GateMode = GateMode.EVAL,
            rng: Optional[np.random.Generator] = None,
            masks: Optional[Dict[str, np.ndarray]] = None) -> Tuple[np.ndarray, Trace]:
    """Run the network on a batch.

    Train mode samples one mask per gate site for the whole batch, drawing
    from ``rng`` in site order. ``masks`` overrides sampling for the sites it
    names (used by the exact-enumeration oracle).
    """
    mode = GateMode(mode)
    spec = net.spec
    x = T.as_tensor(batch)
    if x.ndim < 1 or x.shape[0] == 0 or x[0].size != spec.input_size():
        raise DimensionError(f"batch of shape {x.shape} does not match input shape {spec.input_shape}")
    n = x.shape[0]
    x = x.reshape((n,) + spec.input_shape)
    if mode is GateMode.TRAIN and rng is None and net.gates and not (
            masks is not None and set(net.gates) <= set(masks)):
        raise ContractError("forward: train mode requires an rng")

    tape = []
    used_masks: Dict[str, Optional[np.ndarray]] = {}
    if INPUT_SITE in net.gates:
        x = _gate_forward(net, INPUT_SITE, x, mode, rng, masks, tape, used_masks)

    for i, (name, layer) in enumerate(zip(spec.layer_names(), spec.layers)):
        w, b = net.weights[i], net.biases[i]
        try:
            if layer.kind is LayerKind.CONV5:
                conv = T.conv2d_valid(x, w, b)
                act = T.relu(conv.output)
                pool = T.maxpool2(act.output)
                tape.append(("conv", (i, conv.backward, act.backward, pool.backward)))
                x = pool.output
            else:
                if x.ndim > 2:
                    tape.append(("flatten", x.shape))
                    x = x.reshape(n, -1)
                mm = T.matmul(x, w)
                z = mm.output + b
                if layer.kind is LayerKind.DENSE:
                    act = T.relu(z)
                    tape.append(("dense", (i, mm.backward, act.backward)))
                    x = act.output
                else:
                    tape.append(("dense", (i, mm.backward, None)))
                    x = z
        except DimensionError as exc:
            raise DimensionError(f"layer '{name}': {exc}") from exc
        if name in net.gates:
            x = _gate_forward(net, name, x, mode, rng, masks, tape, used_masks)

    return x, Trace(mode, n, x, used_masks, tape)


def backward(net: Network, trace: Trace, labels, reg=None, dataset_size: Optional[int] = None,
             weight_decay: float = 0.0) -> GradientSet:
    """Gradients of mean cross-entropy plus the minibatch share of the gate penalty.

    The penalty of every gate site is weighted by ``batch_size / dataset_size``
    so that one pass over the data accumulates it exactly once. Weight decay
    adds ``weight_decay * w`` to weight (not bias, not gate) gradients.
    """
    labels = np.asarray(labels)
    if labels.shape != (trace.batch_size,):
        raise ContractError(
            f"backward: {labels.size} labels for a trace of batch size {trace.batch_size}")
    loss, g = T.softmax_cross_entropy(trace.logits, labels)

    gw = [np.zeros_like(w) for w in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]
    gk = {s: np.zeros_like(p.k) for s, p in net.gates.items()}

    for kind, payload in reversed(trace.tape):
        if kind == "gate":
            site, x, mask = payload
            g, gk[site] = gate_backward(g, x, mask, net.gates[site], trace.mode)
        elif kind == "dense":
            i, mm_back, act_back = payload
            if act_back is not None:
                (g,) = act_back(g)
            gb[i] = g.sum(axis=0)
            g, gw[i] = mm_back(g)
        elif kind == "flatten":
            g = g.reshape(payload)
        elif kind == "conv":
            i, conv_back, act_back, pool_back = payload
            (g,) = pool_back(g)
            (g,) = act_back(g)
            g, gw[i], gb[i] = conv_back(g)

    penalty = 0.0
    if reg is not None and net.gates:
        frac = trace.batch_size / (dataset_size or trace.batch_size)
        for site, p in net.gates.items():
            value, grad = penalty_and_grad(p.k, reg)
            penalty += frac * value
            gk[site] = gk[site] + frac * grad
    if weight_decay:
        for i, w in enumerate(net.weights):
            gw[i] = gw[i] + weight_decay * w
    return GradientSet(gw, gb, gk, loss, penalty)
