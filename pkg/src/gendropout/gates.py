"""Binary stochastic multiplicative gates.

A gate site holds learnable retain probabilities ``k``. In ``TRAIN`` mode a
binary mask ``theta ~ bernoulli(clip(k))`` multiplies the gated activations;
``HEAVISIDE`` mode uses ``theta = [k >= 0.5]``; ``EVAL`` mode multiplies by
``clip(k)`` itself (rescaling). Gradients with respect to ``k`` use the
straight-through rule ``d theta / d k = 1`` in every mode.
"""

import csv
import enum
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "GateGranularity",
    "GateMode",
    "GateParams",
    "clip",
    "sample_mask",
    "apply_gate",
    "gate_backward",
    "write_gates_csv",
    "read_gates_csv",
]


class GateGranularity(str, enum.Enum):
    PER_UNIT = "per_unit"
    PER_CHANNEL = "per_channel"
    PER_ACTIVATION = "per_activation"


class GateMode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    HEAVISIDE = "heaviside"


@dataclass
class GateParams:
    """Retain probabilities for one gated site.

    ``k`` has shape ``(n,)`` for per-unit and per-channel gates and the shape
    of the gated block (``C x H x W``) for per-activation gates.
    """

    k: np.ndarray
    granularity: GateGranularity
    site: str = ""

    def __post_init__(self):
        self.k = np.array(self.k, dtype=np.float64)
        self.granularity = GateGranularity(self.granularity)
        if self.granularity is not GateGranularity.PER_ACTIVATION and self.k.ndim != 1:
            raise DimensionError(
                f"{self.granularity.value} gate '{self.site}' needs a 1-d k, got shape {self.k.shape}")

    @property
    def size(self) -> int:
        return self.k.size

    def copy(self) -> "GateParams":
        return GateParams(self.k.copy(), self.granularity, self.site)


def clip(x):
    """Clamp into ``[0, 1]``; works on scalars and arrays, rejects NaN."""
    arr = np.asarray(x, dtype=np.float64)
    if np.isnan(arr).any():
        raise NumericError("clip: NaN input")
    out = np.clip(arr, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def sample_mask(params: GateParams, mode: GateMode, rng: Optional[np.random.Generator] = None):
    """Draw the mask for one site; ``None`` in eval mode.

    Train mode consumes exactly one uniform variate per gate, in row-major
    gate-index order.
    """
    mode = GateMode(mode)
    if mode is GateMode.EVAL:
        return None
    if mode is GateMode.HEAVISIDE:
        return (params.k >= 0.5).astype(np.float64)
    if rng is None:
        raise ContractError(f"sample_mask: train mode on site '{params.site}' requires an rng")
    u = rng.random(params.k.size).reshape(params.k.shape)
    return (u < clip(params.k)).astype(np.float64)


def _factor_view(factor: np.ndarray, params: GateParams, shape: Tuple[int, ...]):
    """Reshape a per-gate array so it broadcasts against activations of ``shape``."""
    g = params.granularity
    if g is GateGranularity.PER_CHANNEL:
        if len(shape) < 3 or shape[-3] != params.k.size:
            raise DimensionError(
                f"per-channel gate '{params.site}' with {params.k.size} gates "
                f"does not match activations {shape}")
        return factor.reshape(-1, 1, 1)
    block = params.k.shape
    if len(shape) < len(block) or tuple(shape[len(shape) - len(block):]) != block:
        raise DimensionError(
            f"{g.value} gate '{params.site}' of shape {block} does not match activations {shape}")
    return factor


def _check_mask(mask, params):
    if mask is None:
        return
    if np.shape(mask) != params.k.shape:
        raise DimensionError(
            f"mask shape {np.shape(mask)} does not match gate '{params.site}' shape {params.k.shape}")


def _multiplier(params, mask, mode):
    mode = GateMode(mode)
    if mode is GateMode.EVAL:
        if mask is not None:
            raise ContractError("apply_gate: eval mode takes no mask")
        return clip(params.k)
    if mask is None:
        raise ContractError(f"apply_gate: {mode.value} mode requires a mask")
    _check_mask(mask, params)
    return np.asarray(mask, dtype=np.float64)


def apply_gate(activations, params: GateParams, mask, mode: GateMode) -> np.ndarray:
    a = np.asarray(activations, dtype=np.float64)
    factor = _multiplier(params, mask, mode)
    return a * _factor_view(factor, params, a.shape)


def gate_backward(upstream, activations, mask, params: GateParams, mode: GateMode):
    """Return ``(grad_activations, grad_k)`` for a gated site.

    ``grad_k`` sums ``upstream * activations`` over every position a gate
    governs (batch axis included), independent of the mode.
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != a.shape:
        raise DimensionError(f"upstream {g.shape} does not match activations {a.shape}")
    factor = _factor_view(_multiplier(params, mask, mode), params, a.shape)
    grad_a = g * factor

    prod = g * a
    if params.granularity is GateGranularity.PER_CHANNEL:
        prod = prod.sum(axis=(-2, -1))
        lead = prod.ndim - 1
    else:
        lead = prod.ndim - params.k.ndim
    grad_k = prod.sum(axis=tuple(range(lead))) if lead else prod
    return grad_a, grad_k.reshape(params.k.shape)


def write_gates_csv(path, gates: Iterable[GateParams]) -> None:
    """One row per gate: ``layer_name, gate_index, k`` with row-major indices."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_name", "gate_index", "k"])
        for p in gates:
            for i, v in enumerate(p.k.ravel()):
                w.writerow([p.site, i, repr(float(v))])


def read_gates_csv(path) -> Dict[str, np.ndarray]:
    """Read a gate dump back into flat per-layer arrays (shape is not stored)."""
    rows: Dict[str, Dict[int, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["layer_name"], {})[int(row["gate_index"])] = float(row["k"])
    out = {}
    for name, entries in rows.items():
        k = np.empty(len(entries))
        for i, v in entries.items():
            k[i] = v
        out[name] = k
    return out
