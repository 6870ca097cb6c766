"""Independent checks: finite differences, exact mask enumeration, binomial tests.

Nothing here shares code paths with the analytic gradients it is used to
verify, apart from the forward pass itself.
"""

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import ContractError, NumericError
from .gates import GateMode, clip
from .network import Network, forward
from .tensor import softmax_cross_entropy

__all__ = [
    "finite_diff",
    "relative_error",
    "FDReport",
    "check_gradients",
    "enumerate_masks",
    "enumerate_expected_loss",
    "binomial_check",
    "MAX_ENUM_GATES",
]

MAX_ENUM_GATES = 12


def finite_diff(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""
    x = np.array(params, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn(x.copy())
        flat[i] = orig - h
        fm = loss_fn(x.copy())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"finite_diff: non-finite loss at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|, 1e-12)`` over a parameter array."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ContractError(f"relative_error: shapes {a.shape} and {n.shape} differ")
    if a.size == 0:
        return 0.0
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n))) / denom


@dataclass
class FDReport:
    step: float
    tolerance: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        lines = [f"{name:>24s}  {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_error:.3e} (tol {self.tolerance:g}, h {self.step:g})")
        return "\n".join(lines)


def check_gradients(cases: Dict[str, Tuple[Callable[[np.ndarray], float], np.ndarray, np.ndarray]],
                    h: float = 1e-5, tol: float = 1e-4) -> FDReport:
    """Compare analytic gradients with central differences.

    ``cases`` maps a parameter name to ``(loss_fn, point, analytic_grad)``.
    """
    report = FDReport(step=h, tolerance=tol)
    for name, (fn, x, analytic) in cases.items():
        report.errors[name] = relative_error(analytic, finite_diff(fn, x, h))
    return report


def enumerate_masks(net: Network) -> Iterator[Tuple[Dict[str, np.ndarray], float]]:
    """Yield every joint gate mask of ``net`` with its probability under train-mode sampling."""
    sites = net.gate_sites()
    probs = {s: clip(net.gates[s].k) for s in sites}
    sizes = [net.gates[s].size for s in sites]
    total = sum(sizes)
    if total > MAX_ENUM_GATES:
        raise ContractError(
            f"enumerate_masks: {total} gates exceeds the limit of {MAX_ENUM_GATES}")
    flat_p = np.concatenate([np.ravel(probs[s]) for s in sites]) if sites else np.zeros(0)
    for bits in itertools.product((0.0, 1.0), repeat=total):
        theta = np.asarray(bits)
        prob = float(np.prod(np.where(theta == 1.0, flat_p, 1.0 - flat_p)))
        masks, start = {}, 0
        for s, size in zip(sites, sizes):
            masks[s] = theta[start:start + size].reshape(net.gates[s].k.shape)
            start += size
        yield masks, prob


def enumerate_expected_loss(net: Network, batch, labels) -> float:
    """Exact expectation of the train-mode cross-entropy over all gate masks."""
    total = 0.0
    for masks, prob in enumerate_masks(net):
        if prob == 0.0:
            continue
        logits, _ = forward(net, batch, GateMode.TRAIN, masks=masks)
        loss, _ = softmax_cross_entropy(logits, labels)
        total += prob * loss
    return total


def binomial_check(samples, p: float, confidence_sigmas: float = 4.0) -> bool:
    """Whether the sample mean of 0/1 ``samples`` is consistent with ``p``."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"binomial_check: p={p} outside [0, 1]")
    if p in (0.0, 1.0):
        return bool(np.all(x == p))
    n = x.size
    bound = confidence_sigmas * np.sqrt(p * (1.0 - p) / n)
    return bool(abs(x.mean() - p) <= bound)
