"""Penalties on gate retain probabilities.

The beta-prior penalty is the negative log of a beta(alpha, beta)
density (up to its normalizer)::

    P(k) = scale * sum_i [ -(alpha - 1) log k_i - (beta - 1) log(1 - k_i) ]

evaluated at ``k`` clamped to ``[eps, 1 - eps]``. The Architecture Learning
penalty is ``sum_i lambda1 k_i (1 - k_i) + lambda3 k_i``.

Presets are named by where they push ``k`` under gradient descent:

=================  =====================  ==========================
name               alpha, beta            effect
=================  =====================  ==========================
dropout_pp_half    1 + s, 1 + s           pulls k toward 0.5
dropout_pp_flat    1, 1                   no penalty
dropout_pp_one     1 + s, 1               pushes k toward 1
dropout_pp_zero    1, 1 + s               pushes k toward 0
sal                s, s * ratio (< 1)     pushes k to 0 or 1
=================  =====================  ==========================
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigError

__all__ = [
    "GDConfig",
    "ALConfig",
    "PRESETS",
    "preset",
    "gd_penalty",
    "gd_penalty_grad",
    "al_penalty",
    "penalty_and_grad",
    "default_gate_init",
]

PRESETS = ("dropout_pp_half", "dropout_pp_flat", "dropout_pp_one", "dropout_pp_zero", "sal")

DEFAULT_SAL_S = 0.05


@dataclass(frozen=True)
class GDConfig:
    alpha: float = 1.0
    beta: float = 1.0
    scale: float = 1.0
    eps: float = 1e-6
    name: Optional[str] = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")
        if self.scale < 0:
            raise ConfigError(f"scale must be nonnegative, got {self.scale}")
        if not 0 < self.eps < 0.5:
            raise ConfigError(f"eps must lie in (0, 0.5), got {self.eps}")

    @property
    def label(self) -> str:
        return self.name or "gd"


@dataclass(frozen=True)
class ALConfig:
    lambda1: float = 0.0
    lambda3: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda3 < 0:
            raise ConfigError(f"lambdas must be nonnegative, got {self.lambda1}, {self.lambda3}")

    @property
    def label(self) -> str:
        return "al"


Regularizer = Union[GDConfig, ALConfig, None]


def preset(name: str, strength: float = 1.0, *, s: Optional[float] = None,
           scale: float = 1.0, eps: float = 1e-6) -> GDConfig:
    """Build a :class:`GDConfig` for a named regime.

    ``strength`` is the excess exponent for the Dropout++ presets and the
    ratio ``beta / alpha`` for ``sal``. For ``sal``, ``s`` (alpha) defaults to
    ``min(0.05, 0.5 / ratio)`` so that beta stays below 1.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    if not strength > 0:
        raise ConfigError(f"preset strength must be positive, got {strength}")
    if name == "dropout_pp_half":
        a = b = 1.0 + strength
    elif name == "dropout_pp_flat":
        a = b = 1.0
    elif name == "dropout_pp_one":
        a, b = 1.0 + strength, 1.0
    elif name == "dropout_pp_zero":
        a, b = 1.0, 1.0 + strength
    else:
        ratio = strength
        if s is None:
            s = min(DEFAULT_SAL_S, 0.5 / ratio)
        a, b = s, s * ratio
        if not (0 < a < 1 and 0 < b < 1):
            raise ConfigError(
                f"sal needs alpha, beta in (0, 1); got alpha={a}, beta={b} (s={s}, ratio={ratio})")
    return GDConfig(alpha=a, beta=b, scale=scale, eps=eps, name=name)


def default_gate_init(reg: Regularizer) -> float:
    """Initial gate value used when a config does not set one."""
    if isinstance(reg, GDConfig) and reg.alpha < 1 and reg.beta < 1:
        return 0.5
    return 1.0


def _clamped(k, eps):
    return np.clip(np.asarray(k, dtype=np.float64), eps, 1.0 - eps)


def gd_penalty(k, cfg: GDConfig) -> float:
    kt = _clamped(k, cfg.eps)
    terms = -(cfg.alpha - 1.0) * np.log(kt) - (cfg.beta - 1.0) * np.log1p(-kt)
    return float(cfg.scale * terms.sum())


def gd_penalty_grad(k, cfg: GDConfig) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    kt = _clamped(k, cfg.eps)
    grad = cfg.scale * (-(cfg.alpha - 1.0) / kt + (cfg.beta - 1.0) / (1.0 - kt))
    # inside a clamp, drop components whose descent step points further out
    below = (k < cfg.eps) & (grad > 0)
    above = (k > 1.0 - cfg.eps) & (grad < 0)
    grad[below | above] = 0.0
    return grad


def al_penalty(k, cfg: ALConfig) -> Tuple[float, np.ndarray]:
    k = np.asarray(k, dtype=np.float64)
    value = cfg.scale * float(np.sum(cfg.lambda1 * k * (1.0 - k) + cfg.lambda3 * k))
    grad = cfg.scale * (cfg.lambda1 * (1.0 - 2.0 * k) + cfg.lambda3)
    return value, grad


def penalty_and_grad(k, reg: Regularizer) -> Tuple[float, np.ndarray]:
    """Dispatch on the regularizer type; ``None`` means no penalty."""
    if reg is None:
        return 0.0, np.zeros(np.shape(k))
    if isinstance(reg, ALConfig):
        return al_penalty(k, reg)
    return gd_penalty(k, reg), gd_penalty_grad(k, reg)
