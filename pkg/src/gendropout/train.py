"""Minibatch SGD for gated networks.

Each minibatch draws a single gate mask (one Monte-Carlo sample), and gate
parameters are clipped back into ``[0, 1]`` after every step. Shuffling and
mask sampling use two independent streams derived from the seed, so a run
whose gates never change consumes the same shuffles as an ungated run.
"""

import csv
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .data import Dataset
from .errors import ContractError
from .gates import GateMode
from .network import Network, backward, forward
from .regularizers import ALConfig, GDConfig, gd_penalty, al_penalty, preset

__all__ = [
    "TrainConfig",
    "MetricsRow",
    "Velocity",
    "sgd_step",
    "train",
    "evaluate",
    "total_penalty",
    "MetricsWriter",
]


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    gate_lr_multiplier: float = 1.0
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    regularizer: Union[GDConfig, ALConfig, None] = field(
        default_factory=lambda: preset("dropout_pp_flat"))
    mask_mode: GateMode = GateMode.TRAIN

    def __post_init__(self):
        self.mask_mode = GateMode(self.mask_mode)
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.gate_lr_multiplier < 0:
            raise ContractError(f"gate_lr_multiplier must be nonnegative, got {self.gate_lr_multiplier}")
        if self.mask_mode is GateMode.EVAL:
            raise ContractError("mask_mode must be 'train' or 'heaviside'")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    train_error: float
    test_error: float
    penalty: float
    mean_gate: Dict[str, float] = field(default_factory=dict)


@dataclass
class Velocity:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "Velocity":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def sgd_step(net: Network, grads, cfg: TrainConfig, velocity: Optional[Velocity] = None) -> Network:
    """In-place update: momentum SGD on weights and biases, plain clipped SGD on gates."""
    if velocity is None:
        velocity = Velocity.zeros_like(net)
    lr, mu = cfg.learning_rate, cfg.momentum
    for params, vel, grad in ((net.weights, velocity.weights, grads.weights),
                              (net.biases, velocity.biases, grads.biases)):
        for p, v, g in zip(params, vel, grad):
            v *= mu
            v -= lr * g
            p += v
    gate_lr = lr * cfg.gate_lr_multiplier
    if gate_lr:
        for site, p in net.gates.items():
            k = p.k - gate_lr * grads.gates[site]
            np.clip(k, 0.0, 1.0, out=p.k)
    return net


def evaluate(net: Network, ds: Dataset, batch_size: int = 1000) -> float:
    """Eval-mode (rescaled) classification error; argmax ties go to the lowest class."""
    if len(ds) == 0:
        return 0.0
    wrong = 0
    for start in range(0, len(ds), batch_size):
        logits, _ = forward(net, ds.images[start:start + batch_size], GateMode.EVAL)
        wrong += int((np.argmax(logits, axis=1) != ds.labels[start:start + batch_size]).sum())
    return wrong / len(ds)


def total_penalty(net: Network, reg) -> float:
    """Full (whole-dataset) prior term summed over all gate sites."""
    if reg is None:
        return 0.0
    if isinstance(reg, ALConfig):
        return sum(al_penalty(p.k, reg)[0] for p in net.gates.values())
    return sum(gd_penalty(p.k, reg) for p in net.gates.values())


def _check_data(net, ds, what):
    if len(ds) == 0:
        raise ContractError(f"{what} set is empty")
    per_example = int(np.prod(ds.images.shape[1:]))
    if per_example != net.spec.input_size():
        raise ContractError(
            f"{what} examples have {per_example} values; network expects {net.spec.input_shape}")


def train(net: Network, train_set: Dataset, test_set: Optional[Dataset], cfg: TrainConfig,
          on_epoch: Optional[Callable[[MetricsRow], None]] = None) -> List[MetricsRow]:
    _check_data(net, train_set, "train")
    if test_set is not None:
        _check_data(net, test_set, "test")
    shuffle_seq, mask_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    mask_rng = np.random.default_rng(mask_seq)
    velocity = Velocity.zeros_like(net)
    n = len(train_set)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, trace = forward(net, train_set.images[idx], cfg.mask_mode, mask_rng)
            grads = backward(net, trace, train_set.labels[idx], cfg.regularizer,
                             dataset_size=n, weight_decay=cfg.weight_decay)
            sgd_step(net, grads, cfg, velocity)
            loss_sum += grads.loss * len(idx)
        row = MetricsRow(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_error=evaluate(net, train_set),
            test_error=evaluate(net, test_set) if test_set is not None else float("nan"),
            penalty=total_penalty(net, cfg.regularizer),
            mean_gate={s: float(net.gates[s].k.mean()) for s in net.gate_sites()},
        )
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return history


class MetricsWriter:
    """Streams metric rows to a CSV file and fixed-width lines on a text stream."""

    def __init__(self, path, gate_sites, reg=None, stream=sys.stdout):
        self.gate_sites = list(gate_sites)
        self.stream = stream
        self.reg_cols = _reg_columns(reg)
        self._fh = open(path, "w", newline="") if path is not None else None
        self._csv = csv.writer(self._fh) if self._fh else None
        header = ["epoch", "train_loss", "train_error", "test_error", "penalty"]
        header += [f"mean_k_{s}" for s in self.gate_sites] + list(self.reg_cols)
        if self._csv:
            self._csv.writerow(header)
            self._fh.flush()
        if self.stream is not None:
            print(" ".join(f"{h:>12.12s}" for h in header[:5] + header[5:5 + len(self.gate_sites)]),
                  file=self.stream)

    def __call__(self, row: MetricsRow):
        values = [row.epoch, repr(row.train_loss), repr(row.train_error), repr(row.test_error),
                  repr(row.penalty)]
        values += [repr(row.mean_gate.get(s, float("nan"))) for s in self.gate_sites]
        values += list(self.reg_cols.values())
        if self._csv:
            self._csv.writerow(values)
            self._fh.flush()
        if self.stream is not None:
            nums = [row.train_loss, row.train_error, row.test_error, row.penalty]
            nums += [row.mean_gate.get(s, float("nan")) for s in self.gate_sites]
            print(f"{row.epoch:>12d} " + " ".join(f"{v:>12.5g}" for v in nums), file=self.stream)

    def close(self):
        if self._fh:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _reg_columns(reg) -> Dict[str, str]:
    if isinstance(reg, GDConfig):
        return {"regularizer": reg.label, "alpha": repr(reg.alpha), "beta": repr(reg.beta),
                "scale": repr(reg.scale)}
    if isinstance(reg, ALConfig):
        return {"regularizer": "al", "lambda1": repr(reg.lambda1), "lambda3": repr(reg.lambda3),
                "scale": repr(reg.scale)}
    return {"regularizer": "none"}
