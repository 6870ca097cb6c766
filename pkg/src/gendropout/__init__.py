"""Learnable bernoulli dropout gates on a small numpy network engine.

Dropout++ learns per-unit retain probabilities under a beta prior; the
bimodal (alpha, beta < 1) regime drives gates to 0 or 1 so layer widths can
be read off and pruned.
"""

from .errors import (ContractError, DimensionError, GenDropoutError, LabelError,
                     NumericError, PruneError, SpecError, ConfigError)
from .gates import (GateGranularity, GateMode, GateParams, apply_gate, clip,
                    gate_backward, read_gates_csv, sample_mask, write_gates_csv)
from .regularizers import (ALConfig, GDConfig, PRESETS, al_penalty, gd_penalty,
                           gd_penalty_grad, preset)
from .network import (GateSpec, LayerKind, LayerSpec, Network, NetworkSpec, backward,
                      build, forward, gate_count, lenet_spec, mlp_spec, param_count)
from .train import MetricsRow, TrainConfig, evaluate, sgd_step, train
from .prune import PruneReport, fold_gates, gate_histogram, prune, select_threshold_by_gap
from .data import Dataset, load_idx, load_mnist, subset, synthetic_blobs
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
