"""Experiment config files (YAML).

Schema (every key optional unless marked)::

    seed: 0
    data:
      kind: synthetic | mnist              # required
      # synthetic
      n: 200                               # training examples
      test_n: 200
      classes: 2
      dim: 2
      separation: 10.0
      # mnist
      dir: data/mnist                      # IDX directory (train-*, t10k-*)
      subset: 5000                         # stratified training subset size
      test_subset: null                    # stratified test subset size
    network:                               # required
      input_shape: [1, 28, 28]             # inferred from data when omitted
      gate_init: null                      # default init for gates without one
      input_gate: per_activation           # or {granularity: ..., init: ...}
      layers:                              # required
        - {kind: conv5, width: 20, gate: per_channel}
        - {kind: dense, width: 500, gate: {granularity: per_unit, init: 1.0}}
        - {kind: output, width: 10}
    regularizer:
      preset: dropout_pp_flat              # or sal, dropout_pp_half/one/zero
      strength: 1.0                        # beta/alpha ratio for sal
      s: null                              # sal alpha
      scale: 1.0
      eps: 1.0e-6
      # or: {kind: al, lambda1: ..., lambda3: ...}
    train:
      learning_rate: 0.05
      momentum: 0.9
      gate_lr_multiplier: 1.0
      epochs: 10
      batch_size: 64
      weight_decay: 0.0
      mask_mode: train                     # or heaviside
    sweep:
      variable: layer_width                # data_size | layer_width | gate_init | sal_ratio | preset
      values: [32, 128, 512]
      layer: fc1                           # layer_width only; default first dense layer
    prune:
      thresholds: auto                     # number, or {layer: number | auto}
      bins: 10
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .data import Dataset, load_mnist, subset, synthetic_blobs
from .errors import ConfigError, GenDropoutError
from .gates import GateGranularity
from .network import GateSpec, LayerKind, LayerSpec, NetworkSpec
from .regularizers import ALConfig, GDConfig, default_gate_init, preset
from .train import TrainConfig

__all__ = ["ExperimentConfig", "SWEEP_VARIABLES", "load_config", "parse_config", "load_datasets"]

SWEEP_VARIABLES = ("data_size", "layer_width", "gate_init", "sal_ratio", "preset")


class _Lines:
    """Dotted field path -> 1-based line number, from the YAML node tree."""

    def __init__(self, node):
        self.lines: Dict[str, int] = {}
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, f"{path}[{i}]")

    def of(self, path):
        while path and path not in self.lines:
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return self.lines.get(path)


class _Reader:
    def __init__(self, lines: _Lines, source: str):
        self.lines = lines
        self.source = source

    def error(self, path, message):
        line = self.lines.of(path)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: field '{path}': {message}")

    def get(self, d, path, key, kind, default=None, required=False, choices=None):
        full = f"{path}.{key}" if path else key
        if not isinstance(d, dict):
            raise self.error(path, "expected a mapping")
        if key not in d or d[key] is None:
            if required:
                raise self.error(full, "is required")
            return default
        v = d[key]
        try:
            if kind is bool:
                if not isinstance(v, bool):
                    raise ValueError
            elif kind is int:
                if isinstance(v, bool) or int(v) != v:
                    raise ValueError
                v = int(v)
            elif kind is float:
                if isinstance(v, bool):
                    raise ValueError
                v = float(v)
            elif kind is str:
                v = str(v)
        except (TypeError, ValueError):
            raise self.error(full, f"expected {kind.__name__}, got {v!r}") from None
        if choices is not None and v not in choices:
            raise self.error(full, f"unknown value {v!r}; expected one of {', '.join(map(str, choices))}")
        return v


@dataclass
class DataConfig:
    kind: str
    n: int = 200
    test_n: int = 200
    classes: int = 2
    dim: int = 2
    separation: float = 10.0
    dir: Optional[str] = None
    subset: Optional[int] = None
    test_subset: Optional[int] = None


@dataclass
class ExperimentConfig:
    seed: int
    data: DataConfig
    network: NetworkSpec
    train: TrainConfig
    regularizer_name: str
    sweep_variable: Optional[str] = None
    sweep_values: List[Any] = field(default_factory=list)
    sweep_layer: Optional[str] = None
    prune_thresholds: Union[str, float, Dict[str, Union[str, float]]] = "auto"
    prune_bins: int = 10
    explicit_gate_init: bool = False
    raw: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


def _regularizer(r: _Reader, d) -> (Union[GDConfig, ALConfig, None], str):
    if d is None:
        return preset("dropout_pp_flat"), "dropout_pp_flat"
    kind = r.get(d, "regularizer", "kind", str, default="gd", choices=("gd", "al", "none"))
    if kind == "none":
        return None, "none"
    if kind == "al":
        return ALConfig(r.get(d, "regularizer", "lambda1", float, 0.0),
                        r.get(d, "regularizer", "lambda3", float, 0.0),
                        r.get(d, "regularizer", "scale", float, 1.0)), "al"
    name = r.get(d, "regularizer", "preset", str, default="dropout_pp_flat")
    try:
        return preset(name,
                      r.get(d, "regularizer", "strength", float, 1.0),
                      s=r.get(d, "regularizer", "s", float, None),
                      scale=r.get(d, "regularizer", "scale", float, 1.0),
                      eps=r.get(d, "regularizer", "eps", float, 1e-6)), name
    except ConfigError as exc:
        raise r.error("regularizer.preset", str(exc)) from None


def _gate(r: _Reader, g, path, default_init):
    if g is None:
        return None
    if isinstance(g, str):
        g = {"granularity": g}
    gran = r.get(g, path, "granularity", str, required=True,
                 choices=[x.value for x in GateGranularity])
    init = r.get(g, path, "init", float, default_init)
    try:
        return GateSpec(gran, init)
    except GenDropoutError as exc:
        raise r.error(path, str(exc)) from None


def _input_shape_from_data(data: DataConfig):
    return (1, 28, 28) if data.kind == "mnist" else (data.dim,)


def parse_config(doc: dict, lines: Optional[_Lines] = None, source: str = "<config>") -> ExperimentConfig:
    r = _Reader(lines or _Lines(None), source)
    if not isinstance(doc, dict):
        raise r.error("", "top level must be a mapping")
    seed = r.get(doc, "", "seed", int, 0)

    dd = doc.get("data")
    if dd is None:
        raise r.error("data", "is required")
    data = DataConfig(
        kind=r.get(dd, "data", "kind", str, required=True, choices=("synthetic", "mnist")),
        n=r.get(dd, "data", "n", int, 200),
        test_n=r.get(dd, "data", "test_n", int, 200),
        classes=r.get(dd, "data", "classes", int, 2),
        dim=r.get(dd, "data", "dim", int, 2),
        separation=r.get(dd, "data", "separation", float, 10.0),
        dir=r.get(dd, "data", "dir", str, None),
        subset=r.get(dd, "data", "subset", int, None),
        test_subset=r.get(dd, "data", "test_subset", int, None),
    )

    reg, reg_name = _regularizer(r, doc.get("regularizer"))

    nd = doc.get("network")
    if nd is None:
        raise r.error("network", "is required")
    explicit_init = r.get(nd, "network", "gate_init", float, None)
    gate_init = explicit_init if explicit_init is not None else default_gate_init(reg)
    layers_doc = nd.get("layers") if isinstance(nd, dict) else None
    if not layers_doc or not isinstance(layers_doc, list):
        raise r.error("network.layers", "must be a non-empty list")
    layers = []
    for i, ld in enumerate(layers_doc):
        path = f"network.layers[{i}]"
        kind = r.get(ld, path, "kind", str, required=True, choices=[k.value for k in LayerKind])
        width = r.get(ld, path, "width", int, required=True)
        try:
            layers.append(LayerSpec(kind, width, _gate(r, ld.get("gate"), f"{path}.gate", gate_init),
                                    r.get(ld, path, "name", str, None)))
        except ConfigError:
            raise
        except GenDropoutError as exc:
            raise r.error(path, str(exc)) from None
    shape = nd.get("input_shape") or _input_shape_from_data(data)
    try:
        network = NetworkSpec(tuple(shape), tuple(layers),
                              _gate(r, nd.get("input_gate"), "network.input_gate", gate_init))
    except ConfigError:
        raise
    except GenDropoutError as exc:
        raise r.error("network", str(exc)) from None

    td = doc.get("train") or {}
    try:
        train = TrainConfig(
            learning_rate=r.get(td, "train", "learning_rate", float, 0.05),
            momentum=r.get(td, "train", "momentum", float, 0.9),
            gate_lr_multiplier=r.get(td, "train", "gate_lr_multiplier", float, 1.0),
            epochs=r.get(td, "train", "epochs", int, 10),
            batch_size=r.get(td, "train", "batch_size", int, 64),
            seed=seed,
            weight_decay=r.get(td, "train", "weight_decay", float, 0.0),
            regularizer=reg,
            mask_mode=r.get(td, "train", "mask_mode", str, "train", choices=("train", "heaviside")),
        )
    except ConfigError:
        raise
    except GenDropoutError as exc:
        raise r.error("train", str(exc)) from None

    cfg = ExperimentConfig(seed, data, network, train, reg_name, explicit_gate_init=explicit_init is not None,
                           raw=doc)

    sd = doc.get("sweep")
    if sd is not None:
        cfg.sweep_variable = r.get(sd, "sweep", "variable", str, required=True, choices=SWEEP_VARIABLES)
        values = sd.get("values")
        if not isinstance(values, list) or not values:
            raise r.error("sweep.values", "must be a non-empty list")
        cfg.sweep_values = values
        cfg.sweep_layer = r.get(sd, "sweep", "layer", str, None)

    pd = doc.get("prune")
    if pd is not None:
        t = pd.get("thresholds", "auto") if isinstance(pd, dict) else None
        if not (t == "auto" or isinstance(t, (int, float, dict))):
            raise r.error("prune.thresholds", f"expected 'auto', a number or a mapping, got {t!r}")
        cfg.prune_thresholds = t
        cfg.prune_bins = r.get(pd, "prune", "bins", int, 10)
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    return parse_config(doc or {}, _Lines(node), str(path))


def load_datasets(cfg: ExperimentConfig, base_dir=None):
    """Return ``(train_set, test_set)`` for a config; image data is flattened for MLPs."""
    d = cfg.data
    if d.kind == "synthetic":
        train = synthetic_blobs(d.n, d.classes, d.dim, d.separation, seed=cfg.seed, name="blobs-train")
        test = synthetic_blobs(d.test_n, d.classes, d.dim, d.separation, seed=cfg.seed + 10_000,
                               name="blobs-test")
    else:
        directory = d.dir
        if directory is not None and base_dir is not None and not Path(directory).is_absolute():
            candidate = Path(base_dir) / directory
            directory = candidate if candidate.exists() else directory
        train = load_mnist(directory, "train")
        test = load_mnist(directory, "t10k")
        if d.subset is not None:
            train = subset(train, d.subset, seed=cfg.seed)
        if d.test_subset is not None:
            test = subset(test, d.test_subset, seed=cfg.seed)
    if len(cfg.network.input_shape) == 1:
        train, test = train.flat(), test.flat()
    return train, test
