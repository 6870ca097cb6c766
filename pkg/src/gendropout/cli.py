"""Command line harness: ``gendropout {train,prune,sweep,gate-dump}``."""

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, load_datasets
from .data import subset
from .errors import ConfigError, GenDropoutError
from .gates import write_gates_csv
from .network import GateSpec, LayerKind, build
from .prune import fold_gates, prunable_sites, prune
from .regularizers import default_gate_init, preset
from .train import MetricsWriter, evaluate, train

__all__ = ["main", "run_train", "run_sweep", "run_prune", "parse_thresholds"]

CHECKPOINT = "model.ckpt"


def run_train(cfg: ExperimentConfig, out: Path, stream=sys.stdout, datasets=None):
    """Train per ``cfg``; writes metrics.csv, gates.csv and model.ckpt into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = datasets or load_datasets(cfg)
    net = build(cfg.network, seed=cfg.seed)
    with MetricsWriter(out / "metrics.csv", net.gate_sites(), cfg.train.regularizer, stream) as log:
        history = train(net, train_set, test_set, cfg.train, on_epoch=log)
    write_gates_csv(out / "gates.csv", net.gate_list())
    save_checkpoint(net, out / CHECKPOINT, meta={
        "regularizer": cfg.regularizer_name,
        "seed": cfg.seed,
        "epochs": cfg.train.epochs,
    })
    return net, history


def parse_thresholds(text: str):
    """``auto`` | ``0.5`` | ``fc1=0.5,conv1=auto``."""
    text = text.strip()
    if "=" not in text:
        return text if text == "auto" else float(text)
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        value = value.strip()
        out[name.strip()] = value if value == "auto" else float(value)
    return out


def run_prune(net, thresholds, out: Path, bins: int = 10, test_set=None, fold: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    pruned, report = prune(net, thresholds, bins=bins)
    err_before = evaluate(net, test_set) if test_set is not None else None
    err_after = evaluate(pruned, test_set) if test_set is not None else None
    (out / "report.txt").write_text(report.table("Pruned", err_before, err_after))
    (out / "histogram.csv").write_text(report.histogram_csv())
    save_checkpoint(fold_gates(pruned) if fold else pruned, out / "pruned.ckpt",
                    meta={"pruned_from": report.architecture_before, "folded": fold})
    return pruned, report


def _first_dense(cfg):
    for name, layer in zip(cfg.network.layer_names(), cfg.network.layers):
        if layer.kind is LayerKind.DENSE:
            return name
    raise ConfigError("sweep.layer: network has no dense layer to vary")


def _with_gate_init(spec, init):
    def g(gs):
        return None if gs is None else GateSpec(gs.granularity, init)
    layers = tuple(replace(l, gate=g(l.gate)) for l in spec.layers)
    return replace(spec, layers=layers, input_gate=g(spec.input_gate))


def _sweep_run_config(cfg: ExperimentConfig, value, index: int) -> ExperimentConfig:
    run = cfg.with_seed(cfg.seed + index)
    var = cfg.sweep_variable
    if var == "layer_width":
        name = cfg.sweep_layer or _first_dense(cfg)
        names = cfg.network.layer_names()
        if name not in names:
            raise ConfigError(f"sweep.layer: unknown layer {name!r}")
        widths = [l.width for l in cfg.network.layers]
        widths[names.index(name)] = int(value)
        run = replace(run, network=cfg.network.with_widths(widths))
    elif var == "gate_init":
        run = replace(run, network=_with_gate_init(cfg.network, float(value)))
    elif var in ("sal_ratio", "preset"):
        reg_raw = cfg.raw.get("regularizer") or {}
        if var == "sal_ratio":
            reg = preset("sal", float(value), s=reg_raw.get("s"), scale=float(reg_raw.get("scale", 1.0)),
                         eps=float(reg_raw.get("eps", 1e-6)))
            name = "sal"
        else:
            name = str(value)
            reg = preset(name, float(reg_raw.get("strength", 1.0)), s=reg_raw.get("s"),
                         scale=float(reg_raw.get("scale", 1.0)), eps=float(reg_raw.get("eps", 1e-6)))
        run = replace(run, train=replace(run.train, regularizer=reg), regularizer_name=name)
        if not cfg.explicit_gate_init:
            run = replace(run, network=_with_gate_init(cfg.network, default_gate_init(reg)))
    return run


def _sweep_one(args):
    cfg, value, index, out, datasets = args
    run = _sweep_run_config(cfg, value, index)
    train_set, test_set = datasets
    if cfg.sweep_variable == "data_size":
        train_set = subset(train_set, int(value), seed=cfg.seed)
    net, history = run_train(run, out / f"run{index:02d}", stream=None, datasets=(train_set, test_set))
    last = history[-1]
    row = {"variable": cfg.sweep_variable, "value": value, "seed": run.seed,
           "final_train_error": last.train_error, "final_test_error": last.test_error}
    for s, m in last.mean_gate.items():
        row[f"mean_k_{s}"] = m
    reg = run.train.regularizer
    is_sal = reg is not None and hasattr(reg, "alpha") and reg.alpha < 1 and reg.beta < 1
    if is_sal and prunable_sites(net):
        pruned, report = prune(net, cfg.prune_thresholds, bins=cfg.prune_bins)
        for lp in report.layers:
            row[f"surviving_{lp.name}"] = lp.surviving_width
        row["surviving_total"] = sum(lp.surviving_width for lp in report.layers)
        row["param_count_after"] = report.param_count_after
    return row


def run_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1, stream=sys.stdout) -> List[Dict]:
    if not cfg.sweep_variable or not cfg.sweep_values:
        raise ConfigError("sweep: config has no sweep section or an empty values list")
    out.mkdir(parents=True, exist_ok=True)
    datasets = load_datasets(cfg)
    tasks = [(cfg, v, i, out, datasets) for i, v in enumerate(cfg.sweep_values)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = []
        for t in tasks:
            rows.append(_sweep_one(t))
            if stream is not None:
                r = rows[-1]
                print(f"{r['variable']}={r['value']!s:<12} test_error={r['final_test_error']:.4f}",
                      file=stream)
    columns = []
    for r in rows:
        columns += [c for c in r if c not in columns]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in columns])
    return rows


def _parser():
    p = argparse.ArgumentParser(prog="gendropout", description="learnable-dropout gate experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", type=Path, required=config_required, help="experiment YAML file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")

    common(sub.add_parser("train", help="train one network"), True)
    sp = sub.add_parser("sweep", help="train once per value of a swept variable")
    common(sp, True)
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp = sub.add_parser("prune", help="prune a checkpoint by its gate values")
    common(sp, False)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--thresholds", default=None, help="auto | 0.5 | fc1=0.5,conv1=auto")
    sp.add_argument("--bins", type=int, default=None)
    sp.add_argument("--fold", action="store_true", help="fold surviving gates into weights")
    sp = sub.add_parser("gate-dump", help="write gates.csv from a checkpoint")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--out", type=Path)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = None
        if getattr(args, "config", None) is not None:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
        if args.command == "train":
            run_train(cfg, args.out or Path("runs/train"), stream=sys.stdout)
        elif args.command == "sweep":
            run_sweep(cfg, args.out or Path("runs/sweep"), jobs=args.jobs, stream=sys.stdout)
        elif args.command == "prune":
            net, _ = load_checkpoint(args.checkpoint)
            if args.thresholds is not None:
                thresholds = parse_thresholds(args.thresholds)
            else:
                thresholds = cfg.prune_thresholds if cfg else "auto"
            bins = args.bins or (cfg.prune_bins if cfg else 10)
            test_set = load_datasets(cfg)[1] if cfg else None
            out = args.out or args.checkpoint.parent / "pruned"
            run_prune(net, thresholds, out, bins, test_set, args.fold)
            print((out / "report.txt").read_text(), end="")
        elif args.command == "gate-dump":
            net, _ = load_checkpoint(args.checkpoint)
            out = args.out or args.checkpoint.parent
            out.mkdir(parents=True, exist_ok=True)
            write_gates_csv(out / "gates.csv", net.gate_list())
    except (GenDropoutError, FileNotFoundError, ValueError) as exc:
        print(f"gendropout {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
