"""Width selection from learnt gates: histograms, gap thresholds, pruning, folding."""

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from .errors import ContractError, PruneError
from .gates import GateGranularity, GateParams
from .network import LayerKind, Network, param_count

__all__ = [
    "gate_histogram",
    "select_threshold_by_gap",
    "prunable_sites",
    "LayerPrune",
    "PruneReport",
    "prune",
    "fold_gates",
]

PRUNABLE = (GateGranularity.PER_UNIT, GateGranularity.PER_CHANNEL)


def gate_histogram(k, bins: int = 10) -> np.ndarray:
    """Counts in ``bins`` equal-width bins over ``[0, 1]``; 1.0 lands in the last bin."""
    if bins < 2:
        raise ContractError(f"gate_histogram: bins must be >= 2, got {bins}")
    counts, _ = np.histogram(np.asarray(k, dtype=np.float64).ravel(), bins=bins, range=(0.0, 1.0))
    return counts


def select_threshold_by_gap(k) -> float:
    """Midpoint of the largest gap between consecutive sorted gate values.

    Returns 0 (keep everything) when all values are equal.
    """
    v = np.sort(np.asarray(k, dtype=np.float64).ravel())
    if v.size < 2:
        raise ContractError("select_threshold_by_gap: need at least two gate values")
    gaps = np.diff(v)
    i = int(np.argmax(gaps))
    if gaps[i] == 0.0:
        return 0.0
    return float((v[i] + v[i + 1]) / 2.0)


def prunable_sites(net: Network) -> List[str]:
    return [s for s in net.layer_names
            if s in net.gates and net.gates[s].granularity in PRUNABLE]


@dataclass
class LayerPrune:
    name: str
    original_width: int
    surviving_width: int
    threshold: float


@dataclass
class PruneReport:
    layers: List[LayerPrune]
    architecture_before: str
    architecture_after: str
    param_count_before: int
    param_count_after: int
    histograms: Dict[str, np.ndarray] = field(default_factory=dict)
    bins: int = 10

    def table(self, method: str = "pruned", error_before: Optional[float] = None,
              error_after: Optional[float] = None) -> str:
        """Text table with Architecture / Error (%) / No. of Params columns."""
        def err(e):
            return "-" if e is None else f"{100.0 * e:.2f}"
        rows = [("Method", "Architecture", "Error (%)", "No. of Params"),
                ("Original", self.architecture_before, err(error_before), f"{self.param_count_before:,}"),
                (method, self.architecture_after, err(error_after), f"{self.param_count_after:,}")]
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*rows[0]), "-+-".join("-" * w for w in widths)]
        lines += [fmt.format(*r) for r in rows[1:]]
        lines.append("")
        lines.append(fmt.format("Layer", "Width", "Kept", "Threshold").rstrip())
        for lp in self.layers:
            lines.append(fmt.format(lp.name, str(lp.original_width), str(lp.surviving_width),
                                    f"{lp.threshold:.4g}").rstrip())
        return "\n".join(lines) + "\n"

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer_name", "bin", "bin_low", "bin_high", "count"])
        for name, counts in self.histograms.items():
            for b, c in enumerate(counts):
                w.writerow([name, b, repr(b / self.bins), repr((b + 1) / self.bins), int(c)])
        return buf.getvalue()


def _next_layer_rows(kind_next: LayerKind, keep: np.ndarray, spatial: int) -> np.ndarray:
    """Selector over the next layer's input axis for a kept set of units/channels."""
    if kind_next is LayerKind.CONV5:
        return keep
    return np.repeat(keep, spatial)


def prune(net: Network, thresholds: Union[str, float, Mapping[str, Union[str, float]]] = "auto",
          bins: int = 10):
    """Remove units/channels whose gate value is below their layer's threshold.

    ``thresholds`` is ``"auto"`` (largest-gap rule per layer), a single number
    for every prunable layer, or a mapping from layer name to either. Layers
    absent from a mapping are left untouched. Returns ``(pruned_net, report)``.
    """
    sites = prunable_sites(net)
    if not sites:
        raise PruneError("network has no per-unit or per-channel gates to prune")
    if isinstance(thresholds, Mapping):
        unknown = set(thresholds) - set(sites)
        if unknown:
            raise PruneError(f"no prunable gate on layer(s) {sorted(unknown)}", layer=sorted(unknown)[0])
        chosen = dict(thresholds)
    else:
        chosen = {s: thresholds for s in sites}

    names = net.layer_names
    spec = net.spec
    shapes = spec.output_shapes()
    out = net.copy()
    layers = list(spec.layers)
    report_layers = []
    histograms = {}

    for i, name in enumerate(names):
        if name not in sites:
            continue
        k = net.gates[name].k
        histograms[name] = gate_histogram(k, bins)
        if name not in chosen:
            continue
        t = chosen[name]
        t = select_threshold_by_gap(k) if t == "auto" else float(t)
        keep = k >= t
        if not keep.any():
            raise PruneError(
                f"threshold {t:.4g} removes every unit of layer '{name}' (max k = {k.max():.4g})",
                layer=name)
        report_layers.append(LayerPrune(name, k.size, int(keep.sum()), t))
        # outgoing side of this layer
        out.weights[i] = out.weights[i][keep] if layers[i].kind is LayerKind.CONV5 else out.weights[i][:, keep]
        out.biases[i] = out.biases[i][keep]
        out.gates[name] = GateParams(out.gates[name].k[keep], out.gates[name].granularity, name)
        # incoming side of the next layer
        nxt = layers[i + 1]
        spatial = int(np.prod(shapes[i][1:])) if len(shapes[i]) == 3 else 1
        sel = _next_layer_rows(nxt.kind, keep, spatial)
        out.weights[i + 1] = out.weights[i + 1][:, sel] if nxt.kind is LayerKind.CONV5 else out.weights[i + 1][sel]
        layers[i] = replace(layers[i], width=int(keep.sum()))

    out.spec = replace(spec, layers=tuple(layers))
    report = PruneReport(report_layers, spec.architecture(), out.spec.architecture(),
                         param_count(spec), param_count(out.spec), histograms, bins)
    return out, report


def fold_gates(net: Network) -> Network:
    """Multiply per-unit/per-channel gate values into the next layer's weights.

    The folded network has no gates on those layers and the same eval-mode
    output (up to rounding), so it can be deployed without gate logic.
    """
    out = net.copy()
    spec = net.spec
    shapes = spec.output_shapes()
    layers = list(spec.layers)
    for i, name in enumerate(net.layer_names):
        p = net.gates.get(name)
        if p is None or p.granularity not in PRUNABLE:
            continue
        k = np.clip(p.k, 0.0, 1.0)
        nxt = layers[i + 1]
        if nxt.kind is LayerKind.CONV5:
            out.weights[i + 1] = out.weights[i + 1] * k[None, :, None, None]
        else:
            spatial = int(np.prod(shapes[i][1:])) if len(shapes[i]) == 3 else 1
            out.weights[i + 1] = out.weights[i + 1] * np.repeat(k, spatial)[:, None]
        del out.gates[name]
        layers[i] = replace(layers[i], gate=None)
    out.spec = replace(spec, layers=tuple(layers))
    return out
