"""Structure extraction and complexity measures for pruned networks."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence

import numpy as np

from .models import FEATURE_NAMES, N_FEATURES, N_STATES, OUTPUT_NAMES
from .nn import MlpModel, reachability

# Largest x with exp(x) representable as a double.
LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def _input_names(n: int) -> tuple[str, ...]:
    return FEATURE_NAMES if n == N_FEATURES else tuple(f"in{i + 1}" for i in range(n))


def _output_names(n: int) -> tuple[str, ...]:
    return OUTPUT_NAMES if n == N_STATES else tuple(f"out{i + 1}" for i in range(n))


def node_name(shape: Sequence[int], layer: int, index: int) -> str:
    if layer == 0:
        return _input_names(shape[0])[index]
    if layer == len(shape) - 1:
        return _output_names(shape[-1])[index]
    return f"h{layer}_{index + 1}"


@dataclass
class StructureGraph:
    """Layered graph of active weights; adjacency[j][k, i] is the edge i -> k
    from layer j to layer j + 1."""

    shape: tuple[int, ...]
    adjacency: list[np.ndarray]
    linear_collapse: list[bool] = field(default_factory=list)

    def edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        out = []
        for j, a in enumerate(self.adjacency):
            for k, i in zip(*np.nonzero(a)):
                out.append(((j, int(i)), (j + 1, int(k))))
        return out

    def nodes(self) -> list[tuple[int, int]]:
        """Nodes touching at least one edge, in layer order."""
        seen = {n for e in self.edges() for n in e}
        return sorted(seen)

    def output_subgraph(self, output: int) -> "StructureGraph":
        """Edges lying on some input -> output path."""
        fwd = [np.ones(self.shape[0], dtype=bool)]
        for a in self.adjacency:
            fwd.append((a & fwd[-1][None, :]).any(axis=1))
        bwd = np.zeros(self.shape[-1], dtype=bool)
        bwd[output] = True
        kept: list[np.ndarray] = [np.empty(0)] * len(self.adjacency)
        for j in range(len(self.adjacency) - 1, -1, -1):
            kept[j] = self.adjacency[j] & bwd[:, None] & fwd[j][None, :]
            bwd = kept[j].any(axis=0)
        return StructureGraph(shape=self.shape, adjacency=kept)

    def feature_basis(self, output: int) -> list[str]:
        sub = self.output_subgraph(output)
        used = sub.adjacency[0].any(axis=0)
        names = _input_names(self.shape[0])
        return [names[i] for i in np.flatnonzero(used)]

    def hidden_widths(self) -> list[int]:
        """Live neurons per hidden layer (any incoming or outgoing edge)."""
        widths = []
        for j in range(1, len(self.shape) - 1):
            live = self.adjacency[j - 1].any(axis=1) | self.adjacency[j].any(axis=0)
            widths.append(int(live.sum()))
        return widths


def _collapses(adjacency: Sequence[np.ndarray]) -> bool:
    # Hidden-to-hidden layers are adjacency[1:-1]; a neuron summing two or
    # more hidden units breaks the single-path composition.
    return all(int(a.sum(axis=1).max(initial=0)) < 2 for a in adjacency[1:-1])


def extract_structure(model: MlpModel) -> StructureGraph:
    graph = StructureGraph(shape=model.shape, adjacency=model.active())
    graph.linear_collapse = [
        _collapses(graph.output_subgraph(i).adjacency) for i in range(model.shape[-1])
    ]
    return graph


def feature_presence(model: MlpModel) -> np.ndarray:
    """(n_inputs, n_outputs) boolean: a path of active edges joins input j to output i."""
    return reachability(model)


@dataclass
class FeatureFrequencyTable:
    """Percent of models in which feature j reaches output i."""

    percent: np.ndarray
    n_models: int

    @property
    def row_names(self) -> tuple[str, ...]:
        return _input_names(self.percent.shape[0])

    @property
    def column_names(self) -> tuple[str, ...]:
        return _output_names(self.percent.shape[1])

    def to_dict(self) -> dict:
        return {
            "n_models": self.n_models,
            "features": {
                row: dict(zip(self.column_names, self.percent[j].tolist()))
                for j, row in enumerate(self.row_names)
            },
        }


def frequency_table(models: Sequence[MlpModel]) -> FeatureFrequencyTable:
    if not models:
        raise ValueError("frequency table needs at least one model")
    shape = models[0].shape
    for m in models[1:]:
        if m.shape != shape:
            raise ValueError(f"shape mismatch: {m.shape} vs {shape}")
    stack = np.stack([feature_presence(m) for m in models]).astype(float)
    return FeatureFrequencyTable(percent=stack.mean(axis=0) * 100.0, n_models=len(models))


def _canonical_label(graph: StructureGraph, output: int) -> str:
    sub = graph.output_subgraph(output)
    labels = list(_input_names(graph.shape[0]))
    for a in sub.adjacency:
        nxt = []
        for k in range(a.shape[0]):
            preds = sorted(labels[i] for i in np.flatnonzero(a[k]))
            nxt.append("(" + ",".join(preds) + ")" if preds else "")
        labels = nxt
    return labels[output]


def structure_signature(model: MlpModel, output: int) -> str:
    """Short id of one output's active subnetwork, invariant to hidden-neuron order."""
    label = _canonical_label(extract_structure(model), output)
    return hashlib.sha256(label.encode("utf-8")).hexdigest()[:12]


@dataclass
class StructureShare:
    signature: str
    count: int
    percent: float
    features: list[str]
    linear: bool
    hidden_widths: list[int]
    log_region_upper: Optional[float]

    def to_dict(self) -> dict:
        return {
            "signature": self.signature,
            "count": self.count,
            "percent": self.percent,
            "features": self.features,
            "linear": self.linear,
            "hidden_widths": self.hidden_widths,
            "log_region_upper": self.log_region_upper,
        }


def common_structures(
    models: Sequence[MlpModel], output: int, top: Optional[int] = None
) -> list[StructureShare]:
    """Most common structures for one output, largest share first.

    Ties keep first-seen order. The region bound uses d = features in the
    basis and n = widest live hidden layer of that structure.
    """
    if not models:
        raise ValueError("no models given")
    counts: Counter[str] = Counter()
    first: dict[str, StructureShare] = {}
    for m in models:
        graph = extract_structure(m)
        sig = structure_signature(m, output)
        counts[sig] += 1
        if sig in first:
            continue
        sub = graph.output_subgraph(output)
        features = graph.feature_basis(output)
        widths = sub.hidden_widths()
        log_upper = None
        n = max(widths, default=0)
        if features and n > 0:
            log_upper = region_bounds(len(features), n, len(widths)).log_upper
        first[sig] = StructureShare(
            signature=sig,
            count=0,
            percent=0.0,
            features=features,
            linear=graph.linear_collapse[output],
            hidden_widths=widths,
            log_region_upper=log_upper,
        )
    ranked = []
    for sig, count in counts.most_common(top):
        share = first[sig]
        share.count = count
        share.percent = 100.0 * count / len(models)
        ranked.append(share)
    return ranked


def matrix_op_count(shape: Sequence[int]) -> int:
    """Multiply-accumulate count of one forward pass: sum of L_j * L_{j+1}."""
    if len(shape) < 2:
        raise ValueError(f"need at least 2 layers, got {list(shape)}")
    return sum(int(a) * int(b) for a, b in zip(shape[:-1], shape[1:]))


@dataclass(frozen=True)
class RegionBounds:
    """Linear-region bounds for L hidden layers of n ReLUs on d inputs.

    upper = n^(dL); lower = (n/d)^((L-1)d) * n^d, asymptotic constants dropped.
    The lower expression drops below 1 when n < d.
    """

    d: int
    n: int
    L: int
    log_upper: float
    log_lower: float

    @property
    def upper(self) -> float:
        return float(self.n ** (self.d * self.L))

    @property
    def lower(self) -> float:
        return float(Fraction(self.n, self.d) ** ((self.L - 1) * self.d) * self.n**self.d)

    @property
    def log10_upper(self) -> float:
        return self.log_upper / math.log(10)

    @property
    def log10_lower(self) -> float:
        return self.log_lower / math.log(10)

    def fits(self) -> bool:
        return max(self.log_upper, self.log_lower) <= LOG_FLOAT_MAX

    def to_dict(self) -> dict:
        d = {
            "d": self.d,
            "n": self.n,
            "L": self.L,
            "log10_upper": self.log10_upper,
            "log10_lower": self.log10_lower,
        }
        if self.fits():
            d.update(upper=self.upper, lower=self.lower)
        return d


def region_bounds(d: int, n: int, L: int) -> RegionBounds:
    for name, value in (("d", d), ("n", n), ("L", L)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be an integer >= 1, got {value}")
    d, n, L = int(d), int(n), int(L)
    log_upper = d * L * math.log(n)
    log_lower = (L - 1) * d * math.log(n / d) + d * math.log(n)
    return RegionBounds(d=d, n=n, L=L, log_upper=log_upper, log_lower=log_lower)


def to_dot(
    graph: StructureGraph,
    output: Optional[int] = None,
    title: str = "structure",
    provenance: Optional[dict[str, Any]] = None,
) -> str:
    """DOT text, one rank per layer; pass `output` for that output's subgraph.

    `provenance` goes into a leading `// key=value` comment.
    """
    g = graph if output is None else graph.output_subgraph(output)
    nodes = g.nodes()
    lines = []
    if provenance:
        lines.append("// " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)))
    lines += [f'digraph "{title}" {{', "  rankdir=LR;", "  node [shape=circle, fontsize=10];"]
    layers: dict[int, list[str]] = {}
    for layer, idx in nodes:
        layers.setdefault(layer, []).append(node_name(g.shape, layer, idx))
    for layer in sorted(layers):
        names = " ".join(f'"{n}";' for n in layers[layer])
        lines.append(f"  {{ rank=same; {names} }}")
    for (la, ia), (lb, ib) in g.edges():
        lines.append(f'  "{node_name(g.shape, la, ia)}" -> "{node_name(g.shape, lb, ib)}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
