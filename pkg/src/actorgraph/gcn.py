"""One-layer graph convolution over a relation-graph group, with three ways
of fusing the per-graph outputs: late elementwise sum, late column
concatenation followed by a learned projection back to d, and early graph
summation before a single convolution."""

import math

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Var

FUSION_SCHEMES = ("sum", "concat", "early")


class GcnParams:
    """Convolution weights: one d x d matrix per graph for the late schemes,
    a single matrix for early fusion, plus the (num_graphs*d) x d projection
    used only by concat fusion."""

    def __init__(self, weights, proj=None):
        self.weights = list(weights)
        self.proj = proj

    def validate(self, fusion, num_graphs):
        if fusion not in FUSION_SCHEMES:
            raise ConfigError(f"unknown fusion scheme {fusion!r}")
        expected = 1 if fusion == "early" else num_graphs
        if len(self.weights) != expected:
            raise ConfigError(
                f"{fusion} fusion over {num_graphs} graphs needs {expected} weight "
                f"matrices, got {len(self.weights)}"
            )
        if fusion == "concat" and self.proj is None:
            raise ConfigError("concat fusion needs a projection matrix")


def init_gcn_params(fusion, num_graphs, feature_dim, rng) -> GcnParams:
    bound = 1.0 / math.sqrt(feature_dim)
    count = 1 if fusion == "early" else num_graphs
    weights = [rng.uniform(-bound, bound, size=(feature_dim, feature_dim)) for _ in range(count)]
    proj = None
    if fusion == "concat":
        fan_in = num_graphs * feature_dim
        proj = rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), size=(fan_in, feature_dim))
    return GcnParams(weights, proj)


def _as_var(tape, arr):
    return arr if isinstance(arr, Var) else tape.parameter(arr)


def gcn_layer(tape, graph, features, weight) -> Var:
    """ReLU(G . Z . W): one round of relation-weighted feature aggregation."""
    if graph.shape[0] != graph.shape[1]:
        raise ShapeError(f"graph must be square, got {graph.shape}")
    if graph.shape[1] != features.shape[0]:
        raise ShapeError(f"graph {graph.shape} does not match features {features.shape}")
    if weight.shape[0] != features.shape[1]:
        raise ShapeError(f"weight {weight.shape} does not match features {features.shape}")
    return tape.relu(tape.matmul(tape.matmul(graph, features), weight))


def fuse_late_sum(tape, group, features, params: GcnParams) -> Var:
    """Elementwise sum of the per-graph convolutions, each with its own weight."""
    params.validate("sum", group.num_graphs)
    out = None
    for graph, w in zip(group.graphs, params.weights):
        term = gcn_layer(tape, graph, features, _as_var(tape, w))
        out = term if out is None else tape.add(out, term)
    return out


def fuse_late_concat(tape, group, features, params: GcnParams) -> Var:
    """Column-concatenate the per-graph convolutions, then project back to d."""
    params.validate("concat", group.num_graphs)
    parts = [
        gcn_layer(tape, graph, features, _as_var(tape, w))
        for graph, w in zip(group.graphs, params.weights)
    ]
    return tape.matmul(tape.concat_cols(parts), _as_var(tape, params.proj))


def fuse_early(tape, group, features, params: GcnParams) -> Var:
    """Sum the graphs first, then run a single convolution.

    The summed graph's rows total num_graphs; it is deliberately not
    renormalized.
    """
    params.validate("early", group.num_graphs)
    total = group.graphs[0]
    for graph in group.graphs[1:]:
        total = tape.add(total, graph)
    return gcn_layer(tape, total, features, _as_var(tape, params.weights[0]))


_FUSERS = {"sum": fuse_late_sum, "concat": fuse_late_concat, "early": fuse_early}


def fuse(tape, group, features, params: GcnParams, scheme: str) -> Var:
    if scheme not in _FUSERS:
        raise ConfigError(f"unknown fusion scheme {scheme!r}")
    return _FUSERS[scheme](tape, group, features, params)
