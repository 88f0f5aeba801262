"""Pairwise actor relations and normalized relation-graph groups.

A relation graph is an N x N row-stochastic matrix whose entry (i, j) weights
actor j's feature contribution to actor i. Entries combine an appearance
similarity (dot product, embedded dot product, or a concat-and-score relation
network) with a position factor (none, a hard distance mask, or a learned
scalar from a sinusoidal distance embedding), normalized per row so each row
sums to 1.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ConfigError, ShapeError
from .tensor import Tape, Var, as_matrix

APPEARANCE_VARIANTS = ("dot", "embedded_dot", "relation_net")
POSITION_VARIANTS = ("none", "mask", "encoding")


@dataclass
class ActorSet:
    """N actors with appearance features, image-plane centers and frame slots.

    All actors share one pixel coordinate system given by image_width/height.
    frame_index says which of the ``num_frames`` temporal slots each actor
    occupies (always 0 for single-frame sets).
    """

    features: np.ndarray  # (n, d)
    positions: np.ndarray  # (n, 2) pixel centers
    frame_index: np.ndarray  # (n,) ints in [0, num_frames)
    num_frames: int
    image_width: float
    image_height: float

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.positions = as_matrix(self.positions)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64).reshape(-1)
        n = self.features.shape[0]
        if n < 1:
            raise ShapeError("an actor set needs at least one actor")
        if self.positions.shape != (n, 2):
            raise ShapeError(f"positions must be ({n}, 2), got {self.positions.shape}")
        if self.frame_index.shape[0] != n:
            raise ShapeError(f"{self.frame_index.shape[0]} frame indices for {n} actors")
        if not np.isfinite(self.positions).all() or not np.isfinite(self.features).all():
            raise ShapeError("actor features/positions must be finite")
        if self.frame_index.size and (
            self.frame_index.min() < 0 or self.frame_index.max() >= self.num_frames
        ):
            raise ShapeError(f"frame indices must lie in [0, {self.num_frames})")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("image dimensions must be positive")

    @property
    def count(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass
class RelationConfig:
    """Choices and sizes for building one group of relation graphs."""

    appearance: str = "embedded_dot"
    position: str = "mask"
    embed_dim: int = 256  # width of the query/key embeddings
    encode_dim: int = 32  # sinusoidal distance embedding width, must be even
    distance_threshold: float | None = None  # pixels; None = image width / 5
    num_graphs: int = 16
    wavelength_base: float = 1000.0

    def validate(self):
        if self.appearance not in APPEARANCE_VARIANTS:
            raise ConfigError(f"unknown appearance variant {self.appearance!r}")
        if self.position not in POSITION_VARIANTS:
            raise ConfigError(f"unknown position variant {self.position!r}")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.encode_dim < 2 or self.encode_dim % 2:
            raise ConfigError("encode_dim must be even and >= 2")
        if self.position == "mask" and self.distance_threshold is not None and not (
            self.distance_threshold > 0
        ):
            raise ConfigError("distance_threshold must be > 0 for the mask variant")
        if self.num_graphs < 1:
            raise ConfigError("num_graphs must be >= 1")
        if self.wavelength_base <= 0:
            raise ConfigError("wavelength_base must be positive")

    def resolve_threshold(self, actors: ActorSet) -> float:
        if self.distance_threshold is not None:
            return float(self.distance_threshold)
        return actors.image_width / 5.0


@dataclass
class GraphRelationParams:
    """Learnable weights for one graph of the group (unused slots stay None)."""

    w_query: np.ndarray | None = None  # (embed_dim, d)
    b_query: np.ndarray | None = None  # (1, embed_dim)
    w_key: np.ndarray | None = None
    b_key: np.ndarray | None = None
    w_pair: np.ndarray | None = None  # (1, 2*embed_dim) relation-net scorer
    b_pair: np.ndarray | None = None  # (1, 1)
    w_enc: np.ndarray | None = None  # (1, encode_dim) distance-encoding scorer
    b_enc: np.ndarray | None = None  # (1, 1)


def init_relation_params(config: RelationConfig, feature_dim: int, rng) -> list[GraphRelationParams]:
    """One independent weight set per graph, uniform in +-1/sqrt(fan_in)."""

    def uniform(rows, cols, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(rows, cols))

    out = []
    for _ in range(config.num_graphs):
        p = GraphRelationParams()
        if config.appearance in ("embedded_dot", "relation_net"):
            p.w_query = uniform(config.embed_dim, feature_dim, feature_dim)
            p.b_query = np.zeros((1, config.embed_dim))
            p.w_key = uniform(config.embed_dim, feature_dim, feature_dim)
            p.b_key = np.zeros((1, config.embed_dim))
        if config.appearance == "relation_net":
            p.w_pair = uniform(1, 2 * config.embed_dim, 2 * config.embed_dim)
            p.b_pair = np.zeros((1, 1))
        if config.position == "encoding":
            p.w_enc = uniform(1, config.encode_dim, config.encode_dim)
            # positive bias keeps every position factor > 0 at initialization,
            # so no relation row can start degenerate
            p.b_enc = np.ones((1, 1))
        out.append(p)
    return out


@dataclass
class RelationGraphGroup:
    """num_graphs row-stochastic N x N graphs plus the 0/1 mask behind them.

    For the "none" and "encoding" position variants the mask is all ones.
    """

    graphs: list  # list[Var], each (n, n)
    mask: np.ndarray  # (n, n) of {0., 1.}

    @property
    def num_graphs(self):
        return len(self.graphs)

    def values(self):
        return [g.value for g in self.graphs]


# -- appearance relations ----------------------------------------------------


def appearance_dot_product(tape: Tape, features: Var) -> Var:
    """Pairwise dot products scaled by 1/sqrt(d)."""
    d = features.shape[1]
    return tape.scale(tape.matmul(features, tape.transpose(features)), 1.0 / math.sqrt(d))


def _embed(tape, features, w, b):
    return tape.add_row(tape.matmul(features, tape.transpose(w)), b)


def appearance_embedded_dot(tape, features, w_query, b_query, w_key, b_key) -> Var:
    """Scaled dot products between learned query/key embeddings of the actors."""
    if w_query.shape != w_key.shape or w_query.shape[1] != features.shape[1]:
        raise ShapeError(
            f"embedding weights {w_query.shape}/{w_key.shape} do not match features {features.shape}"
        )
    embed_dim = w_query.shape[0]
    q = _embed(tape, features, w_query, b_query)
    k = _embed(tape, features, w_key, b_key)
    return tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / math.sqrt(embed_dim))


def appearance_relation_network(tape, features, w_query, b_query, w_key, b_key, w_pair, b_pair) -> Var:
    """Concat-and-score relation: ReLU(w_pair . [query_i ; key_j] + b_pair).

    The pair scores decompose into a per-i and a per-j term, so the n x n
    matrix is assembled from two rank-one products instead of materializing
    every concatenated pair.
    """
    embed_dim = w_query.shape[0]
    if w_pair.shape != (1, 2 * embed_dim):
        raise ShapeError(f"pair scorer must be (1, {2 * embed_dim}), got {w_pair.shape}")
    n = features.shape[0]
    q = _embed(tape, features, w_query, b_query)
    k = _embed(tape, features, w_key, b_key)
    w_left = tape.slice_cols(w_pair, 0, embed_dim)
    w_right = tape.slice_cols(w_pair, embed_dim, 2 * embed_dim)
    u = tape.matmul(q, tape.transpose(w_left))  # (n, 1)
    v = tape.matmul(k, tape.transpose(w_right))  # (n, 1)
    ones_row = tape.constant(np.ones((1, n)))
    ones_col = tape.constant(np.ones((n, 1)))
    scores = tape.add(tape.matmul(u, ones_row), tape.matmul(ones_col, tape.transpose(v)))
    bias = tape.matmul(tape.matmul(ones_col, b_pair), ones_row)
    return tape.relu(tape.add(scores, bias))


# -- position relations ------------------------------------------------------


def position_distance_mask(positions, threshold: float) -> np.ndarray:
    """0/1 matrix marking actor pairs within the Euclidean distance threshold.

    The diagonal is always 1 (self-distance 0), so no softmax row can be empty.
    """
    if not threshold > 0:
        raise ConfigError(f"distance threshold must be > 0, got {threshold}")
    dist = kernels.pairwise_distances(as_matrix(positions))
    return (dist <= threshold).astype(np.float64)


def position_distance_encoding(tape, positions, encode_dim, wavelength_base, w_enc, b_enc) -> Var:
    """Learned nonnegative position factor from sinusoidally embedded distances."""
    if encode_dim % 2:
        raise ConfigError(f"encode_dim must be even, got {encode_dim}")
    if w_enc.shape != (1, encode_dim):
        raise ShapeError(f"encoding scorer must be (1, {encode_dim}), got {w_enc.shape}")
    positions = as_matrix(positions)
    n = positions.shape[0]
    dist = kernels.pairwise_distances(positions)
    embedded = tape.constant(kernels.sincos_encode(dist.reshape(-1), encode_dim, wavelength_base))
    scores = tape.add_row(tape.matmul(embedded, tape.transpose(w_enc)), b_enc)  # (n*n, 1)
    return tape.reshape(tape.relu(scores), n, n)


# -- graph group -------------------------------------------------------------


def _appearance_logits(tape, features, config, params):
    if config.appearance == "dot":
        return appearance_dot_product(tape, features)
    if config.appearance == "embedded_dot":
        return appearance_embedded_dot(
            tape, features, params["w_query"], params["b_query"], params["w_key"], params["b_key"]
        )
    return appearance_relation_network(
        tape,
        features,
        params["w_query"],
        params["b_query"],
        params["w_key"],
        params["b_key"],
        params["w_pair"],
        params["b_pair"],
    )


def build_graph_group(tape, actors, config, relation_params) -> RelationGraphGroup:
    """Build the group of normalized relation graphs for one actor set.

    relation_params holds one GraphRelationParams per graph (unshared weights).
    Fields may be raw arrays (recorded here as fresh tape parameters) or Vars
    already bound to this tape by the caller.
    """
    config.validate()
    if len(relation_params) != config.num_graphs:
        raise ConfigError(f"{len(relation_params)} weight sets for {config.num_graphs} graphs")

    def as_var(arr):
        if arr is None or isinstance(arr, Var):
            return arr
        return tape.parameter(arr)

    n = actors.count
    features = tape.constant(actors.features)
    if config.position == "mask":
        mask = position_distance_mask(actors.positions, config.resolve_threshold(actors))
    else:
        mask = np.ones((n, n))

    graphs = []
    for p in relation_params:
        named = {
            "w_query": as_var(p.w_query),
            "b_query": as_var(p.b_query),
            "w_key": as_var(p.w_key),
            "b_key": as_var(p.b_key),
            "w_pair": as_var(p.w_pair),
            "b_pair": as_var(p.b_pair),
        }
        logits = _appearance_logits(tape, features, config, named)
        if config.position == "encoding":
            factor = position_distance_encoding(
                tape,
                actors.positions,
                config.encode_dim,
                config.wavelength_base,
                as_var(p.w_enc),
                as_var(p.b_enc),
            )
            graphs.append(tape.weighted_row_softmax(logits, factor))
        else:
            graphs.append(tape.masked_row_softmax(logits, mask))
    return RelationGraphGroup(graphs=graphs, mask=mask)


# -- export ------------------------------------------------------------------


def key_actor(graph_values) -> int:
    """Index of the actor with the largest column sum, summed over the group.

    Ties break to the lowest actor index.
    """
    total = np.zeros(graph_values[0].shape[1])
    for g in graph_values:
        total += g.sum(axis=0)
    return int(np.argmax(total))


def graph_group_to_json(graph_values, mask) -> str:
    payload = {
        "n": int(mask.shape[0]),
        "graphs": [g.tolist() for g in graph_values],
        "mask": mask.astype(int).tolist(),
    }
    return json.dumps(payload)


def graph_to_dot(graph, name="relations", edge_threshold=1e-3) -> str:
    """DOT digraph of one relation matrix; edges below the threshold are omitted."""
    lines = [f"digraph {name} {{"]
    n = graph.shape[0]
    for i in range(n):
        lines.append(f'  a{i} [label="actor {i}"];')
    for i in range(n):
        for j in range(n):
            w = graph[i, j]
            if w >= edge_threshold:
                lines.append(f'  a{i} -> a{j} [weight={w:.6f}, label="{w:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
