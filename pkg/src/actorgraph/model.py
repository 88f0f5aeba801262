"""The full recognition head: relation graphs -> fused graph convolution ->
residual aggregation -> scene max-pool -> dual classifiers -> joint loss.

Also owns the checkpoint container: 8-byte magic "ARGMDL01", a
length-prefixed JSON header (config plus named tensor shapes), then raw
little-endian float64 data per tensor in header order.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gcn, relation
from .errors import ConfigError, FormatError, ShapeError
from .relation import ActorSet, RelationConfig
from .tensor import Tape, Var

CHECKPOINT_MAGIC = b"ARGMDL01"


@dataclass
class ModelConfig:
    feature_dim: int
    action_classes: int
    group_classes: int
    relation: RelationConfig = field(default_factory=RelationConfig)
    fusion: str = "sum"

    def validate(self):
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.action_classes < 2 or self.group_classes < 2:
            raise ConfigError("need at least two action and two group classes")
        if self.fusion not in gcn.FUSION_SCHEMES:
            raise ConfigError(f"unknown fusion scheme {self.fusion!r}")
        self.relation.validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["relation"] = RelationConfig(**data["relation"])
        return cls(**data)


@dataclass
class Prediction:
    group_logits: Var  # (1, group_classes)
    action_logits: Var  # (n, action_classes)
    graphs: relation.RelationGraphGroup | None = None


class ModelParams:
    """All learnable weights, with a stable flat (name, array) enumeration
    used by the optimizer, the checkpoint format and gradient checking."""

    def __init__(self, relation_params, gcn_params, w_action, b_action, w_group, b_group):
        self.relation = relation_params  # list[GraphRelationParams]
        self.gcn = gcn_params
        self.w_action = w_action  # (action_classes, d)
        self.b_action = b_action  # (1, action_classes)
        self.w_group = w_group  # (group_classes, d)
        self.b_group = b_group  # (1, group_classes)

    _RELATION_FIELDS = ("w_query", "b_query", "w_key", "b_key", "w_pair", "b_pair", "w_enc", "b_enc")

    def named_tensors(self):
        out = []
        for g, p in enumerate(self.relation):
            for name in self._RELATION_FIELDS:
                arr = getattr(p, name)
                if arr is not None:
                    out.append((f"relation.{g}.{name}", arr))
        for i, w in enumerate(self.gcn.weights):
            out.append((f"gcn.{i}.weight", w))
        if self.gcn.proj is not None:
            out.append(("gcn.proj", self.gcn.proj))
        out.append(("head.action.weight", self.w_action))
        out.append(("head.action.bias", self.b_action))
        out.append(("head.group.weight", self.w_group))
        out.append(("head.group.bias", self.b_group))
        return out

    def copy(self):
        named = dict(self.named_tensors())
        return params_from_tensors(
            {k: v.copy() for k, v in named.items()},
            num_graphs=len(self.relation),
            gcn_count=len(self.gcn.weights),
            has_proj=self.gcn.proj is not None,
        )


def params_from_tensors(tensors, num_graphs, gcn_count, has_proj):
    rel = []
    for g in range(num_graphs):
        p = relation.GraphRelationParams()
        for name in ModelParams._RELATION_FIELDS:
            key = f"relation.{g}.{name}"
            if key in tensors:
                setattr(p, name, tensors[key])
        rel.append(p)
    weights = [tensors[f"gcn.{i}.weight"] for i in range(gcn_count)]
    proj = tensors["gcn.proj"] if has_proj else None
    return ModelParams(
        rel,
        gcn.GcnParams(weights, proj),
        tensors["head.action.weight"],
        tensors["head.action.bias"],
        tensors["head.group.weight"],
        tensors["head.group.bias"],
    )


def init_params(config: ModelConfig, rng) -> ModelParams:
    config.validate()
    d = config.feature_dim
    rel = relation.init_relation_params(config.relation, d, rng)
    g = gcn.init_gcn_params(config.fusion, config.relation.num_graphs, d, rng)
    bound = 1.0 / math.sqrt(d)
    w_action = rng.uniform(-bound, bound, size=(config.action_classes, d))
    w_group = rng.uniform(-bound, bound, size=(config.group_classes, d))
    return ModelParams(
        rel, g, w_action, np.zeros((1, config.action_classes)), w_group, np.zeros((1, config.group_classes))
    )


class BoundParams:
    """ModelParams mirrored onto one tape as parameter Vars.

    Binding once per tape makes every use of a weight share a single node, so
    gradients accumulate in one place and can be read back by name.
    """

    def __init__(self, tape: Tape, params: ModelParams):
        self.vars = {name: tape.parameter(arr) for name, arr in params.named_tensors()}
        num_graphs = len(params.relation)
        self.relation = []
        for g in range(num_graphs):
            p = relation.GraphRelationParams()
            for name in ModelParams._RELATION_FIELDS:
                key = f"relation.{g}.{name}"
                if key in self.vars:
                    setattr(p, name, self.vars[key])
            self.relation.append(p)
        self.gcn = gcn.GcnParams(
            [self.vars[f"gcn.{i}.weight"] for i in range(len(params.gcn.weights))],
            self.vars.get("gcn.proj"),
        )
        self.w_action = self.vars["head.action.weight"]
        self.b_action = self.vars["head.action.bias"]
        self.w_group = self.vars["head.group.weight"]
        self.b_group = self.vars["head.group.bias"]

    def gradients(self):
        return {name: var.grad for name, var in self.vars.items()}


def _heads(tape, aggregated, bound):
    action_logits = tape.add_row(tape.matmul(aggregated, tape.transpose(bound.w_action)), bound.b_action)
    scene = tape.max_over_rows(aggregated)
    group_logits = tape.add_row(tape.matmul(scene, tape.transpose(bound.w_group)), bound.b_group)
    return group_logits, action_logits


def forward(tape, actors: ActorSet, params, config: ModelConfig) -> Prediction:
    """Relational forward pass: graphs, fused convolution, residual sum,
    per-actor action logits and max-pooled scene logits."""
    config.validate()
    if actors.feature_dim != config.feature_dim:
        raise ShapeError(
            f"actor features have dim {actors.feature_dim}, model expects {config.feature_dim}"
        )
    bound = params if isinstance(params, BoundParams) else BoundParams(tape, params)
    group = relation.build_graph_group(tape, actors, config.relation, bound.relation)
    features = tape.constant(actors.features)
    relational = gcn.fuse(tape, group, features, bound.gcn, config.fusion)
    aggregated = tape.add(features, relational)
    group_logits, action_logits = _heads(tape, aggregated, bound)
    return Prediction(group_logits, action_logits, group)


def predict_base(tape, actors: ActorSet, params, config: ModelConfig) -> Prediction:
    """Classifier heads on the raw features, no relational reasoning."""
    config.validate()
    if actors.feature_dim != config.feature_dim:
        raise ShapeError(
            f"actor features have dim {actors.feature_dim}, model expects {config.feature_dim}"
        )
    bound = params if isinstance(params, BoundParams) else BoundParams(tape, params)
    features = tape.constant(actors.features)
    group_logits, action_logits = _heads(tape, features, bound)
    return Prediction(group_logits, action_logits, None)


def loss(tape, pred: Prediction, group_label, action_labels, action_loss_weight=1.0) -> Var:
    """Cross-entropy on the group head plus the weighted mean per-actor
    cross-entropy on the action head."""
    group_term = tape.mean_nll(tape.row_log_softmax(pred.group_logits), [int(group_label)])
    action_term = tape.mean_nll(tape.row_log_softmax(pred.action_logits), action_labels)
    return tape.add(group_term, tape.scale(action_term, action_loss_weight))


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(path, params: ModelParams, config: ModelConfig):
    named = params.named_tensors()
    header = {
        "config": config.to_dict(),
        "tensors": [{"name": n, "rows": a.shape[0], "cols": a.shape[1]} for n, a in named],
        "gcn_count": len(params.gcn.weights),
        "has_proj": params.gcn.proj is not None,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in named:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:8]!r}", offset=0)
    if len(data) < 12:
        raise FormatError("checkpoint truncated before header length", offset=8)
    (hlen,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + hlen:
        raise FormatError("checkpoint truncated inside header", offset=12)
    try:
        header = json.loads(data[12 : 12 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}", offset=12)
    config = ModelConfig.from_dict(header["config"])
    offset = 12 + hlen
    tensors = {}
    for spec in header["tensors"]:
        count = spec["rows"] * spec["cols"]
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"checkpoint truncated in tensor {spec['name']!r}", offset=offset)
        arr = np.frombuffer(data[offset:end], dtype="<f8").reshape(spec["rows"], spec["cols"])
        tensors[spec["name"]] = np.ascontiguousarray(arr)
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after final tensor", offset=offset)
    params = params_from_tensors(
        tensors,
        num_graphs=config.relation.num_graphs,
        gcn_count=header["gcn_count"],
        has_proj=header["has_proj"],
    )
    return params, config
