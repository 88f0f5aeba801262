"""Central finite-difference validation of every backward rule.

Two sections: unit checks of each primitive tape op, and end-to-end loss
gradients for all appearance x position x fusion variant combinations on a
small scene. Relative error uses a 1e-3 denominator floor so near-zero
gradients compare on an absolute scale instead of amplifying finite-difference
noise.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .gcn import FUSION_SCHEMES
from .model import BoundParams, ModelConfig
from .relation import APPEARANCE_VARIANTS, POSITION_VARIANTS, ActorSet, RelationConfig
from .tensor import Tape

DEFAULT_STEP = 1e-6
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-3


@dataclass
class CheckRow:
    section: str  # "op" or "model"
    name: str
    max_rel_err: float
    param_count: int

    @property
    def passed(self):
        return self.max_rel_err < TOLERANCE


def relative_error(analytic, fd):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), ERROR_FLOOR)
    return float(np.max(np.abs(analytic - fd) / denom)) if analytic.size else 0.0


def finite_difference(loss_fn, arrays, h=DEFAULT_STEP):
    """Central-difference gradient of loss_fn w.r.t. each array, elementwise."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + h
            hi = loss_fn()
            flat[i] = keep - h
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def _tape_sum(tape, x):
    """Full-matrix sum as a 1x1 tape value."""
    m, n = x.shape
    ones_left = tape.constant(np.ones((1, m)))
    ones_right = tape.constant(np.ones((n, 1)))
    return tape.matmul(tape.matmul(ones_left, x), ones_right)


def _projected(tape, x, proj):
    return _tape_sum(tape, tape.mul(x, tape.constant(proj)))


def check_arrays(build, arrays, h=DEFAULT_STEP):
    """Compare tape gradients of build(tape, vars) against finite differences."""
    tape = Tape()
    var_list = [tape.parameter(a) for a in arrays]
    tape.backward(build(tape, *var_list))
    analytic = [v.grad for v in var_list]

    def loss_fn():
        t = Tape()
        return build(t, *[t.parameter(a) for a in arrays]).item()

    fd = finite_difference(loss_fn, arrays, h)
    err = max(relative_error(a, f) for a, f in zip(analytic, fd))
    return err, sum(a.size for a in arrays)


def _away_from_kink(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return x + np.sign(x) * gap


def _op_cases(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    c = rng.standard_normal((3, 4))
    proj34 = rng.standard_normal((3, 4))
    proj32 = rng.standard_normal((3, 2))
    proj55 = rng.standard_normal((5, 5))
    logits = rng.standard_normal((5, 5))
    mask = (rng.random((5, 5)) < 0.6).astype(np.float64)
    np.fill_diagonal(mask, 1.0)
    weights = rng.random((5, 5)) + 0.1
    labels = rng.integers(0, 4, size=5)

    cases = {
        "matmul": (lambda t, x, y: _projected(t, t.matmul(x, y), proj32), [a, b]),
        "add": (lambda t, x, y: _projected(t, t.add(x, y), proj34), [a, c]),
        "add_row": (lambda t, x, y: _projected(t, t.add_row(x, y), proj34), [a, rng.standard_normal((1, 4))]),
        "sub": (lambda t, x, y: _projected(t, t.sub(x, y), proj34), [a, c]),
        "mul": (lambda t, x, y: _projected(t, t.mul(x, y), proj34), [a, c]),
        "scale": (lambda t, x: _projected(t, t.scale(x, -1.7), proj34), [a]),
        "transpose": (lambda t, x: _projected(t, t.transpose(t.transpose(x)), proj34), [a]),
        "concat_cols": (lambda t, x, y: _projected(t, t.concat_cols([x, t.matmul(y, t.constant(np.ones((2, 1))))]), rng.standard_normal((4, 5))), [rng.standard_normal((4, 4)), rng.standard_normal((4, 2))]),
        "slice_cols": (lambda t, x: _projected(t, t.slice_cols(x, 1, 3), rng.standard_normal((3, 2))), [a]),
        "reshape": (lambda t, x: _projected(t, t.reshape(x, 2, 6), rng.standard_normal((2, 6))), [a]),
        "relu": (lambda t, x: _projected(t, t.relu(x), proj34), [_away_from_kink(rng, (3, 4))]),
        "exp": (lambda t, x: _projected(t, t.exp(x), proj34), [a * 0.5]),
        "log": (lambda t, x: _projected(t, t.log(x), proj34), [rng.random((3, 4)) + 0.5]),
        "row_sum": (lambda t, x: _projected(t, t.row_sum(x), rng.standard_normal((3, 1))), [a]),
        "max_over_rows": (lambda t, x: _projected(t, t.max_over_rows(x), rng.standard_normal((1, 4))), [a]),
        "masked_row_softmax": (lambda t, x: _projected(t, t.masked_row_softmax(x, mask), proj55), [logits]),
        "weighted_row_softmax": (lambda t, x, w: _projected(t, t.weighted_row_softmax(x, w), proj55), [logits, weights]),
        "row_log_softmax": (lambda t, x: _projected(t, t.row_log_softmax(x), proj55), [logits]),
        "mean_nll": (lambda t, x: t.mean_nll(t.row_log_softmax(x), labels), [rng.standard_normal((5, 4))]),
    }
    return cases


def check_ops(seed=0, h=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    rows = []
    for name, (build, arrays) in _op_cases(rng).items():
        err, count = check_arrays(build, arrays, h)
        rows.append(CheckRow("op", name, err, count))
    return rows


def make_scene(rng, n=4, d=8, image_width=100.0):
    """Small scene with a mix of near and far actor pairs."""
    features = rng.standard_normal((n, d))
    positions = rng.uniform(5.0, 95.0, size=(n, 2))
    return ActorSet(features, positions, np.zeros(n, dtype=np.int64), 1, image_width, image_width)


def combo_config(appearance, position, fusion, d=8, num_graphs=2):
    return ModelConfig(
        feature_dim=d,
        action_classes=3,
        group_classes=4,
        relation=RelationConfig(
            appearance=appearance,
            position=position,
            embed_dim=d,
            encode_dim=4,
            distance_threshold=55.0,
            num_graphs=num_graphs,
        ),
        fusion=fusion,
    )


def check_model_combo(appearance, position, fusion, seed=0, n=4, d=8, num_graphs=2, h=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    config = combo_config(appearance, position, fusion, d, num_graphs)
    params = model_mod.init_params(config, rng)
    actors = make_scene(rng, n, d)
    group_label = int(rng.integers(0, config.group_classes))
    action_labels = rng.integers(0, config.action_classes, size=n)

    def loss_value():
        tape = Tape()
        pred = model_mod.forward(tape, actors, params, config)
        return model_mod.loss(tape, pred, group_label, action_labels, 1.0).item()

    tape = Tape()
    bound = BoundParams(tape, params)
    pred = model_mod.forward(tape, actors, bound, config)
    tape.backward(model_mod.loss(tape, pred, group_label, action_labels, 1.0))
    grads = bound.gradients()

    named = params.named_tensors()
    fd = finite_difference(lambda: loss_value(), [arr for _, arr in named], h)
    err = max(relative_error(grads[name], f) for (name, _), f in zip(named, fd))
    return CheckRow("model", f"{appearance}+{position}+{fusion}", err, sum(a.size for _, a in named))


def run_suite(seed=0, h=DEFAULT_STEP):
    """All op checks plus the 27 variant combinations; returns (rows, passed)."""
    rows = check_ops(seed, h)
    for appearance in APPEARANCE_VARIANTS:
        for position in POSITION_VARIANTS:
            for fusion in FUSION_SCHEMES:
                rows.append(check_model_combo(appearance, position, fusion, seed=seed, h=h))
    return rows, all(r.passed for r in rows)


def format_report(rows):
    width = max(len(r.name) for r in rows)
    lines = []
    for section in ("op", "model"):
        part = [r for r in rows if r.section == section]
        if not part:
            continue
        lines.append(f"[{section}] {len(part)} checks")
        for r in part:
            flag = "ok " if r.passed else "FAIL"
            lines.append(f"  {flag} {r.name:<{width}}  max rel err {r.max_rel_err:.3e}  ({r.param_count} params)")
    worst = max(rows, key=lambda r: r.max_rel_err)
    lines.append(f"worst: {worst.name} at {worst.max_rel_err:.3e} (tolerance {TOLERANCE:g})")
    return "\n".join(lines)
