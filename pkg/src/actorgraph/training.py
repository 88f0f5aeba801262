"""Adam optimization, the epoch loop with sparse window resampling, and
evaluation with single-window, per-frame-averaged and sliding-window modes."""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as model_mod
from . import temporal
from .backend import kernels
from .errors import ConfigError, ShapeError
from .model import BoundParams, ModelConfig, ModelParams
from .tensor import Tape


@dataclass
class AdamState:
    """First/second moment buffers per named parameter plus the step count."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        named = params.named_tensors()
        return cls(
            m={n: np.zeros_like(a) for n, a in named},
            v={n: np.zeros_like(a) for n, a in named},
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: ModelParams, grads, state: AdamState, lr):
    """Bias-corrected Adam update, in place on every named parameter."""
    state.step += 1
    for name, arr in params.named_tensors():
        g = grads[name]
        if g.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {arr.shape}")
        kernels.adam_update(arr, g, state.m[name], state.v[name], state.step, lr, state.beta1, state.beta2, state.eps)


@dataclass
class TrainConfig:
    model: ModelConfig
    epochs: int = 30
    batch_size: int = 16
    lr_schedule: tuple = ((0, 2e-4), (20, 1e-5))
    action_loss_weight: float = 1.0
    frames_per_window: int = 3
    eval_stride: int = 1
    score_average: str = "prob"  # or "logit"
    eval_every: int = 0
    seed: int = 0
    threads: int = 1
    variant: str = "arg"  # or "base"

    def validate(self):
        self.model.validate()
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.frames_per_window < 1:
            raise ConfigError("frames_per_window must be >= 1")
        if self.variant not in ("arg", "base"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.score_average not in ("prob", "logit"):
            raise ConfigError(f"unknown score_average {self.score_average!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.lr_schedule:
            raise ConfigError("lr_schedule must not be empty")
        last = -1
        for epoch, lr in self.lr_schedule:
            if epoch <= last:
                raise ConfigError("lr_schedule epochs must be strictly increasing")
            if not lr > 0:
                raise ConfigError("learning rates must be positive")
            last = epoch

    def lr_at(self, epoch):
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["lr_schedule"] = [list(pair) for pair in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["model"] = ModelConfig.from_dict(data["model"])
        data["lr_schedule"] = tuple(tuple(p) for p in data["lr_schedule"])
        return cls(**data)


def _forward_fn(variant):
    return model_mod.predict_base if variant == "base" else model_mod.forward


def _window_labels(sample, frame_count):
    return np.tile(sample.actions, frame_count)


def _run_sample(sample, window, params, config: TrainConfig):
    """Forward+backward for one sample on its own tape; returns loss value,
    gradients by name, and argmax predictions for the running metrics."""
    actors = temporal.assemble_temporal_actorset([sample.frames[t] for t in window])
    labels = _window_labels(sample, len(window))
    tape = Tape()
    bound = BoundParams(tape, params)
    pred = _forward_fn(config.variant)(tape, actors, bound, config.model)
    total = model_mod.loss(tape, pred, sample.group_label, labels, config.action_loss_weight)
    tape.backward(total)
    group_hit = int(np.argmax(pred.group_logits.value[0])) == sample.group_label
    action_hits = int((np.argmax(pred.action_logits.value, axis=1) == labels).sum())
    return total.item(), bound.gradients(), group_hit, action_hits, labels.shape[0]


def train(samples, config: TrainConfig, eval_samples=None, metrics_path=None, log=None):
    """Train on a dataset of scene samples.

    Each epoch visits a seeded shuffle of the samples in mini-batches; every
    visit resamples one window of frames_per_window frames per video. Samples
    inside a batch run on independent tapes (optionally on a thread pool) and
    their gradients are reduced in sample order, so a fixed seed gives a
    bitwise-reproducible run. Returns (params, per-epoch metrics list).
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("training needs a non-empty dataset")
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = model_mod.init_params(config.model, rng)
    state = AdamState.for_params(params)
    metrics = []
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            lr = config.lr_at(epoch)
            order = rng.permutation(len(samples))
            # windows are drawn sequentially up front so the rng stream does
            # not depend on thread interleaving
            windows = [
                temporal.sample_frames(len(samples[i].frames), config.frames_per_window, "random", rng)
                for i in order
            ]
            loss_sum = 0.0
            group_hits = 0
            action_hits = 0
            action_total = 0
            for start in range(0, len(order), config.batch_size):
                chunk = [
                    (samples[order[k]], windows[k]) for k in range(start, min(start + config.batch_size, len(order)))
                ]
                if pool is None:
                    results = [_run_sample(s, w, params, config) for s, w in chunk]
                else:
                    futures = [pool.submit(_run_sample, s, w, params, config) for s, w in chunk]
                    results = [f.result() for f in futures]
                grads = None
                for loss_value, sample_grads, g_hit, a_hit, a_n in results:
                    loss_sum += loss_value
                    group_hits += g_hit
                    action_hits += a_hit
                    action_total += a_n
                    if grads is None:
                        grads = sample_grads
                    else:
                        for name in grads:
                            grads[name] = grads[name] + sample_grads[name]
                adam_step(params, grads, state, lr)
            row = {
                "epoch": epoch,
                "loss": loss_sum / len(samples),
                "group_acc": group_hits / len(samples),
                "indiv_acc": action_hits / action_total,
                "lr": lr,
                "wallclock": time.perf_counter() - t0,
            }
            if eval_samples and config.eval_every and (epoch + 1) % config.eval_every == 0:
                result = evaluate(eval_samples, params, config.model, "single", config.frames_per_window, variant=config.variant)
                row["eval_group_acc"] = result.group_accuracy
                row["eval_indiv_acc"] = result.action_accuracy
            metrics.append(row)
            if sink:
                sink.write(json.dumps(row) + "\n")
                sink.flush()
            if log:
                log.info(
                    "epoch %d loss %.4f group %.3f indiv %.3f lr %g",
                    epoch,
                    row["loss"],
                    row["group_acc"],
                    row["indiv_acc"],
                    lr,
                )
    finally:
        if pool is not None:
            pool.shutdown()
        if sink:
            sink.close()
    return params, metrics


@dataclass
class EvalResult:
    group_accuracy: float
    action_accuracy: float
    confusion: np.ndarray  # (group_classes, group_classes), rows = true class

    @property
    def counts(self):
        return self.confusion.sum(axis=1)


def evaluate(samples, params, config: ModelConfig, mode="single", frames_per_window=3, stride=1, score_average="prob", variant="arg"):
    """Group/action accuracy and the group confusion matrix for a dataset.

    mode "single" runs one segment-centered window per video, "tsn" averages
    per-frame predictions over the centered frames, "sliding" mean-pools all
    consecutive windows of the video. Group arg-max ties break to the lowest
    class id. Action accuracy pools the per-box predictions of every window
    the mode evaluated.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("evaluation needs a non-empty dataset")
    if samples[0].frames[0].feature_dim != config.feature_dim:
        raise ConfigError(
            f"dataset feature dim {samples[0].frames[0].feature_dim} does not match model {config.feature_dim}"
        )
    if mode not in ("single", "tsn", "sliding"):
        raise ConfigError(f"unknown inference mode {mode!r}")
    fwd = _forward_fn(variant)
    confusion = np.zeros((config.group_classes, config.group_classes), dtype=np.int64)
    action_hits = 0
    action_total = 0

    for sample in samples:
        total = len(sample.frames)
        window_action_preds = []

        def model_fn(actors):
            tape = Tape()
            pred = fwd(tape, actors, params, config)
            window_action_preds.append(np.argmax(pred.action_logits.value, axis=1))
            return pred.group_logits.value[0]

        if mode == "sliding":
            probs = temporal.sliding_window_predict(
                sample.frames, frames_per_window, stride, model_fn, score_average
            )
        elif mode == "tsn":
            picked = temporal.sample_frames(total, frames_per_window, "center")
            probs = temporal.tsn_predict([sample.frames[t] for t in picked], model_fn, score_average)
        else:
            picked = temporal.sample_frames(total, frames_per_window, "center")
            actors = temporal.assemble_temporal_actorset([sample.frames[t] for t in picked])
            probs = temporal.softmax_probs(model_fn(actors))
        confusion[sample.group_label, int(np.argmax(probs))] += 1
        for preds in window_action_preds:
            labels = _window_labels(sample, preds.shape[0] // sample.actor_count)
            action_hits += int((preds == labels).sum())
            action_total += labels.shape[0]

    return EvalResult(
        group_accuracy=float(np.trace(confusion)) / len(samples),
        action_accuracy=action_hits / action_total,
        confusion=confusion,
    )
