"""Sparse temporal sampling, temporal graph assembly across sampled frames,
and window-pooled inference over full videos."""

import numpy as np

from .errors import SamplingError, ShapeError
from .relation import ActorSet


def sample_frames(total, count, mode="random", rng=None):
    """Pick one frame per equal contiguous segment of [0, total).

    The remainder frames go to the leading segments. "random" draws uniformly
    inside each segment, "center" takes each segment's middle index. The
    result is strictly increasing.
    """
    if count < 1:
        raise SamplingError(f"need at least one frame, asked for {count}")
    if total < count:
        raise SamplingError(f"cannot sample {count} frames from a {total}-frame video")
    base, extra = divmod(total, count)
    out = []
    lo = 0
    for seg in range(count):
        size = base + (1 if seg < extra else 0)
        if mode == "center":
            out.append(lo + (size - 1) // 2)
        elif mode == "random":
            if rng is None:
                rng = np.random.default_rng()
            out.append(int(rng.integers(lo, lo + size)))
        else:
            raise SamplingError(f"unknown sampling mode {mode!r}")
        lo += size
    return out


def assemble_temporal_actorset(frame_sets):
    """Stack per-frame actor sets into one set whose graph spans all frames.

    Actors keep their 2-D image positions, so any distance masking applies
    across frames exactly as it does within one frame.
    """
    frame_sets = list(frame_sets)
    if not frame_sets:
        raise ShapeError("need at least one frame set")
    d = frame_sets[0].feature_dim
    width, height = frame_sets[0].image_width, frame_sets[0].image_height
    for s in frame_sets:
        if s.feature_dim != d:
            raise ShapeError(f"feature dims differ across frames: {s.feature_dim} vs {d}")
        if (s.image_width, s.image_height) != (width, height):
            raise ShapeError("frames use different coordinate systems")
    features = np.concatenate([s.features for s in frame_sets], axis=0)
    positions = np.concatenate([s.positions for s in frame_sets], axis=0)
    frame_index = np.concatenate(
        [np.full(s.count, t, dtype=np.int64) for t, s in enumerate(frame_sets)]
    )
    return ActorSet(features, positions, frame_index, len(frame_sets), width, height)


def softmax_probs(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _pool_scores(per_window, score_average):
    stacked = np.stack(per_window, axis=0)
    if score_average == "logit":
        return softmax_probs(stacked.mean(axis=0))
    return np.stack([softmax_probs(row) for row in stacked], axis=0).mean(axis=0)


def sliding_window_predict(frames, window, stride, model_fn, score_average="prob"):
    """Mean-pooled group scores over consecutive-frame windows of a video.

    model_fn maps an assembled ActorSet to a 1-D group logit vector. Scores
    from all windows are averaged as probabilities (or as logits when
    score_average="logit"); windows are visited in order for a deterministic
    reduction.
    """
    frames = list(frames)
    if len(frames) < window:
        raise SamplingError(f"video has {len(frames)} frames, window needs {window}")
    per_window = []
    for start in range(0, len(frames) - window + 1, stride):
        actors = assemble_temporal_actorset(frames[start : start + window])
        per_window.append(np.asarray(model_fn(actors), dtype=np.float64).reshape(-1))
    return _pool_scores(per_window, score_average)


def tsn_predict(frame_sets, model_fn, score_average="prob"):
    """Average the group scores of independent single-frame predictions."""
    frame_sets = list(frame_sets)
    if not frame_sets:
        raise SamplingError("need at least one frame")
    per_frame = [
        np.asarray(model_fn(assemble_temporal_actorset([s])), dtype=np.float64).reshape(-1)
        for s in frame_sets
    ]
    return _pool_scores(per_frame, score_average)
