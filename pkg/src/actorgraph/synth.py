"""Deterministic synthetic multi-actor scene generator.

Every scene designates two key actors: the uniquely closest pair in the
frame-0 geometry. The group label is a pure function of pairwise structure:
class 0 when the key pair sits beyond the distance threshold (one fifth of
the image width), otherwise 1 + rank of the key actors' unordered action
pair. Crowd actors draw their actions from the non-key classes, and scene
geometry keeps every non-key pair clearly farther apart than the key pair,
so neither a single actor nor the set of present actions determines the
label; recovering it requires relating the right two actors.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError
from .relation import ActorSet

# geometry, in units of the distance threshold (image_width / 5)
NEAR_RANGE = (0.30, 0.85)
FAR_RANGE = (1.10, 1.30)
CROWD_CLEARANCE = 1.45
EDGE_MARGIN = 8.0


@dataclass
class SynthConfig:
    actors_min: int = 5
    actors_max: int = 8
    feature_dim: int = 32
    action_classes: int = 4
    group_classes: int = 7
    image_width: float = 1600.0
    image_height: float = 1200.0
    feature_noise: float = 0.1
    position_jitter: float = 2.0
    frames: int = 9
    near_probability: float = 0.7
    seed: int = 0

    def validate(self):
        if self.group_classes < 2 or self.action_classes < 2:
            raise ConfigError("need at least two group and two action classes")
        if self.feature_dim < self.action_classes:
            raise ConfigError("feature_dim must be >= action_classes")
        if not 2 <= self.actors_min <= self.actors_max:
            raise ConfigError("need actors_min >= 2 and actors_max >= actors_min")
        if self.actors_max > 2 and self.action_classes < 3:
            raise ConfigError("crowd actors need at least one non-key action class")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.feature_noise < 0 or self.position_jitter < 0:
            raise ConfigError("noise levels must be >= 0")
        if not 0.0 <= self.near_probability <= 1.0:
            raise ConfigError("near_probability must lie in [0, 1]")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("image dimensions must be positive")

    @property
    def distance_threshold(self):
        return self.image_width / 5.0


@dataclass
class SceneSample:
    """One video: per-frame actor sets plus per-actor and group labels.

    Actor identity is positional: index i refers to the same actor in every
    frame of the video.
    """

    frames: list  # list[ActorSet], same actor count each
    actions: np.ndarray  # (n,) int action class per actor
    group_label: int
    video_id: int

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        n = self.frames[0].count
        for f in self.frames:
            if f.count != n:
                raise ConfigError("actor count must be consistent across frames of one video")
        if self.actions.shape[0] != n:
            raise LabelError(f"{self.actions.shape[0]} action labels for {n} actors")

    @property
    def actor_count(self):
        return self.frames[0].count


def action_prototypes(config: SynthConfig) -> np.ndarray:
    """Fixed orthogonal class prototypes: unit basis vectors in feature space."""
    protos = np.zeros((config.action_classes, config.feature_dim))
    protos[np.arange(config.action_classes), np.arange(config.action_classes)] = 1.0
    return protos


def pair_rank(a, b, classes):
    """Rank of the unordered pair {a, b}, a != b, in lexicographic order."""
    a, b = (a, b) if a < b else (b, a)
    return a * classes - a * (a + 1) // 2 + (b - a - 1)


def closest_pair(positions) -> tuple:
    """Indices of the two mutually closest actors (lowest-index tie break)."""
    n = positions.shape[0]
    best, best_d = (0, 1), np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(positions[i] - positions[j])))
            if d < best_d:
                best, best_d = (i, j), d
    return best


def relational_group_label(positions, actions, threshold, action_classes, group_classes) -> int:
    """Group label recomputed from geometry and actions alone."""
    i, j = closest_pair(np.asarray(positions, dtype=np.float64))
    dist = float(np.hypot(*(positions[i] - positions[j])))
    if dist > threshold:
        return 0
    return 1 + pair_rank(int(actions[i]), int(actions[j]), action_classes) % (group_classes - 1)


def designated_key_actors(sample: SceneSample) -> tuple:
    """The generator's key pair, recoverable from any stored sample."""
    return closest_pair(sample.frames[0].positions)


def _place_point(rng, width, height):
    return np.array(
        [
            rng.uniform(EDGE_MARGIN, width - EDGE_MARGIN),
            rng.uniform(EDGE_MARGIN, height - EDGE_MARGIN),
        ]
    )


def _in_bounds(p, width, height):
    return EDGE_MARGIN <= p[0] <= width - EDGE_MARGIN and EDGE_MARGIN <= p[1] <= height - EDGE_MARGIN


def _scene_geometry(rng, config, n, near):
    """Base positions: key pair at a controlled distance, crowd well separated.

    Returns None when rejection sampling runs out of attempts; the caller
    retries with fresh draws from the same stream.
    """
    mu = config.distance_threshold
    width, height = config.image_width, config.image_height
    lo, hi = NEAR_RANGE if near else FAR_RANGE
    key_a = _place_point(rng, width, height)
    key_b = None
    for _ in range(200):
        dist = rng.uniform(lo * mu, hi * mu)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        cand = key_a + dist * np.array([np.cos(angle), np.sin(angle)])
        if _in_bounds(cand, width, height):
            key_b = cand
            break
    if key_b is None:
        return None
    placed = [key_a, key_b]
    for _ in range(n - 2):
        ok = None
        for _ in range(500):
            cand = _place_point(rng, width, height)
            if all(np.hypot(*(cand - q)) >= CROWD_CLEARANCE * mu for q in placed):
                ok = cand
                break
        if ok is None:
            return None
        placed.append(ok)
    return np.stack(placed, axis=0)


def _generate_one(rng, config, protos, video_id) -> SceneSample:
    n = int(rng.integers(config.actors_min, config.actors_max + 1))
    near = bool(rng.random() < config.near_probability)

    key_actions = rng.choice(config.action_classes, size=2, replace=False)
    crowd_pool = [c for c in range(config.action_classes) if c not in set(key_actions.tolist())]
    crowd_actions = rng.choice(crowd_pool, size=n - 2) if n > 2 else np.empty(0, dtype=np.int64)
    actions = np.concatenate([key_actions, crowd_actions]).astype(np.int64)

    positions = None
    while positions is None:
        positions = _scene_geometry(rng, config, n, near)

    # shuffle so the key pair lands at random indices
    perm = rng.permutation(n)
    actions = actions[perm]
    positions = positions[perm]

    frames = []
    for _ in range(config.frames):
        feats = protos[actions] + config.feature_noise * rng.standard_normal((n, config.feature_dim))
        pos = positions + config.position_jitter * rng.standard_normal((n, 2))
        frames.append(
            ActorSet(feats, pos, np.zeros(n, dtype=np.int64), 1, config.image_width, config.image_height)
        )

    label = relational_group_label(
        frames[0].positions,
        actions,
        config.distance_threshold,
        config.action_classes,
        config.group_classes,
    )
    return SceneSample(frames, actions, label, video_id)


def generate(config: SynthConfig, count, id_offset=0) -> list:
    """Generate ``count`` scenes; each video uses an rng derived as
    seed XOR video_id, so generation order and partitioning do not matter."""
    config.validate()
    protos = action_prototypes(config)
    samples = []
    for k in range(count):
        video_id = id_offset + k
        rng = np.random.default_rng(config.seed ^ video_id)
        samples.append(_generate_one(rng, config, protos, video_id))
    return samples
