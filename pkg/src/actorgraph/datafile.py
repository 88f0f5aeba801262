"""Binary dataset container for generated or externally extracted features.

Layout: 8-byte magic "ARGDS01\\0", a little-endian u32 header length, a JSON
header (sample count, feature dim, frames per video, class counts, image
dims), then per sample: actor count (i32), per-frame positions (f64), frame
indices (i32), per-frame features (f64), group label (i32) and per-actor
action labels (i32). All floats are little-endian float64.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FormatError, LabelError
from .relation import ActorSet
from .synth import SceneSample, SynthConfig

DATASET_MAGIC = b"ARGDS01\x00"


@dataclass
class DatasetInfo:
    count: int
    feature_dim: int
    frames: int
    action_classes: int
    group_classes: int
    image_width: float
    image_height: float
    id_offset: int = 0  # video_id of the first sample; ids are contiguous

    @classmethod
    def for_config(cls, config: SynthConfig, count, id_offset=0):
        return cls(
            count=count,
            feature_dim=config.feature_dim,
            frames=config.frames,
            action_classes=config.action_classes,
            group_classes=config.group_classes,
            image_width=config.image_width,
            image_height=config.image_height,
            id_offset=id_offset,
        )


def _validate_sample(sample: SceneSample, info: DatasetInfo):
    if len(sample.frames) != info.frames:
        raise FormatError(f"video {sample.video_id} has {len(sample.frames)} frames, header says {info.frames}")
    if sample.frames[0].feature_dim != info.feature_dim:
        raise FormatError(
            f"video {sample.video_id} has feature dim {sample.frames[0].feature_dim}, header says {info.feature_dim}"
        )
    if not 0 <= sample.group_label < info.group_classes:
        raise LabelError(f"group label {sample.group_label} out of range [0, {info.group_classes})")
    if sample.actions.size and (sample.actions.min() < 0 or sample.actions.max() >= info.action_classes):
        raise LabelError(f"action label out of range [0, {info.action_classes})")


def write_dataset(path, samples, info: DatasetInfo):
    samples = list(samples)
    info.count = len(samples)
    if samples:
        info.id_offset = samples[0].video_id
    blob = json.dumps(asdict(info)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k, sample in enumerate(samples):
            if sample.video_id != info.id_offset + k:
                raise FormatError(
                    f"video ids must be contiguous from {info.id_offset}, sample {k} has id {sample.video_id}"
                )
            _validate_sample(sample, info)
            n = sample.actor_count
            fh.write(struct.pack("<i", n))
            positions = np.concatenate([f.positions for f in sample.frames], axis=0)
            fh.write(positions.astype("<f8").tobytes())
            frame_idx = np.repeat(np.arange(info.frames, dtype="<i4"), n)
            fh.write(frame_idx.tobytes())
            features = np.concatenate([f.features for f in sample.frames], axis=0)
            fh.write(features.astype("<f8").tobytes())
            fh.write(struct.pack("<i", int(sample.group_label)))
            fh.write(sample.actions.astype("<i4").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError(f"file truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def i32(self, what):
        return struct.unpack("<i", self.take(4, what))[0]


def read_dataset(path):
    """Read a dataset file back into (DatasetInfo, list[SceneSample])."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(8, "magic")
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}", offset=0)
    hlen = struct.unpack("<I", r.take(4, "header length"))[0]
    try:
        info = DatasetInfo(**json.loads(r.take(hlen, "header")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"bad dataset header: {exc}", offset=12)

    samples = []
    for k in range(info.count):
        n = r.i32(f"actor count of sample {k}")
        if n < 1:
            raise FormatError(f"sample {k} has actor count {n}", offset=r.offset - 4)
        t = info.frames
        positions = np.frombuffer(r.take(8 * t * n * 2, f"positions of sample {k}"), dtype="<f8")
        positions = positions.reshape(t, n, 2)
        frame_idx = np.frombuffer(r.take(4 * t * n, f"frame indices of sample {k}"), dtype="<i4")
        expected = np.repeat(np.arange(t, dtype="<i4"), n)
        if not np.array_equal(frame_idx, expected):
            raise FormatError(f"sample {k} frame indices are not frame-major", offset=r.offset)
        features = np.frombuffer(r.take(8 * t * n * info.feature_dim, f"features of sample {k}"), dtype="<f8")
        features = features.reshape(t, n, info.feature_dim)
        group_label = r.i32(f"group label of sample {k}")
        actions = np.frombuffer(r.take(4 * n, f"action labels of sample {k}"), dtype="<i4").astype(np.int64)
        frames = [
            ActorSet(
                features[i],
                positions[i],
                np.zeros(n, dtype=np.int64),
                1,
                info.image_width,
                info.image_height,
            )
            for i in range(t)
        ]
        sample = SceneSample(frames, actions, int(group_label), video_id=info.id_offset + k)
        _validate_sample(sample, info)
        samples.append(sample)
    if r.offset != len(data):
        raise FormatError("trailing bytes after final sample", offset=r.offset)
    return info, samples
