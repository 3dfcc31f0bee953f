"""Frame-level inputs of the flow-matching objective: feature matrices,
average upsampling of text features, prefix masks and straight-path
interpolation."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FMX_MAGIC = b"FMX1"


@dataclass
class FeatureMatrix:
    """``frames x (channels * dim)`` features; stereo rows are laid out as
    ``[channel 0 | channel 1]``."""

    values: np.ndarray
    dim: int
    channels: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {self.values.shape}")
        if self.channels not in (1, 2):
            raise ValueError(f"channels must be 1 or 2, got {self.channels}")
        if self.dim < 1 or self.values.shape[1] != self.channels * self.dim:
            raise ValueError(
                f"width {self.values.shape[1]} != channels {self.channels} x dim {self.dim}")
        if self.values.shape[0] < 1:
            raise ValueError("feature matrix needs at least one frame")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def channel(self, c: int) -> np.ndarray:
        if not 0 <= c < self.channels:
            raise ValueError(f"channel {c} out of range for {self.channels}-channel features")
        return self.values[:, c * self.dim:(c + 1) * self.dim]

    def mixdown(self) -> "FeatureMatrix":
        """Sum the channels into a single-channel matrix."""
        if self.channels == 1:
            return self
        return FeatureMatrix(self.channel(0) + self.channel(1), self.dim, 1)

    @classmethod
    def stereo(cls, ch0: np.ndarray, ch1: np.ndarray) -> "FeatureMatrix":
        ch0, ch1 = np.asarray(ch0), np.asarray(ch1)
        if ch0.shape != ch1.shape:
            raise ValueError(f"channel shapes differ: {ch0.shape} vs {ch1.shape}")
        return cls(np.concatenate([ch0, ch1], axis=1), ch0.shape[1], 2)


def write_fmx(path, fm: FeatureMatrix) -> None:
    header = FMX_MAGIC + struct.pack("<III", fm.frames, fm.dim, fm.channels)
    Path(path).write_bytes(header + fm.values.astype("<f4").tobytes())


def read_fmx(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FMX_MAGIC:
        raise ValueError(f"{path}: not an FMX1 file")
    t, d, c = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw, dtype="<f4", offset=16)
    if body.size != t * d * c:
        raise ValueError(f"{path}: expected {t * d * c} values, found {body.size}")
    return FeatureMatrix(body.reshape(t, c * d).astype(np.float64), d, c)


def upsample_index(n_tokens: int, frames: int) -> np.ndarray:
    """Token index of every frame: the first ``frames % n_tokens`` tokens
    get ``ceil(frames / n_tokens)`` frames, the rest get the floor."""
    if n_tokens < 1:
        raise ValueError("need at least one token")
    if n_tokens > frames:
        raise ValueError(f"cannot upsample {n_tokens} tokens onto {frames} frames")
    base, extra = divmod(frames, n_tokens)
    runs = np.full(n_tokens, base)
    runs[:extra] += 1
    return np.repeat(np.arange(n_tokens), runs)


def average_upsample(text_feats: np.ndarray, frames: int) -> np.ndarray:
    """Expand ``N x F`` token features to ``frames x F``."""
    text_feats = np.asarray(text_feats)
    return text_feats[upsample_index(text_feats.shape[0], frames)]


def interpolate_noisy(x0, x1, t: float):
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return (1.0 - t) * x0 + t * x1


def euler_clean_estimate(x_t, v, t: float):
    """One Euler step from ``t`` straight to 1."""
    x_t, v = np.asarray(x_t), np.asarray(v)
    if x_t.shape != v.shape:
        raise ValueError(f"shape mismatch: {x_t.shape} vs {v.shape}")
    return x_t + (1.0 - t) * v


def prefix_range(frames: int) -> tuple[int, int]:
    """Inclusive range of admissible prefix (condition) lengths:
    ceil(5% of T) to floor(50% of T), in exact integer arithmetic."""
    return -(-frames // 20), frames // 2


def sample_prefix_mask(frames: int, rng: np.random.Generator) -> np.ndarray:
    """Per-frame mask: 0 on a random-length prefix, 1 on the rest."""
    if frames < 2:
        raise ValueError(f"need at least two frames, got {frames}")
    lo, hi = prefix_range(frames)
    return prefix_mask(frames, int(rng.integers(lo, hi + 1)))


def prefix_mask(frames: int, k: int) -> np.ndarray:
    m = np.ones(frames, dtype=np.float64)
    m[:k] = 0.0
    return m
