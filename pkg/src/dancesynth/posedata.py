"""Pose sequences and their conditioning: jitter filtering, resampling,
root-relativization, quantization, and dataset segmentation.

All operations are pure; data-quality conditions that do not abort an
operation (short series, degenerate dimensions, skipped sources) are
reported through `warnings.warn(DataWarning)`.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .skeleton import JOINT_NAMES, N_COORDS, N_JOINTS
from .solvers import pentadiagonal_solve
from .rng import derive

CANONICAL_FPS = 24.0
SEGMENT_FRAMES = 480  # 20 s at 24 fps
SEGMENT_STRIDE = 240  # 10 s overlap between consecutive segments
DEFAULT_BINS = 300
HP_LAMBDA_DEFAULT = 1.0


class DataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PoseSequence:
    """T x 17 x 3 joint positions (meters) at a fixed frame rate."""

    fps: float
    frames: np.ndarray
    joints: tuple[str, ...] = JOINT_NAMES

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 3 or frames.shape[1:] != (N_JOINTS, 3):
            raise ValueError(f"pose frames must be [T, 17, 3], got {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("pose sequence needs at least one frame")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if len(self.joints) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joint names, got {len(self.joints)}")
        if not np.isfinite(frames).all():
            raise ValueError("pose frames contain non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def channels(self) -> np.ndarray:
        """Frames flattened to [T, 51] coordinate channels."""
        return self.frames.reshape(len(self), N_COORDS)

    def slice(self, start: int, stop: int) -> "PoseSequence":
        return PoseSequence(self.fps, self.frames[start:stop].copy(), self.joints)


def from_channels(channels: np.ndarray, fps: float = CANONICAL_FPS) -> PoseSequence:
    channels = np.asarray(channels, dtype=np.float64)
    return PoseSequence(fps, channels.reshape(-1, N_JOINTS, 3))


def root_relativize(seq: PoseSequence) -> PoseSequence:
    """Translate the pelvis to the origin in every frame."""
    frames = seq.frames - seq.frames[:, :1, :]
    return PoseSequence(seq.fps, frames, seq.joints)


# ---------------------------------------------------------------------------
# jitter filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HPFilterResult:
    """Trend/cyclical split of one series; trend + cyclical == input."""

    trend: np.ndarray
    cyclical: np.ndarray
    lam: float


def hp_filter_series(x: np.ndarray, lam: float = HP_LAMBDA_DEFAULT) -> HPFilterResult:
    trend, ok = pentadiagonal_solve(lam, np.asarray(x, dtype=np.float64))
    if not ok:
        warnings.warn("series too short to filter; returned unchanged", DataWarning)
    return HPFilterResult(trend=trend, cyclical=np.asarray(x) - trend, lam=lam)


def hp_filter_sequence(seq: PoseSequence, lam: float = HP_LAMBDA_DEFAULT) -> PoseSequence:
    """Smooth every coordinate channel independently, keeping the trend."""
    if len(seq) < 3:
        warnings.warn("sequence shorter than 3 frames; filter skipped", DataWarning)
        return seq
    channels = seq.channels()
    smoothed = np.empty_like(channels)
    for c in range(channels.shape[1]):
        smoothed[:, c], _ = pentadiagonal_solve(lam, channels[:, c])
    return from_channels(smoothed, seq.fps)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def _natural_cubic_coeffs(y: np.ndarray, h: float) -> np.ndarray:
    """Second derivatives of the natural cubic spline through uniform knots."""
    n = y.shape[0]
    m = np.zeros(n)
    if n < 3:
        return m
    # Thomas algorithm on the (n-2) interior equations
    diag = np.full(n - 2, 2.0 * h / 3.0)
    off = h / 6.0
    rhs = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / h
    cp = np.zeros(n - 2)
    dp = np.zeros(n - 2)
    cp[0] = off / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n - 2):
        denom = diag[i] - off * cp[i - 1]
        cp[i] = off / denom
        dp[i] = (rhs[i] - off * dp[i - 1]) / denom
    m[n - 2] = dp[-1]
    for i in range(n - 4, -1, -1):
        m[i + 1] = dp[i] - cp[i] * m[i + 2]
    return m


def _spline_eval(y: np.ndarray, h: float, m: np.ndarray, t: np.ndarray) -> np.ndarray:
    n = y.shape[0]
    idx = np.clip(np.floor(t / h).astype(int), 0, n - 2)
    t0 = idx * h
    a = (t0 + h - t) / h
    b = (t - t0) / h
    return (
        a * y[idx]
        + b * y[idx + 1]
        + ((a**3 - a) * m[idx] + (b**3 - b) * m[idx + 1]) * h * h / 6.0
    )


def resample_to_fps(seq: PoseSequence, target_fps: float) -> PoseSequence:
    """Cubic-spline resampling of every coordinate channel.

    Natural boundary conditions; duration preserved within one frame.
    Sequences shorter than 4 frames fall back to linear interpolation.
    """
    if target_fps <= 0:
        raise ValueError(f"target fps must be positive, got {target_fps}")
    if target_fps == seq.fps:
        return PoseSequence(seq.fps, seq.frames.copy(), seq.joints)

    t_in = len(seq)
    duration = (t_in - 1) / seq.fps
    t_out = int(np.floor(duration * target_fps)) + 1
    times = np.arange(t_out) / target_fps
    channels = seq.channels()
    out = np.empty((t_out, channels.shape[1]))

    if t_in < 4:
        warnings.warn(
            "fewer than 4 frames; linear interpolation fallback", DataWarning
        )
        src_times = np.arange(t_in) / seq.fps
        for c in range(channels.shape[1]):
            out[:, c] = np.interp(times, src_times, channels[:, c])
    else:
        h = 1.0 / seq.fps
        for c in range(channels.shape[1]):
            m = _natural_cubic_coeffs(channels[:, c], h)
            out[:, c] = _spline_eval(channels[:, c], h, m, times)
    return from_channels(out, target_fps)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizationSpec:
    """Per-channel uniform bin layout (51 channels in the full pipeline)."""

    mins: np.ndarray
    maxs: np.ndarray
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        if mins.ndim != 1 or mins.shape != maxs.shape or mins.shape[0] < 1:
            raise ValueError(
                f"quantization spec needs matching 1-D channel ranges, "
                f"got {mins.shape} / {maxs.shape}"
            )
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if not np.all(maxs > mins):
            raise ValueError("every channel range must satisfy max > min")

    @property
    def channels(self) -> int:
        return self.mins.shape[0]

    def to_dict(self) -> dict:
        return {"bins": self.bins, "mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizationSpec":
        return cls(np.asarray(d["mins"]), np.asarray(d["maxs"]), int(d["bins"]))


@dataclass(frozen=True)
class QuantizedPoseSequence:
    """T x channels token grid plus the spec that produced it."""

    tokens: np.ndarray
    spec: QuantizationSpec
    clamped: int = 0

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim != 2 or tokens.shape[1] != self.spec.channels:
            raise ValueError(
                f"tokens must be [T, {self.spec.channels}], got {tokens.shape}"
            )
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.spec.bins):
            raise ValueError("token outside [0, bins)")

    def __len__(self) -> int:
        return self.tokens.shape[0]


def fit_quantization_spec(
    corpus: list[PoseSequence], bins: int = DEFAULT_BINS
) -> QuantizationSpec:
    """Channel ranges from corpus min/max, widened by a 1% margin per side.

    Channels that never vary get a +-1e-3 widening so the range stays valid.
    """
    if not corpus:
        raise ValueError("cannot fit quantization spec on an empty corpus")
    stacked = np.concatenate([seq.channels() for seq in corpus], axis=0)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = hi - lo
    degenerate = span == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} constant channels widened by +-1e-3",
            DataWarning,
        )
    margin = np.where(degenerate, 1e-3, 0.01 * span)
    return QuantizationSpec(lo - margin, hi + margin, bins)


def quantize(seq: PoseSequence, spec: QuantizationSpec) -> QuantizedPoseSequence:
    """Map each channel value to its uniform bin index; out-of-range clamps."""
    values = seq.channels()
    scaled = (values - spec.mins) / (spec.maxs - spec.mins) * spec.bins
    tokens = np.clip(np.floor(scaled).astype(np.int64), 0, spec.bins - 1)
    # v == max lands exactly on bins and clips to the top bin; only values
    # strictly outside the fitted range count as clamps.
    clamped = int(((values < spec.mins) | (values > spec.maxs)).sum())
    return QuantizedPoseSequence(tokens, spec, clamped)


def dequantize(
    quantized: QuantizedPoseSequence, fps: float = CANONICAL_FPS
) -> PoseSequence:
    """Tokens back to bin-center coordinates (full 51-channel grids only)."""
    spec = quantized.spec
    if spec.channels != N_COORDS:
        raise ValueError(
            f"dequantize needs the {N_COORDS}-channel skeleton, "
            f"got {spec.channels} channels"
        )
    width = (spec.maxs - spec.mins) / spec.bins
    values = spec.mins + (quantized.tokens + 0.5) * width
    return from_channels(values, fps)


def tokens_to_channels(tokens: np.ndarray, spec: QuantizationSpec) -> np.ndarray:
    """Bin centers for a raw [T, 51] token array."""
    if tokens.size and (tokens.min() < 0 or tokens.max() >= spec.bins):
        raise ValueError("token outside [0, bins)")
    width = (spec.maxs - spec.mins) / spec.bins
    return spec.mins + (tokens + 0.5) * width


# ---------------------------------------------------------------------------
# dataset segmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    source_id: str
    start: int
    split: str  # "train" | "validation"
    pose: PoseSequence
    audio: object  # AudioFeatureSequence; typed loosely to avoid an import cycle


@dataclass
class SegmentSet:
    segments: list[Segment] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def split(self, tag: str) -> list[Segment]:
        return [s for s in self.segments if s.split == tag]


def assign_splits(
    source_ids: list[str], split_ratio: float, seed: int
) -> dict[str, str]:
    """Deterministic per-source train/validation assignment.

    Splitting by source (not by segment) keeps overlapping windows of one
    video inside a single split.
    """
    unique = sorted(set(source_ids))
    order = list(derive(seed, "split").permutation(len(unique)))
    n = len(unique)
    n_train = max(1, round(split_ratio * n))
    if n >= 2:
        n_train = min(n_train, n - 1)
    train_idx = set(order[:n_train])
    return {
        sid: ("train" if i in train_idx else "validation")
        for i, sid in enumerate(unique)
    }


def segment_dataset(
    pairs: list[tuple[str, PoseSequence, object]],
    split_ratio: float = 0.8,
    seed: int = 0,
) -> SegmentSet:
    """Cut (source_id, pose, audio) triples into 480-frame windows, stride 240.

    Pose and audio frame counts must match per pair; sources shorter than one
    window are skipped and recorded.  Trailing frames that do not fill a
    window are dropped.
    """
    splits = assign_splits([sid for sid, _, _ in pairs], split_ratio, seed)
    out = SegmentSet()
    for sid, pose, audio in pairs:
        if pose.fps != CANONICAL_FPS:
            raise ValueError(f"{sid}: expected {CANONICAL_FPS} fps, got {pose.fps}")
        if len(pose) != len(audio):
            raise ValueError(
                f"{sid}: pose has {len(pose)} frames but audio has {len(audio)}"
            )
        if len(pose) < SEGMENT_FRAMES:
            warnings.warn(
                f"{sid}: {len(pose)} frames < {SEGMENT_FRAMES}; skipped", DataWarning
            )
            out.skipped.append(sid)
            continue
        for start in range(0, len(pose) - SEGMENT_FRAMES + 1, SEGMENT_STRIDE):
            out.segments.append(
                Segment(
                    source_id=sid,
                    start=start,
                    split=splits[sid],
                    pose=pose.slice(start, start + SEGMENT_FRAMES),
                    audio=audio.slice(start, start + SEGMENT_FRAMES),
                )
            )
    return out


# ---------------------------------------------------------------------------
# pose file I/O
# ---------------------------------------------------------------------------


def save_pose_json(seq: PoseSequence, path) -> None:
    payload = {
        "fps": seq.fps,
        "joints": list(seq.joints),
        "frames": seq.frames.tolist(),
    }
    # temp-file + rename keeps partially written files out of output dirs
    path = str(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


def load_pose_json(path) -> PoseSequence:
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("fps", "joints", "frames"):
        if key not in payload:
            raise ValueError(f"{path}: pose file missing {key!r}")
    joints = tuple(payload["joints"])
    if len(joints) != N_JOINTS:
        raise ValueError(f"{path}: expected {N_JOINTS} joints, got {len(joints)}")
    return PoseSequence(float(payload["fps"]), np.asarray(payload["frames"]), joints)
