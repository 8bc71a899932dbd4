"""Shared builders: micro model configs, synthetic poses, and toy corpora."""

import numpy as np
import pytest

from dancesynth.audiofeat import AudioFeatureSequence
from dancesynth.model import Model, ModelConfig, TrainingItem, init_parameters
from dancesynth.posedata import PoseSequence, QuantizationSpec
from dancesynth.rng import derive
from dancesynth.skeleton import JOINT_NAMES


def micro_config(**over) -> ModelConfig:
    base = dict(
        joints=2,
        bins=5,
        pose_embed_dim=2,
        pose_model_dim=8,
        pose_heads=2,
        pose_head_dim=4,
        pose_blocks=1,
        audio_model_dim=8,
        audio_heads=2,
        audio_head_dim=4,
        audio_blocks=1,
        beat_embed_dim=4,
        ff_mult=2,
        dropout=0.0,
        max_context=480,
        use_audio=True,
        standardize_audio=False,
        learning_rate=1e-3,
        batch_size=4,
    )
    base.update(over)
    return ModelConfig(**base)


def micro_model(seed: int = 0, **over) -> Model:
    cfg = micro_config(**over)
    spec = QuantizationSpec(
        np.full(cfg.coords, -1.0), np.full(cfg.coords, 1.0), cfg.bins
    )
    return Model(config=cfg, params=init_parameters(cfg, seed), quantization=spec)


def random_item(cfg: ModelConfig, t: int, seed: int) -> TrainingItem:
    rng = derive(seed, "item")
    return TrainingItem(
        tokens=rng.integers(0, cfg.bins, size=(t, cfg.coords)),
        mfcc=rng.standard_normal((t, cfg.audio_feature_dim)),
        beat=rng.random(t) > 0.7,
    )


NEUTRAL_FRAME = {
    "pelvis": (0.0, 1.0, 0.0),
    "right_hip": (-0.12, 0.98, 0.0),
    "right_knee": (-0.14, 0.55, 0.03),
    "right_ankle": (-0.15, 0.08, 0.01),
    "left_hip": (0.12, 0.98, 0.0),
    "left_knee": (0.14, 0.55, 0.03),
    "left_ankle": (0.15, 0.08, 0.01),
    "spine": (0.0, 1.25, 0.01),
    "thorax": (0.0, 1.49, 0.01),
    "neck": (0.0, 1.56, 0.0),
    "head": (0.0, 1.68, 0.02),
    "left_shoulder": (0.2, 1.45, 0.0),
    "left_elbow": (0.28, 1.2, 0.05),
    "left_wrist": (0.3, 0.95, 0.12),
    "right_shoulder": (-0.2, 1.45, 0.0),
    "right_elbow": (-0.28, 1.2, 0.05),
    "right_wrist": (-0.3, 0.95, 0.12),
}


def neutral_frames(t: int = 1) -> np.ndarray:
    frame = np.array([NEUTRAL_FRAME[name] for name in JOINT_NAMES])
    return np.tile(frame, (t, 1, 1))


def neutral_pose(t: int = 1, fps: float = 24.0) -> PoseSequence:
    return PoseSequence(fps, neutral_frames(t))


def swinging_pose(t: int, fps: float = 24.0, amp: float = 0.1,
                  freq: float = 0.8, phase: float = 0.0) -> PoseSequence:
    """Neutral pose with smooth sinusoidal wrist/elbow/ankle sway."""
    frames = neutral_frames(t)
    times = np.arange(t) / fps
    sway = amp * np.sin(2 * np.pi * freq * times + phase)
    lift = amp * 0.5 * np.sin(2 * np.pi * freq * 0.5 * times + phase)
    for name, scale in (
        ("left_wrist", 1.0),
        ("right_wrist", -1.0),
        ("left_elbow", 0.5),
        ("right_elbow", -0.5),
    ):
        j = JOINT_NAMES.index(name)
        frames[:, j, 0] += scale * sway
        frames[:, j, 1] += np.abs(lift) * scale * 0.3
    for name in ("left_ankle", "right_ankle"):
        j = JOINT_NAMES.index(name)
        frames[:, j, 2] += 0.3 * sway
    return PoseSequence(fps, frames)


def toy_audio(t: int, seed: int = 0, beat_period: int = 12) -> AudioFeatureSequence:
    rng = derive(seed, "toy-audio")
    times = np.arange(t)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=26)[None, :]
    freqs = rng.uniform(0.02, 0.2, size=26)[None, :]
    mfcc = np.sin(2 * np.pi * freqs * times + phases)
    beat = np.zeros(t, dtype=bool)
    beat[::beat_period] = True
    return AudioFeatureSequence(mfcc, beat)


@pytest.fixture
def limit_table():
    from dancesynth.metrics import default_limit_table

    return default_limit_table()
