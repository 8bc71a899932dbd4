"""Audio conditioning features: 13 MFCCs + temporal deltas at 24 fps, and a
per-frame binary beat flag rasterized from annotated beat times.

The MFCC pipeline (Hann window of 2048 samples, 40 triangular mel filters
spanning 0..Nyquist, log floor 1e-10, orthonormal DCT-II keeping
coefficients 0-12) uses common analysis defaults; every knob lives in
`MfccParams` so a run's configuration is auditable.  Frame starts are
computed as round(t * sample_rate / fps) per frame rather than a fixed
integer hop, which keeps long files from drifting against the 24 fps grid.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

AUDIO_FPS = 24.0
N_MFCC = 13
N_FEATURES = 2 * N_MFCC  # statics + deltas


@dataclass(frozen=True)
class MfccParams:
    window: int = 2048
    n_mels: int = 40
    n_mfcc: int = N_MFCC
    log_floor: float = 1e-10
    fps: float = AUDIO_FPS

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "n_mels": self.n_mels,
            "n_mfcc": self.n_mfcc,
            "log_floor": self.log_floor,
            "fps": self.fps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MfccParams":
        return cls(
            window=int(d["window"]),
            n_mels=int(d["n_mels"]),
            n_mfcc=int(d["n_mfcc"]),
            log_floor=float(d["log_floor"]),
            fps=float(d["fps"]),
        )


@dataclass(frozen=True)
class AudioFeatureSequence:
    """Per-frame 26-dim MFCC+delta rows and a boolean beat flag, at 24 fps."""

    mfcc: np.ndarray
    beat: np.ndarray
    fps: float = AUDIO_FPS

    def __post_init__(self):
        mfcc = np.asarray(self.mfcc, dtype=np.float64)
        beat = np.asarray(self.beat, dtype=bool)
        object.__setattr__(self, "mfcc", mfcc)
        object.__setattr__(self, "beat", beat)
        if mfcc.ndim != 2 or mfcc.shape[1] != N_FEATURES:
            raise ValueError(f"mfcc must be [T, {N_FEATURES}], got {mfcc.shape}")
        if beat.shape != (mfcc.shape[0],):
            raise ValueError(
                f"beat length {beat.shape} does not match {mfcc.shape[0]} frames"
            )
        if not np.isfinite(mfcc).all():
            raise ValueError("audio features contain non-finite values")

    def __len__(self) -> int:
        return self.mfcc.shape[0]

    def slice(self, start: int, stop: int) -> "AudioFeatureSequence":
        return AudioFeatureSequence(
            self.mfcc[start:stop].copy(), self.beat[start:stop].copy(), self.fps
        )


@dataclass(frozen=True)
class BeatTrack:
    """Annotated beat times in seconds, strictly increasing."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", times)
        if times.ndim != 1:
            raise ValueError("beat times must be a 1-D array")
        if times.size and times[0] < 0:
            raise ValueError("beat times must be non-negative")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("beat times must be strictly increasing")


# ---------------------------------------------------------------------------
# MFCC pipeline
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, window: int, sample_rate: float) -> np.ndarray:
    """[n_mels, window//2 + 1] triangular weights, mel-spaced over 0..Nyquist.

    Triangles are evaluated in Hz at the FFT bin frequencies.
    """
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_freqs = np.arange(window // 2 + 1) * sample_rate / window
    bank = np.zeros((n_mels, bin_freqs.shape[0]))
    for m in range(n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def dct_ii_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II analysis matrix, rows = coefficients."""
    k = np.arange(n_out)[:, None]
    m = np.arange(n_in)[None, :]
    mat = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * m + 1) / (2 * n_in))
    mat[0] /= math.sqrt(2.0)
    return mat


def frame_starts(
    n_samples: int, sample_rate: float, params: MfccParams
) -> tuple[np.ndarray, int]:
    """Start sample of every analysis frame; count matches the 24 fps grid."""
    n_frames = max(1, round(n_samples / sample_rate * params.fps))
    t = np.arange(n_frames)
    return np.round(t * sample_rate / params.fps).astype(int), n_frames


def compute_mfcc(
    samples: np.ndarray, sample_rate: float, params: MfccParams = MfccParams()
) -> np.ndarray:
    """[T, 13] MFCC rows at 24 fps.

    Frames whose window would run past the end of the signal replicate the
    last complete frame, so the output always covers the 24 fps grid of the
    full signal duration.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {samples.shape}")
    if sample_rate < 8000:
        raise ValueError(f"sample rate too low: {sample_rate}")
    if samples.shape[0] < params.window:
        raise ValueError(
            f"audio too short: {samples.shape[0]} samples < window {params.window}"
        )

    starts, n_frames = frame_starts(samples.shape[0], sample_rate, params)
    hann = np.hanning(params.window)
    bank = mel_filterbank(params.n_mels, params.window, sample_rate)
    dct = dct_ii_matrix(params.n_mfcc, params.n_mels)

    out = np.zeros((n_frames, params.n_mfcc))
    last_complete = -1
    for t in range(n_frames):
        start = starts[t]
        if start + params.window > samples.shape[0]:
            break
        spectrum = np.abs(np.fft.rfft(samples[start : start + params.window] * hann))
        mel = bank @ spectrum
        logmel = np.log(np.maximum(mel, params.log_floor))
        out[t] = dct @ logmel
        last_complete = t
    if last_complete < 0:
        raise ValueError("no complete analysis window fits the signal")
    out[last_complete + 1 :] = out[last_complete]
    return out


def append_deltas(mfcc: np.ndarray) -> np.ndarray:
    """Concatenate central-difference deltas: [T, 13] -> [T, 26].

    delta_t = (f_{t+1} - f_{t-1}) / 2 with edge rows replicated; a single
    frame gets zero deltas.
    """
    mfcc = np.asarray(mfcc, dtype=np.float64)
    if mfcc.ndim != 2:
        raise ValueError(f"expected [T, n] features, got {mfcc.shape}")
    t = mfcc.shape[0]
    if t == 1:
        return np.concatenate([mfcc, np.zeros_like(mfcc)], axis=1)
    padded = np.vstack([mfcc[:1], mfcc, mfcc[-1:]])
    deltas = (padded[2:] - padded[:-2]) / 2.0
    return np.concatenate([mfcc, deltas], axis=1)


# ---------------------------------------------------------------------------
# beats
# ---------------------------------------------------------------------------


def rasterize_beats(track: BeatTrack, n_frames: int, fps: float = AUDIO_FPS) -> np.ndarray:
    """Boolean per-frame flags; beats past the end are ignored."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    flags = np.zeros(n_frames, dtype=bool)
    idx = np.round(track.times * fps).astype(int)
    idx = idx[(idx >= 0) & (idx < n_frames)]
    flags[idx] = True
    return flags


def load_beat_annotations(path) -> BeatTrack:
    """Beat times from a text file, one float (seconds) per line."""
    times: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                value = float(line)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}")
            if value < 0:
                raise ValueError(f"{path}:{lineno}: negative beat time {value}")
            if times and value <= times[-1]:
                raise ValueError(
                    f"{path}:{lineno}: beat time {value} not after {times[-1]}"
                )
            times.append(value)
    return BeatTrack(np.asarray(times))


# ---------------------------------------------------------------------------
# WAV ingestion and feature caches
# ---------------------------------------------------------------------------


def load_wav(path) -> tuple[np.ndarray, float]:
    """Mono float64 samples in [-1, 1] from a PCM WAV (stereo is averaged)."""
    with wave.open(str(path), "rb") as wf:
        n_channels = wf.getnchannels()
        width = wf.getsampwidth()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample width {width} bytes")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return data, float(rate)


def features_from_audio(
    samples: np.ndarray,
    sample_rate: float,
    beats: BeatTrack,
    params: MfccParams = MfccParams(),
) -> AudioFeatureSequence:
    feats = append_deltas(compute_mfcc(samples, sample_rate, params))
    flags = rasterize_beats(beats, feats.shape[0], params.fps)
    return AudioFeatureSequence(feats, flags, params.fps)


def save_feature_csv(features: AudioFeatureSequence, path) -> None:
    """27-column CSV: 26 feature floats then the beat flag as 0/1."""
    with open(path, "w") as fh:
        for row, flag in zip(features.mfcc, features.beat):
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write(f",{int(flag)}\n")


def load_feature_csv(path, fps: float = AUDIO_FPS) -> AudioFeatureSequence:
    rows: list[list[float]] = []
    flags: list[bool] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.strip().split(",")
            if len(parts) != N_FEATURES + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {N_FEATURES + 1} columns, "
                    f"got {len(parts)}"
                )
            rows.append([float(p) for p in parts[:-1]])
            flags.append(parts[-1] == "1")
    return AudioFeatureSequence(np.asarray(rows), np.asarray(flags), fps)
