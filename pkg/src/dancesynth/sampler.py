"""Autoregressive generation from a trained checkpoint.

`GenerationSession` steps the pose stream one frame at a time with per-block
key/value caches (O(context) work per step instead of re-running the whole
prefix), while the audio context is precomputed in one causal pass since the
conditioning track is fully known up front.  `generate` drives a session
over a whole request; tests pin the cached path against the full-recompute
logits from `model.np_sequence_log_probs`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .audiofeat import AudioFeatureSequence
from .model import (
    Model,
    _np_layer_norm,
    np_audio_context,
    np_embed_pose,
    positional_encoding,
)
from .posedata import (
    CANONICAL_FPS,
    PoseSequence,
    QuantizedPoseSequence,
    dequantize,
    from_channels,
    quantize,
)
from .skeleton import N_COORDS
from .rng import derive


@dataclass(frozen=True)
class GenerationRequest:
    length: int
    audio: AudioFeatureSequence | None = None
    seed_poses: PoseSequence | None = None
    seed_tokens: np.ndarray | None = None  # pre-quantized prefix, [k, coords]
    temperature: float = 1.0
    top_k: int | None = None
    seed: int = 0
    streaming_audio: bool = False  # feed (mfcc_row, beat) per step() call

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.seed_poses is not None and self.seed_tokens is not None:
            raise ValueError("give seed poses or seed tokens, not both")


@dataclass
class GenerationResult:
    poses: PoseSequence | None
    tokens: QuantizedPoseSequence
    step_log_likelihood: np.ndarray  # [T] sum over channels of log p(token)
    step_seconds: np.ndarray  # [T] wall time per emitted frame

    @property
    def total_log_likelihood(self) -> float:
        return float(self.step_log_likelihood.sum())


def sample_categorical(
    log_probs: np.ndarray,
    temperature: float,
    top_k: int | None,
    rng: np.random.Generator,
) -> int:
    """Inverse-CDF draw from temperature-scaled (optionally truncated) log-probs."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if not np.isfinite(log_probs).all():
        raise ValueError("sample_categorical: non-finite log-probabilities")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    scaled = log_probs / temperature
    if top_k is not None and top_k < log_probs.shape[0]:
        keep = np.argsort(-log_probs, kind="stable")[:top_k]
        mask = np.full_like(scaled, -np.inf)
        mask[keep] = scaled[keep]
        scaled = mask
    scaled = scaled - scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    # the cumulative sum can land a few ulp under 1.0; clamp the index
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return min(idx, probs.shape[0] - 1)


class _StreamCache:
    """Per-block K/V history for incremental causal attention."""

    def __init__(self, params: dict, stream: str, heads: int, head_dim: int,
                 blocks: int, window: int):
        self.params = params
        self.stream = stream
        self.heads = heads
        self.head_dim = head_dim
        self.blocks = blocks
        self.window = window
        self.keys: list[list[np.ndarray]] = [[] for _ in range(blocks)]
        self.values: list[list[np.ndarray]] = [[] for _ in range(blocks)]

    def step(self, row: np.ndarray) -> np.ndarray:
        """Push one embedded row through all blocks; returns the context row."""
        p = self.params
        x = row
        for b in range(self.blocks):
            prefix = f"{self.stream}.block{b}"
            q = x @ p[f"{prefix}.attn.wq"]
            k = x @ p[f"{prefix}.attn.wk"]
            v = x @ p[f"{prefix}.attn.wv"]
            self.keys[b].append(k)
            self.values[b].append(v)
            if len(self.keys[b]) > self.window:
                self.keys[b].pop(0)
                self.values[b].pop(0)
            ks = np.stack(self.keys[b])
            vs = np.stack(self.values[b])
            pieces = []
            for h in range(self.heads):
                lo, hi = h * self.head_dim, (h + 1) * self.head_dim
                scores = ks[:, lo:hi] @ q[lo:hi] / math.sqrt(self.head_dim)
                scores -= scores.max()
                w = np.exp(scores)
                w /= w.sum()
                pieces.append(w @ vs[:, lo:hi])
            z = np.concatenate(pieces)
            x = _np_layer_norm(
                x + z @ p[f"{prefix}.attn.wo"],
                p[f"{prefix}.attn.ln.gain"],
                p[f"{prefix}.attn.ln.bias"],
            )
            inner = np.maximum(x @ p[f"{prefix}.ff.w1"] + p[f"{prefix}.ff.b1"], 0.0)
            ff = inner @ p[f"{prefix}.ff.w2"] + p[f"{prefix}.ff.b2"]
            x = _np_layer_norm(
                x + ff, p[f"{prefix}.ff.ln.gain"], p[f"{prefix}.ff.ln.bias"]
            )
        return x


class GenerationSession:
    """Incremental decoding state over one loaded checkpoint.

    The session advances one frame per `step` call: it fuses the cached pose
    context with the audio context row, scores the next token distribution,
    samples (or consumes a forced prefix token row), and feeds the chosen
    tokens back into the pose stream.

    Audio comes in two flavors: a request with an `audio` track precomputes
    the whole context in one causal pass, while `streaming_audio=True` takes
    one (mfcc_row, beat_flag) pair per `step` call and runs the audio stream
    through its own incremental cache, for real-time use.
    """

    def __init__(self, model: Model, request: GenerationRequest):
        if model.quantization is None:
            raise ValueError("checkpoint has no quantization spec; cannot generate")
        c = model.config
        self.model = model
        self.request = request
        self.rng = derive(request.seed, "generate")
        self.t = 0
        self.zx_prev: np.ndarray | None = None
        self.cache = _StreamCache(
            model.params, "pose", c.pose_heads, c.pose_head_dim,
            c.pose_blocks, c.max_context,
        )
        self.tokens: list[np.ndarray] = []
        self.log_liks: list[float] = []
        self.streaming = bool(request.streaming_audio)
        self.za = None
        self._za_row: np.ndarray | None = None
        self._za_t = -1  # step index the streaming audio row belongs to

        if c.use_audio and self.streaming:
            if request.audio is not None:
                raise ValueError("streaming sessions take audio frames per step")
            if not c.audio_causal:
                raise ValueError("streaming audio requires a causal audio stream")
            self.audio_cache = _StreamCache(
                model.params, "audio", c.audio_heads, c.audio_head_dim,
                c.audio_blocks, c.max_context,
            )
            self.audio_history: list[np.ndarray] = []  # last kernel-1 input rows
        elif c.use_audio:
            if request.audio is None:
                raise ValueError("model is audio-conditioned but no audio given")
            if len(request.audio) < request.length:
                raise ValueError(
                    f"audio provides {len(request.audio)} frames but "
                    f"{request.length} are requested"
                )
            self.za = np_audio_context(
                model, request.audio.mfcc[: request.length],
                request.audio.beat[: request.length],
            )

        if request.seed_tokens is not None:
            self.prefix = np.asarray(request.seed_tokens, dtype=np.int64)
        elif request.seed_poses is not None:
            self.prefix = quantize(request.seed_poses, model.quantization).tokens
        elif model.mean_pose is not None:
            mean_seq = from_channels(model.mean_pose[None, :])
            self.prefix = quantize(mean_seq, model.quantization).tokens
        else:
            raise ValueError("no seed poses given and checkpoint has no mean pose")
        if self.prefix.ndim != 2 or self.prefix.shape[1] != c.coords:
            raise ValueError(
                f"seed prefix must be [k, {c.coords}], got {self.prefix.shape}"
            )
        if self.prefix.shape[0] > request.length:
            raise ValueError(
                f"seed prefix of {self.prefix.shape[0]} frames exceeds "
                f"requested length {request.length}"
            )

    def _ingest_audio_frame(self, mfcc_row, beat_flag) -> None:
        """Advance the incremental audio stream by one raw feature frame."""
        c = self.model.config
        p = self.model.params
        std = self.model.standardized(
            np.asarray(mfcc_row, dtype=np.float64)[None, :]
        )[0]
        beat_emb = p["audio.beat"].T[int(bool(beat_flag))]
        stacked = np.concatenate([std, beat_emb])
        rows = self.audio_history + [stacked]
        conv = p["audio.conv.b"].copy()
        for j in range(c.audio_kernel):
            idx = len(rows) - c.audio_kernel + j  # input row t-(k-1)+j
            if idx >= 0:
                conv += rows[idx] @ p["audio.conv.w"][j]
        self.audio_history = rows[-(c.audio_kernel - 1):] if c.audio_kernel > 1 else []
        row = conv + positional_encoding(1, c.audio_model_dim, offset=self.t)[0]
        self._za_row = self.audio_cache.step(row)
        self._za_t = self.t

    def step_log_probs(self) -> np.ndarray:
        """[coords, bins] log-probabilities for the upcoming frame."""
        c = self.model.config
        p = self.model.params
        zx = p["fuse.start"] if self.zx_prev is None else self.zx_prev
        fused = zx @ p["fuse.wx"]
        if self.za is not None:
            fused = fused + self.za[self.t] @ p["fuse.wa"]
        elif c.use_audio:
            if self._za_t != self.t:
                raise RuntimeError("streaming session: feed an audio frame first")
            fused = fused + self._za_row @ p["fuse.wa"]
        fused = (fused + p["fuse.b"]).reshape(c.coords, c.bins)
        shifted = fused - fused.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def step(self, audio_frame: tuple | None = None) -> np.ndarray:
        """Emit the next [coords] token row and advance the caches.

        Streaming sessions pass `audio_frame` as (mfcc_row, beat_flag) for
        the frame about to be emitted.
        """
        if self.t >= self.request.length:
            raise RuntimeError("session exhausted: requested length reached")
        if self.model.config.use_audio and self.streaming and self._za_t != self.t:
            if audio_frame is None:
                raise ValueError("streaming session: step needs an audio frame")
            self._ingest_audio_frame(*audio_frame)
        log_probs = self.step_log_probs()
        if self.t < self.prefix.shape[0]:
            chosen = self.prefix[self.t]
        else:
            chosen = np.array(
                [
                    sample_categorical(
                        log_probs[d],
                        self.request.temperature,
                        self.request.top_k,
                        self.rng,
                    )
                    for d in range(log_probs.shape[0])
                ],
                dtype=np.int64,
            )
        self.log_liks.append(float(log_probs[np.arange(log_probs.shape[0]), chosen].sum()))
        row = np_embed_pose(self.model, chosen[None, :], offset=self.t)[0]
        self.zx_prev = self.cache.step(row)
        self.tokens.append(chosen)
        self.t += 1
        return chosen


def generate(model: Model, request: GenerationRequest) -> GenerationResult:
    """Run a full session; deterministic given the request seed."""
    session = GenerationSession(model, request)
    times = np.zeros(request.length)
    for t in range(request.length):
        tic = time.perf_counter()
        session.step()
        times[t] = time.perf_counter() - tic
    tokens = np.stack(session.tokens)
    quantized = QuantizedPoseSequence(tokens, model.quantization)
    poses = (
        dequantize(quantized, CANONICAL_FPS)
        if model.quantization.channels == N_COORDS
        else None
    )
    return GenerationResult(
        poses=poses,
        tokens=quantized,
        step_log_likelihood=np.asarray(session.log_liks),
        step_seconds=times,
    )
