"""Two-stream motion transformer.

A pose stream encodes the discrete pose-token history and an audio stream
encodes MFCC+beat context; both are causal stacks of multi-head attention
blocks.  The next pose is predicted per coordinate channel as an independent
300-way categorical, fused from the pose output one step back and the audio
output at the current step:

    log p(x_t) = log_softmax(Wx @ zx[t-1] + Wa @ za[t] + b)

Step 0 substitutes a learned start vector for zx[-1].  Training is teacher
forced over whole segments in parallel; the same arithmetic is available as
a pure-numpy forward path (`np_*` functions) used by the sampler and pinned
to the autodiff graph by equivalence tests.

Defaults: pose stream with 4 blocks / 4 heads of 128 (model width 256,
token embedding 5), audio stream with 2 blocks / 2 heads of 32 (width 64),
300 bins, Adam at 1e-4 with a single x0.3 decay after epoch 200, batch 32.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .optim import AdamState, adam_step
from .posedata import QuantizationSpec
from .rng import derive

CHECKPOINT_MAGIC = b"DSCKPT01"
CHECKPOINT_VERSION = 1
NEG_MASK = -1e30


@dataclass(frozen=True)
class ModelConfig:
    joints: int = 17
    bins: int = 300
    pose_embed_dim: int = 5
    pose_model_dim: int = 256
    pose_heads: int = 4
    pose_head_dim: int = 128
    pose_blocks: int = 4
    audio_feature_dim: int = 26
    beat_embed_dim: int = 30
    audio_model_dim: int = 64
    audio_heads: int = 2
    audio_head_dim: int = 32
    audio_blocks: int = 2
    audio_kernel: int = 3
    audio_causal: bool = True  # False lets audio attention see the whole track
    ff_mult: int = 4
    dropout: float = 0.1
    max_context: int = 480
    use_audio: bool = True
    standardize_audio: bool = True
    learning_rate: float = 1e-4
    batch_size: int = 32
    lr_decay: float = 0.3
    lr_decay_epoch: int = 200

    @property
    def coords(self) -> int:
        return 3 * self.joints

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def learning_rate_at(self, epoch: int) -> float:
        """Step schedule: base rate through `lr_decay_epoch`, decayed after."""
        if epoch > self.lr_decay_epoch:
            return self.learning_rate * self.lr_decay
        return self.learning_rate


@dataclass
class AudioStats:
    """Per-channel standardization of the 26 MFCC+delta features."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, mfcc: np.ndarray) -> np.ndarray:
        return (mfcc - self.mean) / np.maximum(self.std, 1e-8)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AudioStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))

    @classmethod
    def fit(cls, rows: np.ndarray) -> "AudioStats":
        return cls(rows.mean(axis=0), rows.std(axis=0))


@dataclass
class Model:
    """Everything a checkpoint holds: config, parameters, data conditioning."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    quantization: QuantizationSpec | None = None
    audio_stats: AudioStats | None = None
    mean_pose: np.ndarray | None = None

    def standardized(self, mfcc: np.ndarray) -> np.ndarray:
        if self.config.standardize_audio and self.audio_stats is not None:
            return self.audio_stats.apply(mfcc)
        return np.asarray(mfcc, dtype=np.float64)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _stream_param_shapes(prefix: str, dm: int, heads: int, head_dim: int,
                         blocks: int, ff_mult: int) -> dict[str, tuple]:
    d = heads * head_dim
    shapes: dict[str, tuple] = {}
    for b in range(blocks):
        p = f"{prefix}.block{b}"
        shapes[f"{p}.attn.wq"] = (dm, d)
        shapes[f"{p}.attn.wk"] = (dm, d)
        shapes[f"{p}.attn.wv"] = (dm, d)
        shapes[f"{p}.attn.wo"] = (d, dm)
        shapes[f"{p}.attn.ln.gain"] = (dm,)
        shapes[f"{p}.attn.ln.bias"] = (dm,)
        shapes[f"{p}.ff.w1"] = (dm, ff_mult * dm)
        shapes[f"{p}.ff.b1"] = (ff_mult * dm,)
        shapes[f"{p}.ff.w2"] = (ff_mult * dm, dm)
        shapes[f"{p}.ff.b2"] = (dm,)
        shapes[f"{p}.ff.ln.gain"] = (dm,)
        shapes[f"{p}.ff.ln.bias"] = (dm,)
    return shapes


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    c = config
    shapes: dict[str, tuple] = {
        "pose.embed": (c.pose_embed_dim, c.bins),
        "pose.in_proj.w": (c.coords * c.pose_embed_dim, c.pose_model_dim),
        "pose.in_proj.b": (c.pose_model_dim,),
        "fuse.start": (c.pose_model_dim,),
        "fuse.wx": (c.pose_model_dim, c.coords * c.bins),
        "fuse.b": (c.coords * c.bins,),
    }
    shapes.update(
        _stream_param_shapes(
            "pose", c.pose_model_dim, c.pose_heads, c.pose_head_dim,
            c.pose_blocks, c.ff_mult,
        )
    )
    if c.use_audio:
        shapes["audio.beat"] = (c.beat_embed_dim, 2)
        shapes["audio.conv.w"] = (
            c.audio_kernel,
            c.audio_feature_dim + c.beat_embed_dim,
            c.audio_model_dim,
        )
        shapes["audio.conv.b"] = (c.audio_model_dim,)
        shapes["fuse.wa"] = (c.audio_model_dim, c.coords * c.bins)
        shapes.update(
            _stream_param_shapes(
                "audio", c.audio_model_dim, c.audio_heads, c.audio_head_dim,
                c.audio_blocks, c.ff_mult,
            )
        )
    return shapes


def init_parameters(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded initialization.

    Projections draw from N(0, 1/fan_in); layer-norm gains start at 1,
    all biases at 0.  The fusion weights start at zero so an untrained
    model emits exactly the uniform distribution over bins.
    """
    params: dict[str, np.ndarray] = {}
    for name, shape in sorted(parameter_shapes(config).items()):
        rng = derive(seed, "init", name)
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        elif name.startswith("fuse.w") or name == "fuse.b":
            params[name] = np.zeros(shape)
        elif name == "fuse.start":
            params[name] = rng.standard_normal(shape) * 0.1
        else:
            fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
            params[name] = rng.standard_normal(shape) / math.sqrt(max(fan_in, 1))
    return params


# ---------------------------------------------------------------------------
# positional encoding and masks
# ---------------------------------------------------------------------------


def positional_encoding(t: int, d: int, offset: int = 0) -> np.ndarray:
    """[t, d] interleaved sin/cos encoding; `offset` shifts absolute time."""
    if d % 2 != 0:
        raise ValueError(f"positional encoding needs an even width, got {d}")
    pos = np.arange(offset, offset + t, dtype=np.float64)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(0, d, 2) / d)[None, :]
    angles = pos * freqs
    out = np.zeros((t, d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def causal_mask(t: int, window: int | None = None) -> np.ndarray:
    """[t, t] additive mask: 0 where row i may attend to column j, else -1e30.

    Row i attends to j <= i; with a window, only the most recent `window`
    positions stay visible.
    """
    i = np.arange(t)[:, None]
    j = np.arange(t)[None, :]
    allowed = j <= i
    if window is not None:
        allowed &= j > i - window
    return np.where(allowed, 0.0, NEG_MASK)


# ---------------------------------------------------------------------------
# autodiff graph (training path)
# ---------------------------------------------------------------------------


class _GraphCtx:
    """Per-forward context: parameter nodes, dropout stream, mode."""

    def __init__(self, params: dict[str, ad.Node], train: bool,
                 dropout: float, rng: np.random.Generator | None):
        self.params = params
        self.train = train
        self.dropout = dropout if train else 0.0
        self.rng = rng

    def p(self, name: str) -> ad.Node:
        return self.params[name]

    def drop(self, x: ad.Node) -> ad.Node:
        if self.dropout > 0.0:
            return ad.dropout(x, self.dropout, self.rng)
        return x


def param_nodes(params: dict[str, np.ndarray]) -> dict[str, ad.Node]:
    return {name: ad.parameter(arr, name) for name, arr in params.items()}


def attention_block_graph(ctx: _GraphCtx, x: ad.Node, prefix: str,
                          heads: int, head_dim: int, mask: np.ndarray | None) -> ad.Node:
    """One attention + feed-forward block with residuals and post-layer-norm."""
    q = ad.matmul(x, ctx.p(f"{prefix}.attn.wq"))
    k = ad.matmul(x, ctx.p(f"{prefix}.attn.wk"))
    v = ad.matmul(x, ctx.p(f"{prefix}.attn.wv"))
    outputs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(head_dim))
        if mask is not None:
            scores = ad.add(scores, ad.constant(mask))
        probs = ad.softmax(scores)
        if np.isnan(probs.value).any():
            raise FloatingPointError(
                f"NaN attention probabilities in {prefix} head {h}"
            )
        probs = ctx.drop(probs)
        outputs.append(ad.matmul(probs, vh))
    z = outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=1)
    attended = ctx.drop(ad.matmul(z, ctx.p(f"{prefix}.attn.wo")))
    x = ad.layer_norm(
        ad.add(x, attended),
        ctx.p(f"{prefix}.attn.ln.gain"),
        ctx.p(f"{prefix}.attn.ln.bias"),
    )
    inner = ad.relu(ad.add(ad.matmul(x, ctx.p(f"{prefix}.ff.w1")), ctx.p(f"{prefix}.ff.b1")))
    ff = ad.add(ad.matmul(inner, ctx.p(f"{prefix}.ff.w2")), ctx.p(f"{prefix}.ff.b2"))
    return ad.layer_norm(
        ad.add(x, ctx.drop(ff)),
        ctx.p(f"{prefix}.ff.ln.gain"),
        ctx.p(f"{prefix}.ff.ln.bias"),
    )


def stream_graph(ctx: _GraphCtx, x: ad.Node, prefix: str, blocks: int,
                 heads: int, head_dim: int, mask: np.ndarray | None) -> ad.Node:
    for b in range(blocks):
        x = attention_block_graph(ctx, x, f"{prefix}.block{b}", heads, head_dim, mask)
    return x


def embed_pose_graph(ctx: _GraphCtx, tokens: np.ndarray, config: ModelConfig,
                     offset: int = 0) -> ad.Node:
    t = tokens.shape[0]
    emb = ad.embedding(ctx.p("pose.embed"), tokens)  # [T, coords, De]
    flat = ad.reshape(emb, (t, config.coords * config.pose_embed_dim))
    proj = ad.add(ad.matmul(flat, ctx.p("pose.in_proj.w")), ctx.p("pose.in_proj.b"))
    pe = positional_encoding(t, config.pose_model_dim, offset)
    return ad.add(proj, ad.constant(pe))


def embed_audio_graph(ctx: _GraphCtx, mfcc_std: np.ndarray, beat: np.ndarray,
                      config: ModelConfig, offset: int = 0) -> ad.Node:
    t = mfcc_std.shape[0]
    beat_emb = ad.embedding(ctx.p("audio.beat"), beat.astype(np.int64))
    stacked = ad.concat([ad.constant(mfcc_std), beat_emb], axis=1)
    conv = ad.add(ad.conv1d(stacked, ctx.p("audio.conv.w")), ctx.p("audio.conv.b"))
    pe = positional_encoding(t, config.audio_model_dim, offset)
    return ad.add(conv, ad.constant(pe))


def fused_logits_graph(ctx: _GraphCtx, zx: ad.Node, za: ad.Node | None,
                       config: ModelConfig) -> ad.Node:
    """[T*coords, bins] unnormalized logits; row t uses zx[t-1] and za[t]."""
    t = zx.shape[0]
    start = ad.reshape(ctx.p("fuse.start"), (1, config.pose_model_dim))
    zx_prev = ad.concat([start, ad.slice_rows(zx, 0, t - 1)], axis=0)
    fused = ad.matmul(zx_prev, ctx.p("fuse.wx"))
    if za is not None:
        fused = ad.add(fused, ad.matmul(za, ctx.p("fuse.wa")))
    fused = ad.add(fused, ctx.p("fuse.b"))
    return ad.reshape(fused, (t * config.coords, config.bins))


def sequence_logits_graph(ctx: _GraphCtx, tokens: np.ndarray,
                          mfcc_std: np.ndarray | None, beat: np.ndarray | None,
                          config: ModelConfig) -> ad.Node:
    """Teacher-forced logits for one sequence, [T*coords, bins]."""
    t = tokens.shape[0]
    mask = causal_mask(t, config.max_context)
    pose_in = embed_pose_graph(ctx, tokens, config)
    zx = stream_graph(
        ctx, pose_in, "pose", config.pose_blocks, config.pose_heads,
        config.pose_head_dim, mask,
    )
    za = None
    if config.use_audio:
        audio_in = embed_audio_graph(ctx, mfcc_std, beat, config)
        za = stream_graph(
            ctx, audio_in, "audio", config.audio_blocks, config.audio_heads,
            config.audio_head_dim, mask if config.audio_causal else None,
        )
    return fused_logits_graph(ctx, zx, za, config)


@dataclass(frozen=True)
class TrainingItem:
    """One teacher-forcing example: [T, coords] tokens plus aligned audio."""

    tokens: np.ndarray
    mfcc: np.ndarray | None = None
    beat: np.ndarray | None = None


def training_loss(model: Model, batch: list[TrainingItem], *, train: bool = False,
                  rng: np.random.Generator | None = None,
                  nodes: dict[str, ad.Node] | None = None) -> ad.Node:
    """Mean NLL over batch x time x coordinate channels.

    Pass `nodes` to reuse parameter nodes (training reads gradients off
    them after `ad.backward`).
    """
    if not batch:
        raise ValueError("training_loss: empty batch")
    lengths = {item.tokens.shape[0] for item in batch}
    if len(lengths) != 1:
        raise ValueError(f"training_loss: mixed segment lengths {sorted(lengths)}")
    ctx = _GraphCtx(
        nodes if nodes is not None else param_nodes(model.params),
        train, model.config.dropout, rng,
    )
    nlls = []
    for item in batch:
        mfcc = model.standardized(item.mfcc) if item.mfcc is not None else None
        logits = sequence_logits_graph(ctx, item.tokens, mfcc, item.beat, model.config)
        nlls.append(ad.cross_entropy(logits, item.tokens.reshape(-1)))
    stacked = nlls[0] if len(nlls) == 1 else ad.concat(nlls, axis=0)
    return ad.mean(stacked)


# ---------------------------------------------------------------------------
# numpy forward (inference path)
# ---------------------------------------------------------------------------


def _np_layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + ad.LAYER_NORM_EPS) * gain + bias


def _np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_attention_block(params: dict[str, np.ndarray], x: np.ndarray, prefix: str,
                       heads: int, head_dim: int, mask: np.ndarray | None) -> np.ndarray:
    q = x @ params[f"{prefix}.attn.wq"]
    k = x @ params[f"{prefix}.attn.wk"]
    v = x @ params[f"{prefix}.attn.wv"]
    pieces = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = q[:, lo:hi] @ k[:, lo:hi].T / math.sqrt(head_dim)
        if mask is not None:
            scores = scores + mask
        pieces.append(_np_softmax(scores) @ v[:, lo:hi])
    z = np.concatenate(pieces, axis=1)
    x = _np_layer_norm(
        x + z @ params[f"{prefix}.attn.wo"],
        params[f"{prefix}.attn.ln.gain"],
        params[f"{prefix}.attn.ln.bias"],
    )
    inner = np.maximum(x @ params[f"{prefix}.ff.w1"] + params[f"{prefix}.ff.b1"], 0.0)
    ff = inner @ params[f"{prefix}.ff.w2"] + params[f"{prefix}.ff.b2"]
    return _np_layer_norm(
        x + ff, params[f"{prefix}.ff.ln.gain"], params[f"{prefix}.ff.ln.bias"]
    )


def np_stream(params: dict[str, np.ndarray], x: np.ndarray, prefix: str,
              blocks: int, heads: int, head_dim: int,
              mask: np.ndarray | None) -> np.ndarray:
    for b in range(blocks):
        x = np_attention_block(params, x, f"{prefix}.block{b}", heads, head_dim, mask)
    return x


def np_embed_pose(model: Model, tokens: np.ndarray, offset: int = 0) -> np.ndarray:
    c = model.config
    emb = model.params["pose.embed"].T[tokens]  # [T, coords, De]
    flat = emb.reshape(tokens.shape[0], c.coords * c.pose_embed_dim)
    proj = flat @ model.params["pose.in_proj.w"] + model.params["pose.in_proj.b"]
    return proj + positional_encoding(tokens.shape[0], c.pose_model_dim, offset)


def np_embed_audio(model: Model, mfcc_std: np.ndarray, beat: np.ndarray,
                   offset: int = 0) -> np.ndarray:
    c = model.config
    beat_emb = model.params["audio.beat"].T[beat.astype(np.int64)]
    stacked = np.concatenate([mfcc_std, beat_emb], axis=1)
    t = stacked.shape[0]
    kern = model.params["audio.conv.w"]
    padded = np.vstack([np.zeros((c.audio_kernel - 1, stacked.shape[1])), stacked])
    conv = np.zeros((t, c.audio_model_dim))
    for j in range(c.audio_kernel):
        conv += padded[j : j + t] @ kern[j]
    conv += model.params["audio.conv.b"]
    return conv + positional_encoding(t, c.audio_model_dim, offset)


def np_audio_context(model: Model, mfcc: np.ndarray, beat: np.ndarray) -> np.ndarray:
    """za for a whole audio track; [T, audio_model_dim].

    Causal and windowed by default; with `audio_causal` off the attention
    sees the entire track (the conditioning audio is known up front).
    """
    c = model.config
    x = np_embed_audio(model, model.standardized(mfcc), beat)
    mask = causal_mask(x.shape[0], c.max_context) if c.audio_causal else None
    return np_stream(
        model.params, x, "audio", c.audio_blocks, c.audio_heads, c.audio_head_dim, mask
    )


def np_pose_context(model: Model, tokens: np.ndarray) -> np.ndarray:
    """zx for a full token prefix (causal, windowed); [T, pose_model_dim]."""
    c = model.config
    x = np_embed_pose(model, tokens)
    mask = causal_mask(tokens.shape[0], c.max_context)
    return np_stream(
        model.params, x, "pose", c.pose_blocks, c.pose_heads, c.pose_head_dim, mask
    )


def np_step_logits(model: Model, zx_prev: np.ndarray | None,
                   za_t: np.ndarray | None) -> np.ndarray:
    """[coords, bins] log-probabilities for one step."""
    c = model.config
    zx = model.params["fuse.start"] if zx_prev is None else zx_prev
    fused = zx @ model.params["fuse.wx"]
    if c.use_audio:
        fused = fused + za_t @ model.params["fuse.wa"]
    fused = (fused + model.params["fuse.b"]).reshape(c.coords, c.bins)
    shifted = fused - fused.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def np_sequence_log_probs(model: Model, tokens: np.ndarray,
                          mfcc: np.ndarray | None, beat: np.ndarray | None) -> np.ndarray:
    """Teacher-forced [T, coords, bins] log-probabilities (full recompute)."""
    c = model.config
    zx = np_pose_context(model, tokens)
    zx_prev = np.vstack([model.params["fuse.start"][None, :], zx[:-1]])
    fused = zx_prev @ model.params["fuse.wx"]
    if c.use_audio:
        za = np_audio_context(model, mfcc, beat)
        fused = fused + za @ model.params["fuse.wa"]
    fused = (fused + model.params["fuse.b"]).reshape(tokens.shape[0], c.coords, c.bins)
    shifted = fused - fused.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: Model
    log: list[tuple[int, float, float]]  # (epoch, mean loss, lr)
    adam: AdamState
    final_epoch: int


def train_model(
    model: Model,
    items: list[TrainingItem],
    epochs: int,
    seed: int,
    *,
    start_epoch: int = 0,
    adam: AdamState | None = None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    progress=None,
) -> TrainResult:
    """Teacher-forced training with seeded shuffling and the step-decay LR.

    Resuming: pass `start_epoch` and the saved `adam` state; every stream of
    randomness is derived from (seed, purpose, epoch), so a resumed run
    replays the exact batch order and dropout masks of an uninterrupted one.
    """
    if not items:
        raise ValueError("train_model: no training items")
    cfg = model.config
    adam = adam or AdamState(learning_rate=cfg.learning_rate)
    params = dict(model.params)
    log: list[tuple[int, float, float]] = []

    for epoch in range(start_epoch + 1, epochs + 1):
        lr = cfg.learning_rate_at(epoch)
        adam.learning_rate = lr
        order = derive(seed, "shuffle", epoch).permutation(len(items))
        losses = []
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [items[i] for i in order[lo : lo + cfg.batch_size]]
            nodes = param_nodes(params)
            loss = training_loss(
                model_with(model, params), batch,
                train=True, rng=derive(seed, "dropout", epoch, bi), nodes=nodes,
            )
            if not np.isfinite(loss.value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}; "
                    "last saved checkpoint retained"
                )
            ad.backward(loss)
            grads = {n: node.grad for n, node in nodes.items() if node.grad is not None}
            params = adam_step(params, grads, adam)
            losses.append(float(loss.value))
        log.append((epoch, float(np.mean(losses)), lr))
        if progress is not None:
            progress(epoch, log[-1][1], lr)
        if checkpoint_path and checkpoint_every and epoch % checkpoint_every == 0:
            save_checkpoint(
                checkpoint_path, model_with(model, params),
                adam=adam, epoch=epoch, training_log=log,
            )

    model = model_with(model, params)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, adam=adam, epoch=epochs, training_log=log)
    return TrainResult(model=model, log=log, adam=adam, final_epoch=epochs)


def model_with(model: Model, params: dict[str, np.ndarray]) -> Model:
    return Model(
        config=model.config,
        params=params,
        quantization=model.quantization,
        audio_stats=model.audio_stats,
        mean_pose=model.mean_pose,
    )


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: Model, *, adam: AdamState | None = None,
                    epoch: int = 0, kind: str = "motion",
                    training_log: list | None = None) -> None:
    """Binary checkpoint: magic, length-prefixed JSON header, float64 payload.

    The header carries config, quantization spec, audio statistics, the mean
    pose, and a named-array index with element offsets; arrays are stored
    little-endian in index order.  Optimizer state rides along under `opt.*`
    names so training can resume bit-exactly.
    """
    arrays: dict[str, np.ndarray] = dict(sorted(model.params.items()))
    if adam is not None:
        for name, arr in sorted(adam.m.items()):
            arrays[f"opt.m.{name}"] = arr
        for name, arr in sorted(adam.v.items()):
            arrays[f"opt.v.{name}"] = arr

    index = []
    offset = 0
    for name, arr in arrays.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size

    header = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": model.config.to_dict(),
        "quantization": model.quantization.to_dict() if model.quantization else None,
        "audio_stats": model.audio_stats.to_dict() if model.audio_stats else None,
        "mean_pose": model.mean_pose.tolist() if model.mean_pose is not None else None,
        "arrays": index,
        "training": {
            "epoch": epoch,
            "adam_step": adam.step if adam else 0,
            "log_tail": (training_log or [])[-5:],
        },
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Returns (model, header); optimizer arrays land in header['opt']."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        payload = np.frombuffer(fh.read(), dtype="<f8")

    params: dict[str, np.ndarray] = {}
    opt: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = payload[entry["offset"] : entry["offset"] + size].reshape(entry["shape"]).copy()
        if entry["name"].startswith("opt."):
            opt[entry["name"]] = arr
        else:
            params[entry["name"]] = arr

    model = Model(
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        quantization=(
            QuantizationSpec.from_dict(header["quantization"])
            if header.get("quantization")
            else None
        ),
        audio_stats=(
            AudioStats.from_dict(header["audio_stats"])
            if header.get("audio_stats")
            else None
        ),
        mean_pose=(
            np.asarray(header["mean_pose"])
            if header.get("mean_pose") is not None
            else None
        ),
    )
    header["opt"] = opt
    return model, header


def adam_from_header(header: dict, learning_rate: float) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    state.step = int(header.get("training", {}).get("adam_step", 0))
    for name, arr in header.get("opt", {}).items():
        if name.startswith("opt.m."):
            state.m[name[len("opt.m.") :]] = arr
        elif name.startswith("opt.v."):
            state.v[name[len("opt.v.") :]] = arr
    return state
