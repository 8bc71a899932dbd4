"""Evaluation suite: kinematic plausibility, beat consistency, and
feature-space diversity.

Plausibility works on interior joint angles (angle between the two bones
meeting at a joint), so it is invariant to global rotation, translation,
and uniform scale.  The joint limits shipped here are package defaults for
an analytic check, editable in the run config; they are deliberately loose
interior-angle ranges plus a single angular-speed cap.

Diversity metrics and the Fréchet distance operate on features from a small
2-block transformer style classifier trained on labeled dance segments.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import (
    _stream_param_shapes,
    _np_layer_norm,
    np_stream,
    param_nodes,
    positional_encoding,
    stream_graph,
    _GraphCtx,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
)
from .optim import AdamState, adam_step
from .posedata import DataWarning, PoseSequence
from .rng import derive
from .skeleton import INTERIOR_JOINT_NAMES, INTERIOR_TRIPLES
from .solvers import trace_sqrt_product

DEFAULT_BEAT_TOLERANCE = 2  # frames
DEFAULT_CHUNK_FRAMES = 120  # 5 s at 24 fps
DEFAULT_PAIR_COUNT = 1000


# ---------------------------------------------------------------------------
# joint angles and plausibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointLimit:
    min_deg: float
    max_deg: float
    max_speed: float  # rad/s

    def __post_init__(self):
        if not self.min_deg < self.max_deg:
            raise ValueError(f"empty angle range [{self.min_deg}, {self.max_deg}]")
        if self.max_speed <= 0:
            raise ValueError(f"speed cap must be positive, got {self.max_speed}")


@dataclass(frozen=True)
class JointLimitTable:
    limits: dict[str, JointLimit]

    def __post_init__(self):
        missing = [n for n in INTERIOR_JOINT_NAMES if n not in self.limits]
        if missing:
            raise ValueError(f"limit table missing interior joints: {missing}")

    def ranges_rad(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([math.radians(self.limits[n].min_deg) for n in INTERIOR_JOINT_NAMES])
        hi = np.array([math.radians(self.limits[n].max_deg) for n in INTERIOR_JOINT_NAMES])
        return lo, hi

    def speed_caps(self) -> np.ndarray:
        return np.array([self.limits[n].max_speed for n in INTERIOR_JOINT_NAMES])


def default_limit_table() -> JointLimitTable:
    """Package-default analytic limits (interior degrees, rad/s speed cap)."""
    cap = 4.0 * math.pi
    spec = {
        "right_hip": (10.0, 180.0),
        "left_hip": (10.0, 180.0),
        "right_knee": (5.0, 180.0),
        "left_knee": (5.0, 180.0),
        "spine": (90.0, 180.0),
        "neck": (60.0, 180.0),
        "right_shoulder": (5.0, 180.0),
        "left_shoulder": (5.0, 180.0),
        "right_elbow": (30.0, 180.0),
        "left_elbow": (30.0, 180.0),
    }
    return JointLimitTable(
        {name: JointLimit(lo, hi, cap) for name, (lo, hi) in spec.items()}
    )


def joint_angles(seq: PoseSequence) -> tuple[np.ndarray, np.ndarray]:
    """Interior angles [T, 10] (radians) and a defined-mask.

    The angle at a joint is arccos of the normalized dot product between the
    two incident bone vectors; zero-length bones leave the angle undefined
    (masked out, value 0).
    """
    frames = seq.frames
    t = frames.shape[0]
    n = len(INTERIOR_TRIPLES)
    angles = np.zeros((t, n))
    defined = np.ones((t, n), dtype=bool)
    for j, (a, b, c) in enumerate(INTERIOR_TRIPLES):
        u = frames[:, a] - frames[:, b]
        v = frames[:, c] - frames[:, b]
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        ok = (nu > 0) & (nv > 0)
        dot = np.zeros(t)
        dot[ok] = np.einsum("ij,ij->i", u[ok], v[ok]) / (nu[ok] * nv[ok])
        angles[:, j] = np.where(ok, np.arccos(np.clip(dot, -1.0, 1.0)), 0.0)
        defined[:, j] = ok
    return angles, defined


def authenticity(seq: PoseSequence, limits: JointLimitTable) -> float:
    """Fraction of frames with every interior angle inside its range."""
    angles, defined = joint_angles(seq)
    lo, hi = limits.ranges_rad()
    ok = defined & (angles >= lo) & (angles <= hi)
    return float(ok.all(axis=1).mean())


def coherence(seq: PoseSequence, limits: JointLimitTable) -> float:
    """Fraction of transitions with every joint's angular speed under cap."""
    if len(seq) < 2:
        raise ValueError("coherence needs at least 2 frames")
    angles, defined = joint_angles(seq)
    speed = np.abs(np.diff(angles, axis=0)) * seq.fps
    ok = defined[1:] & defined[:-1] & (speed <= limits.speed_caps())
    return float(ok.all(axis=1).mean())


# ---------------------------------------------------------------------------
# motion beats
# ---------------------------------------------------------------------------


def extract_motion_beats(seq: PoseSequence) -> np.ndarray:
    """Frames where aggregate angular speed bottoms out (movement reversals).

    Speed at frame t is the summed per-joint |angle change| from t-1 to t;
    a beat fires where its discrete acceleration crosses from negative to
    non-negative, i.e. at local speed minima.
    """
    if len(seq) < 3:
        return np.array([], dtype=np.int64)
    angles, _ = joint_angles(seq)
    # speed[i] covers the transition ending at frame i+1
    speed = np.abs(np.diff(angles, axis=0)).sum(axis=1)
    accel = np.diff(speed)
    # tolerance absorbs arccos roundoff so constant-speed motion stays flat
    eps = 1e-12 * max(1.0, float(speed.max(initial=0.0)))
    beats = [
        t + 1  # local speed minimum at speed index t = frame t+1
        for t in range(1, accel.shape[0])
        if accel[t - 1] < -eps and accel[t] >= -eps
    ]
    return np.array(beats, dtype=np.int64)


def beat_scores(
    reference: np.ndarray,
    candidate: np.ndarray,
    tolerance: int = DEFAULT_BEAT_TOLERANCE,
) -> tuple[float, float, float]:
    """Greedy ascending one-to-one matching within +-tolerance frames.

    Returns (precision, recall, f_score).  Both sides empty scores all ones;
    one side empty scores all zeros.
    """
    reference = np.asarray(reference)
    candidate = np.asarray(candidate)
    if len(reference) == 0 and len(candidate) == 0:
        return 1.0, 1.0, 1.0
    matches = 0
    ci = 0
    for r in reference:
        while ci < len(candidate) and candidate[ci] < r - tolerance:
            ci += 1
        if ci < len(candidate) and candidate[ci] <= r + tolerance:
            matches += 1
            ci += 1
    precision = matches / len(candidate) if len(candidate) else 0.0
    recall = matches / len(reference) if len(reference) else 0.0
    f_score = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f_score


# ---------------------------------------------------------------------------
# style classifier (feature extractor for FID / diversity)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    coords: int = 51
    classes: int = 5
    model_dim: int = 64
    heads: int = 2
    head_dim: int = 32
    blocks: int = 2
    ff_mult: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 8

    def to_dict(self) -> dict:
        return {
            "coords": self.coords,
            "classes": self.classes,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "blocks": self.blocks,
            "ff_mult": self.ff_mult,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


@dataclass
class StyleClassifier:
    config: ClassifierConfig
    params: dict[str, np.ndarray]

    @property
    def feature_dim(self) -> int:
        return self.config.model_dim


def init_classifier(config: ClassifierConfig, seed: int) -> StyleClassifier:
    shapes: dict[str, tuple] = {
        "cls.in_proj.w": (config.coords, config.model_dim),
        "cls.in_proj.b": (config.model_dim,),
        "cls.out.w": (config.model_dim, config.classes),
        "cls.out.b": (config.classes,),
    }
    shapes.update(
        _stream_param_shapes(
            "cls", config.model_dim, config.heads, config.head_dim,
            config.blocks, config.ff_mult,
        )
    )
    params: dict[str, np.ndarray] = {}
    for name, shape in sorted(shapes.items()):
        rng = derive(seed, "cls-init", name)
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".b")):
            params[name] = np.zeros(shape)
        elif name == "cls.out.w":
            # zero head: initial logits are uniform and training treats the
            # class labels symmetrically
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
            params[name] = rng.standard_normal(shape) / math.sqrt(max(fan_in, 1))
    return StyleClassifier(config, params)


def _classifier_logits_graph(ctx: _GraphCtx, channels: np.ndarray,
                             config: ClassifierConfig) -> ad.Node:
    t = channels.shape[0]
    x = ad.add(
        ad.matmul(ad.constant(channels), ctx.p("cls.in_proj.w")),
        ctx.p("cls.in_proj.b"),
    )
    x = ad.add(x, ad.constant(positional_encoding(t, config.model_dim)))
    z = stream_graph(ctx, x, "cls", config.blocks, config.heads,
                     config.head_dim, mask=None)
    pooled = ad.matmul(ad.constant(np.full((1, t), 1.0 / t)), z)  # mean over time
    return ad.add(ad.matmul(pooled, ctx.p("cls.out.w")), ctx.p("cls.out.b"))


def classifier_features(clf: StyleClassifier, channels: np.ndarray) -> np.ndarray:
    """Mean-pooled final-block output for [T, coords] pose channels."""
    c = clf.config
    x = channels @ clf.params["cls.in_proj.w"] + clf.params["cls.in_proj.b"]
    x = x + positional_encoding(channels.shape[0], c.model_dim)
    z = np_stream(clf.params, x, "cls", c.blocks, c.heads, c.head_dim, mask=None)
    return z.mean(axis=0)


def classifier_predict(clf: StyleClassifier, channels: np.ndarray) -> int:
    feats = classifier_features(clf, channels)
    logits = feats @ clf.params["cls.out.w"] + clf.params["cls.out.b"]
    return int(np.argmax(logits))


def train_style_classifier(
    corpus: list[tuple[np.ndarray, int]],
    config: ClassifierConfig,
    epochs: int,
    seed: int,
    progress=None,
) -> StyleClassifier:
    """Cross-entropy training over ([T, coords] channels, label) pairs."""
    labels = {label for _, label in corpus}
    if len(labels) < 2:
        raise ValueError("classifier corpus must contain at least 2 classes")
    if max(labels) >= config.classes or min(labels) < 0:
        raise ValueError(f"labels must lie in [0, {config.classes})")
    clf = init_classifier(config, seed)
    adam = AdamState(learning_rate=config.learning_rate)
    params = dict(clf.params)
    for epoch in range(1, epochs + 1):
        order = derive(seed, "cls-shuffle", epoch).permutation(len(corpus))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [corpus[i] for i in order[lo : lo + config.batch_size]]
            nodes = param_nodes(params)
            ctx = _GraphCtx(nodes, train=False, dropout=0.0, rng=None)
            nlls = []
            for channels, label in batch:
                logits = _classifier_logits_graph(ctx, channels, config)
                nlls.append(ad.cross_entropy(logits, np.array([label])))
            loss = ad.mean(nlls[0] if len(nlls) == 1 else ad.concat(nlls, axis=0))
            ad.backward(loss)
            grads = {n: node.grad for n, node in nodes.items() if node.grad is not None}
            params = adam_step(params, grads, adam)
            losses.append(float(loss.value))
        if progress is not None:
            progress(epoch, float(np.mean(losses)))
    return StyleClassifier(config, params)


def classifier_accuracy(clf: StyleClassifier, corpus: list[tuple[np.ndarray, int]]) -> float:
    hits = sum(classifier_predict(clf, ch) == label for ch, label in corpus)
    return hits / len(corpus)


def save_classifier(path, clf: StyleClassifier) -> None:
    arrays = dict(sorted(clf.params.items()))
    index = []
    offset = 0
    for name, arr in arrays.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "style-classifier",
        "classifier_config": clf.config.to_dict(),
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_classifier(path) -> StyleClassifier:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        if header.get("kind") != "style-classifier":
            raise ValueError(f"{path}: not a style-classifier checkpoint")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    params = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        params[entry["name"]] = (
            payload[entry["offset"] : entry["offset"] + size]
            .reshape(entry["shape"])
            .copy()
        )
    return StyleClassifier(ClassifierConfig.from_dict(header["classifier_config"]), params)


# ---------------------------------------------------------------------------
# Fréchet distance and diversity
# ---------------------------------------------------------------------------


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), covariances with
    the N-1 denominator.  Tiny negative results (>= -1e-8) clamp to zero.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1] or fa.shape[1] == 0:
        raise ValueError(f"fid: incompatible feature shapes {fa.shape}, {fb.shape}")
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise ValueError("fid: empty feature set")
    d = fa.shape[1]
    if fa.shape[0] <= d or fb.shape[0] <= d:
        warnings.warn(
            f"fid: sample counts ({fa.shape[0]}, {fb.shape[0]}) not above "
            f"feature dim {d}; covariance estimate is rank-deficient",
            DataWarning,
        )
    return fid_from_moments(
        fa.mean(axis=0), _sample_cov(fa), fb.mean(axis=0), _sample_cov(fb)
    )


def fid_from_moments(mu_a: np.ndarray, cov_a: np.ndarray,
                     mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    value = (
        float(((np.asarray(mu_a) - np.asarray(mu_b)) ** 2).sum())
        + float(np.trace(cov_a) + np.trace(cov_b))
        - 2.0 * trace_sqrt_product(np.asarray(cov_a), np.asarray(cov_b))
    )
    if value < -1e-8:
        raise ValueError(f"fid: negative distance {value}; inputs ill-conditioned")
    return max(value, 0.0)


def _sample_cov(f: np.ndarray) -> np.ndarray:
    if f.shape[0] < 2:
        return np.zeros((f.shape[1], f.shape[1]))
    centered = f - f.mean(axis=0)
    return centered.T @ centered / (f.shape[0] - 1)


def average_pair_distance(
    features: np.ndarray, pairs: int = DEFAULT_PAIR_COUNT, seed: int = 0
) -> float:
    """Mean L2 feature distance over seeded random distinct pairs."""
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 sequences for pairwise diversity")
    rng = derive(seed, "pairs")
    total = 0.0
    for _ in range(pairs):
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        total += float(np.linalg.norm(features[i] - features[j]))
    return total / pairs


def _mean_pairwise(features: np.ndarray) -> float:
    n = features.shape[0]
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.linalg.norm(features[i] - features[j]))
            count += 1
    return total / count if count else 0.0


@dataclass
class DiversityScores:
    a_seq_d: float
    i_seq_d: float
    s_music_d: float
    flags: list[str] = field(default_factory=list)


def diversity_scores(
    sequence_features: np.ndarray,
    chunk_features: list[np.ndarray],
    music_groups: list[np.ndarray],
    pairs: int = DEFAULT_PAIR_COUNT,
    seed: int = 0,
) -> DiversityScores:
    """The three feature-distance diversity aggregates.

    `sequence_features` is [N, d] whole-sequence features; `chunk_features`
    holds per-sequence [n_chunks, d] arrays; `music_groups` holds [m, d]
    feature stacks of generations that shared one conditioning track.
    Undefined aggregates come back 0 with an explanatory flag.
    """
    flags: list[str] = []
    if sequence_features.shape[0] >= 2:
        a_seq = average_pair_distance(sequence_features, pairs, seed)
    else:
        a_seq = 0.0
        flags.append("a_seq_d: fewer than 2 sequences")

    per_seq = [_mean_pairwise(cf) for cf in chunk_features if cf.shape[0] >= 2]
    if per_seq:
        i_seq = float(np.mean(per_seq))
    else:
        i_seq = 0.0
        flags.append("i_seq_d: no sequence has 2+ chunks")

    per_group = [_mean_pairwise(g) for g in music_groups if g.shape[0] >= 2]
    if per_group:
        s_music = float(np.mean(per_group))
    else:
        s_music = 0.0
        flags.append("s_music_d: no music has 2+ generations")

    return DiversityScores(a_seq, i_seq, s_music, flags)


def chunk_channels(channels: np.ndarray, chunk: int = DEFAULT_CHUNK_FRAMES) -> list[np.ndarray]:
    """Split [T, coords] into full chunks of `chunk` frames (tail dropped)."""
    n = channels.shape[0] // chunk
    return [channels[i * chunk : (i + 1) * chunk] for i in range(n)]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    authenticity: float
    coherence: float
    beat_precision: float
    beat_recall: float
    beat_f_score: float
    beat_pairing: str  # "music" | "reference-motion" | "none"
    fid: float
    a_seq_d: float
    i_seq_d: float
    s_music_d: float
    counts: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "authenticity": self.authenticity,
            "coherence": self.coherence,
            "beat": {
                "pairing": self.beat_pairing,
                "precision": self.beat_precision,
                "recall": self.beat_recall,
                "f_score": self.beat_f_score,
            },
            "fid": self.fid,
            "a_seq_d": self.a_seq_d,
            "i_seq_d": self.i_seq_d,
            "s_music_d": self.s_music_d,
            "counts": self.counts,
            "config": self.config,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def validate_ranges(self) -> None:
        for name in ("authenticity", "coherence", "beat_precision",
                     "beat_recall", "beat_f_score"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of [0, 1]: {value}")
        for name in ("fid", "a_seq_d", "i_seq_d", "s_music_d"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} negative: {getattr(self, name)}")

    def to_table(self) -> str:
        rows = [
            ("authenticity", f"{self.authenticity:.4f}"),
            ("coherence", f"{self.coherence:.4f}"),
            (f"beat precision ({self.beat_pairing})", f"{self.beat_precision:.4f}"),
            (f"beat recall ({self.beat_pairing})", f"{self.beat_recall:.4f}"),
            (f"beat F-score ({self.beat_pairing})", f"{self.beat_f_score:.4f}"),
            ("FID", f"{self.fid:.4f}"),
            ("A-seq-D", f"{self.a_seq_d:.4f}"),
            ("I-seq-D", f"{self.i_seq_d:.4f}"),
            ("S-music-D", f"{self.s_music_d:.4f}"),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
        for flag in self.flags:
            lines.append(f"# {flag}")
        return "\n".join(lines) + "\n"


def report_schema() -> dict:
    """The JSON schema shipped with the package for MetricReport payloads."""
    from importlib import resources

    with resources.files("dancesynth").joinpath("report_schema.json").open() as fh:
        return json.load(fh)
