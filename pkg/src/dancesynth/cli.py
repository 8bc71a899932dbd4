"""The `dancesynth` command-line front end.

Commands: preprocess, train, generate, evaluate, render, inspect-checkpoint.
Every command takes --config/--set/--seed; the effective configuration is
echoed into each output directory, primary outputs are written atomically
(temp file + rename), and repeated runs with the same inputs and seed are
byte-identical.  Wall-clock timings go to stdout only, never into files.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import audiofeat as af
from . import metrics as mt
from . import model as md
from . import posedata as pd
from . import render as rd
from . import sampler as sp
from .config import ConfigError, RunConfig, dump_toml, load_config
from .rng import derive


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def echo_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "effective_config.toml",
                      dump_toml(cfg.effective_dict()))


class WarningLog:
    """Collects DataWarnings for the run report and mirrors them to stderr."""

    def __init__(self):
        self.messages: list[str] = []

    def __enter__(self):
        self._ctx = warnings.catch_warnings(record=True)
        self._records = self._ctx.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)
        for record in self._records:
            message = str(record.message)
            self.messages.append(message)
            print(f"warning: {message}", file=sys.stderr)
        return False


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def cmd_preprocess(args, cfg: RunConfig) -> int:
    poses_dir = Path(args.poses)
    audio_dir = Path(args.audio)
    beats_dir = Path(args.beats) if args.beats else None
    out_dir = Path(args.out)
    pose_files = sorted(poses_dir.glob("*.json"))
    if not pose_files:
        print(f"error: no pose files in {poses_dir}", file=sys.stderr)
        return 1
    (out_dir / "processed").mkdir(parents=True, exist_ok=True)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    skipped: dict[str, str] = {}

    def process(path: Path):
        stem = path.stem
        wav_path = audio_dir / f"{stem}.wav"
        if not wav_path.exists():
            return stem, None, f"no audio file {wav_path.name}"
        pose = pd.load_pose_json(path)
        pose = pd.hp_filter_sequence(pose, cfg.data.hp_lambda)
        pose = pd.resample_to_fps(pose, pd.CANONICAL_FPS)
        pose = pd.root_relativize(pose)
        samples, rate = af.load_wav(wav_path)
        beat_path = beats_dir / f"{stem}.txt" if beats_dir else None
        if beat_path is not None and beat_path.exists():
            track = af.load_beat_annotations(beat_path)
        else:
            track = af.BeatTrack(np.array([]))
        feats = af.features_from_audio(samples, rate, track, cfg.audio)
        if abs(len(pose) - len(feats)) > 1:
            return stem, None, (
                f"duration mismatch: {len(pose)} pose frames vs "
                f"{len(feats)} audio frames"
            )
        n = min(len(pose), len(feats))
        return stem, (pose.slice(0, n), feats.slice(0, n)), None

    with WarningLog() as wlog:
        results = _map_jobs(process, pose_files, args.jobs)
        pairs = []
        for stem, payload, problem in results:
            if problem is not None:
                skipped[stem] = problem
                print(f"warning: {stem}: {problem} (skipped)", file=sys.stderr)
                continue
            pose, feats = payload
            pd.save_pose_json(pose, out_dir / "processed" / f"{stem}.json")
            af.save_feature_csv(feats, out_dir / "features" / f"{stem}.csv")
            pairs.append((stem, pose, feats))
        segments = pd.segment_dataset(pairs, cfg.train.split_ratio, cfg.seed)

    records = []
    for seg in sorted(segments.segments, key=lambda s: (s.source_id, s.start)):
        records.append(
            {
                "source": seg.source_id,
                "start": seg.start,
                "frames": pd.SEGMENT_FRAMES,
                "split": seg.split,
                "pose": f"processed/{seg.source_id}.json",
                "features": f"features/{seg.source_id}.csv",
            }
        )
    if not records:
        print("error: no segments produced; nothing to write", file=sys.stderr)
        return 1
    manifest = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    atomic_write_text(out_dir / "manifest.jsonl", manifest)

    counts = {
        "train": sum(r["split"] == "train" for r in records),
        "validation": sum(r["split"] == "validation" for r in records),
    }
    report = {
        "sources": len(pose_files),
        "segments": counts,
        "skipped": dict(sorted(skipped.items())),
        "short_sources": sorted(segments.skipped),
        "warnings": wlog.messages,
    }
    atomic_write_text(out_dir / "preprocess_report.json",
                      json.dumps(report, indent=2, sort_keys=True) + "\n")
    echo_config(cfg, out_dir)
    print(
        f"{counts['train']} train / {counts['validation']} validation segments "
        f"from {len(pairs)} sources ({len(skipped)} skipped)"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_manifest(manifest_path: Path):
    base = manifest_path.parent
    records = []
    with open(manifest_path) as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    sources: dict[str, tuple] = {}
    for rec in records:
        if rec["source"] not in sources:
            sources[rec["source"]] = (
                pd.load_pose_json(base / rec["pose"]),
                af.load_feature_csv(base / rec["features"]),
            )
    return records, sources


def cmd_train(args, cfg: RunConfig) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        print(f"error: manifest not found: {manifest_path}", file=sys.stderr)
        return 1
    if args.no_audio:
        cfg.model = md.ModelConfig.from_dict({**cfg.model.to_dict(), "use_audio": False})
    epochs = args.epochs if args.epochs is not None else cfg.train.epochs
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    records, sources = _load_manifest(manifest_path)
    train_segments = []
    for rec in records:
        if rec["split"] != "train":
            continue
        pose, feats = sources[rec["source"]]
        lo, hi = rec["start"], rec["start"] + rec["frames"]
        train_segments.append((pose.slice(lo, hi), feats.slice(lo, hi)))
    if not train_segments:
        print("error: manifest has no training segments", file=sys.stderr)
        return 1

    with WarningLog():
        if args.resume:
            model, header = md.load_checkpoint(args.resume)
            adam = md.adam_from_header(header, model.config.learning_rate)
            start_epoch = int(header["training"]["epoch"])
            quant = model.quantization
        else:
            quant = pd.fit_quantization_spec(
                [seg for seg, _ in train_segments], cfg.model.bins
            )
            stats = None
            if cfg.model.use_audio and cfg.model.standardize_audio:
                stats = md.AudioStats.fit(
                    np.concatenate([feats.mfcc for _, feats in train_segments])
                )
            mean_pose = np.concatenate(
                [seg.channels() for seg, _ in train_segments]
            ).mean(axis=0)
            model = md.Model(
                config=cfg.model,
                params=md.init_parameters(cfg.model, cfg.seed),
                quantization=quant,
                audio_stats=stats,
                mean_pose=mean_pose,
            )
            adam = None
            start_epoch = 0

        items = [
            md.TrainingItem(
                tokens=pd.quantize(seg, quant).tokens,
                mfcc=feats.mfcc if model.config.use_audio else None,
                beat=feats.beat if model.config.use_audio else None,
            )
            for seg, feats in train_segments
        ]

        log_rows: list[str] = []

        def progress(epoch, loss, lr):
            log_rows.append(f"{epoch},{loss!r},{lr!r}")
            if epoch % max(1, epochs // 20) == 0 or epoch == epochs:
                print(f"epoch {epoch}/{epochs}  loss {loss:.4f}  lr {lr:g}")

        tic = time.perf_counter()
        try:
            md.train_model(
                model, items, epochs, cfg.seed,
                start_epoch=start_epoch, adam=adam,
                checkpoint_path=out_path,
                checkpoint_every=cfg.train.checkpoint_every,
                progress=progress,
            )
        except md.TrainingDiverged as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        wall = time.perf_counter() - tic

    log_path = out_path.with_suffix(out_path.suffix + ".log.csv")
    prior = ""
    if args.resume and log_path.exists():
        prior = log_path.read_text()
        if prior and not prior.endswith("\n"):
            prior += "\n"
        prior = "".join(
            line + "\n" for line in prior.splitlines() if not line.startswith("epoch,")
        )
    atomic_write_text(
        log_path, "epoch,loss,lr\n" + prior + "".join(r + "\n" for r in log_rows)
    )
    echo_config(cfg, out_path.parent)
    n_batches = -(-len(items) // model.config.batch_size)
    print(
        f"trained {epochs - start_epoch} epochs on {len(items)} segments "
        f"({n_batches} batches/epoch) in {wall:.1f}s -> {out_path}"
    )
    return 0


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args, cfg: RunConfig) -> int:
    model, _ = md.load_checkpoint(args.checkpoint)
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)

    audio = None
    if args.features:
        audio = af.load_feature_csv(args.features)
    elif args.audio:
        samples, rate = af.load_wav(args.audio)
        track = (
            af.load_beat_annotations(args.beats)
            if args.beats
            else af.BeatTrack(np.array([]))
        )
        audio = af.features_from_audio(samples, rate, track, cfg.audio)
    elif model.config.use_audio:
        print("error: checkpoint is audio-conditioned; pass --audio or --features",
              file=sys.stderr)
        return 1

    if model.config.use_audio and len(audio) < args.length:
        print(
            f"error: --length {args.length} requested but audio provides only "
            f"{len(audio)} frames",
            file=sys.stderr,
        )
        return 1

    seed_poses = None
    if args.seed_pose:
        seed_poses = pd.load_pose_json(args.seed_pose)
        k = min(args.seed_frames, len(seed_poses))
        seed_poses = seed_poses.slice(0, k)
        clamped = pd.quantize(seed_poses, model.quantization).clamped
        if clamped:
            print(f"warning: seed pose clamped {clamped} values", file=sys.stderr)

    takes = args.takes
    with WarningLog():
        for take in range(takes):
            take_seed = (
                cfg.seed
                if takes == 1
                else int(derive(cfg.seed, "take", take).integers(2**62))
            )
            request = sp.GenerationRequest(
                length=args.length,
                audio=audio,
                seed_poses=seed_poses,
                temperature=args.temperature,
                top_k=args.top_k,
                seed=take_seed,
            )
            try:
                result = sp.generate(model, request)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            suffix = f"_take{take}" if takes > 1 else ""
            pd.save_pose_json(result.poses, f"{out_prefix}{suffix}.pose.json")
            tokens_text = "".join(
                " ".join(str(v) for v in row) + "\n" for row in result.tokens.tokens
            )
            atomic_write_text(
                Path(f"{out_prefix}{suffix}.tokens.txt"), tokens_text
            )
            steps = "step,log_likelihood\n" + "".join(
                f"{t},{ll!r}\n" for t, ll in enumerate(result.step_log_likelihood)
            )
            atomic_write_text(Path(f"{out_prefix}{suffix}.steps.csv"), steps)
            ms = result.step_seconds * 1e3
            print(
                f"take {take}: {args.length} frames, total log-lik "
                f"{result.total_log_likelihood:.2f}, per-step wall time "
                f"mean {ms.mean():.2f} ms / max {ms.max():.2f} ms"
            )
    echo_config(cfg, out_prefix.parent)
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _take_group(stem: str) -> str:
    if "_take" in stem:
        head, _, tail = stem.rpartition("_take")
        if tail.isdigit():
            return head
    return stem


def cmd_evaluate(args, cfg: RunConfig) -> int:
    gen_dir = Path(args.generated)
    ref_dir = Path(args.reference)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen_files = sorted(gen_dir.glob("*.json"))
    if not gen_files:
        print(f"error: no generated pose files in {gen_dir}", file=sys.stderr)
        return 1
    ref_files = sorted(ref_dir.glob("*.json"))

    flags: list[str] = []
    limits = cfg.metrics.limits
    with WarningLog() as wlog:
        gen = {p.stem.removesuffix(".pose"): pd.load_pose_json(p) for p in gen_files}
        ref = {p.stem.removesuffix(".pose"): pd.load_pose_json(p) for p in ref_files}

        auth = float(np.mean([mt.authenticity(s, limits) for s in gen.values()]))
        coh = float(np.mean([mt.coherence(s, limits) for s in gen.values()]))

        motion_beats = {stem: mt.extract_motion_beats(s) for stem, s in gen.items()}
        beats_dir = out_dir / "beats"
        beats_dir.mkdir(exist_ok=True)
        for stem in sorted(motion_beats):
            atomic_write_text(
                beats_dir / f"{stem}.txt",
                "".join(f"{b}\n" for b in motion_beats[stem]),
            )

        music_dir = Path(args.music_beats) if args.music_beats else None
        scores = []
        pairing = "none"
        for stem, beats in sorted(motion_beats.items()):
            music_file = None
            if music_dir is not None:
                for name in (stem, _take_group(stem)):
                    if (music_dir / f"{name}.txt").exists():
                        music_file = music_dir / f"{name}.txt"
                        break
            if music_file is not None:
                track = af.load_beat_annotations(music_file)
                reference = np.round(track.times * gen[stem].fps).astype(int)
                pairing = "music"
            elif _take_group(stem) in ref or stem in ref:
                source = ref.get(stem) or ref[_take_group(stem)]
                reference = mt.extract_motion_beats(source)
                pairing = "reference-motion"
            else:
                continue
            scores.append(
                mt.beat_scores(reference, beats, cfg.metrics.beat_tolerance)
            )
        if scores:
            precision, recall, f_score = (
                float(np.mean([s[i] for s in scores])) for i in range(3)
            )
        else:
            precision = recall = f_score = 0.0
            pairing = "none"
            flags.append("beat: no music beats or matching reference found")

        fid_value = 0.0
        a_seq = i_seq = s_music = 0.0
        if args.classifier:
            clf = mt.load_classifier(args.classifier)
            featurize = lambda seq: mt.classifier_features(clf, seq.channels())
            gen_feats = np.stack(_map_jobs(featurize, list(gen.values()), args.jobs))
            if ref:
                ref_feats = np.stack(
                    _map_jobs(featurize, list(ref.values()), args.jobs)
                )
                fid_value = mt.fid(gen_feats, ref_feats)
            else:
                flags.append("fid: no reference sequences")

            def chunk_featurize(seq):
                chunks = mt.chunk_channels(seq.channels(), cfg.metrics.chunk_frames)
                if not chunks:
                    return np.zeros((0, clf.feature_dim))
                return np.stack([mt.classifier_features(clf, c) for c in chunks])

            chunk_feats = _map_jobs(chunk_featurize, list(gen.values()), args.jobs)
            groups: dict[str, list[int]] = {}
            for i, stem in enumerate(gen):
                groups.setdefault(_take_group(stem), []).append(i)
            group_feats = [gen_feats[idx] for idx in groups.values()]
            div = mt.diversity_scores(
                gen_feats, chunk_feats, group_feats,
                pairs=cfg.metrics.pair_count, seed=cfg.seed,
            )
            a_seq, i_seq, s_music = div.a_seq_d, div.i_seq_d, div.s_music_d
            flags.extend(div.flags)
        else:
            flags.append("fid/diversity: no classifier checkpoint given")

        report = mt.MetricReport(
            authenticity=auth,
            coherence=coh,
            beat_precision=precision,
            beat_recall=recall,
            beat_f_score=f_score,
            beat_pairing=pairing,
            fid=fid_value,
            a_seq_d=a_seq,
            i_seq_d=i_seq,
            s_music_d=s_music,
            counts={
                "generated": len(gen),
                "reference": len(ref),
                "beat_pairs": len(scores),
            },
            config={
                "beat_tolerance": cfg.metrics.beat_tolerance,
                "chunk_frames": cfg.metrics.chunk_frames,
                "pair_count": cfg.metrics.pair_count,
            },
            flags=flags + wlog.messages,
        )
    report.validate_ranges()
    atomic_write_text(out_dir / "report.json", report.to_json())
    atomic_write_text(out_dir / "report.txt", report.to_table())
    echo_config(cfg, out_dir)
    print(report.to_table(), end="")
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def cmd_render(args, cfg: RunConfig) -> int:
    seq = pd.load_pose_json(args.pose)
    if args.fps and args.fps != seq.fps:
        seq = pd.resample_to_fps(seq, args.fps)
    beat_frames = None
    if args.beats:
        lines = Path(args.beats).read_text().split()
        beat_frames = [int(v) for v in lines]
    out_dir = Path(args.out)
    with WarningLog():
        paths = rd.render_pose_frames(seq, out_dir, args.view, beat_frames)
        if beat_frames is not None:
            rd.render_beat_overlay(
                mt.extract_motion_beats(seq), beat_frames, len(seq),
                out_dir / "beat_overlay.svg",
            )
    echo_config(cfg, out_dir)
    print(f"wrote {len(paths)} frames to {out_dir} (view: {args.view})")
    return 0


# ---------------------------------------------------------------------------
# inspect-checkpoint
# ---------------------------------------------------------------------------


def cmd_inspect(args, _cfg: RunConfig) -> int:
    path = Path(args.checkpoint)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != md.CHECKPOINT_MAGIC:
            print(f"error: {path} is not a checkpoint (magic {magic!r})",
                  file=sys.stderr)
            return 1
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
    kind = header.get("kind", "?")
    print(f"{path}: kind={kind} version={header.get('version')}")
    config_key = "config" if "config" in header else "classifier_config"
    for key, value in sorted(header.get(config_key, {}).items()):
        print(f"  {config_key}.{key} = {value}")
    if header.get("quantization"):
        q = header["quantization"]
        print(f"  quantization: {len(q['mins'])} channels x {q['bins']} bins")
    if header.get("audio_stats"):
        print(f"  audio_stats: {len(header['audio_stats']['mean'])} channels")
    if header.get("training"):
        print(f"  training: {header['training'].get('epoch')} epochs, "
              f"adam step {header['training'].get('adam_step')}")
    arrays = header.get("arrays", [])
    total = 0
    print(f"  arrays ({len(arrays)}):")
    for entry in arrays:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        total += size
        print(f"    {entry['name']:<32} {str(entry['shape']):<18} @ {entry['offset']}")
    print(f"  total parameters: {total}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dancesynth",
        description="Music-conditioned dance motion synthesis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML config (or $DANCESYNTH_CONFIG)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, resample, featurize, segment")
    p.add_argument("--poses", required=True, help="directory of raw pose .json")
    p.add_argument("--audio", required=True, help="directory of .wav files")
    p.add_argument("--beats", help="directory of beat-annotation .txt files")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the motion model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-audio", action="store_true",
                   help="train the pose-only variant")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample motion from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", help="conditioning audio .wav")
    p.add_argument("--features", help="precomputed feature cache .csv")
    p.add_argument("--beats", help="beat annotation .txt for --audio")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed-pose", help="pose .json whose first frames seed generation")
    p.add_argument("--seed-frames", type=int, default=1,
                   help="how many frames of --seed-pose to consume")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--takes", type=int, default=1,
                   help="independent generations for the same audio")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated motion")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--classifier", help="style-classifier checkpoint")
    p.add_argument("--music-beats", help="directory of music beat .txt files")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="pose sequence to SVG stick figures")
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--view", choices=rd.VIEWS, default="front")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--beats", help="frame-index .txt to tint beat frames")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint header")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args, cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
