"""End-to-end command-line tests over a synthetic toy corpus."""

import json
import wave

import jsonschema
import numpy as np
import pytest

from dancesynth import cli
from dancesynth import metrics as mt
from dancesynth import posedata as pd
from dancesynth.metrics import report_schema
from conftest import swinging_pose

TINY_MODEL = [
    "--set", "model.pose_model_dim=8",
    "--set", "model.pose_heads=2",
    "--set", "model.pose_head_dim=4",
    "--set", "model.pose_blocks=1",
    "--set", "model.audio_model_dim=8",
    "--set", "model.audio_heads=2",
    "--set", "model.audio_head_dim=4",
    "--set", "model.audio_blocks=1",
    "--set", "model.pose_embed_dim=2",
    "--set", "model.beat_embed_dim=4",
    "--set", "model.ff_mult=2",
    "--set", "model.dropout=0.0",
]


def write_wav(path, n_samples: int, rate: int, freq: float):
    t = np.arange(n_samples) / rate
    pcm = (0.4 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


def build_corpus(root, stems=("alpha", "bravo"), frames: int = 960):
    for d in ("poses", "audio", "beats"):
        (root / d).mkdir(parents=True, exist_ok=True)
    rate = 8000
    for i, stem in enumerate(stems):
        seq = swinging_pose(frames, fps=24.0, freq=0.6 + 0.25 * i, phase=0.9 * i)
        pd.save_pose_json(seq, root / "poses" / f"{stem}.json")
        write_wav(root / "audio" / f"{stem}.wav", frames * rate // 24, rate,
                  200.0 + 50 * i)
        beats = np.arange(0.25, frames / 24.0, 0.5)
        (root / "beats" / f"{stem}.txt").write_text(
            "".join(f"{b}\n" for b in beats)
        )
    return root


def run(args, expect: int = 0, capsys=None):
    code = cli.main([str(a) for a in args])
    assert code == expect, f"dancesynth {' '.join(map(str, args))} -> {code}"
    return code


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(root)
    run(["--seed", 5, "preprocess", "--poses", root / "poses",
         "--audio", root / "audio", "--beats", root / "beats",
         "--out", root / "data"])
    return root


@pytest.fixture(scope="module")
def checkpoint(corpus):
    out = corpus / "run" / "model.ckpt"
    run(["--seed", 5, *TINY_MODEL, "train",
         "--manifest", corpus / "data" / "manifest.jsonl",
         "--out", out, "--epochs", 2])
    return out


@pytest.fixture(scope="module")
def classifier(corpus):
    sources = {
        p.stem: pd.load_pose_json(p)
        for p in sorted((corpus / "data" / "processed").glob("*.json"))
    }
    samples = []
    for i, (stem, seq) in enumerate(sorted(sources.items())):
        for start in range(0, len(seq) - 120, 240):
            samples.append((seq.slice(start, start + 120).channels(), i))
    cfg = mt.ClassifierConfig(coords=51, classes=5, model_dim=8, heads=2,
                              head_dim=4, blocks=1, ff_mult=2)
    clf = mt.train_style_classifier(samples, cfg, epochs=3, seed=2)
    path = corpus / "run" / "style.ckpt"
    path.parent.mkdir(exist_ok=True)
    mt.save_classifier(path, clf)
    return path


# -- preprocess ----------------------------------------------------------------


def test_preprocess_forty_seconds_gives_three_segments(corpus):
    records = [
        json.loads(line)
        for line in (corpus / "data" / "manifest.jsonl").read_text().splitlines()
    ]
    per_source = {}
    for rec in records:
        per_source.setdefault(rec["source"], []).append(rec["start"])
    assert per_source["alpha"] == [0, 240, 480]
    assert per_source["bravo"] == [0, 240, 480]
    splits = {rec["split"] for rec in records}
    assert splits == {"train", "validation"}
    report = json.loads((corpus / "data" / "preprocess_report.json").read_text())
    assert report["skipped"] == {}
    assert (corpus / "data" / "effective_config.toml").exists()


def test_preprocess_empty_dir_errors(tmp_path):
    (tmp_path / "poses").mkdir()
    (tmp_path / "audio").mkdir()
    run(["preprocess", "--poses", tmp_path / "poses", "--audio",
         tmp_path / "audio", "--out", tmp_path / "out"], expect=1)
    assert not (tmp_path / "out" / "manifest.jsonl").exists()


def test_preprocess_rerun_is_byte_identical(tmp_path):
    build_corpus(tmp_path, stems=("solo",), frames=480)
    outs = []
    for name in ("one", "two"):
        run(["--seed", 3, "preprocess", "--poses", tmp_path / "poses",
             "--audio", tmp_path / "audio", "--beats", tmp_path / "beats",
             "--out", tmp_path / name])
        outs.append(tmp_path / name)
    for rel in ("manifest.jsonl", "processed/solo.json", "features/solo.csv",
                "preprocess_report.json"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_preprocess_skips_duration_mismatch(tmp_path):
    build_corpus(tmp_path, stems=("good",), frames=480)
    seq = swinging_pose(480, fps=24.0)
    pd.save_pose_json(seq, tmp_path / "poses" / "bad.json")
    write_wav(tmp_path / "audio" / "bad.wav", 400 * 8000 // 24, 8000, 220.0)
    run(["preprocess", "--poses", tmp_path / "poses", "--audio",
         tmp_path / "audio", "--out", tmp_path / "out"])
    report = json.loads((tmp_path / "out" / "preprocess_report.json").read_text())
    assert "bad" in report["skipped"]
    assert "duration mismatch" in report["skipped"]["bad"]
    stems = {
        json.loads(line)["source"]
        for line in (tmp_path / "out" / "manifest.jsonl").read_text().splitlines()
    }
    assert stems == {"good"}


# -- train ----------------------------------------------------------------------


def test_train_writes_checkpoint_and_log(corpus, checkpoint):
    assert checkpoint.exists()
    log = (corpus / "run" / "model.ckpt.log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,lr"
    rows = [line.split(",") for line in log[1:]]
    assert [r[0] for r in rows] == ["1", "2"]
    # untrained model starts at the uniform loss over 300 bins
    assert float(rows[0][1]) == pytest.approx(np.log(300), abs=0.05)


def test_train_loss_trend_decreases(tmp_path):
    build_corpus(tmp_path, stems=("solo",), frames=480)
    run(["--seed", 4, "preprocess", "--poses", tmp_path / "poses", "--audio",
         tmp_path / "audio", "--beats", tmp_path / "beats",
         "--out", tmp_path / "data"])
    run(["--seed", 4, *TINY_MODEL, "--set", "model.learning_rate=1e-3",
         "train", "--manifest", tmp_path / "data" / "manifest.jsonl",
         "--out", tmp_path / "model.ckpt", "--epochs", 8])
    rows = (tmp_path / "model.ckpt.log.csv").read_text().splitlines()[1:]
    losses = [float(r.split(",")[1]) for r in rows]
    assert np.mean(losses[4:]) < np.mean(losses[:4])
    assert losses[-1] < losses[0]


def test_train_resume_continues_epoch_numbering(corpus, checkpoint, tmp_path):
    out = tmp_path / "resumed.ckpt"
    import shutil

    shutil.copy(checkpoint, out)
    shutil.copy(corpus / "run" / "model.ckpt.log.csv",
                tmp_path / "resumed.ckpt.log.csv")
    run(["--seed", 5, *TINY_MODEL, "train",
         "--manifest", corpus / "data" / "manifest.jsonl",
         "--out", out, "--epochs", 4, "--resume", out])
    rows = (tmp_path / "resumed.ckpt.log.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["1", "2", "3", "4"]


def test_train_missing_manifest_errors(tmp_path):
    run(["train", "--manifest", tmp_path / "nope.jsonl",
         "--out", tmp_path / "m.ckpt"], expect=1)


def test_unknown_config_key_rejected(capsys, tmp_path):
    code = cli.main(["--set", "model.not_a_knob=1", "train",
                     "--manifest", str(tmp_path / "x"), "--out",
                     str(tmp_path / "y")])
    assert code == 1
    assert "model.not_a_knob" in capsys.readouterr().err


def test_no_audio_flag_trains_pose_only(corpus, tmp_path):
    out = tmp_path / "noaudio.ckpt"
    run(["--seed", 6, *TINY_MODEL, "train",
         "--manifest", corpus / "data" / "manifest.jsonl",
         "--out", out, "--epochs", 1, "--no-audio"])
    from dancesynth.model import load_checkpoint

    model, _ = load_checkpoint(out)
    assert model.config.use_audio is False
    assert "fuse.wa" not in model.params


# -- generate ---------------------------------------------------------------------


def test_generate_same_seed_is_byte_identical(corpus, checkpoint, tmp_path):
    args = ["--seed", 11, "generate", "--checkpoint", checkpoint,
            "--audio", corpus / "audio" / "alpha.wav",
            "--beats", corpus / "beats" / "alpha.txt",
            "--length", 40]
    run(args + ["--out", tmp_path / "a"])
    run(args + ["--out", tmp_path / "b"])
    assert (tmp_path / "a.pose.json").read_bytes() == (tmp_path / "b.pose.json").read_bytes()
    assert (tmp_path / "a.tokens.txt").read_bytes() == (tmp_path / "b.tokens.txt").read_bytes()
    assert (tmp_path / "a.steps.csv").read_bytes() == (tmp_path / "b.steps.csv").read_bytes()

    run(["--seed", 12, "generate", "--checkpoint", checkpoint,
         "--audio", corpus / "audio" / "alpha.wav",
         "--beats", corpus / "beats" / "alpha.txt",
         "--length", 40, "--out", tmp_path / "c"])
    assert (tmp_path / "a.tokens.txt").read_bytes() != (tmp_path / "c.tokens.txt").read_bytes()


def test_generate_length_beyond_audio_errors(checkpoint, corpus, tmp_path, capsys):
    code = cli.main(["generate", "--checkpoint", str(checkpoint),
                     "--audio", str(corpus / "audio" / "alpha.wav"),
                     "--length", "99999", "--out", str(tmp_path / "x")])
    assert code == 1
    err = capsys.readouterr().err
    assert "99999" in err and "frames" in err


def test_generate_zero_temperature_rejected(checkpoint, corpus, tmp_path, capsys):
    code = cli.main(["generate", "--checkpoint", str(checkpoint),
                     "--audio", str(corpus / "audio" / "alpha.wav"),
                     "--length", "10", "--temperature", "0.0",
                     "--out", str(tmp_path / "x")])
    assert code == 1
    assert "temperature" in capsys.readouterr().err


def test_generate_takes_and_seed_pose(corpus, checkpoint, tmp_path):
    run(["--seed", 13, "generate", "--checkpoint", checkpoint,
         "--features", corpus / "data" / "features" / "alpha.csv",
         "--length", 30, "--takes", 2,
         "--seed-pose", corpus / "data" / "processed" / "alpha.json",
         "--out", tmp_path / "multi"])
    for take in (0, 1):
        seq = pd.load_pose_json(tmp_path / f"multi_take{take}.pose.json")
        assert len(seq) == 30
    a = (tmp_path / "multi_take0.tokens.txt").read_text()
    b = (tmp_path / "multi_take1.tokens.txt").read_text()
    assert a != b


# -- evaluate ---------------------------------------------------------------------


def test_evaluate_reference_against_itself(corpus, classifier, tmp_path):
    processed = corpus / "data" / "processed"
    out = tmp_path / "selfeval"
    run(["--seed", 14, "evaluate", "--generated", processed,
         "--reference", processed, "--classifier", classifier,
         "--music-beats", corpus / "beats", "--out", out])
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, report_schema())
    assert report["fid"] <= 1e-8
    assert 0.0 <= report["authenticity"] <= 1.0
    assert 0.0 <= report["coherence"] <= 1.0
    assert report["counts"]["generated"] == 2
    assert (out / "beats" / "alpha.txt").exists()
    assert (out / "report.txt").read_text().startswith("authenticity")


def test_evaluate_self_beats_are_perfect(corpus, classifier, tmp_path):
    # without music beats the pairing falls back to reference motion beats,
    # and a sequence always matches its own beats exactly
    processed = corpus / "data" / "processed"
    out = tmp_path / "selfbeats"
    run(["--seed", 14, "evaluate", "--generated", processed,
         "--reference", processed, "--classifier", classifier, "--out", out])
    report = json.loads((out / "report.json").read_text())
    assert report["beat"]["pairing"] == "reference-motion"
    assert report["beat"]["precision"] == 1.0
    assert report["beat"]["recall"] == 1.0
    assert report["beat"]["f_score"] == 1.0


def test_evaluate_single_sequence_flags_pairwise(corpus, tmp_path):
    single = tmp_path / "single"
    single.mkdir()
    src = corpus / "data" / "processed" / "alpha.json"
    (single / "alpha.json").write_bytes(src.read_bytes())
    out = tmp_path / "singleeval"
    run(["evaluate", "--generated", single,
         "--reference", corpus / "data" / "processed", "--out", out])
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, report_schema())
    assert any("classifier" in f for f in report["flags"])
    assert report["counts"]["generated"] == 1
    assert report["authenticity"] >= 0.0


def test_evaluate_rejects_wrong_skeleton(tmp_path, corpus):
    bad_dir = tmp_path / "bad"
    bad_dir.mkdir()
    (bad_dir / "bad.json").write_text(
        json.dumps({"fps": 24, "joints": ["a", "b"], "frames": [[[0, 0, 0]] * 2]})
    )
    run(["evaluate", "--generated", bad_dir,
         "--reference", corpus / "data" / "processed",
         "--out", tmp_path / "out"], expect=1)


def test_evaluate_empty_generated_errors(tmp_path, corpus):
    empty = tmp_path / "empty"
    empty.mkdir()
    run(["evaluate", "--generated", empty,
         "--reference", corpus / "data" / "processed",
         "--out", tmp_path / "out"], expect=1)


# -- render -----------------------------------------------------------------------


def test_render_writes_one_svg_per_frame(corpus, tmp_path):
    pose_path = corpus / "data" / "processed" / "alpha.json"
    seq = pd.load_pose_json(pose_path)
    short = tmp_path / "short.json"
    pd.save_pose_json(seq.slice(0, 7), short)
    out = tmp_path / "frames"
    run(["render", "--pose", short, "--out", out])
    files = sorted(out.glob("frame_*.svg"))
    assert len(files) == 7
    assert "<svg" in files[0].read_text()


def test_render_views_differ_and_zero_pose_renders(tmp_path):
    zero = pd.PoseSequence(24.0, np.zeros((3, 17, 3)))
    path = tmp_path / "zero.json"
    pd.save_pose_json(zero, path)
    run(["render", "--pose", path, "--out", tmp_path / "front", "--view", "front"])
    run(["render", "--pose", path, "--out", tmp_path / "side", "--view", "side"])
    assert (tmp_path / "front" / "frame_00000.svg").exists()

    wiggly = swinging_pose(3)
    pd.save_pose_json(wiggly, tmp_path / "w.json")
    run(["render", "--pose", tmp_path / "w.json", "--out", tmp_path / "wf",
         "--view", "front"])
    run(["render", "--pose", tmp_path / "w.json", "--out", tmp_path / "ws",
         "--view", "side"])
    assert (tmp_path / "wf" / "frame_00000.svg").read_text() != (
        tmp_path / "ws" / "frame_00000.svg"
    ).read_text()


def test_render_beat_tint_and_overlay(corpus, tmp_path):
    seq = swinging_pose(12)
    pd.save_pose_json(seq, tmp_path / "p.json")
    beats = tmp_path / "beats.txt"
    beats.write_text("2\n7\n")
    out = tmp_path / "frames"
    run(["render", "--pose", tmp_path / "p.json", "--out", out,
         "--beats", beats])
    assert "#ffe8e8" in (out / "frame_00002.svg").read_text()
    assert "#ffffff" in (out / "frame_00003.svg").read_text()
    assert (out / "beat_overlay.svg").exists()


def test_preprocess_jobs_flag_matches_sequential(tmp_path):
    build_corpus(tmp_path, stems=("uno", "dos"), frames=480)
    for name, jobs in (("seq", 1), ("par", 2)):
        run(["--seed", 8, "preprocess", "--poses", tmp_path / "poses",
             "--audio", tmp_path / "audio", "--beats", tmp_path / "beats",
             "--out", tmp_path / name, "--jobs", jobs])
    assert (tmp_path / "seq" / "manifest.jsonl").read_bytes() == (
        tmp_path / "par" / "manifest.jsonl"
    ).read_bytes()
    assert (tmp_path / "seq" / "features" / "uno.csv").read_bytes() == (
        tmp_path / "par" / "features" / "uno.csv"
    ).read_bytes()


def test_env_var_supplies_default_config(tmp_path, monkeypatch, capsys):
    cfg_file = tmp_path / "conf.toml"
    cfg_file.write_text("[model]\nnot_a_real_key = 1\n")
    monkeypatch.setenv("DANCESYNTH_CONFIG", str(cfg_file))
    code = cli.main(["inspect-checkpoint", str(tmp_path / "nothing.ckpt")])
    assert code == 1
    assert "not_a_real_key" in capsys.readouterr().err


# -- inspect ----------------------------------------------------------------------


def test_inspect_checkpoint_lists_arrays(checkpoint, capsys):
    run(["inspect-checkpoint", checkpoint])
    out = capsys.readouterr().out
    assert "kind=motion" in out
    assert "pose.embed" in out
    assert "total parameters" in out


def test_inspect_rejects_non_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    run(["inspect-checkpoint", bad], expect=1)
