"""End-to-end command tests on a miniature corpus (seed 20: the 6-scene
train split holds 2 dual + 4 single, the 4-scene test split 2 + 2)."""

import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest
import yaml

from duosep.audio import AudioBuffer, read_wav, write_wav
from duosep.checkpoint import load_separator, load_sod, save_separator
from duosep.cli import main, stream_pipeline
from duosep.config import load_config
from duosep.metrics import warmup_frame_count
from duosep.scene import load_manifest
from duosep.sepnet import decode_frames_numpy, overlap_add_numpy
from duosep.sod import sod_forward, sod_masking

TINY = {
    "scenes": {"master_seed": 20, "train_scenes": 6, "test_scenes": 4,
               "duration": 0.6},
    "model": {"frame_ms": 0.5, "encoder_dim": 8, "separator_layers": 1,
              "seed": 3},
    "training": {"epochs": 2, "batch_size": 3, "crop_seconds": 0.1,
                 "crops_per_scene": 1},
    "sod": {"hidden": 4, "steps": 12, "crop_frames": 60, "batch_size": 4,
            "warmup_ms": 5.0},
}


def write_tiny_config(path: Path, **overrides) -> Path:
    data = {k: dict(v) for k, v in TINY.items()}
    for section, kv in overrides.items():
        data.setdefault(section, {}).update(kv)
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """mix + train-sep + train-sod executed once, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = write_tiny_config(root / "exp.yaml")
    out = root / "run"
    base = ["--config", str(cfg_path), "--out", str(out)]
    assert main(base + ["mix"]) == 0
    assert main(base + ["train-sep"]) == 0
    assert main(base + ["train-sod"]) == 0
    return {"root": root, "cfg_path": cfg_path, "out": out, "base": base}


def test_mix_outputs(workspace):
    out = workspace["out"]
    train = load_manifest(out / "data/train/train_manifest.jsonl")
    test = load_manifest(out / "data/test/test_manifest.jsonl")
    assert len(train) == 6 and len(test) == 4
    assert {r["talker_count"] for r in train} == {1, 2}
    assert {r["talker_count"] for r in test} == {1, 2}
    wav = read_wav(out / "data/train" / train[0]["mix"])
    assert wav.sample_rate == 16000
    assert len(wav) == 9600


def test_mix_byte_reproducible(workspace, tmp_path):
    cfg_path = workspace["cfg_path"]
    for out in (tmp_path / "a", tmp_path / "b"):
        assert main(["--config", str(cfg_path), "--out", str(out),
                     "mix"]) == 0
    a_files = sorted(p.relative_to(tmp_path / "a")
                     for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b")
                     for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files
    for rel in a_files:
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel,
                           shallow=False), rel


def test_seed_flag_changes_corpus(workspace, tmp_path):
    cfg_path = workspace["cfg_path"]
    out = tmp_path / "seeded"
    assert main(["--config", str(cfg_path), "--out", str(out),
                 "--seed", "99", "mix"]) == 0
    ours = read_wav(out / "data/train/train_00000_mix.wav").samples
    theirs = read_wav(workspace["out"]
                      / "data/train/train_00000_mix.wav").samples
    assert not np.array_equal(ours, theirs)


def test_train_sep_outputs(workspace):
    out = workspace["out"]
    model, opt, epoch = load_separator(out / "sep_last.npz")
    assert epoch == 1
    assert opt is not None
    with open(out / "train_sep_log.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "step", "loss", "lr"]
    assert len(rows) == 1 + 2 * 2        # 2 epochs x 2 steps of 3 scenes
    assert all(np.isfinite(float(r[2])) for r in rows[1:])
    # pinned schedule: lr column is 1e-3 * 0.98**epoch
    for r in rows[1:]:
        assert float(r[3]) == pytest.approx(1e-3 * 0.98 ** int(r[0]))


def test_train_sep_byte_reproducible(workspace, tmp_path):
    cfg_path = workspace["cfg_path"]
    outs = []
    for out in (tmp_path / "r1", tmp_path / "r2"):
        base = ["--config", str(cfg_path), "--out", str(out)]
        assert main(base + ["mix"]) == 0
        assert main(base + ["train-sep"]) == 0
        outs.append(out / "sep_last.npz")
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_train_sod_outputs(workspace):
    out = workspace["out"]
    before = (out / "sep_last.npz").read_bytes()
    model, _, _ = load_sod(out / "sod_last.npz")
    assert model.config.input_dim == 16
    assert before == (out / "sep_last.npz").read_bytes()
    cache = load_manifest(out / "mask_cache/mask_manifest.jsonl")
    assert len(cache) == 6
    hop = 4
    frames = 1 + int(np.ceil((9600 - 8) / hop))
    from duosep.sod import read_mask_cache
    masks = read_mask_cache(out / "mask_cache" / cache[0]["masks"])
    assert masks.shape == (frames, 16)
    with open(out / "train_sod_log.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "bce"]
    assert len(rows) == 1 + 12


def test_eval_report(workspace, capsys):
    assert main(workspace["base"] + ["eval"]) == 0
    table = capsys.readouterr().out
    assert any(line.startswith("1/") for line in table.splitlines())
    assert any(line.startswith("2/") for line in table.splitlines())
    assert (workspace["out"] / "report.csv").exists()


def test_eval_masked_report(workspace):
    assert main(workspace["base"] + ["eval", "--sod-masking"]) == 0
    path = workspace["out"] / "report_masked.csv"
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "condition"
    assert len(rows) > 1


def test_eval_oracle_sod_is_perfect(workspace):
    assert main(workspace["base"] + ["eval", "--oracle-sod"]) == 0
    with open(workspace["out"] / "report.csv") as f:
        overall = [r for r in csv.reader(f) if r[0] == "overall"][0]
    assert overall[4] == "100.0%" and overall[5] == "100.0%"


def test_stream_matches_batch_eval(workspace):
    out = workspace["out"]
    cfg = load_config(workspace["cfg_path"])
    sep_model, _, _ = load_separator(out / "sep_last.npz")
    sod_model, _, _ = load_sod(out / "sod_last.npz")
    sod_cfg = cfg.sod_config()
    rec = load_manifest(out / "data/test/test_manifest.jsonl")[0]
    x = read_wav(out / "data/test" / rec["mix"]).samples

    streamed, trace, _ = stream_pipeline(sep_model, sod_model, sod_cfg, x)

    dec, masks = decode_frames_numpy(sep_model, x)
    probs = sod_forward(sod_model, masks)
    ch2 = sod_masking(dec[1], probs, sod_cfg)
    hop = sep_model.config.hop
    batch = np.stack([overlap_add_numpy(dec[0], hop)[:len(x)],
                      overlap_add_numpy(ch2, hop)[:len(x)]])

    assert len(trace) == masks.shape[0]
    assert np.max(np.abs(streamed - batch)) < 1e-9
    assert np.max(np.abs(np.array([p for _, p in trace]) - probs)) < 1e-9


def test_stream_command_outputs(workspace, tmp_path, capsys):
    out = workspace["out"]
    rec = load_manifest(out / "data/test/test_manifest.jsonl")[0]
    wav = out / "data/test" / rec["mix"]
    dest = tmp_path / "stream"
    code = main(["--config", str(workspace["cfg_path"]),
                 "--out", str(dest), "stream", str(wav),
                 "--sep", str(out / "sep_last.npz"),
                 "--sod", str(out / "sod_last.npz")])
    assert code == 0
    assert "real-time factor" in capsys.readouterr().out
    ch1 = read_wav(dest / "ch1.wav")
    assert len(ch1) == 9600
    with open(dest / "sod_trace.csv") as f:
        rows = list(csv.reader(f))
    frames = 1 + int(np.ceil((9600 - 8) / 4))
    assert len(rows) == 1 + frames


def test_stream_rejects_wrong_rate(workspace, tmp_path):
    bad = tmp_path / "8k.wav"
    write_wav(bad, AudioBuffer(np.zeros(4000), 8000))
    code = main(["--config", str(workspace["cfg_path"]),
                 "--out", str(tmp_path / "s"), "stream", str(bad),
                 "--sep", str(workspace["out"] / "sep_last.npz"),
                 "--sod", str(workspace["out"] / "sod_last.npz")])
    assert code == 3


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("training: {epochs: 0}")
    code = main(["--config", str(bad), "--out", str(tmp_path), "mix"])
    assert code == 2
    assert capsys.readouterr().err.startswith("error[config]:")


def test_exit_code_data_error(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "eval"])
    assert code == 3
    assert capsys.readouterr().err.startswith("error[data]:")


def test_exit_code_numerical_error(workspace, tmp_path, capsys):
    out = workspace["out"]
    model, opt, _ = load_separator(out / "sep_last.npz")
    model.params["enc.W"][:] = np.nan
    poisoned = tmp_path / "nan.npz"
    save_separator(poisoned, model, opt, epoch=0)
    run_dir = tmp_path / "resume"
    run_dir.mkdir()
    (run_dir / "data").symlink_to(out / "data")
    code = main(["--config", str(workspace["cfg_path"]),
                 "--out", str(run_dir), "train-sep",
                 "--resume", str(poisoned)])
    assert code == 4
    assert capsys.readouterr().err.startswith("error[numerical]:")


def test_ss_pit_rejected_on_mixed_corpus(workspace, tmp_path, capsys):
    cfg_path = write_tiny_config(tmp_path / "sspit.yaml",
                                 loss={"objective": "ss-pit"})
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / "data").symlink_to(workspace["out"] / "data")
    code = main(["--config", str(cfg_path), "--out", str(run_dir),
                 "train-sep"])
    assert code == 2
    assert "single-talker" in capsys.readouterr().err


def test_resume_matches_uninterrupted(workspace, tmp_path):
    """Stop after epoch 0, resume, and compare the epoch-1 log rows."""
    cfg1 = write_tiny_config(tmp_path / "one.yaml",
                             training={"epochs": 1})
    cfg2 = write_tiny_config(tmp_path / "two.yaml",
                             training={"epochs": 2})
    full = tmp_path / "full"
    split = tmp_path / "split"
    for d in (full, split):
        d.mkdir()
        (d / "data").symlink_to(workspace["out"] / "data")
    assert main(["--config", str(cfg2), "--out", str(full),
                 "train-sep"]) == 0
    assert main(["--config", str(cfg1), "--out", str(split),
                 "train-sep"]) == 0
    assert main(["--config", str(cfg2), "--out", str(split), "train-sep",
                 "--resume", str(split / "sep_last.npz")]) == 0
    assert ((full / "sep_last.npz").read_bytes()
            == (split / "sep_last.npz").read_bytes())
    with open(full / "train_sep_log.csv") as f:
        full_rows = list(csv.reader(f))
    with open(split / "train_sep_log.csv") as f:
        split_rows = list(csv.reader(f))
    assert full_rows == split_rows
