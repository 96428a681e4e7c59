"""Command-line front end: mix, train-sep, train-sod, eval, stream.

Every command is driven by one YAML experiment config plus a couple of
path flags. Deliberate failures map to stable exit codes (config 2,
data 3, numerical 4) with a single parsable stderr line; anything else
is a bug and keeps its traceback.
"""

import argparse
import csv
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav
from .checkpoint import (load_separator, load_sod, save_separator, save_sod)
from .config import ExperimentConfig, load_config, save_config
from .exceptions import ConfigError, DataError, DuosepError, NumericalError
from .metrics import aggregate, score_scene, warmup_frame_count
from .objectives import TargetSet
from .scene import generate_corpus, load_manifest
from .sepnet import (SepModel, decode_frames_numpy, init_train_state,
                     overlap_add_numpy, streaming_step, stream_init,
                     train_epoch)
from .sod import (SodModel, cache_separator_masks, load_mask_dataset,
                  sod_forward, sod_masking, sod_stream_init,
                  sod_streaming_step, sod_train)


def _workdir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.paths.work_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(manifest_path) -> list:
    """Manifest rows to in-memory dicts the trainers consume."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    items = []
    for rec in load_manifest(manifest_path):
        items.append({
            "id": rec["id"],
            "mix": read_wav(root / rec["mix"]).samples,
            "s1": read_wav(root / rec["s1"]).samples,
            "s2": read_wav(root / rec["s2"]).samples,
            "talker_count": int(rec["talker_count"]),
            "snr_db": float(rec["snr_db"]),
        })
    return items


# ---------------------------------------------------------------------------
# commands


def cmd_mix(cfg: ExperimentConfig, args) -> int:
    out = _workdir(cfg, args) / "data"
    sc = cfg.scenes
    t0 = time.time()
    train_manifest = generate_corpus(out / "train", sc.train_scenes,
                                     sc.master_seed, split="train",
                                     duration=sc.duration,
                                     sample_rate=sc.sample_rate)
    test_manifest = generate_corpus(out / "test", sc.test_scenes,
                                    sc.master_seed, split="test",
                                    duration=sc.duration,
                                    sample_rate=sc.sample_rate)
    n_train = len(load_manifest(train_manifest))
    n_test = len(load_manifest(test_manifest))
    print(f"wrote {n_train} train + {n_test} test scenes "
          f"({sc.duration:.1f}s each) under {out} "
          f"in {time.time() - t0:.0f}s")
    print(f"manifests: {train_manifest} {test_manifest}")
    return 0


def cmd_train_sep(cfg: ExperimentConfig, args) -> int:
    out = _workdir(cfg, args)
    manifest = out / "data" / "train" / "train_manifest.jsonl"
    dataset = _load_dataset(manifest)
    _check_objective_vs_dataset(cfg, dataset)

    if args.resume:
        model, opt, done = load_separator(args.resume)
        if opt is None:
            raise DataError(f"{args.resume}: no optimizer state, "
                            f"cannot resume")
        state = init_train_state(model)
        state.opt = opt
        state.epoch = done + 1
    else:
        model = SepModel(cfg.model)
        state = init_train_state(model)

    ckpt = out / "sep_last.npz"
    log_path = out / "train_sep_log.csv"
    mode = "a" if args.resume and log_path.exists() else "w"
    with open(log_path, mode, newline="") as f:
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(["epoch", "step", "loss", "lr"])
        for _ in range(state.epoch, cfg.training.epochs):
            state.log_rows.clear()
            try:
                r = train_epoch(state, dataset, cfg.loss,
                                batch_size=cfg.training.batch_size,
                                crop_seconds=cfg.training.crop_seconds,
                                crops_per_scene=cfg.training.crops_per_scene)
            except NumericalError:
                # last good checkpoint stays on disk
                f.flush()
                raise
            for row in state.log_rows:
                writer.writerow([row[0], row[1], f"{row[2]:.6f}",
                                 f"{row[3]:.8f}"])
            f.flush()
            save_separator(ckpt, model, state.opt, epoch=state.epoch - 1)
            print(f"epoch {state.epoch - 1}: mean loss {r['mean_loss']:+.4f} "
                  f"lr {r['lr']:.2e} ({r['steps']} steps)")
    print(f"checkpoint: {ckpt}")
    return 0


def _check_objective_vs_dataset(cfg: ExperimentConfig, dataset: list):
    """Fail fast when the objective cannot score part of the corpus."""
    if cfg.loss.objective == "ss-pit":
        singles = sum(1 for it in dataset if it["talker_count"] == 1)
        if singles:
            raise ConfigError(
                f"objective 'ss-pit' cannot train on single-talker scenes "
                f"({singles} of {len(dataset)} in the corpus); use "
                f"'proposed' or filter the dataset")


def cmd_train_sod(cfg: ExperimentConfig, args) -> int:
    out = _workdir(cfg, args)
    sep_path = Path(args.sep or (out / "sep_last.npz"))
    sep_model, _, _ = load_separator(sep_path)
    if sep_model.config.encoder_dim != cfg.model.encoder_dim:
        raise ConfigError(
            f"separator encoder_dim {sep_model.config.encoder_dim} does "
            f"not match config {cfg.model.encoder_dim}")
    manifest = out / "data" / "train" / "train_manifest.jsonl"
    cache_dir = out / "mask_cache"
    cache_manifest = cache_separator_masks(sep_model, manifest, cache_dir)
    dataset = load_mask_dataset(cache_manifest)
    sod_model = SodModel(cfg.sod_config())
    result = sod_train(sod_model, dataset,
                       steps=cfg.sod.steps,
                       batch_size=cfg.sod.batch_size,
                       crop_frames=cfg.sod.crop_frames,
                       lr=cfg.sod.lr)
    ckpt = out / "sod_last.npz"
    save_sod(ckpt, sod_model, epoch=0)
    with open(out / "train_sod_log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "bce"])
        for step, loss in result["curve"]:
            writer.writerow([step, f"{loss:.6f}"])
    print(f"sod final BCE {result['final_loss']:.4f} over "
          f"{cfg.sod.steps} steps; checkpoint: {ckpt}")
    return 0


def _eval_scene(sep_model, sod_model, cfg, item, root, use_masking,
                oracle_sod: bool):
    mix = read_wav(root / item["mix"]).samples
    dec, masks = decode_frames_numpy(sep_model, mix)
    sod_cfg = cfg.sod_config()
    decisions = None
    if oracle_sod:
        probs = np.full(masks.shape[0], float(item["talker_count"] == 2))
        decisions = probs >= sod_cfg.threshold
    elif sod_model is not None:
        probs = sod_forward(sod_model, masks)
        decisions = probs >= sod_cfg.threshold
    ch2 = dec[1]
    if use_masking:
        if decisions is None:
            raise ConfigError("--sod-masking needs a SOD checkpoint "
                              "or --oracle-sod")
        ch2 = sod_masking(ch2, probs, sod_cfg)
    hop = sep_model.config.hop
    ests = [overlap_add_numpy(dec[0], hop)[:len(mix)],
            overlap_add_numpy(ch2, hop)[:len(mix)]]

    srcs = [read_wav(root / item["s1"]).samples]
    if item["talker_count"] == 2:
        srcs.append(read_wav(root / item["s2"]).samples)
    bundle = SimpleNamespace(
        mixture=mix,
        targets=TargetSet(sources=srcs, talker_count=item["talker_count"]),
        spec=SimpleNamespace(snr_db=item["snr_db"]))
    warm = warmup_frame_count(sep_model.config.sample_rate, hop,
                              sod_cfg.warmup_ms)
    return score_scene(bundle, ests, sod_decisions=decisions,
                       scene_id=item["id"], warmup_frames=warm)


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = _workdir(cfg, args)
    sep_path = Path(args.sep or (out / "sep_last.npz"))
    sep_model, _, _ = load_separator(sep_path)
    sod_model = None
    if args.sod:
        sod_model, _, _ = load_sod(args.sod)
    elif (out / "sod_last.npz").exists() and not args.oracle_sod:
        sod_model, _, _ = load_sod(out / "sod_last.npz")

    manifest = out / "data" / "test" / "test_manifest.jsonl"
    records = []
    root = Path(manifest).parent
    for rec in load_manifest(manifest):
        records.append(_eval_scene(sep_model, sod_model, cfg, rec, root,
                                   args.sod_masking, args.oracle_sod))
    csv_path = out / ("report_masked.csv" if args.sod_masking
                      else "report.csv")
    table = aggregate(records, csv_path=csv_path)
    print(table)
    print(f"csv: {csv_path}")
    return 0


def stream_pipeline(sep_model: SepModel, sod_model: SodModel, sod_cfg,
                    x: np.ndarray):
    """Frame-by-frame separator + detector + masking + overlap-add.

    Returns (outs (2, len(x)), trace [(frame, prob)], elapsed seconds).
    Matches the batch eval path with --sod-masking to float precision.
    """
    mcfg = sep_model.config
    frame, hop = mcfg.frame, mcfg.hop
    if len(x) < frame:
        raise DataError("stream input shorter than one frame")
    n_frames = 1 + int(np.ceil((len(x) - frame) / hop))
    padded = np.concatenate([x, np.zeros((n_frames - 1) * hop
                                         + frame - len(x))])

    sep_state = stream_init(sep_model)
    sod_state = sod_stream_init(sod_model)
    outs = np.zeros((2, len(padded) + frame))
    trace = []
    t0 = time.perf_counter()
    for t in range(n_frames):
        seg = padded[t * hop: t * hop + frame]
        o1, o2, mask, sep_state = streaming_step(sep_model, sep_state, seg)
        prob, sod_state = sod_streaming_step(sod_model, sod_state, mask)
        if prob < sod_cfg.threshold:
            o2 = np.zeros_like(o2)
        outs[0, t * hop: t * hop + frame] += o1
        outs[1, t * hop: t * hop + frame] += o2
        trace.append((t, prob))
    elapsed = time.perf_counter() - t0
    return outs[:, :len(x)], trace, elapsed


def cmd_stream(cfg: ExperimentConfig, args) -> int:
    out = _workdir(cfg, args)
    sep_path = Path(args.sep or (out / "sep_last.npz"))
    sep_model, _, _ = load_separator(sep_path)
    sod_path = Path(args.sod or (out / "sod_last.npz"))
    sod_model, _, _ = load_sod(sod_path)
    sod_cfg = cfg.sod_config()

    buf = read_wav(args.input)
    mcfg = sep_model.config
    if buf.sample_rate != mcfg.sample_rate:
        raise DataError(f"{args.input}: sample rate {buf.sample_rate} != "
                        f"{mcfg.sample_rate} (no resampling)")
    outs, trace, elapsed = stream_pipeline(sod_cfg=sod_cfg, x=buf.samples,
                                           sep_model=sep_model,
                                           sod_model=sod_model)
    n_frames = len(trace)
    hop = mcfg.hop
    rtf = (n_frames / elapsed) / (mcfg.sample_rate / hop)

    out.mkdir(parents=True, exist_ok=True)
    for ch, name in ((0, "ch1.wav"), (1, "ch2.wav")):
        write_wav(out / name, AudioBuffer(outs[ch], mcfg.sample_rate))
    with open(out / "sod_trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "sod"])
        for t, prob in trace:
            writer.writerow([t, f"{prob:.6f}"])
    print(f"processed {n_frames} frames in {elapsed:.2f}s "
          f"(real-time factor {rtf:.1f}x); outputs under {out}")
    return 0


def cmd_show_config(cfg: ExperimentConfig, args) -> int:
    if args.dump:
        save_config(cfg, args.dump)
        print(f"wrote {args.dump}")
    else:
        import yaml

        from .config import config_to_dict
        print(yaml.safe_dump(config_to_dict(cfg), sort_keys=False), end="")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="duosep",
        description="joint enhancement/separation toolkit")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int,
                   help="override the corpus master seed")
    p.add_argument("--out", help="override the work directory")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("mix", help="generate the synthetic corpus") \
       .set_defaults(func=cmd_mix)

    t = sub.add_parser("train-sep", help="train the separator")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train_sep)

    ts = sub.add_parser("train-sod", help="train the overlap detector")
    ts.add_argument("--sep", help="frozen separator checkpoint")
    ts.set_defaults(func=cmd_train_sod)

    e = sub.add_parser("eval", help="score the test split")
    e.add_argument("--sep", help="separator checkpoint")
    e.add_argument("--sod", help="SOD checkpoint")
    e.add_argument("--sod-masking", action="store_true",
                   help="zero channel-2 frames the detector calls single")
    e.add_argument("--oracle-sod", action="store_true",
                   help="use ground-truth overlap labels as decisions")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream", help="frame-by-frame inference on a WAV")
    s.add_argument("input", help="16 kHz mono WAV")
    s.add_argument("--sep", help="separator checkpoint")
    s.add_argument("--sod", help="SOD checkpoint")
    s.set_defaults(func=cmd_stream)

    c = sub.add_parser("show-config", help="print the resolved config")
    c.add_argument("--dump", help="write it to a file instead")
    c.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.scenes.master_seed = args.seed
        return args.func(cfg, args)
    except DuosepError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
