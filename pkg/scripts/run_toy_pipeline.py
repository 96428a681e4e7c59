#!/usr/bin/env python3
"""End-to-end demo of the command-line pipeline at toy scale.

Runs, in order: corpus synthesis, separator training, overlap-detector
training, scoring with and without channel-2 masking, and frame-by-frame
streaming over one test mixture. Everything goes through the same `duosep`
entry points a user would call, with a small config written next to the
outputs, so the whole run is reproducible from that one file.

Usage:
    python3 scripts/run_toy_pipeline.py [--out runs/demo] [--fast]

--fast shrinks the corpus and training budget to a smoke-test size
(about a minute); the default settings take several minutes on one core.
"""
import argparse
import pathlib
import sys

import yaml

from duosep.cli import main as duosep


def write_config(path: pathlib.Path, fast: bool) -> None:
    cfg = {
        "scenes": {"master_seed": 11,
                   "train_scenes": 24 if fast else 128,
                   "test_scenes": 12 if fast else 48,
                   "duration": 1.0 if fast else 2.0},
        "model": {"encoder_dim": 32 if fast else 64,
                  "separator_layers": 1 if fast else 2,
                  "seed": 0},
        "training": {"epochs": 2 if fast else 8,
                     "batch_size": 8,
                     "crop_seconds": 0.125,
                     "crops_per_scene": 2 if fast else 4},
        "sod": {"hidden": 8 if fast else 16,
                "steps": 60 if fast else 400,
                "crop_frames": 120 if fast else 500,
                "batch_size": 8,
                "seed": 0},
        "paths": {"work_dir": str(path.parent)},
    }
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))


def step(title, argv):
    print(f"\n=== {title}\n$ duosep {' '.join(argv)}", flush=True)
    code = duosep(argv)
    if code != 0:
        print(f"step failed with exit code {code}", file=sys.stderr)
        sys.exit(code)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--fast", action="store_true",
                    help="smoke-test budget (about a minute)")
    args = ap.parse_args(argv)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.yaml"
    write_config(cfg_path, args.fast)
    base = ["--config", str(cfg_path), "--out", str(out)]

    step("synthesize the corpus", base + ["mix"])
    step("train the separator", base + ["train-sep"])
    step("train the overlap detector", base + ["train-sod"])
    step("score the test split (raw separator)", base + ["eval"])
    step("score again with channel-2 masking", base + ["eval", "--sod-masking"])

    # stream one dual-talker test mixture through the frame-by-frame path
    manifest = out / "data" / "test" / "test_manifest.jsonl"
    import json
    with open(manifest) as fh:
        records = [json.loads(line) for line in fh]
    dual = next(r for r in records if r["talker_count"] == 2)
    step("stream one test mixture",
         base + ["stream", str(out / "data" / "test" / dual["mix"])])

    print(f"\nall artifacts under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
