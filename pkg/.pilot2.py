import time
import numpy as np

from duosep.scene import build_scene
from duosep.sepnet import (ModelConfig, SepModel, forward_numpy,
                           init_train_state, train_epoch)
from duosep.objectives import LossConfig


def si_sdr_np(est, ref, eps=1e-8):
    alpha = float(est @ ref) / max(float(ref @ ref), 1e-300)
    t = alpha * ref
    return 10.0 * np.log10((float(t @ t) + eps)
                           / (float((est - t) @ (est - t)) + eps) + eps)


def score(model, item, improvement=True):
    ests, _ = forward_numpy(model, item["mix"])
    mix = item["mix"]
    if item["talker_count"] == 2:
        refs = [item["s1"], item["s2"]]
        best = max(np.mean([si_sdr_np(ests[c], refs[p[c]]) for c in range(2)])
                   for p in ((0, 1), (1, 0)))
        base = np.mean([si_sdr_np(mix, r) for r in refs])
    else:
        ref = item["s1"]
        best = max(si_sdr_np(ests[0], ref), si_sdr_np(ests[1], ref))
        base = si_sdr_np(mix, ref)
    return best - base if improvement else best


def load(split, n, seed=11):
    out = []
    for i in range(n):
        spec, b = build_scene(seed, split, i, duration=4.0)
        out.append({"mix": b.mixture.samples,
                    "s1": b.targets.sources[0].samples,
                    "s2": b.targets.sources[1].samples,
                    "talker_count": spec.talker_count})
    return out


lc = LossConfig(objective="proposed", measure="si-sdr")

# --- probe A: overfit ceiling on 8 scenes -------------------------------
train8 = load("train", 8)
model = SepModel(ModelConfig(encoder_dim=64, separator_layers=2, seed=0))
state = init_train_state(model)
t0 = time.time()
for ep in range(100):           # batch 4 -> 2 steps/epoch = 200 steps
    met = train_epoch(state, train8, lc, batch_size=4, crop_seconds=1.0)
    if ep % 20 == 19:
        sing = [score(model, it, False) for it in train8
                if it["talker_count"] == 1]
        dual = [score(model, it, False) for it in train8
                if it["talker_count"] == 2]
        si = [score(model, it) for it in train8 if it["talker_count"] == 1]
        di = [score(model, it) for it in train8 if it["talker_count"] == 2]
        print(f"A ep{ep:3d} loss {met['mean_loss']:+7.3f} "
              f"train-abs single {np.mean(sing):+6.2f} dual {np.mean(dual):+6.2f} "
              f"| impr single {np.mean(si):+6.2f} dual {np.mean(di):+6.2f} "
              f"[{time.time()-t0:.0f}s]", flush=True)

# --- probe B: 128-scene generalization with feature norm ----------------
train = load("train", 128)
test = load("test", 24)
model = SepModel(ModelConfig(encoder_dim=64, separator_layers=2, seed=0))
state = init_train_state(model)
t0 = time.time()
for ep in range(10):
    met = train_epoch(state, train, lc, batch_size=16, crop_seconds=1.0)
    s = np.mean([score(model, it) for it in test if it["talker_count"] == 1])
    d = np.mean([score(model, it) for it in test if it["talker_count"] == 2])
    print(f"B ep{ep:2d} loss {met['mean_loss']:+7.3f} "
          f"single {s:+6.2f} dual {d:+6.2f} [{time.time()-t0:.0f}s]",
          flush=True)
