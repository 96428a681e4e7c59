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


def score(model, item):
    ests, _ = forward_numpy(model, item["mix"])
    mix = item["mix"]
    if item["talker_count"] == 2:
        refs = [item["s1"], item["s2"]]
        best = None
        for perm in ((0, 1), (1, 0)):
            v = np.mean([si_sdr_np(ests[c], refs[perm[c]]) for c in range(2)])
            best = v if best is None else max(best, v)
        base = np.mean([si_sdr_np(mix, r) for r in refs])
        return best - base
    ref = item["s1"]
    best = max(si_sdr_np(ests[0], ref), si_sdr_np(ests[1], ref))
    return best - si_sdr_np(mix, ref)


def load(split, n, seed=11):
    out = []
    for i in range(n):
        spec, b = build_scene(seed, split, i, duration=4.0)
        out.append({"mix": b.mixture.samples,
                    "s1": b.targets.sources[0].samples,
                    "s2": b.targets.sources[1].samples,
                    "talker_count": spec.talker_count})
    return out


t0 = time.time()
train = load("train", 128)
test = load("test", 24)
print(f"corpus: {time.time()-t0:.1f}s "
      f"({sum(d['talker_count']==2 for d in train)} dual of {len(train)})",
      flush=True)

model = SepModel(ModelConfig(encoder_dim=64, separator_layers=2, seed=0))
state = init_train_state(model)
lc = LossConfig(objective="proposed", measure="si-sdr")

def evaluate():
    d = [score(model, it) for it in test if it["talker_count"] == 2]
    s = [score(model, it) for it in test if it["talker_count"] == 1]
    return float(np.mean(s)), float(np.mean(d))

s0, d0 = evaluate()
print(f"epoch -  : single {s0:+.2f} dB  dual {d0:+.2f} dB", flush=True)
for ep in range(8):
    t1 = time.time()
    met = train_epoch(state, train, lc, batch_size=8, crop_seconds=1.0)
    s, d = evaluate()
    print(f"epoch {ep:2d}: loss {met['mean_loss']:+7.3f} "
          f"single {s:+.2f} dB  dual {d:+.2f} dB  "
          f"[{time.time()-t1:.0f}s]", flush=True)
print(f"total {time.time()-t0:.0f}s")
