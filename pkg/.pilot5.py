"""Overfit probe on single-talker scenes only: find the fidelity ceiling."""
import sys, time
import numpy as np
from duosep.scene import build_scene
from duosep.sepnet import (SepModel, ModelConfig, forward_batch,
                           forward_numpy, select_crop)
from duosep.objectives import LossConfig, TargetSet, objective_dispatch
from duosep.optim import Adam
from duosep.autodiff import Graph
from duosep.metrics import eval_si_sdr

K = int(sys.argv[1]) if len(sys.argv) > 1 else 64
L = int(sys.argv[2]) if len(sys.argv) > 2 else 2
CROP = float(sys.argv[3]) if len(sys.argv) > 3 else 0.25
STEPS = int(sys.argv[4]) if len(sys.argv) > 4 else 1500
BATCH = int(sys.argv[5]) if len(sys.argv) > 5 else 8

t0 = time.time()
scenes = []
i = 0
while len(scenes) < 8:
    spec, b = build_scene(11, "train", i, duration=2.0)
    if spec.talker_count == 1:
        scenes.append(b)
    i += 1
print(f"8 single scenes from first {i} [{time.time()-t0:.0f}s]", flush=True)

cfg = ModelConfig(encoder_dim=K, separator_layers=L, seed=0)
model = SepModel(cfg)
opt = Adam(model.params)
loss_cfg = LossConfig(objective="proposed")
rng = np.random.default_rng(123)
sr = 16000
clen = int(CROP * sr)

def improvement():
    vals = []
    for b in scenes:
        mix = b.mixture.samples
        out = forward_numpy(model, mix)
        e1, e2 = out[0]
        s1 = b.targets.arrays()[0]
        base = eval_si_sdr(s1, mix)
        vals.append(max(eval_si_sdr(s1, e1), eval_si_sdr(s1, e2)) - base)
    return np.mean(vals)

for step in range(1, STEPS + 1):
    g = Graph()
    batch = [scenes[j] for j in rng.integers(0, 8, size=BATCH)]
    crops, tgs = [], []
    for b in batch:
        mix = b.mixture.samples
        s1f, s2f = b.targets.arrays()
        off = select_crop(rng, mix, [s1f, s2f], 1, clen)
        crops.append(mix[off:off+clen])
        s1 = s1f[off:off+clen]
        tgs.append(TargetSet(sources=[s1[None, :]], talker_count=1))
    (est1, est2), _, pvars = forward_batch(model, g, np.stack(crops))
    total = None
    for bi, tg in enumerate(tgs):
        term = objective_dispatch(loss_cfg, tg,
                                  [est1.rows(bi, bi+1), est2.rows(bi, bi+1)])
        total = term if total is None else total + term
    total = total.scale(1.0 / BATCH)
    grads = total.backward()
    name_grads = {name: grads[v.id] for name, v in pvars.items()
                  if v.id in grads}
    opt.step(name_grads, 1e-3)
    if step % 300 == 0 or step == 50:
        print(f"step {step} loss {float(total.value):+.3f} "
              f"impr {improvement():+.2f} [{time.time()-t0:.0f}s]", flush=True)
