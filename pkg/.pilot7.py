"""Dress rehearsal v3: K=96, depth 3, 0.0625 s crops, crops_per_scene=15.

Adds per-channel single-talker diagnostics and saves the trained model
so it can be dissected without retraining.
"""
import time
import numpy as np
from duosep.scene import build_scene
from duosep.sepnet import (SepModel, ModelConfig, init_train_state,
                           train_epoch, forward_numpy)
from duosep.objectives import LossConfig
from duosep.metrics import eval_si_sdr
from duosep.checkpoint import save_separator

t0 = time.time()

def build(split, n, duration):
    out = []
    for i in range(n):
        spec, b = build_scene(11, split, i, duration=duration)
        out.append({"mix": b.mixture.samples,
                    "s1": b.targets.arrays()[0],
                    "s2": b.targets.arrays()[1],
                    "talker_count": spec.talker_count})
    return out

train = build("train", 512, 2.0)
print(f"train corpus built [{time.time()-t0:.0f}s]", flush=True)
test2 = build("test", 96, 2.0)
print(f"test corpus built [{time.time()-t0:.0f}s]", flush=True)

model = SepModel(ModelConfig(encoder_dim=96, separator_layers=3, seed=0))
state = init_train_state(model)
loss_cfg = LossConfig(objective="proposed")

def evaluate(ds, tag):
    imp1, imp2 = [], []
    ch1_si, ch2_si, base1 = [], [], []
    for it in ds:
        ests, _ = forward_numpy(model, it["mix"])
        if it["talker_count"] == 2:
            base = np.mean([eval_si_sdr(it["s1"], it["mix"]),
                            eval_si_sdr(it["s2"], it["mix"])])
            best = max(np.mean([eval_si_sdr(it["s1"], ests[0]),
                                eval_si_sdr(it["s2"], ests[1])]),
                       np.mean([eval_si_sdr(it["s1"], ests[1]),
                                eval_si_sdr(it["s2"], ests[0])]))
            imp2.append(best - base)
        else:
            base = eval_si_sdr(it["s1"], it["mix"])
            a = eval_si_sdr(it["s1"], ests[0])
            b = eval_si_sdr(it["s1"], ests[1])
            ch1_si.append(a)
            ch2_si.append(b)
            base1.append(base)
            imp1.append(max(a, b) - base)
    print(f"  {tag} single {np.mean(imp1):+.2f} (n={len(imp1)}) "
          f"dual {np.mean(imp2):+.2f} (n={len(imp2)}) "
          f"[{time.time()-t0:.0f}s]", flush=True)
    print(f"    singles: base {np.mean(base1):+.2f} "
          f"ch1 {np.mean(ch1_si):+.2f} ch2 {np.mean(ch2_si):+.2f} "
          f"ch1-wins {np.mean(np.array(ch1_si) > np.array(ch2_si)):.2f}",
          flush=True)

for epoch in range(15):
    r = train_epoch(state, train, loss_cfg, batch_size=8,
                    crop_seconds=0.0625, crops_per_scene=15)
    print(f"epoch {epoch} loss {r['mean_loss']:+8.3f} lr {r['lr']:.2e} "
          f"steps {r['steps']} [{time.time()-t0:.0f}s]", flush=True)
    if epoch in (4, 9):
        evaluate(test2[:48], f"eval@{epoch} 2s")

evaluate(test2, "FINAL 2s")
save_separator("/root/pkg/.pilot7_ckpt.npz", model, state.opt, epoch=14)
print(f"checkpoint saved [{time.time()-t0:.0f}s]", flush=True)
