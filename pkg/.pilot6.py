"""Dress rehearsal v2: K=96, 0.125 s crops, crops_per_scene=10."""
import time
import numpy as np
from duosep.scene import build_scene
from duosep.sepnet import (SepModel, ModelConfig, init_train_state,
                           train_epoch, forward_numpy)
from duosep.objectives import LossConfig
from duosep.metrics import eval_si_sdr

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
test4 = build("test", 96, 4.0)
print(f"test corpora built [{time.time()-t0:.0f}s]", flush=True)

model = SepModel(ModelConfig(encoder_dim=96, separator_layers=2, seed=0))
state = init_train_state(model)
loss_cfg = LossConfig(objective="proposed")

def evaluate(ds, tag):
    imp1, imp2 = [], []
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
            imp1.append(max(eval_si_sdr(it["s1"], ests[0]),
                            eval_si_sdr(it["s1"], ests[1])) - base)
    print(f"  {tag} single {np.mean(imp1):+.2f} (n={len(imp1)}) "
          f"dual {np.mean(imp2):+.2f} (n={len(imp2)}) "
          f"[{time.time()-t0:.0f}s]", flush=True)

for epoch in range(15):
    r = train_epoch(state, train, loss_cfg, batch_size=8,
                    crop_seconds=0.125, crops_per_scene=10)
    print(f"epoch {epoch} loss {r['mean_loss']:+8.3f} lr {r['lr']:.2e} "
          f"steps {r['steps']} [{time.time()-t0:.0f}s]", flush=True)
    if epoch in (4, 9):
        evaluate(test2[:48], f"eval@{epoch} 2s")

evaluate(test2, "FINAL 2s")
evaluate(test4, "FINAL 4s")
