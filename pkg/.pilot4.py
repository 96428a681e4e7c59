import sys, time
sys.path.insert(0, "src")
import numpy as np
from duosep.scene import build_scene
from duosep.sepnet import ModelConfig, SepModel, forward_numpy, init_train_state, train_epoch
from duosep.objectives import LossConfig


def si_sdr_np(est, ref):
    a = float(est @ ref) / float(ref @ ref)
    t = a * ref
    e = est - t
    return 10 * np.log10(float(t @ t) / max(float(e @ e), 1e-30))


def score(model, item):
    ests, _ = forward_numpy(model, item["mix"])
    if item["talker_count"] == 2:
        p1 = 0.5 * (si_sdr_np(ests[0], item["s1"]) + si_sdr_np(ests[1], item["s2"]))
        p2 = 0.5 * (si_sdr_np(ests[0], item["s2"]) + si_sdr_np(ests[1], item["s1"]))
        out = max(p1, p2)
        base = 0.5 * (si_sdr_np(item["mix"], item["s1"]) + si_sdr_np(item["mix"], item["s2"]))
    else:
        out = max(si_sdr_np(ests[0], item["s1"]), si_sdr_np(ests[1], item["s1"]))
        base = si_sdr_np(item["mix"], item["s1"])
    return out - base


def load(split, n, seed=11):
    items = []
    for i in range(n):
        spec, b = build_scene(seed, split, i)
        srcs = b.targets.arrays()
        items.append({
            "mix": b.mixture.samples,
            "s1": srcs[0],
            "s2": srcs[1] if len(srcs) > 1 else np.zeros_like(b.mixture.samples),
            "talker_count": spec.talker_count,
        })
    return items


def evaluate(model, items, t0, tag):
    sing = [score(model, it) for it in items if it["talker_count"] == 1]
    dual = [score(model, it) for it in items if it["talker_count"] == 2]
    print(f"{tag} single {np.mean(sing):+6.2f} (n={len(sing)}) dual {np.mean(dual):+6.2f} "
          f"(n={len(dual)}) [{time.time()-t0:.0f}s]", flush=True)


if __name__ == "__main__":
    t0 = time.time()
    train = load("train", 512)
    print(f"train corpus built [{time.time()-t0:.0f}s]", flush=True)
    test = load("test", 96)
    print(f"test corpus built [{time.time()-t0:.0f}s]", flush=True)

    model = SepModel(ModelConfig(encoder_dim=64, separator_layers=2, seed=0))
    state = init_train_state(model)
    loss_cfg = LossConfig(objective="proposed")
    for epoch in range(15):
        m = train_epoch(state, train, loss_cfg, batch_size=8,
                        crop_seconds=0.25, crops_per_scene=4)
        print(f"epoch {epoch} loss {m['mean_loss']:+8.3f} lr {m['lr']:.2e} "
              f"steps {m['steps']} [{time.time()-t0:.0f}s]", flush=True)
        if epoch % 3 == 2 or epoch == 14:
            evaluate(model, test[:48], t0, f"  eval@{epoch}")
    evaluate(model, test, t0, "FINAL full test")
