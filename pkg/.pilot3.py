import sys, time
sys.path.insert(0, "src")
import numpy as np
from duosep.scene import build_scene
from duosep.sepnet import ModelConfig, SepModel, forward_batch, forward_numpy, select_crop
from duosep.objectives import LossConfig, TargetSet, objective_dispatch
from duosep.optim import Adam
from duosep.autodiff import Graph


def si_sdr_np(est, ref):
    a = float(est @ ref) / float(ref @ ref)
    t = a * ref
    e = est - t
    return 10 * np.log10(float(t @ t) / max(float(e @ e), 1e-30))


def score(model, item, improvement=True):
    ests, _ = forward_numpy(model, item["mix"])
    if item["talker_count"] == 2:
        p1 = 0.5 * (si_sdr_np(ests[0], item["s1"]) + si_sdr_np(ests[1], item["s2"]))
        p2 = 0.5 * (si_sdr_np(ests[0], item["s2"]) + si_sdr_np(ests[1], item["s1"]))
        out = max(p1, p2)
        base = 0.5 * (si_sdr_np(item["mix"], item["s1"]) + si_sdr_np(item["mix"], item["s2"]))
    else:
        out = max(si_sdr_np(ests[0], item["s1"]), si_sdr_np(ests[1], item["s1"]))
        base = si_sdr_np(item["mix"], item["s1"])
    return out - base if improvement else out


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


def report(tag, model, items, t0):
    sing = [score(model, it) for it in items if it["talker_count"] == 1]
    dual = [score(model, it) for it in items if it["talker_count"] == 2]
    sab = [score(model, it, False) for it in items if it["talker_count"] == 1]
    dab = [score(model, it, False) for it in items if it["talker_count"] == 2]
    print(f"{tag} impr single {np.mean(sing):+6.2f} dual {np.mean(dual):+6.2f} "
          f"| abs single {np.mean(sab):+6.2f} dual {np.mean(dab):+6.2f} [{time.time()-t0:.0f}s]",
          flush=True)


def run_overfit(cfg, items, steps, crop_len, lr, tag):
    model = SepModel(cfg)
    opt = Adam(model.params)
    loss_cfg = LossConfig(objective="proposed")
    rng = np.random.default_rng(1234)
    t0 = time.time()
    for step in range(steps):
        idx = rng.permutation(len(items))[:8]
        crops, tgts = [], []
        for i in idx:
            it = items[i]
            st = select_crop(rng, it["mix"], [it["s1"], it["s2"]], it["talker_count"], crop_len)
            crops.append(it["mix"][st:st + crop_len])
            tgts.append(TargetSet(
                sources=[it["s1"][st:st + crop_len][None, :],
                         it["s2"][st:st + crop_len][None, :]],
                talker_count=it["talker_count"]))
        g = Graph()
        (est1, est2), _, pvars = forward_batch(model, g, np.stack(crops))
        total = None
        for b, tg in enumerate(tgts):
            loss = objective_dispatch(loss_cfg, tg, [est1.rows(b, b + 1), est2.rows(b, b + 1)])
            total = loss if total is None else total + loss
        total = total.scale(1.0 / len(idx))
        grads = total.backward()
        opt.step({n: grads[v.id] for n, v in pvars.items() if v.id in grads}, lr)
        if (step + 1) % 100 == 0:
            print(f"{tag} step {step+1} loss {float(total.value):+8.3f}", flush=True)
            report(f"{tag} step {step+1}", model, items, t0)
    return model


if __name__ == "__main__":
    items8 = load("train", 8)
    tcs = [it["talker_count"] for it in items8]
    print("talker counts:", tcs, flush=True)
    crop = 4000  # 0.25 s
    cfg = ModelConfig(frame_ms=2.0, encoder_dim=64, separator_layers=2, seed=3)
    run_overfit(cfg, items8, steps=1200, crop_len=crop, lr=1e-3, tag="C")
