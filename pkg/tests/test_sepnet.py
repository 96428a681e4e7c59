"""Model, streaming, and training-loop tests."""

import numpy as np
import pytest

from duosep.autodiff import Graph
from duosep.exceptions import ConfigError, DataError, NumericalError
from duosep.objectives import LossConfig, TargetSet, objective_dispatch
from duosep.optim import Adam
from duosep.sepnet import (LR_DECAY, ModelConfig, SepModel, Streamer,
                           forward, forward_batch, forward_numpy,
                           frame_signal, init_train_state,
                           overlap_add_numpy, select_crop, sqrt_hann,
                           stream_init, streaming_step, train_epoch)

TINY = ModelConfig(frame_ms=0.25, encoder_dim=8, separator_layers=1, seed=7)


def small_model(seed=3, K=16, layers=2):
    return SepModel(ModelConfig(encoder_dim=K, separator_layers=layers,
                                seed=seed))


# ---------------------------------------------------------------------------
# config and parameters


def test_config_default_geometry():
    cfg = ModelConfig()
    assert cfg.frame == 32
    assert cfg.hop == 16
    assert cfg.latency_samples == 48


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ModelConfig(frame_ms=0.3)        # 4.8 samples
    with pytest.raises(ConfigError):
        ModelConfig(encoder_dim=4)
    with pytest.raises(ConfigError):
        ModelConfig(separator_layers=0)


def test_param_shapes_and_seeded_init():
    cfg = ModelConfig(encoder_dim=16, separator_layers=2, seed=5)
    m = SepModel(cfg)
    assert m.params["enc.W"].shape == (32, 16)
    assert m.params["mask.W"].shape == (16, 32)
    assert m.params["mask.b"].shape == (32,)
    assert m.params["dec.W"].shape == (16, 32)
    for layer in range(2):
        for gate in ("Wz", "Wr", "Wc", "Uz", "Ur", "Uc"):
            assert m.params[f"sep{layer}.{gate}"].shape == (16, 16)
        for gate in ("bz", "br", "bc"):
            assert np.all(m.params[f"sep{layer}.{gate}"] == 0.0)
    # uniform(-1/sqrt(fan_in), ..) bound
    assert np.abs(m.params["enc.W"]).max() <= 1.0 / np.sqrt(32)

    m2 = SepModel(cfg)
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])
    m3 = SepModel(ModelConfig(encoder_dim=16, separator_layers=2, seed=6))
    assert not np.array_equal(m.params["enc.W"], m3.params["enc.W"])


# ---------------------------------------------------------------------------
# framing and reconstruction


def test_frame_signal_constant_ones():
    frames = frame_signal(np.ones(12), TINY)  # frame 4, hop 2
    assert frames.shape == (5, 4)
    assert np.all(frames == 1.0)


def test_frame_signal_impulse_stays_in_first_frame():
    x = np.zeros(12)
    x[0] = 1.0
    frames = frame_signal(x, TINY)
    assert frames[0, 0] == 1.0
    assert np.all(frames[1:] == 0.0)


def test_frame_signal_pads_tail():
    frames = frame_signal(np.ones(11), TINY)
    assert frames.shape == (5, 4)
    assert np.all(frames[-1] == [1.0, 1.0, 1.0, 0.0])


def test_frame_signal_rejects_short_input():
    with pytest.raises(DataError):
        frame_signal(np.ones(3), TINY)


def test_sqrt_hann_overlap_sums_to_one():
    for n in (4, 32, 64):
        w2 = sqrt_hann(n) ** 2
        assert np.allclose(w2[:n // 2] + w2[n // 2:], 1.0, atol=1e-15)


def test_analysis_synthesis_round_trip():
    cfg = ModelConfig()
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    w = sqrt_hann(cfg.frame)
    rec = overlap_add_numpy(frame_signal(x, cfg) * w * w, cfg.hop)[:1000]
    err = np.abs(rec[cfg.frame:-cfg.frame] - x[cfg.frame:-cfg.frame]).max()
    assert err < 1e-6


# ---------------------------------------------------------------------------
# forward invariants


def test_zero_input_gives_exact_zero_output():
    m = small_model()
    ests, masks = forward_numpy(m, np.zeros(320))
    assert np.all(ests == 0.0)
    # graph path too
    (e1, e2), _, g, _ = forward(m, np.zeros(320))
    assert np.all(e1.value == 0.0) and np.all(e2.value == 0.0)


def test_masks_live_in_unit_interval():
    m = small_model()
    rng = np.random.default_rng(1)
    _, masks = forward_numpy(m, rng.normal(size=800) * 5.0)
    assert masks.min() >= 0.0 and masks.max() <= 1.0
    assert masks.shape[1] == 2 * m.config.encoder_dim


def test_graph_forward_matches_numpy_twin():
    m = small_model()
    rng = np.random.default_rng(2)
    x = rng.normal(size=640)
    (e1, e2), masks_v, g, _ = forward(m, x)
    ests, masks = forward_numpy(m, x)
    assert np.abs(e1.value[0] - ests[0]).max() < 1e-9
    assert np.abs(e2.value[0] - ests[1]).max() < 1e-9
    assert np.abs(masks_v.value - masks).max() < 1e-9


def test_causality_beyond_latency_horizon():
    m = small_model()
    cfg = m.config
    rng = np.random.default_rng(3)
    x = rng.normal(size=1200)
    base, _ = forward_numpy(m, x)
    for t in (100, 500, 900):
        y = x.copy()
        y[t + cfg.latency_samples + 1:] += rng.normal(
            size=len(x) - t - cfg.latency_samples - 1) * 100.0
        pert, _ = forward_numpy(m, y)
        assert np.array_equal(base[:, :t + 1], pert[:, :t + 1]), (
            f"future perturbation leaked into samples <= {t}")


def test_streaming_matches_batch_forward():
    m = small_model()
    hop = m.config.hop
    rng = np.random.default_rng(4)
    for trial in range(10):
        L = int(rng.integers(200, 1500))
        x = rng.normal(size=L)
        ref, ref_masks = forward_numpy(m, x)
        st = Streamer(m)
        padded = np.concatenate([x, np.zeros((-L) % hop)])
        chunks = []
        for b in range(len(padded) // hop):
            out = st.push(padded[b * hop:(b + 1) * hop])
            if out is not None:
                chunks.append(out)
        tail = st.finish(L)
        y = np.concatenate(chunks + [tail], axis=1)
        assert y.shape == (2, L)
        assert np.abs(y - ref).max() < 1e-9, f"trial {trial}"
        assert np.abs(np.stack(st.masks) - ref_masks).max() < 1e-9


def test_streaming_first_frame_matches_batch():
    m = small_model()
    cfg = m.config
    rng = np.random.default_rng(5)
    x = rng.normal(size=cfg.frame * 3)
    frames = frame_signal(x, cfg)
    state = stream_init(m)
    o1, o2, mask, state = streaming_step(m, state, frames[0])
    _, masks = forward_numpy(m, x)
    assert np.abs(mask - masks[0]).max() < 1e-12


def test_streaming_state_is_constant_size():
    m = small_model(K=16, layers=2)
    state = stream_init(m)
    assert len(state["h"]) == 2
    rng = np.random.default_rng(6)
    for _ in range(5):
        _, _, _, state = streaming_step(m, state,
                                        rng.normal(size=m.config.frame))
        assert all(h.shape == (16,) for h in state["h"])


# ---------------------------------------------------------------------------
# gradients


def test_model_gradients_match_finite_differences():
    model = SepModel(TINY)
    rng = np.random.default_rng(1)
    L = TINY.frame + 2 * TINY.hop  # 3 frames
    crops = rng.normal(size=(2, L))
    s1 = rng.normal(size=(1, L))
    s2 = rng.normal(size=(1, L))

    def build():
        g = Graph()
        pv = {k: g.param(v) for k, v in model.params.items()}
        (e1, e2), _, _ = forward_batch(model, g, crops, pvars=pv)
        total = None
        for b, tc in enumerate((2, 1)):
            tg = TargetSet(sources=[s1, s2 if tc == 2 else
                                    np.zeros((1, L))], talker_count=tc)
            item = objective_dispatch(LossConfig(objective="proposed"),
                                      tg, [e1.rows(b, b + 1),
                                           e2.rows(b, b + 1)])
            total = item if total is None else total + item
        return pv, total.scale(0.5)

    pv, loss = build()
    grads = loss.backward()
    worst = 0.0
    for name, arr in model.params.items():
        analytic = grads[pv[name].id]
        flat = arr.ravel()
        for i in np.linspace(0, flat.size - 1,
                             min(4, flat.size)).astype(int):
            orig = flat[i]
            flat[i] = orig + 1e-5
            hi = float(build()[1].value)
            flat[i] = orig - 1e-5
            lo = float(build()[1].value)
            flat[i] = orig
            central = (hi - lo) / 2e-5
            a = analytic.ravel()[i]
            worst = max(worst,
                        abs(a - central) / max(abs(a), abs(central), 1e-12))
    assert worst < 1e-4, f"worst relative gradient error {worst}"


# ---------------------------------------------------------------------------
# optimizer


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p)
    opt.step({"w": np.array([0.3, -0.2])}, lr=0.01)
    # bias-corrected first step reduces to lr * g / (|g| + eps)
    assert np.allclose(p["w"], [1.0 - 0.01, -2.0 + 0.01], atol=1e-6)


def test_gradient_clip_applies_before_update():
    p_big = {"w": np.zeros(3)}
    p_ref = {"w": np.zeros(3)}
    Adam(p_big).step({"w": np.full(3, 100.0)}, lr=0.1)
    Adam(p_ref).step({"w": np.full(3, 5.0)}, lr=0.1)
    assert np.array_equal(p_big["w"], p_ref["w"])


def test_adam_rejects_bad_grads():
    opt = Adam({"w": np.zeros(2)})
    with pytest.raises(ConfigError):
        opt.step({"bogus": np.zeros(2)}, lr=0.1)
    with pytest.raises(ConfigError):
        opt.step({"w": np.zeros(3)}, lr=0.1)
    with pytest.raises(NumericalError):
        opt.step({"w": np.array([np.nan, 0.0])}, lr=0.1)


def test_adam_state_roundtrip():
    p = {"w": np.array([1.0, 2.0])}
    opt = Adam(p)
    opt.step({"w": np.array([0.5, -0.5])}, lr=0.01)
    saved = opt.state_dict()
    opt2 = Adam({"w": p["w"].copy()})
    opt2.load_state_dict(saved)
    assert opt2.t == opt.t
    assert np.array_equal(opt2.m["w"], opt.m["w"])
    assert np.array_equal(opt2.v["w"], opt.v["w"])


# ---------------------------------------------------------------------------
# training loop


def tone_dataset(n_items=2, L=4000):
    rng = np.random.default_rng(9)
    t = np.arange(L) / 16000.0
    out = []
    for i in range(n_items):
        s1 = np.sin(2 * np.pi * (200 + 40 * i) * t)
        if i % 2 == 0:
            s2 = np.sin(2 * np.pi * (350 + 40 * i) * t + 1.0)
            tc = 2
        else:
            s2 = np.zeros(L)
            tc = 1
        mix = s1 + s2 + 0.05 * rng.normal(size=L)
        out.append({"mix": mix, "s1": s1, "s2": s2, "talker_count": tc})
    return out


def test_lr_schedule_is_exact_power():
    m = SepModel(ModelConfig(encoder_dim=8, separator_layers=1, seed=0))
    state = init_train_state(m)
    ds = tone_dataset(2, L=800)
    lc = LossConfig(objective="proposed")
    for _ in range(2):
        train_epoch(state, ds, lc, batch_size=2, crop_seconds=0.05)
    assert state.epoch == 2
    assert state.lr == 1e-3 * LR_DECAY ** 2


def test_train_epoch_overfits_fixed_batch():
    m = SepModel(ModelConfig(encoder_dim=16, separator_layers=1, seed=1))
    state = init_train_state(m)
    ds = tone_dataset(2, L=4000)
    lc = LossConfig(objective="proposed")
    first = train_epoch(state, ds, lc, batch_size=2,
                        crop_seconds=0.25)["mean_loss"]
    last = first
    for _ in range(49):
        last = train_epoch(state, ds, lc, batch_size=2,
                           crop_seconds=0.25)["mean_loss"]
    assert first - last >= 1.0, (
        f"loss only moved {first - last:.3f} dB over 50 steps")


def test_train_epoch_deterministic():
    def run():
        m = SepModel(ModelConfig(encoder_dim=8, separator_layers=1, seed=2))
        state = init_train_state(m)
        ds = tone_dataset(4, L=1600)
        train_epoch(state, ds, LossConfig(objective="proposed"),
                    batch_size=2, crop_seconds=0.05)
        return m.params

    a, b = run(), run()
    for k in a:
        assert np.array_equal(a[k], b[k]), k


def test_train_epoch_logs_rows():
    m = SepModel(ModelConfig(encoder_dim=8, separator_layers=1, seed=0))
    state = init_train_state(m)
    ds = tone_dataset(4, L=1600)
    train_epoch(state, ds, LossConfig(objective="proposed"),
                batch_size=2, crop_seconds=0.05)
    assert len(state.log_rows) == 2
    for epoch, step, loss, lr in state.log_rows:
        assert epoch == 0 and np.isfinite(loss) and lr == 1e-3


def test_train_epoch_aborts_on_nonfinite():
    m = SepModel(ModelConfig(encoder_dim=8, separator_layers=1, seed=0))
    state = init_train_state(m)
    ds = tone_dataset(2, L=1600)
    ds[0]["mix"] = np.full_like(ds[0]["mix"], np.nan)
    with pytest.raises(NumericalError, match="epoch 0 step"):
        train_epoch(state, ds, LossConfig(objective="proposed"),
                    batch_size=2, crop_seconds=0.05)


def test_train_epoch_rejects_empty_dataset():
    m = SepModel(ModelConfig(encoder_dim=8, separator_layers=1, seed=0))
    with pytest.raises(DataError):
        train_epoch(init_train_state(m), [],
                    LossConfig(objective="proposed"))


def test_select_crop_prefers_active_region():
    rng = np.random.default_rng(0)
    L = 8000
    s1 = np.zeros(L)
    s1[6000:] = np.sin(np.arange(2000))  # energy only in the last quarter
    mix = s1.copy()
    start = select_crop(rng, mix, [s1, np.zeros(L)], 1, crop_len=2000)
    crop = s1[start:start + 2000]
    assert float(crop @ crop) > 0.0
