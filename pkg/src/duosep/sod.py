"""Frame-wise speaker-overlap detector on concatenated separator masks.

Pipeline per frame: m1 = relu(FF1(mask_2K)); m2 = relu(two stacked gated
recurrent layers over m1); p = sigmoid(FF2(m2)). Trained on utterance
labels (0 one talker, 1 two talkers) against the mean frame probability
with binary cross-entropy in nats, while the separator that produced the
masks stays frozen. The post-processor zeroes second-channel frames
whose detector value falls below the threshold, before overlap-add.
"""

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .autodiff import Graph, Var
from .exceptions import ConfigError, DataError, NumericalError
from .optim import Adam
from .sepnet import gru_layer, gru_layer_numpy

LN10 = float(np.log(10.0))
MASK_CACHE_MAGIC = b"MCHE\x01\x00"


@dataclass
class SodConfig:
    """input_dim is 2K (both mask blocks); hidden default suits the toy
    scale, 64 matches the full-size recipe."""

    input_dim: int
    hidden: int = 16
    threshold: float = 0.5
    warmup_ms: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 2 or self.input_dim % 2 != 0:
            raise ConfigError(
                f"input_dim must be an even mask width, got {self.input_dim}")
        if self.hidden < 4:
            raise ConfigError(f"hidden must be >= 4: {self.hidden}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(
                f"threshold must lie strictly in (0,1): {self.threshold}")
        if self.warmup_ms < 0:
            raise ConfigError(f"warmup_ms must be >= 0: {self.warmup_ms}")


SOD_GRU_LAYERS = 2


class SodModel:
    """Parameter container for the overlap detector."""

    def __init__(self, config: SodConfig):
        self.config = config
        D, H = config.input_dim, config.hidden
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))

        def uniform(fan_in, shape):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape)

        self.params: dict = {}
        self.params["ff1.W"] = uniform(D, (D, H))
        self.params["ff1.b"] = np.zeros(H)
        for layer in range(SOD_GRU_LAYERS):
            for gate in ("Wz", "Wr", "Wc", "Uz", "Ur", "Uc"):
                self.params[f"gru{layer}.{gate}"] = uniform(H, (H, H))
            for gate in ("bz", "br", "bc"):
                self.params[f"gru{layer}.{gate}"] = np.zeros(H)
        self.params["ff2.W"] = uniform(H, (H, 1))
        self.params["ff2.b"] = np.zeros(1)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def bind(self, g: Graph) -> dict:
        return {name: g.param(arr) for name, arr in self.params.items()}


def sod_param_count_formula(input_dim: int, hidden: int) -> int:
    """Closed form for the parameter count: (D+1)H for FF1, 6H^2+3H per
    recurrent layer, H+1 for FF2. O(K*H + H^2) in the mask width 2K."""
    D, H = input_dim, hidden
    return (D + 1) * H + SOD_GRU_LAYERS * (6 * H * H + 3 * H) + H + 1


# ---------------------------------------------------------------------------
# forward passes


def sod_forward_graph(model: SodModel, g: Graph, mask_seqs: np.ndarray,
                      batch: int, pvars: dict | None = None):
    """Differentiable forward over time-major rows (T*B, 2K).

    Returns (probs, pvars) with probs a (T*B, 1) node of frame values.
    """
    mask_seqs = np.asarray(mask_seqs, dtype=np.float64)
    if mask_seqs.ndim != 2 or mask_seqs.shape[1] != model.config.input_dim:
        raise DataError(
            f"mask rows must be (*, {model.config.input_dim}), "
            f"got {mask_seqs.shape}")
    if mask_seqs.shape[0] % batch != 0:
        raise DataError(f"{mask_seqs.shape[0]} rows do not tile into "
                        f"batch {batch}")
    steps = mask_seqs.shape[0] // batch
    if pvars is None:
        pvars = model.bind(g)
    x = g.constant(mask_seqs)
    h = (x @ pvars["ff1.W"] + pvars["ff1.b"]).relu()
    for layer in range(SOD_GRU_LAYERS):
        h = gru_layer(g, pvars, f"gru{layer}", h, steps, batch)
    h = h.relu()
    probs = (h @ pvars["ff2.W"] + pvars["ff2.b"]).sigmoid()
    return probs, pvars


def sod_forward(model: SodModel, mask_seq: np.ndarray) -> np.ndarray:
    """Frame probabilities for one utterance's (T, 2K) mask sequence."""
    mask_seq = np.asarray(mask_seq, dtype=np.float64)
    if mask_seq.ndim != 2 or mask_seq.shape[1] != model.config.input_dim:
        raise DataError(
            f"mask sequence must be (T, {model.config.input_dim}), "
            f"got {mask_seq.shape}")
    p = model.params
    h = np.maximum(mask_seq @ p["ff1.W"] + p["ff1.b"], 0.0)
    for layer in range(SOD_GRU_LAYERS):
        h, _ = gru_layer_numpy(p, f"gru{layer}", h)
    h = np.maximum(h, 0.0)
    return expit(h @ p["ff2.W"] + p["ff2.b"])[:, 0]


def sod_stream_init(model: SodModel) -> dict:
    H = model.config.hidden
    return {"h": [np.zeros(H) for _ in range(SOD_GRU_LAYERS)]}


def sod_streaming_step(model: SodModel, state: dict,
                       mask_vec: np.ndarray):
    """One frame of the detector; returns (probability, state)."""
    mask_vec = np.asarray(mask_vec, dtype=np.float64)
    if mask_vec.shape != (model.config.input_dim,):
        raise DataError(f"expected ({model.config.input_dim},) mask vector, "
                        f"got {mask_vec.shape}")
    p = model.params
    h = np.maximum(mask_vec @ p["ff1.W"] + p["ff1.b"], 0.0)[None, :]
    new_h = []
    for layer in range(SOD_GRU_LAYERS):
        h, hl = gru_layer_numpy(p, f"gru{layer}", h, h0=state["h"][layer])
        new_h.append(hl)
    h = np.maximum(h, 0.0)
    prob = float(expit(h[0] @ p["ff2.W"] + p["ff2.b"])[0])
    return prob, {"h": new_h}


# ---------------------------------------------------------------------------
# training


def _utterance_bce(g: Graph, probs: Var, labels: np.ndarray,
                   steps: int, batch: int) -> Var:
    """Mean over the batch of BCE(mean frame probability, label), nats."""
    acc = probs.rows(0, batch)
    for t in range(1, steps):
        acc = acc + probs.rows(t * batch, (t + 1) * batch)
    p_bar = acc.scale(1.0 / steps)                     # (B, 1)
    y = g.constant(labels.reshape(-1, 1).astype(np.float64))
    one_minus = (p_bar.scale(-1.0) + 1.0).clamp_min(1e-12)
    log_p = p_bar.clamp_min(1e-12).log10().scale(LN10)
    log_q = one_minus.log10().scale(LN10)
    per_item = (y * log_p + (y.scale(-1.0) + 1.0) * log_q).scale(-1.0)
    return per_item.mean()


def sod_train(model: SodModel, dataset: list, steps: int = 200,
              batch_size: int = 8, crop_frames: int = 500,
              lr: float = 3e-3, grad_clip: float = 5.0) -> dict:
    """Fit the detector on (mask sequence, utterance label) pairs.

    dataset items: dicts with "masks" (T, 2K) and "label" in {0, 1}.
    Items with an empty mask sequence are skipped with a warning. Batches
    take a random equal-length crop from each utterance so sequences can
    be stacked time-major. Deterministic given model.config.seed.

    Returns {"curve": [(step, loss)], "final_loss": float}.
    """
    usable = []
    for i, item in enumerate(dataset):
        masks = np.asarray(item["masks"], dtype=np.float64)
        if masks.shape[0] == 0:
            warnings.warn(f"skipping empty mask sequence at index {i}")
            continue
        label = int(item["label"])
        if label not in (0, 1):
            raise DataError(f"labels must be 0 or 1, got {label}")
        usable.append((masks, label))
    if not usable:
        raise DataError("no usable sequences to train on")

    opt = Adam(model.params, grad_clip=grad_clip)
    rng = np.random.default_rng(
        np.random.SeedSequence([model.config.seed, len(usable)]))
    curve = []
    for step in range(steps):
        idx = rng.integers(0, len(usable), size=batch_size)
        seqs = [usable[i] for i in idx]
        clen = min(crop_frames, min(s[0].shape[0] for s in seqs))
        rows = np.empty((clen, batch_size, model.config.input_dim))
        labels = np.empty(batch_size)
        for b, (masks, label) in enumerate(seqs):
            start = int(rng.integers(0, masks.shape[0] - clen + 1))
            rows[:, b] = masks[start:start + clen]
            labels[b] = label
        g = Graph()
        probs, pvars = sod_forward_graph(
            model, g, rows.reshape(clen * batch_size, -1), batch_size)
        loss = _utterance_bce(g, probs, labels, clen, batch_size)
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            raise NumericalError(f"sod step {step}: loss is not finite")
        grads = loss.backward()
        opt.step({name: grads[v.id] for name, v in pvars.items()
                  if v.id in grads}, lr)
        curve.append((step, loss_val))
    return {"curve": curve, "final_loss": curve[-1][1]}


# ---------------------------------------------------------------------------
# masking post-processor


def sod_masking(ch2_frames: np.ndarray, sod_values: np.ndarray,
                cfg: SodConfig) -> np.ndarray:
    """Zero second-channel frames where the detector is below threshold.

    Applies to every frame including the warm-up region (the warm-up
    exemption belongs to evaluation, not to the processing itself).
    Operates on frames before overlap-add.
    """
    ch2_frames = np.asarray(ch2_frames, dtype=np.float64)
    sod_values = np.asarray(sod_values, dtype=np.float64)
    if ch2_frames.ndim != 2 or sod_values.ndim != 1:
        raise DataError("expected (T, frame) frames and (T,) detector values")
    if ch2_frames.shape[0] != sod_values.shape[0]:
        raise DataError(
            f"{ch2_frames.shape[0]} frames vs {sod_values.shape[0]} "
            "detector values")
    out = ch2_frames.copy()
    out[sod_values < cfg.threshold] = 0.0
    return out


# ---------------------------------------------------------------------------
# mask cache on disk


def write_mask_cache(path, masks: np.ndarray):
    """Binary per-utterance mask file: magic, K, frame count, float32 data."""
    masks = np.asarray(masks)
    if masks.ndim != 2 or masks.shape[1] % 2 != 0:
        raise DataError(f"mask cache wants (T, 2K) arrays, got {masks.shape}")
    K = masks.shape[1] // 2
    with open(path, "wb") as f:
        f.write(MASK_CACHE_MAGIC)
        f.write(struct.pack("<II", K, masks.shape[0]))
        f.write(masks.astype("<f4").tobytes())


def read_mask_cache(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask cache not found: {path}")
    blob = path.read_bytes()
    if blob[:len(MASK_CACHE_MAGIC)] != MASK_CACHE_MAGIC:
        raise DataError(f"{path}: not a mask cache file")
    off = len(MASK_CACHE_MAGIC)
    K, frames = struct.unpack_from("<II", blob, off)
    off += 8
    data = np.frombuffer(blob, dtype="<f4", offset=off)
    if data.size != frames * 2 * K:
        raise DataError(f"{path}: truncated mask cache "
                        f"({data.size} values for {frames}x{2 * K})")
    return data.reshape(frames, 2 * K).astype(np.float64)


def cache_separator_masks(sep_model, manifest_path, out_dir,
                          read_wav_fn=None, forward_fn=None) -> Path:
    """Run the frozen separator over a corpus manifest and persist each
    utterance's mask sequence plus a JSONL cache manifest with labels."""
    from .audio import read_wav
    from .scene import load_manifest
    from .sepnet import forward_numpy

    read_wav_fn = read_wav_fn or read_wav
    forward_fn = forward_fn or forward_numpy
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = manifest_path.parent
    records = []
    for rec in load_manifest(manifest_path):
        mix = read_wav_fn(base / rec["mix"])
        _, masks = forward_fn(sep_model, mix)
        rel = f"{rec['id']}_masks.bin"
        write_mask_cache(out_dir / rel, masks)
        records.append({"id": rec["id"], "masks": rel,
                        "label": int(rec["talker_count"]) - 1})
    cache_manifest = out_dir / "mask_manifest.jsonl"
    with open(cache_manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return cache_manifest


def load_mask_dataset(cache_manifest) -> list:
    """Read a mask-cache manifest back into sod_train's dataset format."""
    from .scene import load_manifest

    cache_manifest = Path(cache_manifest)
    base = cache_manifest.parent
    return [{"id": rec["id"],
             "masks": read_mask_cache(base / rec["masks"]),
             "label": int(rec["label"])}
            for rec in load_manifest(cache_manifest)]
