"""Causal encoder-separator-decoder model for two-channel masking.

Frames of the mixture go through a linear encoder and rectifier, a stack
of unidirectional gated recurrent layers, and a sigmoid mask head that
produces one mask per output channel; each channel is the shared linear
decoder applied to its masked latent, overlap-added back to a waveform.
Analysis and synthesis both use the square root of a periodic Hann
window, which sums to one at 50% overlap, so framing plus overlap-add is
an identity away from the signal edges.

Encoder and decoder carry no bias on purpose: a silent input then yields
bit-exact silent outputs regardless of what the masks do, because the
masks multiply an all-zero latent and the decoder maps zero to zero.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .audio import DEFAULT_SAMPLE_RATE, AudioBuffer
from .autodiff import Graph, Var, concat, overlap_add
from .exceptions import ConfigError, DataError, NumericalError
from .objectives import LossConfig, TargetSet, objective_dispatch
from .optim import Adam

DEFAULT_BATCH_SIZE = 8
LR_DECAY = 0.98


@dataclass
class ModelConfig:
    """Shape/seed configuration. frame_ms=2 at 16 kHz gives a 32-sample
    frame, 16-sample hop, and a 48-sample (3 ms) algorithmic latency."""

    frame_ms: float = 2.0
    encoder_dim: int = 64
    separator_layers: int = 2
    seed: int = 0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    # divide each analysis frame by its rms before the encoder and scale
    # the decoded frame back up; causal, and zero frames stay zero
    feature_norm: bool = True

    def __post_init__(self):
        flt = self.sample_rate * self.frame_ms / 1000.0
        if abs(flt - round(flt)) > 1e-9 or round(flt) < 4:
            raise ConfigError(
                f"frame_ms={self.frame_ms} gives a non-integer or too "
                f"short frame at {self.sample_rate} Hz")
        if int(round(flt)) % 2 != 0:
            raise ConfigError("frame length must be even for 50% overlap")
        if self.encoder_dim < 8:
            raise ConfigError(f"encoder_dim must be >= 8: {self.encoder_dim}")
        if self.separator_layers < 1:
            raise ConfigError(
                f"separator_layers must be >= 1: {self.separator_layers}")

    @property
    def frame(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop(self) -> int:
        return self.frame // 2

    @property
    def latency_samples(self) -> int:
        return self.frame + self.hop


def sqrt_hann(n: int) -> np.ndarray:
    # periodic so that window^2 overlap-adds to exactly 1 at hop n/2
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n)))


_GATE_NAMES = ("Wz", "Wr", "Wc", "Uz", "Ur", "Uc", "bz", "br", "bc")


class SepModel:
    """Parameter container. Creation order of the params dict is the
    serialization and init-reproducibility contract."""

    def __init__(self, config: ModelConfig):
        self.config = config
        K = config.encoder_dim
        frame = config.frame
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))

        def uniform(fan_in, shape):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape)

        self.params: dict = {}
        self.params["enc.W"] = uniform(frame, (frame, K))
        for layer in range(config.separator_layers):
            for gate in ("Wz", "Wr", "Wc"):
                self.params[f"sep{layer}.{gate}"] = uniform(K, (K, K))
            for gate in ("Uz", "Ur", "Uc"):
                self.params[f"sep{layer}.{gate}"] = uniform(K, (K, K))
            for gate in ("bz", "br", "bc"):
                self.params[f"sep{layer}.{gate}"] = np.zeros(K)
        self.params["mask.W"] = uniform(K, (K, 2 * K))
        self.params["mask.b"] = np.zeros(2 * K)
        self.params["dec.W"] = uniform(K, (K, frame))

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def bind(self, g: Graph) -> dict:
        """Register every parameter as a differentiable leaf of g."""
        return {name: g.param(arr) for name, arr in self.params.items()}


# ---------------------------------------------------------------------------
# framing


def frame_signal(x, cfg: ModelConfig) -> np.ndarray:
    """Slice x into (T, frame) hops; the tail frame is zero-padded.
    frames[t] = x[t*hop : t*hop+frame]."""
    if isinstance(x, AudioBuffer):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    frame, hop = cfg.frame, cfg.hop
    if x.ndim != 1 or len(x) < frame:
        raise DataError(
            f"need a 1-D signal of at least {frame} samples, got {x.shape}")
    steps = 1 + int(np.ceil((len(x) - frame) / hop))
    out = np.zeros((steps, frame))
    for t in range(steps):
        chunk = x[t * hop:t * hop + frame]
        out[t, :len(chunk)] = chunk
    return out


def overlap_add_numpy(frames: np.ndarray, hop: int) -> np.ndarray:
    steps, flen = frames.shape
    out = np.zeros((steps - 1) * hop + flen)
    for t in range(steps):
        out[t * hop:t * hop + flen] += frames[t]
    return out


# ---------------------------------------------------------------------------
# graph forward


def gru_layer(g: Graph, pvars: dict, prefix: str, x_all: Var,
              steps: int, batch: int) -> Var:
    """One recurrent layer over time-major rows (row t*batch + b).

    Gates: z = sig(xWz + hUz + bz), r = sig(xWr + hUr + br),
    c = tanh(xWc + (r*h)Uc + bc), h' = z*h + (1-z)*c. The three input
    projections are computed for all steps in one matmul each; the step
    loop only touches the recurrent path. Parameters are looked up as
    f"{prefix}.{gate}" so any module with gate weights can reuse this.
    """
    p = lambda name: pvars[f"{prefix}.{name}"]
    xz = x_all @ p("Wz") + p("bz")
    xr = x_all @ p("Wr") + p("br")
    xc = x_all @ p("Wc") + p("bc")
    K = x_all.shape[1]
    h = g.constant(np.zeros((batch, K)))
    outs = []
    for t in range(steps):
        lo, hi = t * batch, (t + 1) * batch
        z = (xz.rows(lo, hi) + h @ p("Uz")).sigmoid()
        r = (xr.rows(lo, hi) + h @ p("Ur")).sigmoid()
        c = (xc.rows(lo, hi) + (r * h) @ p("Uc")).tanh()
        h = z * h + (z.scale(-1.0) + 1.0) * c
        outs.append(h)
    return concat(outs, axis=0)


def forward_batch(model: SepModel, g: Graph, crops: np.ndarray,
                  pvars: dict | None = None):
    """Differentiable forward over a (B, L) batch of equal-length crops.

    Returns (estimates, masks, pvars): estimates is a list of two (B, L)
    nodes, masks a (T*B, 2K) node in time-major row order.
    """
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim != 2:
        raise DataError(f"crops must be (batch, samples), got {crops.shape}")
    B, L = crops.shape
    cfg = model.config
    K = cfg.encoder_dim
    frames = np.stack([frame_signal(crops[b], cfg) for b in range(B)],
                      axis=1)                      # (T, B, frame)
    steps = frames.shape[0]
    win = sqrt_hann(cfg.frame)
    # analysis windowing and frame normalization involve no trained
    # weight and depend only on the input, keep them out of the graph
    xw = (frames * win).reshape(steps * B, cfg.frame)
    if cfg.feature_norm:
        sigma = np.sqrt(np.mean(xw * xw, axis=1, keepdims=True) + 1e-10)
        xw = xw / sigma
    x = g.constant(xw)

    if pvars is None:
        pvars = model.bind(g)
    e = (x @ pvars["enc.W"]).relu()
    h = e
    for layer in range(cfg.separator_layers):
        h = gru_layer(g, pvars, f"sep{layer}", h, steps, B)
    masks = (h @ pvars["mask.W"] + pvars["mask.b"]).sigmoid()

    win_c = g.constant(win if not cfg.feature_norm else win * sigma)
    estimates = []
    for ch in range(2):
        m = masks.cols(ch * K, (ch + 1) * K)
        dec = ((m * e) @ pvars["dec.W"]) * win_c
        est = overlap_add(dec, cfg.hop, B).cols(0, L)
        estimates.append(est)
    return estimates, masks, pvars


def forward(model: SepModel, mixture, g: Graph | None = None):
    """Single-utterance differentiable forward.

    Returns (estimates, masks, graph, pvars) with estimates a list of
    two (1, L) nodes and masks (T, 2K).
    """
    if isinstance(mixture, AudioBuffer):
        mixture = mixture.samples
    mixture = np.asarray(mixture, dtype=np.float64)
    if g is None:
        g = Graph()
    estimates, masks, pvars = forward_batch(model, g, mixture[None, :])
    return estimates, masks, g, pvars


# ---------------------------------------------------------------------------
# plain-numpy twin (inference/eval path, no graph bookkeeping)


def gru_layer_numpy(params: dict, prefix: str, x_all: np.ndarray,
                    h0: np.ndarray | None = None):
    p = lambda name: params[f"{prefix}.{name}"]
    xz = x_all @ p("Wz") + p("bz")
    xr = x_all @ p("Wr") + p("br")
    xc = x_all @ p("Wc") + p("bc")
    h = np.zeros(x_all.shape[1]) if h0 is None else h0
    outs = np.empty_like(x_all)
    for t in range(x_all.shape[0]):
        z = expit(xz[t] + h @ p("Uz"))
        r = expit(xr[t] + h @ p("Ur"))
        c = np.tanh(xc[t] + (r * h) @ p("Uc"))
        h = z * h + (1.0 - z) * c
        outs[t] = h
    return outs, h


def decode_frames_numpy(model: SepModel, x):
    """Run the utterance up to the synthesis-windowed decoded frames.

    Returns (dec (2, T, frame), masks (T, 2K)). Overlap-add of dec[ch]
    truncated to the input length gives the waveform estimate; exposing
    the frames lets the overlap-detector zero channel-2 frames before
    synthesis.
    """
    if isinstance(x, AudioBuffer):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    cfg = model.config
    K = cfg.encoder_dim
    frames = frame_signal(x, cfg)
    win = sqrt_hann(cfg.frame)
    xw = frames * win
    syn = win
    if cfg.feature_norm:
        sigma = np.sqrt(np.mean(xw * xw, axis=1, keepdims=True) + 1e-10)
        xw = xw / sigma
        syn = win * sigma
    e = np.maximum(xw @ model.params["enc.W"], 0.0)
    h = e
    for layer in range(cfg.separator_layers):
        h, _ = gru_layer_numpy(model.params, f"sep{layer}", h)
    masks = expit(h @ model.params["mask.W"] + model.params["mask.b"])
    dec = np.stack([(masks[:, ch * K:(ch + 1) * K] * e)
                    @ model.params["dec.W"] for ch in range(2)]) * syn
    return dec, masks


def forward_numpy(model: SepModel, x):
    """Numpy twin of forward() for one utterance.

    Returns (estimates (2, L), masks (T, 2K)). Matches the graph forward
    to floating-point noise; tests pin the agreement at 1e-9.
    """
    if isinstance(x, AudioBuffer):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    dec, masks = decode_frames_numpy(model, x)
    cfg = model.config
    ests = np.empty((2, len(x)))
    for ch in range(2):
        ests[ch] = overlap_add_numpy(dec[ch], cfg.hop)[:len(x)]
    return ests, masks


# ---------------------------------------------------------------------------
# streaming


def stream_init(model: SepModel) -> dict:
    """Recurrent state for frame-at-a-time inference."""
    K = model.config.encoder_dim
    return {"h": [np.zeros(K) for _ in range(model.config.separator_layers)]}


def streaming_step(model: SepModel, state: dict, input_frame: np.ndarray):
    """Process one analysis frame; numerically identical to the batch
    forward consumed frame-by-frame.

    Returns (out_frame_ch1, out_frame_ch2, mask_vector, state). Output
    frames are synthesis-windowed and still need overlap-add; Streamer
    wraps that plumbing for hop-sized blocks.
    """
    cfg = model.config
    K = cfg.encoder_dim
    input_frame = np.asarray(input_frame, dtype=np.float64)
    if input_frame.shape != (cfg.frame,):
        raise DataError(f"expected one ({cfg.frame},) frame, "
                        f"got {input_frame.shape}")
    win = sqrt_hann(cfg.frame)
    xw = input_frame * win
    syn = win
    if cfg.feature_norm:
        sigma = np.sqrt(np.mean(xw * xw) + 1e-10)
        xw = xw / sigma
        syn = win * sigma
    e = np.maximum(xw @ model.params["enc.W"], 0.0)
    h = e[None, :]
    new_h = []
    for layer in range(cfg.separator_layers):
        h, hl = gru_layer_numpy(model.params, f"sep{layer}", h,
                                h0=state["h"][layer])
        new_h.append(hl)
    mask = expit(h[0] @ model.params["mask.W"] + model.params["mask.b"])
    outs = []
    for ch in range(2):
        dec = ((mask[ch * K:(ch + 1) * K] * e) @ model.params["dec.W"]) * syn
        outs.append(dec)
    return outs[0], outs[1], mask, {"h": new_h}


class Streamer:
    """Hop-block streaming wrapper: push hop samples, get hop samples.

    The first push returns None while the initial frame fills; afterwards
    each push emits the next finished hop of both channels. Algorithmic
    latency is bounded by frame+hop samples. finish() drains the tail so
    the concatenated output length equals the pushed length.
    """

    def __init__(self, model: SepModel):
        self.model = model
        cfg = model.config
        self.frame, self.hop = cfg.frame, cfg.hop
        self.state = stream_init(model)
        self.buf = np.zeros(self.frame)
        self.carry = np.zeros((2, self.frame - self.hop))
        self.pushed = 0
        self.frames_done = 0
        self.masks: list = []

    def push(self, block: np.ndarray):
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (self.hop,):
            raise DataError(f"push wants ({self.hop},) blocks, "
                            f"got {block.shape}")
        self.buf[:-self.hop] = self.buf[self.hop:]
        self.buf[-self.hop:] = block
        self.pushed += 1
        if self.pushed < self.frame // self.hop:
            return None
        o1, o2, mask, self.state = streaming_step(self.model, self.state,
                                                  self.buf)
        self.masks.append(mask)
        self.frames_done += 1
        dec = np.stack([o1, o2])
        out = self.carry[:, :self.hop] + dec[:, :self.hop]
        self.carry = dec[:, self.hop:].copy()
        return out

    def finish(self, total_len: int) -> np.ndarray:
        """Feed zero padding until every frame covering total_len input
        samples is processed; return the (2, tail) remainder so emitted
        plus tail spans exactly total_len samples."""
        cfg = self.model.config
        if total_len < self.frame:
            raise DataError("stream shorter than one frame")
        steps = 1 + int(np.ceil((total_len - self.frame) / self.hop))
        chunks = []
        while self.frames_done < steps:
            out = self.push(np.zeros(self.hop))
            if out is not None:
                chunks.append(out)
        emitted = self.frames_done * self.hop
        tail_len = total_len - emitted
        tail = self.carry[:, :max(tail_len, 0)]
        if chunks:
            return np.concatenate(chunks + [tail], axis=1)
        return tail


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    """Model + optimizer + schedule position. The learning rate is always
    base_lr * 0.98**epoch, computed as a power (no drifting product)."""

    model: SepModel
    opt: Adam
    epoch: int = 0
    base_lr: float = 1e-3
    log_rows: list = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.base_lr * LR_DECAY ** self.epoch


def init_train_state(model: SepModel, base_lr: float = 1e-3,
                     grad_clip: float = 5.0) -> TrainState:
    return TrainState(model=model, opt=Adam(model.params,
                                            grad_clip=grad_clip),
                      base_lr=base_lr)


def select_crop(rng, mix: np.ndarray, sources: list, talker_count: int,
                crop_len: int, tries: int = 8):
    """Random crop with an energy floor on every active talker.

    A draw is accepted when each active talker keeps at least 1% of its
    energy-per-sample average inside the crop. Short crops can land
    entirely inside a talker's pause, where the signal is exactly zero
    and the training objectives reject the target, so rejection never
    falls back to a bad random draw: after `tries` rejections a
    half-crop-stride sweep picks the window with the best worst-talker
    share (talkers start active, so a usable window always exists).
    """
    L = len(mix)
    if L < crop_len:
        raise DataError(f"scene shorter ({L}) than the crop ({crop_len})")
    if L == crop_len:
        return 0
    active = sources[:talker_count]
    full = [max(float(s @ s), 1e-300) / L for s in active]

    def min_share(start):
        return min(
            (float(s[start:start + crop_len] @ s[start:start + crop_len])
             / crop_len) / f
            for s, f in zip(active, full))

    best_start, best_share = 0, min_share(0)
    for _ in range(tries):
        start = int(rng.integers(0, L - crop_len + 1))
        share = min_share(start)
        if share >= 0.01:
            return start
        if share > best_share:
            best_start, best_share = start, share
    if best_share >= 0.01:
        return best_start
    for start in range(0, L - crop_len + 1, max(1, crop_len // 2)):
        share = min_share(start)
        if share > best_share:
            best_start, best_share = start, share
    return best_start


def train_epoch(state: TrainState, dataset: list, loss_cfg: LossConfig,
                batch_size: int = DEFAULT_BATCH_SIZE,
                crop_seconds: float = 0.25,
                crops_per_scene: int = 1) -> dict:
    """One pass over the dataset: forward, objective, backward, clipped
    Adam step per batch. Deterministic given (model seed, epoch).

    dataset items are dicts with keys mix, s1, s2 (equal-length float
    arrays) and talker_count. Returns {"mean_loss", "lr", "steps"} and
    appends (epoch, step, loss, lr) rows to state.log_rows. A non-finite
    loss aborts the epoch with diagnostics.

    Short crops keep the unrolled recurrence shallow; 0.25 s (500 frames
    at the 2 ms default) trains much faster per wall-second than longer
    windows. crops_per_scene > 1 visits every scene that many times per
    epoch with independently drawn crops, which buys more optimizer
    steps without touching the lr schedule.
    """
    if not dataset:
        raise DataError("empty training dataset")
    if crops_per_scene < 1:
        raise ConfigError(f"crops_per_scene must be >= 1: {crops_per_scene}")
    model = state.model
    cfg = model.config
    crop_len = int(round(crop_seconds * cfg.sample_rate))
    if crop_len < cfg.frame:
        raise ConfigError(f"crop of {crop_len} samples is shorter than "
                          f"one {cfg.frame}-sample frame")
    lr = state.lr
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, state.epoch]))
    order = np.concatenate([rng.permutation(len(dataset))
                            for _ in range(crops_per_scene)])

    losses = []
    for step, lo in enumerate(range(0, len(order), batch_size)):
        items = [dataset[i] for i in order[lo:lo + batch_size]]
        crops, targets = [], []
        for it in items:
            start = select_crop(rng, it["mix"], [it["s1"], it["s2"]],
                                it["talker_count"], crop_len)
            crops.append(it["mix"][start:start + crop_len])
            targets.append(TargetSet(
                sources=[it["s1"][start:start + crop_len][None, :],
                         it["s2"][start:start + crop_len][None, :]],
                talker_count=it["talker_count"]))
        B = len(items)
        g = Graph()
        try:
            (est1, est2), _, pvars = forward_batch(
                model, g, np.stack(crops))
            total = None
            for b, tg in enumerate(targets):
                ests = [est1.rows(b, b + 1), est2.rows(b, b + 1)]
                item_loss = objective_dispatch(loss_cfg, tg, ests)
                total = item_loss if total is None else total + item_loss
            loss = total.scale(1.0 / B)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise NumericalError("loss is not finite")
            grads = loss.backward()
        except NumericalError as e:
            raise NumericalError(
                f"epoch {state.epoch} step {step}: {e}") from e
        name_grads = {}
        for name, var in pvars.items():
            gv = grads.get(var.id)
            if gv is not None:
                name_grads[name] = gv
        state.opt.step(name_grads, lr)
        losses.append(loss_val)
        state.log_rows.append((state.epoch, step, loss_val, lr))

    state.epoch += 1
    return {"mean_loss": float(np.mean(losses)), "lr": lr,
            "steps": len(losses)}
