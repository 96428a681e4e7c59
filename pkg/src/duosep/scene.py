"""Acoustic scene synthesis: rooms, impulse responses, sources, mixtures.

A scene is a shoebox room with the microphone at its center, one or two
talkers plus one noise source placed at least 0.5 m from every wall, a
reverberation time in [0.1, 0.5] s, an SIR in [-5, 5] dB between the two
reverberant talkers (dual-talker only), and an SNR in [5, 20] dB between
the reverberant speech sum and the reverberant noise.

Impulse responses come from the mirror-image source method with uniform
wall reflectivity. The wall absorption is derived from the target RT60
with the Eyring relation alpha = 1 - exp(-0.161 V / (RT60 A)). The Sabine
form 0.161 V / (RT60 A) exceeds 1 for the larger rooms at RT60 = 0.1 s
(physically impossible), while the Eyring form both stays in (0, 1) and
is the relation the image-model decay actually follows, so generated RIRs
measure back to the requested RT60.

Dry sources are synthetic: speech_like is a harmonic complex with a
randomized fundamental, gated by syllable-rate on/off envelopes;
noise_like is lowpass-colored broadband noise. These stand in for real
speech/noise corpora, which are out of scope here.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter

from .audio import (DEFAULT_SAMPLE_RATE, ZERO_ENERGY_EPS, AudioBuffer,
                    write_wav)
from .exceptions import DataError
from .objectives import TargetSet

SPEED_OF_SOUND = 343.0

ROOM_LW_RANGE = (5.0, 10.0)
ROOM_H_RANGE = (2.0, 5.0)
RT60_RANGE = (0.1, 0.5)
SIR_RANGE = (-5.0, 5.0)
SNR_RANGE = (5.0, 20.0)
WALL_CLEARANCE = 0.5

# sources closer than this to the mic or to each other are re-drawn
MIN_SOURCE_GAP = 0.2

MAX_IMAGE_ORDER = 30

# talkers in one scene must differ in pitch by at least this much, the way
# two sampled real speakers virtually always would
MIN_F0_SEPARATION_HZ = 30.0


@dataclass
class SceneSpec:
    """Full parameterization of one acoustic scene.

    source_positions lists the talker positions first and the noise source
    position last (talker_count + 1 entries in total).
    """

    room_dims: tuple
    rt60: float
    source_positions: list
    mic_position: tuple
    talker_count: int
    sir_db: float | None
    snr_db: float
    seed: int

    def validate(self):
        L, W, H = self.room_dims
        if not (ROOM_LW_RANGE[0] <= L <= ROOM_LW_RANGE[1]
                and ROOM_LW_RANGE[0] <= W <= ROOM_LW_RANGE[1]):
            raise DataError(f"room floor dims out of range: {L} x {W}")
        if not ROOM_H_RANGE[0] <= H <= ROOM_H_RANGE[1]:
            raise DataError(f"room height out of range: {H}")
        if not RT60_RANGE[0] <= self.rt60 <= RT60_RANGE[1]:
            raise DataError(f"rt60 out of range: {self.rt60}")
        if self.talker_count not in (1, 2):
            raise DataError(f"talker_count must be 1 or 2: {self.talker_count}")
        if len(self.source_positions) != self.talker_count + 1:
            raise DataError("need one position per talker plus the noise source")
        for pos in self.source_positions:
            for coord, dim in zip(pos, self.room_dims):
                if coord < WALL_CLEARANCE or coord > dim - WALL_CLEARANCE:
                    raise DataError(f"source position {pos} violates the "
                                    f"{WALL_CLEARANCE} m wall clearance")
        center = (L / 2.0, W / 2.0, H / 2.0)
        if max(abs(a - b) for a, b in zip(self.mic_position, center)) > 1e-9:
            raise DataError("microphone must sit at the room center")
        if self.talker_count == 2:
            if self.sir_db is None or not SIR_RANGE[0] <= self.sir_db <= SIR_RANGE[1]:
                raise DataError(f"sir_db out of range: {self.sir_db}")
        elif self.sir_db is not None:
            raise DataError("sir_db must be unset for single-talker scenes")
        if not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise DataError(f"snr_db out of range: {self.snr_db}")


@dataclass
class Rir:
    taps: AudioBuffer
    direct_delay_samples: int


@dataclass
class SceneBundle:
    mixture: AudioBuffer
    targets: TargetSet
    noise: AudioBuffer
    spec: SceneSpec


def sample_scene(rng_seed: int) -> SceneSpec:
    """Draw one SceneSpec. Deterministic in the seed; the draw order below
    is part of the reproducibility contract."""
    rng = np.random.default_rng(rng_seed)
    L = rng.uniform(*ROOM_LW_RANGE)
    W = rng.uniform(*ROOM_LW_RANGE)
    H = rng.uniform(*ROOM_H_RANGE)
    rt60 = rng.uniform(*RT60_RANGE)
    talker_count = int(rng.integers(1, 3))
    mic = (L / 2.0, W / 2.0, H / 2.0)

    positions = []
    for _ in range(talker_count + 1):
        for _attempt in range(1000):
            pos = (rng.uniform(WALL_CLEARANCE, L - WALL_CLEARANCE),
                   rng.uniform(WALL_CLEARANCE, W - WALL_CLEARANCE),
                   rng.uniform(WALL_CLEARANCE, H - WALL_CLEARANCE))
            ok = _dist(pos, mic) >= MIN_SOURCE_GAP and all(
                _dist(pos, q) >= MIN_SOURCE_GAP for q in positions)
            if ok:
                break
        else:
            raise DataError("could not place a source after 1000 attempts")
        positions.append(pos)

    sir_db = float(rng.uniform(*SIR_RANGE)) if talker_count == 2 else None
    snr_db = float(rng.uniform(*SNR_RANGE))
    return SceneSpec(room_dims=(L, W, H), rt60=rt60,
                     source_positions=positions, mic_position=mic,
                     talker_count=talker_count, sir_db=sir_db,
                     snr_db=snr_db, seed=int(rng_seed))


def _dist(a, b) -> float:
    return float(np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))


def _t20_fit(times: np.ndarray, edc_db: np.ndarray) -> float | None:
    """Line fit over the -5..-25 dB EDC window, extrapolated to -60 dB."""
    idx = np.flatnonzero((edc_db <= -5.0) & (edc_db >= -25.0))
    if idx.size < 8:
        return None
    slope, _ = np.polyfit(times[idx], edc_db[idx], 1)
    if slope >= 0:
        return None
    return float(-60.0 / slope)


_SPHERE_DIRS = None


def _sphere_dirs(n: int = 192) -> np.ndarray:
    """|components| of a Fibonacci-sphere direction set (cached)."""
    global _SPHERE_DIRS
    if _SPHERE_DIRS is None:
        i = np.arange(n) + 0.5
        phi = np.arccos(1.0 - 2.0 * i / n)
        theta = np.pi * (1.0 + np.sqrt(5.0)) * i
        _SPHERE_DIRS = np.abs(np.stack([
            np.sin(phi) * np.cos(theta),
            np.sin(phi) * np.sin(theta),
            np.cos(phi)], axis=1))
    return _SPHERE_DIRS


def _predicted_t20(beta: float, dims, t_len: float) -> float | None:
    """T20 the image model will measure for reflectivity beta.

    An image at distance d along direction u has accumulated
    d * sum(|u_i| / L_i) reflections, and image density is uniform over
    directions, so the energy decay is the directional average of
    beta^(2 c t sum|u_i|/L_i). A plain Eyring inversion underestimates the
    decay time of flat rooms, where near-axial paths between the distant
    wall pair outlive the diffuse average.
    """
    u = _sphere_dirs()
    rate = SPEED_OF_SOUND * (u[:, 0] / dims[0] + u[:, 1] / dims[1]
                             + u[:, 2] / dims[2])
    grid = 2000.0
    t = np.arange(1, max(int(t_len * grid), 16)) / grid
    energy = np.exp(2.0 * np.log(beta) * rate[:, None] * t[None, :]).mean(axis=0)
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    return _t20_fit(t, edc_db)


_BETA_CACHE: dict = {}


def _calibrated_beta(dims, rt60: float) -> float:
    """Reflectivity whose predicted T20 equals the target RT60 (bisection).

    Bracketed by Eyring's closed form on the low side; cached per room."""
    key = (round(dims[0], 6), round(dims[1], 6), round(dims[2], 6),
           round(rt60, 6))
    if key in _BETA_CACHE:
        return _BETA_CACHE[key]
    t_len = 1.3 * rt60 + 0.05
    lo, hi = 0.02, 0.999
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        t20 = _predicted_t20(mid, dims, t_len)
        if t20 is None or t20 < rt60:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    _BETA_CACHE[key] = beta
    return beta


def image_method_rir(spec: SceneSpec, source_index: int,
                     sample_rate: int = DEFAULT_SAMPLE_RATE) -> Rir:
    """Mirror-image-source impulse response for one source of the scene.

    Uniform wall reflectivity, calibrated so the Schroeder T20 of the
    generated response lands on spec.rt60: a directional-continuum model
    gives the starting reflectivity, then a few fixed-point iterations
    against the exact image lattice (incoherent energy decay through the
    same T20 fit) absorb what the continuum misses in rooms with sparse
    early reflections. Image amplitudes follow 1/(4 pi d) spherical
    spreading times beta^(reflection count); arrival times are rounded to
    the nearest sample. Every reflected image gets a deterministic random
    sign (the direct path stays positive): with integer taps many late
    images share a sample bin, and same-sign summation would pile up
    coherently and stretch the measured decay.
    """
    dims = np.asarray(spec.room_dims, dtype=np.float64)
    src = np.asarray(spec.source_positions[source_index], dtype=np.float64)
    mic = np.asarray(spec.mic_position, dtype=np.float64)

    d_direct = float(np.linalg.norm(src - mic))
    if d_direct < 0.05:
        raise DataError(f"source {source_index} within 5 cm of the mic; "
                        "geometry degenerate")

    t_len = 1.3 * spec.rt60 + 0.05
    n_taps = int(np.ceil(t_len * sample_rate)) + 1
    orders = [min(MAX_IMAGE_ORDER,
                  int(np.ceil(SPEED_OF_SOUND * t_len / (2.0 * d))))
              for d in dims]

    # enumerate the image lattice once: distances and reflection counts
    dist_blocks = []
    refl_blocks = []
    axis_idx = [np.arange(-n, n + 1) for n in orders]
    for q in range(8):
        qs = ((q >> 0) & 1, (q >> 1) & 1, (q >> 2) & 1)
        # per-axis image coordinates relative to the mic, and per-axis
        # reflection counts |n - q| + |n|
        coords = []
        refl = []
        for ax in range(3):
            n = axis_idx[ax]
            coords.append((1 - 2 * qs[ax]) * src[ax] + 2.0 * n * dims[ax]
                          - mic[ax])
            refl.append(np.abs(n - qs[ax]) + np.abs(n))
        d2 = (coords[0][:, None, None] ** 2
              + coords[1][None, :, None] ** 2
              + coords[2][None, None, :] ** 2)
        dist_blocks.append(np.sqrt(d2).ravel())
        total = (refl[0][:, None, None] + refl[1][None, :, None]
                 + refl[2][None, None, :])
        refl_blocks.append(total.astype(np.float64).ravel())
    dist = np.concatenate(dist_blocks)
    refl = np.concatenate(refl_blocks)

    taps = np.rint(dist * (sample_rate / SPEED_OF_SOUND)).astype(np.int64)
    keep = taps < n_taps
    dist, refl, taps = dist[keep], refl[keep], taps[keep]
    inv_4pid2 = 1.0 / (4.0 * np.pi * dist) ** 2

    beta = _calibrated_beta(spec.room_dims, spec.rt60)
    direct_delay = int(round(d_direct * sample_rate / SPEED_OF_SOUND))
    beta = _refine_beta(beta, refl, inv_4pid2, taps, spec.rt60,
                        direct_delay, sample_rate)

    amp = beta ** refl / (4.0 * np.pi * dist)
    sign_rng = np.random.default_rng(
        np.random.SeedSequence([abs(int(spec.seed)), int(source_index)]))
    signs = sign_rng.choice([-1.0, 1.0], size=amp.shape)
    signs[refl == 0] = 1.0
    h = np.bincount(taps, weights=amp * signs, minlength=n_taps)

    return Rir(taps=AudioBuffer(h, sample_rate),
               direct_delay_samples=direct_delay)


def _refine_beta(beta: float, refl, inv_4pid2, taps, rt60: float,
                 direct_delay: int, sample_rate: int,
                 iterations: int = 3) -> float:
    """Fixed-point polish of the wall reflectivity on the exact lattice.

    Bins the incoherent image energies beta^(2N)/(4 pi d)^2 at 1 ms
    resolution, runs the same direct-excluded Schroeder T20 estimate the
    measurement side uses, and rescales ln(beta^2) by the measured/target
    ratio (T20 is inversely proportional to the per-reflection log loss).
    Iteration count is fixed, so the result is deterministic.
    """
    ms_bins = taps // (sample_rate // 1000)
    start = direct_delay // (sample_rate // 1000) + 2
    n_ms = int(ms_bins.max()) + 1
    times = np.arange(n_ms) / 1000.0
    for _ in range(iterations):
        energy = np.bincount(ms_bins, weights=beta ** (2.0 * refl) * inv_4pid2,
                             minlength=n_ms)
        tail = energy[start:]
        total = tail.sum()
        if total <= 0:
            break
        edc = np.cumsum(tail[::-1])[::-1] / total
        with np.errstate(divide="ignore"):
            edc_db = 10.0 * np.log10(edc)
        t20 = _t20_fit(times[:tail.size], edc_db)
        if t20 is None:
            break
        beta = float(np.exp(np.log(beta) * t20 / rt60))
        beta = min(max(beta, 0.02), 0.999)
    return beta


def measure_rt60(rir: Rir) -> float:
    """RT60 estimate from Schroeder backward integration of the tail.

    The direct path is excluded so the fit sees the reverberant decay
    only; a line fit over the -5..-25 dB EDC window extrapolates the
    -60 dB time.
    """
    taps = rir.taps.samples
    fs = rir.taps.sample_rate
    start = rir.direct_delay_samples + max(1, int(0.002 * fs))
    tail = taps[start:]
    energy = tail * tail
    total = float(energy.sum())
    if total <= 0.0:
        raise DataError("impulse response carries no reverberant energy")
    edc = np.cumsum(energy[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc)
    t20 = _t20_fit(np.arange(len(edc_db)) / fs, edc_db)
    if t20 is None:
        raise DataError("EDC unusable for an RT60 fit")
    return t20


def scale_to_ratio(reference: AudioBuffer, other: AudioBuffer,
                   ratio_db: float) -> float:
    """Gain g so that 10*log10(E_ref / E(g*other)) == ratio_db."""
    e_ref = reference.energy()
    e_other = other.energy()
    if e_ref < ZERO_ENERGY_EPS or e_other < ZERO_ENERGY_EPS:
        raise DataError("scale_to_ratio needs nonzero-energy inputs")
    return float(np.sqrt(e_ref / (e_other * 10.0 ** (ratio_db / 10.0))))


def synthesize_scene(spec: SceneSpec, dry_sources, dry_noise: AudioBuffer
                     ) -> SceneBundle:
    """Convolve, level, and sum one scene per the mixture model y=s1+s2+v.

    Targets are the reverberant (post-RIR) talker signals; SIR gain is
    applied to talker 2 against reverberant talker 1, SNR gain to the
    reverberant noise against the reverberant speech sum.
    """
    spec.validate()
    if len(dry_sources) != spec.talker_count:
        raise DataError(f"expected {spec.talker_count} dry sources, "
                        f"got {len(dry_sources)}")
    sr = dry_noise.sample_rate
    n = len(dry_sources[0])
    for d in list(dry_sources) + [dry_noise]:
        if len(d) != n or d.sample_rate != sr:
            raise DataError("dry signals must share length and sample rate")

    def reverberate(dry: AudioBuffer, source_index: int) -> np.ndarray:
        rir = image_method_rir(spec, source_index, sr)
        return fftconvolve(dry.samples, rir.taps.samples)[:n]

    s1 = reverberate(dry_sources[0], 0)
    if spec.talker_count == 2:
        s2_raw = reverberate(dry_sources[1], 1)
        g2 = scale_to_ratio(AudioBuffer(s1, sr), AudioBuffer(s2_raw, sr),
                            spec.sir_db)
        s2 = s2_raw * g2
    else:
        s2 = np.zeros(n)
    noise_raw = reverberate(dry_noise, spec.talker_count)
    speech_sum = s1 + s2
    gn = scale_to_ratio(AudioBuffer(speech_sum, sr),
                        AudioBuffer(noise_raw, sr), spec.snr_db)
    v = noise_raw * gn
    y = s1 + s2 + v

    targets = TargetSet(sources=[AudioBuffer(s1, sr), AudioBuffer(s2, sr)],
                        talker_count=spec.talker_count)
    return SceneBundle(mixture=AudioBuffer(y, sr), targets=targets,
                       noise=AudioBuffer(v, sr), spec=spec)


# ---------------------------------------------------------------------------
# synthetic dry sources


def speech_params(seed: int) -> dict:
    """The pitch-level draws generate_source(speech_like, seed) will make.
    Exposed so corpus generation can enforce pitch separation between the
    two talkers of a scene without synthesizing the waveform."""
    rng = np.random.default_rng(seed)
    f0 = float(rng.uniform(90.0, 300.0))
    syllable_rate = float(rng.uniform(2.0, 8.0))
    return {"f0": f0, "syllable_rate": syllable_rate}


def _speech_envelope(rng, n: int, sr: int, rate: float) -> np.ndarray:
    env = np.zeros(n)
    t = 0
    on = True  # anchor: start active
    while t < n:
        seg = int(rng.uniform(0.5 / rate, 1.5 / rate) * sr)
        seg = max(seg, 1)
        if on:
            env[t:t + seg] = 1.0
        t += seg
        on = (not on) if rng.uniform() < 0.8 else on
    # 20 ms raised-cosine ramps to avoid clicks
    ramp = int(0.02 * sr)
    win = np.hanning(2 * ramp + 1)
    win /= win.sum()
    return np.convolve(env, win, mode="same")


def _active_fraction(x: np.ndarray, sr: int) -> float:
    frame = int(0.03 * sr)
    m = (len(x) // frame) * frame
    frames = x[:m].reshape(-1, frame)
    rms = np.sqrt((frames * frames).mean(axis=1))
    if rms.max() <= 0:
        return 0.0
    return float((rms > 0.1 * rms.max()).mean())


def generate_source(kind: str, seed: int, duration: float,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Deterministic synthetic dry source, unit peak.

    speech_like: harmonic complex on a randomized fundamental in
    [90, 300] Hz (slight vibrato, one formant-style resonance), gated by
    syllable-rate on/off segments; redrawn until the active-frame
    fraction lands in [0.35, 0.85]. noise_like: lowpass-colored noise.
    """
    if duration <= 0:
        raise DataError(f"duration must be positive, got {duration}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))

    if kind == "noise_like":
        x = rng.normal(size=n)
        cutoff = rng.uniform(1000.0, 6000.0)
        b, a = butter(2, cutoff / (sample_rate / 2.0))
        x = lfilter(b, a, x)
        return AudioBuffer(x / np.max(np.abs(x)), sample_rate)

    if kind != "speech_like":
        raise DataError(f"unknown source kind '{kind}'")

    f0 = rng.uniform(90.0, 300.0)
    syllable_rate = rng.uniform(2.0, 8.0)
    tt = np.arange(n) / sample_rate

    # vibrato kept small so the dominant spectral peak stays at f0
    vib = 1.0 + 0.005 * np.sin(2.0 * np.pi * rng.uniform(4.0, 7.0) * tt
                               + rng.uniform(0.0, 2.0 * np.pi))
    phase0 = 2.0 * np.pi * np.cumsum(f0 * vib) / sample_rate

    n_harm = min(30, int(4000.0 / f0))
    formant = rng.uniform(300.0, 2500.0)
    bw = rng.uniform(200.0, 600.0)
    sig = np.sin(phase0 + rng.uniform(0.0, 2.0 * np.pi))  # fundamental, amp 1
    for h in range(2, n_harm + 1):
        fh = h * f0
        res = 1.0 + 0.5 / (1.0 + ((fh - formant) / bw) ** 2)
        amp = rng.uniform(0.4, 0.8) / h ** 1.1 * res
        sig = sig + amp * np.sin(h * phase0 + rng.uniform(0.0, 2.0 * np.pi))

    for _attempt in range(40):
        env = _speech_envelope(rng, n, sample_rate, syllable_rate)
        x = env * sig
        if 0.35 <= _active_fraction(x, sample_rate) <= 0.85:
            break
    return AudioBuffer(x / np.max(np.abs(x)), sample_rate)


# ---------------------------------------------------------------------------
# corpus generation


def derive_seed(*parts) -> int:
    """Stable child seed from a tuple of ints/strings."""
    ints = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p)
            for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def build_scene(master_seed: int, split: str, index: int,
                duration: float = 4.0,
                sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Deterministically construct scene number `index` of a split.
    Returns (SceneSpec, SceneBundle)."""
    scene_seed = derive_seed(master_seed, split, index)
    spec = sample_scene(scene_seed)

    seed1 = derive_seed(scene_seed, "talker", 1)
    dry = [generate_source("speech_like", seed1, duration, sample_rate)]
    if spec.talker_count == 2:
        f0_1 = speech_params(seed1)["f0"]
        for attempt in range(64):
            seed2 = derive_seed(scene_seed, "talker", 2, attempt)
            if abs(speech_params(seed2)["f0"] - f0_1) >= MIN_F0_SEPARATION_HZ:
                break
        dry.append(generate_source("speech_like", seed2, duration, sample_rate))
    noise = generate_source("noise_like", derive_seed(scene_seed, "noise"),
                            duration, sample_rate)
    return spec, synthesize_scene(spec, dry, noise)


def generate_corpus(out_dir, num_scenes: int, master_seed: int,
                    split: str = "train", duration: float = 4.0,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> Path:
    """Write num_scenes scenes (4 WAVs each) plus a JSONL manifest.
    Byte-reproducible for a fixed (master_seed, split, num_scenes)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / f"{split}_manifest.jsonl"
    records = []
    for index in range(num_scenes):
        spec, bundle = build_scene(master_seed, split, index,
                                   duration, sample_rate)
        scene_id = f"{split}_{index:05d}"
        paths = {}
        for tag, buf in (("mix", bundle.mixture),
                         ("s1", bundle.targets.sources[0]),
                         ("s2", bundle.targets.sources[1]),
                         ("noise", bundle.noise)):
            rel = f"{scene_id}_{tag}.wav"
            write_wav(out_dir / rel, buf)
            paths[tag] = rel
        records.append({
            "id": scene_id,
            "mix": paths["mix"], "s1": paths["s1"], "s2": paths["s2"],
            "noise": paths["noise"],
            "talker_count": spec.talker_count,
            "sir_db": spec.sir_db,
            "snr_db": spec.snr_db,
            "rt60": spec.rt60,
            "seed": spec.seed,
        })
    with open(manifest_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return manifest_path


def load_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: bad manifest line: {e}")
    if not records:
        raise DataError(f"manifest is empty: {path}")
    return records
