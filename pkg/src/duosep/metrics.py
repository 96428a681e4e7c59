"""Evaluation: SI-SDR scoring, best-permutation assignment, detection rates.

Pure-number twin of the differentiable measures, plus per-condition
aggregation into a text table and CSV. Scoring convention: dual-talker
scenes use the best channel permutation; single-talker scenes report the
better of the two channels against the lone target (both channels chase
it under the duplicated-target training), with the worse one kept as a
diagnostic.
"""

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .exceptions import DataError, ZeroEnergyError

EVAL_EPSILON = 1e-8
SNR_BUCKETS = (("5-10", 5.0, 10.0), ("10-15", 10.0, 15.0),
               ("15-20", 15.0, 20.0))


def _as_array(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def eval_si_sdr(s, s_hat, epsilon: float = EVAL_EPSILON) -> float:
    """Scale-invariant SDR of estimate s_hat against target s, in dB.

    Same epsilon placement as the differentiable measure (inside the
    error energy and once more on the ratio), so the two agree to
    floating-point noise. Target comes first.
    """
    s = _as_array(s)
    s_hat = _as_array(s_hat)
    if s.shape != s_hat.shape:
        raise DataError(f"target shape {s.shape} != estimate {s_hat.shape}")
    es = float(np.sum(s * s))
    if es < 1e-30:
        raise ZeroEnergyError("SI-SDR is ill-defined for a zero-energy target")
    alpha = float(np.sum(s_hat * s)) / es
    target = alpha * s
    num = float(np.sum(target * target))
    err = s_hat - target
    den = float(np.sum(err * err)) + epsilon
    return 10.0 * np.log10(num / den + epsilon)


def snr_bucket(snr_db: float) -> str:
    for name, lo, hi in SNR_BUCKETS:
        if lo <= snr_db < hi:
            return name
    if snr_db == SNR_BUCKETS[-1][2]:
        return SNR_BUCKETS[-1][0]
    return "other"


def warmup_frame_count(sample_rate: int, hop: int,
                       warmup_ms: float = 500.0) -> int:
    """Frames whose start lies inside the warm-up window."""
    return int(np.ceil(warmup_ms / 1000.0 * sample_rate / hop))


@dataclass
class DetectionCounts:
    """Frame-level confusion counts; positive class = overlap (dual)."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, decisions: np.ndarray, label: int):
        decisions = np.asarray(decisions, dtype=bool)
        pos = int(np.count_nonzero(decisions))
        neg = decisions.size - pos
        if label == 1:
            self.tp += pos
            self.fn += neg
        else:
            self.fp += pos
            self.tn += neg

    def merge(self, other: "DetectionCounts"):
        self.tp += other.tp
        self.tn += other.tn
        self.fp += other.fp
        self.fn += other.fn

    @property
    def tpr(self):
        d = self.tp + self.fn
        return self.tp / d if d > 0 else None

    @property
    def tnr(self):
        d = self.tn + self.fp
        return self.tn / d if d > 0 else None

    @property
    def accuracy(self):
        total = self.tp + self.tn + self.fp + self.fn
        return (self.tp + self.tn) / total if total > 0 else None


@dataclass
class EvalRecord:
    scene_id: str
    talker_count: int
    per_source_si_sdr: list
    si_sdri: float
    snr_db: float
    snr_bucket: str
    min_channel_si_sdr: float | None = None
    sod_counts: DetectionCounts | None = None

    @property
    def si_sdr(self) -> float:
        return float(np.mean(self.per_source_si_sdr))


def score_scene(bundle, estimates, sod_decisions=None, scene_id: str = "",
                warmup_frames: int = 0) -> EvalRecord:
    """Score one scene's estimates; optionally fold in SOD decisions.

    estimates: two equal-length channels, any array-like. Dual-talker
    scoring takes the best of both channel assignments; single-talker
    scoring takes the better channel vs the lone target and logs the
    worse one. sod_decisions, when given, is a boolean per-frame overlap
    verdict; frames before warmup_frames are excluded from the counts
    and the remainder is compared against the broadcast scene label.
    """
    ests = [_as_array(e) for e in estimates]
    if len(ests) != 2 or ests[0].shape != ests[1].shape:
        raise DataError("score_scene wants two equal-length channels")
    mix = _as_array(bundle.mixture)
    srcs = bundle.targets.arrays()
    tc = bundle.targets.talker_count
    snr = float(bundle.spec.snr_db)

    if tc == 2:
        baseline = np.mean([eval_si_sdr(s, mix) for s in srcs[:2]])
        best = None
        for perm in itertools.permutations(range(2)):
            by_src = [0.0, 0.0]
            for ch in range(2):
                by_src[perm[ch]] = eval_si_sdr(srcs[perm[ch]], ests[ch])
            if best is None or np.mean(by_src) > np.mean(best):
                best = by_src
        # keyed by source index, so swapping estimate channels leaves the
        # record unchanged
        record_sdrs = best
        si_sdri = float(np.mean(best) - baseline)
        min_chan = None
    else:
        baseline = eval_si_sdr(srcs[0], mix)
        vals = [eval_si_sdr(srcs[0], e) for e in ests]
        record_sdrs = [max(vals)]
        min_chan = min(vals)
        si_sdri = float(max(vals) - baseline)

    counts = None
    if sod_decisions is not None:
        decisions = np.asarray(sod_decisions, dtype=bool)[warmup_frames:]
        counts = DetectionCounts()
        counts.add(decisions, tc - 1)

    return EvalRecord(scene_id=scene_id, talker_count=tc,
                      per_source_si_sdr=[float(v) for v in record_sdrs],
                      si_sdri=si_sdri, snr_db=snr,
                      snr_bucket=snr_bucket(snr),
                      min_channel_si_sdr=min_chan, sod_counts=counts)


# ---------------------------------------------------------------------------
# aggregation


def _bucket_order(name: str) -> float:
    for i, (bname, _, _) in enumerate(SNR_BUCKETS):
        if bname == name:
            return i
    return len(SNR_BUCKETS)


def aggregate(records: list, group_keys=("talker_count", "snr_bucket"),
              csv_path=None) -> str:
    """Per-condition means as an aligned text table; optional CSV copy.

    Groups records by group_keys, one row per nonempty group plus a row
    per talker count and an overall row. Flags any higher-SNR bucket
    whose mean SI-SDRi drops below the bucket before it.
    """
    if not records:
        raise DataError("no records to aggregate")

    def key_of(r):
        return tuple(getattr(r, k) for k in group_keys)

    groups: dict = {}
    for r in records:
        groups.setdefault(key_of(r), []).append(r)

    expected = None
    if tuple(group_keys) == ("talker_count", "snr_bucket"):
        expected = [(tc, b[0]) for tc in (1, 2) for b in SNR_BUCKETS]
        for k in expected:
            if k not in groups:
                warnings.warn(f"no records for condition {k}; row omitted")

    rows = []
    for k in sorted(groups, key=lambda k: tuple(
            _bucket_order(v) if isinstance(v, str) else v for v in k)):
        rs = groups[k]
        rows.append(_summary_row("/".join(str(v) for v in k), rs))
    for tc in sorted({r.talker_count for r in records}):
        rs = [r for r in records if r.talker_count == tc]
        rows.append(_summary_row(f"{tc}-talker all", rs))
    rows.append(_summary_row("overall", records))

    header = ("condition", "n", "SI-SDR", "SI-SDRi", "TPR", "TNR")
    widths = [max(len(header[i]), *(len(row[i]) for row in rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths))
                 for row in rows)

    flags = _monotonicity_flags(records)
    lines.extend(flags)

    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)

    return "\n".join(lines)


def _summary_row(name: str, rs: list) -> tuple:
    counts = DetectionCounts()
    have_sod = False
    for r in rs:
        if r.sod_counts is not None:
            counts.merge(r.sod_counts)
            have_sod = True
    tpr = counts.tpr if have_sod else None
    tnr = counts.tnr if have_sod else None
    return (name, str(len(rs)),
            f"{np.mean([r.si_sdr for r in rs]):+.2f}",
            f"{np.mean([r.si_sdri for r in rs]):+.2f}",
            "-" if tpr is None else f"{100 * tpr:.1f}%",
            "-" if tnr is None else f"{100 * tnr:.1f}%")


def _monotonicity_flags(records: list) -> list:
    """The trend to watch: SI-SDRi should not fall as input SNR rises."""
    flags = []
    for tc in sorted({r.talker_count for r in records}):
        means = []
        for bname, _, _ in SNR_BUCKETS:
            rs = [r for r in records
                  if r.talker_count == tc and r.snr_bucket == bname]
            if rs:
                means.append((bname, float(np.mean([r.si_sdri for r in rs]))))
        for (b_lo, m_lo), (b_hi, m_hi) in zip(means, means[1:]):
            if m_hi < m_lo:
                flags.append(
                    f"note: {tc}-talker mean SI-SDRi drops from "
                    f"{m_lo:+.2f} ({b_lo} dB) to {m_hi:+.2f} ({b_hi} dB)")
    return flags
