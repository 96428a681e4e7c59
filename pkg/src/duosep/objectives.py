"""Training objectives for joint enhancement and two-talker separation.

All losses are built from one unified measure

    D = 10 * log10(||a*s||^2 / (||s_hat - a*s||^2 + eps) + eps)

with a = 1 for SDR and a = s_hat.s / ||s||^2 for SI-SDR. On top of it:

* pit_loss: negated best-permutation mean of D over the target set.
* eps_tsdr_measure: thresholded SDR with a soft cap at sdr_max, defined
  even for zero-energy targets.
* sa_sdr_loss: one global energy ratio over the whole target set,
  realized as plain SDR of the permutation-stacked signals.
* mol_loss: single-talker mode mixes D on channel 1 with a negated
  log-MSE penalty on the silent channel 2; dual-talker mode is plain PIT.
* reformulate_targets: the duplicated-target trick. A single-talker
  target set {s1, 0} becomes {s1, s1}, after which the scale-invariant
  measure is well defined on every channel and one loss covers both the
  enhancement and the separation regime.

Every loss returns a scalar graph node differentiable w.r.t. the
estimates; targets are plain arrays and enter the graph as constants.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioBuffer, ZERO_ENERGY_EPS
from .autodiff import Var, concat
from .exceptions import ConfigError, DataError, ZeroEnergyError

MEASURES = ("sdr", "si-sdr")
OBJECTIVES = ("se-single", "ss-pit", "eps-tsdr", "sa-sdr", "mol", "proposed")

# Factorial enumeration of permutations stays tractable only this far.
MAX_SOURCES = 4


@dataclass
class LossConfig:
    """Knobs shared by all objectives.

    epsilon stabilizes every ratio and log; sdr_max caps the thresholded
    SDR (tau = 10^(-sdr_max/10) is derived from it); mol_lambda balances
    the silent-channel log-MSE term; measure picks SDR vs SI-SDR for the
    objectives that use the unified measure.
    """

    epsilon: float = 1e-8
    sdr_max: float = 30.0
    mol_lambda: float = 0.1
    measure: str = "si-sdr"
    objective: str = "proposed"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.sdr_max > 0:
            raise ConfigError(f"sdr_max must be > 0, got {self.sdr_max}")
        if self.mol_lambda < 0:
            raise ConfigError(f"mol_lambda must be >= 0, got {self.mol_lambda}")
        if self.measure not in MEASURES:
            raise ConfigError(
                f"measure must be one of {MEASURES}, got '{self.measure}'")
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {OBJECTIVES}, got '{self.objective}'")

    @property
    def tau(self) -> float:
        return 10.0 ** (-self.sdr_max / 10.0)


@dataclass
class TargetSet:
    """Ordered reference sources plus how many of them are real talkers."""

    sources: list
    talker_count: int

    def __post_init__(self):
        if self.talker_count not in (1, 2):
            raise DataError(f"talker_count must be 1 or 2, got {self.talker_count}")
        if not self.sources:
            raise DataError("TargetSet needs at least one source")
        shapes = {_target_array(s).shape for s in self.sources}
        if len(shapes) != 1:
            raise DataError(f"target sources differ in shape: {sorted(shapes)}")

    def arrays(self) -> list:
        return [_target_array(s) for s in self.sources]

    def validate_raw(self):
        """Check the pre-reformulation contract: with one talker, every
        source past the first must be silent."""
        if self.talker_count == 1:
            for k, s in enumerate(self.arrays()[1:], start=2):
                if _energy(s) >= ZERO_ENERGY_EPS:
                    raise DataError(
                        f"talker_count=1 but source {k} carries energy")


@dataclass
class EstimateSet:
    """Ordered estimate nodes, aligned with a TargetSet."""

    estimates: list


def _target_array(s) -> np.ndarray:
    # any shape is fine; each measure cross-checks it against its estimate
    if isinstance(s, AudioBuffer):
        return s.samples
    return np.asarray(s, dtype=np.float64)


def _energy(arr: np.ndarray) -> float:
    return float(np.sum(arr * arr))


def _estimate_list(estimates) -> list:
    if isinstance(estimates, EstimateSet):
        return list(estimates.estimates)
    return list(estimates)


def sdr_measure(s, s_hat: Var, cfg: LossConfig, scale_invariant=None) -> Var:
    """Unified SDR / SI-SDR of one estimate against one target, in dB.

    scale_invariant overrides cfg.measure when given. SI-SDR on a
    zero-energy target is ill-defined and raises; plain SDR tolerates it
    thanks to the epsilon inside the log.
    """
    s_arr = _target_array(s)
    if s_hat.value.shape != s_arr.shape:
        raise DataError(
            f"estimate shape {s_hat.value.shape} != target shape {s_arr.shape}")
    if scale_invariant is None:
        scale_invariant = cfg.measure == "si-sdr"
    g = s_hat.graph
    es = _energy(s_arr)
    s_const = g.constant(s_arr)
    if scale_invariant:
        if es < ZERO_ENERGY_EPS:
            raise ZeroEnergyError(
                "SI-SDR is ill-defined for a zero-energy target")
        alpha = s_hat.dot(s_const).scale(1.0 / es)
        target = alpha * s_const
        num = target.square().sum()
        err = s_hat - target
    else:
        num = g.constant(np.asarray(es))
        err = s_hat - s_const
    den = err.square().sum() + cfg.epsilon
    ratio = num / den + cfg.epsilon
    return ratio.log10().scale(10.0)


def eps_tsdr_measure(s, s_hat: Var, cfg: LossConfig) -> Var:
    """Thresholded SDR, capped softly at cfg.sdr_max.

    10*log10((||s||^2+eps) / (||s_hat-s||^2 + tau*(||s||^2+eps))) with
    tau = 10^(-sdr_max/10). Well defined for silent targets, and a
    perfect estimate scores exactly sdr_max.
    """
    s_arr = _target_array(s)
    if s_hat.value.shape != s_arr.shape:
        raise DataError(
            f"estimate shape {s_hat.value.shape} != target shape {s_arr.shape}")
    g = s_hat.graph
    num = _energy(s_arr) + cfg.epsilon
    err = s_hat - g.constant(s_arr)
    den = err.square().sum() + (cfg.tau * num)
    ratio = g.constant(np.asarray(num)) / den
    return ratio.log10().scale(10.0)


def pit_loss(targets: TargetSet, estimates, cfg: LossConfig,
             measure_fn=None):
    """Permutation-invariant loss: -(1/N) * max over assignments of the
    summed measure. Returns (loss node, chosen permutation).

    The permutation search compares forward values only; the graph keeps
    the winning branch. Ties break toward the first permutation in
    lexicographic order, i.e. toward identity.
    """
    srcs = targets.arrays()
    ests = _estimate_list(estimates)
    n = len(srcs)
    if len(ests) != n:
        raise DataError(f"{n} targets vs {len(ests)} estimates")
    if n > MAX_SOURCES:
        raise DataError(f"permutation enumeration capped at {MAX_SOURCES} sources")
    if measure_fn is None:
        measure_fn = lambda s, sh: sdr_measure(s, sh, cfg)

    best = None
    best_val = None
    best_perm = None
    for perm in itertools.permutations(range(n)):
        total = measure_fn(srcs[perm[0]], ests[0])
        for ch in range(1, n):
            total = total + measure_fn(srcs[perm[ch]], ests[ch])
        val = float(total.value)
        if best is None or val > best_val:
            best, best_val, best_perm = total, val, perm
    return best.scale(-1.0 / n), best_perm


def sa_sdr_loss(targets: TargetSet, estimates, cfg: LossConfig):
    """Source-aggregated SDR loss: one energy ratio over the whole set.

    Realized as the plain-SDR measure of the permutation-stacked targets
    against the stacked estimates, so the N=1 case reduces to sdr_measure
    identically. Returns (loss node, chosen permutation).
    """
    srcs = targets.arrays()
    ests = _estimate_list(estimates)
    n = len(srcs)
    if len(ests) != n:
        raise DataError(f"{n} targets vs {len(ests)} estimates")
    if n > MAX_SOURCES:
        raise DataError(f"permutation enumeration capped at {MAX_SOURCES} sources")
    total_energy = sum(_energy(s) for s in srcs)
    if total_energy < ZERO_ENERGY_EPS:
        raise ZeroEnergyError("SA-SDR needs at least one active target")

    est_stack = ests[0] if n == 1 else concat(ests, axis=0)
    best = None
    best_val = None
    best_perm = None
    for perm in itertools.permutations(range(n)):
        t_stack = np.concatenate([srcs[p] for p in perm])
        d = sdr_measure(t_stack, est_stack, cfg, scale_invariant=False)
        val = float(d.value)
        if best is None or val > best_val:
            best, best_val, best_perm = d, val, perm
    return best.scale(-1.0), best_perm


def log_mse_measure(s, s_hat: Var, cfg: LossConfig) -> Var:
    """Negated log mean-squared error in dB: -10*log10(||s_hat-s||^2+eps).

    Higher is better (error energy epsilon scores +10*log10(1/eps)), which
    lets it slot into the same maximize-the-measure convention as D.
    """
    s_arr = _target_array(s)
    g = s_hat.graph
    err = s_hat - g.constant(s_arr)
    e2 = err.square().sum() + cfg.epsilon
    return e2.log10().scale(-10.0)


def mol_loss(targets: TargetSet, estimates, cfg: LossConfig):
    """Multi-objective loss.

    Single-talker: -D(s1, s_hat1) - mol_lambda * D_logMSE(s2, s_hat2),
    pinning channel order (no permutation search). Dual-talker: plain PIT.
    Returns (loss node, permutation or None).
    """
    ests = _estimate_list(estimates)
    if targets.talker_count == 2:
        return pit_loss(targets, ests, cfg)
    srcs = targets.arrays()
    if len(srcs) != 2 or len(ests) != 2:
        raise DataError("MOL single-talker mode expects exactly 2 channels")
    d1 = sdr_measure(srcs[0], ests[0], cfg)
    dlm = log_mse_measure(srcs[1], ests[1], cfg)
    return d1.scale(-1.0) + dlm.scale(-cfg.mol_lambda), None


def reformulate_targets(targets: TargetSet) -> TargetSet:
    """Duplicated-target reformulation.

    One talker: {s1, 0} -> {s1, s1}, so both channels get a target with
    energy and the scale-invariant measure never sees a silent reference.
    Two talkers: unchanged.
    """
    if targets.talker_count == 2:
        return targets
    s1 = targets.sources[0]
    if _energy(_target_array(s1)) < ZERO_ENERGY_EPS:
        raise ZeroEnergyError(
            "single-talker target has zero energy; no valid target exists")
    return TargetSet(sources=[s1, s1], talker_count=1)


def objective_dispatch(cfg: LossConfig, targets: TargetSet, estimates) -> Var:
    """Route one (targets, estimates) pair through the configured objective.

    SE-single only accepts single-talker items and scores channel 1
    alone; SS-PIT only accepts dual-talker items. PROPOSED reformulates
    the targets and then runs completely unmodified PIT, which makes it
    coincide with SS-PIT on every dual-talker instance.
    """
    targets.validate_raw()
    ests = _estimate_list(estimates)
    obj = cfg.objective

    if obj == "se-single":
        if targets.talker_count != 1:
            raise ConfigError(
                "objective 'se-single' only accepts single-talker items")
        return sdr_measure(targets.sources[0], ests[0], cfg).scale(-1.0)

    if obj == "ss-pit":
        if targets.talker_count != 2:
            raise ConfigError(
                "objective 'ss-pit' only accepts dual-talker items")
        loss, _ = pit_loss(targets, ests, cfg)
        return loss

    if obj == "eps-tsdr":
        loss, _ = pit_loss(targets, ests, cfg,
                           measure_fn=lambda s, sh: eps_tsdr_measure(s, sh, cfg))
        return loss

    if obj == "sa-sdr":
        loss, _ = sa_sdr_loss(targets, ests, cfg)
        return loss

    if obj == "mol":
        loss, _ = mol_loss(targets, ests, cfg)
        return loss

    if obj == "proposed":
        loss, _ = pit_loss(reformulate_targets(targets), ests, cfg)
        return loss

    raise ConfigError(f"unknown objective '{obj}'")
