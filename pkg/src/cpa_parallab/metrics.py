"""Side-channel quality metrics: SNR, cross-PE dependence, success limits.

The SNR of a targeted PE is the variance of its own leakage over the
variance of the summed leakage of every other PE (the algorithmic noise).
Because all PEs share the input stream those terms are statistically
dependent, which is what ultimately bounds CPA success as width grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpa import nanmean_quiet, pearson
from .errors import UndefinedCorrelationError
from .leakage import ArrayConfig, chain_leakage, mac_chain_patterns, popcount, to_patterns
from .tracegen import derive_run_seed


@dataclass(frozen=True)
class SnrPoint:
    """SNR of the targeted PE at one array width and step.

    ``snr`` is +inf at n_pe = 1, where there is no algorithmic noise.
    """

    n_pe: int
    tau: int
    snr: float


@dataclass(frozen=True)
class CrossingPoint:
    """Smallest width where the best incorrect hypothesis wins.

    ``n_pe_star`` is None when the curves never cross in range.
    ``confidence`` is the half-width (in PE count) of the region around
    the crossing where the curve difference is within two standard errors.
    """

    tau: int
    n_pe_star: int | None
    confidence: float


def snr_curve(source, tau: int) -> list[SnrPoint]:
    """Per-width SNR points, averaged over runs.

    ``source`` is either a `SweepResult` or a sequence of per-width
    campaigns. Campaign sources are re-derived from stored weights and
    inputs, so the decomposition is the noise-free algorithmic one even if
    the traces were generated with measurement noise.
    """
    if hasattr(source, "snr_runs"):
        j = source.curves.tau_index(tau)
        return [SnrPoint(n_pe=int(n), tau=tau, snr=float(source.snr[i, j]))
                for i, n in enumerate(source.n_pe_values)]

    points = []
    for camp in sorted(source, key=lambda c: c.config.n_pe):
        ratios = []
        for run in camp.runs:
            if run.weights is None:
                raise ValueError("SNR needs known weights to decompose per-PE leakage")
            leak = chain_leakage(mac_chain_patterns(
                run.weights, run.inputs, run.config.register_bits)).astype(np.float64)
            v0 = leak[0, :, tau].var()
            if camp.config.n_pe == 1:
                ratios.append(np.inf)
                continue
            vo = leak[1:, :, tau].sum(axis=0).var()
            if v0 == 0:
                ratios.append(np.nan)
            else:
                ratios.append(np.inf if vo == 0 else v0 / vo)
        points.append(SnrPoint(n_pe=camp.config.n_pe, tau=tau,
                               snr=float(nanmean_quiet(np.asarray(ratios), axis=0))))
    return points


@dataclass(frozen=True)
class CrossPeDependence:
    """Maximum |rho| between the target's leakage and another PE's leakage."""

    tau: int
    max_abs_rho: float
    sampled_max: float
    witness_max: float | None      # deterministic shift-pair sweep, tau = 0 only


def _shift_pair_witness(config: ArrayConfig) -> float:
    """Exact max |rho| over first-step shift pairs (w, 2^k w), all inputs.

    Evaluated over the whole input domain, so the result is deterministic.
    With non-negative products doubling a weight shifts the product
    pattern without dropping bits, so the pair leaks identically and the
    correlation is exactly 1.
    """
    wlo, whi = config.weight_range
    xlo, xhi = config.input_range
    xs = to_patterns(np.arange(xlo, xhi + 1, dtype=np.int64), config.register_bits)
    mask = np.uint64((1 << config.register_bits) - 1)
    best = 0.0
    for w in range(wlo, whi + 1):
        if w == 0:
            continue
        for k in range(1, config.weight_bits):
            w2 = w * (1 << k)
            if not wlo <= w2 <= whi:
                break
            la = popcount((to_patterns(np.asarray([w]), config.register_bits)[0]
                           * xs) & mask).astype(np.float64)
            lb = popcount((to_patterns(np.asarray([w2]), config.register_bits)[0]
                           * xs) & mask).astype(np.float64)
            try:
                best = max(best, abs(pearson(la, lb)))
            except UndefinedCorrelationError:
                continue
            if best >= 1.0:
                return 1.0
    return best


def cross_pe_dependence(tau: int, n_runs: int, n_traces: int = 2000,
                        config: ArrayConfig | None = None, seed: int = 0,
                        include_witness: bool = True) -> CrossPeDependence:
    """Fig-style cross-PE dependence: max |rho| between two PEs' leakage.

    Each run draws two distinct random weight vectors sharing random
    inputs and correlates their leakage at step tau; the result is the
    maximum over runs. At tau = 0 a deterministic sweep over shift pairs
    (w, 2^k w) on the full input domain is included, which pins the
    maximum at exactly 1.0 without relying on sampling luck. Later steps
    use sampling alone: a shifted weight *vector* keeps the whole chain
    aliased, so including the sweep there would report the unattainable
    supremum instead of the observed maximum.
    """
    config = config or ArrayConfig(n_pe=2)
    n_tau = tau + 1
    xlo, xhi = config.input_range
    wlo, whi = config.weight_range
    sampled = 0.0
    for r in range(n_runs):
        ss = np.random.SeedSequence(derive_run_seed(seed, r))
        ss_w, ss_x = ss.spawn(2)
        rng_w = np.random.Generator(np.random.PCG64(ss_w))
        rng_x = np.random.Generator(np.random.PCG64(ss_x))
        W = rng_w.integers(wlo, whi + 1, size=(2, n_tau), dtype=np.int64)
        while np.array_equal(W[0], W[1]):
            W[1] = rng_w.integers(wlo, whi + 1, size=n_tau, dtype=np.int64)
        X = rng_x.integers(xlo, xhi + 1, size=(n_traces, n_tau), dtype=np.int64)
        leak = chain_leakage(mac_chain_patterns(W, X, config.register_bits))
        try:
            sampled = max(sampled, abs(pearson(leak[0, :, tau], leak[1, :, tau])))
        except UndefinedCorrelationError:
            continue
    witness = None
    if include_witness and tau == 0:
        witness = _shift_pair_witness(config)
    best = sampled if witness is None else max(sampled, witness)
    return CrossPeDependence(tau=tau, max_abs_rho=float(best),
                             sampled_max=float(sampled), witness_max=witness)


def crossing_point(n_pe_values, rho_correct, best_incorrect, tau: int,
                   rho_correct_runs=None, best_incorrect_runs=None) -> CrossingPoint:
    """First width at which the mean correct curve drops below the
    mean best-incorrect curve.

    ``n_pe_values`` must be strictly increasing. The confidence half-width
    is derived from run-to-run variance of the curve difference when the
    per-run samples are supplied (0.0 otherwise).
    """
    n_pe_values = np.asarray(n_pe_values)
    rho_correct = np.asarray(rho_correct, dtype=np.float64)
    best_incorrect = np.asarray(best_incorrect, dtype=np.float64)
    if n_pe_values.ndim != 1 or np.any(np.diff(n_pe_values) <= 0):
        raise ValueError("n_pe values must be strictly increasing")
    if not (len(n_pe_values) == len(rho_correct) == len(best_incorrect)):
        raise ValueError("curves and n_pe values must have equal length")

    below = rho_correct < best_incorrect
    idx = np.flatnonzero(below)
    star = int(n_pe_values[idx[0]]) if idx.size else None

    confidence = 0.0
    if rho_correct_runs is not None and best_incorrect_runs is not None and idx.size:
        diff = np.asarray(rho_correct_runs, dtype=np.float64) - \
            np.asarray(best_incorrect_runs, dtype=np.float64)
        n_eff = (~np.isnan(diff)).sum(axis=-1)
        with np.errstate(invalid="ignore"):
            se = np.nanstd(diff, axis=-1) / np.sqrt(np.maximum(n_eff, 1))
        mean_diff = rho_correct - best_incorrect
        ambiguous = np.abs(mean_diff) <= 2 * se
        i = idx[0]
        lo = i
        while lo > 0 and ambiguous[lo - 1]:
            lo -= 1
        hi = i
        while hi + 1 < len(n_pe_values) and ambiguous[hi + 1]:
            hi += 1
        confidence = float(n_pe_values[hi] - n_pe_values[lo]) / 2.0
    return CrossingPoint(tau=tau, n_pe_star=star, confidence=confidence)


@dataclass(eq=False)
class SnrCorrelation:
    """Correlation-vs-SNR aggregation with success thresholds.

    The mean curve pools every (n_pe, tau) point into log-spaced SNR bins;
    the envelope is the min/max across the pooled points of each bin.
    ``snr_star_mean`` is where the pooled correct curve crosses the pooled
    best-incorrect curve; ``snr_star_worst`` is the largest per-tau
    crossing SNR (the worst case over targeted steps).
    """

    bin_edges: np.ndarray
    bin_centers: np.ndarray
    mean_rho: np.ndarray
    mean_best_incorrect: np.ndarray
    env_min: np.ndarray
    env_max: np.ndarray
    counts: np.ndarray
    snr_star_mean: float | None
    snr_star_worst: float | None
    per_tau_snr_star: dict


def _interp_crossing_log(snr_lo, snr_hi, d_lo, d_hi) -> float:
    """SNR at which the difference d crosses zero, log-interpolated."""
    if d_hi == d_lo:
        return float(np.sqrt(snr_lo * snr_hi))
    t = d_lo / (d_lo - d_hi)
    t = min(max(t, 0.0), 1.0)
    return float(10 ** (np.log10(snr_lo) + t * (np.log10(snr_hi) - np.log10(snr_lo))))


def correlation_vs_snr(sweep, n_bins: int = 40, snr_lo: float = 1e-3,
                       snr_hi: float = 10.0) -> SnrCorrelation:
    """Aggregate a sweep into a correlation-vs-SNR success curve."""
    curves = sweep.curves
    P, T = curves.rho_correct.shape
    snr = sweep.snr

    pts_snr, pts_rho, pts_binc = [], [], []
    per_tau_star = {}
    for j, tau in enumerate(curves.taus):
        s = snr[:, j]
        rc = curves.rho_correct[:, j]
        bi = curves.best_incorrect[:, j]
        finite = np.isfinite(s) & np.isfinite(rc) & np.isfinite(bi)
        pts_snr.append(s[finite])
        pts_rho.append(rc[finite])
        pts_binc.append(bi[finite])
        # per-tau threshold: walk widths, find the first failure, map to SNR
        diff = rc - bi
        star = None
        for i in range(P):
            if not finite[i]:
                continue
            if diff[i] < 0:
                prev = i - 1
                while prev >= 0 and not finite[prev]:
                    prev -= 1
                if prev >= 0:
                    star = _interp_crossing_log(s[i], s[prev], diff[i], diff[prev])
                else:
                    star = float(s[i])
                break
        per_tau_star[int(tau)] = star

    snr_all = np.concatenate(pts_snr)
    rho_all = np.concatenate(pts_rho)
    binc_all = np.concatenate(pts_binc)

    edges = np.logspace(np.log10(snr_lo), np.log10(snr_hi), n_bins + 1)
    centers = np.sqrt(edges[:-1] * edges[1:])
    mean_rho = np.full(n_bins, np.nan)
    mean_binc = np.full(n_bins, np.nan)
    env_min = np.full(n_bins, np.nan)
    env_max = np.full(n_bins, np.nan)
    counts = np.zeros(n_bins, dtype=np.int64)
    which = np.digitize(snr_all, edges) - 1
    for b in range(n_bins):
        m = which == b
        counts[b] = int(m.sum())
        if counts[b]:
            mean_rho[b] = rho_all[m].mean()
            mean_binc[b] = binc_all[m].mean()
            env_min[b] = rho_all[m].min()
            env_max[b] = rho_all[m].max()

    # pooled threshold: scan non-empty bins by increasing SNR for the sign
    # change of (mean_rho - mean_binc) from failure to success
    snr_star_mean = None
    filled = np.flatnonzero(counts > 0)
    for a, b in zip(filled, filled[1:]):
        d_a = mean_rho[a] - mean_binc[a]
        d_b = mean_rho[b] - mean_binc[b]
        if d_a < 0 <= d_b:
            snr_star_mean = _interp_crossing_log(centers[a], centers[b], d_a, d_b)
            break

    defined = [v for v in per_tau_star.values() if v is not None]
    snr_star_worst = max(defined) if defined else None
    return SnrCorrelation(bin_edges=edges, bin_centers=centers, mean_rho=mean_rho,
                          mean_best_incorrect=mean_binc, env_min=env_min,
                          env_max=env_max, counts=counts,
                          snr_star_mean=snr_star_mean, snr_star_worst=snr_star_worst,
                          per_tau_snr_star=per_tau_star)
