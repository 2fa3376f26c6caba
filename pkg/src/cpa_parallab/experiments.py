"""Parallelism sweeps: one campaign, every array width at once.

At zero noise the power of a k-PE array is the sum of the first k per-PE
leakage traces (superposition), so a single campaign generated at the
maximum width yields exact traces for every smaller width via prefix sums
over the PE axis. Each run is attacked once per step with the 2^weight_bits
single-weight candidates (known-prefix mode), correlating all candidates
against all array widths in one matrix product. This is what makes
1000-run, 32-width, 8-step experiments tractable; results are identical in
distribution to generating one campaign per width.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cpa import (HypothesisSpace, SuccessCurves, first_step_alias_classes,
                  hypothesize_leakage, nanmean_quiet, values_to_digits)
from .leakage import ArrayConfig, chain_leakage, mac_chain_patterns
from .tracegen import WeightDistribution, derive_run_seed, generate_run


@dataclass(eq=False)
class SweepResult:
    """Success curves plus SNR samples over n_pe = 1..n_pe_max."""

    curves: SuccessCurves                # nested estimates, all widths
    snr: np.ndarray                      # [P, T] mean per-run variance ratio
    snr_runs: np.ndarray                 # [P, T, R]
    best_incorrect_mean_then_max: np.ndarray   # [P, T] alternative aggregation
    config: ArrayConfig                  # the full-width configuration
    n_traces: int
    n_runs: int
    seed: int
    distribution: WeightDistribution

    @property
    def n_pe_values(self) -> np.ndarray:
        return self.curves.n_pe_values

    @property
    def taus(self) -> np.ndarray:
        return self.curves.taus


def _run_worker(config: ArrayConfig, dist: WeightDistribution, n_tau: int,
                n_traces: int, seed: int, taus: np.ndarray, alias_classes: np.ndarray):
    """Evaluate one run: per-width correlations and SNR at every tau."""
    run = generate_run(config, dist, n_tau, n_traces, seed)
    leak = chain_leakage(
        mac_chain_patterns(run.weights, run.inputs, config.register_bits))
    leak = leak.astype(np.float32)
    cum = np.cumsum(leak, axis=0)                  # [P, Tr, n_tau]
    P = config.n_pe
    T = len(taus)
    n_cand = 1 << config.weight_bits

    rc = np.full((P, T), np.nan)
    bi = np.full((P, T), np.nan)
    snr = np.full((P, T), np.nan)
    csum = np.zeros((T, n_cand, P), dtype=np.float64)
    ccnt = np.zeros((T, n_cand, 1))

    for j, tau in enumerate(taus):
        l0 = leak[0, :, tau]
        v0 = float(l0.var())
        others = cum[:, :, tau] - l0[None, :]
        vo = others.var(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = v0 / vo
        if v0 > 0:
            snr[:, j] = ratio                      # inf at width 1 (vo == 0)

        space = HypothesisSpace.known_prefix(run.weights[0, :tau])
        H = hypothesize_leakage(space, run.inputs, config).astype(np.float32)
        Hc = H - H.mean(axis=1, keepdims=True)
        h_norm = np.sqrt((Hc * Hc).sum(axis=1))
        Pm = cum[:, :, tau].T                      # [Tr, P]
        Pc = Pm - Pm.mean(axis=0)
        p_norm = np.sqrt((Pc * Pc).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            C = np.abs(Hc @ Pc) / (h_norm[:, None] * p_norm[None, :])
        C = np.where(np.isfinite(C), C, 0.0)
        defined_rows = h_norm > 0

        target = int(values_to_digits(run.weights[0, tau], config))
        if not defined_rows[target]:
            continue
        correct = np.zeros(n_cand, dtype=bool)
        correct[values_to_digits(run.weights[:, tau], config)] = True
        excl = correct.copy()
        if tau == 0:
            cls = alias_classes
            excl |= np.isin(cls, np.unique(cls[correct]))
        rc[:, j] = C[target]
        bi[:, j] = C[~excl].max(axis=0)
        csum[j, ~excl] += C[~excl]
        ccnt[j, ~excl] += 1
    return rc, bi, snr, csum, ccnt


def parallelism_sweep(n_pe_max: int, dist: WeightDistribution, n_tau: int,
                      n_traces: int, n_runs: int, master_seed: int,
                      taus=None, base_config: ArrayConfig | None = None,
                      threads: int = 1) -> SweepResult:
    """Run a full-width campaign and derive curves for every array width.

    ``base_config`` supplies operand widths and signedness (its n_pe and
    noise_sigma are ignored; the sweep is a zero-noise construction).
    """
    if taus is None:
        taus = list(range(n_tau))
    taus = np.asarray(sorted(int(t) for t in taus), dtype=np.int64)
    if taus[0] < 0 or taus[-1] >= n_tau:
        raise ValueError(f"taus {taus.tolist()} outside [0, {n_tau})")
    tmpl = base_config or ArrayConfig(n_pe=1)
    config = ArrayConfig(n_pe=n_pe_max, weight_bits=tmpl.weight_bits,
                         input_bits=tmpl.input_bits, register_bits=tmpl.register_bits,
                         noise_sigma=0.0, signed_weights=tmpl.signed_weights,
                         signed_inputs=tmpl.signed_inputs)
    alias_classes = first_step_alias_classes(config)
    seeds = [derive_run_seed(master_seed, r) for r in range(n_runs)]

    def one(r):
        return _run_worker(config, dist, n_tau, n_traces, seeds[r], taus, alias_classes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_runs)))
    else:
        results = [one(r) for r in range(n_runs)]

    P, T = n_pe_max, len(taus)
    rc = np.stack([r[0] for r in results], axis=2)     # [P, T, R]
    bi = np.stack([r[1] for r in results], axis=2)
    snr = np.stack([r[2] for r in results], axis=2)
    csum = sum(r[3] for r in results)
    ccnt = sum(r[4] for r in results)
    with np.errstate(invalid="ignore"):
        cand_mean = np.where(ccnt > 0, csum / np.maximum(ccnt, 1), -np.inf)
    best_mtm = cand_mean.max(axis=1).T                 # [P, T]

    curves = SuccessCurves(
        n_pe_values=np.arange(1, n_pe_max + 1, dtype=np.int64), taus=taus,
        rho_correct=nanmean_quiet(rc, axis=2),
        best_incorrect=nanmean_quiet(bi, axis=2),
        rho_correct_runs=rc, best_incorrect_runs=bi)
    return SweepResult(curves=curves, snr=nanmean_quiet(snr, axis=2), snr_runs=snr,
                       best_incorrect_mean_then_max=best_mtm, config=config,
                       n_traces=n_traces, n_runs=n_runs, seed=int(master_seed),
                       distribution=dist)
