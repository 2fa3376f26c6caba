"""Correlation power analysis against PE-array traces.

Hypothesis spaces enumerate candidate weights for the targeted PE; each
candidate is turned into hypothetical leakage with the same HW/HD model
that generates the traces, and candidates are ranked by absolute Pearson
correlation against the attacked trace column.

Candidates are addressed by a stable integer index: base-2^weight_bits
digits, most significant digit = earliest MAC step. In signed
configurations a digit is interpreted as a two's-complement byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (HypothesisCapacityError, UndefinedCorrelationError)
from .leakage import ArrayConfig, chain_leakage, mac_chain_patterns, popcount, to_patterns
from .tracegen import SimulationRun, TraceCampaign

_DEFAULT_CAP = 1 << 24
_CHUNK = 8192


@dataclass(frozen=True)
class HypothesisSpace:
    """Candidate weights attacked at MAC step ``tau``.

    ``full`` mode enumerates every tuple of the first tau+1 weights
    (2^(weight_bits*(tau+1)) candidates). ``prefix`` mode assumes the
    first tau weights are known and enumerates the 2^weight_bits
    candidates for the weight at step tau alone.
    """

    tau: int
    mode: str                            # "full" | "prefix"
    prefix: tuple[int, ...] = ()
    cap: int = _DEFAULT_CAP

    def __post_init__(self):
        if self.mode not in ("full", "prefix"):
            raise ValueError(f"unknown hypothesis mode {self.mode!r}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.mode == "prefix" and len(self.prefix) != self.tau:
            raise ValueError(
                f"prefix mode at tau={self.tau} needs exactly {self.tau} "
                f"known weights, got {len(self.prefix)}")

    @classmethod
    def full_enumeration(cls, tau: int, cap: int = _DEFAULT_CAP) -> "HypothesisSpace":
        return cls(tau=tau, mode="full", cap=cap)

    @classmethod
    def known_prefix(cls, prefix, cap: int = _DEFAULT_CAP) -> "HypothesisSpace":
        prefix = tuple(int(w) for w in prefix)
        return cls(tau=len(prefix), mode="prefix", prefix=prefix, cap=cap)

    @property
    def k_weights(self) -> int:
        """Number of enumerated (unknown) weights per candidate."""
        return self.tau + 1 if self.mode == "full" else 1

    def size(self, config: ArrayConfig) -> int:
        return 1 << (config.weight_bits * self.k_weights)

    def check_capacity(self, config: ArrayConfig):
        n = self.size(config)
        if n > self.cap:
            raise HypothesisCapacityError(
                f"hypothesis space of {n} candidates exceeds the cap {self.cap}; "
                "use known-prefix mode to attack one weight at a time")


def digits_to_values(digits: np.ndarray, config: ArrayConfig) -> np.ndarray:
    """Map candidate digits (0..2^bits-1) to weight values."""
    if not config.signed_weights:
        return digits.astype(np.int64)
    half = 1 << (config.weight_bits - 1)
    full = 1 << config.weight_bits
    d = digits.astype(np.int64)
    return np.where(d >= half, d - full, d)


def values_to_digits(values: np.ndarray, config: ArrayConfig) -> np.ndarray:
    return np.asarray(values).astype(np.int64) % (1 << config.weight_bits)


def candidate_index(weights, config: ArrayConfig) -> int:
    """Index of the candidate tuple ``weights`` (step 0 first)."""
    base = 1 << config.weight_bits
    idx = 0
    for d in values_to_digits(np.asarray(weights).ravel(), config):
        idx = idx * base + int(d)
    return idx


def candidate_weights(index: int, k: int, config: ArrayConfig) -> tuple[int, ...]:
    """Weight tuple of candidate ``index`` in a k-weight space."""
    base = 1 << config.weight_bits
    digits = []
    for _ in range(k):
        digits.append(index % base)
        index //= base
    arr = np.asarray(digits[::-1], dtype=np.int64)
    return tuple(int(v) for v in digits_to_values(arr, config))


def _candidate_digit_matrix(start: int, stop: int, k: int, bits: int) -> np.ndarray:
    """Digits of candidates [start, stop) as [n, k], step 0 first."""
    base = 1 << bits
    idx = np.arange(start, stop, dtype=np.int64)
    cols = []
    for j in range(k):
        shift = bits * (k - 1 - j)
        cols.append((idx >> shift) % base)
    return np.stack(cols, axis=1)


def hypothesize_leakage(space: HypothesisSpace, inputs: np.ndarray,
                        config: ArrayConfig, start: int = 0,
                        stop: int | None = None) -> np.ndarray:
    """Hypothetical leakage at step tau for candidates [start, stop).

    ``inputs`` must cover steps 0..tau ([n_traces, >= tau+1]). Returns a
    uint8 matrix [n_candidates, n_traces] built with the same chain
    semantics as trace generation: HW of the first store at tau = 0, HD of
    consecutive accumulators afterwards.
    """
    space.check_capacity(config)
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[1] < space.tau + 1:
        raise ValueError(
            f"inputs must cover steps 0..{space.tau}, got shape {inputs.shape}")
    n = space.size(config)
    if stop is None:
        stop = n
    if not 0 <= start <= stop <= n:
        raise ValueError(f"candidate range [{start}, {stop}) outside [0, {n})")

    bits = config.register_bits
    mask = np.uint64((1 << bits) - 1)
    tau = space.tau
    x_tau = to_patterns(inputs[:, tau], bits)

    if space.mode == "prefix":
        if tau == 0:
            z_pre = np.zeros(inputs.shape[0], dtype=np.uint64)
        else:
            w = np.asarray(space.prefix, dtype=np.int64).reshape(1, tau)
            z_pre = mac_chain_patterns(w, inputs[:, :tau], bits)[0, :, -1]
        cand = digits_to_values(
            _candidate_digit_matrix(start, stop, 1, config.weight_bits)[:, 0], config)
        cw = to_patterns(cand, bits)
        z_new = (z_pre[None, :] + cw[:, None] * x_tau[None, :]) & mask
        if tau == 0:
            return popcount(z_new)
        return popcount(z_pre[None, :] ^ z_new)

    # full enumeration: build the chain step by step for each candidate
    digits = _candidate_digit_matrix(start, stop, space.k_weights, config.weight_bits)
    z_prev = np.zeros((digits.shape[0], inputs.shape[0]), dtype=np.uint64)
    z = None
    for step in range(tau + 1):
        w = to_patterns(digits_to_values(digits[:, step], config), bits)
        xs = to_patterns(inputs[:, step], bits)
        inc = (w[:, None] * xs[None, :]) & mask
        z = (z_prev + inc) & mask if step > 0 else inc
        if step < tau:
            z_prev = z
    if tau == 0:
        return popcount(z)
    return popcount(z_prev ^ z)


def pearson(h, p) -> float:
    """Pearson correlation of two equal-length vectors.

    Single-pass accumulation in float64 with a first-element shift for
    stability. Raises UndefinedCorrelationError when either vector is
    constant (zero variance), which is distinct from a correlation of 0.
    """
    h = np.asarray(h, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if h.shape != p.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {p.shape}")
    n = h.size
    if n < 2:
        raise ValueError("pearson needs at least 2 samples")
    hs = h - h[0]
    ps = p - p[0]
    s_h = hs.sum()
    s_p = ps.sum()
    s_hh = (hs * hs).sum()
    s_pp = (ps * ps).sum()
    s_hp = (hs * ps).sum()
    var_h = s_hh - s_h * s_h / n
    var_p = s_pp - s_p * s_p / n
    if var_h <= 0 or var_p <= 0:
        raise UndefinedCorrelationError(
            "correlation undefined: at least one vector is constant")
    cov = s_hp - s_h * s_p / n
    return float(np.clip(cov / np.sqrt(var_h * var_p), -1.0, 1.0))


@lru_cache(maxsize=8)
def _first_step_signatures(weight_bits: int, input_bits: int, signed_weights: bool,
                           signed_inputs: bool, register_bits: int) -> np.ndarray:
    """Per-candidate leakage signature over the whole input domain at tau=0.

    Two candidates with identical rows produce identical hypothetical
    leakage for every possible input, hence identical correlations: the
    first-multiplication aliasing classes.
    """
    config = ArrayConfig(n_pe=1, weight_bits=weight_bits, input_bits=input_bits,
                         register_bits=register_bits, signed_weights=signed_weights,
                         signed_inputs=signed_inputs)
    xlo, xhi = config.input_range
    xs = np.arange(xlo, xhi + 1, dtype=np.int64)
    digits = np.arange(1 << weight_bits, dtype=np.int64)
    w = to_patterns(digits_to_values(digits, config), register_bits)
    x = to_patterns(xs, register_bits)
    mask = np.uint64((1 << register_bits) - 1)
    return popcount((w[:, None] * x[None, :]) & mask)


def first_step_alias_classes(config: ArrayConfig) -> np.ndarray:
    """Alias class id per candidate digit at tau=0 (same id = same leakage)."""
    sig = _first_step_signatures(config.weight_bits, config.input_bits,
                                 config.signed_weights, config.signed_inputs,
                                 config.register_bits)
    _, class_ids = np.unique(sig, axis=0, return_inverse=True)
    return class_ids


@dataclass(eq=False)
class CorrelationResult:
    """Ranked hypothesis correlations from one attack.

    ``coefficients`` holds |rho| per candidate (0 where undefined, see
    ``defined``). ``correct_index`` is the targeted PE's own candidate;
    ``is_correct`` flags every PE's true candidate, since with n_pe > 1
    any of them is a successful recovery. ``is_alias`` flags candidates
    indistinguishable from a correct one at tau = 0. ``best_incorrect``
    is the highest coefficient outside correct and alias flags; the
    ``argmax_set`` lists every candidate tied at the maximum.
    """

    space: HypothesisSpace
    coefficients: np.ndarray
    defined: np.ndarray
    is_correct: np.ndarray
    is_alias: np.ndarray
    correct_index: int | None
    best_incorrect: float
    argmax_set: np.ndarray
    n_traces_used: int
    config: ArrayConfig = None

    @property
    def n_candidates(self) -> int:
        return self.coefficients.shape[0]

    def candidate(self, index: int) -> tuple[int, ...]:
        return candidate_weights(int(index), self.space.k_weights, self.config)

    @property
    def rho_correct(self) -> float | None:
        if self.correct_index is None:
            return None
        return float(self.coefficients[self.correct_index])

    @property
    def recovered(self) -> bool | None:
        """Did the argmax set land on a correct candidate or its alias?"""
        if self.correct_index is None:
            return None
        flagged = self.is_correct | self.is_alias
        return bool(flagged[self.argmax_set].any())


def attack(run: SimulationRun, space: HypothesisSpace,
           sample_column: int | None = None) -> CorrelationResult:
    """Rank all candidates of ``space`` against one trace column.

    The column defaults to the step index tau for simulated runs or to
    the run's window mapping for imports. Candidates whose hypothetical
    leakage is constant get coefficient 0 with ``defined`` cleared and
    rank below every defined candidate.
    """
    config = run.config
    space.check_capacity(config)
    col = run.sample_column(space.tau) if sample_column is None else sample_column
    if not 0 <= col < run.n_samples:
        raise ValueError(f"sample column {col} outside [0, {run.n_samples})")

    p = run.traces[:, col].astype(np.float64)
    n_traces = p.shape[0]
    pc = p - p.mean()
    p_norm = float(np.sqrt((pc * pc).sum()))
    if p_norm == 0.0:
        raise UndefinedCorrelationError("trace column is constant; nothing to rank")

    n = space.size(config)
    coeffs = np.zeros(n, dtype=np.float64)
    defined = np.zeros(n, dtype=bool)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        h = hypothesize_leakage(space, run.inputs, config, start, stop).astype(np.float64)
        hc = h - h.mean(axis=1, keepdims=True)
        h_norm = np.sqrt((hc * hc).sum(axis=1))
        ok = h_norm > 0
        dots = hc @ pc
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.abs(dots / (h_norm * p_norm))
        coeffs[start:stop] = np.where(ok, np.clip(c, 0.0, 1.0), 0.0)
        defined[start:stop] = ok

    is_correct = np.zeros(n, dtype=bool)
    is_alias = np.zeros(n, dtype=bool)
    correct_index = None
    if run.weights is not None:
        W = run.weights
        if space.mode == "prefix":
            step_digits = values_to_digits(W[:, space.tau], config)
            is_correct[step_digits] = True
            correct_index = int(step_digits[0])
        else:
            idxs = [candidate_index(W[pe, :space.tau + 1], config)
                    for pe in range(W.shape[0])]
            is_correct[np.asarray(idxs, dtype=np.int64)] = True
            correct_index = idxs[0]
        if space.tau == 0:
            classes = first_step_alias_classes(config)
            correct_classes = np.unique(classes[is_correct])
            is_alias = np.isin(classes, correct_classes) & ~is_correct

    excluded = is_correct | is_alias
    if bool((~excluded).any()):
        best_incorrect = float(coeffs[~excluded].max())
    else:
        best_incorrect = 0.0
    cmax = coeffs.max()
    argmax_set = np.flatnonzero(coeffs == cmax)
    return CorrelationResult(space=space, coefficients=coeffs, defined=defined,
                             is_correct=is_correct, is_alias=is_alias,
                             correct_index=correct_index,
                             best_incorrect=best_incorrect, argmax_set=argmax_set,
                             n_traces_used=n_traces, config=config)


def trace_count_progression(run: SimulationRun, space: HypothesisSpace,
                            checkpoints, candidate: int | None = None,
                            sample_column: int | None = None) -> list[tuple[int, float | None]]:
    """|rho| of the correct (or given) candidate on growing trace prefixes.

    Returns (checkpoint, value) pairs; the value is None where the
    correlation is undefined on that prefix. The final full-length
    checkpoint equals the corresponding `attack` coefficient exactly.
    """
    checkpoints = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    if checkpoints and checkpoints[-1] > run.n_traces:
        raise ValueError(
            f"checkpoint {checkpoints[-1]} exceeds available traces {run.n_traces}")
    if any(c < 2 for c in checkpoints):
        raise ValueError("checkpoints must be >= 2")

    if candidate is None:
        if run.weights is None:
            raise ValueError("run has unknown weights; pass an explicit candidate")
        if space.mode == "prefix":
            candidate = int(values_to_digits(run.weights[0, space.tau], run.config))
        else:
            candidate = candidate_index(run.weights[0, :space.tau + 1], run.config)

    out = []
    for c in checkpoints:
        # attack the prefix through the normal engine, so the full-length
        # checkpoint is bit-identical to attack() on the whole run
        prefix_run = SimulationRun(weights=run.weights, inputs=run.inputs[:c],
                                   traces=run.traces[:c], seed=run.seed,
                                   config=run.config, window=run.window)
        try:
            res = attack(prefix_run, space, sample_column=sample_column)
        except UndefinedCorrelationError:
            out.append((c, None))
            continue
        if res.defined[candidate]:
            out.append((c, float(res.coefficients[candidate])))
        else:
            out.append((c, None))
    return out


@dataclass(eq=False)
class SuccessCurves:
    """Mean correct-hypothesis and best-incorrect correlations per (n_pe, tau)."""

    n_pe_values: np.ndarray              # [P]
    taus: np.ndarray                     # [T]
    rho_correct: np.ndarray              # [P, T] mean |rho| of the target's candidate
    best_incorrect: np.ndarray           # [P, T] aggregated incorrect level
    rho_correct_runs: np.ndarray         # [P, T, R] per-run samples (nan = undefined)
    best_incorrect_runs: np.ndarray      # [P, T, R]
    aggregation: str = "max_then_mean"

    def tau_index(self, tau: int) -> int:
        idx = np.flatnonzero(self.taus == tau)
        if idx.size == 0:
            raise KeyError(f"tau={tau} not in curves (taus={self.taus.tolist()})")
        return int(idx[0])


def nanmean_quiet(a: np.ndarray, axis: int) -> np.ndarray:
    """nanmean that yields nan (not a warning) on all-nan slices."""
    mask = ~np.isnan(a)
    count = mask.sum(axis=axis)
    total = np.where(mask, a, 0.0).sum(axis=axis)
    return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def success_curve(campaigns, taus, aggregation: str = "max_then_mean") -> SuccessCurves:
    """Attack every run of per-n_pe campaigns and average the outcomes.

    ``campaigns`` is a sequence of TraceCampaign objects with distinct
    n_pe, all sharing dimensions. Each run is attacked once per tau in
    known-prefix mode (the target PE's true prefix). ``max_then_mean``
    (default) averages each run's best incorrect coefficient;
    ``mean_then_max`` first averages each candidate over the runs where it
    is incorrect, then takes the best candidate mean.
    """
    if aggregation not in ("max_then_mean", "mean_then_max"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    campaigns = sorted(campaigns, key=lambda c: c.config.n_pe)
    taus = np.asarray(sorted(taus), dtype=np.int64)
    n_pe_values = np.asarray([c.config.n_pe for c in campaigns], dtype=np.int64)
    if len(set(n_pe_values.tolist())) != len(campaigns):
        raise ValueError("campaigns must have distinct n_pe values")
    n_runs = max(c.n_runs for c in campaigns)
    P, T = len(campaigns), len(taus)
    rc = np.full((P, T, n_runs), np.nan)
    bi = np.full((P, T, n_runs), np.nan)
    n_cand = campaigns[0].runs[0].config.weight_bits
    n_cand = 1 << n_cand
    csum = np.zeros((P, T, n_cand))
    ccnt = np.zeros((P, T, n_cand))
    for i, camp in enumerate(campaigns):
        for r, run in enumerate(camp.runs):
            for j, tau in enumerate(taus):
                space = HypothesisSpace.known_prefix(run.weights[0, :tau])
                res = attack(run, space)
                if res.defined[res.correct_index]:
                    rc[i, j, r] = res.coefficients[res.correct_index]
                    bi[i, j, r] = res.best_incorrect
                    keep = ~(res.is_correct | res.is_alias)
                    csum[i, j, keep] += res.coefficients[keep]
                    ccnt[i, j, keep] += 1
    if aggregation == "max_then_mean":
        best = nanmean_quiet(bi, axis=2)
    else:
        with np.errstate(invalid="ignore"):
            cand_mean = np.where(ccnt > 0, csum / np.maximum(ccnt, 1), -np.inf)
        best = cand_mean.max(axis=2)
    return SuccessCurves(
        n_pe_values=n_pe_values, taus=taus,
        rho_correct=nanmean_quiet(rc, axis=2),
        best_incorrect=best,
        rho_correct_runs=rc, best_incorrect_runs=bi,
        aggregation=aggregation)
