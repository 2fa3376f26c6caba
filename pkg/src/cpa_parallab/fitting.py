"""Exponential decay law of the correct-hypothesis correlation.

The mean correlation of the correct weight hypothesis falls off with the
number of co-running PEs x as ``rho(x) = a * exp(-b * x) + c``. Fits use a
damped Gauss-Newton iteration with analytic partial derivatives and a
closed-form initializer that is exact on noise-free data.

Abscissa convention: x counts the PEs operating in parallel *besides* the
targeted one (x = n_pe - 1), with the measured single-PE point at x = 0.
The law's floor c is the correlation level that survives arbitrarily wide
arrays; b > 0 is required (the curve must decay).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitConvergenceError, FitDegenerateError

_MAX_ITER = 1000
_STEP_TOL = 1e-10


@dataclass(frozen=True)
class DecayFit:
    """Fitted coefficients of a * exp(-b * x) + c with residual spread.

    ``residual_sigma`` is the maximum over abscissae of the standard
    deviation between the fitted curve and the run-level correlation
    samples at that abscissa (falls back to |fit - mean| when no run
    samples are available).
    """

    a: float
    b: float
    c: float
    residual_sigma: float
    tau: int | None = None
    n_iterations: int = 0

    @property
    def params(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)


def evaluate_decay(fit, x):
    """a * exp(-b * x) + c for a DecayFit or an (a, b, c) triple."""
    a, b, c = fit.params if isinstance(fit, DecayFit) else fit
    return a * np.exp(-b * np.asarray(x, dtype=np.float64)) + c


def _initial_guess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    c0 = float(y.min())
    a0 = float(y.max() - c0)
    resid = y - c0
    usable = resid > max(1e-12, 1e-6 * a0)
    if usable.sum() >= 2:
        slope, intercept = np.polyfit(x[usable], np.log(resid[usable]), 1)
        b0 = max(-slope, 1e-3)
    else:
        b0 = 1.0
    return np.array([a0, b0, c0], dtype=np.float64)


def fit_decay(points, run_samples=None, tau: int | None = None,
              max_iter: int = _MAX_ITER) -> DecayFit:
    """Least-squares fit of the decay law to (x, mean rho) points.

    ``points`` is a sequence of (x, rho) pairs with distinct, increasing
    abscissae; at least 4 are required. ``run_samples`` optionally carries
    the per-run correlation values at each abscissa (rows matching
    ``points``, NaN for undefined runs) and feeds ``residual_sigma``.

    Raises FitDegenerateError when the ordinates are constant or the
    fitted curve is not a decay, FitConvergenceError (with the last
    iterate attached) when Gauss-Newton does not settle within
    ``max_iter`` iterations.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, rho) pairs")
    if pts.shape[0] < 4:
        raise ValueError(f"need at least 4 points to fit, got {pts.shape[0]}")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(np.diff(x) <= 0):
        raise ValueError("abscissae must be distinct and increasing")
    if float(np.ptp(y)) < 1e-12:
        raise FitDegenerateError(
            "all correlation values are equal; the decay rate is unidentifiable")

    theta = _initial_guess(x, y)

    def residuals(t):
        a, b, c = t
        return a * np.exp(np.clip(-b * x, -700, 700)) + c - y

    def jacobian(t):
        a, b, _ = t
        e = np.exp(np.clip(-b * x, -700, 700))
        return np.stack([e, -a * x * e, np.ones_like(x)], axis=1)

    sse = float((residuals(theta) ** 2).sum())
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        r = residuals(theta)
        J = jacobian(theta)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        # damping: halve the step until the SSE does not increase
        scale = 1.0
        for _ in range(40):
            trial = theta + scale * step
            with np.errstate(over="ignore"):
                trial_sse = float((residuals(trial) ** 2).sum())
            if np.isfinite(trial_sse) and trial_sse <= sse:
                break
            scale *= 0.5
        else:
            break
        theta = theta + scale * step
        sse = trial_sse
        if np.linalg.norm(scale * step) <= _STEP_TOL * (1.0 + np.linalg.norm(theta)):
            break
    else:
        raise FitConvergenceError(
            f"decay fit did not converge within {max_iter} iterations",
            last_iterate=tuple(float(v) for v in theta))

    a, b, c = (float(v) for v in theta)
    if b <= 0:
        raise FitDegenerateError(
            f"fitted rate b={b:.4g} is not a decay; the data does not fall off")

    fitted = evaluate_decay((a, b, c), x)
    if run_samples is not None:
        samples = np.asarray(run_samples, dtype=np.float64)
        if samples.shape[0] != x.shape[0]:
            raise ValueError("run_samples rows must match the points")
        dev = samples - fitted[:, None]
        valid = ~np.isnan(dev)
        per_point = np.sqrt((np.where(valid, dev, 0.0) ** 2).sum(axis=1)
                            / np.maximum(valid.sum(axis=1), 1))
        residual_sigma = float(per_point.max())
    else:
        residual_sigma = float(np.abs(fitted - y).max())
    return DecayFit(a=a, b=b, c=c, residual_sigma=residual_sigma, tau=tau,
                    n_iterations=n_iter)


def fit_all_taus(curves) -> dict[int, DecayFit]:
    """Fit the decay law for every step of a success-curve set.

    Accepts a `SuccessCurves` or a `SweepResult`. Points use the
    co-running-PE abscissa x = n_pe - 1 over x >= 1; the single-PE point
    (x = 0, rho exactly 1 by model identity) is not part of the decay
    regime and is excluded, matching the reported fits whose residual
    spreads are far smaller than their distance to 1 at x = 0.
    """
    if hasattr(curves, "curves"):
        curves = curves.curves
    fits = {}
    x_all = curves.n_pe_values.astype(np.float64) - 1.0
    for j, tau in enumerate(curves.taus):
        y = curves.rho_correct[:, j]
        ok = np.isfinite(y) & (x_all >= 1.0)
        pts = np.stack([x_all[ok], y[ok]], axis=1)
        fits[int(tau)] = fit_decay(
            pts, run_samples=curves.rho_correct_runs[ok, j, :], tau=int(tau))
    return fits
