"""Recover flow parameters from a log spectrum by constrained least squares.

The fit minimizes ``||s - r_hat(x)||^2`` over the parameter box with the
mole fractions constrained to sum to one. Any surrogate exposing
``predict(x)`` and ``predict_and_jacobian(x)`` can be fitted.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import DomainError
from .library import sample_physical_parameters
from .oracle import DEFAULT_BOXES, MOLE_FRACTION_SLICE, PARAM_NAMES, check_boxes

SUM_TOL = 1e-8


@dataclass
class FitConfig:
    starts: int = 5
    seed: int = 0
    bounds: np.ndarray = field(default_factory=lambda: DEFAULT_BOXES.copy())
    ftol: float = 1e-12
    maxiter: int = 300
    polish: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.starts < 1:
            raise DomainError("starts must be >= 1")
        self.bounds = check_boxes(self.bounds)


@dataclass
class FitResult:
    x_star: np.ndarray
    residual: float
    iterations: int
    converged: bool
    start_index: int
    wall_time: float
    start_residuals: list = field(default_factory=list)
    error: str | None = None


@dataclass
class FitProblem:
    target: np.ndarray
    model: object
    config: FitConfig = field(default_factory=FitConfig)


def project_to_simplex_box(x, boxes) -> np.ndarray:
    """Euclidean projection of the mole fractions onto ``{sum = 1} & box``; temperature is clipped."""
    boxes = check_boxes(boxes)
    x = np.array(x, dtype=float)
    x[0] = np.clip(x[0], *boxes[0])
    c = x[MOLE_FRACTION_SLICE]
    lo, hi = boxes[MOLE_FRACTION_SLICE, 0], boxes[MOLE_FRACTION_SLICE, 1]
    if lo.sum() > 1 + SUM_TOL or hi.sum() < 1 - SUM_TOL:
        raise DomainError(f"mole-fraction boxes {boxes[MOLE_FRACTION_SLICE].tolist()} cannot sum to one")

    def excess(lam):
        return np.clip(c - lam, lo, hi).sum() - 1.0

    a, b = float(np.min(c - hi)), float(np.max(c - lo))
    if excess(a) * excess(b) > 0:
        lam = a if abs(excess(a)) < abs(excess(b)) else b
    else:
        lam = brentq(excess, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    x[MOLE_FRACTION_SLICE] = np.clip(c - lam, lo, hi)
    return x


def initial_points(bounds=DEFAULT_BOXES, starts: int = 5, rng_seed=0) -> np.ndarray:
    """Box centre projected onto the simplex, then ``starts - 1`` random physical points."""
    if starts < 1:
        raise DomainError("starts must be >= 1")
    bounds = check_boxes(bounds)
    centre = project_to_simplex_box(bounds.mean(axis=1), bounds)
    if starts == 1:
        return centre[None, :]
    return np.vstack([centre, sample_physical_parameters(starts - 1, bounds, rng_seed)])


class _Objective:
    """Least-squares objective in unit-box coordinates ``x = lo + scale * u``."""

    def __init__(self, model, target, bounds):
        self.model = model
        self.target = np.asarray(target, dtype=float)
        self.lo = bounds[:, 0]
        width = bounds[:, 1] - bounds[:, 0]
        self.scale = np.where(width > 0, width, 1.0)
        self.u_hi = width / self.scale
        self.eq_grad = np.zeros(len(self.lo))
        self.eq_grad[MOLE_FRACTION_SLICE] = self.scale[MOLE_FRACTION_SLICE]
        self.eq_offset = self.lo[MOLE_FRACTION_SLICE].sum() - 1.0

    def to_x(self, u):
        return self.lo + self.scale * u

    def to_u(self, x):
        return (np.asarray(x) - self.lo) / self.scale

    def value_and_grad(self, u):
        r, J = self.model.predict_and_jacobian(self.to_x(u))
        res = r - self.target
        return float(res @ res), 2.0 * (J.T @ res) * self.scale

    def value(self, x) -> float:
        res = self.model.predict(x) - self.target
        return float(res @ res)

    def slsqp(self, u0, cfg: FitConfig):
        cons = {"type": "eq", "fun": lambda u: self.eq_grad @ u + self.eq_offset, "jac": lambda u: self.eq_grad}
        return minimize(
            self.value_and_grad,
            u0,
            jac=True,
            method="SLSQP",
            bounds=list(zip(np.zeros_like(self.u_hi), self.u_hi)),
            constraints=[cons],
            options={"ftol": cfg.ftol, "maxiter": cfg.maxiter},
        )

    def gauss_newton(self, x, bounds, max_iter: int = 30) -> tuple[np.ndarray, int]:
        """Feasible Gauss-Newton steps inside the equality constraint's null space."""
        p = len(x)
        fr = np.arange(p)[MOLE_FRACTION_SLICE]
        # null space of the sum constraint: temperature, and differences against the last fraction
        Z = np.zeros((p, p - 1))
        Z[0, 0] = 1.0
        for k, i in enumerate(fr[:-1], start=1):
            Z[i, k] = 1.0
            Z[fr[-1], k] = -1.0
        Z *= self.scale[:, None]
        f = self.value(x)
        it = 0
        for it in range(1, max_iter + 1):
            r, J = self.model.predict_and_jacobian(x)
            res = r - self.target
            step = np.linalg.lstsq(J @ Z, -res, rcond=None)[0]
            dx = Z @ step
            alpha = _max_feasible_step(x, dx, bounds)
            if alpha <= 0:
                break
            improved = False
            for _ in range(20):
                x_new = np.clip(x + alpha * dx, bounds[:, 0], bounds[:, 1])
                f_new = self.value(x_new)
                if f_new < f:
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
            converged = f - f_new <= 1e-15 * max(f, 1e-300) or np.max(np.abs(x_new - x) / self.scale) < 1e-14
            x, f = x_new, f_new
            if converged:
                break
        return x, it


def _max_feasible_step(x, dx, bounds) -> float:
    alpha = 1.0
    for xi, di, (lo, hi) in zip(x, dx, bounds):
        if di > 0 and xi + di > hi:
            alpha = min(alpha, (hi - xi) / di)
        elif di < 0 and xi + di < lo:
            alpha = min(alpha, (lo - xi) / di)
    return max(alpha, 0.0)


def fit_spectrum(problem: FitProblem) -> FitResult:
    """Multi-start constrained fit; returns the lowest-residual feasible optimum."""
    cfg = problem.config
    bounds = cfg.bounds
    target = np.asarray(problem.target, dtype=float)
    t0 = time.perf_counter()
    obj = _Objective(problem.model, target, bounds)
    starts = initial_points(bounds, cfg.starts, cfg.seed)
    best = None
    start_residuals = []
    for i, x0 in enumerate(starts):
        try:
            res = obj.slsqp(obj.to_u(x0), cfg)
            x = project_to_simplex_box(obj.to_x(res.x), bounds)
            iters = int(res.nit)
            ok = bool(res.success)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            x, iters, ok = x0, 0, False
        if cfg.polish:
            x, extra = obj.gauss_newton(x, bounds)
            x = project_to_simplex_box(x, bounds)
            iters += extra
        f = obj.value(x)
        start_residuals.append(f)
        if best is None or f < best[0]:
            best = (f, x, iters, ok, i)
    f, x, iters, ok, idx = best
    return FitResult(x, f, iters, ok, idx, time.perf_counter() - t0, start_residuals)


def fit(target, model, config: FitConfig | None = None) -> FitResult:
    return fit_spectrum(FitProblem(target, model, config or FitConfig()))


def _failed(p: int, exc: Exception) -> FitResult:
    return FitResult(np.full(p, np.nan), float("nan"), 0, False, -1, 0.0, [], f"{type(exc).__name__}: {exc}")


@dataclass
class BatchResult:
    results: list
    summary: dict


def fit_batch(spectra, model, config: FitConfig | None = None, truths=None) -> BatchResult:
    """Fit every row of ``spectra``; per-item failures are recorded, not raised.

    Results keep input order whatever ``config.workers`` is.
    """
    config = config or FitConfig()
    spectra = [np.asarray(s, dtype=float) for s in spectra]
    p = config.bounds.shape[0]

    def one(s):
        try:
            return fit_spectrum(FitProblem(s, model, config))
        except Exception as exc:  # noqa: BLE001 -- batch keeps going, error lands in the result
            return _failed(p, exc)

    if config.workers > 1 and len(spectra) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(one, spectra))
    else:
        results = [one(s) for s in spectra]
    return BatchResult(results, batch_summary(results, truths))


def batch_summary(results, truths=None, names=PARAM_NAMES) -> dict:
    if not results:
        return {}
    times = np.array([r.wall_time for r in results])
    summary = {
        "n": len(results),
        "n_failed": sum(r.error is not None for r in results),
        "n_converged": sum(bool(r.converged) for r in results),
        "time_median": float(np.median(times)),
        "time_q1": float(np.percentile(times, 25)),
        "time_q3": float(np.percentile(times, 75)),
        "time_total": float(times.sum()),
    }
    if truths is not None:
        summary["errors"] = error_summary(results, truths, names)
    return summary


def absolute_errors(results, truths) -> np.ndarray:
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    if len(results) != len(truths):
        raise DomainError(f"{len(results)} results but {len(truths)} truths")
    est = np.array([r.x_star if isinstance(r, FitResult) else r for r in results], dtype=float).reshape(truths.shape)
    return np.abs(est - truths)


def box_stats(values) -> dict:
    """Median, linear-interpolated quartiles, 1.5 IQR whiskers and outliers."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"median": float("nan"), "q1": float("nan"), "q3": float("nan"), "iqr": float("nan"),
                "whisker_low": float("nan"), "whisker_high": float("nan"), "outliers": []}
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    outliers = v[(v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)]
    return {
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(iqr),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": sorted(float(o) for o in outliers),
    }


def error_summary(results, truths, names=PARAM_NAMES) -> dict:
    """Per-parameter box-plot statistics of absolute fit errors."""
    if len(results) == 0 and len(truths) == 0:
        return {}
    errs = absolute_errors(results, truths)
    return {name: box_stats(errs[:, j]) for j, name in enumerate(names)}


def write_results_csv(path, results, names=PARAM_NAMES) -> None:
    """Deterministic per-spectrum results (no wall-clock columns)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *names, "residual", "iterations", "converged", "start_index", "error"])
        for i, r in enumerate(results):
            w.writerow([i, *("%.17g" % v for v in r.x_star), "%.17g" % r.residual, r.iterations,
                        int(r.converged), r.start_index, r.error or ""])


def write_timings_csv(path, results) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "wall_time"])
        for i, r in enumerate(results):
            w.writerow([i, "%.6f" % r.wall_time])
