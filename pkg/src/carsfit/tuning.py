"""Cross-validated choice of the kernel bandwidth ``gamma``."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLibraryError, DomainError, IllConditionedError
from .kernel import MAX_CONDITION, SurrogateModel, train
from .library import SpectralLibrary


def default_gamma_grid() -> np.ndarray:
    return np.logspace(-4, 2, 25)


@dataclass
class CvConfig:
    gamma_grid: np.ndarray = field(default_factory=default_gamma_grid)
    iterations: int = 5
    train_fraction: float = 0.75
    rng_seed: int = 0
    metric: str = "mae"
    aggregate: str = "mean"

    def __post_init__(self):
        grid = np.sort(np.atleast_1d(np.asarray(self.gamma_grid, dtype=float)))
        if grid.size < 1 or not np.all(grid > 0):
            raise DomainError("gamma grid must hold at least one positive value")
        self.gamma_grid = grid
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise DomainError("train_fraction must lie in (0, 1)")
        if self.metric not in ("mae", "mse"):
            raise DomainError(f"unknown metric {self.metric!r}")
        if self.aggregate not in ("mean", "median"):
            raise DomainError(f"unknown aggregate {self.aggregate!r}")

    def split_seeds(self) -> list[int]:
        """One seed per iteration, shared by every gamma candidate."""
        children = np.random.SeedSequence(self.rng_seed).spawn(self.iterations)
        return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class CvReport:
    gammas: np.ndarray
    split_errors: np.ndarray  # len(gammas) x iterations
    errors: np.ndarray
    gamma_star: float
    aggregate: str = "mean"

    def to_dict(self) -> dict:
        return {
            "gammas": self.gammas.tolist(),
            "split_errors": [[_jsonable(v) for v in row] for row in self.split_errors],
            "errors": [_jsonable(v) for v in self.errors],
            "gamma_star": self.gamma_star,
            "aggregate": self.aggregate,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "error"])
            for g, e in zip(self.gammas, self.errors):
                w.writerow(["%.17g" % g, "inf" if math.isinf(e) else "%.17g" % e])


def _jsonable(v: float):
    return None if not math.isfinite(v) else float(v)


def split_indices(n: int, train_fraction: float, split_seed) -> tuple[np.ndarray, np.ndarray]:
    """Random partition of ``range(n)`` into ``ceil(train_fraction * n)`` train and the rest test."""
    perm = np.random.default_rng(split_seed).permutation(n)
    n_train = math.ceil(train_fraction * n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def spectral_error(predicted: np.ndarray, truth: np.ndarray, metric: str = "mae") -> float:
    """Mean over spectra of the per-wavenumber mean absolute (or squared) difference."""
    diff = predicted - truth
    if metric == "mae":
        return float(np.mean(np.abs(diff)))
    return float(np.mean(diff**2))


def cv_error(lib: SpectralLibrary, gamma: float, split_seed=None, *, train_fraction: float = 0.75,
             metric: str = "mae", train_idx=None, test_idx=None, max_condition: float = MAX_CONDITION) -> float:
    """Held-out spectral error of a model trained on one random split.

    Explicit ``train_idx``/``test_idx`` override the random split. A split on
    which the kernel system cannot be solved scores ``inf``.
    """
    if train_idx is None or test_idx is None:
        train_idx, test_idx = split_indices(lib.n, train_fraction, split_seed)
    train_idx, test_idx = np.asarray(train_idx), np.asarray(test_idx)
    if len(test_idx) == 0 or len(train_idx) < 2:
        raise DomainError(f"library of {lib.n} too small to split (train {len(train_idx)}, test {len(test_idx)})")
    try:
        model = train(lib.subset(train_idx), gamma, max_condition=max_condition)
    except (IllConditionedError, DegenerateLibraryError):
        return math.inf
    pred = model.predict_many(lib.X[:, test_idx].T)
    return spectral_error(pred, lib.R[:, test_idx].T, metric)


def select_gamma(lib: SpectralLibrary, cfg: CvConfig | None = None) -> CvReport:
    """Grid search over ``cfg.gamma_grid``; ties go to the smaller gamma."""
    cfg = cfg or CvConfig()
    seeds = cfg.split_seeds()
    splits = [split_indices(lib.n, cfg.train_fraction, s) for s in seeds]
    errs = np.empty((cfg.gamma_grid.size, cfg.iterations))
    for i, gamma in enumerate(cfg.gamma_grid):
        for j, (tr, te) in enumerate(splits):
            errs[i, j] = cv_error(lib, gamma, metric=cfg.metric, train_idx=tr, test_idx=te)
    with np.errstate(invalid="ignore"):
        agg = errs.mean(axis=1) if cfg.aggregate == "mean" else np.median(errs, axis=1)
    if not np.any(np.isfinite(agg)):
        raise DegenerateLibraryError("every gamma candidate failed; library too small or degenerate")
    best = int(np.argmin(agg))  # first minimum = smallest gamma, grid is sorted
    return CvReport(cfg.gamma_grid.copy(), errs, agg, float(cfg.gamma_grid[best]), cfg.aggregate)


def fit_final(lib: SpectralLibrary, gamma_star: float, **train_kwargs) -> SurrogateModel:
    """Train on the whole library at the chosen bandwidth."""
    if not gamma_star > 0:
        raise DomainError(f"gamma_star must be positive, got {gamma_star}")
    return train(lib, gamma_star, **train_kwargs)
