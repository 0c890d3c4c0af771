"""Experiment drivers: library-size sweep, kernel-vs-grid comparison, noise sweep.

Each study returns tidy rows (one per fit per condition) ready for box plots,
plus a separate list of wall-clock rows so that the error table stays
byte-reproducible.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fitter import FitConfig, fit_batch
from .kernel import SurrogateModel
from .lagrange import build_lagrange
from .library import SpectralLibrary, build_library, grid_parameters, sample_physical_parameters
from .oracle import DEFAULT_BOXES, PARAM_NAMES, OracleConfig, WavenumberGrid, add_noise
from .tuning import CvConfig, CvReport, fit_final, select_gamma

log = logging.getLogger(__name__)


@dataclass
class StudyConfig:
    n_validation: int = 250
    snr: float = 50.0
    seed: int = 0
    m_points: int = 512
    starts: int = 5
    cv: CvConfig = field(default_factory=CvConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    boxes: np.ndarray = field(default_factory=lambda: DEFAULT_BOXES.copy())

    @property
    def grid(self) -> WavenumberGrid:
        return WavenumberGrid.uniform(self.m_points)

    def fit_config(self) -> FitConfig:
        return FitConfig(starts=self.starts, seed=self.seed + 4, bounds=self.boxes)

    # one stream per role so that changing one knob leaves the others alone
    @property
    def library_seed(self) -> int:
        return self.seed

    @property
    def validation_seed(self) -> int:
        return self.seed + 1

    @property
    def noise_seed(self) -> int:
        return self.seed + 2


def random_library(n: int, cfg: StudyConfig) -> SpectralLibrary:
    params = sample_physical_parameters(n, cfg.boxes, cfg.library_seed)
    prov = {"sampling": "random", "seed": cfg.library_seed, "n": n}
    return build_library(params, cfg.grid, cfg.oracle, cfg.boxes, prov)


def grid_library(levels, cfg: StudyConfig) -> SpectralLibrary:
    params = grid_parameters(levels, cfg.boxes)
    prov = {"sampling": "grid", "levels": list(levels)}
    return build_library(params, cfg.grid, cfg.oracle, cfg.boxes, prov)


def validation_set(cfg: StudyConfig) -> SpectralLibrary:
    params = sample_physical_parameters(cfg.n_validation, cfg.boxes, cfg.validation_seed)
    prov = {"sampling": "random", "seed": cfg.validation_seed, "n": cfg.n_validation, "role": "validation"}
    return build_library(params, cfg.grid, cfg.oracle, cfg.boxes, prov)


def noisy_spectra(clean: np.ndarray, snr: float, seed: int) -> np.ndarray:
    """Add noise to each row of ``clean`` (K x M) with an independent child seed per row."""
    children = np.random.SeedSequence(seed).spawn(len(clean))
    return np.array([add_noise(row, snr, child) for row, child in zip(clean, children)])


def tuned_model(lib: SpectralLibrary, cv: CvConfig) -> tuple[SurrogateModel, CvReport]:
    report = select_gamma(lib, cv)
    return fit_final(lib, report.gamma_star), report


def _rows(condition: dict, truths, batch) -> tuple[list, list]:
    rows, timing = [], []
    for i, (truth, res) in enumerate(zip(truths, batch.results)):
        row = dict(condition, index=i)
        for name, t, e in zip(PARAM_NAMES, truth, res.x_star):
            row[f"true_{name}"] = t
            row[f"est_{name}"] = e
            row[f"abserr_{name}"] = abs(e - t)
        row.update(residual=res.residual, iterations=res.iterations, converged=int(res.converged), error=res.error or "")
        rows.append(row)
        timing.append(dict(condition, index=i, wall_time=res.wall_time))
    return rows, timing


def _fit_condition(condition, surrogate, spectra, truths, cfg: StudyConfig):
    log.info("fitting %s", condition)
    batch = fit_batch(spectra, surrogate, cfg.fit_config(), truths)
    return _rows(condition, truths, batch)


def size_study(ns, cfg: StudyConfig) -> tuple[list, list]:
    """Kernel method error versus random-library size at fixed SNR."""
    val = validation_set(cfg)
    spectra = noisy_spectra(val.R.T, cfg.snr, cfg.noise_seed)
    rows, timing = [], []
    for n in ns:
        model, report = tuned_model(random_library(n, cfg), cfg.cv)
        cond = {"study": "size", "method": "kernel", "n": n, "snr": cfg.snr, "gamma": report.gamma_star}
        r, t = _fit_condition(cond, model, spectra, val.X.T, cfg)
        rows += r
        timing += t
    return rows, timing


def compare_study(grid_levels, random_ns, cfg: StudyConfig, n_params: int = 5) -> tuple[list, list]:
    """Lagrange on ``L**P`` grids against the kernel method on random libraries."""
    val = validation_set(cfg)
    spectra = noisy_spectra(val.R.T, cfg.snr, cfg.noise_seed)
    rows, timing = [], []
    for levels in grid_levels:
        lib = grid_library([levels] * n_params, cfg)
        cond = {"study": "compare", "method": "lagrange", "n": lib.n, "snr": cfg.snr, "gamma": ""}
        r, t = _fit_condition(cond, build_lagrange(lib), spectra, val.X.T, cfg)
        rows += r
        timing += t
    for n in random_ns:
        model, report = tuned_model(random_library(n, cfg), cfg.cv)
        cond = {"study": "compare", "method": "kernel", "n": n, "snr": cfg.snr, "gamma": report.gamma_star}
        r, t = _fit_condition(cond, model, spectra, val.X.T, cfg)
        rows += r
        timing += t
    return rows, timing


def noise_study(snrs, n: int, cfg: StudyConfig) -> tuple[list, list]:
    """One tuned model, validation spectra fitted at several SNRs."""
    val = validation_set(cfg)
    model, report = tuned_model(random_library(n, cfg), cfg.cv)
    rows, timing = [], []
    for snr in snrs:
        spectra = noisy_spectra(val.R.T, snr, cfg.noise_seed)
        cond = {"study": "noise", "method": "kernel", "n": n, "snr": snr, "gamma": report.gamma_star}
        r, t = _fit_condition(cond, model, spectra, val.X.T, cfg)
        rows += r
        timing += t
    return rows, timing


def median_errors(rows, **condition) -> np.ndarray:
    """Median absolute error per parameter over rows matching ``condition``."""
    sel = [r for r in rows if all(r[k] == v for k, v in condition.items())]
    errs = np.array([[r[f"abserr_{name}"] for name in PARAM_NAMES] for r in sel], dtype=float)
    return np.nanmedian(errs, axis=0)


def _cell(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    if isinstance(v, (np.floating,)):
        return _cell(float(v))
    return str(v)


def write_rows_csv(path, rows) -> None:
    if not rows:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("")
        return
    header = list(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row[k]) for k in header])
