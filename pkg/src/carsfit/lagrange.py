"""Tensor-product Lagrange interpolation on a full regular parameter grid.

This is the classical library interpolator the kernel surrogate is compared
against. Each axis uses the barycentric form of the Lagrange basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLibraryError, DomainError
from .fitter import BatchResult, FitConfig, fit_batch
from .library import SpectralLibrary
from .oracle import WavenumberGrid


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_basis(nodes: np.ndarray, weights: np.ndarray, x: float) -> np.ndarray:
    """Values of all Lagrange cardinal polynomials of ``nodes`` at ``x``."""
    d = x - nodes
    hit = np.flatnonzero(d == 0.0)
    if hit.size:
        out = np.zeros_like(nodes)
        out[hit[0]] = 1.0
        return out
    t = weights / d
    return t / t.sum()


@dataclass
class GridInterpolant:
    nodes: list  # per-axis strictly increasing node values
    values: np.ndarray  # shape (*levels, M)
    grid: WavenumberGrid | None = None

    def __post_init__(self):
        self.nodes = [np.asarray(n, dtype=float) for n in self.nodes]
        for a, n in enumerate(self.nodes):
            if n.ndim != 1 or n.size < 2 or np.any(np.diff(n) <= 0):
                raise DomainError(f"axis {a}: nodes must be >= 2 strictly increasing values")
        if self.values.shape[:-1] != self.levels:
            raise DomainError(f"values shape {self.values.shape} does not match levels {self.levels}")
        self.weights = [barycentric_weights(n) for n in self.nodes]
        self.lower = np.array([n[0] for n in self.nodes])
        self.upper = np.array([n[-1] for n in self.nodes])

    @property
    def levels(self) -> tuple:
        return tuple(n.size for n in self.nodes)

    @property
    def p(self) -> int:
        return len(self.nodes)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise DomainError(f"expected {self.p} coordinates, got shape {x.shape}")
        out = self.values
        for nodes, w, xa in zip(self.nodes, self.weights, x):
            out = np.tensordot(lagrange_basis(nodes, w, xa), out, axes=(0, 0))
        return out

    def jacobian(self, x, rel_step: float = 1e-6) -> np.ndarray:
        """Central finite differences, step ``rel_step`` times each axis' node span."""
        x = np.asarray(x, dtype=float)
        cols = []
        for a in range(self.p):
            h = rel_step * (self.upper[a] - self.lower[a])
            e = np.zeros(self.p)
            e[a] = h
            cols.append((self.predict(x + e) - self.predict(x - e)) / (2 * h))
        return np.column_stack(cols)

    def predict_and_jacobian(self, x):
        return self.predict(x), self.jacobian(x)

    def is_extrapolation(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.any(x < self.lower) or np.any(x > self.upper))


def build_lagrange(lib: SpectralLibrary, check_provenance: bool = True) -> GridInterpolant:
    """Arrange a gridded library into a tensor interpolant.

    Raises :class:`DegenerateLibraryError` naming the first missing or
    duplicated grid point when the library is not a complete tensor grid.
    """
    if check_provenance and lib.provenance.get("sampling") != "grid":
        raise DomainError(f"library provenance is {lib.provenance.get('sampling')!r}, a 'grid' library is required")
    nodes = [np.unique(row) for row in lib.X]
    levels = tuple(n.size for n in nodes)
    if any(k < 2 for k in levels):
        raise DegenerateLibraryError(f"every axis needs >= 2 distinct values, got levels {levels}")
    index = np.column_stack([np.searchsorted(n, row) for n, row in zip(nodes, lib.X)])
    flat = np.ravel_multi_index(index.T, levels)
    counts = np.bincount(flat, minlength=int(np.prod(levels)))
    if np.any(counts > 1):
        k = int(np.flatnonzero(counts > 1)[0])
        point = [float(n[i]) for n, i in zip(nodes, np.unravel_index(k, levels))]
        raise DegenerateLibraryError(f"grid point {point} appears {counts[k]} times")
    if np.any(counts == 0):
        k = int(np.flatnonzero(counts == 0)[0])
        point = [float(n[i]) for n, i in zip(nodes, np.unravel_index(k, levels))]
        raise DegenerateLibraryError(f"grid point {point} missing; library of {lib.n} is not a full {levels} grid")
    values = np.empty((int(np.prod(levels)), lib.m))
    values[flat] = lib.R.T
    return GridInterpolant(nodes, values.reshape(*levels, lib.m), lib.grid)


def lagrange_predict(interp: GridInterpolant, x) -> np.ndarray:
    return interp.predict(x)


def fit_with_lagrange(spectra, interp: GridInterpolant, config: FitConfig | None = None, truths=None) -> BatchResult:
    """Same batch contract as :func:`carsfit.fitter.fit_batch`, using the grid interpolant."""
    return fit_batch(spectra, interp, config, truths)
