"""Gaussian-kernel interpolating surrogate.

The surrogate is ``r_hat(x) = W k(x)`` with ``k_n(x) = exp(-gamma ||z(x) - z_n||^2)``
where ``z`` are z-scored parameters. ``W`` is fixed by requiring exact
reproduction of the library, ``W K = R``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.lapack import dpocon
from scipy.spatial.distance import cdist

from .errors import DegenerateLibraryError, DomainError, FormatError, IllConditionedError, VersionError
from .library import SpectralLibrary, find_duplicates
from .oracle import WavenumberGrid

MODEL_SCHEMA = 1
MAX_CONDITION = 1e12


def kernel(x, y, gamma: float) -> float:
    """Gaussian kernel ``exp(-gamma ||x - y||^2)``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-gamma * np.dot(diff, diff)))


def squared_distances(x, X, cache=None) -> np.ndarray:
    """``||x - X[:, n]||^2`` for every column via ``x.x - 2 X^T x + diag(X^T X)``.

    ``cache`` is the precomputed column norms ``diag(X^T X)``. Negative values
    from cancellation are clamped to zero.
    """
    x = np.asarray(x, dtype=float)
    X = np.asarray(X, dtype=float)
    if cache is None:
        cache = np.einsum("ij,ij->j", X, X)
    d = x @ x - 2.0 * (x @ X) + cache
    return np.maximum(d, 0.0, out=d)


def pairwise_squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Direct ``||A[:, i] - B[:, j]||^2`` (P x N inputs), accurate near zero."""
    return cdist(A.T, B.T, "sqeuclidean")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        """Per-row mean and (population) standard deviation of a P x N matrix."""
        mean = X.mean(axis=1)
        std = X.std(axis=1)
        zero = np.flatnonzero(~(std > 0))
        if zero.size:
            raise DegenerateLibraryError(f"parameter rows {zero.tolist()} have zero spread; cannot z-score")
        return cls(mean, std)

    @classmethod
    def identity(cls, p: int) -> "Standardizer":
        return cls(np.zeros(p), np.ones(p))

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return (x - self.mean) / self.std
        return (x - self.mean[:, None]) / self.std[:, None]


@dataclass
class SurrogateModel:
    W: np.ndarray
    Xz: np.ndarray
    gamma: float
    standardizer: Standardizer
    grid: WavenumberGrid
    lower: np.ndarray
    upper: np.ndarray
    condition: float = float("nan")
    ridge: float = 0.0
    oracle_digest: str | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        self.sqnorms = np.einsum("ij,ij->j", self.Xz, self.Xz)
        self._XzT = np.ascontiguousarray(self.Xz.T)

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.Xz.shape[0]

    def kernel_vector(self, x) -> np.ndarray:
        z = self.standardizer.transform(x)
        d = z @ z - 2.0 * (self._XzT @ z) + self.sqnorms
        np.maximum(d, 0.0, out=d)
        return np.exp(-self.gamma * d)

    def predict(self, x) -> np.ndarray:
        return self.W @ self.kernel_vector(x)

    def predict_many(self, xs) -> np.ndarray:
        """Predictions for rows of ``xs`` (K x P); returns K x M."""
        Z = self.standardizer.transform(np.atleast_2d(xs).T)
        d = pairwise_squared_distances(Z, self.Xz)
        return np.exp(-self.gamma * d) @ self.W.T

    def jacobian(self, x) -> np.ndarray:
        """M x P derivative of :meth:`predict` with respect to raw parameters."""
        z = self.standardizer.transform(x)
        diff = z[None, :] - self._XzT
        d = np.maximum(np.einsum("ij,ij->i", diff, diff), 0.0)
        k = np.exp(-self.gamma * d)
        G = (-2.0 * self.gamma * k)[:, None] * diff
        return (self.W @ G) / self.standardizer.std[None, :]

    def predict_and_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        z = self.standardizer.transform(x)
        diff = z[None, :] - self._XzT
        d = np.maximum(np.einsum("ij,ij->i", diff, diff), 0.0)
        k = np.exp(-self.gamma * d)
        G = (-2.0 * self.gamma * k)[:, None] * diff
        return self.W @ k, (self.W @ G) / self.standardizer.std[None, :]

    def is_extrapolation(self, x) -> bool:
        """True when ``x`` leaves the bounding box of the training parameters."""
        x = np.asarray(x, dtype=float)
        return bool(np.any(x < self.lower) or np.any(x > self.upper))


def train(lib: SpectralLibrary, gamma: float, *, ridge: float = 0.0, max_condition: float = MAX_CONDITION, standardize: bool = True) -> SurrogateModel:
    """Solve the interpolation condition ``W K = R`` for a library.

    Raises
    ------
    DegenerateLibraryError
        Duplicate parameter columns or a parameter with zero spread.
    IllConditionedError
        Cholesky fails or the estimated 1-norm condition number of ``K``
        exceeds ``max_condition``. Use a larger ``gamma`` (sharper kernel)
        or a different library; ``ridge`` adds ``ridge * I`` to ``K``.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    dups = find_duplicates(lib.X.T)
    if dups:
        raise DegenerateLibraryError(f"duplicate library parameters at indices {dups[:10]}")
    std = Standardizer.fit(lib.X) if standardize else Standardizer.identity(lib.p)
    Xz = std.transform(lib.X)
    K = np.exp(-gamma * pairwise_squared_distances(Xz, Xz))
    if ridge:
        K[np.diag_indices_from(K)] += ridge
    anorm = np.abs(K).sum(axis=0).max()
    try:
        factor = cho_factor(K, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise IllConditionedError(
            f"kernel matrix not numerically positive definite at gamma={gamma:g}; "
            "increase gamma or thin the library",
            condition=float("inf"),
        ) from exc
    rcond, info = dpocon(factor[0], anorm, uplo="L")
    condition = float("inf") if rcond == 0 else 1.0 / rcond
    if info != 0 or condition > max_condition or np.min(np.diag(factor[0])) <= 0:
        raise IllConditionedError(
            f"kernel matrix condition estimate {condition:.3g} exceeds {max_condition:.3g} at gamma={gamma:g}; "
            "increase gamma or thin the library",
            condition=condition,
        )
    W = cho_solve(factor, lib.R.T, check_finite=False).T
    return SurrogateModel(
        W=np.ascontiguousarray(W),
        Xz=Xz,
        gamma=float(gamma),
        standardizer=std,
        grid=lib.grid,
        lower=lib.X.min(axis=1),
        upper=lib.X.max(axis=1),
        condition=condition,
        ridge=float(ridge),
        oracle_digest=lib.oracle_digest,
    )


def predict(model: SurrogateModel, x) -> np.ndarray:
    return model.predict(x)


def predict_jacobian(model: SurrogateModel, x) -> np.ndarray:
    return model.jacobian(x)


# -- persistence --------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_model(model: SurrogateModel, path) -> Path:
    """Write ``model.json`` plus ``W.npy`` and ``Xz.npy`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "W.npy", model.W, allow_pickle=False)
    np.save(path / "Xz.npy", model.Xz, allow_pickle=False)
    meta = {
        "schema": MODEL_SCHEMA,
        "gamma": model.gamma,
        "P": model.p,
        "M": model.m,
        "N": model.n,
        "mean": model.standardizer.mean.tolist(),
        "std": model.standardizer.std.tolist(),
        "lower": model.lower.tolist(),
        "upper": model.upper.tolist(),
        "condition": model.condition,
        "ridge": model.ridge,
        "grid": model.grid.to_dict(),
        "grid_digest": model.grid.digest(),
        "oracle_digest": model.oracle_digest,
        "payload_sha256": {"W.npy": _sha256(path / "W.npy"), "Xz.npy": _sha256(path / "Xz.npy")},
    }
    (path / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_array(path: Path, expected_sha: str | None, shape) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"{path}: missing")
    if expected_sha is not None and _sha256(path) != expected_sha:
        raise FormatError(f"{path}: checksum mismatch, payload corrupted")
    try:
        arr = np.load(path, allow_pickle=False)
    except (ValueError, OSError, EOFError) as exc:
        raise FormatError(f"{path}: unreadable array payload: {exc}") from exc
    if arr.shape != tuple(shape) or arr.dtype != np.float64:
        raise FormatError(f"{path}: expected float64 array of shape {tuple(shape)}, got {arr.dtype} {arr.shape}")
    return arr


def load_model(path) -> SurrogateModel:
    path = Path(path)
    meta_path = path / "model.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{meta_path}: missing") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if meta.get("schema") != MODEL_SCHEMA:
        raise VersionError(f"{meta_path}: model schema {meta.get('schema')!r} unsupported (expected {MODEL_SCHEMA})")
    try:
        p, m, n = int(meta["P"]), int(meta["M"]), int(meta["N"])
        sums = meta.get("payload_sha256", {})
        W = _load_array(path / "W.npy", sums.get("W.npy"), (m, n))
        Xz = _load_array(path / "Xz.npy", sums.get("Xz.npy"), (p, n))
        return SurrogateModel(
            W=W,
            Xz=Xz,
            gamma=float(meta["gamma"]),
            standardizer=Standardizer(np.array(meta["mean"], dtype=float), np.array(meta["std"], dtype=float)),
            grid=WavenumberGrid.from_dict(meta["grid"]),
            lower=np.array(meta["lower"], dtype=float),
            upper=np.array(meta["upper"], dtype=float),
            condition=float(meta["condition"]),
            ridge=float(meta.get("ridge", 0.0)),
            oracle_digest=meta.get("oracle_digest"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{meta_path}: missing or invalid field: {exc}") from exc
