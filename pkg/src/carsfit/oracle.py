"""Synthetic CARS-like spectrum generator.

The generator stands in for a slow physics code. A spectrum is the modulus
squared of a complex susceptibility built from Lorentzian lines of three
resonant species plus a non-resonant background carried by water vapour::

    chi(nu) = sum_s x_s sum_l a_sl(T) / (p_sl - nu - i sigma_s(T)) + x_H2O * C_nr
    a_sl(T) = exp(-e_s * l / (T / 1000))
    sigma_s(T) = sigma0_s * (1 + 0.5 * T / 1000)
    p_sl = o_s + l * d_s

and the stored value is ``log(max(|chi|^2, floor))``.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DomainError, FormatError, VersionError

ORACLE_SCHEMA = 1

PARAM_NAMES = ("temperature", "x_N2", "x_H2", "x_O2", "x_H2O")
RESONANT_SPECIES = ("N2", "H2", "O2")
MOLE_FRACTION_SLICE = slice(1, 5)

#: Default parameter boxes, one ``(lo, hi)`` row per entry of ``PARAM_NAMES``.
DEFAULT_BOXES = np.array(
    [
        [500.0, 2500.0],
        [0.25, 0.85],
        [0.0, 0.60],
        [0.0, 0.30],
        [0.0, 0.40],
    ]
)

#: Widest boxes the generator itself accepts (any composition, positive T).
PHYSICAL_LIMITS = np.array(
    [
        [1.0, 1.0e5],
        [0.0, 1.0],
        [0.0, 1.0],
        [0.0, 1.0],
        [0.0, 1.0],
    ]
)


class ParameterVector(NamedTuple):
    """Temperature in kelvin followed by four mole fractions."""

    temperature: float
    x_N2: float
    x_H2: float
    x_O2: float
    x_H2O: float

    @classmethod
    def from_array(cls, values) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(PARAM_NAMES),):
            raise DomainError(f"expected {len(PARAM_NAMES)} parameters, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    def mole_fraction_sum(self) -> float:
        return self.x_N2 + self.x_H2 + self.x_O2 + self.x_H2O

    def is_physical(self, tol: float = 1e-9) -> bool:
        fractions = np.asarray(self)[MOLE_FRACTION_SLICE]
        return bool(np.all(fractions >= -tol) and abs(fractions.sum() - 1.0) <= tol)


def check_boxes(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    if boxes.ndim != 2 or boxes.shape[1] != 2:
        raise DomainError(f"boxes must have shape (P, 2), got {boxes.shape}")
    if not np.all(np.isfinite(boxes)) or np.any(boxes[:, 0] > boxes[:, 1]):
        raise DomainError("every box needs finite lo <= hi")
    return boxes


def check_in_boxes(params, boxes, tol: float = 0.0) -> np.ndarray:
    """Return ``params`` as an array, raising :class:`DomainError` if any coordinate leaves its box."""
    x = np.asarray(params, dtype=float)
    boxes = np.asarray(boxes, dtype=float)
    if x.shape != (boxes.shape[0],):
        raise DomainError(f"expected {boxes.shape[0]} parameters, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite parameters {x}")
    bad = np.flatnonzero((x < boxes[:, 0] - tol) | (x > boxes[:, 1] + tol))
    if bad.size:
        names = PARAM_NAMES if len(x) == len(PARAM_NAMES) else [f"p{i}" for i in range(len(x))]
        detail = ", ".join(f"{names[i]}={x[i]!r} not in [{boxes[i, 0]}, {boxes[i, 1]}]" for i in bad)
        raise DomainError(f"parameters outside box: {detail}")
    return x


@dataclass(frozen=True)
class WavenumberGrid:
    """Fixed, strictly increasing normalized wavenumbers in [0, 1]."""

    axis: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.ndim != 1 or axis.size < 2:
            raise DomainError("a wavenumber grid needs at least 2 points")
        if not np.all(np.isfinite(axis)) or axis[0] < 0.0 or axis[-1] > 1.0:
            raise DomainError("wavenumbers must lie in [0, 1]")
        if np.any(np.diff(axis) <= 0):
            raise DomainError("wavenumbers must be strictly increasing")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)

    @classmethod
    def uniform(cls, m_points: int = 512) -> "WavenumberGrid":
        return cls(np.linspace(0.0, 1.0, int(m_points)))

    @property
    def m_points(self) -> int:
        return int(self.axis.size)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.axis, dtype="<f8").tobytes()).hexdigest()[:16]

    def to_dict(self) -> dict:
        if np.array_equal(self.axis, np.linspace(0.0, 1.0, self.m_points)):
            return {"kind": "uniform", "m_points": self.m_points}
        return {"kind": "explicit", "axis": [float(v) for v in self.axis]}

    @classmethod
    def from_dict(cls, d: dict) -> "WavenumberGrid":
        try:
            if d["kind"] == "uniform":
                return cls.uniform(int(d["m_points"]))
            if d["kind"] == "explicit":
                return cls(np.array(d["axis"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad grid description {d!r}: {exc}") from exc
        raise FormatError(f"unknown grid kind {d.get('kind')!r}")


@dataclass(frozen=True)
class SpeciesLines:
    """Line table of one resonant species: ``n_lines`` Lorentzians at ``offset + l * spacing``."""

    offset: float
    spacing: float
    energy: float
    width: float
    n_lines: int = 8

    def positions(self) -> np.ndarray:
        return self.offset + self.spacing * np.arange(1, self.n_lines + 1)

    def amplitudes(self, temperature: float) -> np.ndarray:
        levels = np.arange(1, self.n_lines + 1)
        return np.exp(-self.energy * levels / (temperature / 1000.0))

    def halfwidth(self, temperature: float) -> float:
        return self.width * (1.0 + 0.5 * temperature / 1000.0)


def _default_species() -> dict:
    return {
        "N2": SpeciesLines(offset=0.05, spacing=0.03, energy=0.3, width=0.004),
        "H2": SpeciesLines(offset=0.40, spacing=0.025, energy=0.5, width=0.003),
        "O2": SpeciesLines(offset=0.70, spacing=0.02, energy=0.4, width=0.005),
    }


@dataclass(frozen=True)
class OracleConfig:
    """Constants of the synthetic generator.

    ``delay_seconds`` emulates the per-call cost of a real physics code and
    has no effect on the returned values.
    """

    species: dict = field(default_factory=_default_species)
    nonresonant: float = 0.5
    floor: float = 1e-12
    delay_seconds: float = 0.0

    def __post_init__(self):
        if set(self.species) != set(RESONANT_SPECIES):
            raise DomainError(f"species table must cover {RESONANT_SPECIES}")
        for name, lines in self.species.items():
            pos = lines.positions()
            if lines.width <= 0 or lines.n_lines < 1 or pos.min() < 0 or pos.max() > 1:
                raise DomainError(f"invalid line table for {name}: {lines}")
        if self.floor <= 0:
            raise DomainError("floor must be positive")
        if self.delay_seconds < 0:
            raise DomainError("delay_seconds must be >= 0")

    def to_dict(self) -> dict:
        return {
            "schema": ORACLE_SCHEMA,
            "species": {name: asdict(self.species[name]) for name in RESONANT_SPECIES},
            "nonresonant": self.nonresonant,
            "floor": self.floor,
            "delay_seconds": self.delay_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleConfig":
        if d.get("schema") != ORACLE_SCHEMA:
            raise VersionError(f"oracle config schema {d.get('schema')!r} unsupported (expected {ORACLE_SCHEMA})")
        try:
            species = {name: SpeciesLines(**d["species"][name]) for name in RESONANT_SPECIES}
            return cls(
                species=species,
                nonresonant=float(d["nonresonant"]),
                floor=float(d["floor"]),
                delay_seconds=float(d.get("delay_seconds", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed oracle config: {exc}") from exc

    def digest(self) -> str:
        """Hash of everything that influences spectra (the delay does not)."""
        d = self.to_dict()
        d.pop("delay_seconds")
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "OracleConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(d)


def oracle_cost_model(cfg: OracleConfig) -> float:
    """Seconds of artificial delay each :func:`generate_spectrum` call incurs."""
    return cfg.delay_seconds


def susceptibility(params, nu: np.ndarray, cfg: OracleConfig) -> np.ndarray:
    """Complex susceptibility at wavenumbers ``nu`` (no box checks)."""
    temperature, *fractions = (float(v) for v in params)
    x_res, x_h2o = fractions[:3], fractions[3]
    chi = np.full(nu.shape, x_h2o * cfg.nonresonant, dtype=complex)
    for name, x_s in zip(RESONANT_SPECIES, x_res):
        if x_s == 0.0:
            continue
        lines = cfg.species[name]
        denom = lines.positions()[None, :] - nu[:, None] - 1j * lines.halfwidth(temperature)
        chi += x_s * (lines.amplitudes(temperature)[None, :] / denom).sum(axis=1)
    return chi


def generate_spectrum(params, grid: WavenumberGrid, cfg: OracleConfig | None = None, boxes=DEFAULT_BOXES) -> np.ndarray:
    """Log-intensity spectrum of ``params`` on ``grid``.

    Parameters
    ----------
    params : ParameterVector or array_like, shape (5,)
        Temperature [K] and mole fractions of N2, H2, O2, H2O.
    grid : WavenumberGrid
    cfg : OracleConfig, optional
        Generator constants; defaults to ``OracleConfig()``.
    boxes : array_like, shape (5, 2)
        Admissible parameter ranges. Pass ``PHYSICAL_LIMITS`` to evaluate
        compositions outside the default flame boxes.

    Returns
    -------
    ndarray, shape (M,)
    """
    cfg = cfg or OracleConfig()
    x = check_in_boxes(params, boxes)
    if x[0] <= 0:
        raise DomainError("temperature must be positive")
    if cfg.delay_seconds > 0:
        time.sleep(cfg.delay_seconds)
    chi = susceptibility(x, grid.axis, cfg)
    intensity = chi.real**2 + chi.imag**2
    out = np.log(np.maximum(intensity, cfg.floor))
    if not np.all(np.isfinite(out)):
        raise ArithmeticError(f"non-finite spectrum for parameters {x}")
    return out


def add_noise(spectrum, snr: float, rng_seed) -> np.ndarray:
    """Add i.i.d. Gaussian noise of standard deviation ``1 / snr`` to a log spectrum.

    Additive noise of std ``1/snr`` in the log domain corresponds to relative
    intensity noise of roughly ``1/snr``. ``snr = inf`` returns an unchanged copy.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    snr = float(snr)
    if not snr > 0:
        raise DomainError(f"snr must be positive, got {snr}")
    if np.isinf(snr):
        return spectrum.copy()
    rng = np.random.default_rng(rng_seed)
    return spectrum + rng.normal(0.0, 1.0 / snr, size=spectrum.shape)
