"""Parameter sampling, spectral library assembly and the on-disk library format.

A library directory holds three files::

    meta.json     schema, P, M, N, parameter names, boxes, grid, provenance, oracle hash
    params.csv    N rows x P columns
    spectra.csv   N rows x M columns

CSV files are UTF-8 with a header row and LF line endings; floats are written
with 17 significant digits so float64 values survive the round trip exactly.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLibraryError, DomainError, FormatError, VersionError
from .oracle import (
    DEFAULT_BOXES,
    PARAM_NAMES,
    OracleConfig,
    WavenumberGrid,
    check_boxes,
    generate_spectrum,
)

LIBRARY_SCHEMA = 1
MAX_REJECTIONS = 10**6
SIMPLEX_TOL = 1e-12


@dataclass
class SpectralLibrary:
    """Paired parameters and log-spectra.

    ``X`` is stored P x N (column n is one parameter vector) and ``R`` is
    M x N, matching the usual matrix notation for kernel interpolation.
    """

    X: np.ndarray
    R: np.ndarray
    grid: WavenumberGrid
    boxes: np.ndarray = field(default_factory=lambda: DEFAULT_BOXES.copy())
    provenance: dict = field(default_factory=dict)
    oracle_digest: str | None = None
    param_names: tuple = PARAM_NAMES

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.X.ndim != 2 or self.R.ndim != 2:
            raise DomainError("X and R must be 2-D")
        if self.X.shape[1] != self.R.shape[1]:
            raise DomainError(f"X has {self.X.shape[1]} columns but R has {self.R.shape[1]}")
        if self.R.shape[0] != self.grid.m_points:
            raise DomainError(f"R has {self.R.shape[0]} rows, grid has {self.grid.m_points} points")
        if self.n < 2:
            raise DegenerateLibraryError("a library needs at least 2 entries")
        self.boxes = check_boxes(self.boxes)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def subset(self, idx) -> "SpectralLibrary":
        idx = np.asarray(idx)
        prov = dict(self.provenance, subset_of=self.provenance.get("sampling"))
        return SpectralLibrary(self.X[:, idx], self.R[:, idx], self.grid, self.boxes, prov, self.oracle_digest, self.param_names)


def find_duplicates(points: np.ndarray) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)``, ``i < j``, of identical rows of ``points`` (N x P)."""
    points = np.asarray(points, dtype=float)
    order = np.lexsort(points.T[::-1])
    dups = []
    for a, b in zip(order[:-1], order[1:]):
        if np.array_equal(points[a], points[b]):
            dups.append((int(min(a, b)), int(max(a, b))))
    return dups


def sample_physical_parameters(n: int, boxes=DEFAULT_BOXES, rng_seed=None, max_rejections: int = MAX_REJECTIONS) -> np.ndarray:
    """Uniformly sample ``n`` parameter vectors whose mole fractions sum to one.

    Temperature and the first three mole fractions are drawn uniformly in
    their boxes; the last mole fraction closes the balance and the draw is
    kept only if it lands in its own box.

    Returns
    -------
    ndarray, shape (n, 5)
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    boxes = check_boxes(boxes)
    if boxes.shape[0] != len(PARAM_NAMES):
        raise DomainError("physical sampling needs the 5-parameter layout")
    rng = np.random.default_rng(rng_seed)
    lo, hi = boxes[:4, 0], boxes[:4, 1]
    h_lo, h_hi = boxes[4]
    accepted = []
    n_acc = 0
    rejected = 0
    batch = max(64, 2 * n)
    while n_acc < n:
        draw = lo + (hi - lo) * rng.random((batch, 4))
        closing = 1.0 - draw[:, 1:].sum(axis=1)
        ok = (closing >= h_lo - SIMPLEX_TOL) & (closing <= h_hi + SIMPLEX_TOL)
        rejected += int((~ok).sum())
        if ok.any():
            rows = np.column_stack([draw[ok], np.clip(closing[ok], h_lo, h_hi)])
            accepted.append(rows[: n - n_acc])
            n_acc += min(len(rows), n - n_acc)
        if n_acc < n and rejected >= max_rejections:
            raise DomainError(
                f"rejection sampling gave up after {rejected} rejections with {n_acc}/{n} accepted; "
                "the mole-fraction boxes barely intersect the simplex"
            )
    return np.vstack(accepted)


def grid_parameters(levels_per_axis, boxes=DEFAULT_BOXES) -> np.ndarray:
    """Full tensor grid of evenly spaced values (endpoints included) per axis.

    No simplex constraint is applied. The last axis varies fastest.

    Returns
    -------
    ndarray, shape (prod(levels), len(levels))
    """
    levels = [int(v) for v in levels_per_axis]
    boxes = check_boxes(boxes)
    if len(levels) != boxes.shape[0]:
        raise DomainError(f"{len(levels)} level counts for {boxes.shape[0]} boxes")
    if any(v < 2 for v in levels):
        raise DomainError(f"every axis needs >= 2 levels, got {levels}")
    axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(boxes, levels)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def build_library(params, grid: WavenumberGrid, cfg: OracleConfig | None = None, boxes=DEFAULT_BOXES, provenance: dict | None = None) -> SpectralLibrary:
    """Evaluate the generator at every parameter vector (rows of ``params``)."""
    cfg = cfg or OracleConfig()
    points = np.atleast_2d(np.asarray(params, dtype=float))
    dups = find_duplicates(points)
    if dups:
        raise DegenerateLibraryError(f"duplicate library parameters at indices {dups[:10]}")
    R = np.column_stack([generate_spectrum(x, grid, cfg, boxes=boxes) for x in points])
    return SpectralLibrary(points.T.copy(), R, grid, boxes, dict(provenance or {}), cfg.digest())


# -- persistence --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_matrix_csv(path: Path, header, rows: np.ndarray) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_matrix_csv(path, n_cols: int | None = None, n_rows: int | None = None) -> tuple[list, np.ndarray]:
    """Parse a header + float matrix CSV, reporting the offending line on failure."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 ({exc})") from exc
    if not text.endswith("\n"):
        raise FormatError(f"{path}: truncated file (missing final newline)")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    width = len(header) if n_cols is None else n_cols
    if len(header) != width:
        raise FormatError(f"{path}: header has {len(header)} fields, expected {width}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != width:
            raise FormatError(f"{path}: line {lineno} (row {lineno - 2}) has {len(row)} fields, expected {width}")
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            col = next(i for i, v in enumerate(row) if not _is_float(v))
            raise FormatError(f"{path}: line {lineno}, field {col} ({header[col]}): cannot parse {row[col]!r}") from None
    if n_rows is not None and len(rows) != n_rows:
        raise FormatError(f"{path}: {len(rows)} data rows, expected {n_rows}")
    return header, np.array(rows, dtype=float).reshape(len(rows), width)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_params_csv(path, points: np.ndarray, names=PARAM_NAMES) -> None:
    _write_matrix_csv(Path(path), names, np.asarray(points))


def write_spectra_csv(path, spectra: np.ndarray) -> None:
    """Write N x M spectra, one spectrum per row."""
    spectra = np.asarray(spectra)
    _write_matrix_csv(Path(path), [f"r{j}" for j in range(spectra.shape[1])], spectra)


def save_library(lib: SpectralLibrary, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": LIBRARY_SCHEMA,
        "P": lib.p,
        "M": lib.m,
        "N": lib.n,
        "param_names": list(lib.param_names),
        "boxes": lib.boxes.tolist(),
        "grid": lib.grid.to_dict(),
        "provenance": lib.provenance,
        "oracle_digest": lib.oracle_digest,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_params_csv(path / "params.csv", lib.X.T, lib.param_names)
    write_spectra_csv(path / "spectra.csv", lib.R.T)
    return path


def load_library(path) -> SpectralLibrary:
    path = Path(path)
    meta_path = path / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{meta_path}: missing") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if meta.get("schema") != LIBRARY_SCHEMA:
        raise VersionError(f"{meta_path}: library schema {meta.get('schema')!r} unsupported (expected {LIBRARY_SCHEMA})")
    try:
        p, m, n = int(meta["P"]), int(meta["M"]), int(meta["N"])
        names = tuple(meta["param_names"])
        grid = WavenumberGrid.from_dict(meta["grid"])
        boxes = np.array(meta["boxes"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{meta_path}: missing or invalid field: {exc}") from exc
    if grid.m_points != m:
        raise FormatError(f"{meta_path}: grid has {grid.m_points} points but M={m}")
    header, X = read_matrix_csv(path / "params.csv", n_cols=p, n_rows=n)
    if tuple(header) != names:
        raise FormatError(f"{path / 'params.csv'}: header {header} does not match param_names {list(names)}")
    _, R = read_matrix_csv(path / "spectra.csv", n_cols=m, n_rows=n)
    return SpectralLibrary(X.T.copy(), R.T.copy(), grid, boxes, meta.get("provenance", {}), meta.get("oracle_digest"), names)
