"""Command-line entry point: ``carsfit {gen-library,train,fit,study,rerun}``.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
Every command writes ``run_manifest.json`` next to its outputs; ``carsfit
rerun MANIFEST --out DIR`` replays it.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CarsFitError, DegenerateLibraryError, DomainError, FormatError, IllConditionedError
from .fitter import FitConfig, fit_batch, write_results_csv, write_timings_csv
from .kernel import load_model, save_model
from .lagrange import build_lagrange
from .library import build_library, grid_parameters, load_library, read_matrix_csv, sample_physical_parameters, save_library
from .oracle import DEFAULT_BOXES, PARAM_NAMES, OracleConfig, WavenumberGrid
from .studies import StudyConfig, compare_study, noise_study, noisy_spectra, size_study, write_rows_csv
from .tuning import CvConfig, fit_final, select_gamma

log = logging.getLogger("carsfit")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
MANIFEST = "run_manifest.json"
NON_REPRODUCIBLE = {"timings.csv", "summary.json", MANIFEST}


class UsageError(Exception):
    pass


# -- flag parsing helpers -------------------------------------------------------------------

def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def snr_value(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"snr must be a number or 'inf', got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"snr must be positive, got {text!r}")
    return v


def snr_list(text: str) -> list[float]:
    return [snr_value(v) for v in text.split(",") if v.strip()]


def gamma_grid(text: str) -> np.ndarray:
    """``lo:hi:count`` (log-spaced), a comma list, or a single value."""
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            return np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(count))
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad gamma grid {text!r}; use lo:hi:count or comma-separated values") from None


def boxes_arg(text: str) -> np.ndarray:
    """``lo:hi,lo:hi,...`` one pair per parameter."""
    try:
        boxes = np.array([[float(a) for a in pair.split(":")] for pair in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad boxes {text!r}; use lo:hi,lo:hi,...") from None
    if boxes.shape != (len(PARAM_NAMES), 2):
        raise argparse.ArgumentTypeError(f"need {len(PARAM_NAMES)} lo:hi pairs, got {text!r}")
    return boxes


def boxes_text(boxes) -> str:
    return ",".join(f"{lo:.17g}:{hi:.17g}" for lo, hi in boxes)


# -- manifest --------------------------------------------------------------------------------

def _hash_path(path: Path) -> str | None:
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST):
            h.update(str(f.relative_to(path)).encode())
            h.update(hashlib.sha256(f.read_bytes()).digest())
        return h.hexdigest()
    return None


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(out: Path, argv: list, args: argparse.Namespace, inputs: list, elapsed: float) -> None:
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    outputs = {p.name: _hash_path(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != MANIFEST}
    manifest = {
        "tool": "carsfit",
        "version": __version__,
        "command": args.command,
        "argv": argv,
        "cwd": str(Path.cwd()),
        "config": config,
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "inputs": {str(p): _hash_path(Path(p)) for p in inputs if p},
        "outputs": outputs,
        "timings": {"wall_seconds": round(elapsed, 3)},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _oracle(args) -> OracleConfig:
    return OracleConfig.load(args.oracle_config) if getattr(args, "oracle_config", None) else OracleConfig()


# -- commands -------------------------------------------------------------------------------

def cmd_gen_library(args) -> list:
    boxes = args.boxes if args.boxes is not None else DEFAULT_BOXES
    if args.sampling == "grid":
        if args.n is not None:
            raise UsageError("--n conflicts with --sampling grid (size is the product of --levels)")
        if args.levels is None:
            raise UsageError("--sampling grid requires --levels")
        if len(args.levels) != len(PARAM_NAMES):
            raise UsageError(f"--levels needs {len(PARAM_NAMES)} counts")
        if any(k < 2 for k in args.levels):
            raise UsageError("every --levels count must be >= 2")
        params = grid_parameters(args.levels, boxes)
        prov = {"sampling": "grid", "levels": args.levels}
    else:
        if args.levels is not None:
            raise UsageError("--levels only applies to --sampling grid")
        if args.n is None or args.n < 2:
            raise UsageError("--n must be >= 2 for a random library")
        params = sample_physical_parameters(args.n, boxes, args.seed)
        prov = {"sampling": "random", "seed": args.seed, "n": args.n}
    lib = build_library(params, WavenumberGrid.uniform(args.m_points), _oracle(args), boxes, prov)
    save_library(lib, args.out)
    log.info("wrote %d spectra to %s", lib.n, args.out)
    return [args.oracle_config]


def cmd_train(args) -> list:
    lib = load_library(args.library)
    cfg = CvConfig(args.gamma_grid, args.cv_iters, args.split, args.seed, args.metric, args.aggregate)
    report = select_gamma(lib, cfg)
    model = fit_final(lib, report.gamma_star)
    out = Path(args.out)
    save_model(model, out / "model")
    report.save_csv(out / "cv.csv")
    report.save_json(out / "cv.json")
    log.info("gamma* = %g (condition %.3g)", report.gamma_star, model.condition)
    return [args.library]


def _read_spectra(path: Path):
    if path.is_dir():
        lib = load_library(path)
        return lib.R.T, lib.grid
    _, spectra = read_matrix_csv(path)
    return spectra, None


def _read_truth(path: Path):
    if path.is_dir():
        return load_library(path).X.T
    _, truth = read_matrix_csv(path, n_cols=len(PARAM_NAMES))
    return truth


def cmd_fit(args) -> list:
    if (args.model is None) == (args.lagrange_library is None):
        raise UsageError("give exactly one of --model or --lagrange-library")
    if args.model is not None:
        surrogate = load_model(Path(args.model) / "model" if (Path(args.model) / "model" / "model.json").exists() else args.model)
        grid = surrogate.grid
    else:
        glib = load_library(args.lagrange_library)
        surrogate, grid = build_lagrange(glib), glib.grid
    spectra, spec_grid = _read_spectra(Path(args.spectra))
    if spectra.shape[1] != grid.m_points or (spec_grid is not None and spec_grid.digest() != grid.digest()):
        raise DomainError(f"spectra have {spectra.shape[1]} points on a grid that does not match the model's {grid.m_points}")
    truth = _read_truth(Path(args.truth)) if args.truth else None
    if truth is not None and len(truth) != len(spectra):
        raise DomainError(f"{len(truth)} truth rows for {len(spectra)} spectra")
    noisy = noisy_spectra(spectra, args.snr, args.seed)
    batch = fit_batch(noisy, surrogate, FitConfig(starts=args.starts, seed=args.seed, workers=args.workers), truth)
    out = Path(args.out)
    write_results_csv(out / "results.csv", batch.results)
    write_timings_csv(out / "timings.csv", batch.results)
    (out / "summary.json").write_text(json.dumps(_jsonable_tree(batch.summary), indent=2) + "\n", encoding="utf-8")
    if any(r.error for r in batch.results):
        log.warning("%d fits failed", sum(bool(r.error) for r in batch.results))
    return [args.model, args.lagrange_library, args.spectra, args.truth]


def _jsonable_tree(obj):
    if isinstance(obj, dict):
        return {k: _jsonable_tree(v) for k, v in obj.items()}
    return _jsonable(obj)


def _study_summary(rows, timing) -> dict:
    groups = {}
    for r in rows:
        key = f"{r['method']}|n={r['n']}|snr={r['snr']}"
        groups.setdefault(key, []).append([r[f"abserr_{p}"] for p in PARAM_NAMES])
    times = {}
    for t in timing:
        key = f"{t['method']}|n={t['n']}|snr={t['snr']}"
        times.setdefault(key, []).append(t["wall_time"])
    return {
        key: {
            "median_abs_error": dict(zip(PARAM_NAMES, np.nanmedian(np.array(v, dtype=float), axis=0).tolist())),
            "median_fit_seconds": float(np.median(times[key])),
            "n_fits": len(v),
        }
        for key, v in groups.items()
    }


def cmd_study(args) -> list:
    cfg = StudyConfig(
        n_validation=args.n_validation,
        snr=args.snr,
        seed=args.seed,
        m_points=args.m_points,
        starts=args.starts,
        cv=CvConfig(args.gamma_grid, args.cv_iters, args.split, args.seed + 3),
        oracle=_oracle(args),
    )
    if args.study == "size":
        rows, timing = size_study(args.ns, cfg)
    elif args.study == "compare":
        if len(args.grid_levels) != len(args.random_n):
            raise UsageError("--grid-levels and --random-n must pair up")
        rows, timing = compare_study(args.grid_levels, args.random_n, cfg)
    else:
        rows, timing = noise_study(args.snrs, args.n, cfg)
    out = Path(args.out)
    write_rows_csv(out / "study.csv", rows)
    write_rows_csv(out / "timings.csv", timing)
    (out / "summary.json").write_text(json.dumps(_study_summary(rows, timing), indent=2) + "\n", encoding="utf-8")
    failed = sum(bool(r["error"]) for r in rows)
    if failed:
        log.warning("%d of %d fits failed", failed, len(rows))
    return [args.oracle_config]


def cmd_rerun(args) -> int:
    """Replay a manifest's argv from its original directory after checking input hashes."""
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        argv, cwd = list(manifest["argv"]), Path(manifest["cwd"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"carsfit: data error: unreadable manifest {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_DATA
    for name, digest in manifest.get("inputs", {}).items():
        path = Path(name) if Path(name).is_absolute() else cwd / name
        if _hash_path(path) != digest:
            print(f"carsfit: data error: input {name} changed since the manifest was written", file=sys.stderr)
            return EXIT_DATA
    argv[argv.index("--out") + 1] = str(Path(args.out).resolve())
    here = Path.cwd()
    os.chdir(cwd)
    try:
        return main(argv)
    finally:
        os.chdir(here)


# -- parser ---------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="carsfit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"carsfit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-library", help="generate a spectral library")
    g.add_argument("--n", type=int)
    g.add_argument("--sampling", choices=("random", "grid"), default="random")
    g.add_argument("--levels", type=int_list)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--boxes", type=boxes_arg)
    g.add_argument("--m-points", type=int, default=512)
    g.add_argument("--oracle-config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_library)

    t = sub.add_parser("train", help="cross-validate gamma and train the surrogate")
    t.add_argument("--library", required=True)
    t.add_argument("--gamma-grid", type=gamma_grid, default=gamma_grid("1e-4:1e2:25"))
    t.add_argument("--cv-iters", type=int, default=5)
    t.add_argument("--split", type=float, default=0.75)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--metric", choices=("mae", "mse"), default="mae")
    t.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit", help="recover parameters from spectra")
    f.add_argument("--model")
    f.add_argument("--lagrange-library")
    f.add_argument("--spectra", required=True, help="library directory or spectra CSV (one spectrum per row)")
    f.add_argument("--truth", help="library directory or params CSV with the true parameters")
    f.add_argument("--snr", type=snr_value, default=math.inf)
    f.add_argument("--starts", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("study", help="run a library-size, method-comparison or noise study")
    s.add_argument("--study", choices=("size", "compare", "noise"), required=True)
    s.add_argument("--ns", type=int_list, default=[32, 100, 243, 500, 1024, 3000])
    s.add_argument("--grid-levels", type=int_list, default=[2, 3, 4])
    s.add_argument("--random-n", type=int_list, default=[32, 243, 1024])
    s.add_argument("--snrs", type=snr_list, default=[math.inf, 20.0, 10.0, 2.0, 1.0])
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--snr", type=snr_value, default=50.0)
    s.add_argument("--n-validation", type=int, default=250)
    s.add_argument("--gamma-grid", type=gamma_grid, default=gamma_grid("1e-4:1e2:25"))
    s.add_argument("--cv-iters", type=int, default=5)
    s.add_argument("--split", type=float, default=0.75)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--starts", type=int, default=5)
    s.add_argument("--m-points", type=int, default=512)
    s.add_argument("--oracle-config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study)

    r = sub.add_parser("rerun", help="replay a run manifest into a new output directory")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.set_defaults(func=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"carsfit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rerun":
        return cmd_rerun(args)
    t0 = time.perf_counter()
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        inputs = args.func(args)
    except UsageError as exc:
        print(f"carsfit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IllConditionedError as exc:
        print(f"carsfit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DomainError, DegenerateLibraryError, OSError) as exc:
        print(f"carsfit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CarsFitError as exc:
        print(f"carsfit: {exc}", file=sys.stderr)
        return EXIT_DATA
    write_manifest(Path(args.out), argv, args, inputs, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
