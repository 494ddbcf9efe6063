"""Command-line entry point: ``unmixkit {unmix,detect,synth,bench,eval}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io
from .core import PixelSpectrum
from .errors import UnmixError
from .metrics import EvalReport, benchmark, evaluate, target_indices
from .minlp import Cardinality, MinlpConfig
from .registry import SOLVER_NAMES, make_solver
from .solvers import LassoConfig
from .whiten import ace_scores, compute_stats, select_roi


class UsageError(Exception):
    pass


def _default_jobs() -> int:
    env = os.environ.get("UNMIXKIT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parse_pixel_spec(spec: str) -> list[tuple[int, int]]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            line, sample = part.split(":")
            out.append((int(line), int(sample)))
        except ValueError:
            raise UsageError(f"--pixels: expected line:sample pairs, got {part!r}") from None
    if not out:
        raise UsageError("--pixels: no pixels given")
    return out


def parse_synth_spec(spec: str) -> dict:
    keys = {"pixels": int, "sparsity": int, "snr": float, "seed": int, "amin": float, "amax": float}
    out = {"pixels": 50, "sparsity": 3, "snr": math.inf, "seed": 0, "amin": 0.1, "amax": 1.0}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, val = part.partition("=")
        key = key.strip()
        if not sep or key not in keys:
            raise UsageError(f"--synth: unknown or malformed entry {part!r} (keys: {', '.join(keys)})")
        try:
            out[key] = keys[key](val)
        except ValueError:
            raise UsageError(f"--synth: bad value for {key}: {val!r}") from None
    return out


def read_pixel_file(path) -> list[PixelSpectrum]:
    pixels = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                pixels.append(PixelSpectrum([float(v) for v in row]))
            except ValueError:
                raise data_io.ParseError("non-numeric pixel value", lineno) from None
    return pixels


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, cube: bool = True) -> None:
    p.add_argument("--library", required=True, metavar="PATH", help="spectral library CSV")
    if cube:
        p.add_argument("--cube", metavar="PATH", help="ENVI-style header (.hdr) of the image cube")
        p.add_argument("--data", metavar="PATH", help="raw data file (default: header path without .hdr)")
        p.add_argument("--pixels", metavar="SPEC", help="comma-separated line:sample pairs, e.g. 0:0,3:4")
        p.add_argument("--pixel-file", metavar="PATH", help="CSV with one pixel spectrum per row")
    p.add_argument("--output", metavar="PATH", help="write results here instead of stdout")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, help="fixed LASSO penalty (excludes --cv)")
    p.add_argument("--cv", action="store_true", help="choose the LASSO penalty by cross-validation (default)")
    p.add_argument("--folds", type=int, default=5, help="CV folds over bands (default 5)")
    p.add_argument("--alpha", type=float, default=0.05, help="DFS p-value inclusion threshold (default 0.05)")
    p.add_argument("--p", type=int, default=3, help="MINLP model-size parameter P (default 3)")
    p.add_argument("--cardinality", choices=["atmost", "atleast"], default="atmost",
                   help="MINLP model-size constraint sense (default atmost)")
    p.add_argument("--time-limit", type=float, default=60.0, help="MINLP time limit per pixel, seconds")
    p.add_argument("--seed", type=int, default=0, help="CV fold shuffle seed")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads for per-pixel solves (default: $UNMIXKIT_JOBS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unmixkit", description="Sparse hyperspectral unmixing toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("unmix", help="estimate abundances for selected pixels")
    _common(p)
    p.add_argument("--solver", required=True, choices=SOLVER_NAMES, help="unmixing method")
    _solver_flags(p)
    p.add_argument("--format", choices=["json", "csv", "table"], default="json")

    p = sub.add_parser("detect", help="ACE target detection and ROI mask over a cube")
    _common(p)
    p.add_argument("--target", required=True, metavar="NAME", help="library spectrum name to detect")
    p.add_argument("--threshold", type=float, help="keep pixels with ACE score >= threshold")
    p.add_argument("--top-k", type=int, help="keep the k highest-scoring pixels")
    p.add_argument("--format", choices=["csv", "json", "table"], default="csv")

    p = sub.add_parser("synth", help="write a synthetic mixture cube and its ground truth")
    _common(p, cube=False)
    p.add_argument("--synth", default="", metavar="SPEC",
                   help='scene parameters, e.g. "pixels=50,sparsity=3,snr=30,seed=7"')
    p.add_argument("--interleave", choices=["bsq", "bil", "bip"], default="bsq")
    p.add_argument("--data-type", type=int, choices=[4, 5], default=5, help="4 = float32, 5 = float64")
    p.add_argument("--new-library", metavar="NxM",
                   help="first write a synthetic library of N spectra over M bands to --library")
    p.add_argument("--library-seed", type=int, default=0, help="seed for --new-library")

    p = sub.add_parser("bench", help="compare solvers on a scene: RMSE, runtime, detection, MAP@k")
    _common(p)
    p.add_argument("--synth", metavar="SPEC", help='generate the scene, e.g. "pixels=50,sparsity=3,snr=30,seed=7"')
    p.add_argument("--solvers", default="nnls,lasso,dfs,minlp", help="comma-separated solver names")
    p.add_argument("--target-category", help="mineral category counted as a detection")
    p.add_argument("--target", action="append", metavar="NAME", help="library spectrum counted as a detection")
    p.add_argument("--k", type=int, default=5, help="rank cutoff for MAP@k (default 5)")
    p.add_argument("--repeats", type=int, default=3, help="timing repeats per solve (median reported)")
    _solver_flags(p)
    p.add_argument("--format", choices=["csv", "json", "table"], default="csv")

    p = sub.add_parser("eval", help="score a saved results JSON against a target group")
    p.add_argument("--results", required=True, metavar="PATH", help="results JSON from unmix")
    p.add_argument("--library", metavar="PATH", help="library CSV (default: the one named in the results)")
    p.add_argument("--target-category", help="mineral category counted as a detection")
    p.add_argument("--target", action="append", metavar="NAME", help="library spectrum counted as a detection")
    p.add_argument("--k", type=int, default=5, help="rank cutoff for MAP@k (default 5)")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--format", choices=["csv", "json", "table"], default="csv")
    return parser


# ---------------------------------------------------------------------------


def _load_pixels(args, library):
    """Return (ids, pixels, cube-or-None) from --cube/--pixels or --pixel-file."""
    if args.pixel_file and args.pixels:
        raise UsageError("--pixels and --pixel-file are mutually exclusive")
    if args.pixel_file:
        pix = read_pixel_file(args.pixel_file)
        return list(range(len(pix))), pix, None
    if not args.cube:
        raise UsageError("--cube (with --pixels) or --pixel-file is required")
    cube = data_io.load_cube(args.cube, args.data)
    if args.pixels:
        coords = parse_pixel_spec(args.pixels)
    else:
        L, S, _ = cube.shape
        coords = [(l, s) for l in range(L) for s in range(S)]
    pixels = []
    for l, s in coords:
        if not (0 <= l < cube.shape[0] and 0 <= s < cube.shape[1]):
            raise UsageError(f"--pixels: {l}:{s} outside cube of {cube.shape[0]} lines x {cube.shape[1]} samples")
        pixels.append(cube.pixel(l, s))
    return [f"{l}:{s}" for l, s in coords], pixels, cube


def _align(library, pixels):
    wl = pixels[0].wavelengths if pixels and pixels[0].wavelengths is not None else None
    if wl is not None and not np.array_equal(wl, library.band_wavelengths):
        from .core import align_to_bands
        return align_to_bands(library, wl)
    return library


def _lasso_args(args):
    if args.lam is not None and args.cv:
        raise UsageError("--lambda and --cv conflict: give a fixed penalty or cross-validate, not both")
    if args.lam is not None and args.lam < 0:
        raise UsageError("--lambda must be >= 0")
    if args.folds < 2:
        raise UsageError("--folds must be >= 2")
    return args.lam, LassoConfig(folds=args.folds, seed=args.seed)


def _minlp_config(args):
    if args.p < 1:
        raise UsageError("--p must be >= 1")
    if not args.time_limit > 0:
        raise UsageError("--time-limit must be > 0")
    return MinlpConfig(p=args.p, cardinality_sense=Cardinality(args.cardinality), time_limit=args.time_limit)


def _emit(args, text: str) -> None:
    if args.output:
        try:
            with open(args.output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise data_io.IoError(str(exc)) from exc
    else:
        sys.stdout.write(text)


def _table(header, rows) -> str:
    cells = [[str(h) for h in header]] + [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"


def _report_text(report: EvalReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "table":
        from dataclasses import astuple
        from .metrics import REPORT_COLUMNS
        return _table(REPORT_COLUMNS, [astuple(r) for r in report.rows])
    return report.to_csv()


def _relevant(args, library):
    if not args.target_category and not args.target:
        return frozenset()
    try:
        return target_indices(library, args.target_category, args.target)
    except KeyError as exc:
        raise UsageError(f"--target: no library spectrum named {exc.args[0]!r}") from None


def cmd_unmix(args) -> int:
    lam, lasso_cfg = _lasso_args(args)
    minlp_cfg = _minlp_config(args)
    library = data_io.load_library(args.library)
    ids, pixels, cube = _load_pixels(args, library)
    library = _align(library, pixels)
    stats = None
    if args.solver == "hysudeb":
        if cube is None:
            raise UsageError("--solver hysudeb needs --cube for image statistics")
        stats = compute_stats(cube)
    fn = make_solver(args.solver, lam=lam, lasso_config=lasso_cfg, alpha=args.alpha,
                     minlp_config=minlp_cfg, stats=stats)
    jobs = args.jobs or _default_jobs()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        sols = list(pool.map(lambda px: fn(library, px), pixels))
    records = [data_io.solution_record(i, args.solver, s) for i, s in zip(ids, sols)]
    if args.format == "json":
        doc = data_io.results_document(args.library, records)
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        rows = []
        for rec in records:
            for idx, val in rec["coefficients"].items():
                rows.append([rec["id"], rec["solver"], int(idx), library.names[int(idx)], val, rec["rmse"]])
        header = ["id", "solver", "index", "name", "abundance", "rmse"]
        if args.format == "table":
            _emit(args, _table(header, rows))
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(v) if isinstance(v, float) else v for v in r] for r in rows])
            _emit(args, buf.getvalue())
    return 0


def cmd_detect(args) -> int:
    if (args.threshold is None) == (args.top_k is None):
        raise UsageError("give exactly one of --threshold or --top-k")
    library = data_io.load_library(args.library)
    if not args.cube:
        raise UsageError("--cube is required for detect")
    cube = data_io.load_cube(args.cube, args.data)
    pixels = cube.pixels()
    library = _align(library, pixels)
    try:
        target = library.column(library.index_of(args.target))
    except KeyError:
        raise UsageError(f"--target: no library spectrum named {args.target!r}") from None
    stats = compute_stats(cube)
    scores = ace_scores(cube, target, stats)
    mask = select_roi(cube, target, stats, threshold=args.threshold, top_k=args.top_k)
    L, S, _ = cube.shape
    rows = [[l, s, float(scores[l * S + s]), int(mask[l * S + s])] for l in range(L) for s in range(S)]
    header = ["line", "sample", "score", "selected"]
    if args.format == "json":
        _emit(args, json.dumps({"target": args.target, "rows": [dict(zip(header, r)) for r in rows]}, indent=2) + "\n")
    elif args.format == "table":
        _emit(args, _table(header, rows))
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[l, s, repr(sc), m] for l, s, sc, m in rows])
        _emit(args, buf.getvalue())
    return 0


def _scene(args, library):
    spec = parse_synth_spec(args.synth)
    return data_io.generate_scene(library, spec["pixels"], spec["sparsity"], (spec["amin"], spec["amax"]),
                                  spec["snr"], spec["seed"])


def cmd_synth(args) -> int:
    if not args.output:
        raise UsageError("--output PREFIX is required for synth")
    if args.new_library:
        try:
            n, m = (int(v) for v in args.new_library.lower().split("x"))
        except ValueError:
            raise UsageError(f"--new-library: expected NxM, got {args.new_library!r}") from None
        if n < 1 or m < 2:
            raise UsageError("--new-library: need N >= 1 spectra and M >= 2 bands")
        data_io.save_library(args.library, data_io.synthetic_library(n, m, args.library_seed))
    library = data_io.load_library(args.library)
    scene = _scene(args, library)
    prefix = Path(args.output)
    data_io.save_cube(f"{prefix}.hdr", prefix, scene.as_cube(), args.interleave, args.data_type)
    truth = {"library": args.library, "snr_db": scene.snr_db if math.isfinite(scene.snr_db) else None,
             "seed": scene.seed,
             "pixels": [{"id": f"0:{i}", "coefficients": {str(k): v for k, v in gt.items()}}
                        for i, gt in enumerate(scene.ground_truth)]}
    Path(f"{prefix}_truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    lam, lasso_cfg = _lasso_args(args)
    minlp_cfg = _minlp_config(args)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    names = [n.strip() for n in args.solvers.split(",") if n.strip()]
    bad = [n for n in names if n not in SOLVER_NAMES]
    if bad or not names:
        raise UsageError(f"--solvers: unknown solver(s) {', '.join(bad) or '(none)'}; choose from {', '.join(SOLVER_NAMES)}")
    library = data_io.load_library(args.library)
    if args.synth:
        if args.cube or args.pixel_file:
            raise UsageError("--synth conflicts with --cube/--pixel-file")
        pixels = _scene(args, library).pixels
    else:
        _, pixels, _ = _load_pixels(args, library)
        library = _align(library, pixels)
    relevant = _relevant(args, library)
    stats = compute_stats(pixels) if "hysudeb" in names else None
    solvers = [(n, make_solver(n, lam=lam, lasso_config=lasso_cfg, alpha=args.alpha,
                               minlp_config=minlp_cfg, stats=stats)) for n in names]
    report = benchmark(solvers, pixels, library, relevant, k=args.k, repeats=max(1, args.repeats))
    _emit(args, _report_text(report, args.format))
    return 0


def cmd_eval(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    doc = data_io.load_results(args.results)
    lib_path = args.library or doc.get("library")
    if not lib_path:
        raise UsageError("--library is required (results file names none)")
    library = data_io.load_library(lib_path)
    relevant = _relevant(args, library)
    by_solver: dict[str, list] = {}
    for rec in doc["pixels"]:
        by_solver.setdefault(rec["solver"], []).append(data_io.solution_from_record(rec))
    report = EvalReport(k=args.k)
    for name, sols in by_solver.items():
        report.rows.append(evaluate(name, sols, relevant, args.k))
    _emit(args, _report_text(report, args.format))
    return 0


COMMANDS = {"unmix": cmd_unmix, "detect": cmd_detect, "synth": cmd_synth, "bench": cmd_bench, "eval": cmd_eval}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"unmixkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except UnmixError as exc:
        print(f"unmixkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
