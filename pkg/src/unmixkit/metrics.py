"""Evaluation measures: target detection rate, precision at k, MAP, and benchmarking."""
from __future__ import annotations

import csv
import io
import statistics
import time
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import REFLECTANCE, AbundanceSolution, SpectralLibrary
from .errors import EmptyInput, InvalidK, UnmixError

REPORT_COLUMNS = ("technique", "mean_rmse", "rmse_units", "mean_runtime_s", "detection_pct", "map_at_k", "failures")


@dataclass(frozen=True)
class RankedModel:
    """Library indices of one fitted model, ordered by abundance (desc, ties by index).

    ``relevant`` is the target group: the indices counted as a detection.
    """

    entries: tuple[tuple[int, float], ...]
    relevant: frozenset[int]

    def __post_init__(self):
        ents = tuple((int(i), float(a)) for i, a in self.entries)
        if any(a <= 0 for _, a in ents):
            raise ValueError("ranked abundances must be > 0")
        ents = tuple(sorted(ents, key=lambda e: (-e[1], e[0])))
        object.__setattr__(self, "entries", ents)
        object.__setattr__(self, "relevant", frozenset(int(i) for i in self.relevant))

    @classmethod
    def from_coefficients(cls, coefficients, relevant: Iterable[int]) -> "RankedModel":
        return cls(tuple((i, a) for i, a in dict(coefficients).items() if a > 0), frozenset(relevant))

    @classmethod
    def from_solution(cls, solution: AbundanceSolution, relevant: Iterable[int]) -> "RankedModel":
        return cls.from_coefficients(solution.coefficients, relevant)

    def hits(self) -> list[bool]:
        return [i in self.relevant for i, _ in self.entries]


def target_indices(library: SpectralLibrary, category: str | None = None,
                   names: Sequence[str] | None = None) -> frozenset[int]:
    """Indices matching a mineral category and/or an explicit set of spectrum names."""
    out: set[int] = set()
    if category is not None:
        out.update(library.indices_in_category(category))
    if names is not None:
        out.update(library.index_of(n) for n in names)
    return frozenset(out)


def detection_hit(model: RankedModel) -> bool:
    return any(model.hits())


def detection_percentage(models: Sequence[RankedModel]) -> float:
    if not models:
        raise EmptyInput("no models to score")
    return sum(detection_hit(m) for m in models) / len(models)


def precision_at_k(model: RankedModel, k: int) -> float:
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    return sum(model.hits()[:k]) / k


def _ap(model: RankedModel, k: int) -> Fraction:
    # exact rational arithmetic so results are correctly rounded once
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    precs = []
    found = 0
    for i, h in enumerate(model.hits()[:k], start=1):
        if h:
            found += 1
            precs.append(Fraction(found, i))
    return sum(precs, Fraction(0)) / len(precs) if precs else Fraction(0)


def average_precision(model: RankedModel, k: int) -> float:
    """Mean of precision@i over the target positions i <= k (0 with none)."""
    return float(_ap(model, k))


def mean_average_precision(models: Sequence[RankedModel], k: int) -> float:
    if not models:
        raise EmptyInput("no models to score")
    return float(sum((_ap(m, k) for m in models), Fraction(0)) / len(models))


@dataclass
class ReportRow:
    technique: str
    mean_rmse: float
    rmse_units: str
    mean_runtime_s: float
    detection_pct: float
    map_at_k: float
    failures: int = 0

    @property
    def comparable(self) -> bool:
        return self.rmse_units == REFLECTANCE


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    k: int = 1
    solutions: dict[str, list] = field(default_factory=dict, repr=False, compare=False)

    def row(self, technique: str) -> ReportRow:
        for r in self.rows:
            if r.technique == technique:
                return r
        raise KeyError(technique)

    def to_dict(self) -> dict:
        return {"k": self.k, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(rows=[ReportRow(**r) for r in d.get("rows", [])], k=int(d.get("k", 1)))

    def to_csv(self, runtime: bool = True) -> str:
        cols = [c for c in REPORT_COLUMNS if runtime or c != "mean_runtime_s"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in cols])
        return buf.getvalue()


def _timed(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def evaluate(technique: str, solutions: Sequence[AbundanceSolution | None], relevant: Iterable[int],
             k: int, runtimes: Sequence[float] | None = None) -> ReportRow:
    """Aggregate one technique's per-pixel solutions; ``None`` marks a failure."""
    relevant = frozenset(relevant)
    ok = [s for s in solutions if s is not None]
    failures = len(solutions) - len(ok)
    if not ok:
        return ReportRow(technique, float("nan"), REFLECTANCE, float("nan"), 0.0, 0.0, failures)
    models = [RankedModel.from_solution(s, relevant) for s in ok]
    times = runtimes if runtimes is not None else [s.runtime for s in ok]
    return ReportRow(
        technique=technique,
        mean_rmse=float(np.mean([s.rmse for s in ok])),
        rmse_units=ok[0].units,
        mean_runtime_s=float(np.mean(times)),
        detection_pct=detection_percentage(models),
        map_at_k=mean_average_precision(models, k),
        failures=failures,
    )


def benchmark(solvers: Sequence[tuple[str, Callable]], pixels: Sequence, library: SpectralLibrary,
              relevant: Iterable[int] = (), k: int = 5, repeats: int = 3) -> EvalReport:
    """Run every solver on every pixel and aggregate into an :class:`EvalReport`.

    Each solver is a ``(name, fn)`` pair with ``fn(library, pixel)`` returning
    an :class:`AbundanceSolution`. Runtime per (solver, pixel) is the median
    wall-clock time of ``repeats`` calls. Solver errors are counted in the
    row's ``failures`` instead of aborting the run.
    """
    if not solvers or not pixels:
        raise EmptyInput("benchmark needs at least one solver and one pixel")
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    relevant = frozenset(relevant)
    report = EvalReport(k=k)
    for name, fn in solvers:
        sols: list[AbundanceSolution | None] = []
        times = []
        for px in pixels:
            try:
                sol, dt = _timed(lambda: fn(library, px), repeats)
            except UnmixError:
                sols.append(None)
                continue
            sol.runtime = dt
            sols.append(sol)
            times.append(dt)
        report.rows.append(evaluate(name, sols, relevant, k, times))
        report.solutions[name] = sols
    return report
