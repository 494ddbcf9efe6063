"""Cardinality-constrained unmixing solved exactly by branch-and-bound.

The program is::

    minimise   Z = sqrt((1/M) * sum_j (y_j - sum_i a_i s_ij)^2)
    subject to a_i <= B_i x_i,  a_i >= 0,  x_i in {0, 1}
               sum_i x_i <= P   (or >= P)

Because the square root and the 1/M factor are monotone, nodes are bounded
with the sum of squared residuals; Z is only formed for reporting. Each node
relaxes the binaries: a box-constrained NNLS over every spectrum not yet
fixed out of the model is a valid lower bound for all completions.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import AbundanceSolution, SpectralLibrary, check_pixel, make_solution
from .errors import Infeasible, InvalidConfig
from .solvers import bounded_lstsq

DEFAULT_CAP = 5.0


class Cardinality(str, enum.Enum):
    AT_MOST = "atmost"
    AT_LEAST = "atleast"


@dataclass(frozen=True)
class MinlpConfig:
    p: int = 3
    cardinality_sense: Cardinality = Cardinality.AT_MOST
    abundance_caps: float | tuple | np.ndarray | None = None
    time_limit: float = 60.0
    gap_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cardinality_sense", Cardinality(self.cardinality_sense))
        if self.p < 1:
            raise InvalidConfig("p must be >= 1")
        if not self.time_limit > 0:
            raise InvalidConfig("time_limit must be > 0")
        if self.gap_tol < 0:
            raise InvalidConfig("gap_tol must be >= 0")
        if self.abundance_caps is not None and np.any(np.asarray(self.abundance_caps, float) <= 0):
            raise InvalidConfig("abundance caps must be > 0")

    def caps(self, n: int) -> np.ndarray:
        if self.abundance_caps is None:
            return np.full(n, DEFAULT_CAP)
        caps = np.asarray(self.abundance_caps, dtype=np.float64)
        if caps.ndim == 0:
            return np.full(n, float(caps))
        if caps.size != n:
            raise InvalidConfig(f"{caps.size} abundance caps for {n} spectra")
        return caps.copy()


@dataclass
class MinlpResult:
    solution: AbundanceSolution
    objective: float
    proven_optimal: bool
    nodes_explored: int
    gap: float
    included: list[int] = field(default_factory=list)
    trace: list | None = None


def _box_fit(S, y, caps, idx):
    """Box-constrained NNLS restricted to columns ``idx``; returns (dense a, ssr)."""
    a = np.zeros(S.shape[1])
    if len(idx):
        idx = np.asarray(idx)
        a[idx] = bounded_lstsq(S[:, idx], y, caps[idx], max_iter=10 * len(idx) + 10)[0]
    r = y - S @ a
    return a, float(r @ r)


def minlp_unmix(library: SpectralLibrary, pixel, config: MinlpConfig | None = None,
                record_trace: bool = False) -> MinlpResult:
    """Globally optimal abundances under a model-size constraint.

    With ``AT_MOST`` the search is a depth-first branch-and-bound over the
    inclusion binaries, branching on the free spectrum with the largest
    relaxed abundance (include branch first, which is also the better-bound
    child). With ``AT_LEAST`` the constraint never binds: setting every
    ``x_i = 1`` is allowed because ``a_i`` may still be zero, so the answer is
    the box-constrained NNLS over the whole library.

    When ``time_limit`` expires the incumbent is returned with
    ``proven_optimal=False`` and the relative gap on Z.
    """
    config = config or MinlpConfig()
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    S = library.spectra
    M, N = S.shape
    caps = config.caps(N)
    p = config.p
    trace = [] if record_trace else None

    def z_of(ssr):
        return math.sqrt(max(ssr, 0.0) / M)

    def finish(a, ssr, proven, nodes, gap, included):
        sol = make_solution(library, y, a, runtime=time.perf_counter() - t0,
                            info={"nodes": nodes, "p": p, "sense": config.cardinality_sense.value})
        return MinlpResult(sol, sol.rmse, proven, nodes, gap, sorted(included), trace)

    if config.cardinality_sense is Cardinality.AT_LEAST:
        if p > N:
            raise Infeasible(f"at least {p} spectra requested from a library of {N}")
        a, ssr = _box_fit(S, y, caps, np.arange(N))
        if trace is not None:
            trace.append(((), tuple(range(N)), ssr))
        return finish(a, ssr, True, 1, 0.0, range(N))

    # incumbent from the p largest abundances of an uncapped NNLS solve
    full = bounded_lstsq(S, y)[0]
    order = sorted((i for i in range(N) if full[i] > 0), key=lambda i: (-full[i], i))
    seed = sorted(order[:p])
    inc_a, inc_ssr = _box_fit(S, y, caps, seed)
    inc_x = [i for i in seed]

    shrink = (1.0 - config.gap_tol) ** 2 if config.gap_tol < 1 else 0.0
    all_idx = np.arange(N)

    def relax(excluded):
        keep = all_idx[~excluded]
        return _box_fit(S, y, caps, keep)

    root_excl = np.zeros(N, dtype=bool)
    root_a, root_ssr = relax(root_excl)
    # stack entries: (excluded mask, included tuple, relaxed a or None, bound ssr)
    stack = [(root_excl, (), root_a, root_ssr)]
    nodes = 0
    lb_pruned = math.inf
    timed_out = False
    while stack:
        if time.perf_counter() - t0 > config.time_limit:
            timed_out = True
            break
        excluded, included, a, bound = stack.pop()
        if bound >= inc_ssr * shrink:
            if bound < inc_ssr:
                lb_pruned = min(lb_pruned, bound)
            continue
        if a is None:
            a, bound = relax(excluded)
        nodes += 1
        if trace is not None:
            trace.append((tuple(np.flatnonzero(excluded)), included, bound))
        if bound >= inc_ssr * shrink:
            if bound < inc_ssr:
                lb_pruned = min(lb_pruned, bound)
            continue
        support = set(np.flatnonzero(a > 0).tolist())
        chosen = support | set(included)
        if len(chosen) <= p:
            inc_a, inc_ssr, inc_x = a, bound, sorted(chosen)
            continue
        if len(included) == p:
            leaf_a, leaf_ssr = _box_fit(S, y, caps, list(included))
            if trace is not None:
                trace.append((tuple(i for i in range(N) if i not in included), included, leaf_ssr))
            if leaf_ssr < inc_ssr:
                inc_a, inc_ssr, inc_x = leaf_a, leaf_ssr, sorted(included)
            continue
        free = [i for i in support if i not in included]
        j = max(free, key=lambda i: (a[i], -i))
        excl_child = excluded.copy()
        excl_child[j] = True
        stack.append((excl_child, included, None, bound))
        stack.append((excluded, tuple(sorted(included + (j,))), a, bound))

    inc_z = z_of(inc_ssr)
    if timed_out:
        open_lb = min([b for _, _, _, b in stack] + [lb_pruned, inc_ssr])
    else:
        open_lb = min(lb_pruned, inc_ssr)
    gap = 0.0 if inc_z == 0 else max(0.0, (inc_z - z_of(open_lb)) / inc_z)
    proven = not timed_out and gap == 0.0
    return finish(inc_a, inc_ssr, proven, nodes, gap, inc_x)
