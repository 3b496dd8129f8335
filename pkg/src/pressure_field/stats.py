"""Significance tests and convergence instrumentation.

Stdlib only. The chi-square tail uses the regularized incomplete gamma
function (series below a + 1, Lentz continued fraction above), accurate to
about 1e-8 relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence

from .engine import TickReport
from .records import TrialRecord

_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 10_000


def wilson_ci(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    z = NormalDist().inv_cdf(1 - (1 - confidence) / 2)
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def _hypergeom_pmf(k: int, row1: int, col1: int, total: int) -> float:
    return math.comb(col1, k) * math.comb(total - col1, row1 - k) / math.comb(total, row1)


def fisher_exact_2x2(a: int, b: int, c: int, d: int) -> float:
    """Two-sided p: total mass of tables no more likely than the observed one.

    Table layout is [[a, b], [c, d]].
    """
    if min(a, b, c, d) < 0:
        raise ValueError("cells must be non-negative")
    row1, col1, total = a + b, a + c, a + b + c + d
    if row1 == 0 or col1 == 0 or row1 == total or col1 == total:
        raise ValueError("degenerate margins")
    observed = _hypergeom_pmf(a, row1, col1, total)
    lo, hi = max(0, row1 + col1 - total), min(row1, col1)
    cutoff = observed * (1 + 1e-7)
    p = sum(pk for k in range(lo, hi + 1) if (pk := _hypergeom_pmf(k, row1, col1, total)) <= cutoff)
    return min(p, 1.0)


def _gamma_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("need a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1:
        return 1.0 - _gamma_series(a, x)
    return _gamma_continued_fraction(a, x)


def chi2_sf(statistic: float, dof: int) -> float:
    return regularized_gamma_q(dof / 2, statistic / 2)


def chi_square_independence(table: Sequence[Sequence[int]]) -> tuple[float, float]:
    """Pearson chi-square on a k x 2 contingency table."""
    rows = [list(r) for r in table]
    if len(rows) < 2 or any(len(r) != 2 for r in rows):
        raise ValueError("need a k x 2 table with k >= 2")
    if any(v < 0 for r in rows for v in r):
        raise ValueError("counts must be non-negative")
    row_sums = [sum(r) for r in rows]
    col_sums = [sum(r[j] for r in rows) for j in range(2)]
    total = sum(row_sums)
    if total == 0 or 0 in row_sums or 0 in col_sums:
        raise ValueError("degenerate margins")
    statistic = 0.0
    for r, rs in zip(rows, row_sums):
        for j in range(2):
            expected = rs * col_sums[j] / total
            statistic += (r[j] - expected) ** 2 / expected
    return statistic, chi2_sf(statistic, len(rows) - 1)


def cohens_h(p1: float, p2: float) -> float:
    for p in (p1, p2):
        if not 0 <= p <= 1:
            raise ValueError("proportions must lie in [0, 1]")
    return 2 * math.asin(math.sqrt(p1)) - 2 * math.asin(math.sqrt(p2))


# -- pressure instrumentation -----------------------------------------------------


@dataclass
class TransitionStats:
    improved: int = 0
    degraded: int = 0
    unchanged: int = 0
    mean_improvement: float | None = None

    @property
    def total(self) -> int:
        return self.improved + self.degraded + self.unchanged


def analyze_transitions(histories: Iterable[Sequence[float]]) -> TransitionStats:
    stats = TransitionStats()
    gains = 0.0
    for history in histories:
        for prev, cur in zip(history, history[1:]):
            if cur < prev:
                stats.improved += 1
                gains += prev - cur
            elif cur > prev:
                stats.degraded += 1
            else:
                stats.unchanged += 1
    if stats.improved:
        stats.mean_improvement = gains / stats.improved
    return stats


@dataclass
class ConvergenceCheck:
    P0: float
    delta_min: float
    epsilon: float
    n_regions: int
    observed_active_ticks: int
    min_tick_drop_ratio: float

    @property
    def bound(self) -> float:
        margin = self.delta_min - (self.n_regions - 1) * self.epsilon
        return self.P0 / margin if margin > 0 else math.inf

    @property
    def holds(self) -> bool:
        return self.observed_active_ticks <= self.bound

    @property
    def parallel_holds(self) -> bool:
        """Each tick with K' applied patches dropped pressure by >= K' * delta_min."""
        return self.min_tick_drop_ratio >= 1 - 1e-9


def convergence_check(record: TrialRecord, reports: Sequence[TickReport]) -> ConvergenceCheck | None:
    """Measure the convergence-bound constants for one pressure-field run.

    Returns None when no patch was applied (the bound is undefined).
    """
    applied = [vp for r in reports for vp in r.applied]
    if not applied:
        return None
    delta_min = min(abs(vp.actual_delta) for vp in applied)
    epsilon = 0.0
    ratios = []
    active_ticks = 0
    for report in reports:
        if not report.applied:
            continue
        active_ticks += 1
        touched = {vp.patch.region_id for vp in report.applied}
        for j, (before, after) in enumerate(zip(report.region_pressures, report.region_pressures_after)):
            if j not in touched:
                epsilon = max(epsilon, abs(after - before))
        drop = report.pressure_before - report.pressure_after
        ratios.append(drop / (len(report.applied) * delta_min))
    return ConvergenceCheck(
        P0=record.pressure_history[0],
        delta_min=delta_min,
        epsilon=epsilon,
        n_regions=len(reports[0].region_pressures),
        observed_active_ticks=active_ticks,
        min_tick_drop_ratio=min(ratios),
    )


def basin_quality_holds(record: TrialRecord, n_regions: int, tau_act: float) -> bool:
    """Quiescent runs must end below n * tau_act; other terminations pass vacuously."""
    if record.termination != "quiescent":
        return True
    return record.pressure_history[-1] < n_regions * tau_act
