"""Medians, attentive/inattentive ratios, Mann-Whitney U and one-way ANOVA.

Everything here is self-contained (stdlib ``math`` plus numpy ranking) so the
reported p-values do not depend on which scipy version happens to be around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import average_ranks

EXACT_MAX_TOTAL = 16


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    method_of_computation: str  # "exact" | "normal_approximation" | "f_distribution"


@dataclass(frozen=True)
class MannWhitneyResult(TestResult):
    u_x: float = math.nan
    u_y: float = math.nan
    n_x: int = 0
    n_y: int = 0


@dataclass(frozen=True)
class AnovaResult(TestResult):
    df_between: int = 0
    df_within: int = 0
    ss_between: float = math.nan
    ss_within: float = math.nan


def median(values) -> float:
    v = sorted(float(x) for x in values)
    if not v:
        raise StatsError("median of an empty sample")
    mid = len(v) // 2
    return v[mid] if len(v) % 2 else (v[mid - 1] + v[mid]) / 2.0


def attn_ratio(attentive_median: float, inattentive_median: float) -> float:
    if inattentive_median == 0:
        raise StatsError("inattentive median is zero; ratio undefined")
    return attentive_median / inattentive_median


def log_positive(values) -> tuple[np.ndarray, int]:
    """Natural log of the strictly positive entries, plus how many were dropped."""
    v = np.asarray(values, dtype=np.float64)
    keep = v > 0
    return np.log(v[keep]), int(v.size - keep.sum())


# --------------------------------------------------------------------------
# Mann-Whitney U
# --------------------------------------------------------------------------

def u_statistics(x, y) -> tuple[float, float]:
    """``(U_x, U_y)``; a tie between an x and a y counts 1/2 to each."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = x.size, y.size
    ranks = average_ranks(np.concatenate([x, y]))
    u_x = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    return u_x, float(n * m - u_x)


def u_null_counts(n: int, m: int) -> list[int]:
    """Number of the C(n+m, n) tie-free labelings giving each U = 0..n*m.

    Standard recursion: the largest observation is either an x (which beats
    every y, adding the current y count to U) or a y (adding nothing).
    """
    # table[j][u] for the current i: counts with i x's and j y's
    table = [[1] for _ in range(m + 1)]
    for i in range(1, n + 1):
        new = [[1]]  # j = 0: U is always 0
        for j in range(1, m + 1):
            size = i * j + 1
            counts = [0] * size
            for u, c in enumerate(table[j]):  # largest is an x: i-1 x's, U += j
                counts[u + j] += c
            for u, c in enumerate(new[j - 1]):  # largest is a y
                counts[u] += c
            new.append(counts)
        table = new
    return table[m]


def _exact_p(u_x: float, n: int, m: int) -> float:
    counts = u_null_counts(n, m)
    total = math.comb(n + m, n)
    u = int(round(u_x))
    lower = sum(counts[: u + 1])
    upper = sum(counts[u:])
    return min(1.0, 2 * min(lower, upper) / total)


def _normal_p(u_x: float, n: int, m: int, pooled: np.ndarray) -> tuple[float, float]:
    N = n + m
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return 0.0, 1.0
    z = (abs(u_x - n * m / 2.0) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    return z, min(1.0, math.erfc(z / math.sqrt(2.0)))


def mann_whitney_two_sided(x, y, method: str = "auto") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test of ``x`` against ``y``.

    ``method="auto"`` enumerates the exact null distribution for tie-free
    samples with ``n + m <= 16`` and otherwise uses the normal approximation
    with tie and continuity corrections.  ``statistic`` is ``U_x``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise StatsError("Mann-Whitney needs two non-empty samples")
    u_x, u_y = u_statistics(x, y)
    pooled = np.concatenate([x, y])
    has_ties = np.unique(pooled).size < pooled.size
    if method == "auto":
        method = "exact" if (n + m <= EXACT_MAX_TOTAL and not has_ties) else "normal_approximation"
    if method == "exact":
        if has_ties:
            raise StatsError("exact Mann-Whitney p is only available without ties")
        p = _exact_p(u_x, n, m)
    elif method in ("normal_approximation", "asymptotic"):
        method = "normal_approximation"
        _, p = _normal_p(u_x, n, m, pooled)
    else:
        raise StatsError(f"unknown method {method!r}")
    return MannWhitneyResult(u_x, p, method, u_x=u_x, u_y=u_y, n_x=n, n_y=m)


# --------------------------------------------------------------------------
# incomplete beta and the F tail
# --------------------------------------------------------------------------

_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for k in range(1, max_iter + 1):
        k2 = 2 * k
        aa = k * (b - k) * x / ((qam + k2) * (a + k2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + k) * (qab + k) * x / ((a + k2) * (qap + k2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise StatsError("betainc needs a, b > 0")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_sf(f: float, df1: float, df2: float) -> float:
    """Survival function of the F distribution."""
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return min(1.0, max(0.0, betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))))


def anova_oneway(groups) -> AnovaResult:
    """One-way ANOVA F test across ``groups`` (a list of samples)."""
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    k = len(groups)
    if k < 2:
        raise StatsError("ANOVA needs at least two groups")
    for i, g in enumerate(groups):
        if g.size < 2:
            raise StatsError(f"group {i} has {g.size} values; ANOVA needs at least 2 per group")
    n_total = sum(g.size for g in groups)
    grand = sum(g.sum() for g in groups) / n_total
    ssb = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    dfb, dfw = k - 1, n_total - k
    if ssw == 0:
        if ssb == 0:
            raise StatsError("ANOVA undefined: no variance within or between groups")
        return AnovaResult(math.inf, 0.0, "f_distribution", dfb, dfw, ssb, ssw)
    f = (ssb / dfb) / (ssw / dfw)
    return AnovaResult(f, f_sf(f, dfb, dfw), "f_distribution", dfb, dfw, ssb, ssw)
