"""Small statistics toolkit used by the case studies.

Scalar k-means assigns drivers to lanes by desired velocity; the paired
t-test quantifies before/after and treatment/control differences. The
Student-t tail probability is computed through the regularized incomplete
beta function (continued-fraction evaluation), so the package has no
dependency on a stats library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


def kmeans_1d(values: Sequence[float], k: int) -> tuple[list[int], list[float]]:
    """Lloyd's algorithm on scalars with deterministic quantile seeding.

    Centroids start at the (2i+1)/(2k) quantiles of the sorted data and are
    iterated to a fixed point; ties in the assignment go to the lower
    centroid index. Returns (assignments, centroids) with centroids in
    ascending order.
    """
    vals = [float(v) for v in values]
    if k < 1:
        raise ValueError("k must be >= 1")
    if not vals:
        raise ValueError("values must be nonempty")
    if k > len(vals):
        raise ValueError(f"k={k} exceeds the number of values ({len(vals)})")

    ordered = sorted(vals)
    n = len(ordered)
    centroids = [_quantile(ordered, (2 * i + 1) / (2 * k)) for i in range(k)]

    assign = [0] * n
    for _ in range(1000):
        new_assign = [_nearest(centroids, v) for v in ordered]
        sums = [0.0] * k
        counts = [0] * k
        for v, c in zip(ordered, new_assign):
            sums[c] += v
            counts[c] += 1
        new_centroids = [sums[c] / counts[c] if counts[c] else centroids[c]
                         for c in range(k)]
        if new_assign == assign and new_centroids == centroids:
            break
        assign, centroids = new_assign, new_centroids

    # Map assignments back to the caller's ordering.
    by_value: dict[float, list[int]] = {}
    for v, c in zip(ordered, assign):
        by_value.setdefault(v, []).append(c)
    out = [by_value[v].pop(0) for v in vals]
    return out, centroids


def _quantile(ordered: Sequence[float], q: float) -> float:
    n = len(ordered)
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return ordered[lo] * (1.0 - frac) + ordered[hi] * frac


def _nearest(centroids: Sequence[float], v: float) -> int:
    best, best_d = 0, abs(v - centroids[0])
    for i in range(1, len(centroids)):
        d = abs(v - centroids[i])
        if d < best_d:
            best, best_d = i, d
    return best


def cluster_sse(values: Sequence[float], assign: Sequence[int], k: int) -> float:
    """Within-cluster sum of squared deviations for a given assignment."""
    sums = [0.0] * k
    counts = [0] * k
    for v, c in zip(values, assign):
        sums[c] += v
        counts[c] += 1
    means = [sums[c] / counts[c] if counts[c] else 0.0 for c in range(k)]
    return sum((v - means[c]) ** 2 for v, c in zip(values, assign))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int


def paired_t_test(x: Sequence[float], y: Sequence[float]) -> TTestResult:
    """Dependent t-test for paired samples, two-sided p value.

    Degenerate samples with zero variance of the differences give p = 1 when
    the mean difference is also zero and p = 0 (with t at signed infinity)
    otherwise.
    """
    if len(x) != len(y):
        raise ValueError("paired samples must have equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two pairs")
    d = [float(a) - float(b) for a, b in zip(x, y)]
    mean = sum(d) / n
    var = sum((v - mean) ** 2 for v in d) / (n - 1)
    df = n - 1
    if var == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df)
    t = mean / math.sqrt(var / n)
    return TTestResult(t=t, p=student_t_two_sided(t, df), df=df)


def student_t_two_sided(t: float, df: int) -> float:
    """P(|T| >= |t|) for T Student-t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_regularized(0.5 * df, 0.5, x)


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # The continued fraction converges fast for x < (a + 1) / (a + b + 2);
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _betacf(a: float, b: float, x: float, max_iter: int = 300,
            eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")
