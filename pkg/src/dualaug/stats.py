"""Student-t machinery for paired comparisons of resampled metric values.

The two-tailed p-value for a t statistic with nu degrees of freedom is
I_x(nu/2, 1/2) with x = nu / (nu + t^2), where I_x is the regularized
incomplete beta function.  I_x is evaluated with the modified Lentz
continued fraction, which converges to well below 1e-8 absolute error for
the (a, b, x) ranges a t-test produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_MAX_ITER = 300
_FP_MIN = 1e-300
_EPS = 1e-15


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FP_MIN:
        d = _FP_MIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FP_MIN:
            d = _FP_MIN
        c = 1.0 + aa / c
        if abs(c) < _FP_MIN:
            c = _FP_MIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FP_MIN:
            d = _FP_MIN
        c = 1.0 + aa / c
        if abs(c) < _FP_MIN:
            c = _FP_MIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta CF did not converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("betainc_reg requires a, b > 0")
    if x < 0.0 or x > 1.0:
        raise ValueError("betainc_reg requires x in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Use the fraction on the side where it converges fastest.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: int) -> float:
    """Two-tailed p-value of Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return betainc_reg(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    significant: bool  # at the 0.05 level
    degenerate: bool = False  # zero-variance differences with nonzero mean


def paired_t_test(a: list[float], b: list[float], alpha: float = 0.05) -> TTestResult:
    """Paired two-tailed t-test on samples matched by index.

    t = mean(d) / (std(d) / sqrt(n)) with d = a - b and the n-1 sample
    standard deviation.  Zero-variance differences with nonzero mean are
    reported as t = +/-inf, p = 0 with the degenerate flag set.
    """
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = [float(x) - float(y) for x, y in zip(a, b)]
    mean_d = sum(d) / n
    var_d = sum((v - mean_d) ** 2 for v in d) / (n - 1)
    df = n - 1
    if var_d == 0.0:
        if mean_d == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, significant=False)
        t = math.inf if mean_d > 0 else -math.inf
        return TTestResult(t=t, p=0.0, df=df, significant=True, degenerate=True)
    t = mean_d / math.sqrt(var_d / n)
    p = t_two_tailed_p(t, df)
    return TTestResult(t=t, p=p, df=df, significant=p < alpha)
