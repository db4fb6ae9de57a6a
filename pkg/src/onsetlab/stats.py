"""Student-t tail probabilities and Welch's unequal-variance t-test."""

import math
from dataclasses import dataclass

from .errors import DomainError

_CF_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAX_ITER = 10000


def _beta_cf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise DomainError("betainc needs a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_tailed(t, dof):
    """P(|T| >= |t|) for Student's t with ``dof`` (real, > 0) degrees of freedom."""
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(0.5 * dof, 0.5, dof / (dof + t * t))))


def t_cdf(t, dof):
    tail = 0.5 * t_two_tailed(t, dof)
    return 1.0 - tail if t >= 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    dof: float
    p: float


def _mean_var(xs):
    n = len(xs)
    m = math.fsum(xs) / n
    v = math.fsum((x - m) ** 2 for x in xs) / (n - 1)
    return m, v


def welch_t_test(a, b):
    """Two-sample Welch t-test with a two-tailed p-value.

    Two constant samples with equal means give ``t = 0, p = 1``; constant
    samples with different means give an infinite statistic and ``p = 0``.
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if len(a) < 2 or len(b) < 2:
        raise DomainError("Welch's t-test needs at least two samples per group")
    ma, va = _mean_var(a)
    mb, vb = _mean_var(b)
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    if se2 == 0.0:
        dof = float(len(a) + len(b) - 2)
        if ma == mb:
            return TTestResult(0.0, dof, 1.0)
        return TTestResult(math.copysign(math.inf, ma - mb), dof, 0.0)
    t = (ma - mb) / math.sqrt(se2)
    dof = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    return TTestResult(t, dof, t_two_tailed(t, dof))
