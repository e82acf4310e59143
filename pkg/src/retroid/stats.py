"""Two-sample t-test on accuracy series, with a self-contained t distribution.

The two-tailed p-value is computed through the regularized incomplete beta
function: P(|T| > |t|) = I_x(df/2, 1/2) with x = df / (df + t^2). The
incomplete beta uses a modified Lentz continued fraction, accurate to well
below 1e-10 over the df range used here.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

from .errors import ValidationError

_MAX_ITER = 300
_FPMIN = 1e-300
_EPS = 1e-15


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ValidationError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValidationError(f"beta parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Use the fraction on the side where it converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    """CDF of Student's t distribution with df degrees of freedom."""
    if df <= 0:
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def two_tailed_p(t: float, df: float) -> float:
    """P(|T| > |t|) under Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t_stat: float
    p_value: float
    df: float


def _mean_ss(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    ss = sum((v - mean) ** 2 for v in values)
    return mean, ss


def ttest_two_sample(
    a: Sequence[float], b: Sequence[float], welch: bool = False
) -> TTestResult:
    """Unpaired two-sample t-test, two-tailed.

    Default is Student's pooled-variance form with df = n1 + n2 - 2; pass
    ``welch=True`` for the unequal-variance variant. Zero pooled variance
    degenerates to t=0, p=1 when the means agree and an infinite-t sentinel
    with p=0 when they do not.
    """
    if len(a) < 2 or len(b) < 2:
        raise ValidationError("each sample needs at least two observations")
    na, nb = len(a), len(b)
    mean_a, ss_a = _mean_ss(a)
    mean_b, ss_b = _mean_ss(b)
    diff = mean_a - mean_b
    if welch:
        var_a = ss_a / (na - 1)
        var_b = ss_b / (nb - 1)
        se_sq = var_a / na + var_b / nb
        if se_sq == 0.0:
            if diff == 0.0:
                return TTestResult(0.0, 1.0, float(na + nb - 2))
            return TTestResult(math.copysign(math.inf, diff), 0.0, float(na + nb - 2))
        df = se_sq**2 / (
            (var_a / na) ** 2 / (na - 1) + (var_b / nb) ** 2 / (nb - 1)
        )
        t = diff / math.sqrt(se_sq)
        return TTestResult(t, two_tailed_p(t, df), df)
    df = float(na + nb - 2)
    pooled_var = (ss_a + ss_b) / df
    se_sq = pooled_var * (1.0 / na + 1.0 / nb)
    if se_sq == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, 1.0, df)
        return TTestResult(math.copysign(math.inf, diff), 0.0, df)
    t = diff / math.sqrt(se_sq)
    return TTestResult(t, two_tailed_p(t, df), df)
