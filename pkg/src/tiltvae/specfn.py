"""Log-domain special functions: Kummer's M, half-order Laguerre, chi moments.

Everything here is evaluated in log space because the normalization constant
of the tilted Gaussian contains a factor that scales like exp(tau^2 / 2),
which overflows double precision long before the tilt values this package
has to support (tau up to ~100, series arguments up to ~2e4).

All functions are pure and thread-safe.
"""

import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError

# Largest log-magnitude that still converts to a finite double.
_OVERFLOW_LOG = math.log(sys.float_info.max)

# Series truncation: stop once the current term is this many nats below the
# running log-sum (and past the peak); hard cap on the number of terms.
_TAIL_NATS = 40.0
_MAX_TERMS = 10**6
_CHUNK = 1024

# Crossover to the large-argument asymptotic expansion. The expansion is
# only used when its own truncation check certifies the accuracy; otherwise
# the direct series is kept (it is overflow-safe at any argument size).
_ASYMP_Z_MIN = 700.0
_ASYMP_MAX_TERMS = 200
_ASYMP_TAIL = 1e-13


@dataclass(frozen=True)
class LogScaled:
    """A real number carried as (sign, log of absolute value).

    ``value = sign * exp(log_mag)``; ``log_mag`` is ignored when sign is 0.
    Survives intermediates far beyond the double-precision overflow point.
    """

    sign: int
    log_mag: float

    @classmethod
    def from_float(cls, x: float) -> "LogScaled":
        if x == 0.0:
            return cls(0, -math.inf)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    def to_float(self) -> float:
        """Convert back to a plain double. Exact only below the overflow
        threshold of the native format; raises OverflowError otherwise."""
        if self.sign == 0:
            return 0.0
        if self.log_mag >= _OVERFLOW_LOG:
            raise OverflowError(
                f"log-magnitude {self.log_mag:.6g} exceeds the native float range"
            )
        return self.sign * math.exp(self.log_mag)

    def log(self) -> float:
        """Natural log of a positive value."""
        if self.sign <= 0:
            raise DomainError(f"log of non-positive log-scaled value (sign={self.sign})")
        return self.log_mag

    def __mul__(self, other: "LogScaled") -> "LogScaled":
        sign = self.sign * other.sign
        if sign == 0:
            return LogScaled(0, -math.inf)
        return LogScaled(sign, self.log_mag + other.log_mag)

    def __add__(self, other: "LogScaled") -> "LogScaled":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        hi, lo = (self, other) if self.log_mag >= other.log_mag else (other, self)
        if self.sign == other.sign:
            return LogScaled(self.sign, hi.log_mag + math.log1p(math.exp(lo.log_mag - hi.log_mag)))
        diff = lo.log_mag - hi.log_mag
        if diff == 0.0:
            return LogScaled(0, -math.inf)
        return LogScaled(hi.sign, hi.log_mag + math.log1p(-math.exp(diff)))

    def __neg__(self) -> "LogScaled":
        return LogScaled(-self.sign, self.log_mag)


def _log_series_pos(a: float, b: float, z: float) -> float:
    """log of sum_{n>=0} t_n with t_0 = 1, t_{n+1}/t_n = (a+n) z / ((b+n)(n+1)).

    Requires a > 0, b > 0, z > 0 so every term is positive; summed as a
    chunked log-sum-exp so no intermediate can overflow.
    """
    log_z = math.log(z)
    run = 0.0  # log-sum including the n = 0 term
    log_t = 0.0
    n0 = 0
    while n0 < _MAX_TERMS:
        n = np.arange(n0, n0 + _CHUNK, dtype=np.float64)
        steps = np.log(a + n) + log_z - np.log(b + n) - np.log1p(n)
        log_terms = log_t + np.cumsum(steps)
        m = max(run, float(log_terms.max()))
        run = m + math.log(math.exp(run - m) + float(np.exp(log_terms - m).sum()))
        log_t = float(log_terms[-1])
        n0 += _CHUNK
        if steps[-1] < 0.0 and log_t < run - _TAIL_NATS:
            return run
    raise ConvergenceError("series did not converge", a=a, b=b, z=z)


def _log_series_signed(a: float, b: float, z: float) -> LogScaled:
    """Sign-tracked series for the cases where terms can change sign
    (a <= 0 after the Kummer transformation, or negative non-integer b).

    Terminates exactly when a is a non-positive integer; otherwise uses the
    same 40-nat tail rule on the larger of the two signed partial sums.
    """
    pos = 0.0  # log-sum of positive terms, seeded with t_0 = 1
    neg = -math.inf
    log_t, sign_t = 0.0, 1
    for n in range(_MAX_TERMS):
        num = (a + n) * z
        if num == 0.0:
            break
        den = (b + n) * (n + 1)
        ratio = num / den
        log_t += math.log(abs(ratio))
        if ratio < 0:
            sign_t = -sign_t
        if sign_t > 0:
            pos = np.logaddexp(pos, log_t)
        else:
            neg = np.logaddexp(neg, log_t)
        if n > abs(z) + abs(a) + abs(b) and log_t < max(pos, neg) - _TAIL_NATS:
            break
    else:
        raise ConvergenceError("series did not converge", a=a, b=b, z=z)
    return LogScaled(1, float(pos)) + LogScaled(-1, float(neg))


def _log_kummer_asymptotic(a: float, b: float, z: float):
    """Large-z expansion M(a,b,z) ~ Gamma(b)/Gamma(a) e^z z^(a-b) sum_k c_k,
    c_k = (b-a)^(k) (1-a)^(k) / (k! z^k).

    Returns (ok, LogScaled). ``ok`` is False when optimal truncation cannot
    certify a relative tail below the accuracy target, in which case the
    caller falls back to the direct series.
    """
    c = 1.0
    s = 1.0
    ok = False
    for k in range(_ASYMP_MAX_TERMS):
        c_next = c * (b - a + k) * (1 - a + k) / ((k + 1) * z)
        if abs(c_next) >= abs(c):
            ok = abs(c) <= _ASYMP_TAIL * abs(s)
            break
        c = c_next
        s += c
        if abs(c) <= 1e-17 * abs(s):
            ok = True
            break
    else:
        ok = abs(c) <= _ASYMP_TAIL * abs(s)
    if not ok or s <= 0.0:
        return False, None
    lead = math.lgamma(b) - math.lgamma(a) + z + (a - b) * math.log(z)
    return True, LogScaled(1, lead + math.log(s))


def _kummer_core(a: float, b: float, z: float) -> LogScaled:
    """Dispatch for z >= 0: positive-term series, signed series, or asymptotic."""
    if z == 0.0:
        return LogScaled(1, 0.0)
    if a <= 0.0 or b < 0.0:
        return _log_series_signed(a, b, z)
    if z > _ASYMP_Z_MIN:
        ok, val = _log_kummer_asymptotic(a, b, z)
        if ok:
            return val
    return LogScaled(1, _log_series_pos(a, b, z))


def log_kummer_m(a: float, b: float, z: float) -> LogScaled:
    """Kummer's confluent hypergeometric M(a, b, z) in log-scaled form.

    M(a,b,z) = sum_n a^(n) z^n / (b^(n) n!) with a^(n) the rising factorial.
    For z < 0 the reflection M(a,b,z) = e^z M(b-a, b, -z) is applied first, so
    that on the supported domain every summed term is non-negative and the
    result carries no cancellation error.
    """
    if b <= 0.0 and b == math.floor(b):
        raise DomainError(f"b={b} is a non-positive integer; M(a,b,z) has a pole")
    if a <= 0.0:
        raise DomainError(f"a={a} must be positive")
    if z < 0.0:
        return LogScaled(1, z) * _kummer_core(b - a, b, -z)
    return _kummer_core(a, b, z)


def log_gamma_ratio(p: float, q: float) -> float:
    """log(Gamma(p) / Gamma(q)) for positive p, q."""
    if p <= 0.0 or q <= 0.0:
        raise DomainError(f"gamma ratio needs positive arguments, got p={p}, q={q}")
    return math.lgamma(p) - math.lgamma(q)


def chi_mean(d: int) -> float:
    """Mean of a central chi distribution with d degrees of freedom:
    sqrt(2) Gamma((d+1)/2) / Gamma(d/2)."""
    if d < 1:
        raise DomainError(f"chi distribution needs d >= 1, got {d}")
    return math.sqrt(2.0) * math.exp(log_gamma_ratio((d + 1) / 2, d / 2))


def laguerre_half(alpha: float, x: float) -> float:
    """Generalized Laguerre function of order 1/2, L_{1/2}^(alpha)(x), x <= 0.

    Defined through the gamma-extended binomial coefficient:
        L_{1/2}^(alpha)(x) = [Gamma(alpha+3/2) / (Gamma(3/2) Gamma(alpha+1))]
                             * M(-1/2, alpha+1, x).
    sqrt(pi/2) times this value is the mean of a noncentral chi variable with
    d = 2(alpha+1) degrees of freedom and noncentrality sqrt(-2x).
    """
    if x > 0.0:
        raise DomainError(f"laguerre_half is only supported for x <= 0, got x={x}")
    if alpha <= -1.0:
        raise DomainError(f"alpha={alpha} must exceed -1")
    log_binom = log_gamma_ratio(alpha + 1.5, 1.5) - math.lgamma(alpha + 1.0)
    if x == 0.0:
        return math.exp(log_binom)
    # Reflected series: M(-1/2, alpha+1, x) = e^x M(alpha+3/2, alpha+1, -x),
    # all terms positive for x < 0.
    m = LogScaled(1, x) * _kummer_core(alpha + 1.5, alpha + 1.0, -x)
    return (LogScaled(1, log_binom) * m).to_float()
