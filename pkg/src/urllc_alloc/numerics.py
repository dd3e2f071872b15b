"""Special functions and scalar root/minimum finders used throughout the package."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

from scipy.special import ndtri

from .errors import BracketError, ConvergenceError, DomainError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# below this order the leading Poisson term is formed directly, above it in log space
_PLAIN_SERIES_MAX_N = 30


@dataclass(frozen=True)
class ToleranceConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise DomainError(f"abs_tol must be positive, got {self.abs_tol}")
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be positive, got {self.rel_tol}")
        # reliability targets sit near 1e-8, so anything looser is useless downstream
        if self.rel_tol > 1e-6:
            raise DomainError(f"rel_tol may not be looser than 1e-6, got {self.rel_tol}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {self.max_iter}")


DEFAULT_TOL = ToleranceConfig()


def gaussian_q(x: float) -> float:
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return 0.5 * math.erfc(x / _SQRT2)


def inverse_gaussian_q(p: float) -> float:
    """Return x with Q(x) = p.

    Starts from the normal quantile and applies Newton steps on log Q, which
    keeps full relative accuracy deep in the tail (p ~ 1e-300).
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"inverse_gaussian_q needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    x = -float(ndtri(p))
    for _ in range(3):
        q = gaussian_q(x)
        if q <= 0.0:
            break
        dens = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        if x > 0:
            step = (math.log(q) - math.log(p)) * q / dens
        else:
            step = (q - p) / dens
        x += step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def _leading_poisson_term(k: int, x: float) -> float:
    """e^{-x} x^k / k! without overflow."""
    if k <= _PLAIN_SERIES_MAX_N and x < 700.0:
        return math.exp(-x) * x**k / math.factorial(k)
    return math.exp(-x + k * math.log(x) - math.lgamma(k + 1.0))


def _gamma_pq(n: int, x: float) -> Tuple[float, float]:
    """(P(n, x), Q(n, x)) where the smaller of the two is computed without cancellation."""
    if x == 0.0:
        return 0.0, 1.0
    if x < n + 1.0:
        # P = e^{-x} sum_{k>=n} x^k/k!, all terms positive
        term = _leading_poisson_term(n, x)
        total = term
        k = n
        while True:
            k += 1
            term *= x / k
            total += term
            if term <= 1e-17 * total:
                break
        p = min(total, 1.0)
        return p, 1.0 - p
    # Q = e^{-x} sum_{k<n} x^k/k!, summed downward from k = n - 1
    term = _leading_poisson_term(n - 1, x)
    total = term
    for k in range(n - 1, 0, -1):
        term *= k / x
        total += term
        if term <= 1e-17 * total:
            break
    q = min(total, 1.0)
    return 1.0 - q, q


def regularized_gamma_p(n: int, x: float) -> float:
    """P(n, x) = 1 - e^{-x} sum_{k<n} x^k / k!  (CDF of Gamma(n, 1) at x)."""
    if n < 1 or int(n) != n:
        raise DomainError(f"regularized_gamma_p needs integer n >= 1, got {n}")
    if not x >= 0.0:
        raise DomainError(f"regularized_gamma_p needs x >= 0, got {x}")
    if math.isinf(x):
        return 1.0
    return _gamma_pq(int(n), float(x))[0]


def regularized_gamma_q(n: int, x: float) -> float:
    """Complement 1 - P(n, x), accurate when it is tiny."""
    if n < 1 or int(n) != n:
        raise DomainError(f"regularized_gamma_q needs integer n >= 1, got {n}")
    if not x >= 0.0:
        raise DomainError(f"regularized_gamma_q needs x >= 0, got {x}")
    if math.isinf(x):
        return 0.0
    return _gamma_pq(int(n), float(x))[1]


def find_root_monotone(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    cfg: ToleranceConfig = DEFAULT_TOL,
) -> float:
    """Bisection on a monotone function bracketing zero on [lo, hi]."""
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = f(hi)
    if fhi == 0.0:
        return hi
    if (flo < 0) == (fhi < 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        fmid = f(mid)
        if abs(fmid) <= cfg.abs_tol:
            return mid
        if (fmid < 0) == (flo < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo <= cfg.rel_tol * abs(0.5 * (lo + hi)):
            return 0.5 * (lo + hi)
    raise ConvergenceError(f"find_root_monotone did not converge in {cfg.max_iter} iterations")


def minimize_unimodal(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    cfg: ToleranceConfig = DEFAULT_TOL,
) -> Tuple[float, float]:
    """Golden-section search; returns (argmin, min).

    Endpoints are compared against the interior estimate at the end, so a
    function monotone on [lo, hi] returns the boundary exactly.
    """
    if not hi > lo:
        raise DomainError(f"minimize_unimodal needs lo < hi, got [{lo}, {hi}]")
    a, b = lo, hi
    width0 = b - a
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(cfg.max_iter):
        if b - a <= cfg.rel_tol * width0:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    else:
        raise ConvergenceError(f"minimize_unimodal did not converge in {cfg.max_iter} iterations")
    x, fx = (x1, f1) if f1 <= f2 else (x2, f2)
    flo, fhi = f(lo), f(hi)
    if fhi <= fx and fhi <= flo:
        return hi, fhi
    if flo < fx:
        return lo, flo
    return x, fx
