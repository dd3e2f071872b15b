"""Packet dropping probabilities for uplink frequency hopping and downlink
proactive dropping, their inverses, and the small-scale gain sampler.

The small-scale gain g = h^H h of an n_t-antenna Rayleigh channel is
Gamma(n_t, 1); all probabilities below are functionals of that law.

The raw probability functions accept ``n_t = 1`` so that textbook
single-antenna values can be checked; the optimisation layer only ever
passes a validated :class:`DiversityConfig` with ``n_t >= 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .numerics import (
    ToleranceConfig,
    _leading_poisson_term,
    find_root_monotone,
    regularized_gamma_p,
    regularized_gamma_q,
)

# thresholds of interest are O(n_t); past this the inversion gives up
_MAX_GAIN_THRESHOLD = 1e6
_INVERSION_TOL = ToleranceConfig(abs_tol=1e-14, rel_tol=1e-15, max_iter=400)


@dataclass(frozen=True)
class DiversityConfig:
    n_t: int
    n_a: int = 1
    n_a_max: int = 6

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 2:
            # average-power bounds divide by n_t - 1
            raise DomainError(f"n_t must be an integer >= 2, got {self.n_t}")
        if int(self.n_a) != self.n_a or not 1 <= self.n_a <= self.n_a_max:
            raise DomainError(f"n_a must be an integer in [1, {self.n_a_max}], got {self.n_a}")


def _check_nt(n_t):
    if isinstance(n_t, DiversityConfig):
        return n_t.n_t
    if int(n_t) != n_t or n_t < 1:
        raise DomainError(f"antenna count must be a positive integer, got {n_t}")
    return int(n_t)


def _unpack(n_t, n_a):
    if isinstance(n_t, DiversityConfig):
        return n_t.n_t, n_t.n_a
    return _check_nt(n_t), n_a


def ul_drop_prob(g_th: float, n_t, n_a: int = 1) -> float:
    """Probability that all ``n_a`` hopping subchannels are below ``g_th``.

    ``n_t`` may be an antenna count or a :class:`DiversityConfig`, in which
    case its ``n_a`` is used.
    """
    n_t, n_a = _unpack(n_t, n_a)
    if n_a < 1:
        raise DomainError(f"n_a must be >= 1, got {n_a}")
    if not g_th >= 0:
        raise DomainError(f"g_th must be nonnegative, got {g_th}")
    return regularized_gamma_p(n_t, g_th) ** n_a


def dl_drop_prob(g_th: float, n_t: int) -> float:
    """Proactive-dropping bound: integral of (1 - g/g_th) f_{n_t}(g) over [0, g_th].

    Evaluated as e^{-x} sum_{j>=n} x^j/j! (j+1-n)/(j+1), a series of positive
    terms, so there is no cancellation in (1 - n/x) for small thresholds.
    Large thresholds use the closed form, where (1 - n/x) dominates.
    """
    n = _check_nt(n_t)
    x = float(g_th)
    if not x >= 0:
        raise DomainError(f"g_th must be nonnegative, got {g_th}")
    if x < 1e-300:
        return 0.0
    if x < 1e-12:
        return _leading_poisson_term(n, x) / (n + 1)
    if x <= n + 10.0 * math.sqrt(n) + 20.0:
        term = _leading_poisson_term(n, x)
        total = term / (n + 1)
        j = n
        while True:
            j += 1
            term *= x / j
            contrib = term * (j + 1 - n) / (j + 1)
            total += contrib
            if j > x and contrib <= 1e-17 * total:
                break
        return min(total, 1.0)
    q_n = regularized_gamma_q(n, x)
    q_n1 = q_n + _leading_poisson_term(n, x)
    return (1.0 - n / x) - q_n + (n / x) * q_n1


def _log_or_ninf(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _invert(prob, eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise DomainError(f"target probability must lie in (0, 1), got {eps}")
    lo, hi = 0.0, 1.0
    while prob(hi) < eps:
        lo, hi = hi, 2.0 * hi
        if hi > _MAX_GAIN_THRESHOLD:
            raise ConvergenceError(f"no gain threshold below {_MAX_GAIN_THRESHOLD} reaches {eps}")
    log_eps = math.log(eps)
    return find_root_monotone(lambda g: _log_or_ninf(prob(g)) - log_eps, lo, hi, _INVERSION_TOL)


def invert_ul_drop(eps: float, n_t, n_a: int = 1) -> float:
    """Gain threshold at which the uplink dropping probability equals ``eps``."""
    n_t, n_a = _unpack(n_t, n_a)
    return _invert(lambda g: ul_drop_prob(g, n_t, n_a), eps)


def invert_dl_drop(eps: float, n_t: int) -> float:
    """Gain threshold at which the downlink proactive-dropping bound equals ``eps``."""
    n_t = _check_nt(n_t)
    return _invert(lambda g: dl_drop_prob(g, n_t), eps)


def sample_channel_gain(n_t: int, rng: np.random.Generator) -> float:
    """One draw of h^H h for an n_t-antenna i.i.d. Rayleigh channel."""
    return float(rng.standard_gamma(_check_nt(n_t)))


def sample_channel_gains(n_t: int, size, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`sample_channel_gain`."""
    return rng.standard_gamma(_check_nt(n_t), size=size)
