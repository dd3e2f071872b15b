"""Delay-budget arithmetic, effective bandwidth, SNR thresholds and the
per-link power-cost functions.

The power cost of a link carrying ``bits`` per slot over bandwidth b is

    Y(b) = (phi * n0 / mu) * b * (exp(a / b + c / sqrt(b)) - 1),
    a = bits * ln2 / tau,   c = Qinv(eps_c) / sqrt(tau),

i.e. the transmit power needed at unit small-scale gain to hit the
finite-blocklength SNR threshold.  The helpers ``cost_h``/``cost_dh``/
``cost_d2h`` evaluate the bracketed b * (e^x - 1) part and its derivatives
on numpy arrays; the solver works on those directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InfeasibleLatencyError
from .numerics import DEFAULT_TOL, ToleranceConfig, inverse_gaussian_q, minimize_unimodal

LN2 = math.log(2.0)


@dataclass(frozen=True)
class QosBudget:
    """End-to-end latency and reliability budget.

    ``d_max`` is the end-to-end deadline including backhaul.  The five loss
    components default to an even split of ``eps_max``.
    """

    d_max: float = 1.1e-3
    d_backhaul: float = 1e-4
    t_frame: float = 1e-4
    eps_max: float = 1e-7
    eps_cu: Optional[float] = None
    eps_pu: Optional[float] = None
    eps_cd: Optional[float] = None
    eps_pd: Optional[float] = None
    eps_q: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.eps_max < 1:
            raise DomainError(f"eps_max must lie in (0, 1), got {self.eps_max}")
        for name in ("eps_cu", "eps_pu", "eps_cd", "eps_pd", "eps_q"):
            v = getattr(self, name)
            if v is None:
                object.__setattr__(self, name, self.eps_max / 5.0)
            elif not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        if self.component_sum() > self.eps_max * (1 + 1e-12):
            raise DomainError(
                f"loss components sum to {self.component_sum()}, above eps_max={self.eps_max}"
            )
        if not self.t_frame > 0 or self.d_backhaul < 0:
            raise DomainError("t_frame must be positive and d_backhaul nonnegative")
        if not self.d_max > self.d_backhaul + 2 * self.t_frame:
            # not even one subchannel fits
            raise InfeasibleLatencyError(
                f"d_max={self.d_max} leaves no room for backhaul plus two frames"
            )

    def component_sum(self) -> float:
        return self.eps_cu + self.eps_pu + self.eps_cd + self.eps_pd + self.eps_q


@dataclass(frozen=True)
class LinkParams:
    mu: float
    bandwidth_cap: float = 5e5
    tau: float = 5e-5
    packet_bits: float = 160.0
    phi: float = 1.5
    n0: float = 10 ** (-173 / 10) * 1e-3

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if not self.phi >= 1:
            raise DomainError(f"phi must be >= 1, got {self.phi}")
        if not self.tau > 0 or not self.bandwidth_cap > 0:
            raise DomainError("tau and bandwidth_cap must be positive")
        if not self.packet_bits > 0 or not self.n0 > 0:
            raise DomainError("packet_bits and n0 must be positive")

    @property
    def noise_scale(self) -> float:
        """phi * n0 / mu, the factor turning b(e^x - 1) into watts."""
        return self.phi * self.n0 / self.mu


def queueing_delay_bound(budget: QosBudget, n_a: int) -> float:
    """Time left for queueing once UL hopping (n_a frames), the DL frame and backhaul are paid."""
    if n_a < 1:
        raise DomainError(f"n_a must be >= 1, got {n_a}")
    d_q = budget.d_max - (n_a + 1) * budget.t_frame - budget.d_backhaul
    # treat round-off residue at the boundary as zero
    if d_q <= 1e-12 * budget.d_max:
        raise InfeasibleLatencyError(
            f"n_a={n_a} uses the whole latency budget (queueing bound {d_q:.3g} s)"
        )
    return d_q


def max_subchannels(budget: QosBudget, n_a_max: int) -> int:
    """Largest n_a <= n_a_max with a positive queueing delay bound (0 if none)."""
    for n_a in range(n_a_max, 0, -1):
        try:
            queueing_delay_bound(budget, n_a)
            return n_a
        except InfeasibleLatencyError:
            continue
    return 0


def effective_bandwidth(lam: float, t_frame: float, d_q: float, eps_q: float) -> float:
    """Service rate (packets/frame) keeping a Poisson(lam) queue's delay above d_q below eps_q."""
    if not lam > 0 or not d_q > 0 or not t_frame > 0:
        raise DomainError("lam, t_frame and d_q must be positive")
    if not 0 < eps_q < 1:
        raise DomainError(f"eps_q must lie in (0, 1), got {eps_q}")
    num = t_frame * math.log(1.0 / eps_q)
    return num / (d_q * math.log1p(num / (lam * d_q)))


def cost_coefficients(bits, link: LinkParams, eps_c: float):
    """(a, c) of the exponent x = a/b + c/sqrt(b) for ``bits`` per slot."""
    if not 0 < eps_c < 1:
        raise DomainError(f"eps_c must lie in (0, 1), got {eps_c}")
    a = np.asarray(bits, dtype=float) * LN2 / link.tau
    c = inverse_gaussian_q(eps_c) / math.sqrt(link.tau)
    return a, c


def _snr(b, bits, link, eps_c):
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise DomainError("bandwidth must be positive")
    a, c = cost_coefficients(bits, link, eps_c)
    # tiny bandwidths overflow to an infinite threshold, which is the right answer
    with np.errstate(over="ignore"):
        out = np.expm1(a / b + c / np.sqrt(b))
    return float(out) if out.ndim == 0 else out


def ul_snr_threshold(b, link: LinkParams, eps_c: float):
    """SNR needed to carry one packet within tau over bandwidth b at decoding error eps_c."""
    return _snr(b, link.packet_bits, link, eps_c)


def dl_snr_threshold(b, e_b: float, link: LinkParams, eps_c: float):
    """SNR needed to carry e_b packets within tau over bandwidth b."""
    if not e_b > 0:
        raise DomainError(f"e_b must be positive, got {e_b}")
    return _snr(b, e_b * link.packet_bits, link, eps_c)


def ul_power_cost(b, link: LinkParams, eps_c: float):
    """Transmit power at unit small-scale gain that meets the UL SNR threshold."""
    return link.noise_scale * np.asarray(b, dtype=float) * ul_snr_threshold(b, link, eps_c)


def dl_power_cost(b, e_b: float, link: LinkParams, eps_c: float):
    return link.noise_scale * np.asarray(b, dtype=float) * dl_snr_threshold(b, e_b, link, eps_c)


# b (e^x - 1) and derivatives, elementwise on arrays a, c, b


def _x_terms(b, a, c):
    rb = np.sqrt(b)
    x = a / b + c / rb
    x1 = -a / b**2 - 0.5 * c / (b * rb)
    x2 = 2.0 * a / b**3 + 0.75 * c / (b * b * rb)
    return x, x1, x2


def cost_h(b, a, c):
    b = np.asarray(b, dtype=float)
    with np.errstate(over="ignore"):
        return b * np.expm1(a / b + c / np.sqrt(b))


def cost_dh(b, a, c):
    b = np.asarray(b, dtype=float)
    x, x1, _ = _x_terms(b, a, c)
    return np.expm1(x) + b * np.exp(x) * x1


def cost_d2h(b, a, c):
    b = np.asarray(b, dtype=float)
    x, x1, x2 = _x_terms(b, a, c)
    return np.exp(x) * (2.0 * x1 + b * (x1 * x1 + x2))


def stationary_bandwidth(
    cost: Callable[[float], float], w_c: float, cfg: ToleranceConfig = DEFAULT_TOL
) -> float:
    """Minimiser of a unimodal cost on (0, w_c], or w_c if the cost still decreases there."""
    if not w_c > 0:
        raise DomainError(f"w_c must be positive, got {w_c}")
    # costs of interest blow up as b -> 0, so a tiny positive floor loses nothing
    b_star, _ = minimize_unimodal(cost, w_c * 1e-9, w_c, cfg)
    return min(b_star, w_c)
