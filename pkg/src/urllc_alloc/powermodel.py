"""Power-control policies, transmit-power thresholds and the average-power
upper bound used as the optimisation objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DomainError
from .numerics import inverse_gaussian_q
from .qos import (
    LN2,
    LinkParams,
    QosBudget,
    cost_coefficients,
    cost_h,
    dl_power_cost,
    effective_bandwidth,
    queueing_delay_bound,
    ul_power_cost,
)


@dataclass(frozen=True)
class PowerCircuitParams:
    rho_u: float = 0.5
    rho_d: float = 0.5
    p_c_u: float = 10 ** (18 / 10) * 1e-3
    p_c_nt: float = 10 ** (33 / 10) * 1e-3
    p_c_na: float = 10 ** (21 / 10) * 1e-3
    omega_u: float = 1.0
    omega_d: float = 1.0

    def __post_init__(self):
        for name in ("rho_u", "rho_d"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} must lie in (0, 1], got {v}")
        for name in ("p_c_u", "p_c_nt", "p_c_na", "omega_u", "omega_d"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class CostBreakdown:
    """Parts of the average-power upper bound, already weighted; they sum to ``total_ub``."""

    ul_tx: float
    dl_tx: float
    circuit_antenna: float
    circuit_carrier: float
    circuit_sensor: float
    total_ub: float
    ee: float

    @property
    def total_dbm(self) -> float:
        return 10.0 * math.log10(self.total_ub * 1e3)

    def to_dict(self):
        d = asdict(self)
        d["total_dbm"] = self.total_dbm
        return d


def ul_power_threshold(b, link: LinkParams, g_th: float, eps_c: float):
    if not g_th > 0:
        raise DomainError(f"g_th must be positive, got {g_th}")
    return ul_power_cost(b, link, eps_c) / g_th


def dl_power_threshold(b, e_b: float, link: LinkParams, g_th: float, eps_c: float):
    if not g_th > 0:
        raise DomainError(f"g_th must be positive, got {g_th}")
    return dl_power_cost(b, e_b, link, eps_c) / g_th


def ul_instant_power(
    gains: Sequence[float], g_th: float, b: float, link: LinkParams, eps_c: float
):
    """Frequency-hopping policy: invert the channel on the first subchannel at or above g_th.

    Returns (power, frames_waited, dropped).  A dropped packet costs nothing.
    """
    cost = ul_power_cost(b, link, eps_c)
    for j, g in enumerate(gains):
        if g >= g_th and g > 0:
            return cost / g, j, False
    return 0.0, len(gains), True


def dl_instant_power(
    gain: float, g_th: float, b: float, e_b: float, link: LinkParams, eps_c: float
):
    """Proactive-dropping policy for one frame of a nonempty queue.

    Returns (power, served, dropped_rate) in (W, packets/frame, packets/frame).
    Below the threshold the BS transmits at the threshold power and serves
    whatever that SNR supports.
    """
    if not gain >= 0:
        raise DomainError(f"gain must be nonnegative, got {gain}")
    cost = dl_power_cost(b, e_b, link, eps_c)
    if gain >= g_th and gain > 0:
        return cost / gain, float(e_b), 0.0
    p_th = cost / g_th
    served = served_packets(gain / g_th, b, e_b, link, eps_c)
    return p_th, served, max(e_b - served, 0.0)


def served_packets(gain_ratio, b, e_b, link: LinkParams, eps_c):
    """Packets per slot carried at SNR ``gain_ratio`` times the DL threshold SNR, floored at 0.

    Works elementwise on arrays of ``gain_ratio``.
    """
    a, c = cost_coefficients(e_b * link.packet_bits, link, eps_c)
    x_th = a / b + c / math.sqrt(b)
    # ln(1 + r (e^x - 1)) without overflow for large x
    r = np.asarray(gain_ratio, dtype=float)
    with np.errstate(divide="ignore"):
        log_snr = x_th + np.log(r) + np.log1p(-np.exp(-x_th)) if x_th > 30 else np.log1p(r * np.expm1(x_th))
    log_snr = np.where(r > 0, log_snr, 0.0)
    qinv = inverse_gaussian_q(eps_c)
    s = link.tau * b / (link.packet_bits * LN2) * (log_snr - qinv / math.sqrt(link.tau * b))
    s = np.maximum(s, 0.0)
    return float(s) if s.ndim == 0 else s


def ul_activity_weight(n_a: int, eps_pu: float, kappa: float) -> float:
    """kappa * sum_{j<n_a} eps_pu^{j/n_a}: expected number of hops a packet may use, times activity."""
    return kappa * sum(eps_pu ** (j / n_a) for j in range(n_a))


def cost_breakdown(
    ul_cost_sum: float,
    dl_cost_sum: float,
    n_t: int,
    n_a: int,
    circ: PowerCircuitParams,
    throughput_bits: float,
    eps_max: float,
) -> CostBreakdown:
    """Assemble the bound from the weighted cost sums.

    ``ul_cost_sum`` is sum_m kappa * geo(n_a) * Y_m / rho_u and ``dl_cost_sum``
    is sum_k xi_k * Y_k / rho_d; both get divided by n_t - 1 here.
    """
    if n_t < 2:
        raise DomainError(f"n_t must be >= 2, got {n_t}")
    ul_tx = circ.omega_u * ul_cost_sum / (n_t - 1)
    dl_tx = circ.omega_d * dl_cost_sum / (n_t - 1)
    ant = circ.omega_d * n_t * circ.p_c_nt
    car = circ.omega_d * circ.p_c_na / n_a
    sen = circ.omega_u * circ.p_c_u
    total = ul_tx + dl_tx + ant + car + sen
    ee = throughput_bits * (1.0 - eps_max) / total if total > 0 else math.inf
    return CostBreakdown(ul_tx, dl_tx, ant, car, sen, total, ee)


def link_template(params) -> LinkParams:
    """LinkParams with unit large-scale gain built from a SystemParams-like object."""
    return LinkParams(
        mu=1.0,
        bandwidth_cap=params.w_c,
        tau=params.tau,
        packet_bits=params.packet_bits,
        phi=params.phi,
        n0=params.n0,
    )


def total_power_upper_bound(alloc, scenario, circ: PowerCircuitParams, budget: QosBudget) -> CostBreakdown:
    """Average total power bound of an allocation on a scenario."""
    params = scenario.params
    n_t, n_a = alloc.n_t, alloc.n_a
    if n_t < 2:
        raise DomainError(f"n_t must be >= 2, got {n_t}")
    link = link_template(params)
    b_ul = np.asarray(alloc.b_ul, dtype=float)
    b_dl = np.asarray(alloc.b_dl, dtype=float)
    if np.any(b_ul <= 0) or np.any(b_dl <= 0):
        raise DomainError("all bandwidths must be positive")
    mu_ul = scenario.mu_ul
    mu_dl = scenario.mu_dl
    lam = scenario.lam

    ul_sum = 0.0
    if b_ul.size:
        a, c = cost_coefficients(params.packet_bits, link, budget.eps_cu)
        y = link.noise_scale * cost_h(b_ul, a, c) / mu_ul
        ul_sum = ul_activity_weight(n_a, budget.eps_pu, params.kappa) * float(np.sum(y)) / circ.rho_u
    dl_sum = 0.0
    if b_dl.size:
        d_q = queueing_delay_bound(budget, n_a)
        e_b = np.array([effective_bandwidth(l, budget.t_frame, d_q, budget.eps_q) for l in lam])
        a, c = cost_coefficients(e_b * params.packet_bits, link, budget.eps_cd)
        y = link.noise_scale * cost_h(b_dl, a, c) / mu_dl
        dl_sum = float(np.sum(lam / e_b * y)) / circ.rho_d
    throughput = params.packet_bits * float(np.sum(lam)) / budget.t_frame
    return cost_breakdown(ul_sum, dl_sum, n_t, n_a, circ, throughput, budget.eps_max)


def with_mu(link: LinkParams, mu: float) -> LinkParams:
    return replace(link, mu=mu)
