"""Trial-level simulation of frequency hopping (UL) and proactive dropping (DL).

Rare events at the design reliability (~1e-8) are out of reach for plain
Monte Carlo, so validation usually runs at a relaxed target through
:func:`relax_allocation`; the formulas are the same at any epsilon.

Random streams are derived from the master seed with a per-device spawn key
(kind, index), so each device's draws do not depend on how many other
devices were simulated or in which order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .errors import DomainError
from .numerics import regularized_gamma_q
from .powermodel import served_packets, ul_activity_weight
from .qos import (
    LinkParams,
    QosBudget,
    dl_power_cost,
    effective_bandwidth,
    queueing_delay_bound,
    ul_power_cost,
)
from .reliability import dl_drop_prob, invert_dl_drop, invert_ul_drop, ul_drop_prob

_UL, _DL = 0, 1
_CHUNK = 200_000


@dataclass(frozen=True)
class SimConfig:
    trials: int = 100_000
    frames: int = 100_000
    seed: int = 0
    relaxed_eps: Optional[float] = None

    def __post_init__(self):
        if self.trials < 1 or self.frames < 1:
            raise DomainError("trials and frames must be >= 1")
        if self.relaxed_eps is not None and not 0 < self.relaxed_eps < 0.5:
            raise DomainError(f"relaxed_eps must lie in (0, 0.5), got {self.relaxed_eps}")


@dataclass
class Estimate:
    value: float
    stderr: float

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr}


@dataclass
class ValidationReport:
    ul_drop_rate: Optional[Estimate] = None
    dl_drop_rate: Optional[Estimate] = None
    delay_violation_rate: Optional[Estimate] = None
    avg_ul_power: Optional[Estimate] = None
    avg_dl_power: Optional[Estimate] = None
    analytical_targets: Dict[str, float] = field(default_factory=dict)
    verdicts: Dict[str, bool] = field(default_factory=dict)
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(all(self.verdicts.values()))

    def to_dict(self) -> dict:
        out = {}
        for name in ("ul_drop_rate", "dl_drop_rate", "delay_violation_rate", "avg_ul_power", "avg_dl_power"):
            v = getattr(self, name)
            out[name] = v.to_dict() if v is not None else None
        out["analytical_targets"] = dict(self.analytical_targets)
        out["verdicts"] = {k: bool(v) for k, v in self.verdicts.items()}
        out["passed"] = bool(self.passed)
        out["details"] = self.details
        return out


def device_rng(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(kind, index)))


def _binomial_se(p_hat: float, n: int, p_ref: float = 0.0) -> float:
    # an empirical rate of exactly 0 would claim zero uncertainty
    p = p_hat if p_hat > 0 else p_ref
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else math.inf


def ul_exact_mean_power(cost: float, g_th: float, n_t: int, n_a: int) -> float:
    """Mean transmit power of one active packet under first-hit channel inversion."""
    if g_th <= 0:
        return cost / (n_t - 1)
    p_below = ul_drop_prob(g_th, n_t, 1)
    tail = regularized_gamma_q(n_t - 1, g_th) / (n_t - 1)
    return cost * tail * sum(p_below**j for j in range(n_a))


def dl_exact_mean_power(cost: float, g_th: float, n_t: int) -> float:
    """Mean transmit power in a frame with a nonempty queue."""
    if g_th <= 0:
        return cost / (n_t - 1)
    below = 1.0 - regularized_gamma_q(n_t, g_th)
    return cost * (below / g_th + regularized_gamma_q(n_t - 1, g_th) / (n_t - 1))


def simulate_ul(link: LinkParams, alloc, budget: QosBudget, cfg: SimConfig,
                index: int = 0, kappa: float = 0.01) -> ValidationReport:
    """Frequency hopping for sensor ``index``: one active packet per trial.

    Activity is applied analytically: the average power is kappa times the
    mean power of an active packet.
    """
    n_t, n_a = alloc.n_t, alloc.n_a
    g_th = float(alloc.g_th_ul)
    b = float(alloc.b_ul[index])
    cost = ul_power_cost(b, link, budget.eps_cu)
    rng = device_rng(cfg.seed, _UL, index)
    drops = 0
    p_sum = p_sq = 0.0
    p_max = 0.0
    hist = np.zeros(n_a + 1, dtype=np.int64)
    done = 0
    while done < cfg.trials:
        n = min(_CHUNK, cfg.trials - done)
        gains = rng.standard_gamma(n_t, size=(n, n_a))
        hit = gains >= g_th
        if g_th <= 0:
            hit = gains > 0
        any_hit = hit.any(axis=1)
        first = np.where(any_hit, hit.argmax(axis=1), n_a)
        g_first = gains[np.arange(n), np.minimum(first, n_a - 1)]
        power = np.where(any_hit, cost / g_first, 0.0)
        drops += int(n - any_hit.sum())
        p_sum += float(power.sum())
        p_sq += float(np.dot(power, power))
        p_max = max(p_max, float(power.max()))
        hist += np.bincount(first, minlength=n_a + 1)
        done += n
    N = cfg.trials
    rate = drops / N
    mean_p = p_sum / N
    var_p = max(p_sq / N - mean_p**2, 0.0)
    p_th = cost / g_th if g_th > 0 else math.inf
    target_drop = budget.eps_pu
    ub = kappa * cost * sum(budget.eps_pu ** (j / n_a) for j in range(n_a)) / (n_t - 1)
    exact = kappa * ul_exact_mean_power(cost, g_th, n_t, n_a)
    drop_est = Estimate(rate, _binomial_se(rate, N, target_drop))
    pow_est = Estimate(kappa * mean_p, kappa * math.sqrt(var_p / N))
    rep = ValidationReport(
        ul_drop_rate=drop_est,
        avg_ul_power=pow_est,
        analytical_targets={"ul_drop_rate": target_drop, "avg_ul_power_ub": ub, "avg_ul_power_exact": exact},
        details={"frames_waited": hist.tolist(), "max_power_w": p_max, "p_th_w": p_th},
    )
    rep.verdicts["ul_drop_rate"] = abs(rate - target_drop) <= 3 * drop_est.stderr
    rep.verdicts["avg_ul_power"] = pow_est.value <= ub + 3 * pow_est.stderr
    rep.verdicts["ul_power_cap"] = p_max <= p_th * (1 + 1e-12)
    return rep


def simulate_dl_queue(link: LinkParams, alloc, lam: float, budget: QosBudget, cfg: SimConfig,
                      index: int = 0) -> ValidationReport:
    """Frame-level queue of user ``index`` under proactive dropping.

    Each frame a nonempty queue offers a batch of up to E^B packets of work,
    then the frame's Poisson arrivals join the tail.  Above the gain threshold
    the whole batch is served by channel inversion.  Below it the BS sends
    at the threshold power, serves what that SNR carries, and drops the rest
    of the batch, rounded stochastically to whole packets.

    The delay-violation rate is the fraction of frames whose backlog exceeds
    what E^B clears within the queueing delay bound, i.e. the delay a fluid
    arrival would see; this is the quantity the effective bandwidth controls.
    The per-packet late fraction is reported in ``details``.
    """
    n_t, n_a = alloc.n_t, alloc.n_a
    g_th = float(alloc.g_th_dl)
    b = float(alloc.b_dl[index])
    d_q = queueing_delay_bound(budget, n_a)
    e_b = effective_bandwidth(lam, budget.t_frame, d_q, budget.eps_q)
    cost = dl_power_cost(b, e_b, link, budget.eps_cd)
    p_th = cost / g_th if g_th > 0 else math.inf
    # packets arriving during frame f0 are eligible from frame f0 + 1; a packet
    # is late if it is not through by the end of frame f0 + max_wait
    max_wait = int(math.floor(d_q / budget.t_frame + 1e-9))
    rng = device_rng(cfg.seed, _DL, index)
    F = cfg.frames
    arrivals = rng.poisson(lam, size=F)
    gains = rng.standard_gamma(n_t, size=F)
    coins = rng.random(size=F)

    queue = deque()  # [arrival frame, remaining work]
    work = 0.0
    arrived = delivered = dropped = late = 0
    backlog_frames = 0
    backlog_cap = e_b * max_wait
    busy = 0
    p_sum = p_sq = 0.0
    p_max = 0.0
    f = 0
    while f < F:
        if queue:
            busy += 1
            batch = min(work, e_b)
            g = float(gains[f])
            if g >= g_th and g > 0:
                power = cost / g
                serve = batch
                drop = 0.0
            else:
                power = p_th
                serve = min(float(served_packets(g / g_th, b, e_b, link, budget.eps_cd)), batch)
                drop = batch - serve
            p_sum += power
            p_sq += power * power
            p_max = max(p_max, power)
            while serve > 1e-12 and queue:
                head = queue[0]
                if head[1] <= serve + 1e-12:
                    serve -= head[1]
                    work -= head[1]
                    late += f - queue.popleft()[0] > max_wait
                    delivered += 1
                else:
                    head[1] -= serve
                    work -= serve
                    serve = 0.0
            if drop > 0:
                n_drop = int(drop) + (1 if coins[f] < drop - int(drop) else 0)
                for _ in range(min(n_drop, len(queue))):
                    work -= queue.popleft()[1]
                    dropped += 1
            work = max(work, 0.0) if queue else 0.0
        n_new = int(arrivals[f])
        if n_new:
            queue.extend([f, 1.0] for _ in range(n_new))
            arrived += n_new
            work += n_new
        # delay a fluid arrival at the end of this frame would see
        if work > backlog_cap * (1 + 1e-12):
            backlog_frames += 1
        f += 1
        if not queue:
            # idle until the next arrival
            nz = np.flatnonzero(arrivals[f:f + 4096])
            while nz.size == 0 and f < F:
                f += 4096
                nz = np.flatnonzero(arrivals[f:f + 4096])
            if nz.size:
                f += int(nz[0])
            else:
                break

    xi = lam / e_b
    mean_busy = p_sum / busy if busy else 0.0
    var_busy = max(p_sq / busy - mean_busy**2, 0.0) if busy else 0.0
    n_arr = max(arrived, 1)
    drop_rate = dropped / n_arr
    viol_rate = backlog_frames / F
    target_drop = dl_drop_prob(g_th, n_t) if g_th > 0 else 0.0
    ub = xi * cost / (n_t - 1)
    exact = xi * dl_exact_mean_power(cost, g_th, n_t)
    drop_est = Estimate(drop_rate, _binomial_se(drop_rate, n_arr, target_drop))
    viol_est = Estimate(viol_rate, _binomial_se(viol_rate, F, budget.eps_q))
    pow_est = Estimate(xi * mean_busy, xi * math.sqrt(var_busy / busy) if busy else 0.0)
    rep = ValidationReport(
        dl_drop_rate=drop_est,
        delay_violation_rate=viol_est,
        avg_dl_power=pow_est,
        analytical_targets={
            "dl_drop_bound": target_drop,
            "delay_violation": budget.eps_q,
            "avg_dl_power_ub": ub,
            "avg_dl_power_exact": exact,
        },
        details={
            "arrived": arrived,
            "delivered": delivered,
            "dropped": dropped,
            "backlog_frames": backlog_frames,
            "late_packet_fraction": late / n_arr,
            "busy_fraction": busy / F,
            "xi": xi,
            "max_power_w": p_max,
            "p_th_w": p_th,
        },
    )
    rep.verdicts["dl_drop_rate"] = drop_rate <= target_drop + 3 * drop_est.stderr
    rep.verdicts["delay_violation_rate"] = viol_rate <= budget.eps_q + 3 * viol_est.stderr
    rep.verdicts["avg_dl_power"] = pow_est.value <= ub + 3 * pow_est.stderr
    rep.verdicts["dl_power_cap"] = p_max <= p_th * (1 + 1e-12)
    return rep


def relax_allocation(alloc, scenario, budget: QosBudget, eps: float):
    """Same bandwidths and antenna counts, with dropping and queueing targets set to ``eps``.

    Returns (alloc', budget').  Gain thresholds, effective bandwidths and
    power thresholds are recomputed for the relaxed targets.
    """
    eps_max = budget.eps_cu + budget.eps_cd + 3 * eps
    rb = replace(budget, eps_max=eps_max, eps_pu=eps, eps_pd=eps, eps_q=eps)
    n_t, n_a = alloc.n_t, alloc.n_a
    g_u = invert_ul_drop(eps, n_t, n_a)
    g_d = invert_dl_drop(eps, n_t)
    d_q = queueing_delay_bound(rb, n_a)
    e_b = np.array([effective_bandwidth(l, rb.t_frame, d_q, eps) for l in scenario.lam])
    p = scenario.params
    p_ul = np.array([ul_power_cost(b, p.link(mu), rb.eps_cu) / g_u
                     for b, mu in zip(alloc.b_ul, scenario.mu_ul)])
    p_dl = np.array([dl_power_cost(b, e, p.link(mu), rb.eps_cd) / g_d
                     for b, e, mu in zip(alloc.b_dl, e_b, scenario.mu_dl)])
    new = replace(alloc, g_th_ul=g_u, g_th_dl=g_d, e_b_dl=e_b, p_th_ul=p_ul, p_th_dl=p_dl)
    return new, rb


def validate_allocation(scenario, alloc, budget: QosBudget, cfg: SimConfig) -> ValidationReport:
    """Simulate every sensor and user and pool the results."""
    if cfg.relaxed_eps is not None:
        alloc, budget = relax_allocation(alloc, scenario, budget, cfg.relaxed_eps)
    p = scenario.params
    rep = ValidationReport()
    if scenario.n_sensors == 0 and scenario.n_users == 0:
        rep.details["empty"] = True
        return rep

    if scenario.n_sensors:
        drops = 0
        power = ub = var = 0.0
        for m, mu in enumerate(scenario.mu_ul):
            r = simulate_ul(p.link(mu), alloc, budget, cfg, index=m, kappa=p.kappa)
            drops += round(r.ul_drop_rate.value * cfg.trials)
            power += r.avg_ul_power.value
            var += r.avg_ul_power.stderr ** 2
            ub += r.analytical_targets["avg_ul_power_ub"]
            rep.verdicts[f"ul_power_cap[{m}]"] = r.verdicts["ul_power_cap"]
        n = cfg.trials * scenario.n_sensors
        rate = drops / n
        rep.ul_drop_rate = Estimate(rate, _binomial_se(rate, n, budget.eps_pu))
        rep.avg_ul_power = Estimate(power, math.sqrt(var))
        rep.analytical_targets["ul_drop_rate"] = budget.eps_pu
        rep.analytical_targets["avg_ul_power_ub"] = ub
        rep.verdicts["ul_drop_rate"] = abs(rate - budget.eps_pu) <= 3 * rep.ul_drop_rate.stderr
        rep.verdicts["avg_ul_power"] = power <= ub + 3 * rep.avg_ul_power.stderr

    if scenario.n_users:
        arrived = dropped = late = 0
        power = ub = var = 0.0
        bound = 0.0
        for k, (mu, lam) in enumerate(zip(scenario.mu_dl, scenario.lam)):
            r = simulate_dl_queue(p.link(mu), alloc, float(lam), budget, cfg, index=k)
            a = r.details["arrived"]
            arrived += a
            dropped += r.details["dropped"]
            late += r.details["backlog_frames"]
            power += r.avg_dl_power.value
            var += r.avg_dl_power.stderr ** 2
            ub += r.analytical_targets["avg_dl_power_ub"]
            bound = r.analytical_targets["dl_drop_bound"]
            rep.verdicts[f"dl_power_cap[{k}]"] = r.verdicts["dl_power_cap"]
        n = max(arrived, 1)
        rep.dl_drop_rate = Estimate(dropped / n, _binomial_se(dropped / n, n, bound))
        nf = cfg.frames * scenario.n_users
        rep.delay_violation_rate = Estimate(late / nf, _binomial_se(late / nf, nf, budget.eps_q))
        rep.avg_dl_power = Estimate(power, math.sqrt(var))
        rep.analytical_targets.update(
            dl_drop_bound=bound, delay_violation=budget.eps_q, avg_dl_power_ub=ub
        )
        rep.verdicts["dl_drop_rate"] = rep.dl_drop_rate.value <= bound + 3 * rep.dl_drop_rate.stderr
        rep.verdicts["delay_violation_rate"] = (
            rep.delay_violation_rate.value <= budget.eps_q + 3 * rep.delay_violation_rate.stderr
        )
        rep.verdicts["avg_dl_power"] = power <= ub + 3 * rep.avg_dl_power.stderr
        rep.details["dl_packets"] = arrived

    # overall loss: decoding errors are met by construction, the rest is measured
    loss = budget.eps_cu + budget.eps_cd
    se2 = 0.0
    for est in (rep.ul_drop_rate, rep.dl_drop_rate, rep.delay_violation_rate):
        if est is not None:
            loss += est.value
            se2 += est.stderr**2
    rep.details["overall_loss"] = loss
    rep.analytical_targets["eps_max"] = budget.eps_max
    rep.verdicts["overall_loss"] = loss <= budget.eps_max + 3 * math.sqrt(se2)
    return rep
