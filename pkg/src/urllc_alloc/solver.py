"""Joint bandwidth / antenna / subchannel allocation.

For fixed (n_t, n_a) the bandwidth problem is separable and convex on the
region where every power cost still decreases, so it is solved by dual
decomposition: a multiplier on the total bandwidth nested inside a
multiplier on the DL sum-power cap, with each variable's one-dimensional
Lagrangian minimised by safeguarded Newton in log-bandwidth.  The per-sensor
UL power caps become lower bounds on the bandwidths.

Antennas and subchannels are then searched as in the three-step method:
binary searches for the smallest feasible antenna count and for the count
at which both power caps go slack, an exhaustive scan between the two, and
the closed-form antenna count beyond.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, InfeasibleError, InfeasibleLatencyError
from .powermodel import (
    CostBreakdown,
    PowerCircuitParams,
    cost_breakdown,
    link_template,
    total_power_upper_bound,
    ul_activity_weight,
)
from .qos import (
    QosBudget,
    cost_coefficients,
    cost_d2h,
    cost_h,
    effective_bandwidth,
    max_subchannels,
    queueing_delay_bound,
)
from .reliability import invert_dl_drop, invert_ul_drop

log = logging.getLogger(__name__)

STRATEGIES = ("eq-bw", "fixed-na", "fixed-nt", "opt-bw", "opt-na", "opt-nt")

# bandwidths are never pushed below the point where the exponent reaches ~500
_X_CAP = 250.0
_NEWTON_TOL = 1e-13
_BRENT_XTOL = 1e-13
# reported in place of -inf when both power caps are infinite
Z_SENTINEL = -1e300


@dataclass
class Allocation:
    b_ul: np.ndarray
    b_dl: np.ndarray
    p_th_ul: np.ndarray
    p_th_dl: np.ndarray
    n_t: int
    n_a: int
    g_th_ul: float
    g_th_dl: float
    e_b_dl: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "n_t": self.n_t,
            "n_a": self.n_a,
            "g_th_ul": self.g_th_ul,
            "g_th_dl": self.g_th_dl,
            "b_ul_hz": self.b_ul.tolist(),
            "b_dl_hz": self.b_dl.tolist(),
            "p_th_ul_w": self.p_th_ul.tolist(),
            "p_th_dl_w": self.p_th_dl.tolist(),
            "e_b_dl_packets_per_frame": self.e_b_dl.tolist(),
        }


@dataclass
class SolverReport:
    allocation: Allocation
    cost: CostBreakdown
    z_star: float
    n_t_min: int
    n_t_in_per_na: Dict[int, int]
    iterations: Dict[str, int]
    status: str = "optimal"
    strategy: str = "joint"
    n_t_min_per_na: Dict[int, int] = field(default_factory=dict)
    duality_gap: float = 0.0
    warnings: List[str] = field(default_factory=list)
    # (n_a, n_t, total W) of every candidate the search evaluated
    candidates: List[Tuple[int, int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "status": self.status,
            "allocation": self.allocation.to_dict(),
            "cost": self.cost.to_dict(),
            "z_star_w": self.z_star,
            "n_t_min": self.n_t_min,
            "n_t_min_per_na": {str(k): v for k, v in self.n_t_min_per_na.items()},
            "n_t_in_per_na": {str(k): v for k, v in self.n_t_in_per_na.items()},
            "iterations": dict(self.iterations),
            "duality_gap": self.duality_gap,
            "warnings": list(self.warnings),
        }


# per-variable kernels, elementwise on arrays


def _neg_dh(b, a, c):
    """-h'(b) = e^x (a/b + c/(2 sqrt b) - 1) + 1, positive below the stationary point."""
    rb = np.sqrt(b)
    x = a / b + c / rb
    return np.exp(x) * (a / b + 0.5 * c / rb - 1.0) + 1.0


def _vnewton(fun, ulo, uhi, u0, increasing: bool):
    """Safeguarded Newton for a monotone f(u) with a root inside each (ulo, uhi)."""
    ulo = ulo.copy()
    uhi = uhi.copy()
    u = np.clip(u0, ulo, uhi)
    bad = ~((u > ulo) & (u < uhi))
    u[bad] = 0.5 * (ulo[bad] + uhi[bad])
    for _ in range(200):
        f, fp = fun(u)
        pos = f > 0 if increasing else f < 0
        uhi = np.where(pos, u, uhi)
        ulo = np.where(pos, ulo, u)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = u - f / fp
        out = ~((un > ulo) & (un < uhi)) | ~np.isfinite(un)
        un[out] = 0.5 * (ulo[out] + uhi[out])
        # an exact root collapses one bracket side onto u; keep it
        un = np.where(f == 0, u, un)
        done = (np.abs(un - u) <= _NEWTON_TOL * np.maximum(1.0, np.abs(u))) | (f == 0) | (
            uhi - ulo <= 4e-16 * np.maximum(1.0, np.abs(u))
        )
        u = un
        if done.all():
            return u
    raise ConvergenceError("per-variable Newton iteration did not converge")


def slope_inverse(t, a, c, lo, hi, u0=None):
    """b in [lo, hi] with -h'(b) = t, clamped to the box (h' is increasing)."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    with np.errstate(divide="ignore", over="ignore"):
        g_hi = _neg_dh(hi, a, c)
        g_lo = _neg_dh(lo, a, c)
    at_hi = g_hi >= t
    at_lo = (g_lo <= t) & ~at_hi
    out[at_hi] = hi[at_hi]
    out[at_lo] = lo[at_lo]
    mid = ~(at_hi | at_lo)
    if mid.any():
        am, cm, tm = a[mid], c[mid], t[mid]
        lt = np.log(tm)

        def fun(u):
            b = np.exp(u)
            g = _neg_dh(b, am, cm)
            dg = -b * cost_d2h(b, am, cm)
            return np.log(g) - lt, dg / g

        start = u0[mid] if u0 is not None else 0.5 * (np.log(lo[mid]) + np.log(hi[mid]))
        out[mid] = np.exp(_vnewton(fun, np.log(lo[mid]), np.log(hi[mid]), start, increasing=False))
    return out


def level_inverse(level, a, c, lo, hi):
    """Smallest b in [lo, hi] with h(b) <= level (h decreasing); nan where even hi fails."""
    level = np.asarray(level, dtype=float)
    out = np.full_like(level, np.nan)
    h_hi = cost_h(hi, a, c)
    h_lo = cost_h(lo, a, c)
    ok = h_hi <= level
    easy = ok & (h_lo <= level)
    out[easy] = lo[easy]
    mid = ok & ~easy
    if mid.any():
        am, cm, lv = a[mid], c[mid], np.log(level[mid])

        def fun(u):
            b = np.exp(u)
            rb = np.sqrt(b)
            x = am / b + cm / rb
            em1 = np.expm1(x)
            dx = -am / b - 0.5 * cm / rb  # b * dx/db
            return np.log(b * em1) - lv, 1.0 + dx * np.exp(x) / em1

        u0 = 0.5 * (np.log(lo[mid]) + np.log(hi[mid]))
        out[mid] = np.exp(_vnewton(fun, np.log(lo[mid]), np.log(hi[mid]), u0, increasing=False))
    return out


class _Stage:
    """Bandwidth subproblem data for one subchannel count."""

    def __init__(self, owner: "AllocationProblem", n_a: int):
        self.owner = owner
        self.n_a = n_a
        sc, bud, circ = owner.scenario, owner.budget, owner.circ
        p = sc.params
        link = link_template(p)
        M, K = sc.n_sensors, sc.n_users
        self.M, self.K = M, K
        self.d_q = queueing_delay_bound(bud, n_a)
        lam = sc.lam
        self.e_b = np.array([effective_bandwidth(l, bud.t_frame, self.d_q, bud.eps_q) for l in lam])
        a_u, c_u = cost_coefficients(p.packet_bits, link, bud.eps_cu)
        a_d, c_d = cost_coefficients(self.e_b * p.packet_bits, link, bud.eps_cd)
        self.a = np.concatenate([np.full(M, float(a_u)), np.asarray(a_d, dtype=float).reshape(K)])
        self.c = np.concatenate([np.full(M, c_u), np.full(K, c_d)])
        self.scale = link.noise_scale / np.concatenate([sc.mu_ul, sc.mu_dl])
        ul_w = circ.omega_u * ul_activity_weight(n_a, bud.eps_pu, p.kappa) / circ.rho_u
        dl_w = circ.omega_d * (lam / self.e_b) / circ.rho_d if K else np.zeros(0)
        self.weight = np.concatenate([np.full(M, ul_w), dl_w])
        self.is_dl = np.concatenate([np.zeros(M, bool), np.ones(K, bool)])
        self.floor = np.maximum(self.a / _X_CAP, (self.c / _X_CAP) ** 2)
        self.hi = self._upper_edges(p.w_c)
        if np.any(self.hi <= self.floor):
            raise DomainError("coherence bandwidth too small for the packet size")
        self.w_max = p.w_max
        self.p_max_u = p.p_max_u
        self.p_max_d = p.p_max_d
        self._free: Optional[np.ndarray] = None
        self._solved: Dict[int, tuple] = {}
        self._u_warm = None

    def _upper_edges(self, w_c):
        """min(w_c, stationary point) per variable."""
        n = self.a.size
        hi = np.full(n, float(w_c))
        with np.errstate(over="ignore"):
            past = _neg_dh(hi, self.a, self.c) <= 0
        if past.any():
            a, c = self.a[past], self.c[past]
            lo = np.maximum(a / _X_CAP, (c / _X_CAP) ** 2)

            def fun(u):
                b = np.exp(u)
                g = _neg_dh(b, a, c)
                return g, -b * cost_d2h(b, a, c)

            u = _vnewton(fun, np.log(lo), np.full(a.size, math.log(w_c)),
                         np.full(a.size, math.log(w_c)), increasing=False)
            hi[past] = np.exp(u)
        return hi

    # cost pieces

    def y(self, b):
        """Power costs (W at unit small-scale gain) of all variables."""
        return self.scale * cost_h(b, self.a, self.c)

    def numerator(self, b) -> float:
        """Weighted cost sum, i.e. the transmit part of the bound times n_t - 1."""
        return float(np.sum(self.weight * self.y(b)))

    def split(self, b):
        y = self.weight * self.y(b)
        return float(np.sum(y[~self.is_dl])), float(np.sum(y[self.is_dl]))

    def z_at(self, b, n_t) -> float:
        g_u, g_d = self.owner.thresholds(n_t, self.n_a)
        y = self.y(b)
        zu = float(np.max(y[: self.M])) / g_u - self.p_max_u if self.M else -math.inf
        zd = float(np.sum(y[self.M:])) / g_d - self.p_max_d
        return max(zu, zd)

    # bandwidth allocation under the total-bandwidth constraint

    def _allocate(self, eff_w, lo):
        """Minimise sum eff_w * y(b) over lo <= b <= hi with sum b <= w_max."""
        self.owner.iterations["bandwidth_dual"] += 1
        hi = self.hi
        if self.a.size == 0 or hi.sum() <= self.w_max:
            return hi.copy(), 0.0
        if lo.sum() > self.w_max * (1 + 1e-12):
            raise InfeasibleError("bandwidth floor exceeds W_max", binding="bandwidth")
        ws = eff_w * self.scale
        with np.errstate(over="ignore"):
            edge_hi = ws * _neg_dh(hi, self.a, self.c)
            edge_lo = ws * _neg_dh(lo, self.a, self.c)
        l_lo = math.log(np.min(edge_hi))
        l_hi = math.log(np.max(edge_lo))
        state = {}

        def resid(lnu):
            self.owner.iterations["kernel"] += 1
            b = slope_inverse(math.exp(lnu) / ws, self.a, self.c, lo, hi, self._u_warm)
            self._u_warm = np.log(b)
            state["b"] = b
            return b.sum() - self.w_max

        if resid(l_hi) >= 0:
            return state["b"], math.exp(l_hi)
        lnu = brentq(resid, l_lo, l_hi, xtol=_BRENT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=300)
        resid(lnu)
        return state["b"], math.exp(lnu)

    def free_optimum(self) -> np.ndarray:
        """Optimum with both power caps dropped; independent of n_t."""
        if self._free is None:
            self._free, _ = self._allocate(self.weight, self.floor)
        return self._free

    def ul_floor(self, n_t, slack=0.0):
        """Per-sensor smallest bandwidth meeting the UL cap (plus ``slack`` W); nan if none."""
        g_u, _ = self.owner.thresholds(n_t, self.n_a)
        sl = slice(0, self.M)
        level = (self.p_max_u + slack) * g_u / self.scale[sl]
        return level_inverse(level, self.a[sl], self.c[sl], self.floor[sl], self.hi[sl])

    def dl_min_bandwidth(self, power_budget, n_t):
        """Least total DL bandwidth with sum_k y_k(b_k)/g_d <= power_budget, or None."""
        K, M = self.K, self.M
        if K == 0:
            return 0.0 if power_budget >= 0 else None
        _, g_d = self.owner.thresholds(n_t, self.n_a)
        target = power_budget * g_d
        sl = slice(M, M + K)
        a, c, s = self.a[sl], self.c[sl], self.scale[sl]
        lo, hi = self.floor[sl], self.hi[sl]
        if target <= 0:
            return None
        p_hi = float(np.sum(s * cost_h(hi, a, c)))
        if p_hi > target:
            return None
        if p_hi == target:
            return float(hi.sum())
        with np.errstate(over="ignore"):
            eta_all_hi = np.max(1.0 / (s * _neg_dh(hi, a, c)))
            eta_all_lo = np.min(1.0 / (s * _neg_dh(lo, a, c)))
        ltarget = math.log(target)
        state = {}

        def resid(leta):
            self.owner.iterations["kernel"] += 1
            b = slope_inverse(1.0 / (math.exp(leta) * s), a, c, lo, hi)
            state["b"] = b
            return math.log(float(np.sum(s * cost_h(b, a, c)))) - ltarget

        l_lo, l_hi = math.log(eta_all_lo), math.log(eta_all_hi)
        if resid(l_lo) <= 0:
            return float(state["b"].sum())
        leta = brentq(resid, l_lo, l_hi, xtol=_BRENT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=300)
        resid(leta)
        return float(state["b"].sum())

    def _excess(self, z, n_t) -> float:
        """Bandwidth needed at margin z minus W_max (inf if unreachable)."""
        if self.M:
            beta = self.ul_floor(n_t, slack=z)
            if np.any(np.isnan(beta)):
                return math.inf
            ul = float(beta.sum())
        else:
            ul = 0.0
        dl = self.dl_min_bandwidth(self.p_max_d + z, n_t)
        if dl is None:
            return math.inf
        return ul + dl - self.w_max

    def z_star(self, n_t) -> float:
        """Optimal value of the minimax feasibility problem."""
        self.owner.iterations["feasibility"] += 1
        z0 = self.z_at(self.hi, n_t)
        if not math.isfinite(z0):
            return Z_SENTINEL if z0 < 0 else math.inf
        if self.hi.sum() <= self.w_max or self._excess(z0, n_t) <= 0:
            return max(z0, Z_SENTINEL)
        span = max(abs(z0), self.p_max_u, 1e-3)
        z1 = z0 + span
        while self._excess(z1, n_t) > 0:
            span *= 2.0
            z1 = z0 + span
            if span > 1e30:
                raise ConvergenceError("feasibility margin search diverged")
        scale = self.p_max_u + self.p_max_d
        return brentq(lambda z: self._excess(z, n_t), z0, z1, xtol=1e-13 * scale, rtol=1e-14, maxiter=300)

    def feasible(self, n_t) -> bool:
        """z_star(n_t) <= 0 without locating z_star itself."""
        self.owner.iterations["feasibility"] += 1
        if self.z_at(self.hi, n_t) > 0:
            return False
        if self.hi.sum() <= self.w_max:
            return True
        return self._excess(0.0, n_t) <= 0

    def binding(self, n_t) -> str:
        g_u, g_d = self.owner.thresholds(n_t, self.n_a)
        y = self.y(self.hi)
        if self.M and float(np.max(y[: self.M])) / g_u > self.p_max_u:
            return "ul-power"
        if float(np.sum(y[self.M:])) / g_d > self.p_max_d:
            return "dl-power"
        return "bandwidth"

    # full bandwidth problem

    def solve(self, n_t):
        """(b, objective numerator, duality gap) at n_t; cached."""
        if n_t in self._solved:
            return self._solved[n_t]
        self.owner.iterations["bandwidth_solves"] += 1
        b_free = self.free_optimum()
        if self.z_at(b_free, n_t) <= 0:
            res = (b_free, self.numerator(b_free), 0.0)
            self._solved[n_t] = res
            return res
        g_u, g_d = self.owner.thresholds(n_t, self.n_a)
        lo = self.floor.copy()
        if self.M:
            bmin = self.ul_floor(n_t)
            if np.any(np.isnan(bmin)):
                raise InfeasibleError(f"UL power cap unreachable at n_t={n_t}", binding="ul-power")
            lo[: self.M] = np.maximum(lo[: self.M], bmin)
        p_d = self.p_max_d
        b, nu_b = self._allocate(self.weight, lo)
        nu_p = 0.0

        def dl_power(bb):
            return float(np.sum(self.y(bb)[self.M:])) / g_d

        if dl_power(b) > p_d:
            dl_mask = self.is_dl.astype(float) / g_d
            state = {}

            def resid(lnu):
                bb, nb = self._allocate(self.weight + math.exp(lnu) * dl_mask, lo)
                state["b"], state["nu_b"] = bb, nb
                return math.log(dl_power(bb)) - math.log(p_d)

            ref = math.log(g_d * float(np.max(self.weight[self.M:])))
            l_lo, l_hi = ref - 5.0, ref + 5.0
            while resid(l_lo) < 0:
                l_lo -= 10.0
                if l_lo < ref - 200:
                    break
            while resid(l_hi) > 0:
                l_hi += 10.0
                if l_hi > ref + 200:
                    raise InfeasibleError(f"DL power cap unreachable at n_t={n_t}", binding="dl-power")
            if resid(l_lo) < 0:
                lnu = l_lo
            else:
                lnu = brentq(resid, l_lo, l_hi, xtol=_BRENT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=300)
            resid(lnu)
            b, nu_b, nu_p = state["b"], state["nu_b"], math.exp(lnu)
        obj = self.numerator(b)
        gap = abs(nu_b * (b.sum() - self.w_max)) + abs(nu_p * (dl_power(b) - p_d))
        res = (b, obj, gap / obj if obj > 0 else 0.0)
        self._solved[n_t] = res
        return res


class AllocationProblem:
    """One scenario with its budget and power model; caches work shared by all strategies."""

    def __init__(self, scenario, budget: Optional[QosBudget] = None,
                 circ: Optional[PowerCircuitParams] = None, psi: Optional[int] = None):
        self.scenario = scenario
        self.budget = budget or scenario.params.budget()
        self.circ = circ or scenario.params.circuit()
        self.psi = int(psi if psi is not None else scenario.params.psi)
        if self.psi < 2:
            raise DomainError(f"psi must be >= 2, got {self.psi}")
        self.warnings: List[str] = []
        self.iterations = {
            "bandwidth_solves": 0,
            "bandwidth_dual": 0,
            "kernel": 0,
            "feasibility": 0,
            "threshold_inversions": 0,
        }
        n_a_max = scenario.params.n_a_max
        usable = max_subchannels(self.budget, n_a_max)
        if usable == 0:
            raise InfeasibleLatencyError("latency budget leaves no room for any subchannel count")
        if usable < n_a_max:
            self.warnings.append(
                f"n_a truncated to {usable}: larger counts leave no queueing delay budget"
            )
        self.n_a_values = list(range(1, usable + 1))
        self._stages: Dict[int, _Stage] = {}
        self._g_ul: Dict[Tuple[int, int], float] = {}
        self._g_dl: Dict[int, float] = {}
        self._n_t_min_per_na: Optional[Dict[int, int]] = None
        self._n_t_in: Dict[int, int] = {}
        p = scenario.params
        self.throughput = p.packet_bits * float(np.sum(scenario.lam)) / self.budget.t_frame

    def stage(self, n_a: int) -> _Stage:
        if n_a not in self._stages:
            self._stages[n_a] = _Stage(self, n_a)
        return self._stages[n_a]

    def thresholds(self, n_t: int, n_a: int) -> Tuple[float, float]:
        if n_t < 2:
            raise DomainError(f"n_t must be >= 2, got {n_t}")
        key = (n_t, n_a)
        if key not in self._g_ul:
            self.iterations["threshold_inversions"] += 1
            self._g_ul[key] = invert_ul_drop(self.budget.eps_pu, n_t, n_a)
        if n_t not in self._g_dl:
            self.iterations["threshold_inversions"] += 1
            self._g_dl[n_t] = invert_dl_drop(self.budget.eps_pd, n_t)
        return self._g_ul[key], self._g_dl[n_t]

    def cost(self, b, n_t, n_a) -> CostBreakdown:
        ul, dl = self.stage(n_a).split(b)
        return cost_breakdown(ul, dl, n_t, n_a, self.circ, self.throughput, self.budget.eps_max)

    def allocation(self, b, n_t, n_a) -> Allocation:
        st = self.stage(n_a)
        g_u, g_d = self.thresholds(n_t, n_a)
        y = st.y(b)
        M = st.M
        return Allocation(
            b_ul=b[:M].copy(), b_dl=b[M:].copy(),
            p_th_ul=y[:M] / g_u, p_th_dl=y[M:] / g_d,
            n_t=int(n_t), n_a=int(n_a), g_th_ul=g_u, g_th_dl=g_d,
            e_b_dl=st.e_b.copy(),
        )

    # antenna searches

    def min_antennas(self) -> Dict[int, int]:
        if self._n_t_min_per_na is None:
            per = {}
            for n_a in list(self.n_a_values):
                st = self.stage(n_a)
                if not st.feasible(self.psi):
                    per[n_a] = None
                    continue
                per[n_a] = bisect_antennas(lambda n: -1.0 if st.feasible(n) else 1.0, 0, self.psi)
            bad = [n_a for n_a, v in per.items() if v is None]
            if len(bad) == len(per):
                n_a = self.n_a_values[-1]
                raise InfeasibleError(
                    f"no subchannel count is feasible with psi={self.psi} antennas "
                    f"(binding: {self.stage(n_a).binding(self.psi)})",
                    binding=self.stage(n_a).binding(self.psi),
                )
            if bad:
                self.warnings.append(f"n_a in {bad} infeasible even at psi={self.psi}; skipped")
                self.n_a_values = [n for n in self.n_a_values if n not in bad]
            self._n_t_min_per_na = {k: v for k, v in per.items() if v is not None}
        return dict(self._n_t_min_per_na)

    @property
    def n_t_min(self) -> int:
        return max(self.min_antennas().values())

    def inactive_margin(self, n_t, n_a) -> float:
        """Power-cap margin at the bandwidth optimum once caps are slack (z < 0 means slack)."""
        st = self.stage(n_a)
        return st.z_at(st.free_optimum(), n_t)

    def inactive_antennas(self, n_a) -> int:
        if n_a not in self._n_t_in:
            lb = self.min_antennas()[n_a]
            if self.inactive_margin(lb, n_a) < 0:
                self.warnings.append(
                    f"n_a={n_a}: power caps already slack at the minimum n_t={lb} (degenerate case)"
                )
                self._n_t_in[n_a] = lb
            elif not self.inactive_margin(self.psi, n_a) < 0:
                self.warnings.append(f"n_a={n_a}: power caps still active at psi={self.psi}")
                self._n_t_in[n_a] = self.psi
            else:
                self._n_t_in[n_a] = bisect_antennas(
                    lambda n: self.inactive_margin(n, n_a), lb, self.psi, zero_returns_ub=True
                )
        return self._n_t_in[n_a]

    def inactive_per_na(self) -> Dict[int, int]:
        self.min_antennas()
        return {n_a: self.inactive_antennas(n_a) for n_a in self.n_a_values}

    # report assembly

    def report(self, b, n_t, n_a, strategy, candidates, gap=0.0) -> SolverReport:
        alloc = self.allocation(b, n_t, n_a)
        cost = self.cost(b, n_t, n_a)
        z = self.stage(n_a).z_star(n_t)
        per_min = self.min_antennas()
        return SolverReport(
            allocation=alloc,
            cost=cost,
            z_star=z,
            n_t_min=self.n_t_min,
            n_t_in_per_na=dict(self._n_t_in),
            iterations=dict(self.iterations),
            status="optimal",
            strategy=strategy,
            n_t_min_per_na=per_min,
            duality_gap=gap,
            warnings=list(self.warnings),
            candidates=candidates,
        )

    # per-n_a searches over n_t

    def best_nt_optimised_bw(self, n_a, n_lo=None):
        """Three-step steps 1-2 for one n_a: (total, n_t, b, gap, candidates)."""
        st = self.stage(n_a)
        n_lo = self.min_antennas()[n_a] if n_lo is None else n_lo
        n_in = max(self.inactive_antennas(n_a), n_lo)
        best = None
        cands = []
        for n_t in range(n_lo, n_in + 1):
            b, _, gap = st.solve(n_t)
            tot = self.cost(b, n_t, n_a).total_ub
            cands.append((n_a, n_t, tot))
            if best is None or tot < best[0]:
                best = (tot, n_t, b, gap)
        b_in, omega, _ = st.solve(n_in)
        for n_t in _closed_form_candidates(omega, self.circ.omega_d * self.circ.p_c_nt, n_in, self.psi):
            if n_t <= n_in:
                continue
            tot = self.cost(b_in, n_t, n_a).total_ub
            cands.append((n_a, n_t, tot))
            if tot < best[0] or (tot == best[0] and n_t < best[1]):
                best = (tot, n_t, b_in, 0.0)
        return best + (cands,)

    def equal_bandwidths(self, n_a) -> np.ndarray:
        st = self.stage(n_a)
        n = st.a.size
        if n == 0:
            return np.zeros(0)
        return np.minimum(self.scenario.params.w_max / n, st.hi)

    def _fixed_b_feasible(self, b, n_t, n_a) -> bool:
        return self.stage(n_a).z_at(b, n_t) <= 0

    def best_nt_fixed_bw(self, b, n_a, n_lo=None):
        """Best n_t for frozen bandwidths: the bound is convex in n_t, so clamp the closed form."""
        n_lo = self.min_antennas()[n_a] if n_lo is None else n_lo
        if not self._fixed_b_feasible(b, self.psi, n_a):
            return None
        if not self._fixed_b_feasible(b, n_lo, n_a):
            n_lo = bisect_antennas(
                lambda n: -1.0 if self._fixed_b_feasible(b, n, n_a) else 1.0, n_lo, self.psi
            )
        omega = self.stage(n_a).numerator(b)
        best = None
        cands = []
        for n_t in sorted({n_lo, *_closed_form_candidates(omega, self.circ.omega_d * self.circ.p_c_nt, n_lo, self.psi)}):
            tot = self.cost(b, n_t, n_a).total_ub
            cands.append((n_a, n_t, tot))
            if best is None or tot < best[0]:
                best = (tot, n_t)
        return best + (cands,)


def _closed_form_candidates(omega, p_c_nt, n_t_in, psi_cap):
    """Integer neighbours of the continuous minimiser, clamped to [n_t_in, psi_cap]."""
    if omega <= 0 or p_c_nt <= 0:
        return [max(n_t_in, 2)]
    x = 1.0 + math.sqrt(omega / p_c_nt)
    return sorted({min(max(int(v), n_t_in), psi_cap) for v in (math.floor(x), math.ceil(x))})


def bisect_antennas(margin: Callable[[int], float], lb: int, ub: int, zero_returns_ub: bool = False) -> int:
    """Binary search for the smallest n in (lb, ub] with margin(n) <= 0 (or < 0).

    ``margin(ub)`` is assumed to satisfy the target.  With ``zero_returns_ub``
    the target is a strictly negative margin and an exact zero stops the
    search at the current upper bracket; otherwise the target is margin <= 0.
    Counts below 2 are never probed.
    """
    result = ub
    bs = math.ceil(0.5 * (lb + ub))
    while ub - lb > 1 and bs >= 2:
        m = margin(bs)
        if m < 0 or (m == 0 and not zero_returns_ub):
            result = bs
            ub = bs
        elif m == 0:
            result = ub
            break
        else:
            lb = bs
        bs = math.ceil(0.5 * (lb + ub))
    return result


# public operations


def _problem(scenario, budget=None, circ=None, psi=None, problem=None) -> AllocationProblem:
    if problem is not None:
        return problem
    return AllocationProblem(scenario, budget, circ, psi)


def solve_bandwidth(scenario, n_t: int, n_a: int, budget: Optional[QosBudget] = None,
                    circ: Optional[PowerCircuitParams] = None, problem=None):
    """Optimal bandwidths at fixed (n_t, n_a): returns (b_ul, b_dl, objective W).

    The objective is the full average-power bound including circuit terms.
    """
    pb = _problem(scenario, budget, circ, problem=problem)
    st = pb.stage(n_a)
    if not st.feasible(n_t):
        raise InfeasibleError(
            f"bandwidth problem infeasible at n_t={n_t}, n_a={n_a}", binding=st.binding(n_t)
        )
    b, _, _ = st.solve(n_t)
    return b[: st.M].copy(), b[st.M:].copy(), pb.cost(b, n_t, n_a).total_ub


def feasibility_z(scenario, n_t: int, n_a: int, budget: Optional[QosBudget] = None, problem=None) -> float:
    """Least achievable worst power-cap excess (W); the bandwidth problem is feasible iff <= 0."""
    if n_t < 2:
        raise DomainError(f"n_t must be >= 2, got {n_t}")
    pb = _problem(scenario, budget, problem=problem)
    return pb.stage(n_a).z_star(n_t)


def find_min_antennas(scenario, budget: Optional[QosBudget] = None, psi: int = 1024, problem=None):
    """(N_t^min, {n_a: smallest feasible n_t}) by binary search."""
    pb = _problem(scenario, budget, psi=psi, problem=problem)
    per = pb.min_antennas()
    return max(per.values()), per


def find_inactive_antennas(scenario, budget: Optional[QosBudget] = None, n_t_min: Optional[int] = None,
                           psi: int = 1024, problem=None) -> Dict[int, int]:
    """{n_a: smallest n_t >= N_t^min at which both power caps are slack at the optimum}."""
    pb = _problem(scenario, budget, psi=psi, problem=problem)
    pb.min_antennas()
    if n_t_min is not None and n_t_min != pb.n_t_min:
        raise DomainError(f"n_t_min={n_t_min} disagrees with the computed {pb.n_t_min}")
    return pb.inactive_per_na()


def antenna_closed_form(omega: float, p_c_nt: float, n_t_in: int, psi_cap: int = 1024) -> int:
    """ceil(1 + sqrt(omega / p_c_nt)) when at least n_t_in, else n_t_in; capped at psi_cap."""
    if not omega > 0 or not p_c_nt > 0:
        raise DomainError("omega and p_c_nt must be positive")
    cand = math.ceil(1.0 + math.sqrt(omega / p_c_nt))
    return min(max(cand, n_t_in), psi_cap)


def three_step_allocate(scenario, budget: Optional[QosBudget] = None,
                        circ: Optional[PowerCircuitParams] = None, psi: Optional[int] = None,
                        problem=None) -> SolverReport:
    """Joint optimum over bandwidths, antennas (n_t >= N_t^min) and subchannels."""
    pb = _problem(scenario, budget, circ, psi, problem)
    pb.min_antennas()
    best = None
    cands = []
    for n_a in pb.n_a_values:
        tot, n_t, b, gap, c = pb.best_nt_optimised_bw(n_a)
        cands.extend(c)
        log.debug("n_a=%d best n_t=%d total=%.6g W", n_a, n_t, tot)
        if best is None or tot < best[0]:
            best = (tot, n_t, n_a, b, gap)
    tot, n_t, n_a, b, gap = best
    return pb.report(b, n_t, n_a, "joint", cands, gap)


def baseline_allocate(scenario, budget: Optional[QosBudget] = None,
                      circ: Optional[PowerCircuitParams] = None, strategy: str = "eq-bw",
                      psi: Optional[int] = None, problem=None) -> SolverReport:
    """Reference strategies with some of (bandwidth, n_t, n_a) frozen.

    eq-bw     equal bandwidth; n_t and n_a optimised
    fixed-na  n_a = N_a^max; bandwidth and n_t optimised
    fixed-nt  n_t = N_t^in(n_a) for each n_a; bandwidth and n_a optimised
    opt-bw    n_a = N_a^max, n_t = N_t^in(N_a^max); bandwidth optimised
    opt-na    equal bandwidth, n_t = N_t^in(n_a); n_a optimised
    opt-nt    equal bandwidth, n_a = N_a^max; n_t optimised

    N_t^in(n_a) is the per-subchannel-count inactive antenna count and the
    n_t searches start at the per-n_a minimum.  Equal bandwidth means
    min(W_max / (M + K), per-link upper edge).  Combinations that cannot
    meet the power caps within psi antennas are skipped.
    """
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    pb = _problem(scenario, budget, circ, psi, problem)
    pb.min_antennas()
    n_a_top = pb.n_a_values[-1]
    best = None
    cands = []

    def consider(tot, n_t, n_a, b, gap=0.0):
        nonlocal best
        if best is None or tot < best[0]:
            best = (tot, n_t, n_a, b, gap)

    if strategy in ("eq-bw", "opt-nt"):
        for n_a in pb.n_a_values if strategy == "eq-bw" else [n_a_top]:
            b = pb.equal_bandwidths(n_a)
            r = pb.best_nt_fixed_bw(b, n_a)
            if r is None:
                continue
            tot, n_t, c = r
            cands.extend(c)
            consider(tot, n_t, n_a, b)
    elif strategy == "fixed-na":
        tot, n_t, b, gap, c = pb.best_nt_optimised_bw(n_a_top)
        cands.extend(c)
        consider(tot, n_t, n_a_top, b, gap)
    elif strategy in ("fixed-nt", "opt-bw"):
        for n_a in pb.n_a_values if strategy == "fixed-nt" else [n_a_top]:
            n_t = pb.inactive_antennas(n_a)
            b, _, gap = pb.stage(n_a).solve(n_t)
            tot = pb.cost(b, n_t, n_a).total_ub
            cands.append((n_a, n_t, tot))
            consider(tot, n_t, n_a, b, gap)
    elif strategy == "opt-na":
        for n_a in pb.n_a_values:
            n_t = pb.inactive_antennas(n_a)
            b = pb.equal_bandwidths(n_a)
            if not pb._fixed_b_feasible(b, n_t, n_a):
                continue
            tot = pb.cost(b, n_t, n_a).total_ub
            cands.append((n_a, n_t, tot))
            consider(tot, n_t, n_a, b)
    if best is None:
        raise InfeasibleError(f"strategy {strategy} has no feasible allocation", binding="bandwidth")
    tot, n_t, n_a, b, gap = best
    return pb.report(b, n_t, n_a, strategy, cands, gap)


def compare_strategies(scenario, budget=None, circ=None, psi=None) -> Dict[str, SolverReport]:
    """Joint optimum and every baseline on one shared problem cache."""
    pb = AllocationProblem(scenario, budget, circ, psi)
    out = {"joint": three_step_allocate(scenario, problem=pb)}
    for s in STRATEGIES:
        try:
            out[s] = baseline_allocate(scenario, strategy=s, problem=pb)
        except InfeasibleError as exc:
            log.warning("strategy %s infeasible: %s", s, exc)
    return out


# exhaustive references used to cross-check the binary searches


def linear_scan_min_antennas(problem: AllocationProblem, n_a: int) -> int:
    st = problem.stage(n_a)
    for n_t in range(2, problem.psi + 1):
        if st.feasible(n_t):
            return n_t
    raise InfeasibleError(f"n_a={n_a} infeasible up to psi={problem.psi}")


def linear_scan_inactive(problem: AllocationProblem, n_a: int) -> int:
    for n_t in range(problem.min_antennas()[n_a], problem.psi + 1):
        if problem.inactive_margin(n_t, n_a) < 0:
            return n_t
    return problem.psi


def check_allocation(alloc: Allocation, scenario, budget: QosBudget, rtol: float = 1e-9) -> List[str]:
    """Constraint violations of an allocation (empty list when feasible)."""
    p = scenario.params
    issues = []
    total_b = float(alloc.b_ul.sum() + alloc.b_dl.sum())
    if total_b > p.w_max * (1 + rtol):
        issues.append(f"bandwidth {total_b:.6g} Hz exceeds W_max")
    if np.any(alloc.b_ul > p.w_c * (1 + rtol)) or np.any(alloc.b_dl > p.w_c * (1 + rtol)):
        issues.append("bandwidth above coherence cap")
    if alloc.p_th_ul.size and float(alloc.p_th_ul.max()) > p.p_max_u * (1 + rtol):
        issues.append("UL power threshold above cap")
    if float(alloc.p_th_dl.sum()) > p.p_max_d * (1 + rtol):
        issues.append("DL sum power threshold above cap")
    if alloc.n_t < 2 or not 1 <= alloc.n_a <= p.n_a_max:
        issues.append("antenna or subchannel count out of range")
    return issues


__all__ = [
    "Allocation",
    "AllocationProblem",
    "SolverReport",
    "STRATEGIES",
    "antenna_closed_form",
    "baseline_allocate",
    "bisect_antennas",
    "check_allocation",
    "compare_strategies",
    "feasibility_z",
    "find_inactive_antennas",
    "find_min_antennas",
    "linear_scan_inactive",
    "linear_scan_min_antennas",
    "slope_inverse",
    "solve_bandwidth",
    "three_step_allocate",
    "total_power_upper_bound",
]
