"""Scenario construction: device placement, path loss, traffic and system defaults.

Everything downstream works in linear SI units (W, Hz, s); dBm and dB only
appear through the converters here.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DomainError
from .powermodel import PowerCircuitParams
from .qos import LinkParams, QosBudget


def dbm_to_w(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) * 1e-3


def w_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w * 1e3)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemParams:
    # reliability and latency
    eps_max: float = 1e-7
    d_max: float = 1.1e-3  # end to end, backhaul included
    d_backhaul: float = 1e-4
    t_frame: float = 1e-4
    tau: float = 5e-5
    # radio
    w_max: float = 100e6
    w_c: float = 0.5e6
    packet_bits: float = 160.0
    phi: float = 1.5
    n0: float = dbm_to_w(-173.0)  # W/Hz
    p_max_u: float = dbm_to_w(23.0)
    p_max_d: float = dbm_to_w(40.0)
    # power model
    rho_u: float = 0.5
    rho_d: float = 0.5
    p_c_nt: float = dbm_to_w(33.0)
    p_c_na: float = dbm_to_w(21.0)
    p_c_u: float = dbm_to_w(18.0)
    omega_u: float = 1.0
    omega_d: float = 1.0
    # configuration space and traffic
    n_a_max: int = 6
    psi: int = 1024
    kappa: float = 0.01  # 100 packets/s at 0.1 ms frames
    # geometry
    r_min: float = 50.0
    r_max: float = 250.0
    proximity: float = 50.0
    pl_intercept_db: float = -35.3
    pl_slope_db: float = 37.6
    shadowing_std_db: float = 0.0

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise DomainError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.n_a_max < 1 or self.psi < 2:
            raise DomainError("n_a_max must be >= 1 and psi >= 2")
        if not 0 < self.r_min < self.r_max:
            raise DomainError("need 0 < r_min < r_max")
        if not self.w_max > 0 or not self.w_c > 0:
            raise DomainError("w_max and w_c must be positive")
        if not self.p_max_u > 0 or not self.p_max_d > 0:
            raise DomainError("power caps must be positive")

    def budget(self, **overrides) -> QosBudget:
        kw = dict(
            d_max=self.d_max,
            d_backhaul=self.d_backhaul,
            t_frame=self.t_frame,
            eps_max=self.eps_max,
        )
        kw.update(overrides)
        return QosBudget(**kw)

    def circuit(self) -> PowerCircuitParams:
        return PowerCircuitParams(
            rho_u=self.rho_u,
            rho_d=self.rho_d,
            p_c_u=self.p_c_u,
            p_c_nt=self.p_c_nt,
            p_c_na=self.p_c_na,
            omega_u=self.omega_u,
            omega_d=self.omega_d,
        )

    def link(self, mu: float) -> LinkParams:
        return LinkParams(
            mu=mu, bandwidth_cap=self.w_c, tau=self.tau,
            packet_bits=self.packet_bits, phi=self.phi, n0=self.n0,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown system parameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Sensor:
    id: int
    mu: float
    distance: float
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class User:
    id: int
    mu: float
    distance: float
    lam: float
    active_set_size: int
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class Scenario:
    sensors: tuple
    users: tuple
    params: SystemParams = field(default_factory=SystemParams)

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "users", tuple(self.users))
        for dev in self.sensors + self.users:
            if not dev.mu > 0:
                raise DomainError(f"device {dev.id} has nonpositive mu")
        for u in self.users:
            if not u.lam > 0:
                raise DomainError(f"user {u.id} has no traffic")

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def mu_ul(self) -> np.ndarray:
        return np.array([s.mu for s in self.sensors], dtype=float)

    @property
    def mu_dl(self) -> np.ndarray:
        return np.array([u.mu for u in self.users], dtype=float)

    @property
    def lam(self) -> np.ndarray:
        return np.array([u.lam for u in self.users], dtype=float)

    def with_params(self, params: SystemParams) -> "Scenario":
        return Scenario(self.sensors, self.users, params)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "sensors": [asdict(s) for s in self.sensors],
            "users": [asdict(u) for u in self.users],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            params = SystemParams.from_dict(d.get("params", {}))
            sensors = [Sensor(**s) for s in d.get("sensors", [])]
            users = [User(**u) for u in d.get("users", [])]
        except TypeError as exc:
            raise ConfigError(f"malformed scenario: {exc}") from exc
        return cls(sensors, users, params)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def path_loss(d: float, params: Optional[SystemParams] = None) -> float:
    """Large-scale gain 10 lg(mu) = -35.3 - 37.6 lg(d), d in metres."""
    if not d > 0:
        raise DomainError(f"distance must be positive, got {d}")
    p = params or SystemParams()
    return 10.0 ** ((p.pl_intercept_db - p.pl_slope_db * math.log10(d)) / 10.0)


def _place(n: int, rng: np.random.Generator, params: SystemParams):
    r = rng.uniform(params.r_min, params.r_max, size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return r, r * np.cos(theta), r * np.sin(theta)


def generate_scenario(
    n_sensors: int, n_users: int, seed: int, params: Optional[SystemParams] = None
) -> Scenario:
    """Random cell: distances to the BS uniform on [r_min, r_max], angles uniform.

    A user's arrival rate is kappa times the number of sensors within
    ``proximity`` of it, counting at least one so every user carries traffic.
    """
    if n_sensors < 0 or n_users < 0:
        raise DomainError("device counts must be nonnegative")
    params = params or SystemParams()
    rng = np.random.default_rng(seed)
    rs, xs, ys = _place(n_sensors, rng, params)
    ru, xu, yu = _place(n_users, rng, params)
    shadow_s = shadow_u = None
    if params.shadowing_std_db > 0:
        shadow_s = rng.normal(0.0, params.shadowing_std_db, size=n_sensors)
        shadow_u = rng.normal(0.0, params.shadowing_std_db, size=n_users)

    def gain(d, i, shadow):
        mu = path_loss(float(d), params)
        return mu * db_to_linear(float(shadow[i])) if shadow is not None else mu

    sensors = [
        Sensor(i, gain(rs[i], i, shadow_s), float(rs[i]), float(xs[i]), float(ys[i]))
        for i in range(n_sensors)
    ]
    users = []
    for k in range(n_users):
        if n_sensors:
            dist = np.hypot(xs - xu[k], ys - yu[k])
            n_near = int(np.count_nonzero(dist < params.proximity))
        else:
            n_near = 0
        size = max(n_near, 1)
        users.append(
            User(k, gain(ru[k], k, shadow_u), float(ru[k]), size * params.kappa, size,
                 float(xu[k]), float(yu[k]))
        )
    return Scenario(sensors, users, params)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return Scenario.from_dict(d)
