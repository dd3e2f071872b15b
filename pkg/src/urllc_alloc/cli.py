"""Command-line front end.

    urllc-alloc generate     write a random scenario
    urllc-alloc solve        joint (or baseline) allocation as JSON
    urllc-alloc feasibility  z* against n_t for every n_a (CSV)
    urllc-alloc compare      joint optimum against the six baselines (CSV)
    urllc-alloc sweep-na     best power per subchannel count (CSV)
    urllc-alloc sweep-pop    power and energy efficiency against population (CSV)
    urllc-alloc validate     Monte Carlo check of a solved allocation (JSON)

Exit codes: 0 success, 2 bad configuration, 3 infeasible problem, 1 other
solver errors.  Errors are also printed to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AllocError, ConfigError, InfeasibleError, InfeasibleLatencyError
from .montecarlo import SimConfig, validate_allocation
from .scenario import Scenario, SystemParams, generate_scenario, load_scenario, save_scenario, w_to_dbm
from .solver import (
    STRATEGIES,
    Allocation,
    AllocationProblem,
    baseline_allocate,
    compare_strategies,
    three_step_allocate,
)

log = logging.getLogger("urllc_alloc")

SECTIONS = {
    "system": {f.name for f in fields(SystemParams)},
    "scenario": {"n_sensors", "n_users", "file"},
    "sim": {f.name for f in fields(SimConfig)},
    "sweep": {"n_t_max", "populations"},
}
DEFAULT_SCENARIO = {"n_sensors": 300, "n_users": 100, "file": None}
DEFAULT_SWEEP = {"n_t_max": None, "populations": [[50, 10], [100, 20], [150, 30], [200, 40]]}


def load_config(path) -> dict:
    """Read a JSON config and reject unknown sections or keys."""
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    for sec, body in cfg.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section {sec!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec!r} must be an object")
        unknown = set(body) - SECTIONS[sec]
        if unknown:
            raise ConfigError(f"unknown key(s) in {sec!r}: {sorted(unknown)}")
    out = {
        "system": dict(cfg.get("system", {})),
        "scenario": {**DEFAULT_SCENARIO, **cfg.get("scenario", {})},
        "sim": dict(cfg.get("sim", {})),
        "sweep": {**DEFAULT_SWEEP, **cfg.get("sweep", {})},
    }
    try:
        SystemParams.from_dict(out["system"])
        SimConfig(**out["sim"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return out


class Run:
    """One command invocation: resolved config, output directory and manifest."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.time()
        self.cfg = load_config(args.config)
        if args.seed is not None:
            self.cfg["sim"]["seed"] = args.seed
        if getattr(args, "trials", None) is not None:
            self.cfg["sim"]["trials"] = args.trials
            self.cfg["sim"]["frames"] = args.trials
        if getattr(args, "relaxed_eps", None) is not None:
            self.cfg["sim"]["relaxed_eps"] = args.relaxed_eps
        self.seed = int(self.cfg["sim"].get("seed", 0))
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.params = SystemParams.from_dict(self.cfg["system"])
        self.outputs = []
        key = json.dumps({"command": args.command, "config": self.cfg, "seed": self.seed,
                          "extra": self.extra_inputs()}, sort_keys=True, default=str)
        self.manifest_id = hashlib.sha256(key.encode()).hexdigest()[:16]

    def extra_inputs(self):
        a = self.args
        return {k: getattr(a, k, None) for k in ("scenario", "solution", "strategy")}

    def scenario(self) -> Scenario:
        path = getattr(self.args, "scenario", None) or self.cfg["scenario"].get("file")
        if path:
            sc = load_scenario(path)
            if self.cfg["system"]:
                sc = sc.with_params(self.params)
            return sc
        s = self.cfg["scenario"]
        return generate_scenario(int(s["n_sensors"]), int(s["n_users"]), self.seed, self.params)

    def write_json(self, name, obj):
        obj = {"manifest": self.manifest_id, **obj}
        path = self.out / name
        with open(path, "w") as fh:
            json.dump(_plain(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.outputs.append(str(path))
        return path

    def write_csv(self, name, header, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# manifest={self.manifest_id}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.outputs.append(str(path))
        return path

    def finish(self):
        manifest = {
            "manifest": self.manifest_id,
            "command": self.args.command,
            "config_path": self.args.config,
            "seed": self.seed,
            "outputs": self.outputs,
            "version": __version__,
            "wall_clock_s": time.time() - self.t0,
        }
        with open(self.out / "run_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    return o


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _dbm(w):
    return w_to_dbm(w) if w > 0 else -math.inf


# subcommands


def cmd_generate(run: Run):
    sc = run.scenario()
    path = run.out / "scenario.json"
    save_scenario(sc, path)
    run.outputs.append(str(path))
    print(path)


def cmd_solve(run: Run):
    sc = run.scenario()
    strategy = run.args.strategy or "joint"
    if strategy == "joint":
        rep = three_step_allocate(sc)
    else:
        rep = baseline_allocate(sc, strategy=strategy)
    log.info("iterations %s, duality gap %.3g", rep.iterations, rep.duality_gap)
    path = run.write_json("solution.json", {"scenario_digest": sc.digest(), "report": rep.to_dict()})
    save_scenario(sc, run.out / "scenario.json")
    run.outputs.append(str(run.out / "scenario.json"))
    print(f"{strategy}: n_t={rep.allocation.n_t} n_a={rep.allocation.n_a} "
          f"total={rep.cost.total_dbm:.3f} dBm -> {path}")


def cmd_feasibility(run: Run):
    sc = run.scenario()
    pb = AllocationProblem(sc)
    per = pb.min_antennas()
    n_max = run.cfg["sweep"]["n_t_max"] or min(pb.psi, max(per.values()) + 20)
    rows = []
    for n_a in pb.n_a_values:
        st = pb.stage(n_a)
        for n_t in range(2, int(n_max) + 1):
            rows.append((n_a, n_t, st.z_star(n_t), per[n_a]))
    path = run.write_csv("feasibility.csv", ["n_a", "n_t", "z_star_W", "n_t_min"], rows)
    print(path)


def cmd_compare(run: Run):
    sc = run.scenario()
    reports = compare_strategies(sc)
    joint = reports["joint"].cost.total_ub
    rows = []
    for name in ("joint",) + STRATEGIES:
        r = reports.get(name)
        if r is None:
            rows.append((name, "infeasible", "", "", math.inf, math.inf, ""))
            continue
        rows.append((
            name, "ok", r.allocation.n_t, r.allocation.n_a, r.cost.total_dbm,
            10.0 * math.log10(r.cost.total_ub / joint), r.cost.ee / 1e6,
        ))
    path = run.write_csv(
        "compare.csv",
        ["strategy", "status", "n_t", "n_a", "total_power_dBm", "gap_dB", "ee_Mbit_per_J"],
        rows,
    )
    print(path)


def cmd_sweep_na(run: Run):
    sc = run.scenario()
    pb = AllocationProblem(sc)
    pb.min_antennas()
    rows = []
    for n_a in pb.n_a_values:
        tot, n_t, b, _, _ = pb.best_nt_optimised_bw(n_a)
        c = pb.cost(b, n_t, n_a)
        rows.append((n_a, n_t, _dbm(c.total_ub), _dbm(c.ul_tx), _dbm(c.dl_tx),
                     _dbm(c.circuit_antenna + c.circuit_carrier + c.circuit_sensor),
                     float(b.sum()) / 1e6))
    path = run.write_csv(
        "sweep_na.csv",
        ["n_a", "n_t", "total_power_dBm", "ul_tx_dBm", "dl_tx_dBm", "circuit_dBm", "bandwidth_MHz"],
        rows,
    )
    print(path)


def cmd_sweep_pop(run: Run):
    rows = []
    for m, k in run.cfg["sweep"]["populations"]:
        sc = generate_scenario(int(m), int(k), run.seed, run.params)
        try:
            rep = three_step_allocate(sc)
        except InfeasibleError as exc:
            log.warning("population (%d, %d) infeasible: %s", m, k, exc)
            rows.append((m, k, "infeasible", "", "", math.inf, ""))
            continue
        rows.append((m, k, "ok", rep.allocation.n_t, rep.allocation.n_a,
                     rep.cost.total_dbm, rep.cost.ee / 1e6))
    path = run.write_csv(
        "sweep_pop.csv",
        ["n_sensors", "n_users", "status", "n_t", "n_a", "total_power_dBm", "ee_Mbit_per_J"],
        rows,
    )
    print(path)


def _load_solution(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
        a = d["report"]["allocation"]
        return d, Allocation(
            b_ul=np.array(a["b_ul_hz"], dtype=float),
            b_dl=np.array(a["b_dl_hz"], dtype=float),
            p_th_ul=np.array(a["p_th_ul_w"], dtype=float),
            p_th_dl=np.array(a["p_th_dl_w"], dtype=float),
            n_t=int(a["n_t"]),
            n_a=int(a["n_a"]),
            g_th_ul=float(a["g_th_ul"]),
            g_th_dl=float(a["g_th_dl"]),
            e_b_dl=np.array(a["e_b_dl_packets_per_frame"], dtype=float),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read solution {path}: {exc}") from exc


def cmd_validate(run: Run):
    sol_path = run.args.solution or run.out / "solution.json"
    scen_path = run.args.scenario or Path(sol_path).with_name("scenario.json")
    sol, alloc = _load_solution(sol_path)
    sc = load_scenario(scen_path)
    if sol.get("scenario_digest") not in (None, sc.digest()):
        raise ConfigError("solution was computed for a different scenario")
    sim = SimConfig(**run.cfg["sim"])
    if sim.relaxed_eps is None:
        log.warning("validating at the design targets: rare events will not be observed")
    rep = validate_allocation(sc, alloc, sc.params.budget(), sim)
    path = run.write_json("validation.json", {"sim": asdict(sim), "report": rep.to_dict()})
    print(f"validation {'passed' if rep.passed else 'FAILED'} -> {path}")


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "feasibility": cmd_feasibility,
    "compare": cmd_compare,
    "sweep-na": cmd_sweep_na,
    "sweep-pop": cmd_sweep_pop,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with system/scenario/sim/sweep sections")
    common.add_argument("--seed", type=int, help="master seed for placement and simulation")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--scenario", help="scenario file to use instead of generating one")
    common.add_argument("--verbose", action="store_true", help="log solver iteration counts")
    p = argparse.ArgumentParser(prog="urllc-alloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "solve":
            sp.add_argument("--strategy", choices=("joint",) + STRATEGIES, default="joint")
        if name == "validate":
            sp.add_argument("--solution", help="solution.json from solve (default: <out>/solution.json)")
            sp.add_argument("--trials", type=int, help="UL trials and DL frames per device")
            sp.add_argument("--relaxed-eps", type=float, dest="relaxed_eps",
                            help="dropping and queueing target used for simulation")
    return p


def _error(kind, exc, code):
    print(json.dumps({"error": kind, "message": str(exc),
                      "binding": getattr(exc, "binding", None)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command](run)
        run.finish()
    except ConfigError as exc:
        return _error("ConfigError", exc, 2)
    except InfeasibleError as exc:
        return _error("InfeasibleError", exc, 3)
    except InfeasibleLatencyError as exc:
        exc.binding = "latency"
        return _error("InfeasibleLatencyError", exc, 3)
    except AllocError as exc:
        return _error(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
