"""Command-line entry point: ``risflow <command> [options]``.

Exit status: 0 on success, 1 for configuration errors, 2 for numeric or
oracle failures.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import flowsim, fluid
from .config import PROFILES, Config, load_config, scenario_hash
from .errors import ConfigError, RisFlowError
from .output import trace_header, trace_rows, write_csv, write_json
from .phase_opt import PhaseSolution, optimize

log = logging.getLogger("risflow")

COMMANDS = ("optimize", "simulate", "region", "fluid", "sweep", "validate")


@dataclass
class ExperimentSpec:
    kind: str
    config: Optional[str] = None
    profile: str = "desk"
    out: Path = Path("out")
    seed: Optional[int] = None
    policy: Optional[str] = None
    slots: Optional[int] = None
    overrides: list = field(default_factory=list)
    reduced: bool = False

    def __post_init__(self):
        if self.kind not in COMMANDS:
            raise ConfigError(f"unknown command {self.kind!r}")
        self.out = Path(self.out)

    def load(self) -> Config:
        ov = list(self.overrides)
        if self.seed is not None:
            ov.append(f"simulation.seed={self.seed}")
        if self.policy is not None:
            ov.append(f"simulation.policy={self.policy}")
        if self.slots is not None:
            ov.append(f"simulation.slots={self.slots}")
        return load_config(self.config, self.profile, ov)


def _meta(cfg: Config, command: str, seed: int, **extra) -> dict:
    return {"command": command, "config_hash": cfg.hash, "scenario_hash": scenario_hash(cfg.scenario),
            "seed": seed, "profile": cfg.profile, **extra}


def _run_seed(cfg: Config) -> int:
    return cfg.getint("simulation", "seed", cfg.seed)


def _solution(cfg: Config, stats) -> PhaseSolution:
    mode = cfg.get("phase", "mode")
    levels = cfg.getint("phase", "levels", 0) or None
    return optimize(stats, mode=mode, n_rand=cfg.getint("phase", "n_rand"),
                    rng=np.random.default_rng(cfg.seed), levels=levels)


def _policy(kind: str, stats, solution):
    try:
        return flowsim.make_policy(kind, stats, solution)
    except RisFlowError as exc:
        raise ConfigError(str(exc)) from None


def cmd_optimize(spec: ExperimentSpec) -> dict:
    cfg = spec.load()
    stats = cfg.stats()
    sol = _solution(cfg, stats)
    payload = sol.to_dict()
    write_json(spec.out / "optimize.json", payload, _meta(cfg, "optimize", cfg.seed))
    log.info("eta=%.6g sdp_upper=%.6g gamma=%.4f mode=%s", sol.eta, sol.sdp_upper, sol.gamma, sol.mode)
    return payload


def cmd_simulate(spec: ExperimentSpec) -> dict:
    cfg = spec.load()
    sc, stats = cfg.scenario, cfg.stats()
    sol = _solution(cfg, stats)
    kind = cfg.get("simulation", "policy")
    pol = _policy(kind, stats, sol)
    T = cfg.getint("simulation", "slots")
    window = cfg.getint("simulation", "window")
    seed = _run_seed(cfg)
    tr = flowsim.run(sc, stats, pol, T, seed, scenario_hash=scenario_hash(sc))
    meta = _meta(cfg, "simulate", seed, policy=kind)
    write_csv(spec.out / "trace.csv", trace_header(sc.K), trace_rows(tr, window), meta)
    ma = flowsim.moving_average(tr.total[:-1], window)
    trend = flowsim.trend_test(ma) if ma.size >= 12 else None
    summary = {
        "slots": T,
        "stability_metric": flowsim.stability_metric(tr, T),
        "mean_per_location": tr.x[:-1].mean(axis=0),
        "arrivals": tr.arrivals.sum(axis=0),
        "departures": tr.departures.sum(axis=0),
        "conserved": tr.conserved(),
        "trend_slope": trend.slope if trend else None,
        "trend_p_positive": trend.p_positive if trend else None,
        "diverging": trend.diverging() if trend else None,
        "slope_rule_unstable": flowsim.slope_unstable(tr, window, cfg.getfloat("simulation", "threshold")),
    }
    write_json(spec.out / "summary.json", summary, meta)
    log.info("stability metric %.4g, diverging=%s", summary["stability_metric"], summary["diverging"])
    return summary


def cmd_region(spec: ExperimentSpec) -> list:
    cfg = spec.load()
    sc, stats = cfg.scenario, cfg.stats()
    if sc.K != 2:
        raise ConfigError(f"region estimation uses angles in the plane; K must be 2, got {sc.K}")
    sol = _solution(cfg, stats)
    angles = cfg.floats("region", "rays_deg")
    seed = _run_seed(cfg)
    rows = []
    if not angles:
        log.warning("no rays configured; writing an empty boundary file")
    rays = flowsim.rays_from_angles(angles)
    for kind in cfg.words("region", "policies"):
        pol = _policy(kind, stats, sol)
        pts = flowsim.estimate_region(
            sc, stats, pol, rays, T=cfg.getint("simulation", "slots"),
            threshold=cfg.getfloat("simulation", "threshold"), rng=seed,
            window=cfg.getint("simulation", "window"), rel_tol=cfg.getfloat("region", "rel_tol"))
        for a, p in zip(angles, pts):
            rows.append((kind, a, *p.direction, p.scale, p.lower, p.upper, p.bracketed))
    header = ["policy", "angle_deg", "d_1", "d_2", "scale", "lower", "upper", "bracketed"]
    write_csv(spec.out / "region.csv", header, rows, _meta(cfg, "region", seed))
    return rows


def cmd_fluid(spec: ExperimentSpec) -> dict:
    cfg = spec.load()
    sc, stats = cfg.scenario, cfg.stats()
    sol = _solution(cfg, stats)
    rates = fluid.rate_map(sc, stats, sol.eta)
    box = fluid.all_active_rates(rates, sc.K)
    direction = sc.arrival_rates if np.any(sc.arrival_rates > 0) else np.ones(sc.K)
    load = cfg.getfloat("fluid", "load")
    if load > 0:
        s = fluid.box_boundary_scale(direction, box)
        lam = load * s * direction / np.linalg.norm(direction)
    else:
        lam = sc.arrival_rates.copy()
    slack = box - lam
    scale = 1.0 / slack.min() if slack.min() > 0 else 1.0 / box.min()
    dt = cfg.getfloat("fluid", "dt") or 1e-3 * scale
    horizon = cfg.getfloat("fluid", "horizon") or 5.0 * scale
    y0 = fluid.FluidState.normalized(np.ones(sc.K))
    traj = fluid.fluid_integrate(y0, lam, rates, horizon, dt)
    inside = bool(np.all(sol.gamma * lam < box))
    if inside:
        eps = fluid.select_epsilon(lam, fluid.box_boundary_scale(lam, box), sol.gamma)
    else:
        eps = cfg.getfloat("fluid", "eps", 0.1)
    rep = fluid.drift_check(traj, lam, sol.gamma, eps)
    L = fluid.lyapunov_value(traj.Y, lam, sol.gamma, eps)
    meta = _meta(cfg, "fluid", cfg.seed)
    header = ["t", *[f"Y_{k + 1}" for k in range(sc.K)], "lyapunov"]
    write_csv(spec.out / "fluid.csv", header,
              ((t, *y.tolist(), l) for t, y, l in zip(traj.t, traj.Y, L)), meta)
    report = {"lambda": lam, "gamma": sol.gamma, "inside": inside, "dt": dt, "horizon": horizon,
              **rep.to_dict(), "drained_by_bound": rep.drained_by_bound(5 * dt)}
    write_json(spec.out / "drift.json", report, meta)
    return report


def cmd_sweep(spec: ExperimentSpec) -> list:
    cfg = spec.load()
    sc, stats = cfg.scenario, cfg.stats()
    sol = _solution(cfg, stats)
    grid = cfg.floats("sweep", "rates")
    if not grid:
        top = float(np.mean(flowsim.alone_rates(sc, stats, sol.eta))) / sc.K
        grid = np.linspace(0.1, 1.5, 8) * top
    T = cfg.getint("simulation", "slots")
    seed = _run_seed(cfg)
    rows = []
    for kind in cfg.words("sweep", "policies"):
        res = flowsim.metric_sweep(sc, stats, _policy(kind, stats, sol), grid, T, seed,
                                   cfg.getint("simulation", "window"), cfg.getfloat("simulation", "threshold"))
        rows += [(kind, float(lam), float(v), bool(u)) for lam, v, u in zip(res.rates, res.metric, res.unstable)]
        log.info("%s: divergence onset at lambda=%.4g", kind, res.onset)
    write_csv(spec.out / "sweep.csv", ["policy", "lambda", "stability_metric", "unstable"], rows,
              _meta(cfg, "sweep", seed))
    return rows


def cmd_validate(spec: ExperimentSpec) -> list:
    from .validate import run_oracles

    cfg = spec.load()  # a bad config fails here, before any oracle runs
    seed = _run_seed(cfg)
    results = run_oracles(seed, reduced=spec.reduced)
    for r in results:
        print(r.line())
    write_json(spec.out / "validate.json",
               {"results": [r.__dict__ for r in results], "reduced": spec.reduced},
               _meta(cfg, "validate", seed))
    return results


HANDLERS = {
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "region": cmd_region,
    "fluid": cmd_fluid,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="risflow", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI config file layered on top of the profile")
    ap.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    ap.add_argument("--paper-scale", action="store_true", help="shorthand for --profile paper (slow)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="simulation seed (geometry uses scenario.seed)")
    ap.add_argument("--policy", choices=("optimized", "equal", "random", "tdma"))
    ap.add_argument("--slots", type=int)
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("--reduced", action="store_true", help="validate: smaller samples, wider tolerances")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = ExperimentSpec(args.command, args.config, "paper" if args.paper_scale else args.profile,
                              args.out, args.seed, args.policy, args.slots, args.overrides, args.reduced)
        result = HANDLERS[spec.kind](spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RisFlowError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    if spec.kind == "validate" and not all(r.passed for r in result):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
