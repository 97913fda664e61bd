"""Command-line experiment runner.

Every subcommand writes its tables and a ``manifest.json`` into ``--out``.
Exit codes: 2 for configuration errors, 3 for infeasible designs and 4
for solver failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, admm, scenarios, simulate
from .lp import SolverError, export
from .model import ConfigError, Mode, load_config
from .policy import save_policies
from .reformulate import DesignInfeasible, build, solve_design
from .uncertainty import CapExceeded

log = logging.getLogger("policynet")

EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 2, 3, 4

MODE_ALIASES = {
    "centralized": Mode.CENTRALIZED,
    "partially-nested": Mode.PARTIALLY_NESTED,
    "pn": Mode.PARTIALLY_NESTED,
    "local": Mode.LOCAL_RECT,
    "local-rect": Mode.LOCAL_RECT,
    "local-flexible": Mode.LOCAL_FLEXIBLE,
    "flexible": Mode.LOCAL_FLEXIBLE,
}


def parse_mode(text: str) -> Mode:
    key = text.strip().lower().replace("_", "-")
    if key not in MODE_ALIASES:
        raise ConfigError(f"unknown mode {text!r}; choose from {', '.join(MODE_ALIASES)}")
    return MODE_ALIASES[key]


def parse_seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9, ``"3,5,8"`` lists them, ``"2:6"`` is a half-open range."""
    text = text.strip()
    if not text:
        raise ConfigError("empty seed list")
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif ":" in text:
            a, b = (int(s) for s in text.split(":"))
            seeds = list(range(a, b))
        else:
            seeds = list(range(int(text)))
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    scenario: dict
    modes: list
    seeds: list
    solver: dict
    out: str
    version: str = __version__
    python: str = field(default_factory=platform.python_version)
    phases: dict = field(default_factory=dict)

    def phase(self, name: str, seconds: float):
        self.phases[name] = self.phases.get(name, 0.0) + round(seconds, 6)

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


def _scenario_params(args) -> dict:
    if args.config:
        return {"config": str(args.config)}
    return {"name": args.scenario, "M": args.M, "topology": args.topology, "T": args.T,
            "theta": args.theta, "delay": args.delay, "decoupled": args.decoupled,
            "zero_epsilon": args.zero_epsilon, "data": [str(d) for d in args.data or []]}


def load_network(args, seed: int):
    if args.config:
        return load_config(args.config)
    return scenarios.build_scenario(
        args.scenario, seed=seed, theta=args.theta, M=args.M, topology=args.topology, T=args.T,
        delay=args.delay, decoupled=args.decoupled, data=args.data or None,
        zero_epsilon=args.zero_epsilon)


def _design(args):
    return partial(solve_design, tol=args.lp_tol, max_iters=args.lp_max_iters)


def _seeds(args) -> list[int]:
    return parse_seeds(args.seeds) if args.seeds is not None else [args.seed]


def _modes(args, default) -> list[Mode]:
    text = args.mode or default
    return [parse_mode(m) for m in text.split(",")]


def _write_csv(path: Path, header: list, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _threads() -> int:
    return admm._workers()


# -- subcommands -----------------------------------------------------------

def cmd_solve(args, man: RunManifest, out: Path) -> int:
    mode = _modes(args, "centralized")[0]
    t0 = time.perf_counter()
    net, cfg = load_network(args, args.seed)
    man.phase("build_network", time.perf_counter() - t0)
    t0 = time.perf_counter()
    res = _design(args)(net, cfg.with_mode(mode))
    man.phase("solve", time.perf_counter() - t0)
    summary = res.summary()
    (out / "solution.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    save_policies(res.policies, out / "policies.json")
    print(f"{mode.value}: objective {res.objective:.10g}")
    return 0


def cmd_compare(args, man: RunManifest, out: Path) -> int:
    modes = _modes(args, "centralized,partially-nested,local")
    seeds = _seeds(args)
    design = _design(args)

    def one(seed):
        net, cfg = load_network(args, seed)
        rows = {}
        for m in modes:
            t0 = time.perf_counter()
            obj = design(net, cfg.with_mode(m)).objective
            rows[m] = (obj, 1e3 * (time.perf_counter() - t0))
        return seed, rows

    t0 = time.perf_counter()
    with ThreadPoolExecutor(_threads()) as pool:
        results = sorted(pool.map(one, seeds), key=lambda r: r[0])
    man.phase("solve", time.perf_counter() - t0)
    table = []
    for seed, rows in results:
        ref = rows.get(Mode.CENTRALIZED, (None,))[0]
        for m in modes:
            obj, ms = rows[m]
            sub = "" if ref is None else _fmt(scenarios.suboptimality(obj, ref))
            table.append([seed, m.value, _fmt(obj), f"{ms:.3f}", sub])
    _write_csv(out / "compare.csv", ["seed", "mode", "objective", "solve_ms", "suboptimality"], table)
    for row in table:
        print(",".join(str(c) for c in row))
    return 0


def cmd_admm(args, man: RunManifest, out: Path) -> int:
    net, cfg = load_network(args, args.seed)
    cfg = cfg.with_mode(Mode.LOCAL_RECT)
    t0 = time.perf_counter()
    mono = _design(args)(net, cfg).objective
    man.phase("monolithic", time.perf_counter() - t0)
    t0 = time.perf_counter()
    res = admm.run(net, cfg, rho=args.admm_rho, tol=args.admm_tol, max_iters=args.admm_max_iters)
    man.phase("admm", time.perf_counter() - t0)
    admm.write_log(res, out / "admm_log.csv")
    gap = abs(res.objective - mono)
    summary = {"objective": res.objective, "monolithic": mono, "gap": gap,
               "iterations": res.state.k, "converged": res.converged,
               "primal_res": res.state.primal[-1], "dual_res": res.state.dual[-1],
               "y": {str(j): v.tolist() for j, v in res.y.items()},
               "z": {str(j): v.tolist() for j, v in res.z.items()}}
    (out / "admm.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"admm: {res.state.k} iterations, objective {res.objective:.10g}, gap {gap:.3e}")
    if not res.converged:
        log.error("ADMM did not converge in %d iterations", args.admm_max_iters)
        return EXIT_SOLVER
    return 0


def cmd_roll(args, man: RunManifest, out: Path) -> int:
    mode = _modes(args, "local")[0]
    seeds = _seeds(args)
    design = _design(args)

    def one(seed):
        net, cfg = load_network(args, seed)
        return seed, simulate.roll(net, cfg.with_mode(mode), seed=seed, design=design)

    t0 = time.perf_counter()
    with ThreadPoolExecutor(_threads()) as pool:
        results = sorted(pool.map(one, seeds), key=lambda r: r[0])
    man.phase("roll", time.perf_counter() - t0)
    rows = [[seed, mode.value, agent, stage, _fmt(c)]
            for seed, r in results for agent, stage, c in r.stage_costs]
    _write_csv(out / "roll.csv", ["seed", "mode", "agent", "stage", "cost"], rows)
    per_seed = [{"seed": s, "realized": r.realized, "worst_case": r.worst_case, "ratio": r.ratio,
                 "dynamics_residual": r.trajectory.dynamics_residual,
                 "max_violation": max(r.trajectory.violation.values(), default=0.0)}
                for s, r in results]
    summary = {"mode": mode.value, "runs": per_seed,
               "mean_ratio": float(np.mean([p["ratio"] for p in per_seed]))}
    (out / "roll_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    for p in per_seed:
        print(f"seed {p['seed']}: realized {p['realized']:.6g} worst case {p['worst_case']:.6g} "
              f"ratio {p['ratio']:.4f}")
    print(f"mean ratio {summary['mean_ratio']:.4f}")
    return 0


def cmd_certify(args, man: RunManifest, out: Path) -> int:
    mode = _modes(args, "local")[0]
    net, cfg = load_network(args, args.seed)
    t0 = time.perf_counter()
    res = _design(args)(net, cfg.with_mode(mode))
    man.phase("solve", time.perf_counter() - t0)
    t0 = time.perf_counter()
    cert = simulate.certify_worst_case(res)
    man.phase("certify", time.perf_counter() - t0)
    rows, worst_seen = [], {i: -np.inf for i in net.ids}
    for k in range(args.samples):
        traj = simulate.closed_loop(res, simulate.sample_realization(net, [args.seed, k]))
        for i, c in traj.cost.items():
            worst_seen[i] = max(worst_seen[i], c)
            rows.append([k, i, _fmt(c), _fmt(cert[i])])
    _write_csv(out / "certify.csv", ["sample", "agent", "realized", "certificate"], rows)
    ok = all(worst_seen[i] <= cert[i] + 1e-6 * max(1.0, abs(cert[i])) for i in net.ids)
    summary = {"mode": mode.value, "objective": res.objective,
               "certificate": {str(i): v for i, v in cert.items()},
               "max_sampled": {str(i): v for i, v in worst_seen.items()}, "dominates": ok}
    (out / "certify.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"certificate {sum(cert.values()):.10g} (objective {res.objective:.10g}); "
          f"dominates samples: {ok}")
    return 0


def cmd_export_lp(args, man: RunManifest, out: Path) -> int:
    mode = _modes(args, "centralized")[0]
    net, cfg = load_network(args, args.seed)
    t0 = time.perf_counter()
    comp = build(net, cfg.with_mode(mode))
    man.phase("build", time.perf_counter() - t0)
    path = export(comp.lp, out / "design.mps")
    print(f"wrote {path} ({comp.lp.n} columns)")
    return 0


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "admm": cmd_admm, "roll": cmd_roll,
            "certify": cmd_certify, "export-lp": cmd_export_lp}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="illustrative", choices=scenarios.SCENARIOS)
    common.add_argument("--config", type=Path, help="network JSON file (overrides --scenario)")
    common.add_argument("--mode", help="design mode, or a comma list for compare")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", help="N (seeds 0..N-1), a comma list, or a:b")
    common.add_argument("--out", type=Path, default=Path("policynet-out"))
    common.add_argument("--theta", type=float)
    common.add_argument("--M", type=int, default=3, help="number of prosumers")
    common.add_argument("--T", type=int, help="horizon")
    common.add_argument("--topology", default="serial", choices=("serial", "complete"))
    common.add_argument("--delay", action="store_true", help="delayed supply-chain beliefs")
    common.add_argument("--decoupled", action="store_true", help="energy hub without sharing")
    common.add_argument("--zero-epsilon", action="store_true", help="energy hub without price noise")
    common.add_argument("--data", nargs="+", type=Path, help="prosumer CSV files")
    common.add_argument("--lp-tol", type=float, default=1e-9)
    common.add_argument("--lp-max-iters", type=int, default=1_000_000)
    common.add_argument("--admm-rho", "--rho", type=float, default=0.1)
    common.add_argument("--admm-tol", type=float, default=1e-6)
    common.add_argument("--admm-max-iters", type=int, default=200)
    common.add_argument("--samples", type=int, default=100, help="realizations for certify")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="policynet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        modes = [m.value for m in _modes(args, "centralized")] if args.mode else []
        seeds = _seeds(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"policynet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    man = RunManifest(args.command, argv, _scenario_params(args), modes, seeds,
                      {"lp_tol": args.lp_tol, "lp_max_iters": args.lp_max_iters,
                       "admm_rho": args.admm_rho, "admm_tol": args.admm_tol,
                       "admm_max_iters": args.admm_max_iters}, str(out))
    code = 0
    try:
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, man, out)
    except (ConfigError, CapExceeded) as exc:
        print(f"policynet: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except DesignInfeasible as exc:
        print(f"policynet: infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except simulate.RollError as exc:
        infeasible = isinstance(exc.__cause__, DesignInfeasible)
        print(f"policynet: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE if infeasible else EXIT_SOLVER
    except SolverError as exc:
        print(f"policynet: solver failure: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except OSError as exc:
        print(f"policynet: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    if out.is_dir():
        man.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
