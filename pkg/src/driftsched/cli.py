"""Experiment runner: every solver as a subcommand, CSV/JSON plot data out.

Subcommands: alloc-sweep, delay-sweep, deploy-compare, simulate, verify.
All outputs are deterministic given the configuration and seed; reruns are
byte-identical.  Failures exit nonzero with a machine-readable error JSON on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import allocation as alc
from . import deployment as dep
from .durations import Exponential, classify_aging, parse_duration
from .errors import DriftSchedError, SpecParseError
from .losses import ExpDecay, parse_loss
from .simulation import SimConfig, simulate, simulate_randomized

__all__ = ["main", "build_parser"]


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.12g}"


def _parse_grid(spec: str, log_default: bool = False) -> list[float]:
    """Grid spec: a scalar, a comma list, or lo:hi:n[:log|:lin]."""
    spec = spec.strip()
    if "," in spec:
        return [float(x) for x in spec.split(",")]
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise SpecParseError(f"grid spec {spec!r} must be lo:hi:n[:log|:lin]")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        mode = parts[3] if len(parts) == 4 else ("log" if log_default else "lin")
        if mode == "log":
            return list(np.geomspace(lo, hi, n))
        if mode == "lin":
            return list(np.linspace(lo, hi, n))
        raise SpecParseError(f"unknown grid mode {mode!r} in {spec!r}")
    return [float(spec)]


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecParseError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if not key:
                raise SpecParseError(f"{path}:{lineno}: empty key")
            out[key] = val.strip()
    return out


def _inject_config(argv: list[str]) -> list[str]:
    """Expand a --config file into flags placed before the explicit ones, so
    command-line flags override config values (and config values override the
    built-in defaults)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    cfg = _read_config_file(known.config)
    if not argv:
        raise SpecParseError("--config requires a subcommand")
    explicit = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    injected: list[str] = []
    for key, val in cfg.items():
        flag = "--" + key.replace("_", "-")
        if flag in explicit:
            continue
        for piece in val.split(";"):  # 'a;b' gives repeatable flags twice
            injected.extend([flag, piece.strip()])
    return [argv[0], *injected, *argv[1:]]


def _open_out(path: str):
    if path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    fh, close = _open_out(path)
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) if isinstance(c, float) else c for c in row])
    finally:
        if close:
            fh.close()


def _write_json(path: str, payload: dict) -> None:
    fh, close = _open_out(path)
    try:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        if close:
            fh.close()


def _single_dist(args) -> "parse_duration":
    if len(args.dist) != 1:
        raise SpecParseError("this subcommand takes exactly one --dist")
    return parse_duration(args.dist[0])


def cmd_alloc_sweep(args) -> int:
    d = _single_dist(args)
    g = parse_loss(args.loss)
    sigma, M = args.sigma_e, args.max_rate
    aging = classify_aging(d)
    if aging.tag.value not in ("DMRL", "CONSTANT"):
        print(
            f"warning: duration is {aging.tag.value}; the front-loading certificate "
            "does not apply",
            file=sys.stderr,
        )
    if args.budget is None:
        grid = list(np.geomspace(0.01 * M * sigma, 0.999 * M * sigma, 40))
    else:
        grid = _parse_grid(args.budget, log_default=True)
    rows = []
    for B in grid:
        b = alc.BudgetSpec(B, sigma, M)
        t_star = alc.front_loading_switch(d, b)
        loss_fixed = alc.time_average_loss(alc.AllocationPolicy.fixed(B / sigma), g, d)
        loss_opt = alc.time_average_loss(alc.AllocationPolicy.front_loading(M, t_star), g, d)
        reduction = 100.0 * (1.0 - loss_opt / loss_fixed)
        rows.append([B, t_star, loss_fixed, loss_opt, reduction])
    _write_csv(args.out, ["B", "t_star", "loss_fixed", "loss_opt", "reduction_pct"], rows)
    return 0


def cmd_delay_sweep(args) -> int:
    g = parse_loss(args.loss)
    sigma, M = args.sigma_e, args.max_rate
    if args.budget is None:
        raise SpecParseError("delay-sweep needs a scalar --budget")
    (B,) = _parse_grid(args.budget)
    b = alc.BudgetSpec(B, sigma, M)
    if not b.binding:
        raise DriftSchedError(f"delay-sweep needs a binding budget: B={B} >= M*sigma_e={M * sigma}")
    zgrid = _parse_grid(args.delay_grid)
    rows = []
    for spec in args.dist:
        d = parse_duration(spec)
        losses = []
        for z in zgrid:
            pol = alc.delayed_block(d, b, z)
            t_end = pol.times[-1] if pol.levels[-1] == 0.0 else math.inf
            losses.append((z, t_end, alc.time_average_loss(pol, g, d)))
        min_loss = min(l for _, _, l in losses)
        for z, t_end, loss in losses:
            rows.append([spec, z, t_end, loss, int(loss == min_loss)])
    _write_csv(args.out, ["dist", "z", "T_z", "loss", "is_argmin"], rows)
    return 0


def _deploy_optimal_at_count(d, g, count: float, n_low: int) -> float:
    """Best deterministic client loss at an exact effective count: the pure
    fixed-count optimum when the count sits on one, improved (where possible)
    by count-matched schedules with extra deployments."""
    cands = []
    for n in {max(1, n_low), n_low + 1, n_low + 2}:
        s = dep.constrained_fixed_n(d, g, n, count)
        if s is not None:
            cands.append(dep.client_time_average_loss(s, g, d))
    pure = dep.solve_fixed_n(d, g, max(1, n_low))
    if abs(dep.effective_count(pure, d) - count) <= 1e-9 * max(1.0, count):
        cands.append(dep.client_time_average_loss(pure, g, d))
    if not cands:
        raise DriftSchedError(f"no deterministic candidate found at count {count}")
    return min(cands)


def cmd_deploy_compare(args) -> int:
    g = parse_loss(args.loss)
    rows = []
    for spec in args.dist:
        d = parse_duration(spec)
        convex = dep.has_convex_survival(d)
        if not convex:
            print(
                f"warning: {spec} has a non-convex survival function; the "
                "count-constrained schedule is heuristic and a randomized-vs-optimal "
                "gap is expected",
                file=sys.stderr,
            )
        if args.rate_grid is None:
            rates = [
                dep.effective_count(dep.solve_fixed_n(d, g, n), d) / d.mean()
                for n in range(1, args.n_deploy_max + 1)
            ]
        else:
            rates = _parse_grid(args.rate_grid)
        for rate in rates:
            target = rate * d.mean()
            rs = dep.randomize_to_rate(d, g, rate)
            loss_rand = dep.mixture_client_loss(rs, g, d)
            loss_per = dep.client_time_average_loss(dep.periodic_for_rate(d, rate), g, d)
            loss_opt = _deploy_optimal_at_count(d, g, target, rs.schedule_low.count)
            rows.append(
                [
                    spec,
                    rate,
                    loss_per,
                    loss_opt,
                    loss_rand,
                    rs.gamma,
                    rs.schedule_low.count,
                    int(convex),
                ]
            )
    _write_csv(
        args.out,
        ["dist", "r_D", "loss_periodic", "loss_optimal", "loss_randomized", "gamma", "N_low", "survival_convex"],
        rows,
    )
    return 0


def _build_policy(args, d, b: alc.BudgetSpec) -> alc.AllocationPolicy:
    kind = args.policy
    if kind == "front":
        return alc.AllocationPolicy.front_loading(b.max_level, alc.front_loading_switch(d, b))
    if kind == "back":
        return alc.AllocationPolicy.back_loading(b.max_level, alc.back_loading_switch(d, b))
    if kind == "fixed":
        return alc.AllocationPolicy.fixed(b.budget / b.sigma_e)
    if kind == "delayed":
        return alc.delayed_block(d, b, args.delay)
    if kind == "unit":
        return alc.AllocationPolicy.fixed(1.0)
    raise SpecParseError(f"unknown policy {kind!r}")


def cmd_simulate(args) -> int:
    d = _single_dist(args)
    g = parse_loss(args.loss)
    B = float(args.budget) if args.budget is not None else args.sigma_e * args.max_rate / 2
    b = alc.BudgetSpec(B, args.sigma_e, args.max_rate)
    policy = _build_policy(args, d, b)
    schedule = randomized = None
    if args.deploy_rate is not None:
        randomized = dep.randomize_to_rate(d, g, args.deploy_rate)
    elif args.n_deploy is not None:
        schedule = dep.solve_fixed_n(d, g, args.n_deploy)
    cfg = SimConfig(
        duration=d,
        loss=g,
        policy=policy,
        schedule=schedule,
        randomized=randomized,
        n_concepts=args.n_concepts,
        seed=args.seed,
        sigma_e=args.sigma_e,
    )
    out = simulate_randomized(cfg) if randomized is not None else simulate(cfg)
    payload = out.summary_dict()
    payload["analytic_server_loss"] = alc.time_average_loss(policy, g, d)
    payload["analytic_cost_rate"] = alc.cost_rate(policy, d, args.sigma_e)
    _write_json(args.out, payload)
    if args.cycles_out:
        out.write_cycles_csv(args.cycles_out)
    return 0


def cmd_verify(args) -> int:
    d = _single_dist(args)
    g = parse_loss(args.loss)
    B = float(args.budget) if args.budget is not None else 0.5 * args.sigma_e * args.max_rate
    b = alc.BudgetSpec(B, args.sigma_e, args.max_rate)
    aging = classify_aging(d)
    payload: dict = {"dist": d.spec(), "loss": g.spec(), "aging": aging.tag.value}

    if b.binding and B > 0:
        t_star = alc.front_loading_switch(d, b)
        pol = alc.AllocationPolicy.front_loading(b.max_level, t_star)
        rep = alc.pmp_verify(pol, g, d, b)
        payload["pmp"] = {
            "policy": "front",
            "t_star": t_star,
            "pattern": rep.sign_pattern.value,
            "phi_at_tstar": rep.phi_at_switch,
            "scaled_tolerance": 1e-8 * rep.scale,
            "multiplier": rep.multiplier,
            "certified": rep.certified,
        }
    else:
        payload["pmp"] = {"policy": "front", "note": "budget not binding; no switch to verify"}

    n = args.n_deploy
    sched = dep.solve_fixed_n(d, g, n)
    resid = dep.stationarity_residuals(sched, d, g)
    payload["fixed_count"] = {
        "n_deploy": n,
        "offsets": list(sched.offsets),
        "max_stationarity_residual": max(abs(r) for r in resid),
    }
    if isinstance(d, Exponential) and isinstance(g, ExpDecay):
        chain = dep.chain_exponential(g.beta, d.rate, n)
        delta = max(abs(a - b_) for a, b_ in zip(sched.offsets, chain.offsets))
        payload["fixed_count"]["chain_vs_solver_max_delta"] = delta
    convex = dep.has_convex_survival(d)
    payload["survival_convex"] = convex
    payload["constrained_kkt"] = "exact" if convex else "heuristic"
    try:
        nu, rres = dep.rate_kkt_residuals(sched, d, g)
        payload["rate_kkt"] = {
            "multiplier": nu,
            "max_residual": max((abs(r) for r in rres), default=0.0),
        }
    except DriftSchedError:
        pass
    _write_json(args.out, payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftsched",
        description="Optimal training allocation and deployment scheduling under sudden concept drift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, dist_default: str = "exp(rate=1)") -> None:
        p.add_argument("--config", help="flat key=value config file; flags override it")
        p.add_argument("--dist", action="append", help="duration spec, e.g. exp(rate=1); repeatable")
        p.add_argument("--loss", default="expdecay(alpha=1,beta=1)", help="loss spec")
        p.add_argument("--sigma-e", type=float, default=1.0, help="price per unit resource-time")
        p.add_argument("--max-rate", type=float, default=20.0, help="maximum resource level M")
        p.add_argument("--budget", default=None, help="budget B: scalar, comma list, or lo:hi:n[:log]")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="-", help="output path ('-' = stdout)")
        p.set_defaults(dist=None, _dist_default=dist_default)

    p = sub.add_parser("alloc-sweep", help="front-loading vs fixed allocation over a budget grid")
    common(p)
    p.set_defaults(func=cmd_alloc_sweep)

    p = sub.add_parser("delay-sweep", help="delayed-block allocation loss over a delay grid")
    common(p)
    p.add_argument("--delay-grid", default="0:1:11", help="delay grid lo:hi:n")
    p.set_defaults(func=cmd_delay_sweep)

    p = sub.add_parser("deploy-compare", help="periodic vs optimal vs randomized deployment")
    common(p)
    p.add_argument("--rate-grid", default=None, help="deployment rate grid; default: fixed-count rates")
    p.add_argument("--n-deploy-max", type=int, default=6, help="largest fixed count for the default grid")
    p.set_defaults(func=cmd_deploy_compare)

    p = sub.add_parser("simulate", help="Monte Carlo renewal simulation")
    common(p)
    p.add_argument("--policy", default="front", choices=["front", "back", "fixed", "delayed", "unit"])
    p.add_argument("--delay", type=float, default=0.0, help="delay for --policy delayed")
    p.add_argument("--n-deploy", type=int, default=None, help="simulate the fixed-count schedule")
    p.add_argument("--deploy-rate", type=float, default=None, help="simulate the randomized rate-matched scheduler")
    p.add_argument("--n-concepts", type=int, default=10000)
    p.add_argument("--cycles-out", default=None, help="optional per-cycle CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="aging class, switching-function pattern, stationarity residuals")
    common(p)
    p.add_argument("--n-deploy", type=int, default=4)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _inject_config(argv)
        args = parser.parse_args(argv)
        if args.dist is None:
            args.dist = [args._dist_default]
        return args.func(args)
    except DriftSchedError as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
            sort_keys=True,
        )
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
