"""Command-line entry point.

Every subcommand takes a scenario, either a YAML file or the name of a
preset (``two_drones``, ``two_pendulums``), and writes plain CSV or text
files into ``--out-dir``.

Exit status: 0 on success, 2 on an invalid configuration, 3 when value
iteration does not converge.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import scenarios
from .channel import (ChannelParams, Receiver, arrival_distribution, gamma_string,
                      outcome_bits)
from .estimator import psi
from .policy import (NotConvergedError, discretize_states, finite_horizon_dp,
                     thresholds, value_iteration)
from .policy import table as table_io
from .policy.greedy import StageCost
from .scenarios import ConfigError, Scenario
from .simulator import (FiniteHorizonPolicy, FixedPolicy, GreedyPolicy, SimConfig,
                        SimpleRcPolicy, SimpleTxPolicy, TablePolicy, simulate, sweep_mu)
from .stability import best_subset, check_lemma

log = logging.getLogger("mpr_estimation")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 2, 3


def load_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if not path.exists() and ref in scenarios.PRESETS:
        return scenarios.PRESETS[ref]()
    if not path.exists():
        raise ConfigError("config", f"no such file or preset: {ref}")
    return scenarios.load(path)


def _apply_flags(scen: Scenario, args) -> Scenario:
    solver = scen.solver
    if args.seed is not None:
        solver = solver.replace(seed=args.seed)
        scen.sim.seed = args.seed
    if args.samples is not None:
        if args.samples < 1:
            raise ConfigError("--samples", "must be >= 1")
        solver = solver.replace(mc_samples=args.samples)
    if getattr(args, "mu", None) is not None:
        if args.mu < 0:
            raise ConfigError("--mu", "must be >= 0")
        solver = solver.replace(mu=args.mu)
    scen.solver = solver
    if getattr(args, "horizon", None) is not None:
        scen.sim.horizon = args.horizon
    if getattr(args, "runs", None) is not None:
        scen.sim.n_runs = args.runs
    return scen


def _sim_config(scen: Scenario, policy=None) -> SimConfig:
    s = scen.sim
    try:
        return SimConfig(horizon=s.horizon, n_runs=s.n_runs, seed=s.seed, policy=policy,
                         record_trace=s.record_trace, burn_in=s.burn_in,
                         P0=None if s.P0 is None else np.asarray(s.P0, dtype=float))
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from exc


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_kv(path: Path, items: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in items.items()))


def _levels_tag(channel: ChannelParams, action) -> str:
    return "-".join(str(k) for k in channel.levels(action))


def _solve_table(scen: Scenario, X_d=None):
    stage = StageCost(scen.model, scen.channel, mc_samples=scen.solver.mc_samples,
                      seed=scen.solver.seed)
    if X_d is None:
        X_d = discretize_states(scen.model, scen.channel, scen.solver, stage=stage).centroids
    return value_iteration(X_d, scen.model, scen.channel, scen.solver, stage=stage,
                           raise_on_cap=True)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_probs(scen: Scenario, args) -> int:
    ch = scen.channel
    bits = outcome_bits(ch.n_sensors)
    summary = []
    for action in ch.action_grid():
        dist = arrival_distribution(action, ch, scen.solver.mc_samples, scen.solver.seed)
        tag = _levels_tag(ch, action)
        _write_csv(args.out_dir / f"probs_{tag}.csv", ["gamma_bits", "probability"],
                   [(gamma_string(b), repr(float(p))) for b, p in zip(bits, dist.probs)])
        summary.append([tag, *[repr(float(p)) for p in action.powers],
                        *[repr(float(p)) for p in dist.probs]])
    header = (["levels"] + [f"power_{i}" for i in range(ch.n_sensors)]
              + [f"p_{gamma_string(b)}" for b in bits])
    _write_csv(args.out_dir / "probs_summary.csv", header, summary)
    print(f"wrote {len(summary)} distributions to {args.out_dir}")
    return EXIT_OK


def cmd_solve(scen: Scenario, args) -> int:
    out = Path(args.output) if args.output else args.out_dir / "policy.txt"
    try:
        table = _solve_table(scen)
    except NotConvergedError as exc:
        table_io.save(exc.table, out)
        print(f"error: {exc} (partial table written to {out})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    table_io.save(table, out)
    meta = table.metadata
    print(f"wrote {out}: D={table.D} iterations={meta['iterations']} "
          f"residual={meta['residual']:.3g}")
    return EXIT_OK


def _build_policy(scen: Scenario, args):
    spec = dict(scen.sim.policy)
    kind = spec["kind"]
    mu = float(spec.get("mu", scen.solver.mu)) if args.mu is None else args.mu
    kw = {"mc_samples": scen.solver.mc_samples, "seed": scen.solver.seed}
    if kind == "greedy":
        return GreedyPolicy(scen.model, scen.channel, mu, **kw)
    if kind == "simple_tx":
        return SimpleTxPolicy(scen.model, scen.channel, mu, **kw)
    if kind == "simple_rc":
        return SimpleRcPolicy(scen.model, scen.channel, mu, **kw)
    if kind == "fixed":
        if "powers" not in spec:
            raise ConfigError("sim.policy.powers", "missing for a fixed policy")
        try:
            return FixedPolicy(scen.channel.action(spec["powers"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError("sim.policy.powers", str(exc)) from exc
    if kind == "table":
        ref = args.policy_file or spec.get("file")
        if ref is None:
            raise ConfigError("sim.policy.file", "a table policy needs a policy file")
        path = Path(ref)
        if not path.is_file():
            raise ConfigError("sim.policy.file", f"no such file: {path}")
        try:
            table = table_io.load(path)
        except ValueError as exc:
            raise ConfigError("sim.policy.file", str(exc)) from exc
        if table.channel.power_sets != scen.channel.power_sets:
            raise ConfigError("sim.policy.file", "power sets differ from the scenario")
        if table.centroids.shape[1] != scen.model.n:
            raise ConfigError("sim.policy.file", "state dimension differs from the scenario")
        return TablePolicy(table)
    if kind == "finite_horizon":
        K = int(spec.get("K", 1))
        if K < 1:
            raise ConfigError("sim.policy.K", "must be >= 1")
        cfg = scen.solver.replace(mu=mu)
        stage = StageCost(scen.model, scen.channel, mc_samples=cfg.mc_samples, seed=cfg.seed)
        X_d = discretize_states(scen.model, scen.channel, cfg, stage=stage).centroids
        plan = finite_horizon_dp(X_d, K, scen.model, scen.channel, cfg, stage=stage)
        policy = FiniteHorizonPolicy(plan)
        policy.mu = np.array([mu])
        return policy
    raise ConfigError("sim.policy.kind", f"unsupported kind {kind!r}")


def cmd_simulate(scen: Scenario, args) -> int:
    policy = _build_policy(scen, args)
    sim = _sim_config(scen, policy)
    if args.trace:
        sim.record_trace = True
    metrics = simulate(scen.model, scen.channel, policy, sim)[0]
    items = {"scenario": scen.name, "policy": scen.sim.policy["kind"],
             "horizon": sim.horizon, "n_runs": sim.n_runs, "seed": sim.seed}
    items.update(metrics.as_dict())
    _write_kv(args.out_dir / "metrics.txt", items)
    if metrics.trace is not None:
        tr = metrics.trace
        _write_csv(args.out_dir / "trace.csv",
                   ["step", "trace_P", "total_power", "gamma_bits"],
                   [(k, repr(float(tr["trace_P"][k])), repr(float(tr["total_power"][k])),
                     gamma_string(tr["gamma"][k])) for k in range(sim.horizon)])
    print(f"mean_trace_cov={metrics.mean_trace_cov:.6g} "
          f"mean_power={metrics.mean_power:.6g}")
    return EXIT_OK


_POLICY_RE = re.compile(r"^(sic|nosic)_m(\d+)(_inf)?$")


def sweep_variant(scen: Scenario, name: str) -> tuple[str, ChannelParams]:
    """Map a sweep policy name to a solver kind and a channel.

    ``greedy``, ``table``, ``simple_tx`` and ``simple_rc`` use the scenario
    channel; ``sic_m4``/``nosic_m2``... pick the receiver and the number of
    power levels (greedy), with an ``_inf`` suffix for the value-iteration
    table policy.
    """
    if name in ("greedy", "table", "simple_tx", "simple_rc"):
        return name, scen.channel
    m = _POLICY_RE.match(name)
    if not m:
        raise ConfigError("--policies", f"unknown policy {name!r}")
    M = int(m.group(2))
    if M < 2:
        raise ConfigError("--policies", f"{name}: need at least two power levels")
    receiver = Receiver.SIC if m.group(1) == "sic" else Receiver.SIMPLE
    ch = scen.channel
    sets = tuple(tuple(float(p) for p in np.linspace(0.0, pm, M)) for pm in ch.p_max)
    channel = ChannelParams(ch.s, sets, ch.sigma2, ch.alpha, receiver)
    return ("table" if m.group(3) else "greedy"), channel


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError("--mu-grid", str(exc)) from exc
    if not grid or any(v < 0 for v in grid):
        raise ConfigError("--mu-grid", "needs at least one value, all >= 0")
    return grid


def cmd_sweep(scen: Scenario, args) -> int:
    grid = _parse_grid(args.mu_grid)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    variants = [(name, *sweep_variant(scen, name)) for name in names]
    sim = _sim_config(scen)
    for name, kind, channel in variants:
        points = sweep_mu(scen.model, channel, grid, kind, sim, solver=scen.solver)
        _write_csv(args.out_dir / f"sweep_{name}.csv",
                   ["mu", "mean_power", "mean_trace", "trace_stderr", "divergent", "error"],
                   [(p.mu, p.mean_power, p.mean_trace, p.trace_stderr, int(p.divergent),
                     p.error or "") for p in points])
        print(f"{name}: {len(points)} points")
    return EXIT_OK


def cmd_stability(scen: Scenario, args) -> int:
    n_samples = scen.solver.mc_samples
    if args.subset:
        try:
            J = [int(v) for v in args.subset.split(",")]
        except ValueError as exc:
            raise ConfigError("--subset", str(exc)) from exc
    else:
        J = best_subset(scen.model, scen.channel, n_samples).J
    try:
        report = check_lemma(J, scen.model, scen.channel, riccati=True,
                             n_samples=n_samples, horizon=args.riccati_horizon)
    except ValueError as exc:
        raise ConfigError("--subset", str(exc)) from exc
    text = report.format()
    (args.out_dir / "stability.txt").write_text(text + "\n")
    if args.riccati_csv:
        _write_csv(args.out_dir / "riccati_trace.csv", ["k", "trace_P"],
                   [(k + 1, repr(float(t))) for k, t in enumerate(report.riccati_traces)])
    print(text)
    return EXIT_OK


def cmd_regions(scen: Scenario, args) -> int:
    model, ch = scen.model, scen.channel
    if model.decoupled is None or model.n_sensors != 2:
        raise ConfigError("system.decoupled", "regions need a decoupled two-sensor model")
    mu = scen.solver.mu
    two_level = all(len(ps) == 2 for ps in ch.power_sets)
    thr = thresholds(ch, mu) if two_level else None
    stage = StageCost(model, ch, mc_samples=scen.solver.mc_samples, seed=scen.solver.seed)
    sizes = model.decoupled
    ticks = np.linspace(args.tr_min, args.tr_max, args.grid)
    rows = []
    for t1 in ticks:
        for t2 in ticks:
            # isotropic blocks with the requested traces
            P = np.zeros((model.n, model.n))
            for i, t in enumerate((t1, t2)):
                sl = model.block_slice(i)
                P[sl, sl] = (t / sizes[i]) * np.eye(sizes[i])
            psis = [psi(model.block(P, i), i, model) for i in range(2)]
            a = stage.actions[int(stage.best(P, mu))]
            row = [repr(float(t1)), repr(float(t2)), repr(psis[0]), repr(psis[1]),
                   _levels_tag(ch, a)]
            if thr is not None:
                row.append(gamma_string(thr.classify(*psis)))
            rows.append(row)
    header = ["tr_P1", "tr_P2", "psi1", "psi2", "greedy_levels"]
    if thr is not None:
        header.append("region")
        _write_kv(args.out_dir / "thresholds.txt",
                  {k: v for k, v in dataclasses.asdict(thr).items()})
    _write_csv(args.out_dir / "regions.csv", header, rows)
    print(f"wrote {len(rows)} grid points (mu={mu})")
    return EXIT_OK


COMMANDS = {
    "probs": cmd_probs,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "stability": cmd_stability,
    "regions": cmd_regions,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario YAML file or preset name")
    common.add_argument("--seed", type=int, help="override solver and simulation seeds")
    common.add_argument("--out-dir", type=Path, default=Path("."),
                        help="directory for result files (created if missing)")
    common.add_argument("--samples", type=int,
                        help="Monte Carlo samples per arrival distribution")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="mpr-estimation",
        description="Remote estimation over a multi-packet-reception channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("probs", parents=[common], help="arrival distribution of every action")

    p = sub.add_parser("solve", parents=[common], help="value iteration policy table")
    p.add_argument("--mu", type=float)
    p.add_argument("-o", "--output", help="policy file (default OUT_DIR/policy.txt)")

    p = sub.add_parser("simulate", parents=[common], help="closed-loop simulation")
    p.add_argument("--mu", type=float)
    p.add_argument("--policy-file", help="policy table for the 'table' kind")
    p.add_argument("--horizon", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--trace", action="store_true", help="write trace.csv for run 0")

    p = sub.add_parser("sweep", parents=[common], help="power/trace curve over mu")
    p.add_argument("--mu-grid", default="0,0.01,0.03,0.1,0.3,1,3,10,30,100")
    p.add_argument("--policies", default="simple_tx,simple_rc,sic_m4",
                   help="comma list: greedy, table, simple_tx, simple_rc, "
                        "{sic,nosic}_m<M>[_inf]")
    p.add_argument("--horizon", type=int)
    p.add_argument("--runs", type=int)

    p = sub.add_parser("stability", parents=[common], help="sufficient stability conditions")
    p.add_argument("--subset", help="comma list of sensor indices (default: best p_mp)")
    p.add_argument("--riccati-horizon", type=int, default=20_000)
    p.add_argument("--riccati-csv", action="store_true")

    p = sub.add_parser("regions", parents=[common], help="greedy action map over traces")
    p.add_argument("--mu", type=float)
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--tr-min", type=float, default=0.5)
    p.add_argument("--tr-max", type=float, default=20.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scen = _apply_flags(load_scenario(args.config), args)
        if getattr(args, "horizon", None) is not None and args.horizon < 1:
            raise ConfigError("--horizon", "must be >= 1")
        if getattr(args, "runs", None) is not None and args.runs < 1:
            raise ConfigError("--runs", "must be >= 1")
        if getattr(args, "grid", None) is not None and args.grid < 1:
            raise ConfigError("--grid", "must be >= 1")
        if getattr(args, "tr_min", None) is not None and not 0 < args.tr_min <= args.tr_max:
            raise ConfigError("--tr-min", "need 0 < tr_min <= tr_max")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](scen, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
