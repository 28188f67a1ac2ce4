"""Closed-loop simulation of plant, sensors, channel and remote estimator.

The simulation is vectorised over a batch of *lanes* times *runs*: every
lane is one parameterisation of a policy (typically one value of ``mu``),
every run an independent replication with its own random stream.  Runs with
the same index share their random numbers across lanes, which makes the
points of a ``mu`` sweep directly comparable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import Action, ChannelParams, Receiver, decode_batch
from .estimator import SystemModel, symmetrize
from .policy.dp import FiniteHorizonPlan
from .policy.greedy import StageCost, first_argmin, simple_tx_actions, simple_tx_channel
from .policy.table import PolicyTable

log = logging.getLogger(__name__)

TRACE_CAP = 1e12
# A run whose mean trace over the second half of the counted window exceeds
# this multiple of its first-half mean is reported as growing: its long-run
# average does not exist, whatever the horizon.
GROWTH_RATIO = 2.0
_GROWTH_MIN_STEPS = 100
_CHUNK = 2048


# ---------------------------------------------------------------------------
# Policies


class Policy:
    """Maps predicted covariances to indices into :attr:`actions`.

    ``receiver`` overrides the channel's decoder when the policy is tied to
    a particular receiver design (the baselines).
    """

    actions: list[Action]
    n_lanes: int = 1
    receiver: Receiver | None = None

    def act(self, P: np.ndarray, traces: np.ndarray, step: int,
            lane: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class GreedyPolicy(Policy):
    """Myopic expected-cost minimiser; ``mu`` may be an array, one per lane."""

    def __init__(self, model: SystemModel, channel: ChannelParams, mu,
                 actions: Sequence[Action] | None = None, mc_samples: int = 10**6,
                 seed: int = 0):
        self.stage = StageCost(model, channel, actions, mc_samples, seed)
        self.actions = self.stage.actions
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.n_lanes = len(self.mu)

    def act(self, P, traces, step, lane):
        costs = traces @ self.stage.probs.T + self.mu[lane, None] * self.stage.power
        return first_argmin(costs)


class SimpleTxPolicy(GreedyPolicy):
    """At most one sensor, at full power, simple receiver."""

    receiver = Receiver.SIMPLE

    def __init__(self, model, channel, mu, **kw):
        super().__init__(model, simple_tx_channel(channel), mu,
                         simple_tx_actions(channel), **kw)


class SimpleRcPolicy(GreedyPolicy):
    """Full power grid, multi-packet reception without SIC."""

    receiver = Receiver.SIMPLE

    def __init__(self, model, channel, mu, **kw):
        super().__init__(model, channel.with_receiver(Receiver.SIMPLE), mu, **kw)


class FixedPolicy(Policy):
    def __init__(self, action: Action):
        self.actions = [action]

    def act(self, P, traces, step, lane):
        return np.zeros(len(P), dtype=int)


class TablePolicy(Policy):
    """Nearest-centroid lookup; one table per lane, all on the same centroids."""

    def __init__(self, tables: PolicyTable | Sequence[PolicyTable]):
        tables = [tables] if isinstance(tables, PolicyTable) else list(tables)
        base = tables[0]
        for t in tables[1:]:
            if not np.array_equal(t.centroids, base.centroids):
                raise ValueError("lane tables must share their centroids")
        self.table = base
        self.actions = base.channel.action_grid()
        index = {a: k for k, a in enumerate(self.actions)}
        self.lookup = np.array([[index[a] for a in t.actions] for t in tables])
        self.mu = np.array([t.config.mu for t in tables])
        self.n_lanes = len(tables)

    def act(self, P, traces, step, lane):
        return self.lookup[lane, self.table.nearest(P)]


class FiniteHorizonPolicy(Policy):
    """Receding horizon: the first stage of the plan at the nearest centroid."""

    def __init__(self, plan: FiniteHorizonPlan):
        self.plan = plan
        self.actions = list(plan.action_set)
        flat = plan.centroids.reshape(len(plan.centroids), -1)
        self._flat = flat

    def act(self, P, traces, step, lane):
        x = P.reshape(len(P), 1, -1)
        idx = np.argmin(((x - self._flat) ** 2).sum(-1), axis=1)
        return self.plan.actions[0][idx]


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class SimConfig:
    horizon: int = 100_000
    n_runs: int = 10
    seed: int = 0
    policy: Policy | None = None
    record_trace: bool = False
    burn_in: float = 0.1
    P0: np.ndarray | None = None
    track_state: bool = True
    discount: float | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.n_runs < 1:
            raise ValueError("horizon and n_runs must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")


@dataclass
class SimMetrics:
    """Time averages after burn-in, pooled over runs.

    ``mean_power`` is normalised so that one sensor at its maximum power
    counts as 1.
    """

    mean_trace_cov: float
    mean_power: float
    arrival_rate: np.ndarray
    divergent: bool
    run_trace: np.ndarray = field(repr=False)
    run_power: np.ndarray = field(repr=False)
    mean_error_sq: float | None = None
    mean_trace_pred: float | None = None
    discounted_cost: np.ndarray | None = field(default=None, repr=False)
    trace: dict | None = field(default=None, repr=False)
    growing: bool = False

    @property
    def trace_stderr(self) -> float:
        r = self.run_trace
        return float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else float("nan")

    def as_dict(self) -> dict:
        d = {"mean_trace_cov": self.mean_trace_cov, "mean_power": self.mean_power,
             "divergent": self.divergent, "growing": self.growing,
             "trace_stderr": self.trace_stderr}
        for i, r in enumerate(self.arrival_rate):
            d[f"arrival_rate_{i}"] = float(r)
        if self.mean_error_sq is not None:
            d["mean_error_sq"] = self.mean_error_sq
            d["mean_trace_pred"] = self.mean_trace_pred
        if self.discounted_cost is not None:
            d["discounted_cost"] = float(self.discounted_cost.mean())
        return d


def _noise_factor(S: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L L' = S`` for a PSD ``S``."""
    w, V = np.linalg.eigh(S)
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(model: SystemModel, channel: ChannelParams, policy: Policy,
             sim: SimConfig) -> list[SimMetrics]:
    """Simulate every lane of ``policy``; one :class:`SimMetrics` per lane."""
    if model.n_sensors != channel.n_sensors:
        raise ValueError("model and channel disagree on the number of sensors")
    for a in policy.actions:
        if len(a) != channel.n_sensors:
            raise ValueError(f"policy action {a.powers} has the wrong length")
        if any(p > pm for p, pm in zip(a.powers, channel.p_max)):
            raise ValueError(f"policy action {a.powers} exceeds the maximum power")
    n, N = model.n, model.n_sensors
    L, R_runs = policy.n_lanes, sim.n_runs
    B = L * R_runs
    lane = np.repeat(np.arange(L), R_runs)
    receiver = policy.receiver or channel.receiver

    act_powers = np.array([a.powers for a in policy.actions])
    pmax = np.asarray(channel.p_max)
    s = np.asarray(channel.s)
    weights = 1 << np.arange(N)
    info_sums = model.info_sums()
    A, Q = model.A, model.Q
    C = model.C
    Rinv = np.linalg.inv(model.R)
    m = C.shape[0]
    sensor_of_row = np.concatenate([np.full(Cs.shape[0], i)
                                    for i, (Cs, _) in enumerate(model.sensors)])
    Lw, Lv = _noise_factor(Q), _noise_factor(model.R)

    if sim.P0 is None:
        P0 = np.eye(n)
    else:
        P0 = np.asarray(sim.P0, dtype=float)
    P0 = np.broadcast_to(P0, (R_runs, n, n)) if P0.ndim == 2 else P0
    streams = [np.random.Generator(np.random.Philox(ss))
               for ss in np.random.SeedSequence(sim.seed).spawn(R_runs)]

    P = np.tile(P0, (L, 1, 1)).copy()
    # The estimation error x - xhat is propagated instead of x and xhat
    # separately: same recursion, but it stays finite on unstable plants.
    e0 = np.stack([g.standard_normal(n) @ _noise_factor(p).T
                   for g, p in zip(streams, P0)])
    err = np.tile(e0, (L, 1))

    burn = int(sim.burn_in * sim.horizon)
    counted = sim.horizon - burn
    sum_trace = np.zeros(B)
    half = burn + counted // 2
    sum_late = np.zeros(B)
    sum_power = np.zeros(B)
    sum_arrive = np.zeros((B, N))
    sum_err = np.zeros(B)
    sum_pred = np.zeros(B)
    disc = np.zeros(B) if sim.discount is not None else None
    divergent = np.zeros(B, dtype=bool)
    rec = None
    if sim.record_trace:
        rec = {"trace_P": np.empty((L, sim.horizon)),
               "total_power": np.empty((L, sim.horizon)),
               "gamma": np.empty((L, sim.horizon, N), dtype=np.int8)}
    lane0 = np.arange(L) * R_runs
    mu_lane = getattr(policy, "mu", None)

    for start in range(0, sim.horizon, _CHUNK):
        T = min(_CHUNK, sim.horizon - start)
        fad = np.stack([g.standard_exponential((T, N)) for g in streams], axis=1)
        if sim.track_state:
            w = np.stack([g.standard_normal((T, n)) for g in streams], axis=1) @ Lw.T
            v = np.stack([g.standard_normal((T, m)) for g in streams], axis=1) @ Lv.T
        for t in range(T):
            k = start + t
            post = np.linalg.inv(np.linalg.inv(P)[:, None] + info_sums)   # (B, 2^N, n, n)
            post = symmetrize(post)
            succ = symmetrize(A @ post @ A.T + Q)
            traces = np.trace(succ, axis1=-2, axis2=-1)

            a = policy.act(P, traces, k, lane)
            powers = act_powers[a]
            prx = s * powers * np.tile(fad[t], (L, 1))
            ok = decode_batch(prx, channel.sigma2, channel.alpha, receiver)
            g = ok.astype(np.int64) @ weights
            rows = np.arange(B)

            if sim.track_state:
                if k >= burn:
                    sum_err += (err ** 2).sum(axis=1)
                    sum_pred += np.trace(P, axis1=1, axis2=2)
                # innovation y - C xhat = C (x - xhat) + v on received rows
                innov = (err @ C.T + np.tile(v[t], (L, 1))) * ok[:, sensor_of_row]
                corr = np.einsum("bij,bj->bi", post[rows, g] @ C.T, innov @ Rinv.T)
                err = (err - corr) @ A.T + np.tile(w[t], (L, 1))

            P = succ[rows, g]
            tr = traces[rows, g]
            over = tr > TRACE_CAP
            if over.any():
                divergent |= over
                P[over] *= (TRACE_CAP / tr[over])[:, None, None]
                tr = np.minimum(tr, TRACE_CAP)
            pw = (powers / pmax).sum(axis=1)
            if disc is not None:
                mu_b = 0.0 if mu_lane is None else mu_lane[lane]
                disc += sim.discount ** k * (tr + mu_b * powers.sum(axis=1))
            if k >= burn:
                sum_trace += tr
                if k >= half:
                    sum_late += tr
                sum_power += pw
                sum_arrive += ok
            if rec is not None:
                rec["trace_P"][:, k] = tr[lane0]
                rec["total_power"][:, k] = powers.sum(axis=1)[lane0]
                rec["gamma"][:, k] = ok[lane0]

    out = []
    for l in range(L):
        sl = slice(l * R_runs, (l + 1) * R_runs)
        run_trace = sum_trace[sl] / counted
        run_power = sum_power[sl] / counted
        n_late = sim.horizon - half
        early = (sum_trace[sl] - sum_late[sl]) / (counted - n_late) if counted > n_late else None
        growing = (early is not None and counted >= _GROWTH_MIN_STEPS
                   and bool(np.any(sum_late[sl] / n_late > GROWTH_RATIO * early)))
        metrics = SimMetrics(
            mean_trace_cov=float(run_trace.mean()),
            mean_power=float(run_power.mean()),
            arrival_rate=sum_arrive[sl].sum(axis=0) / (counted * R_runs),
            divergent=bool(divergent[sl].any()),
            run_trace=run_trace, run_power=run_power,
            discounted_cost=None if disc is None else disc[sl].copy(),
            growing=growing)
        if sim.track_state:
            metrics.mean_error_sq = float(sum_err[sl].sum() / (counted * R_runs))
            metrics.mean_trace_pred = float(sum_pred[sl].sum() / (counted * R_runs))
        if rec is not None:
            metrics.trace = {key: val[l] for key, val in rec.items()}
        if metrics.divergent:
            log.warning("lane %d diverged (trace capped at %.0e)", l, TRACE_CAP)
        elif metrics.growing:
            log.warning("lane %d: estimation error keeps growing over the horizon", l)
        out.append(metrics)
    return out


def run(model: SystemModel, channel: ChannelParams, sim: SimConfig) -> SimMetrics:
    """Simulate ``sim.policy`` (which must have a single lane)."""
    if sim.policy is None:
        raise ValueError("SimConfig.policy is required")
    if sim.policy.n_lanes != 1:
        raise ValueError("run() takes a single-lane policy; use simulate()")
    return simulate(model, channel, sim.policy, sim)[0]


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class CurvePoint:
    mu: float
    mean_power: float
    mean_trace: float
    trace_stderr: float
    divergent: bool = False    # capped or still growing: no long-run average
    error: str | None = None


def sweep_mu(model: SystemModel, channel: ChannelParams, mu_grid: Sequence[float],
             kind: str, sim: SimConfig, solver=None, X_d=None) -> list[CurvePoint]:
    """One (mean power, mean trace) point per ``mu``, sorted by mean power.

    ``kind`` is ``greedy``, ``simple_tx``, ``simple_rc`` or ``table``.  The
    ``table`` kind solves one value iteration per ``mu`` on the shared
    discretisation ``X_d`` (computed from ``solver`` when not given).
    """
    from .policy.discretize import discretize_states
    from .policy.dp import value_iteration

    mu_grid = [float(v) for v in mu_grid]
    if not mu_grid:
        raise ValueError("mu_grid must not be empty")
    failed: list[CurvePoint] = []
    if kind in ("greedy", "simple_tx", "simple_rc"):
        cls = {"greedy": GreedyPolicy, "simple_tx": SimpleTxPolicy,
               "simple_rc": SimpleRcPolicy}[kind]
        kw = {} if solver is None else {"mc_samples": solver.mc_samples,
                                       "seed": solver.seed}
        policy = cls(model, channel, mu_grid, **kw)
        mus = mu_grid
    elif kind == "table":
        if solver is None:
            raise ValueError("table sweeps need a solver configuration")
        stage = StageCost(model, channel, mc_samples=solver.mc_samples, seed=solver.seed)
        if X_d is None:
            X_d = discretize_states(model, channel, solver, stage=stage).centroids
        tables, mus = [], []
        for mu in mu_grid:
            try:
                tables.append(value_iteration(X_d, model, channel,
                                              solver.replace(mu=mu), stage=stage))
                mus.append(mu)
            except Exception as exc:       # keep sweeping past a failed point
                log.error("solver failed at mu=%g: %s", mu, exc)
                failed.append(CurvePoint(mu, np.nan, np.nan, np.nan, error=str(exc)))
        if not tables:
            return failed
        policy = TablePolicy(tables)
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")

    sim = SimConfig(**{**sim.__dict__, "policy": policy})
    metrics = simulate(model, channel, policy, sim)
    points = [CurvePoint(mu, m.mean_power, m.mean_trace_cov, m.trace_stderr,
                         m.divergent or m.growing)
              for mu, m in zip(mus, metrics)]
    points.sort(key=lambda p: (p.mean_power, -p.mu))
    return points + failed
