"""Dynamic programming over a discretised covariance space."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..channel import ChannelParams
from ..estimator import SystemModel, successor_covariances
from .greedy import StageCost, first_argmin
from .table import PolicyTable, SolverConfig

log = logging.getLogger(__name__)


class NotConvergedError(RuntimeError):
    def __init__(self, msg, table=None):
        super().__init__(msg)
        self.table = table


@dataclass
class TransitionModel:
    """Per-centroid successor traces and their projection onto the centroids.

    ``traces[d, g]`` is ``Tr g(X_d[d], gamma_g)``; ``next_idx[d, g]`` the
    centroid nearest to that successor.  ``probs[u, g]`` is the outcome
    distribution of action ``u``.
    """

    traces: np.ndarray
    next_idx: np.ndarray
    probs: np.ndarray
    power: np.ndarray

    def q_values(self, V: np.ndarray, beta: float, mu: float) -> np.ndarray:
        """``(D, |U|)`` cost-to-go of every action at every centroid."""
        future = self.traces + beta * V[self.next_idx]
        return future @ self.probs.T + mu * self.power

    def stage_costs(self, mu: float) -> np.ndarray:
        return self.traces @ self.probs.T + mu * self.power


def build_transitions(X_d: np.ndarray, stage: StageCost) -> TransitionModel:
    X_d = np.asarray(X_d, dtype=float)
    succ = successor_covariances(X_d, stage.model)           # (D, 2^N, n, n)
    traces = np.trace(succ, axis1=-2, axis2=-1)
    flat = X_d.reshape(len(X_d), -1)
    s = succ.reshape(succ.shape[0] * succ.shape[1], -1)
    d2 = ((s ** 2).sum(1)[:, None] - 2 * s @ flat.T + (flat ** 2).sum(1)[None, :])
    next_idx = np.argmin(d2, axis=1).reshape(succ.shape[:2])
    return TransitionModel(traces, next_idx, stage.probs, stage.power)


def value_iteration(X_d, model: SystemModel, channel: ChannelParams,
                    cfg: SolverConfig, stage: StageCost | None = None,
                    raise_on_cap: bool = False) -> PolicyTable:
    """Discounted value iteration from ``V = 0`` until the sup-norm step is small.

    Stops when ``max |V_{k+1} - V_k| <= cfg.vi_tol`` or after
    ``cfg.vi_max_iters`` sweeps.  The metadata records every sweep delta.
    """
    if not 0 < cfg.beta < 1:
        raise ValueError("value iteration needs beta in (0, 1)")
    X_d = np.asarray(X_d, dtype=float)
    if len(X_d) == 0:
        raise ValueError("empty state discretisation")
    stage = stage or StageCost(model, channel, mc_samples=cfg.mc_samples, seed=cfg.seed)
    trans = build_transitions(X_d, stage)

    # Near convergence the sweep deltas are ~1e-7 while V is ~1e2, so double
    # rounding (~1e-14) would blur the geometric decay of the deltas; the
    # backups run in extended precision where the platform provides it.
    V = np.zeros(len(X_d), dtype=np.longdouble)
    deltas = []
    converged = False
    for _ in range(cfg.vi_max_iters):
        V_new = trans.q_values(V, cfg.beta, cfg.mu).min(axis=1)
        delta = float(np.max(np.abs(V_new - V)))
        deltas.append(delta)
        V = V_new
        if delta <= cfg.vi_tol:
            converged = True
            break

    Qv = trans.q_values(V, cfg.beta, cfg.mu)
    best = first_argmin(Qv)
    residual = float(np.max(np.abs(Qv.min(axis=1) - V)))
    table = PolicyTable(X_d, [stage.actions[k] for k in best], V.astype(float), cfg, channel,
                        {"iterations": len(deltas), "delta": deltas[-1],
                         "residual": residual, "converged": converged})
    table.deltas = np.array(deltas)
    if not converged:
        msg = (f"value iteration stopped after {len(deltas)} sweeps "
               f"with delta {deltas[-1]:.3g} > {cfg.vi_tol:.3g}")
        if raise_on_cap:
            raise NotConvergedError(msg, table)
        log.warning(msg)
    return table


@dataclass
class FiniteHorizonPlan:
    """Stage-by-stage actions; ``actions[k][d]`` is the index into ``action_set``."""

    centroids: np.ndarray
    action_set: list
    actions: list[np.ndarray]
    values: list[np.ndarray]

    def action(self, k: int, d: int):
        return self.action_set[int(self.actions[k][d])]


def finite_horizon_dp(X_d, K: int, model: SystemModel, channel: ChannelParams,
                      cfg: SolverConfig, stage: StageCost | None = None
                      ) -> FiniteHorizonPlan:
    """Backward recursion with zero terminal value over ``K`` stages."""
    if K < 1:
        raise ValueError("K must be >= 1")
    X_d = np.asarray(X_d, dtype=float)
    stage = stage or StageCost(model, channel, mc_samples=cfg.mc_samples, seed=cfg.seed)
    trans = build_transitions(X_d, stage)
    V = np.zeros(len(X_d))
    acts, vals = [], []
    for _ in range(K):
        Qv = trans.q_values(V, cfg.beta, cfg.mu)
        a = first_argmin(Qv)
        V = Qv[np.arange(len(X_d)), a]
        acts.append(a)
        vals.append(V)
    return FiniteHorizonPlan(X_d, stage.actions, acts[::-1], vals[::-1])
