"""One-step-ahead (K = 1) power allocation and its decoupled-system structure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..channel import (Action, ChannelParams, Receiver, arrival_distribution,
                       arrival_matrix, marginal_success)
from ..estimator import SystemModel, check_covariance, psi, successor_covariances


def first_argmin(values: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Index of the first entry within ``rtol`` of the minimum along the last axis.

    Combined with action lists sorted by total power then lexicographically,
    this implements the package-wide tie rule.
    """
    values = np.asarray(values, dtype=float)
    m = values.min(axis=-1, keepdims=True)
    tol = rtol * np.maximum(1.0, np.abs(m))
    return np.argmax(values <= m + tol, axis=-1)


class StageCost:
    """Expected one-step cost ``E[Tr g(P, gamma)] + mu * sum(u)`` over an action set.

    Arrival probabilities of every action are computed once and reused.
    """

    def __init__(self, model: SystemModel, channel: ChannelParams,
                 actions: Sequence[Action] | None = None,
                 mc_samples: int = 10**6, seed: int = 0):
        if model.n_sensors != channel.n_sensors:
            raise ValueError("model and channel disagree on the number of sensors")
        self.model = model
        self.channel = channel
        self.actions = list(actions) if actions is not None else channel.action_grid()
        self.probs = arrival_matrix(self.actions, channel, mc_samples, seed)
        self.power = np.array([a.total for a in self.actions])

    def traces(self, P: np.ndarray) -> np.ndarray:
        """Traces of the successor covariances, shape ``(..., 2**N)``."""
        return np.trace(successor_covariances(P, self.model), axis1=-2, axis2=-1)

    def costs(self, P: np.ndarray, mu) -> np.ndarray:
        """Cost of every action, shape ``(..., len(actions))``.

        ``mu`` broadcasts against the leading dimensions of ``P``.
        """
        mu = np.asarray(mu, dtype=float)[..., None]
        return self.traces(P) @ self.probs.T + mu * self.power

    def best(self, P: np.ndarray, mu) -> np.ndarray:
        return first_argmin(self.costs(P, mu))


def greedy_action(P, model: SystemModel, channel: ChannelParams, mu: float,
                  actions: Sequence[Action] | None = None, **kw) -> Action:
    """Action minimising the expected one-step cost at ``P``."""
    stage = StageCost(model, channel, actions, **kw)
    P = check_covariance(P, model.n)
    return stage.actions[int(stage.best(P, mu))]


def decoupled_surrogate(P, u: Action, model: SystemModel, channel: ChannelParams,
                        mu: float) -> float:
    """Score ``sum_i psi_i(P_i) p_i(u) - mu * sum(u)``; larger is better.

    On decoupled models, ordering actions by this score is the reverse of
    ordering them by expected one-step cost.
    """
    if model.decoupled is None:
        raise ValueError("decoupled_surrogate requires a decoupled model")
    P = check_covariance(P, model.n)
    dist = arrival_distribution(u, channel)
    gain = sum(psi(model.block(P, i), i, model) * marginal_success(dist, i)
               for i in range(model.n_sensors))
    return gain - mu * u.total


# ---------------------------------------------------------------------------
# Two sensors, two power levels


@dataclass(frozen=True)
class RegionThresholds:
    """Corner of the simultaneous-transmission region in the psi plane."""

    M1: float
    M2: float
    p_e: float
    q1: float
    q2: float
    p1_both: float
    p2_both: float
    mu: float

    def classify(self, psi1: float, psi2: float) -> tuple[int, int]:
        """Region of ``(psi1, psi2)`` as the pair of transmit flags."""
        q1, q2, mu = self.q1, self.q2, self.mu
        if psi1 * q1 <= mu and psi2 * q2 <= mu:
            return (0, 0)
        if ((q1 - self.p1_both) * psi1 + mu < self.p2_both * psi2
                and (q2 - self.p2_both) * psi2 + mu < self.p1_both * psi1):
            return (1, 1)
        if q1 * psi1 > q2 * psi2:
            return (1, 0)
        return (0, 1)


def _check_two_level(channel: ChannelParams):
    if channel.n_sensors != 2 or any(len(ps) != 2 for ps in channel.power_sets):
        raise ValueError("requires two sensors with power sets {0, P_max}")


def thresholds(channel: ChannelParams, mu: float) -> RegionThresholds:
    """Region constants for a two-sensor, two-level channel."""
    _check_two_level(channel)
    p1max, p2max = channel.p_max
    q1 = marginal_success(arrival_distribution(Action((p1max, 0.0)), channel), 0)
    q2 = marginal_success(arrival_distribution(Action((0.0, p2max)), channel), 1)
    both = arrival_distribution(Action((p1max, p2max)), channel)
    p1, p2 = marginal_success(both, 0), marginal_success(both, 1)
    p_e = p1 * q1 + p2 * q2 - q1 * q2
    if p_e <= 0:
        raise ValueError(f"degenerate configuration: p_e = {p_e:.3g} <= 0")
    return RegionThresholds(M1=mu * q2 / p_e, M2=mu * q1 / p_e, p_e=p_e,
                            q1=q1, q2=q2, p1_both=p1, p2_both=p2, mu=mu)


def corollary_regions(P, model: SystemModel, channel: ChannelParams,
                      mu: float) -> Action:
    """Optimal K = 1 action read off the four psi-plane regions."""
    _check_two_level(channel)
    if model.decoupled is None:
        raise ValueError("corollary_regions requires a decoupled model")
    P = check_covariance(P, model.n)
    flags = thresholds(channel, mu).classify(psi(model.block(P, 0), 0, model),
                                             psi(model.block(P, 1), 1, model))
    return Action(tuple(pm if f else 0.0 for f, pm in zip(flags, channel.p_max)))


# ---------------------------------------------------------------------------
# Literature baselines


def simple_tx_actions(channel: ChannelParams) -> list[Action]:
    """Silence, or exactly one sensor at full power."""
    n = channel.n_sensors
    acts = [Action((0.0,) * n)]
    for i, pm in enumerate(channel.p_max):
        acts.append(Action(tuple(pm if j == i else 0.0 for j in range(n))))
    return sorted(acts, key=lambda a: (a.total, a.powers))


def simple_tx_channel(channel: ChannelParams) -> ChannelParams:
    return ChannelParams(channel.s, tuple((0.0, pm) for pm in channel.p_max),
                         channel.sigma2, channel.alpha, Receiver.SIMPLE)


def baseline_simple_tx(P, model: SystemModel, channel: ChannelParams,
                       mu: float) -> Action:
    """Greedy scheduling of at most one sensor at maximum power."""
    return greedy_action(P, model, simple_tx_channel(channel), mu,
                         simple_tx_actions(channel))


def baseline_simple_rc(P, model: SystemModel, channel: ChannelParams,
                       mu: float) -> Action:
    """Greedy over the full power grid, decoded without SIC."""
    return greedy_action(P, model, channel.with_receiver(Receiver.SIMPLE), mu)
