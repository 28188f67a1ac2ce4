"""Sufficient mean-square stability conditions for the remote estimate.

Two conditions are checked for a subset ``J`` of sensors transmitting at
maximum power:

* cond1: the probability that every packet of ``J`` is decoded in the same
  slot exceeds the critical arrival probability ``Lambda(A)``;
* cond2: the worst single-sensor success probability exceeds
  ``Lambda(A^|J|)`` (one sensor of ``J`` per slot, round robin).

Both additionally need ``(A, C_J)`` detectable and ``(A, Q^1/2)`` reachable.
A modified Riccati iteration serves as a numerical cross-check of cond1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .channel import (DEFAULT_MC_SAMPLES, Action, ChannelParams, Receiver,
                      arrival_distribution, outcome_bits)
from .estimator import SystemModel, symmetrize

DIVERGENCE_GUARD = 1e12


def lambda_capital(A) -> float:
    """``1 - 1 / prod |lambda_u|^2`` over the eigenvalues with modulus > 1."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    mods = np.abs(np.linalg.eigvals(A))
    unstable = mods[mods > 1.0]
    # log-sum keeps large unstable spectra from overflowing
    return float(-np.expm1(-2.0 * np.log(unstable).sum()))


def _normalise_subset(J: Sequence[int], n_sensors: int) -> tuple[int, ...]:
    J = tuple(sorted({int(i) for i in J}))
    if not J:
        raise ValueError("J: sensor subset must be nonempty")
    if J[0] < 0 or J[-1] >= n_sensors:
        raise ValueError(f"J: indices must lie in 0..{n_sensors - 1}")
    return J


def max_power_action(J: Sequence[int], channel: ChannelParams) -> Action:
    """Sensors in ``J`` at their maximum power, all others silent."""
    J = _normalise_subset(J, channel.n_sensors)
    return Action(tuple(pm if i in J else 0.0 for i, pm in enumerate(channel.p_max)))


def perfect_mp_probability(J: Sequence[int], channel: ChannelParams,
                           n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> float:
    """Probability that all of ``J`` are decoded when only ``J`` transmits at full power."""
    J = _normalise_subset(J, channel.n_sensors)
    dist = arrival_distribution(max_power_action(J, channel), channel, n_samples, seed)
    bits = outcome_bits(channel.n_sensors)
    hit = bits[:, list(J)].all(axis=1)
    return float(dist.probs[hit].sum())


def worst_channel_probability(J: Sequence[int], channel: ChannelParams) -> float:
    """Smallest single-transmitter success probability at full power within ``J``."""
    J = _normalise_subset(J, channel.n_sensors)
    return min(math.exp(-channel.alpha * channel.sigma2 / (channel.s[i] * channel.p_max[i]))
               for i in J)


def subset_observation(J: Sequence[int], model: SystemModel) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``C_J`` and block-diagonal ``R_J``."""
    J = _normalise_subset(J, model.n_sensors)
    C = np.vstack([model.sensors[i][0] for i in J])
    R = la.block_diag(*[model.sensors[i][1] for i in J])
    return C, R


def _pbh(A: np.ndarray, B: np.ndarray, left: bool) -> bool:
    """PBH rank test on every eigenvalue with modulus >= 1.

    ``left`` checks ``[A - lam I; B]`` (detectability with ``B = C``),
    otherwise ``[A - lam I, B]`` (reachability of the unstable modes).
    """
    n = A.shape[0]
    tol = 1e-8 * max(np.linalg.norm(A, 2), 1.0)
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        shifted = A - lam * np.eye(n)
        M = np.vstack([shifted, B]) if left else np.hstack([shifted, B])
        sv = np.linalg.svd(M, compute_uv=False)
        if np.count_nonzero(sv > tol) < n:
            return False
    return True


def is_detectable(A, C) -> bool:
    return _pbh(np.asarray(A, float), np.atleast_2d(np.asarray(C, float)), left=True)


def is_reachable(A, Q) -> bool:
    """Unstable modes of ``A`` reachable through ``Q^{1/2}``."""
    A = np.asarray(A, float)
    w, V = np.linalg.eigh(symmetrize(np.asarray(Q, float)))
    sqrtQ = V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return _pbh(A, sqrtQ, left=False)


@dataclass
class RiccatiResult:
    bounded: bool
    status: str                 # "converged", "diverged" or "undecided"
    traces: np.ndarray
    P: np.ndarray


def modified_riccati(X: np.ndarray, p: float, A, Q, C, R) -> np.ndarray:
    """``A X A' + Q - p A X C'(C X C' + R)^{-1} C X A'``."""
    AXC = A @ X @ C.T
    S = C @ X @ C.T + R
    return symmetrize(A @ X @ A.T + Q - p * AXC @ np.linalg.solve(S, AXC.T))


def riccati_boundedness(J: Sequence[int], model: SystemModel, channel: ChannelParams,
                        horizon: int = 20_000, tol: float = 1e-10, window: int = 20,
                        P0=None, p_mp: float | None = None,
                        n_samples: int = DEFAULT_MC_SAMPLES) -> RiccatiResult:
    """Iterate the modified Riccati map from ``P(1|0)`` and classify the trace.

    Bounded when the relative change of the trace stays below ``tol`` over
    ``window`` consecutive steps; diverged once it exceeds the guard.  If
    neither happens within ``horizon`` steps the result is ``undecided`` and
    reported as not bounded.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    C, R = subset_observation(J, model)
    if p_mp is None:
        p_mp = perfect_mp_probability(J, channel, n_samples)
    A, Q = model.A, model.Q
    P0 = np.eye(model.n) if P0 is None else np.asarray(P0, dtype=float)
    X = symmetrize(A @ P0 @ A.T + Q)
    traces = [float(np.trace(X))]
    calm = 0
    for _ in range(horizon - 1):
        X = modified_riccati(X, p_mp, A, Q, C, R)
        tr = float(np.trace(X))
        if not np.isfinite(tr) or tr > DIVERGENCE_GUARD:
            traces.append(min(tr, np.inf))
            return RiccatiResult(False, "diverged", np.array(traces), X)
        calm = calm + 1 if abs(tr - traces[-1]) <= tol * max(abs(tr), 1.0) else 0
        traces.append(tr)
        if calm >= window:
            return RiccatiResult(True, "converged", np.array(traces), X)
    return RiccatiResult(False, "undecided", np.array(traces), X)


@dataclass
class StabilityReport:
    J: tuple[int, ...]
    detectable: bool
    reachable: bool
    p_mp: float
    p_wc: float
    lambda_A: float
    lambda_A_pow: float
    cond1: bool
    cond2: bool
    riccati_bounded: bool | None = None
    riccati_status: str = "skipped"
    riccati_traces: np.ndarray = field(default_factory=lambda: np.empty(0))

    def as_rows(self) -> list[tuple[str, str]]:
        return [
            ("J", ",".join(str(i) for i in self.J)),
            ("detectable", str(self.detectable)),
            ("reachable", str(self.reachable)),
            ("p_mp", f"{self.p_mp:.6g}"),
            ("p_wc", f"{self.p_wc:.6g}"),
            ("lambda_A", f"{self.lambda_A:.6g}"),
            ("lambda_A_pow", f"{self.lambda_A_pow:.6g}"),
            ("cond1", str(self.cond1)),
            ("cond2", str(self.cond2)),
            ("riccati_bounded", str(self.riccati_bounded)),
            ("riccati_status", self.riccati_status),
        ]

    def format(self) -> str:
        rows = self.as_rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def check_lemma(J: Sequence[int], model: SystemModel, channel: ChannelParams,
                riccati: bool = False, n_samples: int = DEFAULT_MC_SAMPLES,
                **riccati_kw) -> StabilityReport:
    """Evaluate both sufficient conditions for the subset ``J``."""
    if model.n_sensors != channel.n_sensors:
        raise ValueError("model and channel disagree on the number of sensors")
    J = _normalise_subset(J, model.n_sensors)
    C, _ = subset_observation(J, model)
    det = is_detectable(model.A, C)
    reach = is_reachable(model.A, model.Q)
    p_mp = perfect_mp_probability(J, channel, n_samples)
    p_wc = worst_channel_probability(J, channel)
    lam = lambda_capital(model.A)
    lam_pow = lambda_capital(np.linalg.matrix_power(model.A, len(J)))
    report = StabilityReport(J, det, reach, p_mp, p_wc, lam, lam_pow,
                             cond1=bool(p_mp > lam and det and reach),
                             cond2=bool(p_wc > lam_pow and det and reach))
    if riccati:
        res = riccati_boundedness(J, model, channel, p_mp=p_mp, **riccati_kw)
        report.riccati_bounded = res.bounded
        report.riccati_status = res.status
        report.riccati_traces = res.traces
    return report


def best_subset(model: SystemModel, channel: ChannelParams,
                n_samples: int = DEFAULT_MC_SAMPLES) -> StabilityReport:
    """Detectable subset with the largest ``p_mp`` (first one on ties).

    Subsets are enumerated by size and then lexicographically; if none is
    detectable the best subset overall is returned.
    """
    N = model.n_sensors
    if N > 8:
        raise ValueError("subset enumeration is limited to N <= 8")
    best = fallback = None
    for k in range(1, N + 1):
        for J in itertools.combinations(range(N), k):
            rep = check_lemma(J, model, channel, n_samples=n_samples)
            if fallback is None or rep.p_mp > fallback.p_mp:
                fallback = rep
            if rep.detectable and (best is None or rep.p_mp > best.p_mp):
                best = rep
    return best or fallback


# Scalar example: one unstable mode observed by every sensor.


def scalar_model(lam: float, n_sensors: int = 2, q: float = 0.1, r: float = 1.0) -> SystemModel:
    sensors = tuple((np.array([[1.0]]), np.array([[r]])) for _ in range(n_sensors))
    return SystemModel(np.array([[lam]]), np.array([[q]]), sensors)


def scalar_channel(alpha: float, receiver: Receiver | str, n_sensors: int = 2,
                   sigma2: float = 0.1, s: float = 1.0, p_max: float = 1.0) -> ChannelParams:
    return ChannelParams((s,) * n_sensors, ((0.0, p_max),) * n_sensors, sigma2,
                         alpha, Receiver(receiver))


def stability_threshold(condition: str, channel: ChannelParams, J: Sequence[int] | None = None,
                        lo: float = 1.0, hi: float = 1e3, xtol: float = 1e-9,
                        n_samples: int = DEFAULT_MC_SAMPLES) -> float:
    """Largest scalar eigenvalue for which ``condition`` ("cond1"/"cond2") holds.

    Bisection on ``lambda(A)`` using :func:`check_lemma`; returns ``inf`` when
    the condition still holds at ``hi``.
    """
    if condition not in ("cond1", "cond2"):
        raise ValueError("condition must be 'cond1' or 'cond2'")
    N = channel.n_sensors
    J = tuple(range(N)) if J is None else J

    def holds(lam):
        rep = check_lemma(J, scalar_model(lam, N), channel, n_samples=n_samples)
        return getattr(rep, condition)

    if holds(hi):
        return math.inf
    if not holds(lo):
        return lo
    while hi - lo > xtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if holds(mid) else (lo, mid)
    return 0.5 * (lo + hi)


@dataclass
class ThresholdRow:
    alpha: float
    cond1_simple: float
    cond2: float
    cond1_sic: float

    def ordered(self) -> bool:
        return self.cond1_simple < self.cond2 < self.cond1_sic

    def deviation(self, target: Sequence[float]) -> float:
        got = (self.cond1_simple, self.cond2, self.cond1_sic)
        return max(abs(g - t) for g, t in zip(got, target))


def threshold_sweep(alphas: Sequence[float], sigma2: float = 0.1,
                    n_samples: int = DEFAULT_MC_SAMPLES) -> list[ThresholdRow]:
    """Stability thresholds of the two-sensor scalar example for every ``alpha``."""
    rows = []
    for a in alphas:
        simple = scalar_channel(a, Receiver.SIMPLE, sigma2=sigma2)
        sic = scalar_channel(a, Receiver.SIC, sigma2=sigma2)
        rows.append(ThresholdRow(
            float(a),
            stability_threshold("cond1", simple, n_samples=n_samples),
            stability_threshold("cond2", sic, n_samples=n_samples),
            stability_threshold("cond1", sic, n_samples=n_samples)))
    return rows


def best_alpha(rows: Sequence[ThresholdRow], target: Sequence[float]) -> ThresholdRow:
    """Row whose thresholds lie closest to ``target`` in the max norm."""
    return min(rows, key=lambda r: r.deviation(target))
