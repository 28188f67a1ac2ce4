"""Kalman filtering with intermittent observations from several sensors.

The covariance recursion is written in information form: received packets
add ``C_i' R_i^{-1} C_i`` to the inverse of the predicted covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .channel import Action, ArrivalDistribution, outcome_bits

_COND_LIMIT = 1e12


class EstimatorError(np.linalg.LinAlgError):
    """A covariance could not be inverted."""


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name}: expected a matrix")
    return M


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Linear Gaussian plant observed by ``N`` sensors.

    Parameters
    ----------
    A, Q : ndarray
        State transition and process-noise covariance.
    sensors : sequence of (C_i, R_i)
        Output matrix and measurement-noise covariance of every sensor.
    decoupled : tuple of int, optional
        Block sizes when the plant is a set of independent subsystems, one
        per sensor.
    """

    A: np.ndarray
    Q: np.ndarray
    sensors: tuple[tuple[np.ndarray, np.ndarray], ...]
    decoupled: tuple[int, ...] | None = None
    info: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        Q = _as_matrix(self.Q, "Q")
        n = A.shape[0]
        if A.shape != (n, n) or Q.shape != (n, n):
            raise ValueError("A and Q must be square of the same size")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q: must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q: must be positive semidefinite")
        sensors = []
        for i, (C, R) in enumerate(self.sensors):
            C = _as_matrix(C, f"C[{i}]")
            R = _as_matrix(R, f"R[{i}]")
            m = C.shape[0]
            if C.shape[1] != n or R.shape != (m, m):
                raise ValueError(f"sensor {i}: inconsistent C/R shapes")
            if not np.allclose(R, R.T, atol=1e-12) or np.linalg.eigvalsh(R).min() <= 0:
                raise ValueError(f"R[{i}]: must be symmetric positive definite")
            sensors.append((C, R))
        if not sensors:
            raise ValueError("sensors: at least one sensor required")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "sensors", tuple(sensors))

        info = np.stack([C.T @ np.linalg.solve(R, C) for C, R in sensors])
        object.__setattr__(self, "info", symmetrize(info))

        if self.decoupled is not None:
            sizes = tuple(int(k) for k in self.decoupled)
            object.__setattr__(self, "decoupled", sizes)
            self._check_blocks(sizes)

    def _check_blocks(self, sizes):
        if len(sizes) != self.n_sensors or sum(sizes) != self.n:
            raise ValueError("decoupled: one block per sensor, sizes summing to n")
        mask = la.block_diag(*[np.ones((k, k)) for k in sizes]).astype(bool)
        for name, M in (("A", self.A), ("Q", self.Q)):
            if np.any(M[~mask] != 0):
                raise ValueError(f"decoupled: {name} is not block diagonal")
        for i, (C, _) in enumerate(self.sensors):
            sl = self.block_slice(i)
            off = np.ones(self.n, dtype=bool)
            off[sl] = False
            if np.any(C[:, off] != 0):
                raise ValueError(f"decoupled: C[{i}] reaches outside block {i}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def C(self) -> np.ndarray:
        return np.vstack([C for C, _ in self.sensors])

    @property
    def R(self) -> np.ndarray:
        return la.block_diag(*[R for _, R in self.sensors])

    def block_slice(self, i: int) -> slice:
        if self.decoupled is None:
            raise ValueError("model is not decoupled")
        start = sum(self.decoupled[:i])
        return slice(start, start + self.decoupled[i])

    def block(self, P: np.ndarray, i: int) -> np.ndarray:
        sl = self.block_slice(i)
        return P[..., sl, sl]

    def sensor_rows(self, i: int) -> slice:
        start = sum(C.shape[0] for C, _ in self.sensors[:i])
        return slice(start, start + self.sensors[i][0].shape[0])

    def info_sums(self) -> np.ndarray:
        """``(2**N, n, n)`` received information for every arrival outcome."""
        bits = outcome_bits(self.n_sensors).astype(float)
        return np.einsum("ki,iab->kab", bits, self.info)


def check_covariance(P, n: int | None = None) -> np.ndarray:
    P = _as_matrix(P, "P")
    if P.shape[0] != P.shape[1] or (n is not None and P.shape[0] != n):
        raise ValueError(f"covariance has shape {P.shape}")
    scale = max(np.linalg.norm(P), 1.0)
    if np.linalg.norm(P - P.T) > 1e-10 * scale:
        raise ValueError("covariance is not symmetric")
    return symmetrize(P)


def _spd_inverse(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    M = symmetrize(M)
    n = M.shape[0]
    if np.linalg.cond(M) > _COND_LIMIT:
        M = M + 1e-12 * np.trace(M) / n * np.eye(n)
    try:
        factor = la.cho_factor(M)
    except la.LinAlgError as exc:
        raise EstimatorError(f"matrix is not positive definite: {exc}") from exc
    return symmetrize(la.cho_solve(factor, np.eye(n)))


def measurement_update(P, gamma: Sequence[int], model: SystemModel) -> np.ndarray:
    """Filtered covariance after the packets flagged in ``gamma`` arrive."""
    P = check_covariance(P, model.n)
    if not any(gamma):
        return P
    info = sum(model.info[i] for i, g in enumerate(gamma) if g)
    return _spd_inverse(_spd_inverse(P) + info)


def time_update(P, model: SystemModel) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return symmetrize(model.A @ P @ model.A.T + model.Q)


def g_operator(P, gamma: Sequence[int], model: SystemModel) -> np.ndarray:
    """One-step predicted covariance for a given arrival outcome."""
    return time_update(measurement_update(P, gamma, model), model)


def successor_covariances(P: np.ndarray, model: SystemModel) -> np.ndarray:
    """Predicted covariances for all arrival outcomes at once.

    ``P`` may carry leading batch dimensions; the result has shape
    ``P.shape[:-2] + (2**N, n, n)``.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    info = np.linalg.inv(P)[..., None, :, :] + model.info_sums()
    post = symmetrize(np.linalg.inv(info))
    A = model.A
    return symmetrize(A @ post @ A.T + model.Q)


def expected_cost(P, u: Action, dist: ArrivalDistribution, mu: float,
                  model: SystemModel) -> float:
    """Expected trace of the next predicted covariance plus ``mu`` times power."""
    if dist.n_sensors != model.n_sensors:
        raise ValueError("distribution and model disagree on the number of sensors")
    traces = np.trace(successor_covariances(check_covariance(P, model.n), model),
                      axis1=-2, axis2=-1)
    return float(dist.probs @ traces + mu * sum(u.powers))


def psi(P_i, i: int, model: SystemModel) -> float:
    """Trace reduction earned when sensor ``i``'s packet arrives.

    Defined for decoupled models, with ``P_i`` the covariance block of
    subsystem ``i``.
    """
    sl = model.block_slice(i)
    A_i = model.A[sl, sl]
    C, R = model.sensors[i]
    C_i = C[:, sl]
    P_i = np.atleast_2d(np.asarray(P_i, dtype=float))
    S = C_i @ P_i @ C_i.T + R
    G = A_i @ P_i @ C_i.T
    return max(float(np.trace(G @ np.linalg.solve(S, G.T))), 0.0)


def psi_batch(P: np.ndarray, model: SystemModel) -> np.ndarray:
    """``psi_i`` of every block for full covariances ``P`` of shape ``(..., n, n)``."""
    out = []
    for i, (C, R) in enumerate(model.sensors):
        sl = model.block_slice(i)
        A_i, C_i, P_i = model.A[sl, sl], C[:, sl], P[..., sl, sl]
        S = C_i @ P_i @ C_i.T + R
        G = A_i @ P_i @ C_i.T
        X = np.linalg.solve(S, np.swapaxes(G, -1, -2))
        out.append(np.einsum("...ab,...ba->...", G, X))
    return np.stack(out, axis=-1)


@dataclass
class EstimatorState:
    """Predicted estimate ``x(k|k-1)`` and its error covariance."""

    xhat: np.ndarray
    P: np.ndarray


def state_update(state: EstimatorState, gamma: Sequence[int],
                 measurements: dict[int, np.ndarray] | Sequence,
                 model: SystemModel) -> EstimatorState:
    """Advance estimate and covariance by one step.

    ``measurements`` maps sensor index to its received output; only
    sensors with ``gamma_i = 1`` are read.
    """
    xhat = np.asarray(state.xhat, dtype=float)
    P = check_covariance(state.P, model.n)
    received = [i for i, g in enumerate(gamma) if g]
    if received:
        C = np.vstack([model.sensors[i][0] for i in received])
        R = la.block_diag(*[model.sensors[i][1] for i in received])
        y = np.concatenate([np.atleast_1d(np.asarray(measurements[i], dtype=float))
                            for i in received])
        S = symmetrize(C @ P @ C.T + R)
        K = la.cho_solve(la.cho_factor(S), C @ P).T
        xhat = xhat + K @ (y - C @ xhat)
    return EstimatorState(model.A @ xhat, g_operator(P, gamma, model))
