"""Rayleigh-fading multi-access channel with multi-packet reception.

Each sensor ``i`` transmits with a power taken from a finite set; the power
seen at the estimator is ``s_i * r_i * P_i`` with ``r_i ~ Exp(1)``.  A packet
is decoded when its SINR exceeds the threshold ``alpha``.  Two receivers are
modelled: a simple one that decodes every packet against all the others, and
one using successive interference cancellation (SIC).

Arrival outcomes are bit vectors ``gamma`` of length ``N``.  Distributions
over the ``2**N`` outcomes are stored as flat arrays where outcome index
``k`` has ``gamma_i = (k >> i) & 1``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DEFAULT_MC_SAMPLES = 10**6
_MC_CHUNK = 1 << 18


class Receiver(str, enum.Enum):
    SIMPLE = "simple"
    SIC = "sic"


@dataclass(frozen=True)
class ChannelParams:
    """Static description of the shared wireless channel.

    Parameters
    ----------
    s : tuple of float
        Slow-fading power gain of every sensor.
    power_sets : tuple of tuple of float
        Admissible transmit powers of every sensor, ascending, starting at 0.
    sigma2 : float
        Noise power at the receiver.
    alpha : float
        SINR reception threshold.
    receiver : Receiver
        Decoder design.
    """

    s: tuple[float, ...]
    power_sets: tuple[tuple[float, ...], ...]
    sigma2: float
    alpha: float
    receiver: Receiver = Receiver.SIC

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))
        object.__setattr__(
            self, "power_sets",
            tuple(tuple(float(p) for p in ps) for ps in self.power_sets))
        object.__setattr__(self, "receiver", Receiver(self.receiver))
        if len(self.s) != len(self.power_sets) or not self.s:
            raise ValueError("s and power_sets must have the same, nonzero length")
        if any(v <= 0 for v in self.s):
            raise ValueError("s: slow-fading gains must be positive")
        for i, ps in enumerate(self.power_sets):
            if len(ps) < 2 or ps[0] != 0.0:
                raise ValueError(
                    f"power_sets[{i}]: must start at 0 and contain a positive power")
            if any(b <= a for a, b in zip(ps, ps[1:])):
                raise ValueError(f"power_sets[{i}]: must be strictly ascending")
        if not self.sigma2 >= 0:
            raise ValueError("sigma2: noise power must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha: reception threshold must be > 0")

    @property
    def n_sensors(self) -> int:
        return len(self.s)

    @property
    def p_max(self) -> tuple[float, ...]:
        return tuple(ps[-1] for ps in self.power_sets)

    def with_receiver(self, receiver: Receiver | str) -> ChannelParams:
        return ChannelParams(self.s, self.power_sets, self.sigma2, self.alpha,
                             Receiver(receiver))

    def action(self, powers: Sequence[float]) -> Action:
        """Build an :class:`Action`, checking every power against its set."""
        powers = tuple(float(p) for p in powers)
        if len(powers) != self.n_sensors:
            raise ValueError(
                f"action has {len(powers)} powers, channel has {self.n_sensors} sensors")
        for i, (p, ps) in enumerate(zip(powers, self.power_sets)):
            if p not in ps:
                raise ValueError(f"power {p} of sensor {i} not in its power set {ps}")
        return Action(powers)

    def action_from_levels(self, levels: Sequence[int]) -> Action:
        return Action(tuple(ps[k] for ps, k in zip(self.power_sets, levels)))

    def levels(self, action: Action) -> tuple[int, ...]:
        return tuple(ps.index(p) for ps, p in zip(self.power_sets, action.powers))

    def action_grid(self) -> list[Action]:
        """All actions, ordered by total power and then lexicographically.

        The order doubles as the tie-breaking rule of every argmin in the
        package: the first minimiser wins.
        """
        grids = np.meshgrid(*[np.asarray(ps) for ps in self.power_sets],
                            indexing="ij")
        combos = np.stack([g.ravel() for g in grids], axis=1)
        order = sorted(range(len(combos)),
                       key=lambda k: (combos[k].sum(), tuple(combos[k])))
        return [Action(tuple(float(p) for p in combos[k])) for k in order]


@dataclass(frozen=True)
class Action:
    """One transmit power per sensor."""

    powers: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        if any(p < 0 for p in self.powers):
            raise ValueError("transmit powers must be nonnegative")

    @property
    def total(self) -> float:
        return sum(self.powers)

    def __len__(self):
        return len(self.powers)

    def __iter__(self):
        return iter(self.powers)


# ---------------------------------------------------------------------------
# Outcomes and distributions


def outcome_bits(n_sensors: int) -> np.ndarray:
    """``(2**N, N)`` array of 0/1 arrival vectors in distribution order."""
    k = np.arange(1 << n_sensors)
    return ((k[:, None] >> np.arange(n_sensors)) & 1).astype(np.int8)


def outcome_index(gamma: Sequence[int]) -> int:
    return sum(int(bool(g)) << i for i, g in enumerate(gamma))


def gamma_string(gamma: Sequence[int]) -> str:
    return "".join(str(int(g)) for g in gamma)


@dataclass(frozen=True)
class ArrivalDistribution:
    """Probability of every arrival outcome for one action."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        n = probs.size.bit_length() - 1
        if probs.ndim != 1 or probs.size != 1 << n:
            raise ValueError("distribution must have 2**N entries")
        if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs = np.clip(probs, 0.0, 1.0)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_sensors(self) -> int:
        return self.probs.size.bit_length() - 1

    def prob(self, gamma: Sequence[int]) -> float:
        return float(self.probs[outcome_index(gamma)])

    def items(self) -> Iterator[tuple[tuple[int, ...], float]]:
        for bits, p in zip(outcome_bits(self.n_sensors), self.probs):
            yield tuple(int(b) for b in bits), float(p)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(self.items())

    @classmethod
    def point_mass(cls, gamma: Sequence[int]) -> ArrivalDistribution:
        probs = np.zeros(1 << len(gamma))
        probs[outcome_index(gamma)] = 1.0
        return cls(probs)


def marginal_success(dist: ArrivalDistribution, i: int) -> float:
    """Probability that the packet of sensor ``i`` is received."""
    if not 0 <= i < dist.n_sensors:
        raise IndexError(f"sensor index {i} out of range")
    mask = outcome_bits(dist.n_sensors)[:, i] == 1
    return float(dist.probs[mask].sum())


# ---------------------------------------------------------------------------
# Sampling and decoding


def sample_received_powers(action: Action, params: ChannelParams,
                           rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw received powers ``s_i r_i P_i`` with unit-mean exponential ``r_i``.

    With ``size`` given the result has shape ``(size, N)``.
    """
    shape = (params.n_sensors,) if size is None else (size, params.n_sensors)
    r = rng.standard_exponential(shape)
    return np.asarray(params.s) * np.asarray(action.powers) * r


def decode_batch(prx: np.ndarray, sigma2: float, alpha: float,
                 receiver: Receiver) -> np.ndarray:
    """Vectorised decoder: ``prx`` is ``(..., N)``, returns a boolean array."""
    prx = np.asarray(prx, dtype=float)
    active = prx > 0
    if Receiver(receiver) is Receiver.SIMPLE:
        interference = prx.sum(axis=-1, keepdims=True) - prx + sigma2
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = prx > alpha * interference
        return ok & active

    # SIC: strongest first, stable sort so equal powers go to the lower index.
    order = np.argsort(-prx, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(prx, order, axis=-1)
    # interference from the packets that are decoded later
    weaker = np.cumsum(sorted_p[..., ::-1], axis=-1)[..., ::-1] - sorted_p
    ok_sorted = (sorted_p > alpha * (weaker + sigma2)) & (sorted_p > 0)
    ok_sorted = np.logical_and.accumulate(ok_sorted, axis=-1)
    ok = np.empty_like(ok_sorted)
    np.put_along_axis(ok, order, ok_sorted, axis=-1)
    return ok


def decode(prx: Sequence[float], params: ChannelParams) -> tuple[int, ...]:
    """Arrival outcome of a single slot."""
    ok = decode_batch(np.asarray(prx, dtype=float), params.sigma2, params.alpha,
                      params.receiver)
    return tuple(int(b) for b in ok)


# ---------------------------------------------------------------------------
# Arrival distributions


def _rates(action: Action, params: ChannelParams) -> list[float]:
    return [1.0 / (s * p) if p > 0 else math.inf
            for s, p in zip(params.s, action.powers)]


def arrival_distribution_closed_form2(action: Action,
                                      params: ChannelParams) -> ArrivalDistribution:
    """Exact outcome probabilities for two sensors.

    Requires ``alpha < 1`` whenever both sensors transmit; use
    :func:`arrival_distribution_mc` otherwise.
    """
    if params.n_sensors != 2:
        raise ValueError("closed form only available for N = 2")
    p1, p2 = action.powers
    a, s2 = params.alpha, params.sigma2
    if p1 == 0 and p2 == 0:
        return ArrivalDistribution.point_mass((0, 0))
    lam1, lam2 = _rates(action, params)
    if p2 == 0:
        q = math.exp(-a * lam1 * s2)
        return ArrivalDistribution(np.array([1 - q, q, 0.0, 0.0]))
    if p1 == 0:
        q = math.exp(-a * lam2 * s2)
        return ArrivalDistribution(np.array([1 - q, 0.0, q, 0.0]))
    if not a < 1:
        raise ValueError("closed form needs alpha in (0, 1) when both sensors transmit")

    w1 = lam2 / (lam2 + a * lam1)    # P(SINR_1 > alpha) without noise
    w2 = lam1 / (lam1 + a * lam2)
    e1 = math.exp(-a * lam1 * s2)
    e2 = math.exp(-a * lam2 * s2)
    e12 = math.exp(-(lam1 + lam2) * a / (1 - a) * s2)
    p11 = (w1 + w2 - 1) * e12
    p10 = w1 * e1 - p11
    p01 = w2 * e2 - p11
    p00 = 1 - w1 * e1 - w2 * e2 + p11
    if params.receiver is Receiver.SIC:
        # the weaker packet still has to beat the noise once the stronger
        # one is cancelled
        f1 = math.exp(-a * s2 * (lam2 + a * lam1))
        f2 = math.exp(-a * s2 * (lam1 + a * lam2))
        p11 = w1 * e1 * f1 + w2 * e2 * f2 + (1 - w1 - w2) * e12
        p10 = w1 * e1 * (1 - f1)
        p01 = w2 * e2 * (1 - f2)
    # index order: 00, 10, 01, 11
    probs = np.array([p00, p10, p01, p11])
    probs[np.abs(probs) < 1e-15] = 0.0
    return ArrivalDistribution(probs)


def arrival_distribution_mc(action: Action, params: ChannelParams,
                            n_samples: int = DEFAULT_MC_SAMPLES,
                            rng: np.random.Generator | int | None = None
                            ) -> ArrivalDistribution:
    """Empirical outcome frequencies over ``n_samples`` fading draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(rng))
    n = params.n_sensors
    counts = np.zeros(1 << n, dtype=np.int64)
    weights = 1 << np.arange(n)
    done = 0
    while done < n_samples:
        m = min(_MC_CHUNK, n_samples - done)
        prx = sample_received_powers(action, params, rng, size=m)
        ok = decode_batch(prx, params.sigma2, params.alpha, params.receiver)
        counts += np.bincount(ok.astype(np.int64) @ weights, minlength=1 << n)
        done += m
    probs = counts / n_samples
    # exact normalisation of the frequencies
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return ArrivalDistribution(probs)


def _mc_stream(seed: int, params: ChannelParams, action: Action) -> np.random.Generator:
    key = np.random.SeedSequence(seed, spawn_key=params.levels(action))
    return np.random.Generator(np.random.Philox(key))


def closed_form_available(action: Action, params: ChannelParams) -> bool:
    if params.n_sensors != 2:
        return False
    return min(action.powers) == 0 or params.alpha < 1


@functools.lru_cache(maxsize=4096)
def arrival_distribution(action: Action, params: ChannelParams,
                         n_samples: int = DEFAULT_MC_SAMPLES,
                         seed: int = 0) -> ArrivalDistribution:
    """Outcome distribution, exact when possible and Monte Carlo otherwise.

    Results are cached; the Monte Carlo stream is derived from ``seed`` and
    the action's power levels, so every action has its own reproducible
    sub-stream.
    """
    if closed_form_available(action, params):
        return arrival_distribution_closed_form2(action, params)
    if sum(p > 0 for p in action.powers) <= 1:
        # a lone transmitter only fights the noise
        gamma = [0] * params.n_sensors
        probs = np.zeros(1 << params.n_sensors)
        for i, (lam, p) in enumerate(zip(_rates(action, params), action.powers)):
            if p > 0:
                q = math.exp(-params.alpha * lam * params.sigma2)
                gamma[i] = 1
                probs[outcome_index(gamma)] = q
                probs[0] = 1 - q
                return ArrivalDistribution(probs)
        return ArrivalDistribution.point_mass(gamma)
    return arrival_distribution_mc(action, params, n_samples,
                                   _mc_stream(seed, params, action))


def arrival_matrix(actions: Sequence[Action], params: ChannelParams,
                   n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> np.ndarray:
    """``(len(actions), 2**N)`` matrix of outcome probabilities."""
    return np.stack([arrival_distribution(a, params, n_samples, seed).probs
                     for a in actions])
