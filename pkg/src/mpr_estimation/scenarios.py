"""Scenario presets and the YAML scenario document.

Two presets are provided: a pair of drones (double integrators sampled at
``T = 0.1 s``) and a pair of inverted pendulums on carts (linearised, exactly
discretised at ``T = 0.01 s``).  Both are decoupled: sensor ``i`` measures
the position of subsystem ``i``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import yaml

from .channel import ChannelParams, Receiver
from .estimator import SystemModel
from .policy.table import SolverConfig

GRAVITY = 9.81

# Constants of the two experimental setups.
DRONE_T = 0.1
PENDULUM_T = 0.01
PENDULUM_LENGTH = 0.2
PROCESS_NOISE = 0.1
P_MAX = 1.0
SLOW_FADING = 1.0
NOISE_POWER = 0.1
LEVELS = 4
ALPHA = 0.75
BETA = 0.9
# not stated for either setup
MEASUREMENT_NOISE = 1.0


class ConfigError(ValueError):
    """Invalid scenario document; the message starts with the failing field."""

    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def power_levels(M: int, p_max: float = P_MAX) -> tuple[float, ...]:
    """``M`` equally spaced powers from 0 to ``p_max``."""
    if M < 2:
        raise ValueError("need at least two power levels")
    return tuple(float(p) for p in np.linspace(0.0, p_max, M))


def decoupled_model(blocks, C0, q: float = PROCESS_NOISE,
                    r: float = MEASUREMENT_NOISE) -> SystemModel:
    """Block-diagonal model with one sensor per block."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    sizes = [b.shape[0] for b in blocks]
    n = sum(sizes)
    A = la.block_diag(*blocks)
    sensors = []
    start = 0
    for k in sizes:
        C = np.zeros((1, n))
        C[0, start:start + k] = C0
        sensors.append((C, np.array([[r]])))
        start += k
    return SystemModel(A, q * np.eye(n), tuple(sensors), tuple(sizes))


def drone_block(T: float = DRONE_T) -> np.ndarray:
    return np.array([[1.0, T], [0.0, 1.0]])


def pendulum_continuous(length: float = PENDULUM_LENGTH, g: float = GRAVITY) -> np.ndarray:
    return np.array([[0.0, 1.0], [g / length, 0.0]])


def pendulum_block(T: float = PENDULUM_T, length: float = PENDULUM_LENGTH,
                   g: float = GRAVITY) -> np.ndarray:
    """Exact zero-order discretisation ``expm(A_c T)``."""
    return la.expm(pendulum_continuous(length, g) * T)


def preset_channel(M: int = LEVELS, receiver: Receiver | str = Receiver.SIC,
                   sigma2: float = NOISE_POWER, alpha: float = ALPHA) -> ChannelParams:
    levels = power_levels(M)
    return ChannelParams((SLOW_FADING, SLOW_FADING), (levels, levels), sigma2,
                         alpha, Receiver(receiver))


def two_drones() -> SystemModel:
    A = drone_block()
    return decoupled_model([A, A], [1.0, 0.0])


def two_pendulums() -> SystemModel:
    A = pendulum_block()
    return decoupled_model([A, A], [1.0, 0.0])


# ---------------------------------------------------------------------------
# Scenario document


@dataclass
class SimSettings:
    """Simulation section of a scenario (the policy is described, not built)."""

    horizon: int = 100_000
    n_runs: int = 10
    seed: int = 0
    burn_in: float = 0.1
    record_trace: bool = False
    P0: list | None = None
    policy: dict = field(default_factory=lambda: {"kind": "greedy"})

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("sim.horizon", "must be >= 1")
        if self.n_runs < 1:
            raise ConfigError("sim.n_runs", "must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("sim.burn_in", "must lie in [0, 1)")
        kinds = {"greedy", "table", "finite_horizon", "simple_tx", "simple_rc", "fixed"}
        if self.policy.get("kind") not in kinds:
            raise ConfigError("sim.policy.kind", f"must be one of {sorted(kinds)}")


@dataclass
class Scenario:
    name: str
    model: SystemModel
    channel: ChannelParams
    solver: SolverConfig
    sim: SimSettings

    def to_dict(self) -> dict:
        m, ch = self.model, self.channel
        return {
            "name": self.name,
            "system": {
                "A": m.A.tolist(),
                "Q": m.Q.tolist(),
                "sensors": [{"C": C.tolist(), "R": R.tolist()} for C, R in m.sensors],
                "decoupled": list(m.decoupled) if m.decoupled else None,
            },
            "channel": {
                "s": list(ch.s),
                "power_sets": [list(ps) for ps in ch.power_sets],
                "sigma2": ch.sigma2,
                "alpha": ch.alpha,
                "receiver": ch.receiver.value,
            },
            "solver": asdict(self.solver),
            "sim": asdict(self.sim),
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be a mapping")
    return sec


def _build(name, fn, data: dict):
    try:
        return fn(**data)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(name, str(exc)) from exc
    except ValueError as exc:
        msg = str(exc)
        head, _, rest = msg.partition(": ")
        if rest and " " not in head:
            raise ConfigError(f"{name}.{head}", rest) from exc
        raise ConfigError(name, msg) from exc


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a scenario document; a ``preset`` key seeds the defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    doc = copy.deepcopy(doc)
    if "preset" in doc:
        name = doc.pop("preset")
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}")
        base = PRESETS[name]().to_dict()
        for key, val in doc.items():
            if isinstance(val, dict) and isinstance(base.get(key), dict):
                base[key].update(val)
            else:
                base[key] = val
        doc = base

    system = _section(doc, "system")
    for key in ("A", "Q", "sensors"):
        if key not in system:
            raise ConfigError(f"system.{key}", "missing")
    try:
        sensors = tuple((np.asarray(s["C"], dtype=float), np.asarray(s["R"], dtype=float))
                        for s in system["sensors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("system.sensors", f"each entry needs numeric C and R ({exc})")
    model = _build("system", SystemModel,
                   {"A": system["A"], "Q": system["Q"], "sensors": sensors,
                    "decoupled": system.get("decoupled")})

    ch = _section(doc, "channel")
    for key in ("s", "power_sets", "sigma2", "alpha"):
        if key not in ch:
            raise ConfigError(f"channel.{key}", "missing")
    if ch.get("receiver", "sic") not in ("simple", "sic"):
        raise ConfigError("channel.receiver", "must be 'simple' or 'sic'")
    channel = _build("channel", ChannelParams, dict(ch))
    if channel.n_sensors != model.n_sensors:
        raise ConfigError("channel.s", "number of sensors differs from system.sensors")

    solver = _build("solver", SolverConfig, dict(_section(doc, "solver")))
    sim = _build("sim", SimSettings, dict(_section(doc, "sim")))
    if sim.P0 is not None:
        P0 = np.asarray(sim.P0, dtype=float)
        if P0.shape != (model.n, model.n):
            raise ConfigError("sim.P0", f"must be {model.n}x{model.n}")
    return Scenario(str(doc.get("name", "custom")), model, channel, solver, sim)


def loads(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<yaml>", str(exc)) from exc
    return scenario_from_dict(doc)


def load(path) -> Scenario:
    return loads(Path(path).read_text())


def _preset(name: str, model: SystemModel) -> Scenario:
    scen = Scenario(name, model, preset_channel(), SolverConfig(beta=BETA), SimSettings())
    check_preset(scen)
    return scen


def check_preset(scen: Scenario) -> None:
    """Assert that a preset carries the published experiment constants."""
    ch = scen.channel
    assert ch.p_max == (P_MAX, P_MAX)
    assert ch.s == (SLOW_FADING, SLOW_FADING)
    assert ch.sigma2 == NOISE_POWER and ch.alpha == ALPHA
    assert all(len(ps) == LEVELS for ps in ch.power_sets)
    assert scen.solver.beta == BETA
    assert np.array_equal(scen.model.Q, PROCESS_NOISE * np.eye(4))
    for C, _ in scen.model.sensors:
        assert np.count_nonzero(C) == 1
    if scen.name == "two_drones":
        assert np.array_equal(scen.model.A, la.block_diag(drone_block(DRONE_T),
                                                          drone_block(DRONE_T)))
    elif scen.name == "two_pendulums":
        expected = pendulum_block(PENDULUM_T, PENDULUM_LENGTH)
        assert np.allclose(scen.model.A, la.block_diag(expected, expected), atol=0)


PRESETS = {
    "two_drones": lambda: _preset("two_drones", two_drones()),
    "two_pendulums": lambda: _preset("two_pendulums", two_pendulums()),
}
