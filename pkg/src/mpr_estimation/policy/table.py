"""Solver configuration, policy tables and their text serialisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import Action, ChannelParams, Receiver

FORMAT_TAG = "mpr-policy-table"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the discretisation and dynamic-programming solvers.

    ``vi_tol`` defaults to ``1e-6 (1 - beta) / (2 beta)``.
    """

    beta: float = 0.9
    mu: float = 0.1
    D: int = 200
    vi_tol: float | None = None
    vi_max_iters: int = 10_000
    n_paths: int = 50
    path_length: int = 400
    exploration: str = "uniform"
    seed: int = 0
    mc_samples: int = 10**6

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta: must lie in (0, 1]")
        if self.mu < 0:
            raise ValueError("mu: must be >= 0")
        if self.D < 1:
            raise ValueError("D: must be >= 1")
        if self.n_paths < 1 or self.path_length < 1:
            raise ValueError("n_paths/path_length: must be >= 1")
        if self.exploration not in ("uniform", "mixed"):
            raise ValueError("exploration: must be 'uniform' or 'mixed'")
        if self.vi_tol is None:
            tol = 1e-6 * (1 - self.beta) / (2 * self.beta) if self.beta < 1 else 1e-6
            object.__setattr__(self, "vi_tol", tol)
        if self.vi_tol <= 0:
            raise ValueError("vi_tol: must be > 0")

    def replace(self, **changes) -> SolverConfig:
        from dataclasses import replace
        if "beta" in changes and "vi_tol" not in changes:
            changes["vi_tol"] = None
        return replace(self, **changes)


@dataclass
class PolicyTable:
    """Discretised covariances with one action and one value each."""

    centroids: np.ndarray
    actions: list[Action]
    value: np.ndarray
    config: SolverConfig
    channel: ChannelParams
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        if not (len(self.centroids) == len(self.actions) == len(self.value)):
            raise ValueError("centroids, actions and value must have equal length")
        for a in self.actions:
            self.channel.action(a.powers)

    @property
    def D(self) -> int:
        return len(self.centroids)

    def nearest(self, P: np.ndarray) -> np.ndarray:
        """Index of the nearest centroid in Frobenius norm (first on ties)."""
        P = np.asarray(P, dtype=float)
        flat = self.centroids.reshape(self.D, -1)
        x = P.reshape(P.shape[:-2] + (1, -1))
        d2 = ((x - flat) ** 2).sum(axis=-1)
        return np.argmin(d2, axis=-1)


def lookup(table: PolicyTable, P) -> Action:
    """Action of the centroid closest to ``P``."""
    if table.D == 0:
        raise ValueError("empty policy table")
    return table.actions[int(table.nearest(np.asarray(P, dtype=float)))]


# ---------------------------------------------------------------------------
# Text format
#
#   mpr-policy-table 1
#   n 4
#   N 2
#   D 200
#   beta 0.9
#   mu 0.1
#   receiver sic
#   seed 0
#   ... more key/value header lines ...
#   power_set 0 0.0 0.333 ...
#   end-header
#   <value> <level_1> ... <level_N> <P_11> <P_12> ... <P_nn>
#
# Floats are written with repr() so that a parse/emit cycle is exact.


def _f(x: float) -> str:
    return repr(float(x))


def dumps(table: PolicyTable) -> str:
    cfg, ch = table.config, table.channel
    n = table.centroids.shape[-1]
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}",
             f"n {n}",
             f"N {ch.n_sensors}",
             f"D {table.D}",
             f"beta {_f(cfg.beta)}",
             f"mu {_f(cfg.mu)}",
             f"receiver {ch.receiver.value}",
             f"seed {cfg.seed}",
             f"vi_tol {_f(cfg.vi_tol)}",
             f"vi_max_iters {cfg.vi_max_iters}",
             f"n_paths {cfg.n_paths}",
             f"path_length {cfg.path_length}",
             f"exploration {cfg.exploration}",
             f"mc_samples {cfg.mc_samples}",
             f"sigma2 {_f(ch.sigma2)}",
             f"alpha {_f(ch.alpha)}",
             "s " + " ".join(_f(v) for v in ch.s)]
    for i, ps in enumerate(ch.power_sets):
        lines.append(f"power_set {i} " + " ".join(_f(p) for p in ps))
    for key in sorted(table.metadata):
        val = table.metadata[key]
        if isinstance(val, (bool, int, float, str, np.floating, np.integer)):
            text = _f(val) if isinstance(val, (float, np.floating)) else str(val)
            lines.append(f"meta {key} {text}")
    lines.append("end-header")
    for P, a, v in zip(table.centroids, table.actions, table.value):
        levels = ch.levels(a)
        lines.append(" ".join([_f(v), *map(str, levels), *map(_f, P.ravel())]))
    return "\n".join(lines) + "\n"


def _meta_value(text: str):
    if text in ("True", "False"):
        return text == "True"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def loads(text: str) -> PolicyTable:
    lines = text.splitlines()
    if not lines or lines[0].split() != [FORMAT_TAG, str(FORMAT_VERSION)]:
        raise ValueError("not a policy table file (bad header line)")
    head: dict[str, list[str]] = {}
    power_sets: dict[int, tuple[float, ...]] = {}
    meta: dict = {}
    body_start = None
    for k, line in enumerate(lines[1:], start=1):
        if line == "end-header":
            body_start = k + 1
            break
        key, *rest = line.split()
        if key == "power_set":
            power_sets[int(rest[0])] = tuple(float(p) for p in rest[1:])
        elif key == "meta":
            meta[rest[0]] = _meta_value(rest[1])
        else:
            head[key] = rest
    if body_start is None:
        raise ValueError("policy table header is not terminated")

    n, N, D = (int(head[k][0]) for k in ("n", "N", "D"))
    channel = ChannelParams(s=tuple(float(v) for v in head["s"]),
                            power_sets=tuple(power_sets[i] for i in range(N)),
                            sigma2=float(head["sigma2"][0]),
                            alpha=float(head["alpha"][0]),
                            receiver=Receiver(head["receiver"][0]))
    config = SolverConfig(beta=float(head["beta"][0]), mu=float(head["mu"][0]),
                          D=D, vi_tol=float(head["vi_tol"][0]),
                          vi_max_iters=int(head["vi_max_iters"][0]),
                          n_paths=int(head["n_paths"][0]),
                          path_length=int(head["path_length"][0]),
                          exploration=head["exploration"][0],
                          seed=int(head["seed"][0]),
                          mc_samples=int(head["mc_samples"][0]))
    rows = [line.split() for line in lines[body_start:] if line.strip()]
    if len(rows) != D:
        raise ValueError(f"expected {D} centroid rows, found {len(rows)}")
    value = np.array([float(r[0]) for r in rows])
    actions = [channel.action_from_levels([int(x) for x in r[1:1 + N]]) for r in rows]
    centroids = np.array([[float(x) for x in r[1 + N:]] for r in rows]).reshape(D, n, n)
    return PolicyTable(centroids, actions, value, config, channel, meta)


def save(table: PolicyTable, path) -> None:
    Path(path).write_text(dumps(table))


def load(path) -> PolicyTable:
    return loads(Path(path).read_text())
