"""Core value types: phase-space states, dynamics parameters, trajectories.

States and parameter sets are immutable so they can be shared freely between
the sequential reference propagator, parareal iterations, and worker threads
without defensive copying.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d real vector")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite, got {arr}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PhaseState:
    """One point (q, p) in phase space; q and p have the same dimension."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", _frozen_vector(self.q, "q"))
        object.__setattr__(self, "p", _frozen_vector(self.p, "p"))
        if self.q.shape != self.p.shape:
            raise ValueError(
                f"q and p must have equal dimension, got {self.q.shape} and {self.p.shape}"
            )

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.p, other.p)


@dataclass(frozen=True)
class LangevinParams:
    """Parameters of the discretized Langevin dynamics.

    ``dt`` is the fine step; one propagation window advances ``substeps``
    fine steps, so the window length is ``substeps * dt`` (derived, never
    stored).  ``inv_beta`` is the temperature in energy units; zero switches
    the noise off and leaves damped deterministic dynamics.  ``mass`` is an
    optional per-component mass vector; ``None`` means unit masses in any
    dimension.
    """

    gamma: float
    inv_beta: float
    dt: float
    substeps: int = 1
    mass: np.ndarray | None = None

    def __post_init__(self) -> None:
        # gamma = 0 is admitted for the deterministic (velocity Verlet) limit
        if not (np.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError(f"gamma must be >= 0 and finite, got {self.gamma}")
        if not (np.isfinite(self.inv_beta) and self.inv_beta >= 0.0):
            raise ValueError(f"inv_beta must be >= 0 and finite, got {self.inv_beta}")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.gamma * self.dt >= 2.0:
            raise ValueError(
                f"gamma * dt must stay below 2 so the half-step damping "
                f"1 - gamma*dt/2 stays positive: got {self.gamma * self.dt}"
            )
        if not (isinstance(self.substeps, (int, np.integer)) and self.substeps >= 1):
            raise ValueError(f"substeps must be an integer >= 1, got {self.substeps}")
        object.__setattr__(self, "substeps", int(self.substeps))
        if self.mass is not None:
            mass = _frozen_vector(self.mass, "mass")
            if not (mass > 0.0).all():
                raise ValueError("mass components must be positive")
            object.__setattr__(self, "mass", mass)

    @property
    def window_dt(self) -> float:
        """Length of one propagation window (coarse step)."""
        return self.substeps * self.dt

    def mass_vector(self, dim: int) -> np.ndarray:
        if self.mass is None:
            return np.ones(dim)
        if self.mass.shape[0] != dim:
            raise ValueError(
                f"mass has dimension {self.mass.shape[0]}, state has dimension {dim}"
            )
        return self.mass


@dataclass(frozen=True)
class NodeTrajectory:
    """States at the window endpoints n = 0..N of one run."""

    states: tuple[PhaseState, ...]

    def __post_init__(self) -> None:
        states = tuple(self.states)
        if not states:
            raise ValueError("a trajectory needs at least the initial node")
        dim = states[0].dim
        for k, s in enumerate(states):
            if not isinstance(s, PhaseState):
                raise TypeError(f"node {k} is not a PhaseState")
            if s.dim != dim:
                raise ValueError(f"node {k} has dimension {s.dim}, expected {dim}")
        object.__setattr__(self, "states", states)

    @property
    def n_windows(self) -> int:
        return len(self.states) - 1

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, n: int) -> PhaseState:
        return self.states[n]

    def __iter__(self):
        return iter(self.states)

    def slice(self, n_init: int, n_final: int) -> "NodeTrajectory":
        """Nodes ``n_init..n_final`` inclusive, re-indexed from zero."""
        if not 0 <= n_init <= n_final <= self.n_windows:
            raise IndexError(
                f"slice [{n_init}, {n_final}] outside trajectory range [0, {self.n_windows}]"
            )
        return NodeTrajectory(self.states[n_init : n_final + 1])

    def positions(self) -> np.ndarray:
        """(N+1, d) array of node positions (a copy)."""
        return np.array([s.q for s in self.states])

    def momenta(self) -> np.ndarray:
        return np.array([s.p for s in self.states])


def write_trajectory_csv(
    trajectory: NodeTrajectory, path: str | Path, window_dt: float
) -> None:
    """Write nodes as CSV rows ``n, t, q_0..q_{d-1}, p_0..p_{d-1}``.

    Floats carry 17 significant digits, enough to round-trip doubles exactly.
    """
    d = trajectory.dim
    header = (
        ["n", "t"] + [f"q_{i}" for i in range(d)] + [f"p_{i}" for i in range(d)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for n, state in enumerate(trajectory):
            row = [str(n), format(n * window_dt, ".17g")]
            row += [format(x, ".17g") for x in state.q]
            row += [format(x, ".17g") for x in state.p]
            writer.writerow(row)


def read_trajectory_csv(path: str | Path) -> NodeTrajectory:
    """Read a trajectory written by :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 4 or header[0] != "n" or header[1] != "t":
            raise ValueError(f"unrecognized trajectory header: {header}")
        d = (len(header) - 2) // 2
        states = []
        for row in reader:
            values = [float(x) for x in row[2:]]
            states.append(PhaseState(q=values[:d], p=values[d:]))
    return NodeTrajectory(tuple(states))
