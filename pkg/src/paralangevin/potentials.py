"""Potential energy surfaces and the fine/coarse propagator pairing.

All potentials expose ``energy(q) -> float`` and ``gradient(q) -> ndarray``
on flat coordinate vectors.  A cheap surrogate for an expensive reference is
expressed with :class:`Perturbed`, which interpolates linearly between the
two; :class:`PropagatorPair` bundles a reference (fine) and surrogate
(coarse) potential together with their configured per-window costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PotentialError(ValueError):
    """Invalid coordinates or parameters for a potential evaluation."""


class MinimizationError(RuntimeError):
    """Gradient descent failed to reach the requested tolerance."""


def _coeff(value, name: str):
    """Normalize a per-axis coefficient: scalar stays scalar, else a vector."""
    if np.isscalar(value):
        out = float(value)
        if not np.isfinite(out):
            raise ValueError(f"{name} must be finite")
        return out
    arr = np.array(value, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or not np.isfinite(arr).all():
        raise ValueError(f"{name} must be a finite scalar or 1-d vector")
    arr.setflags(write=False)
    return arr


class Potential:
    """Base interface; subclasses implement energy and gradient."""

    #: fixed coordinate dimension, or None when any dimension is accepted
    dimension: int | None = None

    def energy(self, q: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim != 1:
            raise PotentialError(f"coordinates must be a 1-d vector, got shape {q.shape}")
        if self.dimension is not None and q.shape[0] != self.dimension:
            raise PotentialError(
                f"{type(self).__name__} expects dimension {self.dimension}, got {q.shape[0]}"
            )
        return q


@dataclass(frozen=True)
class Free(Potential):
    """V = 0; the exactly solvable case used for temperature calibration."""

    def energy(self, q) -> float:
        self._check_q(q)
        return 0.0

    def gradient(self, q) -> np.ndarray:
        q = self._check_q(q)
        return np.zeros_like(q)


@dataclass(frozen=True)
class Harmonic(Potential):
    """V(q) = sum_i k_i q_i^2 / 2 with per-axis (or shared scalar) stiffness."""

    k: float | np.ndarray = 1.0

    def __post_init__(self) -> None:
        k = _coeff(self.k, "k")
        if np.any(np.asarray(k) <= 0.0):
            raise ValueError("k must be positive")
        object.__setattr__(self, "k", k)
        if isinstance(k, np.ndarray):
            object.__setattr__(self, "dimension", k.shape[0])

    def energy(self, q) -> float:
        q = self._check_q(q)
        return float(0.5 * np.sum(self.k * q * q))

    def gradient(self, q) -> np.ndarray:
        q = self._check_q(q)
        return self.k * q


@dataclass(frozen=True)
class DoubleWell(Potential):
    """V(q) = sum_i a_i (q_i^2 - b_i)^2, axis-separable with minima at +-sqrt(b_i).

    The barrier between the two wells of axis i has height a_i * b_i^2.
    """

    a: float | np.ndarray = 1.0
    b: float | np.ndarray = 1.0

    def __post_init__(self) -> None:
        a = _coeff(self.a, "a")
        b = _coeff(self.b, "b")
        if np.any(np.asarray(a) <= 0.0) or np.any(np.asarray(b) <= 0.0):
            raise ValueError("a and b must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        dims = {x.shape[0] for x in (a, b) if isinstance(x, np.ndarray)}
        if len(dims) > 1:
            raise ValueError("a and b have inconsistent dimensions")
        if dims:
            object.__setattr__(self, "dimension", dims.pop())

    def energy(self, q) -> float:
        q = self._check_q(q)
        w = q * q - self.b
        return float(np.sum(self.a * w * w))

    def gradient(self, q) -> np.ndarray:
        q = self._check_q(q)
        return 4.0 * self.a * q * (q * q - self.b)


@dataclass(frozen=True)
class LennardJonesCluster(Potential):
    """An n-atom Lennard-Jones cluster on flat coordinates.

    Coordinates are packed atom-major: ``q = (x_0, y_0, ..., x_1, y_1, ...)``
    with ``space_dim`` components per atom.  Pair energy
    4 eps ((sigma/r)^12 - (sigma/r)^6).
    """

    epsilon: float = 1.0
    sigma: float = 1.0
    n_atoms: int = 7
    space_dim: int = 2

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")
        if not (np.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError("sigma must be positive")
        if self.n_atoms < 2:
            raise ValueError("need at least 2 atoms")
        if self.space_dim < 1:
            raise ValueError("space_dim must be >= 1")
        object.__setattr__(self, "dimension", self.n_atoms * self.space_dim)

    def _pair_r2(self, q: np.ndarray):
        x = q.reshape(self.n_atoms, self.space_dim)
        diff = x[:, None, :] - x[None, :, :]
        r2 = np.sum(diff * diff, axis=-1)
        off = ~np.eye(self.n_atoms, dtype=bool)
        if np.any(r2[off] == 0.0):
            raise PotentialError("coincident atoms: pair distance is zero")
        return x, diff, r2

    def energy(self, q) -> float:
        q = self._check_q(q)
        _, _, r2 = self._pair_r2(q)
        iu = np.triu_indices(self.n_atoms, k=1)
        u3 = (self.sigma * self.sigma / r2[iu]) ** 3
        return float(np.sum(4.0 * self.epsilon * (u3 * u3 - u3)))

    def gradient(self, q) -> np.ndarray:
        q = self._check_q(q)
        _, diff, r2 = self._pair_r2(q)
        np.fill_diagonal(r2, 1.0)  # diagonal never contributes
        u3 = (self.sigma * self.sigma / r2) ** 3
        coeff = (24.0 * self.epsilon * u3 - 48.0 * self.epsilon * u3 * u3) / r2
        np.fill_diagonal(coeff, 0.0)
        grad = np.sum(coeff[:, :, None] * diff, axis=1)
        return grad.reshape(-1)


@dataclass(frozen=True)
class Perturbed(Potential):
    """V = V_base + lam * V_delta, exactly linear in the mixing weight.

    With ``lam == 0`` both energy and gradient are returned straight from the
    base potential, bit for bit.
    """

    base: Potential
    delta: Potential
    lam: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam):
            raise ValueError("lam must be finite")
        dims = {
            p.dimension for p in (self.base, self.delta) if p.dimension is not None
        }
        if len(dims) > 1:
            raise ValueError("base and delta have incompatible dimensions")
        if dims:
            object.__setattr__(self, "dimension", dims.pop())

    def energy(self, q) -> float:
        if self.lam == 0.0:
            return self.base.energy(q)
        return self.base.energy(q) + self.lam * self.delta.energy(q)

    def gradient(self, q) -> np.ndarray:
        if self.lam == 0.0:
            return self.base.gradient(q)
        return self.base.gradient(q) + self.lam * self.delta.gradient(q)


def gradient_check(pot: Potential, q, h: float = 1e-6) -> float:
    """Largest componentwise gap between the gradient and central differences."""
    q = np.asarray(q, dtype=float)
    grad = pot.gradient(q)
    worst = 0.0
    for i in range(q.shape[0]):
        qp = q.copy()
        qm = q.copy()
        qp[i] += h
        qm[i] -= h
        fd = (pot.energy(qp) - pot.energy(qm)) / (2.0 * h)
        worst = max(worst, abs(fd - grad[i]))
    return worst


def _descend(pot: Potential, start: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Steepest descent with Armijo backtracking until |grad| <= tol.

    The sufficient-decrease constant is kept large (0.5) so that accepted
    steps stay near the local quadratic model; a permissive constant lets
    the search jump across barriers into a different basin.
    """
    x = np.array(start, dtype=float)
    energy = pot.energy(x)
    step = 1.0
    for _ in range(max_iter):
        grad = pot.gradient(x)
        gnorm2 = float(np.dot(grad, grad))
        if np.sqrt(gnorm2) <= tol:
            return x
        step = min(step * 2.0, 1e3)
        while True:
            trial = x - step * grad
            try:
                trial_energy = pot.energy(trial)
            except PotentialError:
                trial_energy = np.inf
            if np.isfinite(trial_energy) and trial_energy <= energy - 0.5 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-18:
                raise MinimizationError(
                    f"line search stalled while minimizing from start "
                    f"{np.asarray(start, dtype=float).tolist()}"
                )
        x = trial
        energy = trial_energy
    raise MinimizationError(
        f"no convergence to |grad| <= {tol} within {max_iter} iterations "
        f"from start {np.asarray(start, dtype=float).tolist()}"
    )


def local_minima(
    pot: Potential, starts, tol: float = 1e-8, max_iter: int = 50_000
) -> list[np.ndarray]:
    """Minimize from every start; returns distinct minima in first-found order.

    Each returned point satisfies ``|gradient| <= tol``; points closer than
    ``tol`` to an earlier minimum are treated as duplicates and dropped.
    Raises :class:`MinimizationError`, naming the start, when a descent does
    not converge.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    minima: list[np.ndarray] = []
    for start in starts:
        x = _descend(pot, np.asarray(start, dtype=float), tol, max_iter)
        if all(np.linalg.norm(x - m) > tol for m in minima):
            minima.append(x)
    return minima


@dataclass(frozen=True)
class PropagatorPair:
    """Reference (fine) and surrogate (coarse) potentials with their costs.

    Costs are configured, not measured: they express the relative price of
    one window propagation under each potential and feed the gain reports.
    """

    fine: Potential
    coarse: Potential
    cost_fine: float = 1.0
    cost_coarse: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.cost_coarse) and self.cost_coarse > 0.0):
            raise ValueError("cost_coarse must be positive")
        if not (np.isfinite(self.cost_fine) and self.cost_fine >= self.cost_coarse):
            raise ValueError("cost_fine must be >= cost_coarse")
        dims = {
            p.dimension for p in (self.fine, self.coarse) if p.dimension is not None
        }
        if len(dims) > 1:
            raise ValueError("fine and coarse potentials have incompatible dimensions")
