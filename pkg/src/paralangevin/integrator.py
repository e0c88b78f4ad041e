"""A BBK-type Langevin integrator with per-substep temperature correction.

One propagation *window* advances ``substeps`` fine steps of size ``dt``.
The scheme is a velocity-Verlet splitting with friction and a fluctuation
half-kick on each side of the position update.  Two properties matter for
everything built on top:

* Noise reuse.  A window of L substeps consumes exactly L + 1 Gaussian
  blocks.  Block 0 enters only the opening half-kick, block L only the
  closing one, and every interior block ``l`` is used twice: in the closing
  half-kick of substep ``l`` and again in the opening half-kick of substep
  ``l + 1``, with the same amplitude.  That is what keeps the scheme at one
  fresh Gaussian and one force evaluation per step.

* Damping lag.  From the second substep on, the friction term of the opening
  half-kick acts on the previous half-step momentum, not on the full-step
  momentum.  Chains of windows restart from a full-step momentum, and that
  restart is what biases the stationary kinetic temperature: for L substeps
  per window the scheme equilibrates near ``inv_beta * (1 - 1/(2L))``
  instead of ``inv_beta``.

The bias can be removed by scaling the fluctuation amplitude of block ``l``
with a weight ``C_l``.  Requiring the leading-order stationary momentum
variance to be flat across a window forces the recursion ``C_1 = 4 - C_0``,
``C_l = 4 - 3 C_{l-1}``, which :func:`solve_schedule` evaluates; most
choices of ``C_0`` go negative after a few substeps, so the robust choice
``C_0 = 3`` (all later weights 1) is provided as a named constructor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .model import LangevinParams, PhaseState
from .potentials import Free, Potential
from .rng import derive_seeds, gaussian_stream, gaussian_streams

#: any component beyond this magnitude aborts the window as a blow-up
BLOWUP_LIMIT = 1e12

#: sampling modes for kinetic-temperature measurement
ALL_SUBSTEPS = "all_substeps"
WINDOW_ENDS = "window_ends"


class BlowUpError(RuntimeError):
    """A propagated state left the trusted numerical range."""

    def __init__(self, message: str, substep=None, window=None, iteration=None):
        super().__init__(message)
        self.substep = substep
        self.window = window
        self.iteration = iteration


class InfeasibleScheduleError(ValueError):
    """The correction recursion produced a non-positive weight."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class AnalyticCoefficients:
    """Per-step damping and fluctuation scales of the discrete scheme.

    ``theta = gamma * inv_beta * dt / 2`` is the variance injected by one
    unit-weight half-kick; ``mu = 1 - gamma * dt / 2`` is the half-step
    damping factor.
    """

    theta: float
    mu: float

    def __post_init__(self) -> None:
        # mu = 1 corresponds to the frictionless limit gamma = 0
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")

    @classmethod
    def from_params(cls, params: LangevinParams) -> "AnalyticCoefficients":
        return cls(
            theta=0.5 * params.gamma * params.inv_beta * params.dt,
            mu=1.0 - 0.5 * params.gamma * params.dt,
        )


@dataclass(frozen=True)
class TemperatureSchedule:
    """Fluctuation weights ``C_0..C_L``, one per Gaussian block of a window."""

    coefficients: tuple[float, ...]

    def __post_init__(self) -> None:
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) < 2:
            raise ValueError("a schedule needs at least C_0 and C_1 (substeps >= 1)")
        for i, c in enumerate(coeffs):
            if not (np.isfinite(c) and c > 0.0):
                raise ValueError(f"schedule weight C_{i} must be positive, got {c}")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def substeps(self) -> int:
        return len(self.coefficients) - 1

    @classmethod
    def identity(cls, substeps: int) -> "TemperatureSchedule":
        """All weights 1: the uncorrected scheme."""
        return cls(coefficients=(1.0,) * (substeps + 1))

    @classmethod
    def robust(cls, substeps: int) -> "TemperatureSchedule":
        """C_0 = 3, all later weights 1; feasible for every substep count."""
        return solve_schedule(substeps, 3.0)

    @classmethod
    def flat_pair(cls) -> "TemperatureSchedule":
        """C_0 = C_1 = 2, the alternative single-substep correction."""
        return solve_schedule(1, 2.0)


def solve_schedule(substeps: int, c0: float) -> TemperatureSchedule:
    """Weights from the flat-variance recursion, starting at ``C_0 = c0``.

    ``C_1 = 4 - C_0`` and ``C_l = 4 - 3 C_{l-1}`` afterwards.  Every weight
    must come out positive; otherwise the schedule is infeasible and the
    error names the first failing index.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    coeffs = [float(c0)]
    if not (np.isfinite(c0) and c0 > 0.0):
        raise InfeasibleScheduleError(
            f"schedule infeasible: C_0 = {c0} is not positive", index=0
        )
    coeffs.append(4.0 - coeffs[0])
    for l in range(2, substeps + 1):
        coeffs.append(4.0 - 3.0 * coeffs[l - 1])
    for i, c in enumerate(coeffs):
        if not c > 0.0:
            raise InfeasibleScheduleError(
                f"schedule infeasible for C_0 = {c0}: C_{i} = {c} is not positive",
                index=i,
            )
    return TemperatureSchedule(coefficients=tuple(coeffs))


def _amplitude(params: LangevinParams, c: float) -> float:
    """Fluctuation amplitude of one half-kick with schedule weight ``c``."""
    if not c > 0.0:
        raise ValueError(f"schedule weight must be positive, got {c}")
    return 0.5 * math.sqrt(2.0 * params.gamma * c * params.inv_beta * params.dt)


def _check_bounded(q: np.ndarray, p: np.ndarray, substep: int) -> None:
    # abs(nan) <= x is False, so this also catches non-finite components
    if not ((np.abs(q) <= BLOWUP_LIMIT).all() and (np.abs(p) <= BLOWUP_LIMIT).all()):
        raise BlowUpError(
            f"state left the trusted range (|component| > {BLOWUP_LIMIT:g} "
            f"or non-finite) at substep {substep}",
            substep=substep,
        )


def _first_kernel(q, p, grad_q, grad_fn, gamma, dt, mass, amp0, amp1, g0, g1):
    p_half = p - 0.5 * dt * grad_q - 0.5 * dt * gamma * p + amp0 * g0
    q1 = q + dt * (p_half / mass)
    grad_q1 = grad_fn(q1)
    p1 = p_half - 0.5 * dt * grad_q1 - 0.5 * dt * gamma * p_half + amp1 * g1
    return q1, p1, p_half, grad_q1


def _step_kernel(q, p, p_half_prev, grad_q, grad_fn, gamma, dt, mass, amp_l, amp_lp1, g_l, g_lp1):
    p_half = p - 0.5 * dt * grad_q - 0.5 * dt * gamma * p_half_prev + amp_l * g_l
    q1 = q + dt * (p_half / mass)
    grad_q1 = grad_fn(q1)
    p1 = p_half - 0.5 * dt * grad_q1 - 0.5 * dt * gamma * p_half + amp_lp1 * g_lp1
    return q1, p1, p_half, grad_q1


def bbk_first_step(
    state: PhaseState,
    pot: Potential,
    params: LangevinParams,
    c0: float,
    c1: float,
    g0: np.ndarray,
    g1: np.ndarray,
) -> tuple[PhaseState, np.ndarray]:
    """First substep of a window; friction acts on the full-step momentum.

    Returns the new state and the half-step momentum ``p_half`` needed to
    chain :func:`bbk_step`.
    """
    g0 = np.asarray(g0, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    mass = params.mass_vector(state.dim)
    sqrt_m = np.sqrt(mass)
    q1, p1, p_half, _ = _first_kernel(
        state.q,
        state.p,
        pot.gradient(state.q),
        pot.gradient,
        params.gamma,
        params.dt,
        mass,
        _amplitude(params, c0) * sqrt_m,
        _amplitude(params, c1) * sqrt_m,
        g0,
        g1,
    )
    return PhaseState(q=q1, p=p1), p_half


def bbk_step(
    state: PhaseState,
    p_half: np.ndarray,
    pot: Potential,
    params: LangevinParams,
    c_l: float,
    c_lp1: float,
    g_l: np.ndarray,
    g_lp1: np.ndarray,
) -> tuple[PhaseState, np.ndarray]:
    """Subsequent substep; friction of the opening half-kick acts on ``p_half``.

    ``g_l`` must be the same block that closed the previous substep (it is
    reused with an identical amplitude); ``g_lp1`` is the one fresh block.
    """
    g_l = np.asarray(g_l, dtype=float)
    g_lp1 = np.asarray(g_lp1, dtype=float)
    mass = params.mass_vector(state.dim)
    sqrt_m = np.sqrt(mass)
    q1, p1, p_half_next, _ = _step_kernel(
        state.q,
        state.p,
        np.asarray(p_half, dtype=float),
        pot.gradient(state.q),
        pot.gradient,
        params.gamma,
        params.dt,
        mass,
        _amplitude(params, c_l) * sqrt_m,
        _amplitude(params, c_lp1) * sqrt_m,
        g_l,
        g_lp1,
    )
    return PhaseState(q=q1, p=p1), p_half_next


def _window_kernel(state, pot, params, schedule, seed, record):
    n_sub = params.substeps
    if schedule.substeps != n_sub:
        raise ValueError(
            f"schedule has {schedule.substeps} substeps, params have {n_sub}"
        )
    d = state.dim
    mass = params.mass_vector(d)
    sqrt_m = np.sqrt(mass)
    amps = [_amplitude(params, c) * sqrt_m for c in schedule.coefficients]
    noise = gaussian_stream(seed, (n_sub + 1) * d).reshape(n_sub + 1, d)
    gamma, dt = params.gamma, params.dt
    recorded = np.empty((n_sub, d)) if record else None

    q, p = state.q, state.p
    grad_q = pot.gradient(q)
    q, p, p_half, grad_q = _first_kernel(
        q, p, grad_q, pot.gradient, gamma, dt, mass, amps[0], amps[1], noise[0], noise[1]
    )
    _check_bounded(q, p, substep=1)
    if record:
        recorded[0] = p
    for l in range(1, n_sub):
        q, p, p_half, grad_q = _step_kernel(
            q, p, p_half, grad_q, pot.gradient, gamma, dt, mass,
            amps[l], amps[l + 1], noise[l], noise[l + 1],
        )
        _check_bounded(q, p, substep=l + 1)
        if record:
            recorded[l] = p
    return PhaseState(q=q, p=p), recorded


def propagate_window(
    state: PhaseState,
    pot: Potential,
    params: LangevinParams,
    schedule: TemperatureSchedule,
    seed: int,
) -> PhaseState:
    """Advance one window of ``params.substeps`` fine steps.

    The window's noise is drawn entirely from ``seed``: block ``l`` of the
    stream is the Gaussian vector G_l, consumed substep-major and
    component-minor.  Re-propagating with the same arguments is bitwise
    reproducible.  Raises :class:`BlowUpError` when any intermediate
    component exceeds :data:`BLOWUP_LIMIT` or turns non-finite.
    """
    end, _ = _window_kernel(state, pot, params, schedule, seed, record=False)
    return end


def _propagate_window_momenta(state, pot, params, schedule, seed):
    """Window propagation that also reports the full-step momenta p_1..p_L."""
    return _window_kernel(state, pot, params, schedule, seed, record=True)


def predicted_kinetic_temperature(substeps: int, inv_beta: float) -> float:
    """Leading-order stationary kinetic temperature of the uncorrected scheme."""
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    return inv_beta * (1.0 - 1.0 / (2.0 * substeps))


def predicted_intermediate_variance(l: int, params: LangevinParams) -> float:
    """Leading-order stationary momentum variance after substep ``l``.

    Interpolates linearly in ``l`` between the window-start deficit and the
    equilibrium value reached at the window end.
    """
    n_sub = params.substeps
    if not 1 <= l <= n_sub:
        raise ValueError(f"substep index must lie in 1..{n_sub}, got {l}")
    coeffs = AnalyticCoefficients.from_params(params)
    k_eq = predicted_kinetic_temperature(n_sub, params.inv_beta)
    return k_eq + 2.0 * coeffs.theta * (l / n_sub - 1.0)


@dataclass(frozen=True)
class TemperatureReport:
    """Outcome of a kinetic-temperature measurement."""

    k_eq_empirical: float
    k_eq_predicted: float
    per_substep_variance: tuple[float, ...]
    n_windows: int
    n_burn_in: int
    sampling: str


def _accumulate_variance(s1, s2, count, mass):
    """Mass-weighted, component-averaged variance from running moments."""
    mean = s1 / count
    var = s2 / count - mean * mean
    return float(np.mean(var / mass))


def _measure_chain(pot, params, schedule, n_windows, master_seed, n_burn, d, mass):
    state = PhaseState(q=np.zeros(d), p=np.zeros(d))
    seeds = derive_seeds(master_seed, n_windows)
    n_sub = params.substeps
    s1 = np.zeros((n_sub, d))
    s2 = np.zeros((n_sub, d))
    count = 0
    for n in range(n_windows):
        state, momenta = _propagate_window_momenta(
            state, pot, params, schedule, int(seeds[n])
        )
        if n >= n_burn:
            s1 += momenta
            s2 += momenta * momenta
            count += 1
    return s1, s2, count


def _measure_free(params, schedule, n_windows, master_seed, n_burn, d, mass):
    """Variance moments for the free potential without stepping window by window.

    For V = 0 the momentum recursion inside a window is linear with constant
    coefficients, so a window maps its start momentum to
    ``p_L = a p_0 + (noise combination)`` with ``a = mu^2 r^(L-1)`` and
    ``r = 1 - gamma dt``.  The chain over windows is then a first-order
    linear filter that scipy evaluates in one pass, and the interior momenta
    are reconstructed from the filtered window starts.  Output agrees with
    the window-by-window chain up to roundoff.
    """
    n_sub = params.substeps
    coeffs = AnalyticCoefficients.from_params(params)
    mu = coeffs.mu
    r = 1.0 - params.gamma * params.dt
    sqrt_m = np.sqrt(mass)
    amp = np.array(
        [_amplitude(params, c) for c in schedule.coefficients]
    )[:, None] * sqrt_m[None, :]
    # weight of amplitude-scaled block j inside the window-end map
    wcoef = np.empty(n_sub + 1)
    wcoef[0] = mu * r ** (n_sub - 1)
    for j in range(1, n_sub):
        wcoef[j] = 2.0 * mu * r ** (n_sub - 1 - j)
    wcoef[n_sub] = 1.0
    a = mu * mu * r ** (n_sub - 1)

    s1 = np.zeros((n_sub, d))
    s2 = np.zeros((n_sub, d))
    count = 0
    chunk = max(1, int(4_194_304 // ((n_sub + 1) * d)))
    p_end = np.zeros(d)
    zi = (a * p_end)[None, :]
    for n0 in range(0, n_windows, chunk):
        n1 = min(n0 + chunk, n_windows)
        seeds = derive_seeds(master_seed, n1)[n0:]
        noise = gaussian_streams(seeds, (n_sub + 1) * d).reshape(-1, n_sub + 1, d)
        scaled = noise * amp[None, :, :]
        w = np.einsum("j,bjd->bd", wcoef, scaled)
        p_l_series, zi = lfilter([1.0], [1.0, -a], w, axis=0, zi=zi)
        p0 = np.vstack([p_end[None, :], p_l_series[:-1]])
        lo = max(0, n_burn - n0)
        h = mu * p0 + scaled[:, 0, :]
        for l in range(1, n_sub + 1):
            p_l = mu * h + scaled[:, l, :]
            if lo < p_l.shape[0]:
                s1[l - 1] += p_l[lo:].sum(axis=0)
                s2[l - 1] += (p_l[lo:] * p_l[lo:]).sum(axis=0)
            if l < n_sub:
                h = r * h + 2.0 * scaled[:, l, :]
        count += max(0, (n1 - n0) - lo)
        p_end = p_l_series[-1]
        _check_bounded(p_end, p_end, substep=n_sub)
    return s1, s2, count


def measure_kinetic_temperature(
    pot: Potential,
    params: LangevinParams,
    schedule: TemperatureSchedule,
    n_windows: int,
    master_seed: int,
    sampling: str = ALL_SUBSTEPS,
    burn_in: float = 0.1,
) -> TemperatureReport:
    """Chain windows from a cold start and report the stationary temperature.

    Window ``n`` uses the seed derived for index ``n`` from ``master_seed``.
    The first ``burn_in`` fraction of windows is discarded; the remaining
    full-step momenta enter the empirical variance, either all substeps
    (default) or the window-end momenta only.  The variance is mass-weighted
    (p^2/m) and averaged over components.
    """
    if sampling not in (ALL_SUBSTEPS, WINDOW_ENDS):
        raise ValueError(f"unknown sampling mode: {sampling!r}")
    if not 0.0 <= burn_in < 1.0:
        raise ValueError(f"burn_in must lie in [0, 1), got {burn_in}")
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    n_burn = int(round(burn_in * n_windows))
    if n_burn >= n_windows:
        n_burn = n_windows - 1
    d = params.mass.shape[0] if params.mass is not None else 1
    mass = params.mass_vector(d)
    if isinstance(pot, Free):
        s1, s2, count = _measure_free(
            params, schedule, n_windows, master_seed, n_burn, d, mass
        )
    else:
        s1, s2, count = _measure_chain(
            pot, params, schedule, n_windows, master_seed, n_burn, d, mass
        )
    per_substep = tuple(
        _accumulate_variance(s1[l], s2[l], count, mass) for l in range(params.substeps)
    )
    if sampling == ALL_SUBSTEPS:
        k_emp = _accumulate_variance(
            s1.sum(axis=0), s2.sum(axis=0), count * params.substeps, mass
        )
    else:
        k_emp = per_substep[-1]
    return TemperatureReport(
        k_eq_empirical=k_emp,
        k_eq_predicted=predicted_kinetic_temperature(params.substeps, params.inv_beta),
        per_substep_variance=per_substep,
        n_windows=n_windows,
        n_burn_in=n_burn,
        sampling=sampling,
    )
