"""Parallel-in-time propagation: classic parareal and an adaptive variant.

The classic method bootstraps a trajectory with the cheap coarse propagator
and then iterates: jump terms (fine minus coarse, one per window) are
computed in parallel from the previous iterate, and a sequential corrected
coarse sweep folds them in.  Each iteration extends the exactly-converged
prefix by at least one window, so N windows converge in at most N
iterations.

The adaptive variant watches a running relative error during the sweep.
When the error leaves the trusted band it gives up on the full range,
truncates the current time-slab just before the offending window, and keeps
iterating on the shortened slab; once a slab converges the next one opens
from its endpoint.  Slab bookkeeping (attempt endpoints and per-attempt
iteration counts) is preserved for cost accounting.

Two conventions matter for reproducibility:

* The error metric compares positions only, one Euclidean norm per node,
  accumulated left to right; the running error of the adaptive sweep is
  bitwise identical to recomputing the sums from scratch at every node.
* The corrected value is evaluated exactly as ``coarse(state) + jump`` with
  the jump formed first, so a degenerate pair (coarse identical to fine)
  cancels to the coarse trajectory up to floating-point zeros and converges
  in one iteration.

Both engines take the propagators as plain callables ``(state, m) ->
PhaseState`` where ``m`` is the 0-based window index, so scripted
propagators can be tested against hand-executed traces; the ``parareal_*``
wrappers bind potential-driven window propagation with a shared noise plan
(fine and coarse consume the same seed for the same window, at every
iteration).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .integrator import BlowUpError, TemperatureSchedule, propagate_window
from .model import LangevinParams, NodeTrajectory, PhaseState
from .potentials import Potential, PropagatorPair
from .rng import NoisePlan

WindowPropagator = Callable[[PhaseState, int], PhaseState]


class DegenerateNormalizationError(ValueError):
    """The relative-error denominator vanished (all reference positions zero)."""


class SlabCollapseError(RuntimeError):
    """An adaptive slab shortened to zero windows."""

    def __init__(self, message: str, slab_index: int, n_init: int):
        super().__init__(message)
        self.slab_index = slab_index
        self.n_init = n_init


@dataclass(frozen=True)
class PararealConfig:
    """Run parameters shared by both engines.

    ``delta_expl`` is only consulted by the adaptive engine and must then
    exceed ``delta_conv``.  ``k_max`` caps the iterations of any single
    attempt; the default ``n_windows + 1`` sits one beyond the worst-case
    exact-arithmetic convergence count, so it only triggers when
    ``delta_conv`` is below what roundoff can deliver.
    """

    n_windows: int
    delta_conv: float
    delta_expl: float | None = None
    k_max: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.n_windows, int) or self.n_windows < 1:
            raise ValueError(f"n_windows must be a positive integer, got {self.n_windows}")
        if not (np.isfinite(self.delta_conv) and self.delta_conv > 0.0):
            raise ValueError(f"delta_conv must be positive and finite, got {self.delta_conv}")
        if self.delta_expl is not None and not self.delta_expl > self.delta_conv:
            raise ValueError(
                f"delta_expl ({self.delta_expl}) must exceed delta_conv ({self.delta_conv})"
            )
        if self.k_max is not None and (not isinstance(self.k_max, int) or self.k_max < 1):
            raise ValueError(f"k_max must be a positive integer, got {self.k_max}")

    @property
    def iteration_cap(self) -> int:
        return self.k_max if self.k_max is not None else self.n_windows + 1


class SlabAttempt(NamedTuple):
    n_final: int
    iterations: int


@dataclass(frozen=True)
class SlabRecord:
    """Bookkeeping for one adaptive time-slab.

    ``attempts`` lists the successive slab endpoints tried (first one is the
    full remaining range) with the iterations spent on each; the last entry
    is the endpoint that converged.
    """

    slab_index: int
    n_init: int
    attempts: tuple[SlabAttempt, ...]
    n_final: int
    k_conv: int

    def __post_init__(self) -> None:
        attempts = tuple(SlabAttempt(int(a[0]), int(a[1])) for a in self.attempts)
        object.__setattr__(self, "attempts", attempts)
        if self.slab_index < 1:
            raise ValueError(f"slab_index must be >= 1, got {self.slab_index}")
        if not attempts:
            raise ValueError("a slab record needs at least one attempt")
        if not 0 <= self.n_init < self.n_final:
            raise ValueError(
                f"slab range [{self.n_init}, {self.n_final}] must be non-empty"
            )
        for a, b in zip(attempts, attempts[1:]):
            if b.n_final > a.n_final:
                raise ValueError("attempt endpoints must be non-increasing")
        if attempts[-1].n_final != self.n_final:
            raise ValueError(
                f"last attempt ends at {attempts[-1].n_final}, slab at {self.n_final}"
            )
        if any(a.iterations < 1 for a in attempts):
            raise ValueError("every attempt must count at least one iteration")
        if sum(a.iterations for a in attempts) != self.k_conv:
            raise ValueError("k_conv must equal the sum of attempt iterations")

    @property
    def width(self) -> int:
        return self.n_final - self.n_init


@dataclass(frozen=True)
class PararealResult:
    """Outcome of a parareal run.

    ``error_history`` holds (slab index, iteration within the slab, error)
    triples: one entry per sweep for the classic engine, one per node update
    for the adaptive engine.  ``iterates`` optionally keeps the trajectory
    after the bootstrap and after every sweep (classic engine only).
    """

    trajectory: NodeTrajectory
    slabs: tuple[SlabRecord, ...]
    error_history: tuple[tuple[int, int, float], ...]
    converged: bool
    iterates: tuple[NodeTrajectory, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "slabs", tuple(self.slabs))
        object.__setattr__(
            self,
            "error_history",
            tuple((int(s), int(k), float(e)) for s, k, e in self.error_history),
        )
        if self.iterates is not None:
            object.__setattr__(self, "iterates", tuple(self.iterates))
        if not self.slabs:
            raise ValueError("a result needs at least one slab record")
        if self.slabs[0].n_init != 0:
            raise ValueError("the first slab must start at window 0")
        for i, slab in enumerate(self.slabs):
            if slab.slab_index != i + 1:
                raise ValueError("slab indices must run 1..n_slab in order")
        for a, b in zip(self.slabs, self.slabs[1:]):
            if b.n_init != a.n_final:
                raise ValueError(
                    f"slabs must tile the window range: {a.n_final} != {b.n_init}"
                )
        if self.converged and self.slabs[-1].n_final != self.trajectory.n_windows:
            raise ValueError("a converged result must cover every window")

    @property
    def n_slab(self) -> int:
        return len(self.slabs)

    @property
    def total_iterations(self) -> int:
        return sum(slab.k_conv for slab in self.slabs)


def _accumulate(num: float, den: float, prev_state: PhaseState, cur_state: PhaseState):
    num += float(np.linalg.norm(cur_state.q - prev_state.q))
    den += float(np.linalg.norm(prev_state.q))
    return num, den


def relative_error(a, b, n_init: int, n_final: int) -> float:
    """Relative position error of iterate ``b`` against iterate ``a``.

    Sums one Euclidean norm per node over ``max(n_init, 1) .. n_final``:
    sum |b_n - a_n| over sum |a_n|.  Node 0 never enters (it is the shared
    initial condition); momenta never enter.
    """
    if n_init < 0:
        raise ValueError(f"n_init must be >= 0, got {n_init}")
    if n_final < max(n_init, 1):
        raise ValueError(
            f"n_final must be >= max(n_init, 1), got n_init={n_init}, n_final={n_final}"
        )
    if n_final >= len(a) or n_final >= len(b):
        raise IndexError(
            f"node {n_final} out of range for trajectories of {len(a)} and {len(b)} nodes"
        )
    num, den = 0.0, 0.0
    for n in range(max(n_init, 1), n_final + 1):
        num, den = _accumulate(num, den, a[n], b[n])
    if den == 0.0:
        raise DegenerateNormalizationError(
            f"all reference positions on nodes {max(n_init, 1)}..{n_final} are zero"
        )
    return num / den


def _attach_context(err: BlowUpError, window: int, iteration: int) -> None:
    if err.window is None:
        err.window = window
    if err.iteration is None:
        err.iteration = iteration


def _call(prop: WindowPropagator, state: PhaseState, m: int, iteration: int) -> PhaseState:
    try:
        return prop(state, m)
    except BlowUpError as err:
        _attach_context(err, window=m + 1, iteration=iteration)
        raise


def sequential_propagate(
    initial: PhaseState,
    n_windows: int,
    pot: Potential,
    params: LangevinParams,
    schedule: TemperatureSchedule,
    plan: NoisePlan,
) -> NodeTrajectory:
    """Chain ``n_windows`` fine windows; node n+1 uses the plan's seed n+1."""
    if n_windows < 0:
        raise ValueError(f"n_windows must be >= 0, got {n_windows}")
    if plan.n_windows < n_windows:
        raise ValueError(
            f"noise plan covers {plan.n_windows} windows, need {n_windows}"
        )
    states = [initial]
    for m in range(n_windows):
        try:
            states.append(
                propagate_window(states[m], pot, params, schedule, plan.seed_for(m + 1))
            )
        except BlowUpError as err:
            _attach_context(err, window=m + 1, iteration=0)
            raise
    return NodeTrajectory(tuple(states))


def _compute_jumps(fine, coarse, states, window_indices, iteration, workers):
    """Jump terms fine(state) - coarse(state), one per window, order-stable.

    Dispatch order never affects values: each jump is a pure function of its
    own window's state and results are gathered by index.
    """

    def one(m: int):
        f = _call(fine, states[m], m, iteration)
        c = _call(coarse, states[m], m, iteration)
        return f.q - c.q, f.p - c.p

    ms = list(window_indices)
    if workers is not None and workers > 1 and len(ms) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, ms))
    return [one(m) for m in ms]


def _corrected(coarse, state, m, iteration, jump):
    base = _call(coarse, state, m, iteration)
    jump_q, jump_p = jump
    try:
        return PhaseState(q=base.q + jump_q, p=base.p + jump_p)
    except ValueError as err:
        raise BlowUpError(
            f"corrected state is not finite at window {m + 1} (iteration {iteration})",
            window=m + 1,
            iteration=iteration,
        ) from err


def _close_attempt(attempts, n_init, n_final, iterations):
    width = n_final - n_init
    if iterations > width + 1:
        warnings.warn(
            f"slab [{n_init}, {n_final}] needed {iterations} iterations, beyond "
            f"the width + 1 = {width + 1} exact-arithmetic bound; delta_conv may "
            "be below roundoff",
            RuntimeWarning,
            stacklevel=3,
        )
    attempts.append(SlabAttempt(n_final=n_final, iterations=iterations))


def parareal_classic_engine(
    initial: PhaseState,
    fine: WindowPropagator,
    coarse: WindowPropagator,
    config: PararealConfig,
    workers: int | None = None,
    record_iterates: bool = False,
) -> PararealResult:
    """Classic parareal over ``config.n_windows`` windows.

    Stops when the post-sweep relative error drops below ``delta_conv``, or
    after ``iteration_cap`` sweeps (then ``converged`` is false).
    """
    n = config.n_windows
    cur: list[PhaseState] = [initial]
    for m in range(n):
        cur.append(_call(coarse, cur[m], m, 0))
    iterates = [NodeTrajectory(tuple(cur))] if record_iterates else None
    history: list[tuple[int, int, float]] = []
    k = 0
    delta = 2.0 * config.delta_conv
    while delta >= config.delta_conv:
        if k >= config.iteration_cap:
            break
        k += 1
        prev = list(cur)
        jumps = _compute_jumps(fine, coarse, prev, range(n), k, workers)
        num, den = 0.0, 0.0
        for m in range(n):
            cur[m + 1] = _corrected(coarse, cur[m], m, k, jumps[m])
            num, den = _accumulate(num, den, prev[m + 1], cur[m + 1])
        if den == 0.0:
            raise DegenerateNormalizationError(
                f"all reference positions on nodes 1..{n} are zero"
            )
        delta = num / den
        history.append((1, k, delta))
        if record_iterates:
            iterates.append(NodeTrajectory(tuple(cur)))
    attempts: list[SlabAttempt] = []
    _close_attempt(attempts, 0, n, k)
    slab = SlabRecord(slab_index=1, n_init=0, attempts=tuple(attempts), n_final=n, k_conv=k)
    return PararealResult(
        trajectory=NodeTrajectory(tuple(cur)),
        slabs=(slab,),
        error_history=tuple(history),
        converged=delta < config.delta_conv,
        iterates=tuple(iterates) if record_iterates else None,
    )


def parareal_adaptive_engine(
    initial: PhaseState,
    fine: WindowPropagator,
    coarse: WindowPropagator,
    config: PararealConfig,
    workers: int | None = None,
) -> PararealResult:
    """Adaptive slab-shortening parareal.

    The running error is re-evaluated after every node of the corrected
    sweep; crossing ``delta_expl`` truncates the slab just before the node
    that crossed and iteration resumes on the shortened slab without a new
    bootstrap.  Converged slabs hand their endpoint to the next slab's
    bootstrap.  ``iteration_cap`` applies per attempt.
    """
    if config.delta_expl is None:
        raise ValueError("adaptive mode needs delta_expl in the configuration")
    n = config.n_windows
    conv, expl = config.delta_conv, config.delta_expl
    mid = 0.5 * (conv + expl)

    cur: list[PhaseState] = [initial] + [None] * n  # type: ignore[list-item]
    n_init = 0
    n_final = 0
    delta = mid
    n_slab = 0
    slabs: list[SlabRecord] = []
    history: list[tuple[int, int, float]] = []
    attempts: list[SlabAttempt] = []
    k_in_slab = 0
    converged = True

    while n_final < n:
        if delta < expl:
            # previous slab converged (or nothing ran yet): open a new slab
            # on the whole remaining range and bootstrap it coarsely
            n_init = n_final
            n_final = n
            for m in range(n_init, n):
                cur[m + 1] = _call(coarse, cur[m], m, 0)
            n_slab += 1
            attempts = []
            k_in_slab = 0
        delta = mid
        k_attempt = 0
        aborted = False
        while conv <= delta <= expl:
            if k_attempt >= config.iteration_cap:
                aborted = True
                break
            prev = list(cur)
            jumps = _compute_jumps(
                fine, coarse, prev, range(n_init, n_final), k_in_slab + 1, workers
            )
            k_attempt += 1
            k_in_slab += 1
            num, den = 0.0, 0.0
            if n_init >= 1:
                num, den = _accumulate(num, den, prev[n_init], cur[n_init])
            for m in range(n_init, n_final):
                cur[m + 1] = _corrected(coarse, cur[m], m, k_in_slab, jumps[m - n_init])
                num, den = _accumulate(num, den, prev[m + 1], cur[m + 1])
                if den == 0.0:
                    raise DegenerateNormalizationError(
                        f"all reference positions on nodes "
                        f"{max(n_init, 1)}..{m + 1} are zero"
                    )
                delta = num / den
                history.append((n_slab, k_in_slab, delta))
                if delta > expl:
                    if m == n_init:
                        raise SlabCollapseError(
                            f"slab {n_slab} exploded at its first window "
                            f"{n_init + 1}; no shorter slab exists",
                            slab_index=n_slab,
                            n_init=n_init,
                        )
                    _close_attempt(attempts, n_init, n_final, k_attempt)
                    n_final = m
                    break
        if aborted:
            _close_attempt(attempts, n_init, n_final, k_attempt)
            slabs.append(
                SlabRecord(
                    slab_index=n_slab,
                    n_init=n_init,
                    attempts=tuple(attempts),
                    n_final=n_final,
                    k_conv=sum(a.iterations for a in attempts),
                )
            )
            converged = False
            break
        if delta < conv:
            _close_attempt(attempts, n_init, n_final, k_attempt)
            slabs.append(
                SlabRecord(
                    slab_index=n_slab,
                    n_init=n_init,
                    attempts=tuple(attempts),
                    n_final=n_final,
                    k_conv=sum(a.iterations for a in attempts),
                )
            )
    return PararealResult(
        trajectory=NodeTrajectory(tuple(cur)),
        slabs=tuple(slabs),
        error_history=tuple(history),
        converged=converged,
    )


def _window_propagator(pot, params, schedule, plan) -> WindowPropagator:
    def propagate(state: PhaseState, m: int) -> PhaseState:
        return propagate_window(state, pot, params, schedule, plan.seed_for(m + 1))

    return propagate


def _check_plan(plan: NoisePlan, n_windows: int) -> None:
    if plan.n_windows < n_windows:
        raise ValueError(f"noise plan covers {plan.n_windows} windows, need {n_windows}")


def parareal_classic(
    initial: PhaseState,
    pair: PropagatorPair,
    params: LangevinParams,
    schedule: TemperatureSchedule,
    plan: NoisePlan,
    config: PararealConfig,
    workers: int | None = None,
    record_iterates: bool = False,
) -> PararealResult:
    """Classic parareal on a potential pair under a shared noise plan."""
    _check_plan(plan, config.n_windows)
    return parareal_classic_engine(
        initial,
        _window_propagator(pair.fine, params, schedule, plan),
        _window_propagator(pair.coarse, params, schedule, plan),
        config,
        workers=workers,
        record_iterates=record_iterates,
    )


def parareal_adaptive(
    initial: PhaseState,
    pair: PropagatorPair,
    params: LangevinParams,
    schedule: TemperatureSchedule,
    plan: NoisePlan,
    config: PararealConfig,
    workers: int | None = None,
) -> PararealResult:
    """Adaptive parareal on a potential pair under a shared noise plan."""
    _check_plan(plan, config.n_windows)
    return parareal_adaptive_engine(
        initial,
        _window_propagator(pair.fine, params, schedule, plan),
        _window_propagator(pair.coarse, params, schedule, plan),
        config,
        workers=workers,
    )
