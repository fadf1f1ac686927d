"""Implicit-midpoint transient driver with a damped Newton inner solver.

The stabilization weights gamma / gamma_tilde are refreshed from the current
iterate before every Jacobian build and frozen within the iteration, so the
converged state satisfies the fully implicit stabilized step; convergence is
always measured on the self-consistent (refreshed-weight) residual.

The LU factorization is reused across iterations and consecutive steps
(modified Newton) and refreshed whenever the observed contraction is poor;
this does not change converged states within the solver tolerance.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .linalg import LUSolver
from .system import MHDSystem, SystemState


class NewtonError(Exception):
    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {['%.3e' % r for r in history]}")
        self.history = history


@dataclass
class TimeGrid:
    """Uniform time grid on (0, T]; N dt = T exactly."""

    T: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        self.n_steps = max(1, int(round(self.T / self.dt)))
        self.dt = self.T / self.n_steps

    @classmethod
    def from_formula(cls, T: float, h: float, k: int) -> "TimeGrid":
        """Convergence-study rule dt = (1/10) h^((k+1)/2)."""
        return cls(T=T, dt=0.1 * h ** ((k + 1) / 2.0))


def _newton_loop(system: MHDSystem, state_old: SystemState, dt, steady: bool,
                 tol_rel: float, tol_abs: float, max_iter: int, max_damping: int,
                 initial=None) -> SystemState:
    t_new = state_old.t if steady else state_old.t + dt
    x = system.pack(initial if initial is not None else state_old)
    state = system.unpack(x.copy(), t_new)
    r = system.residual(state, state_old, dt, steady=steady)
    norm = np.linalg.norm(r)
    tol = max(tol_rel * norm, tol_abs)
    history = [norm]
    if norm <= tol_abs:
        system.shift_to_zero_mean(state)
        state.n_newton = 0
        return state

    fresh = False
    for _ in range(max_iter):
        if system._lu is None:
            u_m = state.u if steady else 0.5 * (state_old.u + state.u)
            B_m = state.B if steady else 0.5 * (state_old.B + state.B)
            w = system.stab_weights(u_m, B_m)
            system._lu = LUSolver(system.jacobian(state, state_old, dt, w, steady=steady))
            fresh = True
        dx = system._lu.solve(-r)

        # damped line search on the self-consistent residual
        step, accepted = 1.0, None
        for _ in range(max_damping + 1):
            s_try = system.unpack(x + step * dx, t_new)
            r_try = system.residual(s_try, state_old, dt, steady=steady)
            n_try = np.linalg.norm(r_try)
            if np.isfinite(n_try) and n_try < norm:
                accepted = (x + step * dx, s_try, r_try, n_try)
                break
            step *= 0.5
        if accepted is None:
            if not fresh:
                system._lu = None  # stale factorization: rebuild and retry
                continue
            raise NewtonError("Newton step failed to reduce the residual", history)

        x, state, r, norm = accepted
        history.append(norm)
        if norm <= tol:
            system.shift_to_zero_mean(state)
            state.n_newton = len(history) - 1
            return state
        # modest contraction with a stale factorization: refresh next iteration
        if not fresh and (norm > 0.05 * history[-2] or len(history) > 6):
            system._lu = None
        fresh = False
    raise NewtonError(f"Newton failed to reach {tol:.3e} in {max_iter} iterations", history)


def newton_solve(system: MHDSystem, state_old: SystemState, dt: float,
                 tol_rel: float = 1e-10, tol_abs: float = 1e-12,
                 max_iter: int = 30, max_damping: int = 8) -> SystemState:
    """Solve one implicit-midpoint step; initial guess is the old state."""
    return _newton_loop(system, state_old, dt, False, tol_rel, tol_abs,
                        max_iter, max_damping)


def steady_solve(system: MHDSystem, initial: SystemState,
                 tol_rel: float = 1e-10, tol_abs: float = 1e-12,
                 max_iter: int = 50, max_damping: int = 8) -> SystemState:
    """Damped Newton on the stationary system (no time-derivative terms)."""
    system._lu = None
    try:
        return _newton_loop(system, initial, None, True, tol_rel, tol_abs,
                            max_iter, max_damping, initial=initial)
    finally:
        system._lu = None


def run_transient(system: MHDSystem, grid: TimeGrid,
                  observers: Iterable[Callable] = (),
                  store_states: bool = False,
                  initial_state: Optional[SystemState] = None,
                  on_step: Optional[Callable] = None):
    """Integrate over (0, T], calling every observer at each time node.

    Observers are callables (system, step_index, state) -> dict of scalars;
    their outputs are merged into one record per node (including t = 0).
    Returns (records, states, final_state); states is empty unless
    ``store_states``.
    """
    system._lu = None
    state = initial_state if initial_state is not None else system.initial_state()
    records = []
    states = [state.copy()] if store_states else []

    def record(i, s):
        row = {"step": i, "t": s.t, "newton_iters": s.n_newton}
        for obs in observers:
            row.update(obs(system, i, s))
        records.append(row)

    record(0, state)
    for i in range(1, grid.n_steps + 1):
        try:
            state = newton_solve(system, state, grid.dt)
        except NewtonError as exc:
            raise NewtonError(f"step {i} (t={state.t + grid.dt:.4g}) failed", exc.history) from exc
        if store_states:
            states.append(state.copy())
        record(i, state)
        if on_step is not None:
            on_step(i, state)
    return records, states, state


def pseudo_time_to_steady(system: MHDSystem, dt: float, tol: float = 1e-10,
                          max_steps: int = 2000,
                          initial_state: Optional[SystemState] = None):
    """March the transient system until the increment per unit time drops
    below ``tol`` (stationary scenarios)."""
    system._lu = None
    state = initial_state if initial_state is not None else system.initial_state()
    M = system.M
    for _ in range(max_steps):
        new = newton_solve(system, state, dt)
        du = new.u - state.u
        dB = new.B - state.B
        rate = np.sqrt(du @ (M @ du) + dB @ (M @ dB)) / dt
        state = new
        if rate < tol:
            return state
    return state
