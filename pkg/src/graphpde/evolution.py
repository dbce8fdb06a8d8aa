"""Time integration on the discretized graph, constraints in every solve.

All steppers advance ``psi_t = mu * Lap(psi) + f(psi)`` (or the second-order
wave analogue) by solving square systems whose last 2|E| rows are the
vertex conditions, so every produced state satisfies them to solver
accuracy.  One factorization per (scheme, tau) is built and reused for the
whole run.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .discretize import OperatorBundle
from .functionals import FunctionalContext, energy_nls, integral, mass, momentum


class EvolutionError(RuntimeError):
    pass


@dataclass(eq=False)
class EvolutionProblem:
    """Scheme-independent run data: coefficients, step size, output sampling."""

    bundle: OperatorBundle
    mu: complex = 1.0
    f: Callable | None = None
    tau: float = 1e-2
    t_final: float = 1.0
    n_skip: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise EvolutionError("tau must be positive")
        if self.n_skip < 1:
            raise EvolutionError("n_skip must be >= 1")
        if self.t_final <= 0:
            raise EvolutionError("t_final must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_final / self.tau))


def _check_initial(problem: EvolutionProblem, u0: np.ndarray) -> np.ndarray:
    u0 = np.asarray(u0)
    if u0.shape != (problem.bundle.n_ext,):
        raise EvolutionError(
            f"initial state length {u0.shape} != n_ext ({problem.bundle.n_ext})")
    defect = np.linalg.norm(problem.bundle.vc_rows @ u0, np.inf)
    if defect > 1e-8:
        warnings.warn(f"initial state violates the vertex conditions by {defect:.2e}",
                      stacklevel=3)
    return u0


class _Sampler:
    """Keeps every n_skip-th step plus the final step unconditionally."""

    def __init__(self, problem, u0):
        self.n_skip = problem.n_skip
        self.tau = problem.tau
        self.times = [0.0]
        self.states = [np.array(u0)]

    def push(self, step_index, u, final=False):
        if step_index % self.n_skip == 0 or final:
            t = step_index * self.tau
            if self.times and self.times[-1] == t:
                return
            self.times.append(t)
            self.states.append(np.array(u))

    def result(self):
        return np.array(self.times), np.column_stack(self.states)


def crank_nicolson_heat(problem: EvolutionProblem, u0) -> tuple[np.ndarray, np.ndarray]:
    """Crank-Nicolson for the heat equation (f ignored; mu absorbed into L)."""
    b = problem.bundle
    u = _check_initial(problem, u0)
    tau, mu = problem.tau, problem.mu
    minus = linalg.factorize(b.interp_vc - (0.5 * tau * mu) * b.lap_zero)
    plus = b.interp_zero + (0.5 * tau * mu) * b.lap_zero
    out = _Sampler(problem, u)
    n = problem.n_steps
    for k in range(1, n + 1):
        u = minus.solve(plus @ u)
        out.push(k, u, final=(k == n))
    return out.result()


def leapfrog_klein_gordon(problem: EvolutionProblem, g: Callable, u0, v0
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Leapfrog for psi_tt = Lap(psi) - g(psi) with initial velocity v0.

    The first step uses the O(tau^2) initializer; the run aborts if the
    state grows by a factor 1e6 (instability detector).
    """
    b = problem.bundle
    u0 = _check_initial(problem, u0)
    v0 = np.asarray(v0)
    tau = problem.tau
    fact = linalg.factorize(b.interp_vc)
    scale0 = max(1.0, np.linalg.norm(u0, np.inf))
    out = _Sampler(problem, u0)
    n = problem.n_steps
    u_prev = u0
    u = fact.solve(b.interp_zero @ (u0 + tau * v0 - 0.5 * tau**2 * g(u0))
                   + 0.5 * tau**2 * (b.lap_zero @ u0))
    out.push(1, u, final=(n == 1))
    for k in range(2, n + 1):
        u_next = fact.solve(b.interp_zero @ (2.0 * u - u_prev - tau**2 * g(u))
                            + tau**2 * (b.lap_zero @ u))
        u_prev, u = u, u_next
        if np.linalg.norm(u, np.inf) > 1e6 * scale0:
            raise EvolutionError(f"leapfrog unstable at step {k} "
                                 f"(state grew past 1e6 x initial)")
        out.push(k, u, final=(k == n))
    return out.result()


def _nonlinearity(problem: EvolutionProblem):
    if problem.f is None:
        return lambda u: 0.0 * u
    return problem.f


def imex_euler(problem: EvolutionProblem, u0) -> tuple[np.ndarray, np.ndarray]:
    """Forward-backward Euler: stiff Laplacian implicit, nonlinearity explicit."""
    b = problem.bundle
    u = _check_initial(problem, u0)
    tau, mu = problem.tau, problem.mu
    f = _nonlinearity(problem)
    u = u.astype(np.result_type(u.dtype, type(mu * 1.0), np.asarray(f(u)).dtype))
    fact = linalg.factorize(b.interp_vc - (tau * mu) * b.lap_vc)
    out = _Sampler(problem, u)
    n = problem.n_steps
    for k in range(1, n + 1):
        u = fact.solve(b.interp_zero @ (u + tau * f(u)))
        out.push(k, u, final=(k == n))
    return out.result()


# Ascher-Ruuth-Spiteri (4,4,3): four implicit stages with a common diagonal
# gamma = 1/2, five explicit levels, stiffly accurate (u_{n+1} = U_4).
_SDIRK443_GAMMA = 0.5
_SDIRK443_A_IM = np.array([
    [1 / 2, 0, 0, 0],
    [1 / 6, 1 / 2, 0, 0],
    [-1 / 2, 1 / 2, 1 / 2, 0],
    [3 / 2, -3 / 2, 1 / 2, 1 / 2],
])
_SDIRK443_A_EX = np.array([
    [1 / 2, 0, 0, 0],
    [11 / 18, 1 / 18, 0, 0],
    [5 / 6, -5 / 6, 1 / 2, 0],
    [1 / 4, 7 / 4, 3 / 4, -7 / 4],
])


def sdirk443(problem: EvolutionProblem, u0) -> tuple[np.ndarray, np.ndarray]:
    """Third-order four-stage IMEX Runge-Kutta stepper.

    Each stage solves (interp_vc - gamma tau mu lap_vc) U = interp_zero *
    (explicit accumulation) + implicit stage history, reusing a single
    factorization.
    """
    b = problem.bundle
    u = _check_initial(problem, u0)
    tau, mu = problem.tau, problem.mu
    f = _nonlinearity(problem)
    u = u.astype(np.result_type(u.dtype, type(mu * 1.0), np.asarray(f(u)).dtype))
    fact = linalg.factorize(b.interp_vc - (_SDIRK443_GAMMA * tau * mu) * b.lap_vc)
    out = _Sampler(problem, u)
    n = problem.n_steps
    for k in range(1, n + 1):
        fs = [f(u)]            # explicit values at stage levels 0..3
        ks = []                # lap_zero @ U_i for implicit history
        for i in range(4):
            rhs = u + tau * sum(_SDIRK443_A_EX[i, j] * fs[j] for j in range(i + 1))
            rhs = b.interp_zero @ rhs
            for j in range(i):
                rhs = rhs + (tau * mu * _SDIRK443_A_IM[i, j]) * ks[j]
            stage = fact.solve(rhs)
            ks.append(b.lap_zero @ stage)
            if i < 3:
                fs.append(f(stage))
        u = stage
        out.push(k, u, final=(k == n))
    return out.result()


# ---------------------------------------------------------------------------

_QUANTITIES = ("mass", "energy", "momentum", "total_heat")


def conservation_trace(ctx: FunctionalContext, times, states,
                       quantities: Sequence[str] = ("mass",), *,
                       sigma: float = 1.0, momentum_orientations=None) -> dict:
    """Evaluate conserved quantities on sampled states and their relative drift.

    Returns {"times": t, name: values, name + "_drift": |q - q0| / scale}
    with scale = |q0| (or 1 if q0 vanishes).
    """
    for q in quantities:
        if q not in _QUANTITIES:
            raise EvolutionError(f"unknown quantity {q!r}; pick from {_QUANTITIES}")
    states = np.asarray(states)
    table: dict[str, np.ndarray] = {"times": np.asarray(times, dtype=float)}
    for name in quantities:
        vals = np.empty(states.shape[1])
        for j in range(states.shape[1]):
            u = states[:, j]
            if name == "mass":
                vals[j] = mass(ctx, u)
            elif name == "energy":
                vals[j] = energy_nls(ctx, u, sigma)
            elif name == "momentum":
                vals[j] = momentum(ctx, u, momentum_orientations)
            else:
                vals[j] = np.real(integral(ctx, u))
        scale = abs(vals[0]) if abs(vals[0]) > 0 else 1.0
        table[name] = vals
        table[name + "_drift"] = np.abs(vals - vals[0]) / scale
    return table
