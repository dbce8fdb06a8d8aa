import math
import warnings

import numpy as np
import pytest

from graphpde import (DIRICHLET, apply_function_to_edges, build_graph,
                      conservation_trace, crank_nicolson_heat, discretize, eigs,
                      from_template, imex_euler, leapfrog_klein_gordon,
                      make_context, sdirk443)
from graphpde import evolution as evo
from graphpde import linalg
from graphpde.evolution import EvolutionError, EvolutionProblem


def _forward_euler(problem, u0):
    """Order-check oracle: explicit Laplacian, tiny steps only."""
    b = problem.bundle
    fact = linalg.factorize(b.interp_vc)
    f = problem.f or (lambda u: 0.0 * u)
    u = np.asarray(u0, dtype=complex if np.iscomplexobj(u0) else float)
    n = problem.n_steps
    for _ in range(n):
        rhs = b.interp_zero @ (u + problem.tau * f(u)) \
            + (problem.tau * problem.mu) * (b.lap_zero @ u)
        u = fact.solve(rhs)
    return u


def _backward_euler(problem, u0):
    """Order-check oracle: fully implicit via lagged fixed-point iterations."""
    b = problem.bundle
    fact = linalg.factorize(b.interp_vc - (problem.tau * problem.mu) * b.lap_vc)
    f = problem.f or (lambda u: 0.0 * u)
    u = np.asarray(u0, dtype=float)
    for _ in range(problem.n_steps):
        new = u
        for _ in range(50):
            prev = new
            new = fact.solve(b.interp_zero @ (u + problem.tau * f(new)))
            if np.max(np.abs(new - prev)) < 1e-13:
                break
        u = new
    return u


def dirichlet_interval(nx=40):
    g = build_graph([1], [2], math.pi, robin_coeffs=[DIRICHLET, DIRICHLET], nx=nx)
    return discretize(g, "uniform")


def test_problem_validation():
    b = dirichlet_interval(10)
    with pytest.raises(EvolutionError):
        EvolutionProblem(b, tau=-0.1)
    with pytest.raises(EvolutionError):
        EvolutionProblem(b, n_skip=0)
    p = EvolutionProblem(b, tau=0.1, t_final=1.0)
    with pytest.raises(EvolutionError):
        crank_nicolson_heat(p, np.ones(3))


def test_initial_constraint_warning():
    b = dirichlet_interval(10)
    p = EvolutionProblem(b, tau=0.1, t_final=0.2)
    with pytest.warns(UserWarning, match="vertex conditions"):
        crank_nicolson_heat(p, np.ones(b.n_ext))


def test_cn_constant_fixed_point():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    p = EvolutionProblem(b, tau=0.05, t_final=1.0)
    t, s = crank_nicolson_heat(p, np.full(b.n_ext, 3.0))
    assert np.max(np.abs(s - 3.0)) < 1e-12


def test_cn_heat_conservation_dumbbell():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    u0 = apply_function_to_edges(
        b, [lambda x: 2 - 2 * np.cos(x - math.pi / 3), 1.0, np.cos])
    p = EvolutionProblem(b, tau=0.01, t_final=10.0, n_skip=100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t, s = crank_nicolson_heat(p, u0)
    ctx = make_context(b)
    tr = conservation_trace(ctx, t, s, ["total_heat"])
    assert tr["total_heat_drift"].max() <= 1e-10


def test_cn_decay_rate_matches_heat_kernel():
    b = dirichlet_interval(80)
    u0 = apply_function_to_edges(b, [np.sin])
    tau = 0.01
    p = EvolutionProblem(b, tau=tau, t_final=1.0, n_skip=10 ** 9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t, s = crank_nicolson_heat(p, u0)
    mid = s[:, -1][np.argmax(u0)]
    assert abs(mid - math.exp(-1.0)) < 5e-4  # O(tau^2 + h^2)


def test_cn_exact_amplification_on_discrete_eigenvector():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    lam, vecs = eigs(b, 3)
    lv = float(np.real(lam[1]))
    v = np.real(vecs[:, 1])
    for _ in range(2):  # polish so the eigenpair limit is not the bottleneck
        f = linalg.factorize((b.lap_vc - (lv + 1e-9) * b.interp_zero).tocsc())
        v = f.solve(b.interp_zero @ v)
        v /= np.linalg.norm(v)
    tau = 0.05
    p = EvolutionProblem(b, tau=tau, t_final=5 * tau, n_skip=1)
    t, s = crank_nicolson_heat(p, v)
    growth = (1 + 0.5 * tau * lv) / (1 - 0.5 * tau * lv)
    pred = v.copy()
    for j in range(1, s.shape[1]):
        pred = growth * pred
        assert np.max(np.abs(s[:, j] - pred)) < 1e-12


def test_leapfrog_constant_state():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    p = EvolutionProblem(b, tau=0.02, t_final=1.0)
    t, s = leapfrog_klein_gordon(p, lambda u: 0.0 * u,
                                 np.full(b.n_ext, 2.0), np.zeros(b.n_ext))
    assert np.max(np.abs(s - 2.0)) < 1e-12


def test_leapfrog_instability_detector():
    b = dirichlet_interval(50)
    u0 = apply_function_to_edges(b, [np.sin])
    p = EvolutionProblem(b, tau=1.0, t_final=50.0)  # violates CFL wildly
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EvolutionError, match="unstable"):
            leapfrog_klein_gordon(p, np.sin, u0, np.zeros(b.n_ext))


def test_imex_euler_invariant_constant():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    p = EvolutionProblem(b, mu=1.0, tau=0.1, t_final=1.0)
    t, s = imex_euler(p, np.full(b.n_ext, 1.5))
    assert np.max(np.abs(s - 1.5)) < 1e-12


def test_imex_euler_heat_first_order():
    b = dirichlet_interval(60)
    u0 = apply_function_to_edges(b, [np.sin])
    exact_decay = math.exp(-1.0)
    errs = []
    for tau in (0.02, 0.01):
        p = EvolutionProblem(b, tau=tau, t_final=1.0, n_skip=10 ** 9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t, s = imex_euler(p, u0)
        errs.append(abs(np.max(s[:, -1]) - exact_decay))
    assert 1.8 <= errs[0] / errs[1] <= 2.2


def test_imex_euler_schroedinger_mass_drift():
    g = from_template("ring", nx=40)
    b = discretize(g, "uniform")
    x = b.grid.x_ext[0]
    u0 = np.exp(1j * x)  # plane wave on the ring
    tau = 1e-5
    p = EvolutionProblem(b, mu=-1j, tau=tau, t_final=100 * tau, n_skip=10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t, s = imex_euler(p, u0)
    ctx = make_context(b)
    tr = conservation_trace(ctx, t, s, ["mass"])
    assert tr["mass_drift"].max() <= 1e-8


def test_order_ratios_all_steppers():
    b = dirichlet_interval(40)
    u0 = apply_function_to_edges(b, [np.sin])
    f = lambda u: u - u**3

    def final(stepper, tau, **kw):
        p = EvolutionProblem(b, mu=1.0, f=f, tau=tau, t_final=0.5, n_skip=10 ** 9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t, s = stepper(p, u0, **kw)
        return s[:, -1]

    taus = (0.02, 0.01, 0.005)
    for stepper, expected, tol in ((imex_euler, 2.0, 0.2), (sdirk443, 8.0, 2.0)):
        u = [final(stepper, tau) for tau in taus]
        ratio = np.linalg.norm(u[0] - u[1]) / np.linalg.norm(u[1] - u[2])
        assert abs(ratio - expected) <= tol

    # CN (heat, f ignored) and leapfrog (wave) are second order
    u = []
    for tau in taus:
        p = EvolutionProblem(b, tau=tau, t_final=0.5, n_skip=10 ** 9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u.append(crank_nicolson_heat(p, u0)[1][:, -1])
    ratio = np.linalg.norm(u[0] - u[1]) / np.linalg.norm(u[1] - u[2])
    assert abs(ratio - 4.0) <= 0.5

    u = []
    for tau in taus:
        p = EvolutionProblem(b, tau=tau, t_final=0.5, n_skip=10 ** 9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u.append(leapfrog_klein_gordon(p, np.sin, u0,
                                           np.zeros(b.n_ext))[1][:, -1])
    ratio = np.linalg.norm(u[0] - u[1]) / np.linalg.norm(u[1] - u[2])
    assert abs(ratio - 4.0) <= 0.5


def test_euler_oracles_bracket_imex():
    # forward and backward Euler converge to the same flow from both sides
    b = dirichlet_interval(30)
    u0 = apply_function_to_edges(b, [np.sin])
    f = lambda u: 0.5 * u
    ref = None
    for tau in (1e-3, 5e-4):
        p = EvolutionProblem(b, mu=1.0, f=f, tau=tau, t_final=0.1, n_skip=10 ** 9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fe = _forward_euler(p, u0)
            be = _backward_euler(p, u0)
            im = imex_euler(p, u0)[1][:, -1]
        spread = max(np.max(np.abs(fe - im)), np.max(np.abs(be - im)))
        if ref is not None:
            assert spread < 0.6 * ref  # first-order shrinkage
        ref = spread


def test_constraint_manifold_preserved_all_steppers():
    g = from_template("Y", nx=12)
    b = discretize(g, "uniform")
    u0 = apply_function_to_edges(
        b, [lambda x: np.sin(math.pi * x / 1.5), lambda x: np.sin(math.pi * x),
            lambda x: np.sin(math.pi * x)])
    runs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = EvolutionProblem(b, tau=0.01, t_final=0.2)
        runs.append(crank_nicolson_heat(p, u0)[1])
        runs.append(imex_euler(p, u0)[1])
        runs.append(sdirk443(p, u0)[1])
        runs.append(leapfrog_klein_gordon(p, np.sin, u0, np.zeros(b.n_ext))[1])
    for s in runs:
        for j in range(1, s.shape[1]):
            assert np.linalg.norm(b.vc_rows @ s[:, j], np.inf) <= 1e-8


def test_factorization_reuse(monkeypatch):
    calls = []
    original = linalg.factorize

    def counting(A):
        calls.append(A.shape)
        return original(A)

    monkeypatch.setattr(evo.linalg, "factorize", counting)
    b = dirichlet_interval(20)
    u0 = apply_function_to_edges(b, [np.sin])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = EvolutionProblem(b, tau=0.01, t_final=0.5)
        crank_nicolson_heat(p, u0)
        assert len(calls) == 1
        sdirk443(p, u0)
        assert len(calls) == 2  # still one factorization per run
        imex_euler(p, u0)
        assert len(calls) == 3


def test_sampler_decimation_and_final_step():
    b = dirichlet_interval(10)
    u0 = apply_function_to_edges(b, [np.sin])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = EvolutionProblem(b, tau=0.01, t_final=0.25, n_skip=10)
        t, s = crank_nicolson_heat(p, u0)
    assert t[0] == 0.0 and np.isclose(t[-1], 0.25)
    assert np.allclose(np.diff(t)[:-1], 0.1)
    assert s.shape[1] == len(t)


def test_conservation_trace_zero_state():
    b = dirichlet_interval(10)
    ctx = make_context(b)
    states = np.zeros((b.n_ext, 3))
    tr = conservation_trace(ctx, [0.0, 0.1, 0.2], states,
                            ["mass", "energy", "momentum", "total_heat"])
    for q in ("mass", "energy", "momentum", "total_heat"):
        assert np.all(tr[q] == 0.0)
        assert np.all(tr[q + "_drift"] == 0.0)
    with pytest.raises(EvolutionError, match="unknown quantity"):
        conservation_trace(ctx, [0.0], np.zeros((b.n_ext, 1)), ["vorticity"])
