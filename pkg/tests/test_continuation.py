import math

import numpy as np
import pytest

import graphpde.continuation as cont
from graphpde import discretize, from_template, make_context, nls_problem
from graphpde.continuation import (ContinuationError, ContinuationOptions,
                                   beta_metric, continue_branch, corrector,
                                   nls_system)


def circle_system():
    return cont.ContinuationSystem(
        residual=lambda u, lam: np.array([u[0] ** 2 + lam**2 - 1.0]),
        jacobian=lambda u, lam: np.array([[2.0 * u[0]]]),
        dlam=lambda u, lam: np.array([2.0 * lam]),
    )


def pitchfork_system():
    return cont.ContinuationSystem(
        residual=lambda u, lam: np.array([lam * u[0] - u[0] ** 3]),
        jacobian=lambda u, lam: np.array([[lam - 3.0 * u[0] ** 2]]),
        dlam=lambda u, lam: np.array([u[0]]),
    )


def dumbbell_setup():
    g = from_template("dumbbell")
    b = discretize(g, "uniform")
    problem = nls_problem(b)
    ctx = make_context(b)
    return b, nls_system(problem, ctx)


def quiet_opts(**kw):
    base = dict(verbose_flag=False, save_flag=False)
    base.update(kw)
    return ContinuationOptions(**base)


def test_options_validation():
    with pytest.raises(ValueError):
        ContinuationOptions(max_theta=95.0)
    with pytest.raises(ValueError):
        ContinuationOptions(min_norm_delta=0.0)
    with pytest.raises(ValueError):
        ContinuationOptions(beta=-0.1)
    with pytest.raises(ValueError):
        ContinuationOptions(max_points=1)


def test_beta_metric_values():
    sys_ = circle_system()
    u = np.array([2.0])
    assert beta_metric(sys_, u, 3.0, u, 3.0, 0.1) == pytest.approx(4.0 + 0.9)
    z = np.array([0.0])
    assert beta_metric(sys_, z, 2.0, z, 2.0, 0.1) == pytest.approx(0.4)
    assert beta_metric(sys_, u, 0.0, np.array([0.0]), 5.0, 0.1) == 0.0


def test_corrector_lands_on_circle():
    sys_ = circle_system()
    opts = quiet_opts(beta=1.0)
    t_u, t_lam = np.array([0.0]), 1.0
    u, lam, sign = corrector(sys_, opts, np.array([0.995]), 0.1, t_u, t_lam)
    assert abs(u[0] ** 2 + lam**2 - 1.0) < 1e-10
    assert abs(lam - 0.1) < 0.02  # stays near the anchor plane


def test_corrector_failure_reported():
    sys_ = cont.ContinuationSystem(
        residual=lambda u, lam: np.array([u[0] ** 2 + 1.0]),  # no real solution
        jacobian=lambda u, lam: np.array([[2.0 * u[0]]]),
        dlam=lambda u, lam: np.array([0.0]),
    )
    with pytest.raises(cont.CorrectorError):
        corrector(sys_, quiet_opts(beta=1.0, max_newton=8),
                  np.array([1.0]), 0.0, np.array([1.0]), 0.0)


def test_circle_oracle_passes_folds():
    opts = quiet_opts(ds=0.1, max_points=150, n_thresh=1e9, lambda_thresh=-5.0,
                      min_norm_delta=1e-6, beta=1.0)
    branch = continue_branch(circle_system(), np.array([1.0]), 0.0,
                             np.array([0.0]), 1.0, opts)
    us = np.array([p.psi[0] for p in branch.points])
    ls = branch.lambdas
    assert np.max(np.abs(us**2 + ls**2 - 1.0)) <= 1e-10
    swept = np.abs(np.diff(np.unwrap(np.arctan2(ls, us)))).sum()
    assert swept > 1.5 * math.pi  # more than 3/4 of the circle
    folds = [p for p in branch.points if p.bif_type == -1]
    assert len(folds) >= 2
    for p in folds:
        assert abs(abs(p.lam) - 1.0) < 0.1
    assert not [p for p in branch.points if p.bif_type == 1]


def test_pitchfork_oracle_branch_point():
    opts = quiet_opts(ds=0.07, max_points=60, n_thresh=1e9, lambda_thresh=1.0,
                      min_norm_delta=1e-7, beta=1.0)
    branch = continue_branch(pitchfork_system(), np.array([0.0]), -1.0,
                             np.array([0.0]), 1.0, opts)
    bps = [(i, p) for i, p in enumerate(branch.points) if p.bif_type == 1]
    assert len(bps) == 1
    idx, bp = bps[0]
    assert abs(bp.lam) <= 1e-8
    assert idx in branch.perturbations
    # stepping terminated by the lambda threshold crossing
    assert branch.provenance["termination"] == "lambda_thresh"


def test_max_points_contract():
    opts = quiet_opts(ds=0.05, max_points=5, n_thresh=1e9, lambda_thresh=-99.0,
                      beta=1.0, min_norm_delta=1e-8)
    branch = continue_branch(circle_system(), np.array([1.0]), 0.0,
                             np.array([0.0]), 1.0, opts)
    assert len(branch.points) == 5
    assert np.all(branch.bif_types == 0)


def test_tangents_are_beta_unit():
    opts = quiet_opts(ds=0.1, max_points=30, n_thresh=1e9, lambda_thresh=-5.0,
                      beta=0.37)
    sys_ = circle_system()
    branch = continue_branch(sys_, np.array([1.0]), 0.0, np.array([0.0]), 1.0, opts)
    for p in branch.points:
        n = beta_metric(sys_, p.tangent_psi, p.tangent_lam,
                        p.tangent_psi, p.tangent_lam, 0.37)
        assert abs(math.sqrt(n) - 1.0) < 1e-10


def test_turn_angles_bounded():
    opts = quiet_opts(ds=0.2, max_points=60, n_thresh=1e9, lambda_thresh=-5.0,
                      beta=1.0, max_theta=8.0)
    sys_ = circle_system()
    branch = continue_branch(sys_, np.array([1.0]), 0.0, np.array([0.0]), 1.0, opts)
    pts = branch.points
    for a, b in zip(pts[1:-1], pts[2:]):
        if a.bif_type == 1 or b.bif_type == 1:
            continue
        c = beta_metric(sys_, a.tangent_psi, a.tangent_lam,
                        b.tangent_psi, b.tangent_lam, 1.0)
        assert math.degrees(math.acos(min(1.0, max(-1.0, c)))) <= 8.0 + 1e-6


def test_dumbbell_constant_branch_and_pitchfork():
    b, sys_ = dumbbell_setup()
    run = None
    opts = quiet_opts(ds=0.05)
    v = np.full(b.n_ext, 1.0)
    v /= math.sqrt(sys_.inner(v, v))
    a = 1e-2
    lam_seed = -2.0 * a**2 * sys_.inner(v**3, v) / sys_.inner(v, v)
    branch = continue_branch(sys_, a * v, lam_seed, v, 0.0, opts)
    dev = max(np.max(np.abs(p.psi - math.sqrt(max(-p.lam, 0.0) / 2)))
              for p in branch.points)
    assert dev <= 1e-8
    from graphpde import eigs
    lam2 = float(np.real(eigs(b, 2)[0][1]))
    bps = [p for p in branch.points if p.bif_type == 1]
    assert bps and abs(bps[0].lam - lam2 / 2) < 1e-3


def test_run_persistence_round_trip(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    assert (run / "template.json").exists()
    assert (run / "logfile.txt").exists()
    cont.save_eigenfunctions(run, b, 3)

    opts = quiet_opts(ds=0.05, max_points=8)
    branch = cont.continue_from_eig(run, sys_, 1, 1e-2, opts)
    bid = cont.save_branch(run, branch, b)
    loaded = cont.load_branch(run, bid, b)
    assert len(loaded.points) == len(branch.points)
    for p, q in zip(branch.points, loaded.points):
        assert p.lam == q.lam and p.mass == q.mass and p.energy == q.energy
        assert p.bif_type == q.bif_type and p.tangent_lam == q.tangent_lam
        assert np.array_equal(p.psi, q.psi)
        assert np.array_equal(p.tangent_psi, q.tangent_psi)
    assert loaded.provenance["kind"] == "eigenfunction"
    assert loaded.options.ds == opts.ds


def test_stale_layout_rejected(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    other = discretize(from_template("dumbbell", nx=11), "uniform")
    with pytest.raises(cont.StaleLayoutError):
        cont.check_run_layout(run, other)


def test_full_dumbbell_workflow(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    cont.save_eigenfunctions(run, b, 4)
    opts = quiet_opts(ds=0.05, save_flag=True)
    branch = cont.continue_from_eig(run, sys_, 1, 1e-2, opts)
    bid = 1
    bps = [i for i, p in enumerate(branch.points) if p.bif_type == 1]
    assert bps
    leg_opts = quiet_opts(ds=0.05, max_points=12, save_flag=True)
    leg_p = cont.continue_from_branch_point(run, sys_, bid, bps[0], +1, leg_opts)
    leg_m = cont.continue_from_branch_point(run, sys_, bid, bps[0], -1, leg_opts)
    k = min(len(leg_p.points), len(leg_m.points))
    assert np.max(np.abs(leg_p.masses[:k] - leg_m.masses[:k])) <= 1e-6
    # every accepted point satisfies the stationary equations
    for br in (branch, leg_p, leg_m):
        for p in br.points:
            res = sys_.residual(p.psi, p.lam)
            assert np.linalg.norm(res, np.inf) <= br.options.newton_tol * 10
    # psi is genuinely nonconstant off the primary branch
    tail = leg_p.points[-1].psi
    assert np.max(np.abs(tail - np.mean(tail))) > 1e-4

    diagram = cont.bifurcation_diagram(run)
    assert set(diagram) == {1, 2, 3}
    table = diagram[1]
    assert np.allclose(table[:, 0], branch.lambdas)
    assert np.allclose(table[:, 1], branch.masses)
    # branch 1 carries the constant solution: N = (-lambda/2) * weighted length
    W = b.graph.weighted_length()
    assert np.allclose(table[:, 1], (-table[:, 0] / 2.0) * W, atol=1e-8)
    # energy axis recomputation consistency
    diagram_e = cont.bifurcation_diagram(run, axes=("lambda", "energy"))
    for k_pt, p in enumerate(branch.points):
        recomputed = sys_.energy(p.psi, p.lam)
        assert abs(diagram_e[1][k_pt, 1] - recomputed) < 1e-12 * max(1.0, abs(recomputed))

    log = (run / "logfile.txt").read_text()
    assert "branch point located" in log


def test_continue_from_end_appends(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    cont.save_eigenfunctions(run, b, 2)
    opts = quiet_opts(ds=0.05, max_points=5, save_flag=True)
    branch = cont.continue_from_eig(run, sys_, 1, 1e-2, opts)
    assert len(branch.points) == 5
    more = quiet_opts(ds=0.05, max_points=9, save_flag=True)
    extended = cont.continue_from_end(run, sys_, 1, more)
    assert len(extended.points) == 9
    lams = extended.lambdas
    assert np.array_equal(lams[:5], branch.lambdas)
    assert np.all(np.diff(lams) < 0)  # keeps marching down in frequency
    reloaded = cont.load_branch(run, 1, b)
    assert len(reloaded.points) == 9


def test_continue_from_saved(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    lam0 = -0.35
    psi0 = np.full(b.n_ext, math.sqrt(-lam0 / 2))
    name = cont.save_standing_wave(run, b, psi0, lam0)
    opts = quiet_opts(ds=0.05, max_points=6, save_flag=True)
    branch = cont.continue_from_saved(run, sys_, name, opts, direction=-1.0)
    assert len(branch.points) == 6
    assert branch.points[1].lam < lam0  # moved in the requested direction
    dev = max(np.max(np.abs(p.psi - math.sqrt(-p.lam / 2))) for p in branch.points)
    assert dev <= 1e-8


def test_missing_artifacts_raise(tmp_path):
    b, sys_ = dumbbell_setup()
    run = cont.create_run(tmp_path, "dumbbell", b)
    with pytest.raises(Exception):
        cont.continue_from_eig(run, sys_, 1, 1e-2, quiet_opts())
    with pytest.raises(ContinuationError):
        cont.load_branch(run, 7, b)
