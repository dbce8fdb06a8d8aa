"""Pseudo-arclength continuation with bifurcation detection and persistence.

Branches of solutions of F(u, lambda) = 0 are traced with a secant
predictor and a Newton corrector on the bordered system

    F(u, lambda) = 0,
    <u - u_pred, t_u> + beta (lambda - lambda_pred) t_lambda = 0,

where <.,.> is the problem's inner product and (t_u, t_lambda) the current
unit tangent in the beta-metric.  The step length halves when the
corrector fails or the turn angle exceeds maxTheta, and grows by 1.3x
(capped at 8x the initial step) when the turn angle stays below
maxTheta/2.

Two determinant signs are monitored at every accepted point: branch
points flip the sign of the bordered Jacobian determinant and are
localized by bisection in pseudo-arclength; folds flip the sign of
d(lambda)/ds without a bordered sign change and are tagged at the nearer
point.  Simultaneous events resolve as branch points.
"""
from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import linalg
from .discretize import OperatorBundle, load_state_csv, save_state_csv
from .functionals import FunctionalContext, energy_nls, inner_product, mass
from .graphs import graph_config, graph_hash
from .stationary import NLSProblem, nls_jacobian, nls_residual


class ContinuationError(RuntimeError):
    pass


class CorrectorError(ContinuationError):
    pass


class CodimensionTwoError(ContinuationError):
    pass


class StaleLayoutError(ContinuationError):
    pass


@dataclass
class ContinuationOptions:
    """Step control, thresholds, and bookkeeping flags.

    max_theta is the largest allowed turn angle between consecutive branch
    segments, in degrees.  beta weights the frequency component in the
    inner product used for angles and distances.  The branch terminates
    when the mass crosses n_thresh, the frequency crosses lambda_thresh,
    max_points is reached, or the step falls below min_norm_delta.
    """

    max_theta: float = 4.0
    min_norm_delta: float = 1e-3
    beta: float = 0.1
    n_thresh: float = 4.0
    lambda_thresh: float = -1.0
    max_points: int = 999
    save_flag: bool = True
    plot_flag: bool = True
    verbose_flag: bool = True
    ds: float = 0.1
    newton_tol: float = 1e-10
    max_newton: int = 25

    def __post_init__(self):
        if not 0.0 < self.max_theta < 90.0:
            raise ValueError("max_theta must lie in (0, 90) degrees")
        if self.min_norm_delta <= 0:
            raise ValueError("min_norm_delta must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.max_points < 2:
            raise ValueError("max_points must be at least 2")
        if self.ds <= 0 or self.newton_tol <= 0:
            raise ValueError("ds and newton_tol must be positive")


@dataclass
class BranchPoint:
    """One accepted solution with its conserved quantities and unit tangent."""

    psi: np.ndarray
    lam: float
    mass: float
    energy: float
    bif_type: int = 0  # 0 regular, 1 branch point, -1 fold
    tangent_psi: np.ndarray | None = None
    tangent_lam: float = 0.0


@dataclass
class Branch:
    points: list[BranchPoint]
    provenance: dict
    options: ContinuationOptions
    perturbations: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def masses(self) -> np.ndarray:
        return np.array([p.mass for p in self.points])

    @property
    def energies(self) -> np.ndarray:
        return np.array([p.energy for p in self.points])

    @property
    def bif_types(self) -> np.ndarray:
        return np.array([p.bif_type for p in self.points], dtype=int)


# ---------------------------------------------------------------------------
# problem interface

@dataclass(eq=False)
class ContinuationSystem:
    """Minimal interface continuation needs from a parameterized problem.

    inner must be symmetric positive (the beta-metric base);
    inner_gradient(v) returns the row vector r with r @ x == inner(x, v).
    """

    residual: Callable
    jacobian: Callable
    dlam: Callable
    inner: Callable = None
    inner_gradient: Callable = None
    mass: Callable = None
    energy: Callable = None

    def __post_init__(self):
        if self.inner is None:
            self.inner = lambda u, v: float(np.dot(u, v))
        if self.inner_gradient is None:
            self.inner_gradient = lambda v: np.asarray(v, dtype=float)
        if self.mass is None:
            self.mass = lambda u: self.inner(u, u)
        if self.energy is None:
            self.energy = lambda u, lam: 0.0


def nls_system(problem: NLSProblem, ctx: FunctionalContext) -> ContinuationSystem:
    """Continuation system for real standing waves of the stationary NLS."""
    b = problem.bundle

    sys = ContinuationSystem(
        residual=lambda u, lam: nls_residual(problem, u, lam),
        jacobian=lambda u, lam: nls_jacobian(problem, u, lam),
        dlam=lambda u, lam: b.interp_zero @ u,
        inner=lambda u, v: float(np.real(inner_product(ctx, u, v))),
        inner_gradient=lambda v: ctx.q * np.asarray(v, dtype=float),
        mass=lambda u: mass(ctx, u),
        energy=lambda u, lam: energy_nls(ctx, u, problem.sigma),
    )
    sys.problem = problem
    sys.ctx = ctx
    sys.bundle = b
    return sys


def beta_metric(sys: ContinuationSystem, u1, lam1, u2, lam2, beta: float) -> float:
    """<u1, u2> + beta lam1 lam2: the inner product behind angles and distances."""
    return sys.inner(u1, u2) + beta * lam1 * lam2


def _beta_norm(sys, du, dlam, beta):
    return math.sqrt(max(beta_metric(sys, du, dlam, du, dlam, beta), 0.0))


def _normalized(sys, du, dlam, beta):
    n = _beta_norm(sys, du, dlam, beta)
    if n == 0.0:
        raise ContinuationError("cannot normalize a zero tangent")
    return du / n, dlam / n


def _bordered_matrix(J, col, row, corner):
    if sp.issparse(J):
        col = sp.csc_matrix(np.asarray(col).reshape(-1, 1))
        row = sp.csc_matrix(np.asarray(row).reshape(1, -1))
        return sp.bmat([[J, col], [row, sp.csc_matrix([[corner]])]], format="csc")
    n = J.shape[0]
    M = np.empty((n + 1, n + 1))
    M[:n, :n] = J
    M[:n, n] = col
    M[n, :n] = row
    M[n, n] = corner
    return M


def _bordered_factor(sys, u, lam, t_u, t_lam, beta):
    M = _bordered_matrix(sys.jacobian(u, lam), sys.dlam(u, lam),
                         sys.inner_gradient(t_u), beta * t_lam)
    return linalg.factorize(M)


def corrector(sys: ContinuationSystem, opts: ContinuationOptions,
              u_pred, lam_pred, t_u, t_lam):
    """Newton on the bordered system anchored at the predicted point.

    Returns (u, lambda, bordered determinant sign at the solution).
    """
    u = np.array(u_pred, dtype=float)
    lam = float(lam_pred)
    row = sys.inner_gradient(t_u)
    corner = opts.beta * t_lam
    for _ in range(opts.max_newton):
        F = sys.residual(u, lam)
        g = sys.inner(u - u_pred, t_u) + opts.beta * (lam - lam_pred) * t_lam
        if max(np.linalg.norm(F, np.inf), abs(g)) <= opts.newton_tol:
            fact = _bordered_factor(sys, u, lam, t_u, t_lam, opts.beta)
            return u, lam, fact.det_sign
        M = _bordered_matrix(sys.jacobian(u, lam), sys.dlam(u, lam), row, corner)
        try:
            step = linalg.solve(M, np.concatenate([F, [g]]))
        except linalg.SingularMatrixError as exc:
            raise CorrectorError(f"singular bordered system: {exc}") from exc
        u = u - step[:-1]
        lam = lam - step[-1]
        if not np.all(np.isfinite(u)) or not math.isfinite(lam):
            raise CorrectorError("corrector diverged")
    raise CorrectorError(f"corrector did not converge in {opts.max_newton} steps")


def newton_fixed_lambda(sys: ContinuationSystem, u0, lam, tol=1e-10, max_iter=50):
    """Plain Newton at fixed parameter value (seed polishing)."""
    u = np.array(u0, dtype=float)
    for _ in range(max_iter):
        F = sys.residual(u, lam)
        if np.linalg.norm(F, np.inf) <= tol:
            return u
        u = u - linalg.solve(sys.jacobian(u, lam), F)
    F = sys.residual(u, lam)
    if np.linalg.norm(F, np.inf) <= tol:
        return u
    raise CorrectorError("fixed-parameter Newton did not converge")


def tangent_at(sys: ContinuationSystem, u, lam, guess_u, guess_lam, beta):
    """Branch tangent from the bordered solve, oriented along the guess."""
    M = _bordered_matrix(sys.jacobian(u, lam), sys.dlam(u, lam),
                         sys.inner_gradient(guess_u), beta * guess_lam)
    rhs = np.zeros(M.shape[0])
    rhs[-1] = 1.0
    t = linalg.solve(M, rhs)
    t_u, t_lam = _normalized(sys, t[:-1], t[-1], beta)
    if beta_metric(sys, t_u, t_lam, guess_u, guess_lam, beta) < 0:
        t_u, t_lam = -t_u, -t_lam
    return t_u, t_lam


def _unbordered_sign(sys, u, lam):
    return linalg.factorize(sys.jacobian(u, lam)).det_sign


def _make_point(sys, u, lam, t_u, t_lam, bif_type=0):
    return BranchPoint(np.array(u), float(lam), sys.mass(u),
                       sys.energy(u, lam), bif_type, np.array(t_u), float(t_lam))


def null_vector(sys: ContinuationSystem, u, lam, *, check_codimension=True):
    """Unit null vector of the (unbordered) Jacobian by inverse iteration."""
    try:
        fact = linalg.factorize(sys.jacobian(u, lam))
    except linalg.SingularMatrixError:
        fact = linalg.factorize(sys.jacobian(u, lam + 1e-10 * (1.0 + abs(lam))))
    n = np.asarray(u).size
    rng = np.random.default_rng(4242)
    v = rng.standard_normal(n)
    for _ in range(5):
        v = fact.solve(v)
        v = v / math.sqrt(max(sys.inner(v, v), 1e-300))
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    if check_codimension and n > 1:
        # deflated inverse iteration: a second near-null direction means the
        # bifurcation has codimension two or higher
        J = sys.jacobian(u, lam)
        w = rng.standard_normal(n)
        for _ in range(5):
            w = w - v * (sys.inner(v, w) / sys.inner(v, v))
            w = fact.solve(w)
            w = w / math.sqrt(max(sys.inner(w, w), 1e-300))
        w = w - v * (sys.inner(v, w) / sys.inner(v, v))
        nw = math.sqrt(max(sys.inner(w, w), 1e-300))
        if nw > 1e-8:
            w = w / nw
            jw = np.linalg.norm(J @ w, np.inf)
            jv = np.linalg.norm(J @ v, np.inf)
            if jw <= 10.0 * max(jv, 1e-12):
                raise CodimensionTwoError(
                    "Jacobian null space at the bifurcation has dimension > 1; "
                    "codimension-two branching is not supported")
    return v


def locate_branch_point(sys: ContinuationSystem, opts: ContinuationOptions,
                        a: BranchPoint, b: BranchPoint):
    """Bisection in pseudo-arclength on the bordered determinant sign.

    Returns (u*, lambda*, null vector) with the bracket beta-width reduced
    to 1e-8.
    """
    t_u, t_lam = _normalized(sys, b.psi - a.psi, b.lam - a.lam, opts.beta)
    ua, la = np.array(a.psi), a.lam
    ub, lb = np.array(b.psi), b.lam

    def sign_at(u, lam):
        return _bordered_factor(sys, u, lam, t_u, t_lam, opts.beta).det_sign

    sa = sign_at(ua, la)
    sb = sign_at(ub, lb)
    if sa == sb:
        raise ContinuationError("bordered determinant does not change sign "
                                "across the detection bracket")
    for _ in range(90):
        if _beta_norm(sys, ub - ua, lb - la, opts.beta) <= 1e-8:
            break
        corrected = None
        for s in (0.5, 0.45, 0.55):
            try:
                corrected = corrector(sys, opts, ua + s * (ub - ua),
                                      la + s * (lb - la), t_u, t_lam)
                break
            except CorrectorError:
                continue
        if corrected is None:
            raise ContinuationError("corrector failed during bifurcation bisection")
        um, lm, sm = corrected
        if sm == sa:
            ua, la = um, lm
        else:
            ub, lb = um, lm
    else:
        raise ContinuationError("bifurcation bisection exceeded its budget")
    u_star = 0.5 * (ua + ub)
    lam_star = 0.5 * (la + lb)
    v = null_vector(sys, u_star, lam_star)
    return u_star, lam_star, v


# ---------------------------------------------------------------------------
# main driver

def _log(run_dir, message):
    if run_dir is None:
        return
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(Path(run_dir) / "logfile.txt", "a") as fh:
        fh.write(f"{stamp}  {message}\n")


def _run_continuation(sys, opts, points, prev_dir, *, run_dir=None, label=""):
    """Advance a branch from its last point; points is extended in place."""
    ds = opts.ds
    ds_cap = 8.0 * opts.ds
    last = points[-1]
    try:
        prev_bordered = _bordered_factor(sys, last.psi, last.lam,
                                         *prev_dir, opts.beta).det_sign
        prev_unbordered = _unbordered_sign(sys, last.psi, last.lam)
    except linalg.SingularMatrixError:
        prev_bordered = None
        prev_unbordered = None
    perturbations: dict[int, np.ndarray] = {}
    termination = "max_points"
    first_step = True
    # thresholds fire when the branch crosses them, not when it starts beyond
    mass_side = math.copysign(1.0, last.mass - opts.n_thresh) if last.mass != opts.n_thresh else 0.0
    lam_side = math.copysign(1.0, last.lam - opts.lambda_thresh) if last.lam != opts.lambda_thresh else 0.0

    def note(msg):
        if opts.verbose_flag:
            print(f"[continuation{label}] {msg}")
        _log(run_dir, f"branch{label}: {msg}")

    while len(points) < opts.max_points:
        pred_u = last.psi + ds * prev_dir[0]
        pred_lam = last.lam + ds * prev_dir[1]
        try:
            u, lam, bsign = corrector(sys, opts, pred_u, pred_lam, *prev_dir)
        except CorrectorError:
            ds *= 0.5
            if ds < opts.min_norm_delta:
                termination = "step below min_norm_delta"
                break
            continue
        du, dlam = u - last.psi, lam - last.lam
        step_len = _beta_norm(sys, du, dlam, opts.beta)
        if step_len < 1e-14:
            ds *= 0.5
            if ds < opts.min_norm_delta:
                termination = "step below min_norm_delta"
                break
            continue
        new_dir = (du / step_len, dlam / step_len)
        cosang = np.clip(beta_metric(sys, *new_dir, *prev_dir, opts.beta), -1.0, 1.0)
        angle = math.degrees(math.acos(cosang))
        if not first_step and angle > opts.max_theta:
            ds *= 0.5
            if ds < opts.min_norm_delta:
                termination = "step below min_norm_delta"
                break
            continue

        point = _make_point(sys, u, lam, *new_dir)
        usign = _unbordered_sign(sys, u, lam)

        if prev_bordered is not None and bsign != prev_bordered:
            try:
                u_star, lam_star, v = locate_branch_point(sys, opts, last, point)
                eps = 1e-2 * math.sqrt(max(sys.inner(u_star, u_star), 0.0)) + 1e-3
                bp = _make_point(sys, u_star, lam_star, *new_dir, bif_type=1)
                points.append(bp)
                perturbations[len(points) - 1] = eps * v
                note(f"branch point located at lambda={lam_star:.8g}")
            except CodimensionTwoError:
                raise
            except ContinuationError as exc:
                note(f"bifurcation localization failed: {exc}")
        elif (prev_bordered is not None
              and last.tangent_lam * new_dir[1] < 0.0):
            fold_at = point if abs(new_dir[1]) <= abs(last.tangent_lam) else last
            fold_at.bif_type = -1
            note(f"fold tagged at lambda={fold_at.lam:.8g}")

        points.append(point)
        if opts.verbose_flag:
            print(f"[continuation{label}] point {len(points) - 1}: "
                  f"lambda={lam:.6g} N={point.mass:.6g} ds={ds:.3g}")
        prev_bordered, prev_unbordered = bsign, usign
        last = point
        prev_dir = new_dir
        first_step = False
        if angle < 0.5 * opts.max_theta:
            ds = min(1.3 * ds, ds_cap)
        new_mass_side = math.copysign(1.0, point.mass - opts.n_thresh) \
            if point.mass != opts.n_thresh else 0.0
        new_lam_side = math.copysign(1.0, point.lam - opts.lambda_thresh) \
            if point.lam != opts.lambda_thresh else 0.0
        if mass_side != 0.0 and new_mass_side == -mass_side:
            termination = "n_thresh"
            break
        if lam_side != 0.0 and new_lam_side == -lam_side:
            termination = "lambda_thresh"
            break
        mass_side = mass_side or new_mass_side
        lam_side = lam_side or new_lam_side
    else:
        termination = "max_points"
    note(f"finished with {len(points)} points ({termination})")
    return perturbations, termination


def continue_branch(sys: ContinuationSystem, seed_u, seed_lam,
                    tangent_u, tangent_lam, opts: ContinuationOptions | None = None,
                    *, provenance=None, run_dir=None) -> Branch:
    """Trace a branch from a converged seed point and an initial direction."""
    opts = opts or ContinuationOptions()
    t_u, t_lam = _normalized(sys, np.asarray(tangent_u, dtype=float),
                             float(tangent_lam), opts.beta)
    seed_u = newton_fixed_lambda(sys, seed_u, seed_lam, opts.newton_tol)
    points = [_make_point(sys, seed_u, seed_lam, t_u, t_lam)]
    perturbations, termination = _run_continuation(
        sys, opts, points, (t_u, t_lam), run_dir=run_dir)
    prov = dict(provenance or {"kind": "seed"})
    prov["termination"] = termination
    return Branch(points, prov, opts, perturbations)


# ---------------------------------------------------------------------------
# run directories and persistence

def bundle_hash(bundle: OperatorBundle) -> str:
    payload = json.dumps({
        "graph": graph_hash(bundle.graph),
        "scheme": bundle.scheme,
        "n": [int(v) for v in bundle.grid.n],
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def create_run(base, tag: str, bundle: OperatorBundle) -> Path:
    """Create data/<tag>/<run id>/ with template.json and a fresh log."""
    root = Path(base) / tag
    root.mkdir(parents=True, exist_ok=True)
    run_id = 1
    while (root / f"{run_id:03d}").exists():
        run_id += 1
    run_dir = root / f"{run_id:03d}"
    run_dir.mkdir()
    template = {
        "tag": tag,
        "scheme": bundle.scheme,
        "graph": graph_config(bundle.graph),
        "n_per_edge": [int(v) for v in bundle.grid.n],
        "hash": bundle_hash(bundle),
    }
    _atomic_write_text(run_dir / "template.json", json.dumps(template, indent=1))
    _log(run_dir, f"created run {tag}/{run_dir.name}")
    return run_dir


def check_run_layout(run_dir, bundle: OperatorBundle) -> None:
    meta = json.loads((Path(run_dir) / "template.json").read_text())
    if meta["hash"] != bundle_hash(bundle):
        raise StaleLayoutError(
            f"run directory {run_dir} was created for a different discretization "
            f"({meta['hash']} != {bundle_hash(bundle)})")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_scalar_csv(path: Path, values, fmt="%.17g") -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for v in values:
            fh.write((fmt % v) + "\n")
    os.replace(tmp, path)


def save_eigenfunctions(run_dir, bundle: OperatorBundle, count: int,
                        sigma: float = 1e-2):
    """Compute and persist seed eigenpairs under <run>/eigenfunctions/."""
    from .stationary import eigs as _eigs

    check_run_layout(run_dir, bundle)
    lam, vecs = _eigs(bundle, count, sigma=sigma)
    edir = Path(run_dir) / "eigenfunctions"
    edir.mkdir(exist_ok=True)
    _write_scalar_csv(edir / "eigenvalues.csv", np.real(lam))
    for j in range(count):
        save_state_csv(bundle, np.real(vecs[:, j]), edir / f"eigenfunction_{j + 1:03d}.csv")
    _log(run_dir, f"saved {count} eigenfunctions")
    return lam, vecs


def save_standing_wave(run_dir, bundle: OperatorBundle, psi, lam: float,
                       name: str | None = None) -> str:
    """Persist one standing wave under <run>/saved/ for continue_from_saved."""
    check_run_layout(run_dir, bundle)
    sdir = Path(run_dir) / "saved"
    sdir.mkdir(exist_ok=True)
    if name is None:
        k = 1
        while (sdir / f"wave_{k:03d}_psi.csv").exists():
            k += 1
        name = f"wave_{k:03d}"
    save_state_csv(bundle, psi, sdir / f"{name}_psi.csv")
    _write_scalar_csv(sdir / f"{name}_lambda.csv", [lam])
    _log(run_dir, f"saved standing wave {name} at lambda={lam:.8g}")
    return name


def _branch_dir(run_dir, branch_id: int) -> Path:
    return Path(run_dir) / f"branch{branch_id:03d}"


def next_branch_id(run_dir) -> int:
    k = 1
    while _branch_dir(run_dir, k).exists():
        k += 1
    return k


def save_branch(run_dir, branch: Branch, bundle: OperatorBundle,
                branch_id: int | None = None) -> int:
    """Write a branch directory (atomically: staged then renamed)."""
    check_run_layout(run_dir, bundle)
    if branch_id is None:
        branch_id = next_branch_id(run_dir)
    final = _branch_dir(run_dir, branch_id)
    stage = final.with_name(final.name + ".stage")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    _write_scalar_csv(stage / "lambda.csv", branch.lambdas)
    _write_scalar_csv(stage / "mass.csv", branch.masses)
    _write_scalar_csv(stage / "energy.csv", branch.energies)
    _write_scalar_csv(stage / "biftype.csv", branch.bif_types, fmt="%d")
    _write_scalar_csv(stage / "lambda_dot.csv",
                      [p.tangent_lam for p in branch.points])
    for k, p in enumerate(branch.points, start=1):
        save_state_csv(bundle, p.psi, stage / f"psi_{k:04d}.csv")
        save_state_csv(bundle, p.tangent_psi, stage / f"tangent_{k:04d}.csv")
    for idx, pert in branch.perturbations.items():
        save_state_csv(bundle, pert, stage / f"perturbation_{idx + 1:04d}.csv")
    _atomic_write_text(stage / "options.json", json.dumps(asdict(branch.options), indent=1))
    _atomic_write_text(stage / "provenance.json", json.dumps(branch.provenance, indent=1))
    if final.exists():
        shutil.rmtree(final)
    os.replace(stage, final)
    _log(run_dir, f"saved branch{branch_id:03d} ({len(branch.points)} points)")
    return branch_id


def load_branch(run_dir, branch_id: int, bundle: OperatorBundle) -> Branch:
    check_run_layout(run_dir, bundle)
    bdir = _branch_dir(run_dir, branch_id)
    if not bdir.exists():
        raise ContinuationError(f"no branch directory {bdir}")
    lams = np.loadtxt(bdir / "lambda.csv", ndmin=1)
    masses = np.loadtxt(bdir / "mass.csv", ndmin=1)
    energies = np.loadtxt(bdir / "energy.csv", ndmin=1)
    bif = np.loadtxt(bdir / "biftype.csv", dtype=int, ndmin=1)
    lamdot = np.loadtxt(bdir / "lambda_dot.csv", ndmin=1)
    options = ContinuationOptions(**json.loads((bdir / "options.json").read_text()))
    provenance = json.loads((bdir / "provenance.json").read_text())
    points = []
    for k in range(len(lams)):
        psi = np.real(load_state_csv(bundle, bdir / f"psi_{k + 1:04d}.csv"))
        tpsi = np.real(load_state_csv(bundle, bdir / f"tangent_{k + 1:04d}.csv"))
        points.append(BranchPoint(psi, float(lams[k]), float(masses[k]),
                                  float(energies[k]), int(bif[k]), tpsi,
                                  float(lamdot[k])))
    perturbations = {}
    for f in sorted(bdir.glob("perturbation_*.csv")):
        idx = int(f.stem.split("_")[1]) - 1
        perturbations[idx] = np.real(load_state_csv(bundle, f))
    return Branch(points, provenance, options, perturbations)


def list_branches(run_dir) -> list[int]:
    out = []
    for d in sorted(Path(run_dir).glob("branch[0-9][0-9][0-9]")):
        out.append(int(d.name[-3:]))
    return out


# ---------------------------------------------------------------------------
# the four initializers

def continue_from_eig(run_dir, sys: ContinuationSystem, index: int,
                      amplitude: float = 1e-2,
                      opts: ContinuationOptions | None = None) -> Branch:
    """Branch bifurcating from zero along the index-th saved eigenfunction."""
    opts = opts or ContinuationOptions()
    bundle = sys.bundle
    check_run_layout(run_dir, bundle)
    edir = Path(run_dir) / "eigenfunctions"
    lams = np.loadtxt(edir / "eigenvalues.csv", ndmin=1)
    if not 1 <= index <= len(lams):
        raise ContinuationError(f"eigenfunction index {index} not saved")
    lam_j = float(lams[index - 1])
    v = np.real(load_state_csv(bundle, edir / f"eigenfunction_{index:03d}.csv"))

    a = amplitude
    f = sys.problem.f
    offset = sys.inner(np.asarray(f(a * v), dtype=float), v) / (a * sys.inner(v, v))
    lam_seed = -lam_j - offset
    seed = newton_fixed_lambda(sys, a * v, lam_seed, opts.newton_tol)
    direction = v if sys.inner(v, seed) >= 0 else -v
    _log(run_dir, f"continue_from_eig index={index} lambda_seed={lam_seed:.8g}")
    branch = continue_branch(sys, seed, lam_seed, direction, 0.0, opts,
                             provenance={"kind": "eigenfunction", "index": index,
                                         "amplitude": amplitude},
                             run_dir=run_dir)
    if opts.save_flag:
        save_branch(run_dir, branch, bundle)
    return branch


def continue_from_saved(run_dir, sys: ContinuationSystem, name: str,
                        opts: ContinuationOptions | None = None,
                        direction: float = -1.0) -> Branch:
    """Continue a previously saved standing wave; direction sets d(lambda)/ds."""
    opts = opts or ContinuationOptions()
    bundle = sys.bundle
    check_run_layout(run_dir, bundle)
    sdir = Path(run_dir) / "saved"
    psi = np.real(load_state_csv(bundle, sdir / f"{name}_psi.csv"))
    lam = float(np.loadtxt(sdir / f"{name}_lambda.csv"))
    psi = newton_fixed_lambda(sys, psi, lam, opts.newton_tol)
    t_u, t_lam = tangent_at(sys, psi, lam, np.zeros_like(psi),
                            math.copysign(1.0, direction), opts.beta)
    _log(run_dir, f"continue_from_saved {name}")
    branch = continue_branch(sys, psi, lam, t_u, t_lam, opts,
                             provenance={"kind": "saved", "name": name},
                             run_dir=run_dir)
    if opts.save_flag:
        save_branch(run_dir, branch, bundle)
    return branch


def continue_from_branch_point(run_dir, sys: ContinuationSystem, branch_id: int,
                               point_index: int, sign: int,
                               opts: ContinuationOptions | None = None) -> Branch:
    """Switch onto the branch crossing at a stored branch point."""
    opts = opts or ContinuationOptions()
    bundle = sys.bundle
    parent = load_branch(run_dir, branch_id, bundle)
    if point_index not in parent.perturbations:
        raise ContinuationError(
            f"branch {branch_id} has no stored perturbation at point {point_index}")
    bp = parent.points[point_index]
    pert = math.copysign(1.0, sign) * parent.perturbations[point_index]
    t_u, t_lam = _normalized(sys, pert, 0.0, opts.beta)
    u1, lam1, _ = corrector(sys, opts, bp.psi + pert, bp.lam, t_u, t_lam)
    points = [_make_point(sys, bp.psi, bp.lam, t_u, t_lam, bif_type=1),
              _make_point(sys, u1, lam1, t_u, t_lam)]
    du, dlam = u1 - bp.psi, lam1 - bp.lam
    prev_dir = _normalized(sys, du, dlam, opts.beta)
    points[1].tangent_psi, points[1].tangent_lam = prev_dir
    _log(run_dir, f"continue_from_branch_point branch{branch_id:03d} "
                  f"point {point_index} sign {sign:+d}")
    perturbations, termination = _run_continuation(sys, opts, points, prev_dir,
                                                   run_dir=run_dir)
    branch = Branch(points, {"kind": "branch_point", "parent": branch_id,
                             "point": point_index, "sign": int(sign),
                             "termination": termination}, opts, perturbations)
    if opts.save_flag:
        save_branch(run_dir, branch, bundle)
    return branch


def continue_from_end(run_dir, sys: ContinuationSystem, branch_id: int,
                      opts: ContinuationOptions | None = None) -> Branch:
    """Extend a stored branch beyond its last point (re-saved in place)."""
    opts = opts or ContinuationOptions()
    bundle = sys.bundle
    branch = load_branch(run_dir, branch_id, bundle)
    if len(branch.points) < 2:
        raise ContinuationError("need at least two points to extend a branch")
    a, b = branch.points[-2], branch.points[-1]
    prev_dir = _normalized(sys, b.psi - a.psi, b.lam - a.lam, opts.beta)
    _log(run_dir, f"continue_from_end branch{branch_id:03d}")
    points = branch.points
    perturbations, termination = _run_continuation(sys, opts, points, prev_dir,
                                                   run_dir=run_dir)
    merged = dict(branch.perturbations)
    merged.update(perturbations)
    out = Branch(points, {**branch.provenance, "extended": True,
                          "termination": termination}, opts, merged)
    if opts.save_flag:
        save_branch(run_dir, out, bundle, branch_id=branch_id)
    return out


# ---------------------------------------------------------------------------

_DIAGRAM_AXES = ("lambda", "mass", "energy")


def bifurcation_diagram(run_dir, axes=("lambda", "mass")) -> dict[int, np.ndarray]:
    """Per-branch polyline tables of the requested axes (from stored CSVs)."""
    for ax in axes:
        if ax not in _DIAGRAM_AXES:
            raise ContinuationError(f"unknown axis {ax!r}; pick from {_DIAGRAM_AXES}")
    out = {}
    for branch_id in list_branches(run_dir):
        bdir = _branch_dir(run_dir, branch_id)
        cols = [np.loadtxt(bdir / f"{ax}.csv", ndmin=1) for ax in axes]
        out[branch_id] = np.column_stack(cols)
    return out
