"""Grids and the non-square operator family for metric-graph PDEs.

Both schemes share one framework: unknowns live on a per-edge *extended*
grid of N_m + 2 points, the PDE rows are collocated on an *interior* grid
of N_m points, and the 2|E| leftover rows carry the vertex conditions as
constraints.

Uniform scheme: the extended grid is staggered, x_k = (k - 1/2) h, so the
first and last points are ghost points outside the edge.  Second
differences give the interior Laplacian rows; values and outward
derivatives at an edge end are the second-order ghost-point combinations
(u_0 + u_1)/2 and (u_1 - u_0)/h.

Chebyshev scheme: the extended grid holds second-kind points (endpoints
included), the interior grid first-kind points.  The interior rows are
P D^2 where D is the spectral differentiation matrix and P the barycentric
resampling matrix from the extended to the interior grid; endpoint rows of
D provide derivatives for the vertex conditions.

Row ordering is frozen: interior rows grouped by edge in edge order, then
one block per vertex holding its flux-or-Dirichlet row first followed by
its continuity rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphs import SOURCE_END, GraphError, MetricGraph, edge_coordinates

UNIFORM = "uniform"
CHEBYSHEV = "chebyshev"


class DiscretizationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Chebyshev building blocks

def chebyshev_second_kind(n_interior: int, length: float) -> np.ndarray:
    """N+2 second-kind points on [0, length], ascending, endpoints included."""
    k = np.arange(n_interior + 2)
    return 0.5 * length * (1.0 - np.cos(k * np.pi / (n_interior + 1)))


def chebyshev_first_kind(n_interior: int, length: float) -> np.ndarray:
    """N first-kind points on (0, length), ascending."""
    k = np.arange(1, n_interior + 1)
    return 0.5 * length * (1.0 - np.cos((2 * k - 1) * np.pi / (2 * n_interior)))


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    """Weights w_k = 1 / prod_{l != k} (x_k - x_l), normalized to unit max.

    Differences are rescaled by the grid span before the product so long
    edges and fine grids cannot overflow; any common factor cancels in the
    interpolation and differentiation formulas.
    """
    scale = 4.0 / (x[-1] - x[0])
    diff = (x[:, None] - x[None, :]) * scale
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def resampling_matrix(x_from: np.ndarray, x_to: np.ndarray,
                      w: np.ndarray | None = None) -> np.ndarray:
    """Barycentric map taking values on x_from to interpolated values on x_to."""
    if w is None:
        w = barycentric_weights(x_from)
    diff = x_to[:, None] - x_from[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-14 * max(1.0, abs(x_from[-1] - x_from[0])))
    diff[exact] = 1.0
    P = w[None, :] / diff
    P /= P.sum(axis=1)[:, None]
    P[exact.any(axis=1), :] = 0.0
    P[exact] = 1.0
    return P


def differentiation_matrix(x: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Spectral differentiation matrix on arbitrary nodes via barycentric weights."""
    if w is None:
        w = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def clenshaw_curtis_weights(n_interior: int, length: float) -> np.ndarray:
    """Quadrature weights on the N+2 second-kind points of [0, length].

    Exact for polynomials of degree up to N+1.
    """
    n = n_interior + 1  # number of panels; nodes 0..n
    if n == 1:
        return np.array([0.5, 0.5]) * length
    j = np.arange(n + 1)
    k = np.arange(1, n // 2 + 1)
    terms = np.cos(2.0 * np.outer(j, k) * np.pi / n)  # (n+1, n/2)
    b = np.full(k.shape, 2.0)
    if n % 2 == 0:
        b[-1] = 1.0
    w = 1.0 - terms @ (b / (4.0 * k**2 - 1.0))
    w *= 2.0 / n
    w[0] *= 0.5
    w[-1] *= 0.5
    return 0.5 * length * w


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Per-edge extended/interior grids with integration weights."""

    scheme: str
    n: np.ndarray                    # interior points per edge
    x_ext: tuple[np.ndarray, ...]    # length N_m + 2 each
    x_int: tuple[np.ndarray, ...]    # length N_m each
    h: np.ndarray                    # mesh size per edge (nan for chebyshev)
    weights: tuple[np.ndarray, ...]  # aligned with x_ext


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Operator family for one discretization of one graph.

    lap_int and interp_int map extended-grid data to interior-grid data;
    vc_rows holds the 2|E| discretized vertex conditions; nh_map routes
    per-vertex nonhomogeneous terms to their constraint rows.  The square
    composites stack these: lap_vc = [lap_int; vc_rows], lap_zero =
    [lap_int; 0], interp_vc = [interp_int; vc_rows], interp_zero =
    [interp_int; 0].  deriv is the square per-edge first-derivative matrix
    (used in functionals only, never to enforce vertex conditions).
    """

    graph: MetricGraph
    grid: Grid
    n_int: int
    n_ext: int
    offsets: np.ndarray       # extended-grid start index per edge
    int_offsets: np.ndarray   # interior-row start index per edge
    lap_int: object
    interp_int: object
    vc_rows: object
    nh_map: object
    lap_vc: object
    lap_zero: object
    interp_vc: object
    interp_zero: object
    deriv: object
    quad_ext: np.ndarray      # integration weights on the extended grid (no edge weights)
    potential_ext: np.ndarray
    vertex_row: np.ndarray    # global row of each vertex's flux/Dirichlet condition

    @property
    def scheme(self) -> str:
        return self.grid.scheme

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.lap_vc)

    def edge_slice(self, m: int) -> slice:
        o = self.offsets[m - 1]
        return slice(o, o + self.grid.n[m - 1] + 2)


def _resolve_counts(graph: MetricGraph, scheme: str) -> np.ndarray:
    n = np.empty(graph.num_edges, dtype=int)
    for e in graph.edges:
        if scheme == UNIFORM and graph.nx_is_density:
            n[e.index - 1] = max(2, round(e.nx * e.length))
        else:
            n[e.index - 1] = int(e.nx)
    minimum = 2 if scheme == UNIFORM else 3
    if np.any(n < minimum):
        raise DiscretizationError(
            f"{scheme} scheme needs at least {minimum} interior points per edge")
    return n


def _build_grid(graph: MetricGraph, scheme: str) -> Grid:
    n = _resolve_counts(graph, scheme)
    x_ext, x_int, weights = [], [], []
    h = np.full(graph.num_edges, math.nan)
    for e in graph.edges:
        nm = n[e.index - 1]
        if scheme == UNIFORM:
            hm = e.length / nm
            h[e.index - 1] = hm
            xe = (np.arange(nm + 2) - 0.5) * hm
            xi = xe[1:-1]
            wm = np.zeros(nm + 2)
            wm[1:-1] = hm
        else:
            xe = chebyshev_second_kind(nm, e.length)
            xi = chebyshev_first_kind(nm, e.length)
            wm = clenshaw_curtis_weights(nm, e.length)
        x_ext.append(xe)
        x_int.append(xi)
        weights.append(wm)
    return Grid(scheme, n, tuple(x_ext), tuple(x_int), h, tuple(weights))


class _EndOps:
    """Value and outward-derivative coefficient rows for each edge end."""

    def __init__(self, graph, grid, offsets, deriv_blocks):
        self.graph = graph
        self.grid = grid
        self.offsets = offsets
        self.deriv_blocks = deriv_blocks

    def value(self, m, end):
        """(cols, coeffs) approximating the edge value at the given end."""
        o = self.offsets[m - 1]
        nm = self.grid.n[m - 1]
        if self.grid.scheme == UNIFORM:
            if end == SOURCE_END:
                return np.array([o, o + 1]), np.array([0.5, 0.5])
            return np.array([o + nm, o + nm + 1]), np.array([0.5, 0.5])
        idx = o if end == SOURCE_END else o + nm + 1
        return np.array([idx]), np.array([1.0])

    def outward_derivative(self, m, end):
        """(cols, coeffs) for the derivative pointing away from the vertex."""
        o = self.offsets[m - 1]
        nm = self.grid.n[m - 1]
        if self.grid.scheme == UNIFORM:
            hm = self.grid.h[m - 1]
            if end == SOURCE_END:
                return np.array([o, o + 1]), np.array([-1.0, 1.0]) / hm
            return np.array([o + nm, o + nm + 1]), np.array([1.0, -1.0]) / hm
        D = self.deriv_blocks[m - 1]
        cols = o + np.arange(nm + 2)
        row = D[0] if end == SOURCE_END else -D[nm + 1]
        return cols, row


def _vertex_condition_rows(graph, grid, offsets, end_ops):
    """Triplets and metadata for the 2|E| constraint rows.

    Per vertex: its flux (Robin-Kirchhoff) or Dirichlet row first, then the
    continuity rows tying every other incident end to the anchor end.
    """
    rows, cols, vals = [], [], []
    vertex_row = np.empty(graph.num_vertices, dtype=int)
    r = 0
    for n in range(1, graph.num_vertices + 1):
        ends = graph.incident_ends(n)
        anchor = ends[0]
        cond = graph.vertices[n - 1]
        vertex_row[n - 1] = r
        if cond.is_dirichlet:
            c, v = end_ops.value(*anchor)
            rows += [r] * len(c); cols += list(c); vals += list(v)
        else:
            for (m, end) in ends:
                c, v = end_ops.outward_derivative(m, end)
                w = graph.edges[m - 1].weight
                rows += [r] * len(c); cols += list(c); vals += list(w * v)
            if cond.alpha != 0.0:
                c, v = end_ops.value(*anchor)
                rows += [r] * len(c); cols += list(c); vals += list(cond.alpha * v)
        r += 1
        ca, va = end_ops.value(*anchor)
        for other in ends[1:]:
            co, vo = end_ops.value(*other)
            rows += [r] * len(ca); cols += list(ca); vals += list(va)
            rows += [r] * len(co); cols += list(co); vals += list(-vo)
            r += 1
    return rows, cols, vals, vertex_row


def discretize(graph: MetricGraph, scheme: str = UNIFORM) -> OperatorBundle:
    """Build grids and the full operator family for the requested scheme."""
    if scheme not in (UNIFORM, CHEBYSHEV):
        raise DiscretizationError(f"unknown scheme {scheme!r}")
    grid = _build_grid(graph, scheme)
    ne = graph.num_edges
    n_int = int(grid.n.sum())
    n_ext = n_int + 2 * ne
    offsets = np.concatenate([[0], np.cumsum(grid.n + 2)])[:-1]
    int_offsets = np.concatenate([[0], np.cumsum(grid.n)])[:-1]

    potential_ext = np.zeros(n_ext)
    for e in graph.edges:
        if e.potential is not None:
            o = offsets[e.index - 1]
            xe = grid.x_ext[e.index - 1]
            potential_ext[o:o + len(xe)] = np.asarray(e.potential(xe), dtype=float)

    deriv_blocks = []
    if scheme == CHEBYSHEV:
        for e in graph.edges:
            deriv_blocks.append(differentiation_matrix(grid.x_ext[e.index - 1]))

    if scheme == UNIFORM:
        li, lj, lv = [], [], []   # interior Laplacian triplets
        pi, pj, pv = [], [], []   # interior projection triplets
        di, dj, dv = [], [], []   # square first-derivative triplets
        for e in graph.edges:
            m = e.index - 1
            o, io, nm, hm = offsets[m], int_offsets[m], grid.n[m], grid.h[m]
            for k in range(1, nm + 1):
                r = io + k - 1
                li += [r, r, r]
                lj += [o + k - 1, o + k, o + k + 1]
                lv += [1.0 / hm**2, -2.0 / hm**2, 1.0 / hm**2]
                pi.append(r); pj.append(o + k); pv.append(1.0)
                if potential_ext[o + k] != 0.0:
                    li.append(r); lj.append(o + k); lv.append(-potential_ext[o + k])
            # centered first differences; second-order one-sided at the extremes
            di += [o, o, o]
            dj += [o, o + 1, o + 2]
            dv += [-1.5 / hm, 2.0 / hm, -0.5 / hm]
            for k in range(1, nm + 1):
                di += [o + k, o + k]
                dj += [o + k - 1, o + k + 1]
                dv += [-0.5 / hm, 0.5 / hm]
            di += [o + nm + 1] * 3
            dj += [o + nm + 1, o + nm, o + nm - 1]
            dv += [1.5 / hm, -2.0 / hm, 0.5 / hm]
        lap_int = sp.csr_matrix((lv, (li, lj)), shape=(n_int, n_ext))
        interp_int = sp.csr_matrix((pv, (pi, pj)), shape=(n_int, n_ext))
        deriv = sp.csr_matrix((dv, (di, dj)), shape=(n_ext, n_ext))
    else:
        lap_int = np.zeros((n_int, n_ext))
        interp_int = np.zeros((n_int, n_ext))
        deriv = np.zeros((n_ext, n_ext))
        for e in graph.edges:
            m = e.index - 1
            o, io, nm = offsets[m], int_offsets[m], grid.n[m]
            D = deriv_blocks[m]
            P = resampling_matrix(grid.x_ext[m], grid.x_int[m])
            block = P @ D @ D
            if np.any(potential_ext[o:o + nm + 2] != 0.0):
                block = block - P * potential_ext[None, o:o + nm + 2]
            lap_int[io:io + nm, o:o + nm + 2] = block
            interp_int[io:io + nm, o:o + nm + 2] = P
            deriv[o:o + nm + 2, o:o + nm + 2] = D

    end_ops = _EndOps(graph, grid, offsets, deriv_blocks)
    vr, vc, vv, vertex_row = _vertex_condition_rows(graph, grid, offsets, end_ops)
    vertex_row += n_int

    nh_i = vertex_row.copy()
    nh_j = np.arange(graph.num_vertices)

    if scheme == UNIFORM:
        vc_rows = sp.csr_matrix((vv, (vr, vc)), shape=(2 * ne, n_ext))
        nh_map = sp.csr_matrix((np.ones(graph.num_vertices), (nh_i, nh_j)),
                               shape=(n_ext, graph.num_vertices))
        zero_rows = sp.csr_matrix((2 * ne, n_ext))
        lap_vc = sp.vstack([lap_int, vc_rows], format="csr")
        lap_zero = sp.vstack([lap_int, zero_rows], format="csr")
        interp_vc = sp.vstack([interp_int, vc_rows], format="csr")
        interp_zero = sp.vstack([interp_int, zero_rows], format="csr")
    else:
        vc_rows = np.zeros((2 * ne, n_ext))
        for r, c, v in zip(vr, vc, vv):
            vc_rows[r, c] += v
        nh_map = np.zeros((n_ext, graph.num_vertices))
        nh_map[nh_i, nh_j] = 1.0
        zero_rows = np.zeros((2 * ne, n_ext))
        lap_vc = np.vstack([lap_int, vc_rows])
        lap_zero = np.vstack([lap_int, zero_rows])
        interp_vc = np.vstack([interp_int, vc_rows])
        interp_zero = np.vstack([interp_int, zero_rows])

    quad_ext = np.concatenate(grid.weights)
    return OperatorBundle(graph, grid, n_int, n_ext, offsets, int_offsets,
                          lap_int, interp_int, vc_rows, nh_map,
                          lap_vc, lap_zero, interp_vc, interp_zero, deriv,
                          quad_ext, potential_ext, vertex_row)


def assemble_vertex_conditions(graph: MetricGraph, grid: Grid):
    """Standalone 2|E| x N_ext vertex-condition matrix for a built grid.

    Dense; discretize() stores the same rows inside the bundle (sparse for
    the uniform scheme).
    """
    ne = graph.num_edges
    n_ext = int(grid.n.sum()) + 2 * ne
    offsets = np.concatenate([[0], np.cumsum(grid.n + 2)])[:-1]
    deriv_blocks = []
    if grid.scheme == CHEBYSHEV:
        deriv_blocks = [differentiation_matrix(xe) for xe in grid.x_ext]
    end_ops = _EndOps(graph, grid, offsets, deriv_blocks)
    vr, vc, vv, _ = _vertex_condition_rows(graph, grid, offsets, end_ops)
    M = np.zeros((2 * ne, n_ext))
    for r, c, v in zip(vr, vc, vv):
        M[r, c] += v
    return M


def first_derivative_matrix(bundle: OperatorBundle):
    """Square block-diagonal first-derivative matrix on the extended grid."""
    return bundle.deriv


# ---------------------------------------------------------------------------
# moving data on and off the graph

def graph_to_column(bundle: OperatorBundle, per_edge) -> np.ndarray:
    """Stack per-edge extended-grid samples into one column vector."""
    per_edge = list(per_edge)
    if len(per_edge) != bundle.graph.num_edges:
        raise DiscretizationError("one sample array per edge required")
    parts = []
    for m, arr in enumerate(per_edge, start=1):
        arr = np.asarray(arr)
        want = bundle.grid.n[m - 1] + 2
        if arr.shape != (want,):
            raise DiscretizationError(
                f"edge {m}: expected {want} extended-grid samples, got {arr.shape}")
        parts.append(arr)
    return np.concatenate(parts)


def column_to_graph(bundle: OperatorBundle, u: np.ndarray):
    """Split a column vector into per-edge arrays plus interpolated vertex values.

    Vertex values use the anchor incident end: the average of the two
    straddling samples on uniform grids, the endpoint sample on Chebyshev
    grids.
    """
    u = np.asarray(u)
    if u.shape != (bundle.n_ext,):
        raise DiscretizationError(f"expected length {bundle.n_ext}, got {u.shape}")
    per_edge = [u[bundle.edge_slice(m)] for m in range(1, bundle.graph.num_edges + 1)]
    values = np.empty(bundle.graph.num_vertices, dtype=u.dtype)
    for n in range(1, bundle.graph.num_vertices + 1):
        values[n - 1] = vertex_value(bundle, u, n)
    return per_edge, values


def vertex_value(bundle: OperatorBundle, u: np.ndarray, n: int):
    """Value of the graph function at vertex n (anchor-end interpolation)."""
    m, end = bundle.graph.incident_ends(n)[0]
    o = bundle.offsets[m - 1]
    nm = bundle.grid.n[m - 1]
    if bundle.scheme == UNIFORM:
        i = o if end == SOURCE_END else o + nm
        return 0.5 * (u[i] + u[i + 1])
    return u[o] if end == SOURCE_END else u[o + nm + 1]


def apply_function_to_edges(bundle: OperatorBundle, fns) -> np.ndarray:
    """Sample one function or constant per edge on its extended grid."""
    fns = list(fns)
    if len(fns) != bundle.graph.num_edges:
        raise DiscretizationError("one function or constant per edge required")
    parts = []
    for m, f in enumerate(fns, start=1):
        xe = bundle.grid.x_ext[m - 1]
        if callable(f):
            parts.append(np.broadcast_to(np.asarray(f(xe)), xe.shape).copy())
        else:
            parts.append(np.full(xe.shape, f))
    dtype = np.result_type(*(p.dtype for p in parts))
    return np.concatenate([p.astype(dtype) for p in parts])


def apply_graphical_function(bundle: OperatorBundle, f) -> np.ndarray:
    """Sample f(x1, x2[, x3]) at the plot coordinates of every extended-grid point."""
    if bundle.graph.plot is None:
        raise GraphError("graph has no plot coordinates")
    if not callable(f):
        return np.full(bundle.n_ext, f)
    parts = []
    for m in range(1, bundle.graph.num_edges + 1):
        pts = edge_coordinates(bundle.graph, m, bundle.grid.x_ext[m - 1])
        parts.append(np.asarray(f(*pts.T)))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# persistence helpers

def bundle_structure(bundle: OperatorBundle) -> dict:
    """Shapes and nonzero counts, for regression dumps."""
    def describe(mat):
        nnz = mat.nnz if sp.issparse(mat) else int(np.count_nonzero(mat))
        return {"shape": list(mat.shape), "nnz": nnz}

    return {
        "scheme": bundle.scheme,
        "n_int": bundle.n_int,
        "n_ext": bundle.n_ext,
        "edges": int(bundle.graph.num_edges),
        "vertices": int(bundle.graph.num_vertices),
        "n_per_edge": [int(v) for v in bundle.grid.n],
        "lap_int": describe(bundle.lap_int),
        "interp_int": describe(bundle.interp_int),
        "vc_rows": describe(bundle.vc_rows),
        "nh_map": describe(bundle.nh_map),
        "deriv": describe(bundle.deriv),
    }


def save_state_csv(bundle: OperatorBundle, u: np.ndarray, path) -> None:
    """Write a state vector as CSV rows (edge id, x, value_real, value_imag)."""
    u = np.asarray(u)
    with open(path, "w") as fh:
        fh.write("edge,x,re,im\n")
        for m in range(1, bundle.graph.num_edges + 1):
            xe = bundle.grid.x_ext[m - 1]
            um = u[bundle.edge_slice(m)]
            for x, v in zip(xe, um):
                z = complex(v)
                fh.write(f"{m},{x:.17g},{z.real:.17g},{z.imag:.17g}\n")


def load_state_csv(bundle: OperatorBundle, path) -> np.ndarray:
    """Read a state vector written by save_state_csv; validates the layout."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    if data.shape[0] != bundle.n_ext or data.shape[1] != 4:
        raise DiscretizationError(
            f"state file {path} does not match layout (n_ext={bundle.n_ext})")
    values = data[:, 2] + 1j * data[:, 3]
    if np.all(data[:, 3] == 0.0):
        values = data[:, 2]
    return values
