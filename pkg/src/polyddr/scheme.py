"""Mixed magnetostatics on the discrete spaces.

Unknowns are a field in the edge-based space and a vector potential in
the face-based space. The first equation matches the permeability-
weighted field product against the discrete curl of the test field
paired with the potential; the second applies the discrete curl to the
field and adds a divergence penalty that fixes the gauge. The assembled
block matrix is [[a, -b^T], [b, c]] with a symmetric positive definite
and c positive semidefinite, solved by a direct sparse factorization.

The bundled manufactured solution lives on the unit cube: the potential
is the rotated gradient of a separable trigonometric scalar, so it is
divergence-free with vanishing tangential (indeed full) boundary trace,
and the field and source follow by taking curls.
"""

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .polyspaces import BasisBank
from .ddrcore import (
    make_space,
    interpolate,
    op_potential,
    global_operator,
    INTERP_DEGREE_MARGIN,
)
from .products import assemble_product, graph_norms, map_cells

__all__ = [
    "MagnetostaticsProblem",
    "SparseSystem",
    "assemble",
    "solve",
    "manufactured_solution",
    "manufactured_problem",
    "error_norms",
]

RESIDUAL_LIMIT = 1e-10


class MagnetostaticsProblem:
    """Problem data: mesh, degree, per-cell permeability, source field,
    and optionally the exact field and vector potential for error
    evaluation. Built meshes of the unit cube are contractible, which
    the well-posedness of the scheme relies on."""

    def __init__(self, mesh, degree, mu=None, source=None,
                 exact_field=None, exact_vector_potential=None):
        self.mesh = mesh
        self.degree = degree
        if mu is None:
            mu = 1.0
        mu = np.asarray(mu, dtype=float)
        if mu.ndim == 0:
            mu = np.full(mesh.num_cells, float(mu))
        if mu.shape != (mesh.num_cells,):
            raise ValueError("permeability must be scalar or per-cell")
        if not np.all(mu > 0):
            raise ValueError("permeability must be strictly positive")
        self.mu = mu
        self.source = source
        self.exact_field = exact_field
        self.exact_vector_potential = exact_vector_potential
        self._spaces = None

    def spaces(self):
        """Edge-based, face-based, and cell-moment spaces on a shared
        basis bank (built lazily on first use)."""
        if self._spaces is None:
            bank = BasisBank(self.mesh, self.degree)
            self._spaces = tuple(
                make_space(self.mesh, w, self.degree, bank=bank)
                for w in ("curl", "div", "l2")
            )
        return self._spaces


class SparseSystem:
    """Assembled saddle-point system over field and potential dofs."""

    __slots__ = ("matrix", "rhs", "n_curl", "n_div", "solution", "residual")

    def __init__(self, matrix, rhs, n_curl, n_div):
        self.matrix = matrix
        self.rhs = rhs
        self.n_curl = n_curl
        self.n_div = n_div
        self.solution = None
        self.residual = None


def _source_vector(problem, space_div, threads=None):
    """Load vector: the source integrated against the potential
    reconstruction of each test function, with oversampled quadrature."""
    mesh = problem.mesh
    bank = space_div.bank
    degree = 2 * problem.degree + INTERP_DEGREE_MARGIN
    out = np.zeros(space_div.dim)
    if problem.source is None:
        return out

    def local(c):
        rule = bank.rule("cell", c, degree)
        pot = op_potential(space_div, c)
        vals = np.einsum("sn,spx->npx", pot.matrix, pot.target.eval(rule.points))
        src = problem.source(rule.points)
        return pot.dofs, np.einsum("npx,px,p->n", vals, src, rule.weights)

    for dofs, contrib in map_cells(local, mesh.num_cells, threads):
        out[dofs] += contrib
    return out


def assemble(problem, threads=None):
    """Assemble the block system [[a, -b^T], [b, c]] and the load.

    The worker count only parallelizes per-cell work; contributions are
    merged in cell order, so the result is thread-count-invariant."""
    sc, sd, sl = problem.spaces()
    a = assemble_product(sc, coeff=problem.mu, threads=threads)
    md = assemble_product(sd, threads=threads)
    uC = global_operator(sc, sd)
    D = global_operator(sd, sl)
    b = (md @ uC).tocsr()
    c = (D.T @ D).tocsr()
    matrix = sparse.bmat([[a, -b.T], [b, c]], format="csr")
    rhs = np.concatenate([np.zeros(sc.dim), _source_vector(problem, sd, threads)])
    return SparseSystem(matrix, rhs, sc.dim, sd.dim)


def solve(system):
    """Direct sparse solve; stores the solution and the relative
    residual on the system and returns the (field, potential) split."""
    try:
        lu = splu(system.matrix.tocsc())
    except RuntimeError as exc:
        raise RuntimeError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(system.rhs)
    num = np.linalg.norm(system.matrix @ x - system.rhs)
    den = max(np.linalg.norm(system.rhs), 1e-30)
    residual = num / den
    if residual > RESIDUAL_LIMIT:
        pivot = np.abs(lu.U.diagonal()).min()
        raise RuntimeError(
            f"solver residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.0e} "
            f"(smallest pivot {pivot:.3e})"
        )
    system.solution = x
    system.residual = residual
    return x[: system.n_curl], x[system.n_curl :]


def manufactured_solution():
    """Smooth exact fields on the unit cube.

    The scalar sin^2(pi x) sin^2(pi y) sin(pi z) vanishes on the whole
    boundary; the vector potential (its y-derivative, minus its
    x-derivative, 0) is divergence-free and vanishes on the boundary;
    the field is its curl and the source the curl of the field."""
    pi = np.pi

    def scalar(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        return np.sin(pi * x) ** 2 * np.sin(pi * y) ** 2 * np.sin(pi * z)

    def scalar_gradient(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        gx = pi * np.sin(2 * pi * x) * np.sin(pi * y) ** 2 * np.sin(pi * z)
        gy = pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y) * np.sin(pi * z)
        gz = pi * np.sin(pi * x) ** 2 * np.sin(pi * y) ** 2 * np.cos(pi * z)
        return np.column_stack([gx, gy, gz])

    def vector_potential(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        ax = pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y) * np.sin(pi * z)
        ay = -pi * np.sin(2 * pi * x) * np.sin(pi * y) ** 2 * np.sin(pi * z)
        return np.column_stack([ax, ay, np.zeros_like(ax)])

    def field(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        hx = pi ** 2 * np.sin(2 * pi * x) * np.sin(pi * y) ** 2 * np.cos(pi * z)
        hy = pi ** 2 * np.sin(pi * x) ** 2 * np.sin(2 * pi * y) * np.cos(pi * z)
        hz = -2 * pi ** 2 * np.sin(pi * z) * (
            np.cos(2 * pi * x) * np.sin(pi * y) ** 2
            + np.sin(pi * x) ** 2 * np.cos(2 * pi * y)
        )
        return np.column_stack([hx, hy, hz])

    def source(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        jx = -np.pi ** 3 * np.sin(2 * pi * y) * (
            4.5 * np.cos(2 * pi * x) - 2.5
        ) * np.sin(pi * z)
        jy = np.pi ** 3 * np.sin(2 * pi * x) * (
            4.5 * np.cos(2 * pi * y) - 2.5
        ) * np.sin(pi * z)
        return np.column_stack([jx, jy, np.zeros_like(jx)])

    return {
        "scalar": scalar,
        "scalar_gradient": scalar_gradient,
        "vector_potential": vector_potential,
        "field": field,
        "source": source,
    }


def manufactured_problem(mesh, degree):
    """Unit-permeability problem with the bundled exact fields."""
    fields = manufactured_solution()
    return MagnetostaticsProblem(
        mesh,
        degree,
        mu=1.0,
        source=fields["source"],
        exact_field=fields["field"],
        exact_vector_potential=fields["vector_potential"],
    )


def error_norms(problem, field_vals, potential_vals):
    """Graph-norm errors against the interpolated exact fields and the
    relative combined error (root-sum-square over the interpolates')."""
    if problem.exact_field is None or problem.exact_vector_potential is None:
        raise ValueError("problem carries no exact solution")
    sc, sd, sl = problem.spaces()
    ref_f = interpolate(sc, problem.exact_field).values
    ref_p = interpolate(sd, problem.exact_vector_potential).values

    e_curl, e_div = graph_norms(
        sc, sd, sl, field_vals - ref_f, potential_vals - ref_p, mu=problem.mu
    )
    n_curl, n_div = graph_norms(sc, sd, sl, ref_f, ref_p, mu=problem.mu)
    num = np.hypot(e_curl, e_div)
    den = max(np.hypot(n_curl, n_div), 1e-300)
    return float(e_curl), float(e_div), float(num / den)
