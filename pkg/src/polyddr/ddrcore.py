"""Discrete counterparts of the gradient, curl, and divergence.

Four degree-k spaces are attached to a polyhedral mesh:

- "grad": one value per vertex, moments of degree k-1 on edges, faces,
  and cells (the discrete scalar potential space);
- "curl": tangential moments of degree k on edges, rotational-image and
  radial-complement moments on faces and cells (the discrete field space);
- "div":  normal moments of degree k on faces, gradient-image and radial
  complement moments on cells (the discrete flux space);
- "l2":   moments of degree k on cells.

All moment degrees of freedom are coefficients over the orthonormal bases
of polyspaces, so projections and restrictions are plain matrix algebra.
Global numbering is vertices, then edges, then faces, then cells; inside
one entity the image block precedes the complement block.

Each reconstruction operator maps the degrees of freedom attached to an
entity and its boundary to a polynomial on the entity. Edge gradients come
from a reconstructed edge polynomial of degree k+1; face and cell
gradients, curls, and divergences are defined by integration by parts
against full polynomial test spaces; scalar and tangential face traces and
the three cell potentials solve small square systems whose test spaces are
the radial complements (plus complement-projection rows where the
reconstruction keeps the complement part of the data). Systems with
condition number above 1e12 abort.
"""

import numpy as np
from scipy import sparse

from .polyspaces import BasisBank, dim_P, space_dim, l2_project

__all__ = [
    "DofSpace",
    "DofVector",
    "LocalOperator",
    "make_space",
    "interpolate",
    "edge_reconstruct",
    "op_grad_edge",
    "op_grad_face",
    "op_scalar_trace",
    "op_grad_cell",
    "op_curl_face",
    "op_tangential_trace",
    "op_curl_cell",
    "op_div_cell",
    "op_potential",
    "global_operator",
    "link_identities_check",
]

COND_LIMIT = 1e12
INTERP_DEGREE_MARGIN = 6


def _solve_guarded(A, B, what):
    cond = np.linalg.cond(A) if A.size else 0.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RuntimeError(
            f"{what}: square system condition number {cond:.3e} exceeds "
            f"{COND_LIMIT:.0e}"
        )
    return np.linalg.solve(A, B)


class LocalOperator:
    """A linear map from entity-local degrees of freedom to a polynomial.

    dofs holds the global indices the operator reads, in the local order
    used by the matrix columns; the rows are coefficients over target.
    """

    __slots__ = ("entity", "dofs", "layout", "target", "matrix")

    def __init__(self, entity, dofs, layout, target, matrix):
        self.entity = entity
        self.dofs = dofs
        self.layout = layout
        self.target = target
        self.matrix = matrix

    def apply(self, values):
        values = np.asarray(values)
        return self.matrix @ values[self.dofs]


class DofVector:
    """Values of one discrete space's degrees of freedom."""

    __slots__ = ("space", "values")

    def __init__(self, space, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.dim,):
            raise ValueError("value array does not match the space dimension")
        self.space = space
        self.values = values

    def copy(self):
        return DofVector(self.space, self.values.copy())


class DofSpace:
    """Layout of one discrete space's degrees of freedom on a mesh."""

    def __init__(self, mesh, which, k, bank=None):
        if k < 0:
            raise ValueError("degree must be >= 0")
        if which not in ("grad", "curl", "div", "l2"):
            raise ValueError(f"unknown space kind {which!r}")
        self.mesh = mesh
        self.which = which
        self.k = k
        self.bank = bank if bank is not None else BasisBank(mesh, k)

        if which == "grad":
            self.vertex_width = 1
            self.edge_width = dim_P(k - 1, 1)
            self.face_families = (("scalar", k - 1),)
            self.cell_families = (("scalar", k - 1),)
        elif which == "curl":
            self.vertex_width = 0
            self.edge_width = dim_P(k, 1)
            self.face_families = (
                ("curl_image", k - 1),
                ("curl_complement", k),
            )
            self.cell_families = (
                ("curl_image", k - 1),
                ("curl_complement", k),
            )
        elif which == "div":
            self.vertex_width = 0
            self.edge_width = 0
            self.face_families = (("scalar", k),)
            self.cell_families = (
                ("grad_image", k - 1),
                ("grad_complement", k),
            )
        else:
            self.vertex_width = 0
            self.edge_width = 0
            self.face_families = ()
            self.cell_families = (("scalar", k),)

        def block_dim(fam, l, d):
            return dim_P(l, d) if fam == "scalar" else space_dim(fam, l, d)

        self._face_dims = tuple(
            block_dim(f, l, 2) for f, l in self.face_families
        )
        self._cell_dims = tuple(
            block_dim(f, l, 3) for f, l in self.cell_families
        )
        self.face_width = sum(self._face_dims)
        self.cell_width = sum(self._cell_dims)
        self._face_offsets = np.concatenate(
            [[0], np.cumsum(self._face_dims)]
        ).astype(int)
        self._cell_offsets = np.concatenate(
            [[0], np.cumsum(self._cell_dims)]
        ).astype(int)

        nv, ne = mesh.num_vertices, mesh.num_edges
        nf, nc = mesh.num_faces, mesh.num_cells
        self.vertex_start = 0
        self.edge_start = nv * self.vertex_width
        self.face_start = self.edge_start + ne * self.edge_width
        self.cell_start = self.face_start + nf * self.face_width
        self.dim = self.cell_start + nc * self.cell_width
        self._cache = {}

    # -- global index helpers ---------------------------------------------

    def vertex_dofs(self, v):
        w = self.vertex_width
        return np.arange(self.vertex_start + v * w, self.vertex_start + (v + 1) * w)

    def edge_dofs(self, e):
        w = self.edge_width
        return np.arange(self.edge_start + e * w, self.edge_start + (e + 1) * w)

    def face_dofs(self, f):
        w = self.face_width
        return np.arange(self.face_start + f * w, self.face_start + (f + 1) * w)

    def cell_dofs(self, c):
        w = self.cell_width
        return np.arange(self.cell_start + c * w, self.cell_start + (c + 1) * w)

    def face_block(self, f, i):
        base = self.face_start + f * self.face_width
        return np.arange(
            base + self._face_offsets[i], base + self._face_offsets[i + 1]
        )

    def cell_block(self, c, i):
        base = self.cell_start + c * self.cell_width
        return np.arange(
            base + self._cell_offsets[i], base + self._cell_offsets[i + 1]
        )

    # -- local (entity plus boundary) collections --------------------------

    def local_dofs(self, kind, index):
        """Global indices of the dofs an entity's operators read, with a
        layout dict mapping ("vertex"|"edge"|"face"|"cell", id) to the
        local slice."""
        key = ("local", kind, index)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        mesh = self.mesh
        parts = []
        layout = {}
        n = 0

        def push(key_, arr):
            nonlocal n
            layout[key_] = slice(n, n + len(arr))
            parts.append(arr)
            n += len(arr)

        if kind == "edge":
            if self.vertex_width:
                for v in mesh.edges[index]:
                    push(("vertex", int(v)), self.vertex_dofs(int(v)))
            push(("edge", index), self.edge_dofs(index))
        elif kind == "face":
            if self.vertex_width:
                for v in mesh.faces[index]:
                    push(("vertex", int(v)), self.vertex_dofs(int(v)))
            if self.edge_width:
                for e in mesh.face_edges[index]:
                    push(("edge", int(e)), self.edge_dofs(int(e)))
            push(("face", index), self.face_dofs(index))
        elif kind == "cell":
            if self.vertex_width:
                for v in mesh.cell_vertices[index]:
                    push(("vertex", int(v)), self.vertex_dofs(int(v)))
            if self.edge_width:
                for e in mesh.cell_edges[index]:
                    push(("edge", int(e)), self.edge_dofs(int(e)))
            if self.face_width:
                for f in mesh.cells[index]:
                    push(("face", int(f)), self.face_dofs(int(f)))
            push(("cell", index), self.cell_dofs(index))
        else:
            raise ValueError(f"unknown entity kind {kind!r}")

        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
        out = (idx, layout)
        self._cache[key] = out
        return out

    def sub_slice(self, layout, kind, index, i):
        """Local slice of one family block inside an entity's block."""
        base = layout[(kind, index)]
        offs = self._face_offsets if kind == "face" else self._cell_offsets
        return slice(base.start + offs[i], base.start + offs[i + 1])


def make_space(mesh, which, k, bank=None):
    """Create the degree-k discrete space of one kind on the mesh."""
    return DofSpace(mesh, which, k, bank=bank)


# ----------------------------------------------------------------------
# interpolation


def interpolate(space, f, degree=None):
    """Degrees of freedom of a smooth field: point values on vertices for
    the scalar space, orthonormal-basis moments everywhere else. The
    default quadrature adds a margin over the space degree for
    non-polynomial fields."""
    mesh = space.mesh
    k = space.k
    bank = space.bank
    if degree is None:
        degree = 2 * k + INTERP_DEGREE_MARGIN
    vals = np.zeros(space.dim)

    if space.which == "grad":
        vv = np.asarray(f(mesh.vertices), dtype=float)
        vals[: mesh.num_vertices] = vv
        if k >= 1:
            for e in range(mesh.num_edges):
                rule = bank.rule("edge", e, degree)
                b = bank.scalars("edge", e, k - 1)
                vals[space.edge_dofs(e)] = l2_project(b, f, rule=rule)
            for fc in range(mesh.num_faces):
                rule = bank.rule("face", fc, degree)
                b = bank.scalars("face", fc, k - 1)
                vals[space.face_dofs(fc)] = l2_project(b, f, rule=rule)
            for c in range(mesh.num_cells):
                rule = bank.rule("cell", c, degree)
                b = bank.scalars("cell", c, k - 1)
                vals[space.cell_dofs(c)] = l2_project(b, f, rule=rule)
        return DofVector(space, vals)

    if space.which == "curl":
        for e in range(mesh.num_edges):
            rule = bank.rule("edge", e, degree)
            t = mesh.edge_tangents[e]
            b = bank.scalars("edge", e, k)
            vals[space.edge_dofs(e)] = l2_project(
                b, lambda p: np.asarray(f(p)) @ t, rule=rule
            )
        ent_fams = space.face_families
        for fc in range(mesh.num_faces):
            rule = bank.rule("face", fc, degree)
            for i, (fam, l) in enumerate(ent_fams):
                b = bank.subspace("face", fc, fam, l)
                if b.dim:
                    vals[space.face_block(fc, i)] = l2_project(b, f, rule=rule)
        for c in range(mesh.num_cells):
            rule = bank.rule("cell", c, degree)
            for i, (fam, l) in enumerate(space.cell_families):
                b = bank.subspace("cell", c, fam, l)
                if b.dim:
                    vals[space.cell_block(c, i)] = l2_project(b, f, rule=rule)
        return DofVector(space, vals)

    if space.which == "div":
        for fc in range(mesh.num_faces):
            rule = bank.rule("face", fc, degree)
            n = mesh.face_normals[fc]
            b = bank.scalars("face", fc, k)
            vals[space.face_dofs(fc)] = l2_project(
                b, lambda p: np.asarray(f(p)) @ n, rule=rule
            )
        for c in range(mesh.num_cells):
            rule = bank.rule("cell", c, degree)
            for i, (fam, l) in enumerate(space.cell_families):
                b = bank.subspace("cell", c, fam, l)
                if b.dim:
                    vals[space.cell_block(c, i)] = l2_project(b, f, rule=rule)
        return DofVector(space, vals)

    for c in range(mesh.num_cells):
        rule = bank.rule("cell", c, degree)
        b = bank.scalars("cell", c, k)
        vals[space.cell_dofs(c)] = l2_project(b, f, rule=rule)
    return DofVector(space, vals)


# ----------------------------------------------------------------------
# edge operators (scalar space)


def edge_reconstruct(space, e):
    """Degree-(k+1) edge polynomial matching both endpoint values and the
    degree-(k-1) edge moments; the base object for edge gradients and the
    scalar stabilization."""
    key = ("edge_rec", e)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    if space.which != "grad":
        raise ValueError("edge reconstruction lives on the scalar space")
    mesh = space.mesh
    k = space.k
    basis = space.bank.scalars("edge", e, k + 1)
    idx, layout = space.local_dofs("edge", e)
    pts = mesh.vertices[mesh.edges[e]]
    V = basis.eval(pts)
    M = np.zeros((k + 2, k + 2))
    M[0] = V[:, 0]
    M[1] = V[:, 1]
    for i in range(k):
        M[2 + i, i] = 1.0
    matrix = _solve_guarded(M, np.eye(k + 2), f"edge reconstruction {e}")
    out = LocalOperator(("edge", e), idx, layout, basis, matrix)
    space._cache[key] = out
    return out


def op_grad_edge(space, e):
    """Derivative of the reconstructed edge polynomial, degree k."""
    key = ("grad_edge", e)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    rec = edge_reconstruct(space, e)
    tgt = bank.scalars("edge", e, k)
    rule = bank.rule("edge", e)
    B = tgt.eval(rule.points)
    G = rec.target.grad(rule.points)
    t = mesh.edge_tangents[e]
    D = np.einsum("ip,jpx,x,p->ij", B, G, t, rule.weights)
    out = LocalOperator(("edge", e), rec.dofs, rec.layout, tgt, D @ rec.matrix)
    space._cache[key] = out
    return out


# ----------------------------------------------------------------------
# face operators


def _positions(idx):
    return {int(g): i for i, g in enumerate(idx)}


def op_grad_face(space, f):
    """Face gradient in the full vector space of degree k, defined by
    integration by parts against all vector polynomials."""
    key = ("grad_face", f)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    idx, layout = space.local_dofs("face", f)
    pos = _positions(idx)
    tgt = bank.vectors("face", f, k)
    rule = bank.rule("face", f)
    M = np.zeros((tgt.dim, len(idx)))

    if k >= 1:
        sb = bank.scalars("face", f, k - 1)
        Dv = tgt.div(rule.points)
        M[:, layout[("face", f)]] = -np.einsum(
            "ip,jp,p->ij", Dv, sb.eval(rule.points), rule.weights
        )

    Tv = None
    for j, e in enumerate(mesh.face_edges[f]):
        e = int(e)
        rec = edge_reconstruct(space, e)
        erule = bank.rule("edge", e)
        nfe = mesh.face_edge_normals[f][j]
        sgn = mesh.face_edge_signs[f][j]
        T = np.einsum(
            "ipx,x,mp,p->im",
            tgt.eval(erule.points),
            nfe,
            rec.target.eval(erule.points),
            erule.weights,
        )
        cols = [pos[int(g)] for g in rec.dofs]
        M[:, cols] += sgn * (T @ rec.matrix)

    out = LocalOperator(("face", f), idx, layout, tgt, M)
    space._cache[key] = out
    return out


def op_scalar_trace(space, f):
    """Degree-(k+1) scalar face reconstruction whose in-plane divergence
    moments against the radial complement reproduce the face gradient."""
    key = ("scalar_trace", f)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    gf = op_grad_face(space, f)
    idx, layout = gf.dofs, gf.layout
    pos = _positions(idx)
    tests = bank.subspace("face", f, "curl_complement", k + 2)
    tgt = bank.scalars("face", f, k + 1)
    rule = bank.rule("face", f)
    A = np.einsum(
        "ip,jp,p->ij", tests.div(rule.points), tgt.eval(rule.points),
        rule.weights,
    )
    R = -tests.coeff_matrix()[:, : gf.target.dim] @ gf.matrix
    for j, e in enumerate(mesh.face_edges[f]):
        e = int(e)
        rec = edge_reconstruct(space, e)
        erule = bank.rule("edge", e, 2 * k + 4)
        nfe = mesh.face_edge_normals[f][j]
        sgn = mesh.face_edge_signs[f][j]
        T = np.einsum(
            "ipx,x,mp,p->im",
            tests.eval(erule.points),
            nfe,
            rec.target.eval(erule.points),
            erule.weights,
        )
        cols = [pos[int(g)] for g in rec.dofs]
        R[:, cols] += sgn * (T @ rec.matrix)
    matrix = _solve_guarded(A, R, f"scalar face trace {f}")
    out = LocalOperator(("face", f), idx, layout, tgt, matrix)
    space._cache[key] = out
    return out


def op_curl_face(space, f):
    """Scalar face rotation of degree k from tangential edge values and
    the rotational-image face moments."""
    key = ("curl_face", f)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    idx, layout = space.local_dofs("face", f)
    tgt = bank.scalars("face", f, k)
    rule = bank.rule("face", f)
    n = mesh.face_normals[f]
    M = np.zeros((tgt.dim, len(idx)))

    img = bank.subspace("face", f, "curl_image", k - 1)
    if img.dim:
        vrot = np.cross(tgt.grad(rule.points), n[None, None, :])
        M[:, space.sub_slice(layout, "face", f, 0)] = np.einsum(
            "ipx,mpx,p->im", vrot, img.eval(rule.points), rule.weights
        )

    for j, e in enumerate(mesh.face_edges[f]):
        e = int(e)
        erule = bank.rule("edge", e)
        eb = bank.scalars("edge", e, k)
        sgn = mesh.face_edge_signs[f][j]
        T = np.einsum(
            "ip,mp,p->im",
            tgt.eval(erule.points),
            eb.eval(erule.points),
            erule.weights,
        )
        M[:, layout[("edge", e)]] -= sgn * T

    out = LocalOperator(("face", f), idx, layout, tgt, M)
    space._cache[key] = out
    return out


def op_tangential_trace(space, f):
    """Tangential face field of degree k: its rotated-gradient moments
    come from the face rotation and edge values by parts, its radial
    complement moments are kept from the data."""
    key = ("tangential_trace", f)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    cf = op_curl_face(space, f)
    idx, layout = cf.dofs, cf.layout
    tgt = bank.vectors("face", f, k)
    rule = bank.rule("face", f)
    n = mesh.face_normals[f]

    zm = bank.subspace("face", f, "zero_mean", k + 1)
    cc = bank.subspace("face", f, "curl_complement", k)
    vrot = np.cross(zm.grad(rule.points), n[None, None, :])
    L1 = np.einsum(
        "ipx,mpx,p->im", vrot, tgt.eval(rule.points), rule.weights
    )
    L = np.vstack([L1, cc.coeff_matrix()])

    R = np.zeros((tgt.dim, len(idx)))
    R[: zm.dim] = zm.coeff_matrix()[:, : dim_P(k, 2)] @ cf.matrix
    for j, e in enumerate(mesh.face_edges[f]):
        e = int(e)
        erule = bank.rule("edge", e)
        eb = bank.scalars("edge", e, k)
        sgn = mesh.face_edge_signs[f][j]
        T = np.einsum(
            "ip,mp,p->im",
            zm.eval(erule.points),
            eb.eval(erule.points),
            erule.weights,
        )
        R[: zm.dim, layout[("edge", e)]] += sgn * T
    if cc.dim:
        R[zm.dim :, space.sub_slice(layout, "face", f, 1)] = np.eye(cc.dim)

    matrix = _solve_guarded(L, R, f"tangential face trace {f}")
    out = LocalOperator(("face", f), idx, layout, tgt, matrix)
    space._cache[key] = out
    return out


# ----------------------------------------------------------------------
# cell operators


def op_grad_cell(space, c):
    """Cell gradient in the full vector space of degree k, by parts
    against all vector polynomials using the scalar face traces."""
    key = ("grad_cell", c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    idx, layout = space.local_dofs("cell", c)
    pos = _positions(idx)
    tgt = bank.vectors("cell", c, k)
    rule = bank.rule("cell", c)
    M = np.zeros((tgt.dim, len(idx)))

    if k >= 1:
        sb = bank.scalars("cell", c, k - 1)
        M[:, layout[("cell", c)]] = -np.einsum(
            "ip,jp,p->ij", tgt.div(rule.points), sb.eval(rule.points),
            rule.weights,
        )

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        tr = op_scalar_trace(space, f)
        frule = bank.rule("face", f)
        n = mesh.face_normals[f]
        wtf = mesh.cell_face_signs[c][fi]
        T = np.einsum(
            "ipx,x,mp,p->im",
            tgt.eval(frule.points),
            n,
            tr.target.eval(frule.points),
            frule.weights,
        )
        cols = [pos[int(g)] for g in tr.dofs]
        M[:, cols] += wtf * (T @ tr.matrix)

    out = LocalOperator(("cell", c), idx, layout, tgt, M)
    space._cache[key] = out
    return out


def op_curl_cell(space, c):
    """Cell curl in the full vector space of degree k, by parts against
    all vector polynomials using the tangential face traces."""
    key = ("curl_cell", c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    idx, layout = space.local_dofs("cell", c)
    pos = _positions(idx)
    tgt = bank.vectors("cell", c, k)
    rule = bank.rule("cell", c)
    M = np.zeros((tgt.dim, len(idx)))

    img = bank.subspace("cell", c, "curl_image", k - 1)
    if img.dim:
        M[:, space.sub_slice(layout, "cell", c, 0)] = np.einsum(
            "ipx,mpx,p->im",
            tgt.curl(rule.points),
            img.eval(rule.points),
            rule.weights,
        )

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        gt = op_tangential_trace(space, f)
        frule = bank.rule("face", f)
        n = mesh.face_normals[f]
        wtf = mesh.cell_face_signs[c][fi]
        wxn = np.cross(tgt.eval(frule.points), n[None, None, :])
        T = np.einsum(
            "ipx,mpx,p->im", wxn, gt.target.eval(frule.points), frule.weights
        )
        cols = [pos[int(g)] for g in gt.dofs]
        M[:, cols] += wtf * (T @ gt.matrix)

    out = LocalOperator(("cell", c), idx, layout, tgt, M)
    space._cache[key] = out
    return out


def op_div_cell(space, c):
    """Cell divergence of degree k from normal face values and the
    gradient-image cell moments."""
    key = ("div_cell", c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank
    idx, layout = space.local_dofs("cell", c)
    tgt = bank.scalars("cell", c, k)
    rule = bank.rule("cell", c)
    M = np.zeros((tgt.dim, len(idx)))

    img = bank.subspace("cell", c, "grad_image", k - 1)
    if img.dim:
        M[:, space.sub_slice(layout, "cell", c, 0)] = -np.einsum(
            "ipx,mpx,p->im",
            tgt.grad(rule.points),
            img.eval(rule.points),
            rule.weights,
        )

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        frule = bank.rule("face", f)
        fb = bank.scalars("face", f, k)
        wtf = mesh.cell_face_signs[c][fi]
        T = np.einsum(
            "ip,mp,p->im",
            tgt.eval(frule.points),
            fb.eval(frule.points),
            frule.weights,
        )
        M[:, layout[("face", f)]] += wtf * T

    out = LocalOperator(("cell", c), idx, layout, tgt, M)
    space._cache[key] = out
    return out


def op_potential(space, c):
    """Cell potential reconstruction one step richer than the dofs.

    Scalar space: a degree-(k+1) scalar from the cell gradient and face
    traces. Field space: a degree-k vector whose curl moments match the
    cell curl and whose radial complement moments are kept. Flux space:
    a degree-k vector whose gradient moments match the cell divergence
    and whose radial complement moments are kept.
    """
    key = ("potential", c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    k = space.k
    bank = space.bank

    if space.which == "grad":
        gc = op_grad_cell(space, c)
        idx, layout = gc.dofs, gc.layout
        pos = _positions(idx)
        tests = bank.subspace("cell", c, "curl_complement", k + 2)
        tgt = bank.scalars("cell", c, k + 1)
        rule = bank.rule("cell", c)
        A = np.einsum(
            "ip,jp,p->ij", tests.div(rule.points), tgt.eval(rule.points),
            rule.weights,
        )
        R = -tests.coeff_matrix()[:, : gc.target.dim] @ gc.matrix
        for fi, f in enumerate(mesh.cells[c]):
            f = int(f)
            tr = op_scalar_trace(space, f)
            frule = bank.rule("face", f)
            n = mesh.face_normals[f]
            wtf = mesh.cell_face_signs[c][fi]
            T = np.einsum(
                "ipx,x,mp,p->im",
                tests.eval(frule.points),
                n,
                tr.target.eval(frule.points),
                frule.weights,
            )
            cols = [pos[int(g)] for g in tr.dofs]
            R[:, cols] += wtf * (T @ tr.matrix)
        matrix = _solve_guarded(A, R, f"scalar potential on cell {c}")
        out = LocalOperator(("cell", c), idx, layout, tgt, matrix)

    elif space.which == "curl":
        ct = op_curl_cell(space, c)
        idx, layout = ct.dofs, ct.layout
        pos = _positions(idx)
        tgt = bank.vectors("cell", c, k)
        rule = bank.rule("cell", c)
        cg = bank.subspace("cell", c, "grad_complement", k + 1)
        cc = bank.subspace("cell", c, "curl_complement", k)
        L1 = np.einsum(
            "ipx,mpx,p->im", cg.curl(rule.points), tgt.eval(rule.points),
            rule.weights,
        )
        L = np.vstack([L1, cc.coeff_matrix()])
        R = np.zeros((tgt.dim, len(idx)))
        R[: cg.dim] = cg.coeff_matrix()[:, : tgt.dim] @ ct.matrix
        for fi, f in enumerate(mesh.cells[c]):
            f = int(f)
            gt = op_tangential_trace(space, f)
            frule = bank.rule("face", f)
            n = mesh.face_normals[f]
            wtf = mesh.cell_face_signs[c][fi]
            wxn = np.cross(cg.eval(frule.points), n[None, None, :])
            T = np.einsum(
                "ipx,mpx,p->im", wxn, gt.target.eval(frule.points),
                frule.weights,
            )
            cols = [pos[int(g)] for g in gt.dofs]
            R[: cg.dim, cols] -= wtf * (T @ gt.matrix)
        if cc.dim:
            R[cg.dim :, space.sub_slice(layout, "cell", c, 1)] = np.eye(cc.dim)
        matrix = _solve_guarded(L, R, f"field potential on cell {c}")
        out = LocalOperator(("cell", c), idx, layout, tgt, matrix)

    elif space.which == "div":
        dt = op_div_cell(space, c)
        idx, layout = dt.dofs, dt.layout
        tgt = bank.vectors("cell", c, k)
        rule = bank.rule("cell", c)
        zm = bank.subspace("cell", c, "zero_mean", k + 1)
        cg = bank.subspace("cell", c, "grad_complement", k)
        L1 = np.einsum(
            "ipx,mpx,p->im", zm.grad(rule.points), tgt.eval(rule.points),
            rule.weights,
        )
        L = np.vstack([L1, cg.coeff_matrix()])
        R = np.zeros((tgt.dim, len(idx)))
        R[: zm.dim] = -(zm.coeff_matrix()[:, : dim_P(k, 3)] @ dt.matrix)
        for fi, f in enumerate(mesh.cells[c]):
            f = int(f)
            frule = bank.rule("face", f)
            fb = bank.scalars("face", f, k)
            wtf = mesh.cell_face_signs[c][fi]
            T = np.einsum(
                "ip,mp,p->im",
                zm.eval(frule.points),
                fb.eval(frule.points),
                frule.weights,
            )
            R[: zm.dim, layout[("face", f)]] += wtf * T
        if cg.dim:
            R[zm.dim :, space.sub_slice(layout, "cell", c, 1)] = np.eye(cg.dim)
        matrix = _solve_guarded(L, R, f"flux potential on cell {c}")
        out = LocalOperator(("cell", c), idx, layout, tgt, matrix)

    else:
        raise ValueError("potentials live on the grad, curl, and div spaces")

    space._cache[key] = out
    return out


# ----------------------------------------------------------------------
# global assembly


def _pad_cols(W, width):
    if W.shape[1] == width:
        return W
    out = np.zeros((W.shape[0], width))
    out[:, : W.shape[1]] = W
    return out


def _complex_rows(space_in, space_out, edges, faces, cells):
    """Yield (global output rows, local operator) pieces of the discrete
    differential from space_in to space_out."""
    pair = (space_in.which, space_out.which)
    bank = space_out.bank
    if pair == ("grad", "curl"):
        for e in edges:
            yield space_out.edge_dofs(e), op_grad_edge(space_in, e)
        for f in faces:
            gf = op_grad_face(space_in, f)
            for i, (fam, l) in enumerate(space_out.face_families):
                b = bank.subspace("face", f, fam, l)
                if b.dim == 0:
                    continue
                W = _pad_cols(b.coeff_matrix(), gf.target.dim)
                yield space_out.face_block(f, i), LocalOperator(
                    gf.entity, gf.dofs, gf.layout, b, W @ gf.matrix
                )
        for c in cells:
            gc = op_grad_cell(space_in, c)
            for i, (fam, l) in enumerate(space_out.cell_families):
                b = bank.subspace("cell", c, fam, l)
                if b.dim == 0:
                    continue
                W = _pad_cols(b.coeff_matrix(), gc.target.dim)
                yield space_out.cell_block(c, i), LocalOperator(
                    gc.entity, gc.dofs, gc.layout, b, W @ gc.matrix
                )
    elif pair == ("curl", "div"):
        for f in faces:
            cf = op_curl_face(space_in, f)
            yield space_out.face_dofs(f), cf
        for c in cells:
            ct = op_curl_cell(space_in, c)
            for i, (fam, l) in enumerate(space_out.cell_families):
                b = bank.subspace("cell", c, fam, l)
                if b.dim == 0:
                    continue
                W = _pad_cols(b.coeff_matrix(), ct.target.dim)
                yield space_out.cell_block(c, i), LocalOperator(
                    ct.entity, ct.dofs, ct.layout, b, W @ ct.matrix
                )
    elif pair == ("div", "l2"):
        for c in cells:
            yield space_out.cell_dofs(c), op_div_cell(space_in, c)
    else:
        raise ValueError(f"no discrete differential maps {pair[0]} to {pair[1]}")


def global_operator(space_in, space_out):
    """Sparse matrix of the discrete differential between two spaces."""
    mesh = space_in.mesh
    if space_in.mesh is not space_out.mesh or space_in.k != space_out.k:
        raise ValueError("spaces must share one mesh and one degree")
    rows, cols, vals = [], [], []
    for out_rows, op in _complex_rows(
        space_in,
        space_out,
        range(mesh.num_edges),
        range(mesh.num_faces),
        range(mesh.num_cells),
    ):
        if len(out_rows) == 0 or len(op.dofs) == 0:
            continue
        rows.append(np.repeat(out_rows, len(op.dofs)))
        cols.append(np.tile(op.dofs, len(out_rows)))
        vals.append(op.matrix.ravel())
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    mat = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(space_out.dim, space_in.dim)
    )
    return mat.tocsr()


def local_complex_matrix(space_in, space_out, c):
    """Cell-local matrix of the discrete differential: output dofs of the
    cell and its boundary in local order versus input local dofs."""
    mesh = space_in.mesh
    idx_out, _ = space_out.local_dofs("cell", c)
    idx_in, _ = space_in.local_dofs("cell", c)
    pos_out = _positions(idx_out)
    pos_in = _positions(idx_in)
    M = np.zeros((len(idx_out), len(idx_in)))
    edges = [int(e) for e in mesh.cell_edges[c]] if space_out.edge_width else []
    faces = [int(f) for f in mesh.cells[c]]
    for out_rows, op in _complex_rows(space_in, space_out, edges, faces, [c]):
        r = [pos_out[int(g)] for g in out_rows]
        ci = [pos_in[int(g)] for g in op.dofs]
        M[np.ix_(r, ci)] = op.matrix
    return M


# ----------------------------------------------------------------------
# local identities


def link_identities_check(space_grad, space_curl, space_div, c):
    """Residuals of the exact-sequence identities on one cell.

    Returns a dict of maximum absolute residuals: the two integration by
    parts links between face and cell operators, the composition of each
    potential with the preceding discrete differential, and the vanishing
    of composed differentials on the cell.
    """
    mesh = space_grad.mesh
    k = space_grad.k
    bank = space_grad.bank
    rule = bank.rule("cell", c)
    out = {}

    gc = op_grad_cell(space_grad, c)
    pos_g = _positions(gc.dofs)
    ne = bank.subspace("cell", c, "nedelec", k + 1)
    X = np.einsum(
        "ipx,mpx,p->im", ne.curl(rule.points), gc.target.eval(rule.points),
        rule.weights,
    )
    A = X @ gc.matrix
    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        gf = op_grad_face(space_grad, f)
        frule = bank.rule("face", f)
        n = mesh.face_normals[f]
        wtf = mesh.cell_face_signs[c][fi]
        zxn = np.cross(ne.eval(frule.points), n[None, None, :])
        T = np.einsum(
            "ipx,mpx,p->im", zxn, gf.target.eval(frule.points), frule.weights
        )
        cols = [pos_g[int(g)] for g in gf.dofs]
        A[:, cols] += wtf * (T @ gf.matrix)
    out["grad_link"] = float(np.abs(A).max()) if A.size else 0.0

    ct = op_curl_cell(space_curl, c)
    pos_c = _positions(ct.dofs)
    sb = bank.scalars("cell", c, k + 1)
    X = np.einsum(
        "ipx,mpx,p->im", sb.grad(rule.points), ct.target.eval(rule.points),
        rule.weights,
    )
    A = X @ ct.matrix
    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        cf = op_curl_face(space_curl, f)
        frule = bank.rule("face", f)
        wtf = mesh.cell_face_signs[c][fi]
        T = np.einsum(
            "ip,mp,p->im",
            sb.eval(frule.points),
            cf.target.eval(frule.points),
            frule.weights,
        )
        cols = [pos_c[int(g)] for g in cf.dofs]
        A[:, cols] -= wtf * (T @ cf.matrix)
    out["curl_link"] = float(np.abs(A).max()) if A.size else 0.0

    uG = local_complex_matrix(space_grad, space_curl, c)
    uC = local_complex_matrix(space_curl, space_div, c)
    pc = op_potential(space_curl, c)
    pd = op_potential(space_div, c)
    dt = op_div_cell(space_div, c)

    out["field_potential_of_gradient"] = float(
        np.abs(pc.matrix @ uG - gc.matrix).max()
    )
    out["flux_potential_of_curl"] = float(
        np.abs(pd.matrix @ uC - ct.matrix).max()
    )
    out["curl_of_gradient"] = float(np.abs(ct.matrix @ uG).max())
    out["div_of_curl"] = float(np.abs(dt.matrix @ uC).max())
    return out
