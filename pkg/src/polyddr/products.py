"""Discrete L2 products, stabilizations, and norms for the four spaces.

The product on each cell is the L2 product of the potential
reconstructions plus a stabilization penalizing the mismatch between the
potential and the boundary reconstructions:

- scalar space: face terms weigh the difference between the cell
  potential and the scalar face trace by the face diameter, edge terms
  weigh the difference with the reconstructed edge polynomial by the
  squared edge length;
- field space: face terms compare the tangential part of the potential
  with the tangential face trace, edge terms the tangential component
  with the edge polynomial;
- flux space: face terms compare the normal component with the face
  values.

An alternative stabilization compares the local dofs with the
interpolate of the potential in the component product; both variants
vanish on interpolates of polynomials the potentials reproduce.

Component norms weigh the plain coefficient norms of the dof blocks by
entity-size factors (faces by their diameter, edges by face diameter
times edge length; the scalar space measures edges through the
reconstructed edge polynomial). Cellwise they define the broken norms
used in the stability and convergence diagnostics.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import sparse

from .polyspaces import dim_P, l2_project
from .ddrcore import (
    edge_reconstruct,
    op_scalar_trace,
    op_tangential_trace,
    op_potential,
    global_operator,
)

__all__ = [
    "LocalBilinearForm",
    "stabilization",
    "l2_product",
    "component_gram",
    "component_norm",
    "assemble_product",
    "map_cells",
    "graph_norms",
]


class LocalBilinearForm:
    """Symmetric bilinear form over the local dofs of one cell."""

    __slots__ = ("entity", "dofs", "matrix")

    def __init__(self, entity, dofs, matrix):
        self.entity = entity
        self.dofs = dofs
        self.matrix = matrix

    def apply(self, u, v):
        u = np.asarray(u)[self.dofs]
        v = np.asarray(v)[self.dofs]
        return float(u @ self.matrix @ v)


def _positions(idx):
    return {int(g): i for i, g in enumerate(idx)}


def _dof_values_scalar(op, pts):
    """Per-dof values of a scalar reconstruction at points, (ndофs, np)."""
    return op.matrix.T @ op.target.eval(pts)


def _dof_values_vector(op, pts):
    return np.einsum("sn,spx->npx", op.matrix, op.target.eval(pts))


# ----------------------------------------------------------------------
# stabilizations


def _stab_grad(space, c):
    mesh = space.mesh
    bank = space.bank
    pg = op_potential(space, c)
    idx = pg.dofs
    pos = _positions(idx)
    n = len(idx)
    S = np.zeros((n, n))

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        rule = bank.rule("face", f)
        R = _dof_values_scalar(pg, rule.points)
        tr = op_scalar_trace(space, f)
        cols = [pos[int(g)] for g in tr.dofs]
        R[cols] -= _dof_values_scalar(tr, rule.points)
        hf = mesh.face_diameters[f]
        S += hf * (R * rule.weights) @ R.T

    for e in [int(x) for x in mesh.cell_edges[c]]:
        rule = bank.rule("edge", e)
        R = _dof_values_scalar(pg, rule.points)
        rec = edge_reconstruct(space, e)
        cols = [pos[int(g)] for g in rec.dofs]
        R[cols] -= _dof_values_scalar(rec, rule.points)
        he = mesh.edge_lengths[e]
        S += he ** 2 * (R * rule.weights) @ R.T
    return S, pg


def _stab_curl(space, c):
    mesh = space.mesh
    bank = space.bank
    pc = op_potential(space, c)
    idx = pc.dofs
    pos = _positions(idx)
    n = len(idx)
    S = np.zeros((n, n))

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        rule = bank.rule("face", f)
        nrm = mesh.face_normals[f]
        V = _dof_values_vector(pc, rule.points)
        R = V - np.einsum("npx,x,y->npy", V, nrm, nrm)
        gt = op_tangential_trace(space, f)
        cols = [pos[int(g)] for g in gt.dofs]
        R[cols] -= _dof_values_vector(gt, rule.points)
        hf = mesh.face_diameters[f]
        S += hf * np.einsum("npx,mpx,p->nm", R, R, rule.weights)

    for e in [int(x) for x in mesh.cell_edges[c]]:
        rule = bank.rule("edge", e)
        t = mesh.edge_tangents[e]
        R = np.einsum("npx,x->np", _dof_values_vector(pc, rule.points), t)
        eb = bank.scalars("edge", e, space.k)
        sl = space.edge_dofs(e)
        cols = [pos[int(g)] for g in sl]
        R[cols] -= eb.eval(rule.points)
        he = mesh.edge_lengths[e]
        S += he ** 2 * (R * rule.weights) @ R.T
    return S, pc


def _stab_div(space, c):
    mesh = space.mesh
    bank = space.bank
    pd = op_potential(space, c)
    idx = pd.dofs
    pos = _positions(idx)
    n = len(idx)
    S = np.zeros((n, n))

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        rule = bank.rule("face", f)
        nrm = mesh.face_normals[f]
        R = np.einsum("npx,x->np", _dof_values_vector(pd, rule.points), nrm)
        fb = bank.scalars("face", f, space.k)
        cols = [pos[int(g)] for g in space.face_dofs(f)]
        R[cols] -= fb.eval(rule.points)
        hf = mesh.face_diameters[f]
        S += hf * (R * rule.weights) @ R.T
    return S, pd


def _interp_matrix(space, c, pot):
    """Local interpolation of the cell potential: maps the potential's
    coefficients back to the local dofs."""
    mesh = space.mesh
    bank = space.bank
    k = space.k
    idx, layout = space.local_dofs("cell", c)
    J = np.zeros((len(idx), pot.target.dim))

    if space.which == "grad":
        for v in [int(x) for x in mesh.cell_vertices[c]]:
            J[layout[("vertex", v)]] = pot.target.eval(
                mesh.vertices[v][None, :]
            )[:, 0]
        if k >= 1:
            for e in [int(x) for x in mesh.cell_edges[c]]:
                rule = bank.rule("edge", e)
                eb = bank.scalars("edge", e, k - 1)
                J[layout[("edge", e)]] = np.einsum(
                    "ip,jp,p->ij",
                    eb.eval(rule.points),
                    pot.target.eval(rule.points),
                    rule.weights,
                )
            for f in [int(x) for x in mesh.cells[c]]:
                rule = bank.rule("face", f)
                fb = bank.scalars("face", f, k - 1)
                J[layout[("face", f)]] = np.einsum(
                    "ip,jp,p->ij",
                    fb.eval(rule.points),
                    pot.target.eval(rule.points),
                    rule.weights,
                )
            J[layout[("cell", c)], : dim_P(k - 1, 3)] = np.eye(dim_P(k - 1, 3))
        return J

    if space.which == "curl":
        for e in [int(x) for x in mesh.cell_edges[c]]:
            rule = bank.rule("edge", e)
            t = mesh.edge_tangents[e]
            eb = bank.scalars("edge", e, k)
            J[layout[("edge", e)]] = np.einsum(
                "ip,jpx,x,p->ij",
                eb.eval(rule.points),
                pot.target.eval(rule.points),
                t,
                rule.weights,
            )
        fams = space.face_families
    elif space.which == "div":
        for f in [int(x) for x in mesh.cells[c]]:
            rule = bank.rule("face", f)
            nrm = mesh.face_normals[f]
            fb = bank.scalars("face", f, k)
            J[layout[("face", f)]] = np.einsum(
                "ip,jpx,x,p->ij",
                fb.eval(rule.points),
                pot.target.eval(rule.points),
                nrm,
                rule.weights,
            )
        fams = None
    else:
        raise ValueError("no interpolation stabilization for this space")

    if space.which == "curl":
        for f in [int(x) for x in mesh.cells[c]]:
            rule = bank.rule("face", f)
            for i, (fam, l) in enumerate(fams):
                b = bank.subspace("face", f, fam, l)
                if b.dim == 0:
                    continue
                J[space.sub_slice(layout, "face", f, i)] = np.einsum(
                    "ipx,jpx,p->ij",
                    b.eval(rule.points),
                    pot.target.eval(rule.points),
                    rule.weights,
                )
    for i, (fam, l) in enumerate(space.cell_families):
        b = bank.subspace("cell", c, fam, l)
        if b.dim == 0:
            continue
        W = b.coeff_matrix()
        block = np.zeros((b.dim, pot.target.dim))
        block[:, : W.shape[1]] = W
        J[space.sub_slice(layout, "cell", c, i)] = block
    return J


def stabilization(space, c, variant="trace"):
    """Stabilization form on one cell.

    variant "trace" penalizes potential-versus-boundary-reconstruction
    mismatches; variant "interpolation" penalizes the dof-space residual
    against the interpolated potential, measured in the component
    product. Both vanish when the potential reproduces the data.
    """
    key = ("stab", variant, c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit

    if variant == "trace":
        if space.which == "grad":
            S, pot = _stab_grad(space, c)
        elif space.which == "curl":
            S, pot = _stab_curl(space, c)
        elif space.which == "div":
            S, pot = _stab_div(space, c)
        else:
            S = np.zeros((space.cell_width, space.cell_width))
            pot = None
        dofs = pot.dofs if pot is not None else space.cell_dofs(c)
        out = LocalBilinearForm(("cell", c), dofs, S)
    elif variant == "interpolation":
        if space.which == "l2":
            out = LocalBilinearForm(
                ("cell", c),
                space.cell_dofs(c),
                np.zeros((space.cell_width, space.cell_width)),
            )
        else:
            pot = op_potential(space, c)
            J = _interp_matrix(space, c, pot)
            R = np.eye(len(pot.dofs)) - J @ pot.matrix
            C = component_gram(space, c)
            S = R.T @ C @ R
            out = LocalBilinearForm(("cell", c), pot.dofs, S)
    else:
        raise ValueError(f"unknown stabilization variant {variant!r}")

    space._cache[key] = out
    return out


def l2_product(space, c, variant="trace"):
    """Stabilized L2 product on one cell: potential Gram plus
    stabilization (orthonormal potential targets make the Gram a plain
    matrix product). The moment space's product is the identity."""
    key = ("product", variant, c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    if space.which == "l2":
        out = LocalBilinearForm(
            ("cell", c), space.cell_dofs(c), np.eye(space.cell_width)
        )
    else:
        stab = stabilization(space, c, variant)
        pot = op_potential(space, c)
        M = pot.matrix.T @ pot.matrix + stab.matrix
        out = LocalBilinearForm(("cell", c), pot.dofs, M)
    space._cache[key] = out
    return out


# ----------------------------------------------------------------------
# component norms


def component_gram(space, c):
    """Quadratic form of the squared component norm on one cell's local
    dofs: block-diagonal coefficient norms scaled by entity sizes, with
    the scalar space's edge blocks measured through the reconstructed
    edge polynomial."""
    key = ("component", c)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    mesh = space.mesh
    idx, layout = space.local_dofs("cell", c)
    pos = _positions(idx)
    n = len(idx)
    C = np.zeros((n, n))
    sl = layout.get(("cell", c))
    if sl is not None:
        cw = sl.stop - sl.start
        C[sl.start : sl.stop, sl.start : sl.stop] = np.eye(cw)

    if space.which == "l2":
        space._cache[key] = C
        return C

    for fi, f in enumerate(mesh.cells[c]):
        f = int(f)
        hf = mesh.face_diameters[f]
        fsl = layout.get(("face", f))
        if fsl is not None:
            fw = fsl.stop - fsl.start
            C[fsl.start : fsl.stop, fsl.start : fsl.stop] += hf * np.eye(fw)
        if space.which == "grad":
            for e in [int(x) for x in mesh.face_edges[f]]:
                he = mesh.edge_lengths[e]
                rec = edge_reconstruct(space, e)
                cols = [pos[int(g)] for g in rec.dofs]
                B = rec.matrix.T @ rec.matrix
                C[np.ix_(cols, cols)] += hf * he * B
        elif space.which == "curl":
            for e in [int(x) for x in mesh.face_edges[f]]:
                he = mesh.edge_lengths[e]
                esl = layout[("edge", e)]
                ew = esl.stop - esl.start
                C[esl.start : esl.stop, esl.start : esl.stop] += (
                    hf * he * np.eye(ew)
                )
    space._cache[key] = C
    return C


def component_norm(space, values):
    """Broken component norm of a dof vector over the whole mesh."""
    if hasattr(values, "values"):
        values = values.values
    values = np.asarray(values)
    total = 0.0
    for c in range(space.mesh.num_cells):
        idx, _ = space.local_dofs("cell", c)
        v = values[idx]
        total += float(v @ component_gram(space, c) @ v)
    return np.sqrt(total)


# ----------------------------------------------------------------------
# global assembly and graph norms


def map_cells(fn, num_cells, threads=None):
    """Apply a per-cell function, optionally on a thread pool.

    Results always come back in cell order, so downstream reductions
    are independent of the worker count."""
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(num_cells)))
    return [fn(c) for c in range(num_cells)]


def assemble_product(space, coeff=None, variant="trace", threads=None):
    """Global sparse matrix of the stabilized product, optionally with a
    per-cell scalar coefficient."""

    def local(c):
        form = l2_product(space, c, variant)
        M = form.matrix if coeff is None else coeff[c] * form.matrix
        return form.dofs, M

    rows, cols, vals = [], [], []
    for dofs, M in map_cells(local, space.mesh.num_cells, threads):
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(M.ravel())
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.dim, space.dim),
    )
    return mat.tocsr()


def graph_norms(space_curl, space_div, space_l2, field_vals, flux_vals,
                mu=None, variant="trace"):
    """Graph norms of a field/flux pair: the field norm adds the flux
    norm of its discrete curl, the flux norm adds the plain L2 norm of
    its discrete divergence."""
    if hasattr(field_vals, "values"):
        field_vals = field_vals.values
    if hasattr(flux_vals, "values"):
        flux_vals = flux_vals.values
    mesh = space_curl.mesh
    mu_arr = np.ones(mesh.num_cells) if mu is None else np.asarray(mu)

    Mc = assemble_product(space_curl, coeff=mu_arr, variant=variant)
    Md = assemble_product(space_div, variant=variant)
    uC = global_operator(space_curl, space_div)
    D = global_operator(space_div, space_l2)

    ch = uC @ field_vals
    field_sq = float(field_vals @ (Mc @ field_vals)) + float(ch @ (Md @ ch))
    dv = D @ flux_vals
    flux_sq = float(flux_vals @ (Md @ flux_vals)) + float(dv @ dv)
    return np.sqrt(field_sq), np.sqrt(flux_sq)
