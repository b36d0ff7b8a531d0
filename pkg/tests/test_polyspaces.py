"""Bases of polynomial spaces: orthonormality, dimensions, decompositions,
traces, and projection against an independent raw-monomial oracle."""

import numpy as np
import pytest

from polyddr.mesh import Mesh, generate_cubic_mesh, generate_tet_mesh, agglomerate_pairs
from polyddr.quadrature import entity_rule, integrate
from polyddr.polyspaces import (
    BasisBank,
    dim_P,
    space_dim,
    scalar_basis,
    vector_basis,
    subspace_basis,
    l2_project,
    recovery,
    projection_overlap,
    isomorphism_matrix,
)

import oracles
from oracles import Poly3, VecPoly3, integrate_poly_cell, count_monomials


def pyramid_mesh():
    verts = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.1, 0.0, 0.0],
            [1.0, 1.2, 0.0],
            [0.0, 0.9, 0.0],
            [0.3, 0.4, 0.9],
        ]
    )
    faces = [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return Mesh(verts, faces, [[0, 1, 2, 3, 4]])


@pytest.fixture(scope="module")
def meshes():
    return {
        "cube": generate_cubic_mesh(1),
        "tet": generate_tet_mesh(1),
        "pyr": pyramid_mesh(),
        "agglo": agglomerate_pairs(generate_cubic_mesh(2), seed=0),
    }


def big_cell(mesh):
    counts = [len(c) for c in mesh.cells]
    return int(np.argmax(counts))


ENTITIES = [
    ("cube", "face", 0),
    ("pyr", "face", 0),
    ("pyr", "face", 1),
    ("cube", "cell", 0),
    ("tet", "cell", 0),
    ("pyr", "cell", 0),
]

VEC_FAMILIES = ["grad_image", "grad_complement", "curl_image", "curl_complement"]


# ----------------------------------------------------------------------
# dimensions


def test_dim_P_matches_enumeration():
    for d in (1, 2, 3):
        for l in range(6):
            assert dim_P(l, d) == count_monomials(l, d)
    assert dim_P(-1, 3) == 0


def test_space_dims_consistent_with_direct_sums():
    for d in (2, 3):
        for l in range(5):
            full = 2 * dim_P(l, 2) if d == 2 else 3 * dim_P(l, 3)
            assert (
                space_dim("grad_image", l, d)
                + space_dim("grad_complement", l, d)
                == full
            )
            assert (
                space_dim("curl_image", l, d)
                + space_dim("curl_complement", l, d)
                == full
            )


def test_classic_trimmed_dimensions():
    assert space_dim("nedelec", 1, 3) == 6
    assert space_dim("raviart_thomas", 1, 3) == 4
    assert space_dim("nedelec", 2, 3) == 20
    assert space_dim("raviart_thomas", 2, 3) == 15
    assert space_dim("nedelec", 1, 2) == 3
    assert space_dim("raviart_thomas", 1, 2) == 3


@pytest.mark.parametrize("name,kind,idx", ENTITIES)
@pytest.mark.parametrize("l", [0, 1, 2])
def test_subspace_dims_realized(meshes, name, kind, idx, l):
    mesh = meshes[name]
    d = 2 if kind == "face" else 3
    for fam in VEC_FAMILIES:
        b = subspace_basis(mesh, kind, idx, fam, l)
        assert b.dim == space_dim(fam, l, d)


# ----------------------------------------------------------------------
# orthonormality and prefix structure


@pytest.mark.parametrize("name,kind,idx", ENTITIES)
def test_scalar_gram_identity(meshes, name, kind, idx):
    mesh = meshes[name]
    l = 3
    rule = entity_rule(mesh, kind, idx, 2 * l + 2)
    b = scalar_basis(mesh, kind, idx, l)
    V = b.eval(rule.points)
    G = np.einsum("ip,jp,p->ij", V, V, rule.weights)
    assert np.abs(G - np.eye(b.dim)).max() < 1e-10


@pytest.mark.parametrize("name,kind,idx", ENTITIES)
@pytest.mark.parametrize("fam", VEC_FAMILIES)
def test_subspace_gram_identity(meshes, name, kind, idx, fam):
    mesh = meshes[name]
    l = 2
    b = subspace_basis(mesh, kind, idx, fam, l)
    if b.dim == 0:
        return
    rule = entity_rule(mesh, kind, idx, 2 * l + 2)
    V = b.eval(rule.points)
    G = np.einsum("ipx,jpx,p->ij", V, V, rule.weights)
    assert np.abs(G - np.eye(b.dim)).max() < 1e-10
    assert np.abs(b.gram() - np.eye(b.dim)).max() < 1e-12


def test_first_member_is_normalized_constant(meshes):
    mesh = meshes["pyr"]
    b = scalar_basis(mesh, "cell", 0, 2)
    pts = mesh.cell_centroids[:1] + np.array(
        [[0.0, 0.0, 0.1], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]]
    )
    vals = b.eval(pts)[0]
    vol = mesh.cell_volumes[0]
    assert np.allclose(vals, vol ** -0.5, rtol=1e-12)


def test_scalar_prefix_property(meshes):
    mesh = meshes["pyr"]
    rng = np.random.default_rng(3)
    pts = mesh.cell_centroids[0] + 0.2 * rng.standard_normal((7, 3))
    lo = scalar_basis(mesh, "cell", 0, 1).eval(pts)
    hi = scalar_basis(mesh, "cell", 0, 3).eval(pts)
    assert np.abs(hi[: len(lo)] - lo).max() < 1e-11


def test_trimmed_gram_matches_quadrature(meshes):
    mesh = meshes["pyr"]
    for fam in ("nedelec", "raviart_thomas"):
        b = subspace_basis(mesh, "cell", 0, fam, 2)
        assert not b.orthonormal
        rule = entity_rule(mesh, "cell", 0, 8)
        V = b.eval(rule.points)
        G = np.einsum("ipx,jpx,p->ij", V, V, rule.weights)
        assert np.abs(G - b.gram()).max() < 1e-10


# ----------------------------------------------------------------------
# derivative evaluations against finite differences


def _fd_grad(f, pts, h=1e-6):
    out = np.zeros((len(pts), 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        out[:, a] = (f(pts + e) - f(pts - e)) / (2 * h)
    return out


def test_scalar_grad_matches_fd(meshes):
    mesh = meshes["pyr"]
    b = scalar_basis(mesh, "cell", 0, 3)
    rng = np.random.default_rng(5)
    pts = mesh.cell_centroids[0] + 0.15 * rng.standard_normal((5, 3))
    g = b.grad(pts)
    for i in range(b.dim):
        fd = _fd_grad(lambda q, i=i: b.eval(q)[i], pts)
        assert np.abs(g[i] - fd).max() < 1e-5


def test_vector_div_curl_match_fd(meshes):
    mesh = meshes["pyr"]
    b = vector_basis(mesh, "cell", 0, 2)
    rng = np.random.default_rng(6)
    pts = mesh.cell_centroids[0] + 0.15 * rng.standard_normal((4, 3))
    dv = b.div(pts)
    cv = b.curl(pts)
    h = 1e-6
    for i in range(b.dim):
        jac = np.zeros((len(pts), 3, 3))  # jac[p, component, axis]
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            jac[:, :, a] = (b.eval(pts + e)[i] - b.eval(pts - e)[i]) / (2 * h)
        div_fd = jac[:, 0, 0] + jac[:, 1, 1] + jac[:, 2, 2]
        curl_fd = np.stack(
            [
                jac[:, 2, 1] - jac[:, 1, 2],
                jac[:, 0, 2] - jac[:, 2, 0],
                jac[:, 1, 0] - jac[:, 0, 1],
            ],
            axis=-1,
        )
        assert np.abs(dv[i] - div_fd).max() < 1e-5
        assert np.abs(cv[i] - curl_fd).max() < 1e-5


def test_face_members_are_tangent(meshes):
    mesh = meshes["pyr"]
    for f in range(mesh.num_faces):
        rule = entity_rule(mesh, "face", f, 4)
        n = mesh.face_normals[f]
        for fam in VEC_FAMILIES:
            b = subspace_basis(mesh, "face", f, fam, 2)
            if b.dim == 0:
                continue
            V = b.eval(rule.points)
            assert np.abs(V @ n).max() < 1e-11


# ----------------------------------------------------------------------
# decompositions, hierarchy, recovery


@pytest.mark.parametrize("name,kind,idx", ENTITIES)
@pytest.mark.parametrize("pair", [("grad_image", "grad_complement"),
                                  ("curl_image", "curl_complement")])
@pytest.mark.parametrize("l", [1, 2])
def test_direct_sum_spans_full_space(meshes, name, kind, idx, pair, l):
    mesh = meshes[name]
    bs = subspace_basis(mesh, kind, idx, pair[0], l)
    bc = subspace_basis(mesh, kind, idx, pair[1], l)
    d = 2 if kind == "face" else 3
    full = (2 if d == 2 else 3) * dim_P(l, d)
    M = np.vstack([bs.coeff_matrix(), bc.coeff_matrix()])
    assert M.shape == (full, full)
    sig = projection_overlap(bs, bc)
    assert sig < 1.0 - 1e-8
    assert np.linalg.cond(M) < 1e6

    rng = np.random.default_rng(11)
    a = rng.standard_normal(full)
    b = bs.coeff_matrix() @ a
    c = bc.coeff_matrix() @ a
    back = recovery(bs, bc, b, c)
    assert np.abs(back - a).max() < 1e-9


@pytest.mark.parametrize("fam", ["grad_complement", "curl_complement"])
def test_complement_hierarchy_nested(meshes, fam):
    mesh = meshes["agglo"]
    c = big_cell(mesh)
    for l in (1, 2, 3):
        lo = subspace_basis(mesh, "cell", c, fam, l - 1)
        hi = subspace_basis(mesh, "cell", c, fam, l)
        if lo.dim == 0:
            continue
        Wlo = np.zeros((lo.dim, hi.coeff_matrix().shape[1]))
        Wlo[:, : lo.coeff_matrix().shape[1]] = lo.coeff_matrix()
        Whi = hi.coeff_matrix()
        resid = Wlo - (Wlo @ Whi.T) @ Whi
        assert np.abs(resid).max() < 1e-10


def test_image_families_are_not_nested(meshes):
    # gradients of degree l+1 scalars are not contained in gradients of
    # degree l+2 scalars' complement; sanity check that the hierarchy
    # holds for complements only, by exhibiting a non-member
    mesh = meshes["cube"]
    lo = subspace_basis(mesh, "cell", 0, "curl_image", 0)
    hi = subspace_basis(mesh, "cell", 0, "curl_complement", 1)
    Wlo = np.zeros((lo.dim, hi.coeff_matrix().shape[1]))
    Wlo[:, : lo.coeff_matrix().shape[1]] = lo.coeff_matrix()
    Whi = hi.coeff_matrix()
    resid = Wlo - (Wlo @ Whi.T) @ Whi
    assert np.abs(resid).max() > 0.1


# ----------------------------------------------------------------------
# bijective differential maps


@pytest.mark.parametrize("name,which,kind", [
    ("cube", "face_rot", "face"),
    ("pyr", "face_rot", "face"),
    ("cube", "face_div", "face"),
    ("pyr", "face_div", "face"),
    ("cube", "cell_div", "cell"),
    ("pyr", "cell_div", "cell"),
    ("agglo", "cell_div", "cell"),
    ("cube", "cell_curl", "cell"),
    ("pyr", "cell_curl", "cell"),
    ("agglo", "cell_curl", "cell"),
])
@pytest.mark.parametrize("l", [1, 2])
def test_isomorphism_matrices_invertible(meshes, name, which, kind, l):
    mesh = meshes[name]
    idx = big_cell(mesh) if (kind == "cell" and name == "agglo") else 0
    M = isomorphism_matrix(mesh, kind, idx, which, l)
    assert M.shape[0] == M.shape[1]
    if M.shape[0] == 0:
        return
    assert np.linalg.cond(M) < 1e5


# ----------------------------------------------------------------------
# traces of trimmed spaces


def _edge_poly_residual(mesh, e, vals, rule, degree):
    """Distance from scalar edge values to polynomials of the degree."""
    if degree < 0:
        return float(np.abs(vals).max()) if vals.size else 0.0
    b = scalar_basis(mesh, "edge", e, degree)
    B = b.eval(rule.points)
    coeff = B @ (rule.weights * vals)
    return float(np.abs(vals - coeff @ B).max())


@pytest.mark.parametrize("name,f", [("cube", 0), ("pyr", 0), ("pyr", 2)])
@pytest.mark.parametrize("l", [1, 2, 3])
def test_face_trimmed_edge_traces(meshes, name, f, l):
    mesh = meshes[name]
    ne = subspace_basis(mesh, "face", f, "nedelec", l)
    rt = subspace_basis(mesh, "face", f, "raviart_thomas", l)
    for j, e in enumerate(mesh.face_edges[f]):
        rule = entity_rule(mesh, "edge", e, 2 * l + 2)
        t = mesh.edge_tangents[e]
        nfe = mesh.face_edge_normals[f][j]
        Vn = ne.eval(rule.points)
        Vr = rt.eval(rule.points)
        scale = 1.0 + max(np.abs(Vn).max(), np.abs(Vr).max())
        for i in range(ne.dim):
            r = _edge_poly_residual(mesh, e, Vn[i] @ t, rule, l - 1)
            assert r < 1e-9 * scale
        for i in range(rt.dim):
            r = _edge_poly_residual(mesh, e, Vr[i] @ nfe, rule, l - 1)
            assert r < 1e-9 * scale


@pytest.mark.parametrize("name", ["cube", "pyr", "agglo"])
@pytest.mark.parametrize("l", [1, 2])
def test_cell_trimmed_traces(meshes, name, l):
    mesh = meshes[name]
    c = big_cell(mesh) if name == "agglo" else 0
    ne = subspace_basis(mesh, "cell", c, "nedelec", l)
    rt = subspace_basis(mesh, "cell", c, "raviart_thomas", l)

    for e in mesh.cell_edges[c]:
        rule = entity_rule(mesh, "edge", e, 2 * l + 2)
        t = mesh.edge_tangents[e]
        V = ne.eval(rule.points)
        scale = 1.0 + np.abs(V).max()
        for i in range(ne.dim):
            r = _edge_poly_residual(mesh, e, V[i] @ t, rule, l - 1)
            assert r < 1e-9 * scale

    for f in mesh.cells[c]:
        rule = entity_rule(mesh, "face", f, 2 * l + 4)
        n = mesh.face_normals[f]

        # tangential rotation of edge-type members lies in the trimmed
        # normal-type face space
        face_rt = subspace_basis(mesh, "face", f, "raviart_thomas", l)
        V = ne.eval(rule.points)
        B = face_rt.eval(rule.points)
        scale = 1.0 + np.abs(V).max()
        for i in range(ne.dim):
            g = np.cross(V[i], n[None, :])
            coeff = l2_project(face_rt, g, rule=rule)
            resid = g - np.einsum("s,spx->px", coeff, B)
            assert np.abs(resid).max() < 1e-9 * scale

        # normal component of face-type members is a scalar of degree l-1
        sb = scalar_basis(mesh, "face", f, l - 1)
        Bs = sb.eval(rule.points)
        V = rt.eval(rule.points)
        scale = 1.0 + np.abs(V).max()
        for i in range(rt.dim):
            vals = V[i] @ n
            coeff = Bs @ (rule.weights * vals)
            assert np.abs(vals - coeff @ Bs).max() < 1e-9 * scale


# ----------------------------------------------------------------------
# projections against an independent oracle


def test_projection_reproduces_members(meshes):
    mesh = meshes["agglo"]
    c = big_cell(mesh)
    rng = np.random.default_rng(17)
    for fam in VEC_FAMILIES:
        b = subspace_basis(mesh, "cell", c, fam, 2)
        a = rng.standard_normal(b.dim)
        rule = entity_rule(mesh, "cell", c, 6)
        V = b.eval(rule.points)
        f = np.einsum("s,spx->px", a, V)
        back = l2_project(b, f, rule=rule)
        assert np.abs(back - a).max() < 1e-10


def test_scalar_projection_vs_raw_monomial_oracle(meshes):
    mesh = meshes["pyr"]
    rng = np.random.default_rng(23)
    f = Poly3.random(rng, 4)
    l = 2

    exps = [
        (a, b, c)
        for a in range(l + 1)
        for b in range(l + 1)
        for c in range(l + 1)
        if a + b + c <= l
    ]
    exps.sort()
    G = np.zeros((len(exps), len(exps)))
    rhs = np.zeros(len(exps))
    monos = [Poly3({e: 1.0}) for e in exps]
    for i, mi in enumerate(monos):
        rhs[i] = integrate_poly_cell(f * mi, mesh, 0)
        for j, mj in enumerate(monos):
            G[i, j] = integrate_poly_cell(mi * mj, mesh, 0)
    coef = np.linalg.solve(G, rhs)

    basis = scalar_basis(mesh, "cell", 0, l)
    rule = entity_rule(mesh, "cell", 0, 2 * 4)
    pkg = l2_project(basis, lambda p: f.eval(p), rule=rule)

    pts = mesh.cell_centroids[0] + 0.2 * rng.standard_normal((9, 3))
    oracle_vals = sum(c * m.eval(pts) for c, m in zip(coef, monos))
    pkg_vals = pkg @ basis.eval(pts)
    assert np.abs(pkg_vals - oracle_vals).max() < 1e-9


def test_face_projection_keeps_tangential_part(meshes):
    mesh = meshes["pyr"]
    rng = np.random.default_rng(29)
    v = VecPoly3.random(rng, 2)
    for f in (0, 1):
        n = mesh.face_normals[f]
        basis = vector_basis(mesh, "face", f, 2)
        rule = entity_rule(mesh, "face", f, 8)
        coeff = l2_project(basis, lambda p: v.eval(p), rule=rule)
        got = np.einsum("s,spx->px", coeff, basis.eval(rule.points))
        full = v.eval(rule.points)
        tang = full - np.outer(full @ n, n)
        assert np.abs(got - tang).max() < 1e-10


def test_gradients_project_onto_image_family(meshes):
    mesh = meshes["agglo"]
    c = big_cell(mesh)
    rng = np.random.default_rng(31)
    q = Poly3.random(rng, 3)
    g = q.grad()
    b = subspace_basis(mesh, "cell", c, "grad_image", 2)
    rule = entity_rule(mesh, "cell", c, 8)
    coeff = l2_project(b, lambda p: g.eval(p), rule=rule)
    got = np.einsum("s,spx->px", coeff, b.eval(rule.points))
    assert np.abs(got - g.eval(rule.points)).max() < 1e-9


def test_curls_project_onto_curl_image(meshes):
    mesh = meshes["agglo"]
    c = big_cell(mesh)
    rng = np.random.default_rng(37)
    v = VecPoly3.random(rng, 3)
    w = v.curl()
    b = subspace_basis(mesh, "cell", c, "curl_image", 2)
    rule = entity_rule(mesh, "cell", c, 8)
    coeff = l2_project(b, lambda p: w.eval(p), rule=rule)
    got = np.einsum("s,spx->px", coeff, b.eval(rule.points))
    assert np.abs(got - w.eval(rule.points)).max() < 1e-9


# ----------------------------------------------------------------------
# bank consistency


def test_bank_caches_and_matches_standalone(meshes):
    mesh = meshes["pyr"]
    bank = BasisBank(mesh, 1)
    b1 = bank.subspace("cell", 0, "curl_complement", 2)
    b2 = bank.subspace("cell", 0, "curl_complement", 2)
    assert b1 is b2

    alone = subspace_basis(mesh, "cell", 0, "curl_complement", 2)
    Wa = b1.coeff_matrix()
    Wb = alone.coeff_matrix()
    w = max(Wa.shape[1], Wb.shape[1])
    Pa = np.zeros((Wa.shape[0], w))
    Pa[:, : Wa.shape[1]] = Wa
    Pb = np.zeros((Wb.shape[0], w))
    Pb[:, : Wb.shape[1]] = Wb
    assert np.abs(Pa.T @ Pa - Pb.T @ Pb).max() < 1e-9


def test_bank_rule_cache_degrees(meshes):
    mesh = meshes["cube"]
    bank = BasisBank(mesh, 0)
    r1 = bank.rule("cell", 0)
    assert r1.exactness_degree >= 4
    r2 = bank.rule("cell", 0, 10)
    assert r2.exactness_degree >= 10
    assert bank.rule("cell", 0) is r1


def test_degenerate_entity_raises():
    verts = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.5, 0.5, 1e-16],
        ]
    )
    faces = [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    with pytest.raises(Exception):
        mesh = Mesh(verts, faces, [[0, 1, 2, 3, 4]])
        scalar_basis(mesh, "cell", 0, 3)
