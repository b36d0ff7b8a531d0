"""Stabilized products and norms: symmetry, positivity, vanishing of the
stabilization on interpolates, exactness against the polynomial oracle,
kernel ranks, norm equivalence, assembly, and graph-norm identities."""

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from polyddr.mesh import Mesh, generate_cubic_mesh, generate_tet_mesh, agglomerate_pairs
from polyddr.polyspaces import BasisBank, dim_P
from polyddr.ddrcore import make_space, interpolate, global_operator
from polyddr.products import (
    LocalBilinearForm,
    stabilization,
    l2_product,
    component_gram,
    component_norm,
    assemble_product,
    graph_norms,
)

from oracles import Poly3, VecPoly3, integrate_poly_cell


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


MESHES = {
    "cube": lambda: generate_cubic_mesh(1),
    "tet": lambda: generate_tet_mesh(1),
    "pyr": lambda: pyramid_mesh(),
    "agglo": lambda: agglomerate_pairs(generate_cubic_mesh(2), seed=0),
}


@pytest.fixture(scope="module")
def ctx():
    meshes = {name: make() for name, make in MESHES.items()}
    cache = {}

    def spaces(name, k):
        key = (name, k)
        if key not in cache:
            mesh = meshes[name]
            bank = BasisBank(mesh, k)
            cache[key] = {
                w: make_space(mesh, w, k, bank=bank)
                for w in ("grad", "curl", "div", "l2")
            }
        return cache[key]

    class Ctx:
        pass

    out = Ctx()
    out.meshes = meshes
    out.spaces = spaces
    return out


def big_cell(mesh):
    return int(np.argmax([len(c) for c in mesh.cells]))


CASES = [
    ("cube", 0, 0),
    ("cube", 1, 0),
    ("cube", 2, 0),
    ("tet", 0, 0),
    ("tet", 1, 0),
    ("tet", 2, 3),
    ("pyr", 0, 0),
    ("pyr", 1, 0),
    ("pyr", 2, 0),
    ("agglo", 0, None),
    ("agglo", 1, None),
]

WHICHES = ("grad", "curl", "div")
VARIANTS = ("trace", "interpolation")


def _cell_of(ctx, name, c):
    return big_cell(ctx.meshes[name]) if c is None else c


def _random_field(which, k, rng):
    """An oracle polynomial the potential reconstruction reproduces, plus
    a callable for the interpolator."""
    if which == "grad":
        p = Poly3.random(rng, k + 1)
        return p, lambda pts: p.eval(pts)
    p = VecPoly3.random(rng, k)
    return p, lambda pts: p.eval(pts)


# ----------------------------------------------------------------------
# structure of the local forms


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_stabilization_symmetric_psd(ctx, name, k, c, which, variant):
    c = _cell_of(ctx, name, c)
    space = ctx.spaces(name, k)[which]
    form = stabilization(space, c, variant)
    S = form.matrix
    assert np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max()))
    eigs = la.eigvalsh(0.5 * (S + S.T))
    assert eigs.min() >= -1e-10 * max(1.0, eigs.max())


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_product_positive_definite(ctx, name, k, c, which, variant):
    c = _cell_of(ctx, name, c)
    space = ctx.spaces(name, k)[which]
    M = l2_product(space, c, variant).matrix
    eigs = la.eigvalsh(0.5 * (M + M.T))
    assert eigs.min() > 1e-10 * eigs.max(), (eigs.min(), eigs.max())


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_stabilization_vanishes_on_interpolates(ctx, name, k, c, which, variant):
    c = _cell_of(ctx, name, c)
    sp = ctx.spaces(name, k)
    space = sp[which]
    rng = np.random.default_rng(17 * k + hash(name) % 101)
    _, fn = _random_field(which, k, rng)
    v = interpolate(space, fn).values
    form = stabilization(space, c, variant)
    prod = l2_product(space, c, variant)
    err = abs(form.apply(v, v))
    scale = max(prod.apply(v, v), 1e-14)
    assert err <= 1e-10 * scale, (err, scale)


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES + ("l2",))
@pytest.mark.parametrize("variant", VARIANTS)
def test_product_matches_continuous_on_interpolates(ctx, name, k, c, which, variant):
    mesh = ctx.meshes[name]
    space = ctx.spaces(name, k)[which]
    rng = np.random.default_rng(23 + 7 * k)
    deg = k if which != "grad" else k + 1
    if which in ("grad", "l2"):
        p = Poly3.random(rng, deg if which == "grad" else k)
        q = Poly3.random(rng, deg if which == "grad" else k)
        fp = lambda pts: p.eval(pts)
        fq = lambda pts: q.eval(pts)
        integrand = p * q
    else:
        p = VecPoly3.random(rng, deg)
        q = VecPoly3.random(rng, deg)
        fp = lambda pts: p.eval(pts)
        fq = lambda pts: q.eval(pts)
        integrand = p.dot_poly(q)
    vp = interpolate(space, fp).values
    vq = interpolate(space, fq).values
    got = sum(
        l2_product(space, cc, variant).apply(vp, vq)
        for cc in range(mesh.num_cells)
    )
    want = sum(
        integrate_poly_cell(integrand, mesh, cc)
        for cc in range(mesh.num_cells)
    )
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want)), (got, want)


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES)
@pytest.mark.parametrize("variant", VARIANTS)
def test_stabilization_kernel_is_polynomial_interpolates(ctx, name, k, c, which, variant):
    c = _cell_of(ctx, name, c)
    space = ctx.spaces(name, k)[which]
    S = stabilization(space, c, variant).matrix
    n = S.shape[0]
    scale = np.abs(l2_product(space, c, variant).matrix).max()
    sv = la.svdvals(0.5 * (S + S.T))
    rank = int(np.sum(sv > 1e-8 * scale))
    kernel = dim_P(k + 1, 3) if which == "grad" else 3 * dim_P(k, 3)
    assert rank == n - kernel, (rank, n, kernel)


def test_local_form_apply():
    M = np.array([[2.0, 1.0], [1.0, 3.0]])
    form = LocalBilinearForm(("cell", 0), np.array([4, 7]), M)
    v = np.zeros(9)
    w = np.zeros(9)
    v[4], v[7] = 1.0, 2.0
    w[4], w[7] = -1.0, 1.0
    assert form.apply(v, w) == pytest.approx(v[[4, 7]] @ M @ w[[4, 7]])


# ----------------------------------------------------------------------
# component norms


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES + ("l2",))
def test_component_gram_positive_definite(ctx, name, k, c, which):
    c = _cell_of(ctx, name, c)
    space = ctx.spaces(name, k)[which]
    C = component_gram(space, c)
    eigs = la.eigvalsh(C)
    assert eigs.min() > 0, eigs.min()


@pytest.mark.parametrize("name,k", [("cube", 0), ("tet", 1), ("agglo", 0)])
@pytest.mark.parametrize("which", WHICHES + ("l2",))
def test_component_norm_definite(ctx, name, k, which):
    space = ctx.spaces(name, k)[which]
    rng = np.random.default_rng(5)
    v = rng.standard_normal(space.dim)
    assert component_norm(space, v) > 0
    assert component_norm(space, np.zeros(space.dim)) == 0.0


@pytest.mark.parametrize("name,k,c", CASES)
@pytest.mark.parametrize("which", WHICHES)
def test_product_component_norm_equivalence(ctx, name, k, c, which):
    c = _cell_of(ctx, name, c)
    space = ctx.spaces(name, k)[which]
    M = l2_product(space, c).matrix
    C = component_gram(space, c)
    eigs = la.eigvalsh(0.5 * (M + M.T), C)
    assert eigs.min() > 0
    # equivalence constants grow quickly with the degree; the bound only
    # guards against outright degeneracy
    assert eigs.max() / eigs.min() < 1e7, (eigs.min(), eigs.max())


# ----------------------------------------------------------------------
# assembly and graph norms


@pytest.mark.parametrize("name,k", [("tet", 0), ("tet", 1), ("agglo", 0)])
@pytest.mark.parametrize("which", WHICHES)
def test_assembled_product_matches_local_forms(ctx, name, k, which):
    mesh = ctx.meshes[name]
    space = ctx.spaces(name, k)[which]
    M = assemble_product(space)
    asym = abs(M - M.T).max()
    assert asym <= 1e-12 * max(1.0, abs(M).max())
    rng = np.random.default_rng(11)
    v = rng.standard_normal(space.dim)
    w = rng.standard_normal(space.dim)
    direct = sum(
        l2_product(space, c).apply(v, w) for c in range(mesh.num_cells)
    )
    assert float(v @ (M @ w)) == pytest.approx(direct, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name,k", [("tet", 0), ("tet", 1), ("agglo", 0)])
def test_graph_norms_drop_to_plain_norms_on_complex_images(ctx, name, k):
    """A discrete curl of a gradient vanishes, so the graph norm of a
    gradient field is its plain product norm; same for the divergence of
    a discrete curl."""
    sp = ctx.spaces(name, k)
    rng = np.random.default_rng(3)
    q = rng.standard_normal(sp["grad"].dim)
    v = rng.standard_normal(sp["curl"].dim)

    uG = global_operator(sp["grad"], sp["curl"])
    uC = global_operator(sp["curl"], sp["div"])
    H = uG @ q
    A = uC @ v

    gf, ga = graph_norms(sp["curl"], sp["div"], sp["l2"], H, A)
    Mc = assemble_product(sp["curl"])
    Md = assemble_product(sp["div"])
    assert gf == pytest.approx(np.sqrt(H @ (Mc @ H)), rel=1e-10)
    assert ga == pytest.approx(np.sqrt(A @ (Md @ A)), rel=1e-10)


def test_graph_norms_with_coefficient(ctx):
    sp = ctx.spaces("tet", 0)
    mesh = ctx.meshes["tet"]
    rng = np.random.default_rng(9)
    H = rng.standard_normal(sp["curl"].dim)
    A = rng.standard_normal(sp["div"].dim)
    mu = 1.0 + rng.random(mesh.num_cells)

    gf, ga = graph_norms(sp["curl"], sp["div"], sp["l2"], H, A, mu=mu)
    Mc = assemble_product(sp["curl"], coeff=mu)
    Md = assemble_product(sp["div"])
    uC = global_operator(sp["curl"], sp["div"])
    D = global_operator(sp["div"], sp["l2"])
    ch = uC @ H
    dv = D @ A
    want_f = np.sqrt(H @ (Mc @ H) + ch @ (Md @ ch))
    want_a = np.sqrt(A @ (Md @ A) + dv @ dv)
    assert gf == pytest.approx(want_f, rel=1e-12)
    assert ga == pytest.approx(want_a, rel=1e-12)


# ----------------------------------------------------------------------
# randomized inner-product laws


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_product_is_inner_product_random_vectors(ctx, seed):
    space = ctx.spaces("pyr", 1)["curl"]
    form = l2_product(space, 0)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(space.dim)
    v = rng.standard_normal(space.dim)
    uu = form.apply(u, u)
    vv = form.apply(v, v)
    uv = form.apply(u, v)
    assert uu >= 0 and vv >= 0
    assert uv == pytest.approx(form.apply(v, u), rel=1e-12, abs=1e-12)
    assert abs(uv) <= np.sqrt(uu * vv) * (1 + 1e-10) + 1e-12
