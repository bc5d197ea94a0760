import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_galerkin.basis import (BasisSet, BoundaryMask, InputEmbedding, NetworkArchitecture, init_random,
                                   init_sfli, load_checkpoint, save_checkpoint)
from neural_galerkin.errors import ShapeMismatch
from neural_galerkin.problems import make_problem
from neural_galerkin.quadrature import Box, gauss_legendre_1d
from oracles import central_diff, rel_err, tanh_net


def test_lecun_biases_zero():
    p = init_random(NetworkArchitecture(3, (10, 10)), "lecun", 11)
    assert all(np.all(b == 0.0) for b in p.biases)


@pytest.mark.parametrize("scheme", ["lecun", "glorot"])
def test_init_deterministic(scheme):
    arch = NetworkArchitecture(2, (8, 5))
    assert init_random(arch, scheme, 3).equals(init_random(arch, scheme, 3))
    assert not init_random(arch, scheme, 3).equals(init_random(arch, scheme, 4))


def test_lecun_variance():
    # fan_in 1e4 with 100 rows -> 1e6 samples
    W = init_random(NetworkArchitecture(10_000, (100,)), "lecun", 0).weights[0]
    assert W.size == 10**6
    assert abs(W.var() - 1e-4) <= 0.05e-4


def test_glorot_bounds():
    W = init_random(NetworkArchitecture(30, (20,)), "glorot", 0).weights[0]
    lim = np.sqrt(6.0 / 50)
    assert np.all(np.abs(W) <= lim)
    assert np.abs(W).max() > 0.9 * lim


def test_architecture_validation():
    with pytest.raises(ValueError):
        NetworkArchitecture(1, ())
    with pytest.raises(ValueError):
        NetworkArchitecture(1, (3, 0))


def test_sfli_centres_and_neuron_zero():
    p = init_sfli(NetworkArchitecture(1, (3, 4)), Box((-1.0,), (1.0,)), slope=1.0, seed=0)
    W, b = p.weights[0], p.biases[0]
    centres = -b / W[:, 0]
    assert np.allclose(centres, [-1.0, 0.0, 1.0])
    # neuron at centre 0 evaluated at x = 0
    assert np.tanh(W[1, 0] * 0.0 + b[1]) == 0.0


def test_sfli_deeper_layers_match_lecun():
    arch = NetworkArchitecture(1, (5, 6, 7))
    s = init_sfli(arch, Box((0.0,), (1.0,)), seed=9)
    r = init_random(arch, "lecun", 9)
    assert all(np.array_equal(a, b) for a, b in zip(s.weights[1:], r.weights[1:]))


def test_sfli_default_slope_and_multi_d_split():
    arch = NetworkArchitecture(2, (7, 3))
    p = init_sfli(arch, Box((0.0, -1.0), (1.0, 1.0)), seed=0)
    W = p.weights[0]
    on_x = W[:, 0] != 0
    assert on_x.sum() == 4 and (W[:, 1] != 0).sum() == 3
    assert np.all((W[:, 0] == 0) | (W[:, 1] == 0))
    assert np.allclose(W[on_x, 0], 4 / 1.0)
    assert np.allclose(W[~on_x, 1], 3 / 2.0)


def test_sfli_spatial_separation():
    """Gram entry of two first-layer neurons that sit far apart is below the diagonal."""
    s = 10.0
    p = init_sfli(NetworkArchitecture(1, (2,)), Box((-0.5,), (0.5,)), slope=s)
    centres = -p.biases[0] / p.weights[0][:, 0]
    assert abs(centres[1] - centres[0]) >= 2 / s
    x, w = gauss_legendre_1d(200, (-0.5, 0.5))
    F = np.tanh(x[:, None] * p.weights[0][:, 0] + p.biases[0])
    G = F.T @ (w[:, None] * F)
    assert abs(G[0, 1]) < min(G[0, 0], G[1, 1])


def test_periodic_embedding_at_zero():
    emb = InputEmbedding(2, "periodic", (1.0, 1.0))
    z0, _, _ = emb.apply(np.zeros((1, 2)))
    assert np.array_equal(z0[0], [1.0, 0.0, 1.0, 0.0])
    assert emb.output_dim == 4
    assert InputEmbedding(3).output_dim == 3


def _basis(d=2, widths=(8, 8, 6), kind="identity", mask=None, ic=None, seed=0, const=True):
    emb = InputEmbedding(d, kind, (1.0,) * d if kind == "periodic" else ())
    arch = NetworkArchitecture(emb.output_dim, widths)
    return BasisSet(init_random(arch, "lecun", seed), emb, mask or BoundaryMask(), ic, const)


def test_forward_matches_plain_net(rng):
    b = _basis()
    x = rng.uniform(-0.5, 0.5, (11, 2))
    vals, _ = b.evaluate(x, grad=False)
    ref = tanh_net(b.params.weights, b.params.biases, x)
    assert np.allclose(vals[:, :-1], ref, atol=1e-15)
    assert np.all(vals[:, -1] == 1.0)


def test_dirichlet_boundary_row_is_zero(rng):
    mask = BoundaryMask.dirichlet_box((-0.5, -0.5), (0.5, 0.5))
    b = _basis(mask=mask)
    x = rng.uniform(-0.5, 0.5, (9, 2))
    x[:, 1] = 0.5
    vals, _ = b.evaluate(x, grad=False)
    assert np.all(vals == 0.0)
    inner = b.evaluate(np.zeros((1, 2)), grad=False)[0]
    assert inner[0, -1] == pytest.approx(0.0625)


def test_ic_slot_reproduces_initial_condition(rng):
    p = make_problem("heat_2d")
    b = _basis(mask=BoundaryMask.dirichlet_box(p.domain.lower, p.domain.upper), ic=p.ic)
    x = rng.uniform(-0.5, 0.5, (10, 2))
    beta = np.zeros(b.n_basis)
    beta[0] = 1.0
    vals, _ = b.evaluate(x, grad=False)
    assert np.max(np.abs(vals @ beta - p.ic.values(x))) <= 1e-14
    assert b.n_basis == 1 + 6 + 1


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        _basis().evaluate(np.zeros((3, 3)))


def test_constant_column_gradient_zero(rng):
    _, g = _basis().evaluate(rng.uniform(-1, 1, (5, 2)))
    assert np.all(g[:, -1, :] == 0.0)


def test_single_neuron_slope():
    s = 2.5
    p = init_sfli(NetworkArchitecture(1, (1,)), Box((-1.0,), (1.0,)), slope=s)
    b = BasisSet(p, InputEmbedding(1), include_constant=False)
    _, g = b.evaluate(np.zeros((1, 1)))
    assert g[0, 0, 0] == pytest.approx(s, rel=1e-15)


def _fd_check(b, x):
    _, g = b.evaluate(x)
    n, nb, d = g.shape
    for i in range(n):
        for k in range(nb):
            fd = central_diff(lambda y: b.evaluate(y[None, :], grad=False)[0][0, k], x[i])
            assert rel_err(g[i, k], fd) <= 1e-6 or np.linalg.norm(g[i, k] - fd) <= 1e-9


@pytest.mark.parametrize("kind", ["identity", "periodic"])
def test_gradients_finite_difference(rng, kind):
    mask = BoundaryMask.dirichlet_box((-0.5, -0.5), (0.5, 0.5)) if kind == "identity" else None
    b = _basis(kind=kind, mask=mask, seed=4)
    _fd_check(b, rng.uniform(-0.5, 0.5, (20, 2)))


@pytest.mark.parametrize("widths,d", [((50, 50, 50, 256), 2), ((128, 128, 128), 1), ((200,), 3)])
def test_gradients_table_architectures(rng, widths, d):
    b = _basis(d=d, widths=widths, seed=1)
    x = rng.uniform(-0.5, 0.5, (3, d))
    _, g = b.evaluate(x)
    for i in range(3):
        for k in rng.choice(b.n_basis, 12, replace=False):
            fd = central_diff(lambda y: b.evaluate(y[None, :], grad=False)[0][0, k], x[i])
            assert np.linalg.norm(g[i, k] - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), shift=st.integers(-3, 3), j=st.integers(0, 1))
def test_periodicity(seed, shift, j):
    b = _basis(kind="periodic", seed=seed)
    x = np.random.default_rng(seed).uniform(0, 1, (6, 2))
    y = x.copy()
    y[:, j] += shift
    assert np.allclose(b.evaluate(x, grad=False)[0], b.evaluate(y, grad=False)[0], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), face=st.integers(0, 3))
def test_dirichlet_vanishes_on_faces(seed, face):
    b = _basis(mask=BoundaryMask.dirichlet_box((-0.5, -0.5), (0.5, 0.5)), seed=seed)
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, (8, 2))
    x[:, face // 2] = 0.5 if face % 2 else -0.5
    assert np.max(np.abs(b.evaluate(x, grad=False)[0])) <= 1e-16


def test_chunked_evaluation_consistent(rng):
    from neural_galerkin import basis as bm
    b = _basis()
    x = rng.uniform(-1, 1, (bm.CHUNK + 7, 2))
    v1, g1 = b.evaluate(x)
    v2, g2 = b.with_transform(None).evaluate(x[-7:].copy())
    assert np.allclose(v1[-7:], v2) and np.allclose(g1[-7:], g2)


def test_checkpoint_roundtrip(tmp_path):
    emb = InputEmbedding(1, "periodic", (2.0,), time_input=True)
    p = init_random(NetworkArchitecture(emb.output_dim, (4, 3)), "glorot", 5)
    head = np.arange(3.0)
    path = tmp_path / "c.ngck"
    save_checkpoint(path, p, emb, seed=5, head=head, extra={"k": 1})
    raw = path.read_bytes()
    assert raw.startswith(b"NGCKPT 1\n")
    ck = load_checkpoint(path)
    assert ck.params.equals(p) and ck.embedding == emb and ck.seed == 5
    assert np.array_equal(ck.head, head) and ck.extra == {"k": 1}
    # weight blocks follow the header as little-endian doubles
    body = raw[raw.index(b"\n", 9) + 1:]
    assert np.array_equal(np.frombuffer(body[:8 * p.weights[0].size], "<f8"), p.weights[0].ravel())


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(path)
