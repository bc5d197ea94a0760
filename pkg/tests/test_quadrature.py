import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_galerkin.errors import BudgetExceeded
from neural_galerkin.quadrature import Box, gauss_legendre_1d, gauss_tensor, monte_carlo, tensor_grid
from oracles import slope


def test_gauss_one_point():
    x, w = gauss_legendre_1d(1)
    assert x.tolist() == [0.0] and w.tolist() == [2.0]


def test_gauss_two_points():
    x, w = gauss_legendre_1d(2)
    assert np.allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    assert np.allclose(w, [1.0, 1.0], atol=1e-15)


def test_gauss_x4():
    x, w = gauss_legendre_1d(3)
    assert abs(w @ x ** 4 - 0.4) <= 1e-14


def test_gauss_rejects_zero():
    with pytest.raises(ValueError):
        gauss_legendre_1d(0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 60), a=st.floats(-3, 0), length=st.floats(0.1, 4))
def test_gauss_monomial_exactness(n, a, length):
    b = a + length
    x, w = gauss_legendre_1d(n, (a, b))
    assert np.all(w > 0) and np.all((x > a) & (x < b))
    for k in range(0, 2 * n):
        exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        scale = max(abs(a), abs(b)) ** k * length
        assert abs(w @ x ** k - exact) <= 1e-13 * max(abs(exact), scale)


def test_newton_nodes_are_roots():
    from neural_galerkin.quadrature import _legendre
    x, _ = gauss_legendre_1d(40)
    p, dp = _legendre(40, x)
    # one further Newton correction would move no node by more than 1e-14
    assert np.max(np.abs(p / dp)) <= 1e-14


def test_tensor_single_node():
    q = gauss_tensor(Box((-1.0, -2.0), (1.0, 2.0)), 1)
    assert q.nodes.tolist() == [[0.0, 0.0]]
    assert q.weights.tolist() == [8.0]


def test_tensor_separable_integral():
    q = gauss_tensor(Box.cube(-0.5, 0.5, 2), 12)
    f = np.cos(np.pi * q.nodes[:, 0]) ** 2 * np.cos(np.pi * q.nodes[:, 1]) ** 2
    assert abs(q.integrate(f) - 0.25) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(ns=st.lists(st.integers(1, 9), min_size=1, max_size=4))
def test_tensor_weight_sum_is_volume(ns):
    lo = tuple(-0.3 * (k + 1) for k in range(len(ns)))
    hi = tuple(0.7 * (k + 1) for k in range(len(ns)))
    box = Box(lo, hi)
    q = gauss_tensor(box, ns)
    assert q.size == int(np.prod(ns))
    assert abs(q.weights.sum() - box.volume) <= 1e-13 * box.volume
    assert np.all(box.contains(q.nodes))


def test_tensor_budget():
    with pytest.raises(BudgetExceeded):
        gauss_tensor(Box.cube(0, 1, 3), 100, node_cap=10**5)


def test_tensor_axes_kept():
    r = [gauss_legendre_1d(3), gauss_legendre_1d(4)]
    q = tensor_grid(r)
    assert [len(a) for a in q.axes] == [3, 4]
    # first axis slowest
    assert np.all(q.nodes[:4, 0] == q.nodes[0, 0])


@pytest.mark.parametrize("dim", [1, 3, 6])
def test_mc_basic(dim):
    box = Box.cube(-0.5, 0.5, dim)
    q = monte_carlo(box, 1000, 7)
    assert np.all(q.weights == box.volume / 1000)
    assert q.weights.sum() == pytest.approx(box.volume, rel=1e-14)
    assert q.integrate(np.ones(1000)) == pytest.approx(box.volume, rel=1e-14)
    assert np.all(box.contains(q.nodes))


def test_mc_deterministic_and_dimension_split():
    box2, box3 = Box.cube(0, 1, 2), Box.cube(0, 1, 3)
    a, b = monte_carlo(box2, 500, 3), monte_carlo(box2, 500, 3)
    assert np.array_equal(a.nodes, b.nodes)
    assert not np.array_equal(a.nodes, monte_carlo(box2, 500, 4).nodes)
    c = monte_carlo(box3, 500, 3)
    assert np.array_equal(a.nodes, c.nodes[:, :2])


def test_mc_10d_within_three_standard_errors():
    q = monte_carlo(Box.cube(-0.5, 0.5, 10), 10**6, 0)
    f = np.prod(np.cos(np.pi * q.nodes) ** 2, axis=1)
    est = q.integrate(f)
    se = f.std(ddof=1) / np.sqrt(f.size)
    assert abs(est - 2.0 ** -10) <= 3 * se


def test_mc_rate():
    box = Box.cube(-0.5, 0.5, 2)
    Ns = [10**3, 10**4, 10**5, 10**6]
    rms = []
    for N in Ns:
        errs = []
        for s in range(24):
            q = monte_carlo(box, N, 100 + s)
            errs.append(q.integrate(np.prod(np.cos(np.pi * q.nodes) ** 2, axis=1)) - 0.25)
        rms.append(np.sqrt(np.mean(np.square(errs))))
    assert abs(slope(Ns, rms) + 0.5) <= 0.15
