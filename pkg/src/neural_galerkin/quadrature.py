"""Quadrature rules on axis-aligned boxes: tensor Gauss-Legendre and Monte Carlo."""

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded

NODE_CAP = 10_000_000


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in dimension")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise ValueError("box must have positive extent in every dimension")

    @classmethod
    def cube(cls, a: float, b: float, dim: int) -> "Box":
        return cls((float(a),) * dim, (float(b),) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, points, tol=0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= np.asarray(self.lower) - tol) & (p <= np.asarray(self.upper) + tol), axis=1)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes (n, d) and positive weights (n,) on ``domain``.

    ``axes`` keeps the 1-D node sets of a tensor rule so callers can use
    separable fast paths; it is ``None`` for Monte Carlo rules.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    domain: Box
    axes: tuple = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> np.ndarray:
        """Weighted sum over the first axis of ``values``."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def _legendre(n, x):
    """P_n(x) and P_n'(x) by the three-term recurrence."""
    p0 = np.ones_like(x)
    p1 = x.copy()
    if n == 0:
        return p0, np.zeros_like(x)
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre_1d(n: int, interval=(-1.0, 1.0)):
    """Nodes and weights of the n-point Gauss-Legendre rule on ``interval``.

    Roots of P_n are found by Newton iteration from Chebyshev-like initial
    guesses; the rule is exact for polynomials of degree <= 2n - 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = float(interval[0]), float(interval[1])
    if n == 1:
        return np.array([0.5 * (a + b)]), np.array([b - a])
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # exact symmetry of the reference rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def tensor_grid(rules_1d, domain: Box = None, node_cap: int = NODE_CAP) -> QuadratureRule:
    """Cartesian product of 1-D rules ``[(nodes, weights), ...]`` (first axis slowest)."""
    rules_1d = list(rules_1d)
    if not rules_1d:
        raise ValueError("need at least one 1-D rule")
    total = int(np.prod([len(x) for x, _ in rules_1d], dtype=np.float64))
    if total > node_cap:
        raise BudgetExceeded(f"tensor rule needs {total} nodes, cap is {node_cap}")
    grids = np.meshgrid(*[x for x, _ in rules_1d], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = rules_1d[0][1]
    for _, w in rules_1d[1:]:
        weights = np.multiply.outer(weights, w)
    if domain is None:
        domain = Box(tuple(float(x.min()) for x, _ in rules_1d), tuple(float(x.max()) for x, _ in rules_1d))
    return QuadratureRule(
        np.ascontiguousarray(nodes), np.ascontiguousarray(np.ravel(weights)), "gauss_tensor",
        domain, axes=tuple(np.asarray(x) for x, _ in rules_1d),
        meta={"points_per_dim": [len(x) for x, _ in rules_1d]},
    )


def gauss_tensor(domain: Box, points_per_dim, node_cap: int = NODE_CAP) -> QuadratureRule:
    if np.isscalar(points_per_dim):
        points_per_dim = [int(points_per_dim)] * domain.dim
    rules = [gauss_legendre_1d(n, (a, b)) for n, a, b in zip(points_per_dim, domain.lower, domain.upper)]
    return tensor_grid(rules, domain, node_cap)


def monte_carlo(domain: Box, n: int, seed: int, node_cap: int = NODE_CAP) -> QuadratureRule:
    """i.i.d. uniform nodes with equal weights ``volume / n``.

    Each coordinate is drawn from its own Philox stream spawned from ``seed``,
    so the nodes do not depend on how many dimensions are generated together.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > node_cap:
        raise BudgetExceeded(f"{n} Monte Carlo nodes exceed the cap {node_cap}")
    streams = np.random.SeedSequence(seed).spawn(domain.dim)
    cols = []
    for ss, a, b in zip(streams, domain.lower, domain.upper):
        gen = np.random.Generator(np.random.Philox(ss))
        cols.append(a + (b - a) * gen.random(n))
    nodes = np.ascontiguousarray(np.stack(cols, axis=1))
    weights = np.full(n, domain.volume / n)
    return QuadratureRule(nodes, weights, "monte_carlo", domain, meta={"seed": seed, "n": n})
