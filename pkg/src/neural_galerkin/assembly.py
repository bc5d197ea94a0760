"""Galerkin assembly: mass and stiffness matrices, nonlinear load, energy,
and the SVD-based orthogonalisation of the feature block."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .basis import CHUNK, BasisSet, FeatureTransform
from .errors import DegenerateBasis, NotPositiveDefinite
from .linalg import CholeskyFactor, lower_solve, spd_solve, symmetrize, truncated_svd
from .quadrature import QuadratureRule

SVD_REL_TOL = 1e-10
# gradients for at most this many (node, function, dim) entries are held at once
GRADIENT_BUDGET = 2 ** 26


def assemble_mass(basis_values, quad: QuadratureRule) -> np.ndarray:
    P = np.asarray(basis_values, dtype=np.float64)
    return symmetrize(P.T @ (quad.weights[:, None] * P))


def _stiffness_block(grads, w):
    n, b, d = grads.shape
    K = np.zeros((b, b))
    for j in range(d):
        G = np.ascontiguousarray(grads[:, :, j])
        K += G.T @ (w[:, None] * G)
    return K


def assemble_stiffness(basis_gradients, quad: QuadratureRule) -> np.ndarray:
    return symmetrize(_stiffness_block(np.asarray(basis_gradients, dtype=np.float64), quad.weights))


def assemble_nonlinear(basis_values, quad: QuadratureRule, beta, kappa: float) -> np.ndarray:
    g, _ = kernels.double_well_load(basis_values, quad.weights, beta, kappa)
    return g


def orthogonalize(basis: BasisSet, quad: QuadratureRule, rel_tol: float = SVD_REL_TOL) -> BasisSet:
    """Make the feature block approximately orthonormal in the weighted inner product.

    The preserved columns ``E`` (initial-condition slot, constant or mask) are
    first projected out of the raw features so the trial space keeps them
    exactly. The remaining block is whitened by a truncated SVD of
    ``D^{1/2} F`` and then by a Cholesky factor of the resulting Gram matrix,
    which removes the rounding left over from the first pass. Each stage is
    applied chunk by chunk in the same order that :meth:`BasisSet.evaluate`
    uses, so the Gram matrix recomputed from the basis reproduces the one
    whitened here.
    """
    bare = basis.with_transform(None)
    x, w = quad.nodes, quad.weights
    n = x.shape[0]
    chunks = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    raw, E = [], []
    for s, t in chunks:
        z, _ = bare.raw_features(x[s:t], grad=False)
        e, _ = bare.preserved_columns(x[s:t], grad=False)
        raw.append(z)
        E.append(e)
    Eall = np.concatenate(E, axis=0)
    projection = None
    if Eall.shape[1]:
        G_e = Eall.T @ (w[:, None] * Eall)
        rhs = Eall.T @ (w[:, None] * np.concatenate(raw, axis=0))
        try:
            projection = spd_solve(symmetrize(G_e), rhs)
        except NotPositiveDefinite:
            raise DegenerateBasis("preserved columns are linearly dependent at the quadrature nodes") from None
        raw = [z - e @ projection for z, e in zip(raw, E)]
    sw = np.sqrt(w)
    A = np.concatenate(raw, axis=0) * sw[:, None]
    svd = truncated_svd(A, rel_tol)
    r = svd.retained_rank
    if r == 0:
        raise DegenerateBasis("no singular value survives truncation")
    stage1 = svd.right_vectors / svd.singular_values[:r]
    F1 = np.concatenate([z @ stage1 for z in raw], axis=0)
    G1 = symmetrize(F1.T @ (w[:, None] * F1))
    try:
        L = CholeskyFactor(G1).L
    except NotPositiveDefinite:
        raise DegenerateBasis("whitened feature Gram matrix is not positive definite") from None
    stage2 = lower_solve(L, np.eye(L.shape[0])).T
    T = FeatureTransform(projection, np.ascontiguousarray(stage1), np.ascontiguousarray(stage2), svd.singular_values)
    return basis.with_transform(T)


def feature_gram(basis: BasisSet, quad: QuadratureRule) -> np.ndarray:
    P = basis.eval_features(quad.nodes)[:, basis.feature_slice]
    return P.T @ (quad.weights[:, None] * P)


@dataclass
class CoeffState:
    beta: np.ndarray
    time: float

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=np.float64)
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("non-finite coefficients")


@dataclass(eq=False)
class GalerkinSystem:
    """Projected system for one fixed basis.

    ``linear_scale`` multiplies ``K`` in the residual (``eps^2`` for phase-field
    problems, the diffusion coefficient for heat) and ``energy_scale``
    multiplies ``beta^T K beta / 2`` in the energy.
    """

    M: np.ndarray
    K: np.ndarray
    metric: str
    quad: QuadratureRule
    basis_values: np.ndarray
    epsilon: float = 1.0
    kappa: float = 0.0
    potential: str = "double_well"
    linear_scale: float = None
    energy_scale: float = None
    basis_gradients: np.ndarray = None
    ridge: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.linear_scale is None:
            self.linear_scale = self.epsilon ** 2
        if self.energy_scale is None:
            self.energy_scale = self.linear_scale
        if self.M.shape != self.K.shape or self.M.shape[0] != self.basis_values.shape[1]:
            raise ValueError("inconsistent system dimensions")

    @property
    def size(self) -> int:
        return self.M.shape[0]

    @property
    def mass_factor(self) -> CholeskyFactor:
        f = self._cache.get("mass_factor")
        if f is None:
            f = self._cache["mass_factor"] = CholeskyFactor(self.M)
        return f

    @property
    def mass_weights(self) -> np.ndarray:
        """``c`` with ``c . beta`` equal to the integral of ``u_h``."""
        c = self._cache.get("mass_weights")
        if c is None:
            c = self._cache["mass_weights"] = self.basis_values.T @ self.quad.weights
        return c

    def nodal_values(self, beta) -> np.ndarray:
        return self.basis_values @ beta

    def nonlinear(self, beta):
        """``(g, potential energy)`` for the double well, zeros for linear problems."""
        if self.potential == "none":
            return np.zeros(self.size), 0.0
        return kernels.double_well_load(self.basis_values, self.quad.weights, beta, self.kappa)

    def residual(self, beta) -> np.ndarray:
        g, _ = self.nonlinear(beta)
        return self.linear_scale * (self.K @ beta) + g

    def energy(self, beta) -> float:
        _, pot = self.nonlinear(beta)
        return 0.5 * self.energy_scale * float(beta @ (self.K @ beta)) + float(pot)

    def mass(self, beta) -> float:
        return float(self.mass_weights @ beta)


def residual(system: GalerkinSystem, beta) -> np.ndarray:
    return system.residual(beta)


def energy(system: GalerkinSystem, beta) -> float:
    return system.energy(beta)


def _check_mass(M):
    """Cholesky of M, with a single tiny ridge as fallback; returns the ridge used."""
    try:
        CholeskyFactor(M)
        return M, 0.0
    except NotPositiveDefinite:
        ridge = 1e-12 * np.trace(M) / M.shape[0]
        M = M + ridge * np.eye(M.shape[0])
        CholeskyFactor(M)
        return M, ridge


def build_system(basis: BasisSet, quad: QuadratureRule, problem=None, keep_gradients=False, **kw) -> GalerkinSystem:
    """Evaluate the basis at the nodes and assemble ``M`` and ``K``.

    Gradients are streamed in node blocks when the full tensor would exceed
    ``GRADIENT_BUDGET`` entries; values are always kept for the nonlinear load.
    """
    x, w = quad.nodes, quad.weights
    n, b, d = x.shape[0], basis.n_basis, basis.spatial_dim
    if n * b * d <= GRADIENT_BUDGET:
        P, G = basis.evaluate(x, grad=True)
        K = _stiffness_block(G, w)
    else:
        keep_gradients = False
        P = np.empty((n, b))
        K = np.zeros((b, b))
        for s in range(0, n, CHUNK):
            t = min(s + CHUNK, n)
            v, g = basis.evaluate(x[s:t], grad=True)
            P[s:t] = v
            K += _stiffness_block(g, w[s:t])
        G = None
    M = assemble_mass(P, quad)
    K = symmetrize(K)
    M, ridge = _check_mass(M)
    if problem is not None:
        kw.setdefault("metric", problem.metric)
        kw.setdefault("epsilon", problem.epsilon)
        kw.setdefault("kappa", problem.kappa)
        kw.setdefault("potential", problem.potential)
        kw.setdefault("linear_scale", problem.linear_scale)
        kw.setdefault("energy_scale", problem.energy_scale)
    kw.setdefault("metric", "L2")
    return GalerkinSystem(M=M, K=K, quad=quad, basis_values=P,
                          basis_gradients=G if keep_gradients else None, ridge=ridge, **kw)


def solve_mass(system: GalerkinSystem, B):
    return system.mass_factor.solve(B)


__all__ = [
    "assemble_mass", "assemble_stiffness", "assemble_nonlinear", "orthogonalize", "feature_gram",
    "CoeffState", "GalerkinSystem", "residual", "energy", "build_system", "spd_solve", "solve_mass",
]
