"""Time steppers for the projected coefficient system.

For the double-well problems the semi-discrete system is written as
``M beta' = -(L beta + N(beta))`` with

* L2 metric:  ``L = eps^2 K``,            ``N = g``,           stabiliser ``B = M``
* H^-1 metric: ``L = eps^2 K M^-1 K``,    ``N = K M^-1 g``,    stabiliser ``B = K``

Stage matrices are assembled once per (system, step size) and factorised by
Cholesky; every step then costs two triangular solves per stage.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import GalerkinSystem
from .linalg import CholeskyFactor, symmetrize

GAMMA = 1.0 - 1.0 / np.sqrt(2.0)
DELTA = 1.0 - 1.0 / (2.0 * GAMMA)


@dataclass(frozen=True)
class ImexParams:
    dt: float
    S: float = 0.0
    alpha: float = 0.0
    gamma: float = GAMMA
    delta: float = DELTA

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.S < 0 or self.alpha < 0:
            raise ValueError("S and alpha must be non-negative")


class Operators:
    """Linear part, nonlinear part and stabiliser for one system."""

    def __init__(self, system: GalerkinSystem):
        self.system = system
        M, K = system.M, system.K
        self.M = M
        if system.metric == "L2":
            self.L = system.linear_scale * K
            self.B = M
        elif system.metric == "Hminus1":
            MinvK = system.mass_factor.solve(K)
            self.L = symmetrize(system.linear_scale * (K @ MinvK))
            self.B = K
        else:
            raise ValueError(f"unknown metric {system.metric!r}")

    def nonlinear(self, beta):
        g, _ = self.system.nonlinear(beta)
        if self.system.metric == "Hminus1":
            return self.system.K @ self.system.mass_factor.solve(g)
        return g


def _operators(system) -> Operators:
    ops = system._cache.get("operators")
    if ops is None:
        ops = system._cache["operators"] = Operators(system)
    return ops


class SSI1:
    """Stabilised semi-implicit Euler: ``(M + dt (S B + L)) b' = (M + dt S B) b - dt N(b)``."""

    order = 1

    def __init__(self, system: GalerkinSystem, dt: float, S: float = 0.0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.ops = _operators(system)
        self.dt, self.S = dt, S
        o = self.ops
        self.rhs_mat = o.M + dt * S * o.B
        self.factor = CholeskyFactor(symmetrize(self.rhs_mat + dt * o.L))

    def step(self, beta):
        return self.factor.solve(self.rhs_mat @ beta - self.dt * self.ops.nonlinear(beta))


class ImexRK2:
    """Two-stage stabilised IMEX Runge-Kutta scheme, solved in increment form.

    Stage 1 (``x1 = b* - b``)::

        ((1/(g dt)) M + S B + (1 + a) L) x1 = -L b - N(b)

    Stage 2 (``x2 = b' - b*``)::

        ((1/dt) M + g S B + g (1 + a) L) x2
            = -M x1 / dt - L b* - d N(b) - (1 - d) N(b*) - d (a L + S B) x1
    """

    order = 2

    def __init__(self, system: GalerkinSystem, params: ImexParams):
        self.ops = o = _operators(system)
        self.p = p = params
        g, a, S, dt = p.gamma, p.alpha, p.S, p.dt
        self.stab = a * o.L + S * o.B
        self.f1 = CholeskyFactor(symmetrize(o.M / (g * dt) + S * o.B + (1.0 + a) * o.L))
        self.f2 = CholeskyFactor(symmetrize(o.M / dt + g * S * o.B + g * (1.0 + a) * o.L))

    def step(self, beta, n0=None):
        o, p = self.ops, self.p
        n0 = o.nonlinear(beta) if n0 is None else n0
        x1 = self.f1.solve(-(o.L @ beta) - n0)
        bstar = beta + x1
        n1 = o.nonlinear(bstar)
        rhs = -(o.M @ x1) / p.dt - o.L @ bstar - p.delta * n0 - (1.0 - p.delta) * n1 - p.delta * (self.stab @ x1)
        return bstar + self.f2.solve(rhs)


def ssi1_step(system: GalerkinSystem, beta, dt: float, S: float = 0.0):
    key = ("ssi1", dt, S)
    st = system._cache.get(key)
    if st is None:
        st = system._cache[key] = SSI1(system, dt, S)
    return st.step(np.asarray(beta, dtype=np.float64))


def _imex(system, beta, params):
    key = ("imex_rk2", params)
    st = system._cache.get(key)
    if st is None:
        st = system._cache[key] = ImexRK2(system, params)
    return st.step(np.asarray(beta, dtype=np.float64))


def imex_rk2_step(system: GalerkinSystem, beta, params: ImexParams):
    if system.metric != "L2":
        raise ValueError("imex_rk2_step needs an L2 system; use imex_rk2_ch_step for H^-1")
    return _imex(system, beta, params)


def imex_rk2_ch_step(system: GalerkinSystem, beta, params: ImexParams):
    if system.metric != "Hminus1":
        raise ValueError("imex_rk2_ch_step needs an H^-1 system")
    return _imex(system, beta, params)


@dataclass(frozen=True, eq=False)
class DirkTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if np.any(np.triu(A, 1) != 0) or np.any(np.diag(A) <= 0):
            raise ValueError("DIRK tableau must be lower triangular with positive diagonal")
        if abs(np.sum(self.b) - 1.0) > 1e-14:
            raise ValueError("weights must sum to one")

    @property
    def stages(self) -> int:
        return len(self.b)


def dirk2() -> DirkTableau:
    g = 1.0 - 1.0 / np.sqrt(2.0)
    return DirkTableau(np.array([[g, 0.0], [1.0 - g, g]]), np.array([1.0 - g, g]), np.array([g, 1.0]), 2)


def dirk3() -> DirkTableau:
    g = 0.43586652150845899941601945
    b1 = -(6 * g * g - 16 * g + 1) / 4
    b2 = (6 * g * g - 20 * g + 5) / 4
    A = np.array([[g, 0.0, 0.0], [(1 - g) / 2, g, 0.0], [b1, b2, g]])
    return DirkTableau(A, np.array([b1, b2, g]), np.array([g, (1 + g) / 2, 1.0]), 3)


TABLEAUX = {"dirk2": dirk2, "dirk3": dirk3}


class Dirk:
    """DIRK for ``M beta' = A_lin beta`` with ``A_lin`` symmetric negative semi-definite."""

    def __init__(self, tableau: DirkTableau, M, A_lin, dt: float):
        self.t, self.M, self.A, self.dt = tableau, np.asarray(M), np.asarray(A_lin), dt
        self.factors = {}
        for a in np.unique(np.diag(tableau.A)):
            self.factors[a] = CholeskyFactor(symmetrize(self.M - dt * a * self.A))

    def step(self, beta):
        A, dt, T = self.A, self.dt, self.t
        ks = []
        for i in range(T.stages):
            arg = beta.copy()
            for j in range(i):
                arg += dt * T.A[i, j] * ks[j]
            ks.append(self.factors[T.A[i, i]].solve(A @ arg))
        out = beta.copy()
        for bi, k in zip(T.b, ks):
            out += dt * bi * k
        return out


def dirk_step(tableau: DirkTableau, M, A_lin, beta, dt: float):
    return Dirk(tableau, M, A_lin, dt).step(np.asarray(beta, dtype=np.float64))


def heat_operator(system: GalerkinSystem) -> np.ndarray:
    """``A_lin = -c K`` for the linear diffusion problems."""
    return -system.linear_scale * system.K


def make_stepper(kind: str, system: GalerkinSystem, dt: float, S: float = 0.0, alpha: float = 0.0):
    if kind == "ssi1":
        return SSI1(system, dt, S)
    if kind in ("imex_rk2", "imex_rk2_ch"):
        want = "L2" if kind == "imex_rk2" else "Hminus1"
        if system.metric != want:
            raise ValueError(f"{kind} needs a {want} system")
        return ImexRK2(system, ImexParams(dt, S, alpha))
    if kind in TABLEAUX:
        return Dirk(TABLEAUX[kind](), system.M, heat_operator(system), dt)
    raise ValueError(f"unknown integrator {kind!r}")
