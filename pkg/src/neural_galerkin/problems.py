"""Problem library: domains, coefficients, initial conditions and exact solutions."""

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import UnknownProblem
from .quadrature import Box

PROBLEM_NAMES = ("heat_5d", "heat_10d", "ac_1d", "ac_2d_bubbles", "ac_2d_star", "ac_2d_random", "ch_1d")


def _points(x, d=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if d in (None, 1) else x[None, :]
    return x


class InitialCondition:
    """Analytic field with values, spatial gradients and Laplacian."""

    kind = "abstract"

    def values(self, x):
        raise NotImplementedError

    def gradients(self, x):
        raise NotImplementedError

    def laplacian(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.values(x)


class ProductCosine(InitialCondition):
    """``prod_i cos(pi x_i)``."""

    kind = "product_cosine"

    def __init__(self, dim: int):
        self.dim = dim

    def values(self, x):
        x = _points(x, self.dim)
        return np.prod(np.cos(np.pi * x), axis=1)

    def gradients(self, x):
        x = _points(x, self.dim)
        c, s = np.cos(np.pi * x), np.sin(np.pi * x)
        out = np.empty_like(x)
        for j in range(x.shape[1]):
            out[:, j] = -np.pi * s[:, j] * np.prod(np.delete(c, j, axis=1), axis=1)
        return out

    def laplacian(self, x):
        return -self.dim * np.pi ** 2 * self.values(x)


class X2CosPiX(InitialCondition):
    kind = "x2_cospix"

    def values(self, x):
        x = _points(x)[:, 0]
        return x * x * np.cos(np.pi * x)

    def gradients(self, x):
        x = _points(x)[:, 0]
        return (2 * x * np.cos(np.pi * x) - np.pi * x * x * np.sin(np.pi * x))[:, None]

    def laplacian(self, x):
        x = _points(x)[:, 0]
        c, s = np.cos(np.pi * x), np.sin(np.pi * x)
        return 2 * c - 4 * np.pi * x * s - np.pi ** 2 * x * x * c


class Cosine1D(InitialCondition):
    kind = "cosine_1d"

    def values(self, x):
        return np.cos(np.pi * _points(x)[:, 0])

    def gradients(self, x):
        return (-np.pi * np.sin(np.pi * _points(x)[:, 0]))[:, None]

    def laplacian(self, x):
        return -np.pi ** 2 * self.values(x)


def _tanh_profile(s, grad_s, lap_s, scale):
    """tanh(s/scale) with gradient and Laplacian from those of s."""
    th = np.tanh(s / scale)
    sech2 = 1.0 - th * th
    grad = (sech2 / scale)[:, None] * grad_s
    lap = sech2 * lap_s / scale - 2.0 * th * sech2 * np.sum(grad_s * grad_s, axis=1) / scale ** 2
    return th, grad, lap


def _radius(x, centre):
    dx = x - np.asarray(centre)
    r = np.sqrt(np.sum(dx * dx, axis=1))
    r_safe = np.maximum(r, 1e-300)
    return r, dx / r_safe[:, None], 1.0 / r_safe  # r, grad r, lap r (2-D)


class TwoBubbles(InitialCondition):
    """Maximum of two circular tanh profiles centred at ``(+-offset, 0)``."""

    kind = "two_bubbles"

    def __init__(self, radius=0.15, eps=0.05, offset=0.21):
        self.radius, self.eps, self.offset = radius, eps, offset

    def _parts(self, x):
        x = _points(x, 2)
        out = []
        for cx in (-self.offset, self.offset):
            r, gr, lr = _radius(x, (cx, 0.0))
            out.append(_tanh_profile(self.radius - r, -gr, -lr, self.eps))
        return out

    def values(self, x):
        (a, _, _), (b, _, _) = self._parts(x)
        return np.maximum(a, b)

    def gradients(self, x):
        (a, ga, _), (b, gb, _) = self._parts(x)
        return np.where((a >= b)[:, None], ga, gb)

    def laplacian(self, x):
        (a, _, la), (b, _, lb) = self._parts(x)
        return np.where(a >= b, la, lb)


class Star(InitialCondition):
    """``tanh((R0 + delta cos(k theta) - r) / (sqrt(2) eps))`` about the origin."""

    kind = "star"

    def __init__(self, r0=0.25, delta=0.05, k=5, eps=0.05):
        self.r0, self.delta, self.k, self.eps = r0, delta, k, eps

    def _parts(self, x):
        x = _points(x, 2)
        r, gr, lr = _radius(x, (0.0, 0.0))
        theta = np.arctan2(x[:, 1], x[:, 0])
        r2 = np.maximum(r * r, 1e-300)
        gtheta = np.stack([-x[:, 1], x[:, 0]], axis=1) / r2[:, None]
        k, dl = self.k, self.delta
        s = self.r0 + dl * np.cos(k * theta) - r
        gs = -dl * k * np.sin(k * theta)[:, None] * gtheta - gr
        ls = -dl * k * k * np.cos(k * theta) / r2 - lr
        th, g, lap = _tanh_profile(s, gs, ls, np.sqrt(2.0) * self.eps)
        # limit at the origin is independent of theta
        centre = r == 0.0
        if np.any(centre):
            th[centre] = np.tanh(self.r0 / (np.sqrt(2.0) * self.eps))
            g[centre] = 0.0
        return th, g, lap

    def values(self, x):
        return self._parts(x)[0]

    def gradients(self, x):
        return self._parts(x)[1]

    def laplacian(self, x):
        return self._parts(x)[2]


def _fft2(a, inverse=False):
    out = kernels.fft_radix2(a, inverse)
    return np.swapaxes(kernels.fft_radix2(np.swapaxes(out, 0, 1), inverse), 0, 1)


class RandomProjected(InitialCondition):
    """Uniform(-1, 1) grid samples projected onto low Fourier modes.

    Modes with ``|k_x| > mode_cutoff`` or ``|k_y| > mode_cutoff`` are dropped;
    the remaining trigonometric series is evaluated analytically, so the field
    is smooth and periodic over the box.
    """

    kind = "random_projected"

    def __init__(self, seed=0, mode_cutoff=16, grid=128, domain: Box = None):
        self.seed, self.mode_cutoff, self.grid = seed, mode_cutoff, grid
        self.domain = domain or Box.cube(-0.5, 0.5, 2)
        rng = np.random.default_rng(seed)
        self.samples = rng.uniform(-1.0, 1.0, (grid, grid))
        coef = _fft2(self.samples) / (grid * grid)
        k = np.fft.fftfreq(grid, 1.0 / grid).astype(int)
        keep = np.abs(k) <= mode_cutoff
        self.modes = k[keep]
        self.coef = coef[np.ix_(keep, keep)]

    def _exp(self, x):
        x = _points(x, 2)
        lo, L = np.asarray(self.domain.lower), self.domain.lengths
        w = [2j * np.pi * self.modes / L[j] for j in range(2)]
        ex = np.exp(np.outer(x[:, 0] - lo[0], w[0]))
        ey = np.exp(np.outer(x[:, 1] - lo[1], w[1]))
        return ex, ey, w

    def values(self, x):
        ex, ey, _ = self._exp(x)
        return np.real(np.sum((ex @ self.coef) * ey, axis=1))

    def gradients(self, x):
        ex, ey, w = self._exp(x)
        gx = np.real(np.sum(((ex * w[0]) @ self.coef) * ey, axis=1))
        gy = np.real(np.sum((ex @ self.coef) * (ey * w[1]), axis=1))
        return np.stack([gx, gy], axis=1)

    def laplacian(self, x):
        ex, ey, w = self._exp(x)
        return np.real(np.sum(((ex * w[0] ** 2) @ self.coef) * ey + (ex @ self.coef) * (ey * w[1] ** 2), axis=1))


def heat_exact(x, t, d=None):
    """``exp(-t) prod_i cos(pi x_i)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and (d is None or d == x.shape[0]) and d != 1:
        return float(np.exp(-t) * np.prod(np.cos(np.pi * x)))
    x = _points(x, d)
    return np.exp(-t) * np.prod(np.cos(np.pi * x), axis=1)


def ic_two_bubbles(x, y, R=0.15, eps=0.05):
    return TwoBubbles(R, eps).values(np.column_stack([np.ravel(x), np.ravel(y)]))


def ic_star(x, y, R0=0.25, delta=0.05, k=5, eps=0.05):
    return Star(R0, delta, k, eps).values(np.column_stack([np.ravel(x), np.ravel(y)]))


def ic_random_projected(seed=0, mode_cutoff=16, grid=128, domain=None) -> RandomProjected:
    return RandomProjected(seed, mode_cutoff, grid, domain)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything that defines one gradient-flow problem.

    ``bc`` is ``dirichlet_box`` (masked basis), ``periodic`` (periodic
    embedding) or ``natural`` (no constraint, homogeneous Neumann in weak form).
    """

    name: str
    spatial_dim: int
    domain: Box
    metric: str
    epsilon: float
    kappa: float
    diffusion_scale: float
    potential: str
    bc: str
    ic: InitialCondition
    horizon: float
    t_list: tuple
    exact_solution: Optional[Callable] = None
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in ("L2", "Hminus1"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.potential == "none" and self.bc != "dirichlet_box":
            raise ValueError("linear (heat) problems use a Dirichlet box")
        if self.metric == "Hminus1" and (self.bc != "periodic" or self.potential != "double_well"):
            raise ValueError("H^-1 problems must be periodic with a double-well potential")
        t = np.asarray(self.t_list, dtype=float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0) or not np.isclose(t[-1], self.horizon, rtol=0, atol=1e-12):
            raise ValueError("t_list must increase strictly from 0 to the horizon")

    @property
    def is_linear(self) -> bool:
        return self.potential == "none"

    @property
    def periods(self) -> tuple:
        return tuple(float(v) for v in self.domain.lengths)

    @property
    def energy_scale(self) -> float:
        """Coefficient of the gradient term in the energy."""
        return 1.0 if self.is_linear else self.epsilon ** 2

    @property
    def linear_scale(self) -> float:
        """Coefficient of K in the residual."""
        return self.diffusion_scale if self.is_linear else self.epsilon ** 2


def _heat(d: int) -> ProblemSpec:
    return ProblemSpec(
        name=f"heat_{d}d", spatial_dim=d, domain=Box.cube(-0.5, 0.5, d), metric="L2",
        epsilon=1.0, kappa=0.0, diffusion_scale=1.0 / (d * np.pi ** 2), potential="none",
        bc="dirichlet_box", ic=ProductCosine(d), horizon=1.0, t_list=(0.0, 1.0),
        exact_solution=lambda x, t, d=d: heat_exact(x, t, d),
        defaults={
            "arch": [50, 50, 50, 900], "basis": "random", "embedding": "identity", "time_input": False,
            "quadrature": "gauss" if d <= 5 else "monte_carlo", "points_per_dim": 12, "n_mc": 100_000,
            "integrator": "dirk3", "dt": 1e-3, "batch_size": 10_000,
        },
    )


def _steps(stop, step):
    n = int(round(stop / step))
    return tuple(round(k * step, 12) for k in range(n + 1))


def _ac_2d(name, ic, horizon, dt_list):
    return ProblemSpec(
        name=name, spatial_dim=2, domain=Box.cube(-0.5, 0.5, 2), metric="L2", epsilon=0.05,
        kappa=5.0, diffusion_scale=1.0, potential="double_well", bc="periodic", ic=ic,
        horizon=horizon, t_list=_steps(horizon, dt_list),
        defaults={
            "arch": [50, 50, 50, 256], "basis": "pretrained", "embedding": "periodic", "time_input": True,
            "quadrature": "gauss", "points_per_dim": 128, "integrator": "imex_rk2", "dt": 1e-3,
            "batch_size": 2048, "reference_n": 256, "reference_dt": 1e-3,
        },
    )


def make_problem(name: str, overrides: dict = None) -> ProblemSpec:
    """Build a problem by name; ``overrides`` replaces fields (``defaults.*`` keys merge)."""
    m = re.fullmatch(r"heat_(\d+)d", name)
    if m and int(m.group(1)) >= 1:
        spec = _heat(int(m.group(1)))
    elif name == "ac_1d":
        spec = ProblemSpec(
            name="ac_1d", spatial_dim=1, domain=Box((-1.0,), (1.0,)), metric="L2", epsilon=0.01,
            kappa=5.0, diffusion_scale=1.0, potential="double_well", bc="natural", ic=X2CosPiX(),
            horizon=1.0, t_list=_steps(1.0, 0.2),
            defaults={
                "arch": [128, 128, 128], "basis": "pretrained", "embedding": "identity", "time_input": True,
                "init": "sfli",
                "quadrature": "gauss", "points_per_dim": 1024, "integrator": "imex_rk2", "dt": 1e-3,
                "batch_size": 8192, "reference_n": 2048, "reference_dt": 1e-4,
            },
        )
    elif name == "ac_2d_bubbles":
        spec = _ac_2d(name, TwoBubbles(), 1.0, 0.1)
    elif name == "ac_2d_star":
        spec = _ac_2d(name, Star(), 5.0, 0.5)
    elif name == "ac_2d_random":
        spec = _ac_2d(name, RandomProjected(), 1.0, 0.1)
    elif name == "ch_1d":
        spec = ProblemSpec(
            name="ch_1d", spatial_dim=1, domain=Box((-1.0,), (1.0,)), metric="Hminus1", epsilon=0.1,
            kappa=1.0, diffusion_scale=1.0, potential="double_well", bc="periodic", ic=Cosine1D(),
            horizon=0.2, t_list=(0.0, 0.005, 0.01, 0.015, 0.04, 0.08, 0.12, 0.16, 0.2),
            defaults={
                "arch": [128, 128, 128], "basis": "random", "embedding": "periodic", "time_input": False,
                "quadrature": "gauss", "points_per_dim": 1024, "integrator": "imex_rk2_ch", "dt": 1e-4,
                "batch_size": 8192, "reference_n": 1024, "reference_dt": 1e-5,
            },
        )
    else:
        raise UnknownProblem(name)
    return apply_overrides(spec, overrides or {})


def apply_overrides(spec: ProblemSpec, overrides: dict) -> ProblemSpec:
    changes, defaults = {}, dict(spec.defaults)
    for key, value in overrides.items():
        if key.startswith("defaults."):
            defaults[key.split(".", 1)[1]] = value
        elif key == "t_list":
            changes["t_list"] = tuple(float(v) for v in value)
        elif key in ("epsilon", "kappa", "diffusion_scale", "horizon"):
            changes[key] = float(value)
        else:
            raise KeyError(f"unknown problem override {key!r}")
    if "horizon" in changes and "t_list" not in changes:
        old = np.asarray(spec.t_list)
        kept = tuple(float(t) for t in old if t < changes["horizon"] - 1e-12)
        changes["t_list"] = kept + (changes["horizon"],)
    if "epsilon" in changes and not spec.is_linear:
        ic = spec.ic
        if isinstance(ic, (TwoBubbles, Star)):
            ic = replace_eps(ic, changes["epsilon"])
        changes["ic"] = ic
    return replace(spec, defaults=defaults, **changes)


def replace_eps(ic, eps):
    if isinstance(ic, TwoBubbles):
        return TwoBubbles(ic.radius, eps, ic.offset)
    return Star(ic.r0, ic.delta, ic.k, eps)
