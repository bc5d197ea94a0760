"""Reference solutions: Fourier pseudo-spectral ETDRK4 for periodic phase-field
problems, trigonometric interpolation, relative L2 errors and a disk cache."""

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import NonPeriodicProblem, TimeOutOfRange, ZeroReference

CONTOUR_POINTS = 32
CACHE_ENV = "NEURAL_GALERKIN_CACHE"
MAGIC = b"NGREF 1\n"


def relative_l2(u_values, ref_values, quad) -> float:
    """``sqrt(sum w (u - ref)^2) / sqrt(sum w ref^2)``; ``quad`` may be a rule or a weight vector."""
    w = getattr(quad, "weights", quad)
    u = np.asarray(u_values, dtype=np.float64)
    r = np.asarray(ref_values, dtype=np.float64)
    den = float(np.sum(w * r * r))
    if not den > 0:
        raise ZeroReference("reference field has zero norm")
    return float(np.sqrt(np.sum(w * (u - r) ** 2) / den))


# --- n-d transforms on top of the radix-2 kernel ----------------------------

def fftn(a, inverse=False):
    out = np.asarray(a, dtype=np.complex128)
    for axis in range(out.ndim):
        out = np.moveaxis(kernels.fft_radix2(np.moveaxis(out, axis, -1), inverse), -1, axis)
    return out


def ifftn(a):
    return fftn(a, inverse=True)


def wavenumbers(N: int, length: float) -> np.ndarray:
    k = np.concatenate([np.arange(0, N // 2), np.arange(-N // 2, 0)])
    return 2.0 * np.pi * k / length


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    N: int
    lower: tuple
    lengths: tuple

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("grid size must be a power of two")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def axes(self):
        return [a + L * np.arange(self.N) / self.N for a, L in zip(self.lower, self.lengths)]

    def points(self) -> np.ndarray:
        g = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([x.ravel() for x in g], axis=1)

    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*[wavenumbers(self.N, L) for L in self.lengths], indexing="ij")
        return sum(k * k for k in ks)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


def etdrk4_coefficients(Lh, M: int = CONTOUR_POINTS):
    """``E, E2, Q, f1, f2, f3`` for ``v' = L v + N(v)`` with step already folded into ``Lh = h L``.

    The phi-functions are averaged over ``M`` points of the unit circle
    centred at each ``Lh`` value, which avoids cancellation near zero.
    The returned ``Q, f1, f2, f3`` are divided by ``h`` (multiply by ``h``).
    """
    Lh = np.asarray(Lh, dtype=np.float64)
    r = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
    LR = Lh[..., None] + r
    Q = np.real(np.mean((np.exp(LR / 2) - 1.0) / LR, axis=-1))
    f1 = np.real(np.mean((-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=-1))
    f2 = np.real(np.mean((2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR ** 3, axis=-1))
    f3 = np.real(np.mean((-4.0 - 3.0 * LR - LR ** 2 + np.exp(LR) * (4.0 - LR)) / LR ** 3, axis=-1))
    return np.exp(Lh), np.exp(Lh / 2), Q, f1, f2, f3


def etdrk4_step(v, h, coefs, nonlinear):
    E, E2, Q, f1, f2, f3 = coefs
    Nv = nonlinear(v)
    a = E2 * v + h * Q * Nv
    Na = nonlinear(a)
    b = E2 * v + h * Q * Na
    Nb = nonlinear(b)
    c = E2 * a + h * Q * (2.0 * Nb - Nv)
    Nc = nonlinear(c)
    return E * v + h * (f1 * Nv + 2.0 * f2 * (Na + Nb) + f3 * Nc)


@dataclass(eq=False)
class ReferenceTrajectory:
    grid: SpectralGrid
    dt: float
    times: np.ndarray
    fields: np.ndarray  # (n_times, N, ..., N)
    energy: np.ndarray = None
    mass: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def snapshot_index(self, time: float, tol: float = 1e-9) -> int:
        t = np.asarray(self.times)
        if time < t[0] - tol or time > t[-1] + tol:
            raise TimeOutOfRange(f"t = {time} outside [{t[0]}, {t[-1]}]")
        return int(np.argmin(np.abs(t - time)))


def _problem_parts(problem, grid):
    k2 = grid.k_squared()
    eps2 = problem.epsilon ** 2
    kappa = problem.kappa
    if problem.metric == "L2":
        L = -eps2 * k2

        def nonlin(v):
            u = np.real(ifftn(v))
            return -kappa * fftn(u * u * u - u)
    else:
        L = -eps2 * k2 * k2

        def nonlin(v):
            u = np.real(ifftn(v))
            return -k2 * fftn(u * u * u - u)
    return L, nonlin, k2


def spectral_energy(u, grid, problem, k2=None):
    """Energy of a grid field with the gradient term evaluated spectrally."""
    k2 = grid.k_squared() if k2 is None else k2
    n = u.size
    v = fftn(u)
    grad2 = float(np.sum(k2 * np.abs(v) ** 2)) / n ** 2
    pot = float(np.mean(0.25 * (u * u - 1.0) ** 2))
    return grid.volume * (0.5 * problem.epsilon ** 2 * grad2 + problem.kappa * pot)


def reference_grid(problem, N: int) -> SpectralGrid:
    if problem.bc not in ("periodic", "natural") or problem.is_linear:
        raise NonPeriodicProblem(f"{problem.name} is not a periodic phase-field problem")
    return SpectralGrid(N, tuple(problem.domain.lower), tuple(float(v) for v in problem.domain.lengths))


def spectral_etdrk4_run(problem, N: int, dt: float, horizon: float, snapshot_times, initial=None,
                        track_energy: bool = True) -> ReferenceTrajectory:
    """Fourier pseudo-spectral ETDRK4 with snapshots at step-aligned times.

    Natural-boundary 1-D problems are run on the periodic extension of the
    domain, which is exact for initial data symmetric about the domain centre.
    """
    if problem.bc == "natural":
        ic_vals = problem.ic.values
        lo, hi = np.asarray(problem.domain.lower), np.asarray(problem.domain.upper)
        probe = lo + (hi - lo) * np.linspace(0.05, 0.95, 7)[:, None]
        mirror = lo + hi - probe
        if not np.allclose(ic_vals(probe), ic_vals(mirror), atol=1e-12):
            raise NonPeriodicProblem("natural-boundary reference needs a mirror-symmetric initial condition")
    grid = reference_grid(problem, N)
    L, nonlin, k2 = _problem_parts(problem, grid)
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9:
        raise ValueError("dt must divide the horizon")
    snaps = sorted(float(t) for t in snapshot_times)
    snap_steps = {}
    for t in snaps:
        s = int(round(t / dt))
        if abs(s * dt - t) > 1e-9 or s < 0 or s > n_steps:
            raise ValueError(f"snapshot time {t} is not aligned with dt = {dt}")
        snap_steps.setdefault(s, []).append(t)
    pts = grid.points()
    u0 = problem.ic.values(pts) if initial is None else np.asarray(initial(pts))
    u = u0.reshape((N,) * grid.dim)
    v = fftn(u)
    coefs = etdrk4_coefficients(dt * L)
    times, fields, energy, mass = [], [], [], []

    def record(step, u):
        for t in snap_steps.get(step, []):
            times.append(t)
            fields.append(u.copy())

    record(0, u)
    if track_energy:
        energy.append(spectral_energy(u, grid, problem, k2))
        mass.append(grid.volume * float(np.mean(u)))
    for step in range(1, n_steps + 1):
        v = etdrk4_step(v, dt, coefs, nonlin)
        if step in snap_steps or track_energy:
            u = np.real(ifftn(v))
            record(step, u)
            if track_energy:
                energy.append(spectral_energy(u, grid, problem, k2))
                mass.append(grid.volume * float(np.mean(u)))
    return ReferenceTrajectory(grid, dt, np.array(times), np.array(fields),
                               np.array(energy) if track_energy else None,
                               np.array(mass) if track_energy else None,
                               meta={"problem": problem.name, "N": N, "dt": dt})


def _interp_matrix(x, N, lower, length):
    """Rows evaluate the real trigonometric interpolant of N samples at ``x``."""
    k = wavenumbers(N, length)
    E = np.exp(1j * np.outer(np.asarray(x) - lower, k)) / N
    # split the Nyquist mode symmetrically so the interpolant is real
    ny = N // 2
    E[:, ny] = np.cos(k[ny] * (np.asarray(x) - lower)) / N
    return E


def trig_interpolate(field_values, grid: SpectralGrid, points=None, axes=None):
    """Evaluate the trigonometric interpolant at scattered ``points`` or on a tensor grid ``axes``."""
    v = fftn(field_values)
    if axes is not None:
        out = v
        for j, ax in enumerate(axes):
            E = _interp_matrix(ax, grid.N, grid.lower[j], grid.lengths[j])
            out = np.moveaxis(np.tensordot(E, out, axes=(1, j)), 0, j)
        return np.real(out).ravel()
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if grid.dim == 1:
        return np.real(_interp_matrix(p[:, 0], grid.N, grid.lower[0], grid.lengths[0]) @ v)
    if grid.dim == 2:
        Ex = _interp_matrix(p[:, 0], grid.N, grid.lower[0], grid.lengths[0])
        Ey = _interp_matrix(p[:, 1], grid.N, grid.lower[1], grid.lengths[1])
        return np.real(np.sum((Ex @ v) * Ey, axis=1))
    raise ValueError("scattered interpolation is implemented for d <= 2")


def sample_reference_at(traj: ReferenceTrajectory, points, time: float, axes=None) -> np.ndarray:
    """Nearest snapshot in time, spectral interpolation in space."""
    i = traj.snapshot_index(time)
    return trig_interpolate(traj.fields[i], traj.grid, points, axes)


def reference_sampler(traj: ReferenceTrajectory, quad=None):
    """``(points, t) -> values`` callable; uses the separable path on tensor rules."""
    axes = getattr(quad, "axes", None)
    nodes = getattr(quad, "nodes", None)
    cache = {}

    def sample(points, t):
        i = traj.snapshot_index(t)
        if i not in cache or cache[i][0] is not points:
            if axes is not None and points is nodes:
                vals = trig_interpolate(traj.fields[i], traj.grid, axes=axes)
            else:
                vals = trig_interpolate(traj.fields[i], traj.grid, points)
            cache.clear()
            cache[i] = (points, vals)
        return cache[i][1]

    return sample


# --- finite-difference cross-check for the natural-boundary 1-D problem ----

def fd_allen_cahn_neumann(problem, N: int = 4096, dt: float = 1e-5, times=(1.0,)):
    """Second-order cell-centred finite differences with Heun time stepping.

    Returns the cell centres and the field at each requested time.
    """
    a, b = problem.domain.lower[0], problem.domain.upper[0]
    h = (b - a) / N
    x = a + h * (np.arange(N) + 0.5)
    u = problem.ic.values(x[:, None])
    eps2, kappa = problem.epsilon ** 2, problem.kappa

    def rhs(u):
        ue = np.concatenate([u[:1], u, u[-1:]])
        lap = (ue[2:] - 2.0 * ue[1:-1] + ue[:-2]) / (h * h)
        return eps2 * lap - kappa * (u ** 3 - u)

    out, t_now = [], 0.0
    for target in sorted(times):
        n = int(round((target - t_now) / dt))
        for _ in range(n):
            k1 = rhs(u)
            k2 = rhs(u + dt * k1)
            u = u + 0.5 * dt * (k1 + k2)
        t_now += n * dt
        out.append(u.copy())
    return x, out


# --- disk cache -------------------------------------------------------------

def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "neural_galerkin"))


def problem_key(problem, N, dt, times, extra=None) -> str:
    ic = problem.ic
    ic_desc = {"kind": ic.kind}
    for name in ("radius", "eps", "offset", "r0", "delta", "k", "seed", "mode_cutoff", "grid", "dim"):
        if hasattr(ic, name):
            ic_desc[name] = getattr(ic, name)
    desc = {
        "version": 1, "problem": problem.name, "epsilon": problem.epsilon, "kappa": problem.kappa,
        "metric": problem.metric, "domain": [list(problem.domain.lower), list(problem.domain.upper)],
        "ic": ic_desc, "N": N, "dt": dt, "times": [round(float(t), 12) for t in times], "extra": extra or {},
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()


def save_reference(path, traj: ReferenceTrajectory):
    """Layout: magic line, JSON header line, then float64 little-endian blocks
    (times, fields in snapshot order, then energy and mass traces if present)."""
    header = {
        "grid": {"N": traj.grid.N, "lower": list(traj.grid.lower), "lengths": list(traj.grid.lengths)},
        "dt": traj.dt, "n_times": len(traj.times),
        "n_trace": 0 if traj.energy is None else len(traj.energy), "meta": traj.meta,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for block in (traj.times, traj.fields, traj.energy, traj.mass):
            if block is not None:
                fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_reference(path) -> ReferenceTrajectory:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path} is not a reference file")
    end = data.index(b"\n", len(MAGIC))
    h = json.loads(data[len(MAGIC):end])
    g = h["grid"]
    grid = SpectralGrid(g["N"], tuple(g["lower"]), tuple(g["lengths"]))
    off = end + 1

    def take(count, shape):
        nonlocal off
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return a

    nt = h["n_times"]
    times = take(nt, (nt,))
    shape = (nt,) + (grid.N,) * grid.dim
    fields = take(int(np.prod(shape)), shape)
    energy = mass = None
    if h["n_trace"]:
        energy = take(h["n_trace"], (h["n_trace"],))
        mass = take(h["n_trace"], (h["n_trace"],))
    return ReferenceTrajectory(grid, h["dt"], times, fields, energy, mass, h.get("meta", {}))


def cached_reference(problem, N, dt, times, use_cache=True) -> ReferenceTrajectory:
    times = sorted(set(round(float(t), 12) for t in times))
    path = cache_dir() / f"ref_{problem.name}_{problem_key(problem, N, dt, times)[:24]}.bin"
    if use_cache and path.exists():
        return load_reference(path)
    traj = spectral_etdrk4_run(problem, N, dt, problem.horizon, times)
    if use_cache:
        try:
            save_reference(path, traj)
        except OSError:
            pass
    return traj
