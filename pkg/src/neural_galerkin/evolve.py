"""Adaptive driver: rebuild the basis at each restart time and step in between."""

import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import CoeffState, GalerkinSystem, build_system, orthogonalize, SVD_REL_TOL
from .basis import BasisSet, BoundaryMask, InputEmbedding, NetworkParams, SolutionField
from .errors import EnergyViolation
from .integrators import make_stepper
from .quadrature import QuadratureRule

ENERGY_TOL = 1e-10


@dataclass(frozen=True)
class RestartSchedule:
    t_list: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.t_list)
        if len(t) < 2 or t[0] != 0.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("restart times must increase strictly from 0")
        object.__setattr__(self, "t_list", t)

    @property
    def horizon(self) -> float:
        return self.t_list[-1]

    def intervals(self):
        return list(zip(self.t_list[:-1], self.t_list[1:]))

    def steps_in(self, a, b, dt) -> int:
        n = (b - a) / dt
        k = int(round(n))
        if k < 1 or abs(n - k) > 1e-8 * max(1.0, n):
            raise ValueError(f"dt = {dt} does not divide the interval [{a}, {b}]")
        return k


@dataclass(frozen=True)
class IntegratorConfig:
    kind: str = "imex_rk2"
    dt: float = 1e-3
    S: Optional[float] = None  # None -> 2 kappa
    alpha: float = 0.0

    def stabilizer(self, problem) -> float:
        return 2.0 * problem.kappa if self.S is None else float(self.S)


@dataclass(frozen=True)
class BasisConfig:
    """How the trial space is assembled from the feature network."""

    embedding: InputEmbedding
    mask: BoundaryMask = field(default_factory=BoundaryMask)
    include_constant: bool = True
    use_ic_slot: bool = True
    orthogonalize: bool = True
    rel_tol: float = SVD_REL_TOL

    @classmethod
    def for_problem(cls, problem, embedding: InputEmbedding, **kw) -> "BasisConfig":
        mask = BoundaryMask()
        if problem.bc == "dirichlet_box":
            mask = BoundaryMask.dirichlet_box(problem.domain.lower, problem.domain.upper)
        return cls(embedding=embedding, mask=mask, **kw)


@dataclass(frozen=True)
class RecordConfig:
    reference: Optional[Callable] = None  # (points, t) -> values at points
    error_stride: int = 10
    energy_violation: str = "fail"
    energy_tol: float = ENERGY_TOL
    keep_beta: bool = False
    keep_systems: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.energy_violation not in ("warn", "fail"):
            raise ValueError("energy_violation must be 'warn' or 'fail'")


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    error: list = field(default_factory=list)
    basis_id: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    bases: list = field(default_factory=list)
    systems: list = field(default_factory=list)
    final: CoeffState = None
    violations: list = field(default_factory=list)

    def append(self, t, e, m, err, bid, wall=None, beta=None):
        self.times.append(float(t))
        self.energy.append(float(e))
        self.mass.append(float(m))
        self.error.append(None if err is None else float(err))
        self.basis_id.append(int(bid))
        self.wall.append(wall)
        if beta is not None:
            self.betas.append(np.array(beta))

    @property
    def final_basis(self) -> BasisSet:
        return self.bases[-1]

    @property
    def final_error(self):
        errs = [e for e in self.error if e is not None]
        return errs[-1] if errs else None

    def field_at(self, points):
        """Final solution sampled at arbitrary points."""
        return SolutionField(self.bases[-1], self.final.beta).values(points)

    def final_nodal_values(self) -> np.ndarray:
        return self.systems[-1].nodal_values(self.final.beta)

    def max_energy_increase(self) -> float:
        """Largest ``E_{n+1} - E_n - tol (1 + |E_n|)`` over the record, in units of the tolerance."""
        e = np.asarray(self.energy)
        if e.size < 2:
            return -np.inf
        return float(np.max((e[1:] - e[:-1]) / (1.0 + np.abs(e[:-1]))))


def relative_l2(u, ref, weights) -> float:
    from .reference import relative_l2 as _rl2
    return _rl2(u, ref, weights)


def rebuild_basis_at(T_k: float, incoming, theta_star: NetworkParams, quad: QuadratureRule, cfg: BasisConfig):
    """Basis for the interval starting at ``T_k`` and the reset coefficients.

    ``incoming`` supplies ``values`` and ``gradients`` of ``u_h(., T_k^-)``.
    """
    emb = cfg.embedding
    basis = BasisSet(
        params=theta_star,
        embedding=emb,
        mask=cfg.mask,
        ic_slot=incoming if cfg.use_ic_slot else None,
        include_constant=cfg.include_constant,
        time=float(T_k) if emb.time_input else None,
    )
    if cfg.orthogonalize:
        basis = orthogonalize(basis, quad, cfg.rel_tol)
    beta = np.zeros(basis.n_basis)
    if cfg.use_ic_slot:
        beta[0] = 1.0
    return basis, CoeffState(beta, float(T_k))


def _energy_check(traj, rec, e_old, e_new, t):
    if e_new > e_old + rec.energy_tol * (1.0 + abs(e_old)):
        msg = f"energy rose from {e_old:.16e} to {e_new:.16e} at t = {t:.6g}"
        traj.violations.append((t, e_old, e_new))
        if rec.energy_violation == "fail":
            raise EnergyViolation(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def run_adaptive(problem, theta_star: NetworkParams, schedule: RestartSchedule, integrator: IntegratorConfig,
                 quad: QuadratureRule, record: RecordConfig = None, basis_cfg: BasisConfig = None,
                 embedding: InputEmbedding = None) -> Trajectory:
    """Walk the restart schedule: rebuild, assemble, step, record."""
    record = record or RecordConfig()
    if basis_cfg is None:
        if embedding is None:
            raise ValueError("need an embedding or a basis config")
        basis_cfg = BasisConfig.for_problem(problem, embedding)
    if not np.isclose(schedule.horizon, problem.horizon, rtol=0, atol=1e-12):
        raise ValueError("schedule does not end at the problem horizon")
    clock = _time.perf_counter
    t0 = clock()
    traj = Trajectory()
    x = quad.nodes
    ref = record.reference
    incoming = problem.ic
    u_prev = None
    step_count = 0
    S = integrator.stabilizer(problem)
    for k, (a, b) in enumerate(schedule.intervals()):
        basis, state = rebuild_basis_at(a, incoming, theta_star, quad, basis_cfg)
        system = build_system(basis, quad, problem)
        beta = state.beta
        e = system.energy(beta)
        m = system.mass(beta)
        u_now = system.nodal_values(beta)
        if k == 0:
            err = None
            if ref is not None:
                err = relative_l2(u_now, ref(x, a), quad.weights)
            traj.append(a, e, m, err, k, clock() - t0 if record.timing else None,
                        beta if record.keep_beta else None)
        else:
            jump = float(np.max(np.abs(u_now - u_prev)))
            e_minus = traj.energy[-1]
            traj.restarts.append({"time": a, "jump": jump, "energy_minus": e_minus, "energy_plus": e,
                                  "mass_minus": traj.mass[-1], "mass_plus": m})
            _energy_check(traj, record, e_minus, e, a)
        # only the newest basis is needed to evaluate the chain on the nodes again
        for old in traj.bases:
            old._cache.clear()
        traj.bases.append(basis)
        if not record.keep_systems:
            traj.systems.clear()
        traj.systems.append(system)
        stepper = make_stepper(integrator.kind, system, integrator.dt, S, integrator.alpha)
        n_steps = schedule.steps_in(a, b, integrator.dt)
        for n in range(1, n_steps + 1):
            beta = stepper.step(beta)
            step_count += 1
            t = a + n * integrator.dt if n < n_steps else b
            e_new = system.energy(beta)
            if not np.all(np.isfinite(beta)):
                raise FloatingPointError(f"non-finite coefficients at t = {t:.6g}")
            _energy_check(traj, record, traj.energy[-1], e_new, t)
            err = None
            if ref is not None and (step_count % record.error_stride == 0 or n == n_steps):
                err = relative_l2(system.nodal_values(beta), ref(x, t), quad.weights)
            traj.append(t, e_new, system.mass(beta), err, k, clock() - t0 if record.timing else None,
                        beta if record.keep_beta else None)
        u_prev = system.nodal_values(beta)
        incoming = SolutionField(basis, beta)
        traj.final = CoeffState(beta, b)
    return traj
