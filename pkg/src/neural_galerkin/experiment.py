"""Glue between configurations and the numerical modules.

Builds quadrature, bases and references from an ``ExperimentConfig``, runs
the Galerkin evolution or the PINN-direct baseline, and fits order tables.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import (InputEmbedding, NetworkArchitecture, init_random, init_sfli, load_checkpoint,
                    save_checkpoint)
from .config import ExperimentConfig
from .errors import ConfigError, MismatchedProblems
from .evolve import BasisConfig, RecordConfig, RestartSchedule, Trajectory, run_adaptive
from .quadrature import gauss_tensor, monte_carlo
from .reference import cached_reference, reference_sampler, relative_l2
from .training import pinn_model, pretrain


def build_quadrature(cfg: ExperimentConfig, problem):
    q = cfg.quadrature
    if q.kind == "gauss":
        return gauss_tensor(problem.domain, q.points_per_dim)
    return monte_carlo(problem.domain, q.n_mc, q.seed)


def build_embedding(cfg: ExperimentConfig, problem) -> InputEmbedding:
    b = cfg.basis
    return InputEmbedding(problem.spatial_dim, b.embedding, problem.periods if b.embedding == "periodic" else (),
                          b.time_input)


def resolve_theta(cfg: ExperimentConfig, problem):
    """Hidden-layer parameters, embedding and (for trained nets) the head."""
    b = cfg.basis
    if b.scheme == "pretrained":
        path = Path(b.checkpoint) if b.checkpoint else cfg.checkpoint_path
        if not path.exists():
            raise ConfigError(f"checkpoint {path} does not exist; run 'pretrain' first")
        ck = load_checkpoint(path)
        if ck.embedding.spatial_dim != problem.spatial_dim:
            raise ConfigError(f"checkpoint {path} was trained for dimension {ck.embedding.spatial_dim}")
        return ck.params, ck.embedding, ck.head
    emb = build_embedding(cfg, problem)
    arch = NetworkArchitecture(emb.output_dim, b.arch)
    if b.scheme == "sfli":
        return init_sfli(arch, problem.domain, b.slope, b.seed, problem.spatial_dim), emb, None
    return init_random(arch, b.init, b.seed), emb, None


def error_times(t_list, dt: float, stride: int) -> list:
    """Times at which the driver records an error (mirrors ``run_adaptive``)."""
    sched = RestartSchedule(tuple(t_list))
    times, count = [0.0], 0
    for a, b in sched.intervals():
        n_steps = sched.steps_in(a, b, dt)
        for n in range(1, n_steps + 1):
            count += 1
            if count % stride == 0 or n == n_steps:
                times.append(round(a + n * dt, 12) if n < n_steps else b)
    return times


def make_reference(cfg: ExperimentConfig, problem, quad, times):
    """``(points, t) -> values`` or ``None``."""
    kind = cfg.reference.kind
    if kind == "auto":
        if problem.exact_solution is not None:
            kind = "exact"
        elif not problem.is_linear:
            kind = "spectral"
        else:
            kind = "none"
    if kind == "none":
        return None
    if kind == "exact":
        if problem.exact_solution is None:
            raise ConfigError(f"{problem.name} has no analytic solution")
        return problem.exact_solution
    ref_dt = min(cfg.reference.dt, cfg.integrator.dt)
    ratio = cfg.integrator.dt / ref_dt
    if abs(ratio - round(ratio)) > 1e-8:
        raise ConfigError("integrator.dt must be a multiple of reference.dt")
    traj = cached_reference(problem, cfg.reference.N, ref_dt, times)
    return reference_sampler(traj, quad)


def record_config(cfg: ExperimentConfig, reference=None, **kw) -> RecordConfig:
    return RecordConfig(reference=reference, error_stride=cfg.error_stride,
                        energy_violation=cfg.energy_violation, timing=cfg.timing, **kw)


def run_galerkin(cfg: ExperimentConfig, with_reference: bool = True, **record_kw) -> Trajectory:
    problem = cfg.problem()
    quad = build_quadrature(cfg, problem)
    theta, emb, _ = resolve_theta(cfg, problem)
    ref = None
    if with_reference:
        ref = make_reference(cfg, problem, quad, error_times(cfg.t_list, cfg.integrator.dt, cfg.error_stride))
    mask_cfg = BasisConfig.for_problem(problem, emb, orthogonalize=cfg.basis.orthogonalize,
                                       rel_tol=cfg.basis.rel_tol)
    schedule = RestartSchedule(cfg.t_list)
    return run_adaptive(problem, theta, schedule, cfg.integrator, quad, record_config(cfg, ref, **record_kw),
                        mask_cfg)


@dataclass
class BaselineTrace:
    """Same columns as a Galerkin trajectory, for the PINN-direct baseline."""

    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    error: list = field(default_factory=list)
    basis_id: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    final_values: np.ndarray = None

    @property
    def final_error(self):
        errs = [e for e in self.error if e is not None]
        return errs[-1] if errs else None


def field_energy(problem, quad, u, grad_u) -> float:
    grad2 = np.sum(grad_u * grad_u, axis=1)
    e = 0.5 * problem.energy_scale * quad.integrate(grad2)
    if not problem.is_linear:
        e += problem.kappa * quad.integrate(0.25 * (u * u - 1.0) ** 2)
    return float(e)


def run_pinn_direct(cfg: ExperimentConfig, with_reference: bool = True) -> BaselineTrace:
    """Evaluate the trained network itself on the metric grid (no Galerkin evolution)."""
    import time as _time
    problem = cfg.problem()
    if cfg.basis.scheme != "pretrained":
        raise ConfigError("run.method = 'pinn_direct' needs basis.scheme = 'pretrained'")
    quad = build_quadrature(cfg, problem)
    theta, emb, head = resolve_theta(cfg, problem)
    if head is None:
        raise ConfigError("checkpoint has no output head")
    model = replace(pinn_model(problem, cfg.training.hard_constraint_ic, emb))
    times = error_times(cfg.t_list, cfg.integrator.dt, cfg.error_stride)
    ref = make_reference(cfg, problem, quad, times) if with_reference else None
    out = BaselineTrace()
    t0 = _time.perf_counter()
    x = quad.nodes
    for t in times:
        u, g = model.evaluate_with_gradients(theta, head, x, t)
        err = relative_l2(u, ref(x, t), quad.weights) if ref is not None else None
        out.times.append(float(t))
        out.energy.append(field_energy(problem, quad, u, g))
        out.mass.append(float(quad.integrate(u)))
        out.error.append(err)
        out.basis_id.append(0)
        out.wall.append(_time.perf_counter() - t0 if cfg.timing else None)
        out.final_values = u
    return out


def run_experiment(cfg: ExperimentConfig, with_reference: bool = True):
    if cfg.method == "pinn_direct":
        return run_pinn_direct(cfg, with_reference)
    return run_galerkin(cfg, with_reference)


def pretrain_experiment(cfg: ExperimentConfig, callback=None):
    """Train, write the checkpoint (creating its directory) and return the result."""
    problem = cfg.problem()
    emb = build_embedding(replace(cfg, basis=replace(cfg.basis, time_input=True)), problem)
    arch = NetworkArchitecture(emb.output_dim, cfg.basis.arch)
    res = pretrain(problem, arch, cfg.training, emb, callback)
    path = cfg.checkpoint_path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, res.params, res.embedding, seed=cfg.training.seed, head=res.head,
                    extra={"problem": problem.name, "steps": cfg.training.steps,
                           "hard_constraint_ic": cfg.training.hard_constraint_ic})
    return res, path


# --- order tables -------------------------------------------------------------

def local_slopes(dts, errors) -> np.ndarray:
    ld, le = np.log(np.asarray(dts, float)), np.log(np.asarray(errors, float))
    return np.diff(le) / np.diff(ld)


def fit_order(dts, errors, spread: float = 0.3):
    """Least-squares log-log slope over the largest consecutive window whose
    local slopes vary by less than ``spread``; ties go to the coarser end.

    Returns ``(slope, (i, j))`` with the window covering points ``i..j``.
    """
    dts = np.asarray(dts, float)
    errors = np.asarray(errors, float)
    if dts.size < 3:
        raise ValueError("need at least three step sizes")
    order = np.argsort(-dts)
    dts, errors = dts[order], errors[order]
    s = local_slopes(dts, errors)
    best = (0, 1)
    for i in range(s.size):
        for j in range(i, s.size):
            seg = s[i:j + 1]
            if seg.max() - seg.min() >= spread:
                break
            if j + 1 - i > best[1] - best[0]:
                best = (i, j + 1)
    i, j = best
    slope = np.polyfit(np.log(dts[i:j + 1]), np.log(errors[i:j + 1]), 1)[0]
    return float(slope), (i, j)


def _final_nodal(cfg: ExperimentConfig):
    traj = run_galerkin(cfg, with_reference=False)
    return traj.final_nodal_values()


def converge(cfg: ExperimentConfig, dt_list=None, workers: int = 1):
    """Final-time errors for each dt against the exact solution or a fine self-reference."""
    dt_list = sorted((float(v) for v in (dt_list or cfg.converge.dt_list)), reverse=True)
    if len(dt_list) < 3:
        raise ConfigError("a convergence study needs at least three dt values")
    problem = cfg.problem()
    quad = build_quadrature(cfg, problem)
    mode = cfg.converge.reference
    if mode == "auto":
        mode = "exact" if problem.exact_solution is not None else "self"
    jobs = [cfg.with_dt(dt) for dt in dt_list]
    if mode == "self":
        jobs.append(cfg.with_dt(cfg.converge.reference_dt))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            finals = list(pool.map(_final_nodal, jobs))
    else:
        finals = [_final_nodal(j) for j in jobs]
    if mode == "exact":
        if problem.exact_solution is None:
            raise ConfigError(f"{problem.name} has no analytic solution")
        ref = problem.exact_solution(quad.nodes, problem.horizon)
    else:
        ref = finals.pop()
    errors = [relative_l2(u, ref, quad.weights) for u in finals]
    slope, window = fit_order(dt_list, errors)
    return dt_list, errors, slope, window


def check_comparable(cfgs):
    first = cfgs[0].problem()
    for c in cfgs[1:]:
        p = c.problem()
        if p.name != first.name or p.horizon != first.horizon or c.problem_overrides != cfgs[0].problem_overrides:
            raise MismatchedProblems(f"{c.source or c.label}: {p.name} differs from {first.name}")
    return first
