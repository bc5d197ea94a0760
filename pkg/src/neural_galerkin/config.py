"""Experiment configuration: flat dotted-key TOML files.

Every key is ``section.name``; TOML tables are flattened, so ``[integrator]
dt = 1e-3`` and ``integrator.dt = 1e-3`` mean the same thing. Values that are
not given fall back to the problem's defaults. See docs/config.md.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import tomli

from .errors import ConfigError, UnknownProblem
from .evolve import IntegratorConfig
from .problems import ProblemSpec, make_problem
from .training import TrainConfig

PROBLEM_KEYS = {"epsilon", "kappa", "diffusion_scale", "horizon", "t_list"}

# key -> (type, allowed values or None)
KEYS = {
    "problem.name": (str, None),
    "basis.scheme": (str, ("random", "sfli", "pretrained")),
    "basis.arch": (list, None),
    "basis.seed": (int, None),
    "basis.init": (str, ("lecun", "glorot")),
    "basis.checkpoint": (str, None),
    "basis.adaptive": (bool, None),
    "basis.embedding": (str, ("identity", "periodic")),
    "basis.time_input": (bool, None),
    "basis.orthogonalize": (bool, None),
    "basis.rel_tol": (float, None),
    "basis.slope": (float, None),
    "quadrature.kind": (str, ("gauss", "monte_carlo")),
    "quadrature.points_per_dim": (int, None),
    "quadrature.n_mc": (int, None),
    "quadrature.seed": (int, None),
    "integrator.kind": (str, ("ssi1", "imex_rk2", "imex_rk2_ch", "dirk2", "dirk3")),
    "integrator.dt": (float, None),
    "integrator.S": (float, None),
    "integrator.alpha": (float, None),
    "schedule.t_list": (list, None),
    "training.steps": (int, None),
    "training.batch_size": (int, None),
    "training.lr0": (float, None),
    "training.schedule": (str, ("cosine", "constant")),
    "training.loss": (str, ("pinn_residual", "init_alignment")),
    "training.hard_constraint_ic": (bool, None),
    "training.ic_batch_size": (int, None),
    "training.init": (str, ("lecun", "glorot", "sfli")),
    "training.seed": (int, None),
    "record.error_stride": (int, None),
    "record.energy_violation": (str, ("warn", "fail")),
    "record.timing": (bool, None),
    "reference.kind": (str, ("auto", "exact", "spectral", "none")),
    "reference.N": (int, None),
    "reference.dt": (float, None),
    "run.method": (str, ("galerkin", "pinn_direct")),
    "run.label": (str, None),
    "converge.dt_list": (list, None),
    "converge.reference": (str, ("auto", "exact", "self")),
    "converge.reference_dt": (float, None),
    "output.dir": (str, None),
    "output.checkpoint": (str, None),
}


@dataclass(frozen=True)
class BasisSpec:
    scheme: str
    arch: tuple
    seed: int = 0
    init: str = "lecun"
    checkpoint: Optional[str] = None
    adaptive: bool = True
    embedding: str = "identity"
    time_input: bool = False
    orthogonalize: bool = True
    rel_tol: float = 1e-10
    slope: Optional[float] = None


@dataclass(frozen=True)
class QuadSpec:
    kind: str = "gauss"
    points_per_dim: int = 12
    n_mc: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class ReferenceSpec:
    kind: str = "auto"
    N: int = 1024
    dt: float = 1e-4


@dataclass(frozen=True)
class ConvergeSpec:
    dt_list: tuple = ()
    reference: str = "auto"
    reference_dt: float = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    problem_name: str
    problem_overrides: dict
    basis: BasisSpec
    quadrature: QuadSpec
    integrator: IntegratorConfig
    t_list: tuple
    training: TrainConfig
    error_stride: int = 10
    energy_violation: str = "fail"
    timing: bool = False
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    method: str = "galerkin"
    label: str = ""
    converge: ConvergeSpec = field(default_factory=ConvergeSpec)
    out_dir: str = "out"
    checkpoint_out: Optional[str] = None
    source: Optional[str] = None

    def problem(self) -> ProblemSpec:
        return make_problem(self.problem_name, self.problem_overrides)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint_out) if self.checkpoint_out else Path(self.out_dir) / "checkpoint.ngck"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, basis=replace(self.basis, seed=seed), training=replace(self.training, seed=seed))

    def with_dt(self, dt: float) -> "ExperimentConfig":
        return replace(self, integrator=replace(self.integrator, dt=float(dt)))


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value):
    if key.startswith("problem.") and key != "problem.name":
        name = key.split(".", 1)[1]
        if name not in PROBLEM_KEYS:
            raise ConfigError(f"unknown problem override {key!r}")
        if name == "t_list":
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list")
            return [float(v) for v in value]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    kind, allowed = KEYS[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}")
    if allowed is not None and value not in allowed:
        raise ConfigError(f"{key} must be one of {allowed}, got {value!r}")
    return value


def parse_config_text(text: str, source: str = None) -> ExperimentConfig:
    try:
        tree = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from None
    flat = {k: _coerce(k, v) for k, v in flatten(tree).items()}
    return build_config(flat, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, str(path))


def _positive(key, v):
    if not v > 0:
        raise ConfigError(f"{key} must be positive, got {v!r}")
    return v


def build_config(flat: dict, source: str = None) -> ExperimentConfig:
    if "problem.name" not in flat:
        raise ConfigError("problem.name is required")
    overrides = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("problem.") and k != "problem.name"}
    try:
        problem = make_problem(flat["problem.name"], overrides)
    except UnknownProblem:
        raise ConfigError(f"unknown problem {flat['problem.name']!r}") from None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad problem override: {exc}") from None
    d = problem.defaults
    g = flat.get

    scheme = g("basis.scheme", d.get("basis", "random"))
    arch = tuple(int(w) for w in g("basis.arch", d["arch"]))
    if not arch or min(arch) < 1:
        raise ConfigError("basis.arch must list positive widths")
    adaptive = g("basis.adaptive", len(problem.t_list) > 2)
    basis = BasisSpec(
        scheme=scheme, arch=arch, seed=g("basis.seed", 0), init=g("basis.init", "lecun"),
        checkpoint=g("basis.checkpoint"), adaptive=adaptive,
        embedding=g("basis.embedding", d.get("embedding", "identity")),
        time_input=g("basis.time_input", d.get("time_input", False) if scheme == "pretrained" else False),
        orthogonalize=g("basis.orthogonalize", True), rel_tol=_positive("basis.rel_tol", g("basis.rel_tol", 1e-10)),
        slope=g("basis.slope"),
    )
    if not basis.rel_tol < 1:
        raise ConfigError("basis.rel_tol must lie in (0, 1)")
    if scheme == "sfli" and basis.embedding != "identity":
        raise ConfigError("SFLI needs basis.embedding = 'identity'")

    quad = QuadSpec(
        kind=g("quadrature.kind", d.get("quadrature", "gauss")),
        points_per_dim=_positive("quadrature.points_per_dim", g("quadrature.points_per_dim", d.get("points_per_dim", 12))),
        n_mc=_positive("quadrature.n_mc", g("quadrature.n_mc", d.get("n_mc", 100_000))),
        seed=g("quadrature.seed", 0),
    )
    integ = IntegratorConfig(
        kind=g("integrator.kind", d.get("integrator", "imex_rk2")),
        dt=_positive("integrator.dt", g("integrator.dt", d.get("dt", 1e-3))),
        S=g("integrator.S"), alpha=g("integrator.alpha", 0.0),
    )
    if problem.is_linear != integ.kind.startswith("dirk"):
        raise ConfigError(f"integrator {integ.kind!r} does not fit problem {problem.name!r}")
    if problem.metric == "Hminus1" and integ.kind == "imex_rk2" or problem.metric == "L2" and integ.kind == "imex_rk2_ch":
        raise ConfigError(f"integrator {integ.kind!r} does not match the {problem.metric} metric")
    if integ.S is not None and integ.S < 0:
        raise ConfigError("integrator.S must be non-negative")

    t_list = tuple(float(t) for t in g("schedule.t_list", problem.t_list if adaptive else (0.0, problem.horizon)))
    if t_list[0] != 0.0 or abs(t_list[-1] - problem.horizon) > 1e-12 or any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ConfigError("schedule.t_list must increase strictly from 0 to the horizon")

    try:
        training = TrainConfig(
            steps=g("training.steps", 3000), batch_size=g("training.batch_size", d.get("batch_size", 2048)),
            lr0=_positive("training.lr0", g("training.lr0", 1e-3)), schedule=g("training.schedule", "cosine"),
            loss=g("training.loss", "pinn_residual"), hard_constraint_ic=g("training.hard_constraint_ic", True),
            ic_batch_size=g("training.ic_batch_size", 512), init=g("training.init", d.get("init", "lecun")),
            seed=g("training.seed", g("basis.seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    ref = ReferenceSpec(
        kind=g("reference.kind", "auto"), N=g("reference.N", d.get("reference_n", 1024)),
        dt=_positive("reference.dt", g("reference.dt", d.get("reference_dt", 1e-4))),
    )
    if ref.N < 2 or ref.N & (ref.N - 1):
        raise ConfigError("reference.N must be a power of two")
    conv = ConvergeSpec(
        dt_list=tuple(float(v) for v in g("converge.dt_list", ())),
        reference=g("converge.reference", "auto"),
        reference_dt=_positive("converge.reference_dt", g("converge.reference_dt", 1e-5)),
    )
    stride = g("record.error_stride", 10)
    if stride < 1:
        raise ConfigError("record.error_stride must be >= 1")
    method = g("run.method", "galerkin")
    label = g("run.label", f"{method}:{scheme}" + (":adaptive" if adaptive and method == "galerkin" else ""))
    return ExperimentConfig(
        problem_name=problem.name, problem_overrides=overrides, basis=basis, quadrature=quad,
        integrator=integ, t_list=t_list, training=training, error_stride=stride,
        energy_violation=g("record.energy_violation", "fail"), timing=g("record.timing", False),
        reference=ref, method=method, label=label, converge=conv,
        out_dir=g("output.dir", "out"), checkpoint_out=g("output.checkpoint"), source=source,
    )
