"""Offline pre-training of the feature network.

Losses are built on the reverse-mode tape in :mod:`autodiff`. Spatial and
temporal derivatives of the network output are carried forward as extra
streams through every layer, so the PINN residual needs no nested tapes:

    a = z W^T + b,    z' = tanh(a),   s = 1 - z'^2
    dz'  = s * (dz W^T)
    ddz' = s * (ddz W^T) - 2 z' s * (dz W^T)^2
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Var, backward
from .basis import InputEmbedding, NetworkArchitecture, NetworkParams, init_random, init_sfli
from .errors import NonFiniteGradient, UnsupportedProblem

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if total <= 0:
        return lr0
    if not 0 <= step <= total:
        raise ValueError("step must lie in [0, total]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total)))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float):
    """Bias-corrected Adam; returns new parameter and state objects."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient has non-finite entries")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m_new, v_new, p_new = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p_new.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
        m_new.append(m)
        v_new.append(v)
    return p_new, AdamState(m_new, v_new, t, b1, b2, state.eps)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 2048
    lr0: float = 1e-3
    schedule: str = "cosine"
    loss: str = "pinn_residual"
    hard_constraint_ic: bool = True
    ic_batch_size: int = 512
    init: str = "lecun"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.loss not in ("pinn_residual", "init_alignment"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.init not in ("lecun", "glorot", "sfli"):
            raise ValueError(f"unknown init scheme {self.init!r}")


# --- network with derivative streams -----------------------------------------

def stream_layer(P, W: Var, b: Var, pairs) -> Var:
    """One tanh layer acting on a packed stack of streams.

    ``P`` has shape (S, n, w_in): slot 0 holds the activations, the other
    slots hold derivative streams. ``pairs`` lists ``(q, f)`` where slot ``q``
    is the pure second derivative along the direction of first-order slot
    ``f``; every slot not named as some ``q`` is first order.
    """
    Pv = P.value if isinstance(P, Var) else np.asarray(P)
    Wv, bv = W.value, b.value
    S, n, _ = Pv.shape
    partner = np.full(S, -1, dtype=np.int64)
    for q, f in pairs:
        partner[q] = f
    A = (Pv.reshape(S * n, -1) @ Wv.T).reshape(S, n, -1)
    A[0] += bv
    out = kernels.stream_tanh_forward(A, partner)

    def back(G):
        gA = kernels.stream_tanh_backward(G, A, partner)
        flat = gA.reshape(S * n, -1)
        gW = flat.T @ Pv.reshape(S * n, -1)
        gb = gA[0].sum(axis=0)
        gP = (flat @ Wv).reshape(Pv.shape) if isinstance(P, Var) else None
        return gP, gW, gb

    parents = (P, W, b) if isinstance(P, Var) else (Var(Pv), W, b)
    return Var(out, parents, back)


def _stream_forward(weights, biases, packed, pairs):
    z = packed
    for W, b in zip(weights, biases):
        z = stream_layer(z, W, b, pairs)
    return z


def _embed_streams(embedding: InputEmbedding, x, t=None, second_order=True):
    """Packed input stack ``[z0, d/dx_j..., d/dt?, d2/dx_j2...]`` and slot names."""
    z0, dz0, ddz0 = embedding.apply(x, t, order=2 if second_order else 0)
    d = embedding.spatial_dim
    slots, names = [z0], ["z"]
    if second_order:
        slots += [dz0[j] for j in range(d)]
        names += [f"x{j}" for j in range(d)]
        if embedding.time_input:
            e = np.zeros_like(z0)
            e[:, -1] = 1.0
            slots.append(e)
            names.append("t")
        slots += [ddz0[j] for j in range(d)]
        names += [f"xx{j}" for j in range(d)]
    pairs = [(names.index(f"xx{j}"), names.index(f"x{j}")) for j in range(d)] if second_order else []
    return np.stack(slots), names, pairs


def _param_vars(params: NetworkParams, head):
    Ws = [Var(W) for W in params.weights]
    bs = [Var(b) for b in params.biases]
    return Ws, bs, Var(head)


def _grads(params: NetworkParams, Ws, bs, h):
    flat = []
    for W, b in zip(Ws, bs):
        flat += [W.grad if W.grad is not None else np.zeros_like(W.value),
                 b.grad if b.grad is not None else np.zeros_like(b.value)]
    return flat, (h.grad if h.grad is not None else np.zeros_like(h.value))


def loss_init_alignment(params: NetworkParams, head, sample_points, u0_values, embedding: InputEmbedding = None):
    """Mean squared mismatch ``(1/N) sum |beta^T Phi(x_i) - u0(x_i)|^2`` and its gradients.

    Returns ``(loss, (param_grads, head_grad))`` with ``param_grads`` ordered W1, b1, ...
    """
    x = np.asarray(sample_points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    embedding = embedding or InputEmbedding(x.shape[1])
    z0, _, _ = embedding.apply(x, 0.0, order=0)
    Ws, bs, h = _param_vars(params, head)
    z = _stream_forward(Ws, bs, z0[None], [])
    r = (z @ h)[0] - np.asarray(u0_values, dtype=np.float64)
    loss = (r * r).mean()
    backward(loss)
    return float(loss.value), _grads(params, Ws, bs, h)


@dataclass(frozen=True, eq=False)
class PinnModel:
    """``u_p(x, t) = u0(x) + t mu(x) N(x, t)`` (hard) or ``mu(x) N(x, t)`` (soft)."""

    problem: object
    embedding: InputEmbedding
    hard_ic: bool = True

    @property
    def mask(self):
        from .basis import BoundaryMask
        p = self.problem
        if p.bc == "dirichlet_box":
            return BoundaryMask.dirichlet_box(p.domain.lower, p.domain.upper)
        return BoundaryMask()

    def fields(self, Ws, bs, h, x, t, derivatives=True):
        """Return ``u`` and, if requested, ``u_t`` and ``lap u`` as tape nodes."""
        p, mask = self.problem, self.mask
        tcol = np.asarray(t, dtype=np.float64).reshape(-1)
        packed, names, pairs = _embed_streams(self.embedding, x, None, second_order=derivatives)
        if self.embedding.time_input:
            packed[0, :, -1] = tcol
        out = _stream_forward(Ws, bs, packed, pairs) @ h
        N = out[0]
        mu = mask.values(x)
        if self.hard_ic:
            scale = tcol * mu
            u = p.ic.values(x) + scale * N
        else:
            u = mu * N
        if not derivatives:
            return u, None, None
        d = p.spatial_dim
        Nx = [out[names.index(f"x{j}")] for j in range(d)]
        lapN = out[names.index("xx0")]
        for j in range(1, d):
            lapN = lapN + out[names.index(f"xx{j}")]
        gmu, lmu = mask.gradients(x), mask.laplacian(x)
        if mask.active:
            cross = Nx[0] * (2.0 * gmu[:, 0])
            for j in range(1, d):
                cross = cross + Nx[j] * (2.0 * gmu[:, j])
            lap_core = lmu * N + cross + mu * lapN
        else:
            lap_core = lapN
        Nt = out[names.index("t")] if "t" in names else None
        if self.hard_ic:
            ut = mu * N if Nt is None else mu * N + (tcol * mu) * Nt
            lap = p.ic.laplacian(x) + tcol * lap_core
        else:
            ut = (mu * Nt) if Nt is not None else Var(np.zeros(x.shape[0]))
            lap = lap_core
        return u, ut, lap

    def evaluate(self, params: NetworkParams, head, x, t):
        Ws = [Var(W) for W in params.weights]
        bs = [Var(b) for b in params.biases]
        u, _, _ = self.fields(Ws, bs, Var(head), np.asarray(x, float), np.full(len(x), float(t)), derivatives=False)
        return u.value

    def evaluate_with_gradients(self, params: NetworkParams, head, x, t):
        """``u_p`` and its spatial gradient ``(n, d)`` at a fixed time."""
        x = np.asarray(x, float)
        p, mask = self.problem, self.mask
        packed, names, pairs = _embed_streams(self.embedding, x, None, second_order=True)
        if self.embedding.time_input:
            packed[0, :, -1] = float(t)
        Ws = [Var(W) for W in params.weights]
        bs = [Var(b) for b in params.biases]
        out = _stream_forward(Ws, bs, packed, pairs).value @ head
        N = out[0]
        Nx = np.stack([out[names.index(f"x{j}")] for j in range(p.spatial_dim)], axis=1)
        mu, gmu = mask.values(x), mask.gradients(x)
        core, gcore = mu * N, gmu * N[:, None] + mu[:, None] * Nx
        if self.hard_ic:
            return p.ic.values(x) + t * core, p.ic.gradients(x) + t * gcore
        return core, gcore


def pinn_model(problem, hard_ic=True, embedding: InputEmbedding = None) -> PinnModel:
    if problem.metric == "Hminus1":
        raise UnsupportedProblem("the residual loss is only implemented for L2 gradient flows")
    if embedding is None:
        kind = problem.defaults.get("embedding", "identity")
        embedding = InputEmbedding(problem.spatial_dim, kind, problem.periods if kind == "periodic" else (), True)
    return PinnModel(problem, embedding, hard_ic)


def _strong_residual(problem, u, ut, lap):
    if problem.is_linear:
        return ut - problem.diffusion_scale * lap
    return ut - problem.epsilon ** 2 * lap + problem.kappa * (u * u * u - u)


def loss_pinn_residual(params: NetworkParams, head, problem, space_time_samples, hard_ic=True,
                       ic_points=None, embedding: InputEmbedding = None):
    """Mean squared strong-form residual at ``(x, t)`` samples and its gradients.

    ``space_time_samples`` is ``(n, d + 1)`` with time in the last column. With
    ``hard_ic=False`` the initial mismatch at ``ic_points`` is added.
    """
    model = pinn_model(problem, hard_ic, embedding)
    xt = np.asarray(space_time_samples, dtype=np.float64)
    x, t = xt[:, :-1], xt[:, -1]
    Ws, bs, h = _param_vars(params, head)
    u, ut, lap = model.fields(Ws, bs, h, x, t)
    R = _strong_residual(problem, u, ut, lap)
    loss = (R * R).mean()
    if not hard_ic:
        xi = np.asarray(ic_points, dtype=np.float64)
        u0, _, _ = model.fields(Ws, bs, h, xi, np.zeros(xi.shape[0]), derivatives=False)
        r0 = u0 - problem.ic.values(xi)
        loss = loss + (r0 * r0).mean()
    backward(loss)
    return float(loss.value), _grads(params, Ws, bs, h)


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: NetworkParams
    head: np.ndarray
    embedding: InputEmbedding
    trace: list = field(default_factory=list)  # (step, lr, loss)

    @property
    def losses(self):
        return np.array([row[2] for row in self.trace])


def _uniform(rng, box, n):
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    return lo + (hi - lo) * rng.random((n, len(lo)))


def pretrain(problem, arch: NetworkArchitecture, cfg: TrainConfig, embedding: InputEmbedding = None,
             callback=None) -> TrainResult:
    """Adam on the configured loss; samples are redrawn at every step.

    The head is returned alongside the hidden-layer parameters so the trained
    network can also be evaluated directly as a baseline.
    """
    if cfg.loss == "pinn_residual":
        model = pinn_model(problem, cfg.hard_constraint_ic, embedding)
        embedding = model.embedding
    else:
        if embedding is None:
            kind = problem.defaults.get("embedding", "identity")
            embedding = InputEmbedding(problem.spatial_dim, kind, problem.periods if kind == "periodic" else ())
    if arch.input_dim != embedding.output_dim:
        raise ValueError(f"architecture input {arch.input_dim} != embedding output {embedding.output_dim}")
    sample_ss, head_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if cfg.init == "sfli":
        if embedding.kind != "identity":
            raise ValueError("SFLI needs an identity embedding")
        params = init_sfli(arch, problem.domain, seed=cfg.seed, spatial_dim=problem.spatial_dim)
    else:
        params = init_random(arch, cfg.init, cfg.seed)
    head_rng = np.random.default_rng(head_ss)
    head = head_rng.standard_normal(arch.n_features) / np.sqrt(arch.n_features)
    rng = np.random.default_rng(sample_ss)
    flat = params.arrays() + [head]
    state = AdamState.zeros_like(flat)
    trace = []
    for step in range(cfg.steps):
        lr = cosine_lr(step, cfg.steps, cfg.lr0) if cfg.schedule == "cosine" else cfg.lr0
        x = _uniform(rng, problem.domain, cfg.batch_size)
        cur = NetworkParams.from_arrays(flat[:-1])
        if cfg.loss == "pinn_residual":
            t = problem.horizon * rng.random(cfg.batch_size)
            xi = None if cfg.hard_constraint_ic else _uniform(rng, problem.domain, cfg.ic_batch_size)
            loss, (g, gh) = loss_pinn_residual(cur, flat[-1], problem, np.column_stack([x, t]),
                                               cfg.hard_constraint_ic, xi, embedding)
        else:
            loss, (g, gh) = loss_init_alignment(cur, flat[-1], x, problem.ic.values(x), embedding)
        if not math.isfinite(loss):
            raise NonFiniteGradient(f"loss became non-finite at step {step}")
        trace.append((step, lr, loss))
        flat, state = adam_step(flat, g + [gh], state, lr)
        if callback is not None:
            callback(step, lr, loss)
    return TrainResult(NetworkParams.from_arrays(flat[:-1]), flat[-1], embedding, trace)
