"""Neural feature networks and the augmented basis built from them.

A tanh feedforward network maps an embedded input to ``m`` features. A
:class:`BasisSet` wraps the network with an optional exact initial-condition
column in front, an optional constant column at the end, a boundary mask and
the post-orthogonalisation transform.
"""

import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from .errors import ShapeMismatch

CHUNK = 4096


class Field(Protocol):
    """Anything that can be sampled with values and spatial gradients."""

    def values(self, points: np.ndarray) -> np.ndarray: ...

    def gradients(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    hidden_widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("need at least one hidden layer")
        if self.input_dim < 1 or min(self.hidden_widths) < 1:
            raise ValueError("all widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")

    @property
    def n_features(self) -> int:
        return self.hidden_widths[-1]

    def layer_shapes(self):
        fan_in = self.input_dim
        for width in self.hidden_widths:
            yield width, fan_in
            fan_in = width


@dataclass(frozen=True, eq=False)
class NetworkParams:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases differ in layer count")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l}: weight {W.shape} and bias {b.shape} do not chain")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: expected fan-in {self.weights[l - 1].shape[0]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")

    @property
    def architecture(self) -> NetworkArchitecture:
        return NetworkArchitecture(self.weights[0].shape[1], tuple(W.shape[0] for W in self.weights))

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "NetworkParams":
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def equals(self, other: "NetworkParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


@dataclass(frozen=True)
class InputEmbedding:
    """Map from spatial points (and optionally a time value) to network inputs.

    ``periodic`` sends each coordinate ``x_j`` to ``(cos(2 pi x_j / L_j),
    sin(2 pi x_j / L_j))``. A time input, when present, is appended last and
    passes through unchanged.
    """

    spatial_dim: int
    kind: str = "identity"
    periods: tuple = ()
    time_input: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "periodic"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.kind == "periodic":
            periods = tuple(float(p) for p in self.periods)
            if len(periods) == 1 and self.spatial_dim > 1:
                periods = periods * self.spatial_dim
            if len(periods) != self.spatial_dim or min(periods) <= 0:
                raise ValueError("periodic embedding needs one positive period per dimension")
            object.__setattr__(self, "periods", periods)

    @property
    def spatial_out(self) -> int:
        return 2 * self.spatial_dim if self.kind == "periodic" else self.spatial_dim

    @property
    def output_dim(self) -> int:
        return self.spatial_out + (1 if self.time_input else 0)

    def apply(self, x: np.ndarray, t=None, order: int = 1):
        """Return ``(z0, dz0, ddz0)``.

        ``dz0[j]`` and ``ddz0[j]`` are the first and (pure) second derivatives
        with respect to ``x_j``, each of shape ``(n, output_dim)``; they are
        ``None`` when ``order`` is too low to need them.
        """
        x = np.asarray(x, dtype=np.float64)
        n, d = x.shape
        if d != self.spatial_dim:
            raise ShapeMismatch(f"points have dimension {d}, embedding expects {self.spatial_dim}")
        out = self.output_dim
        z0 = np.empty((n, out))
        dz0 = np.zeros((d, n, out)) if order >= 1 else None
        ddz0 = np.zeros((d, n, out)) if order >= 2 else None
        if self.kind == "identity":
            z0[:, :d] = x
            if dz0 is not None:
                for j in range(d):
                    dz0[j, :, j] = 1.0
        else:
            for j in range(d):
                w = 2.0 * np.pi / self.periods[j]
                c, s = np.cos(w * x[:, j]), np.sin(w * x[:, j])
                z0[:, 2 * j], z0[:, 2 * j + 1] = c, s
                if dz0 is not None:
                    dz0[j, :, 2 * j], dz0[j, :, 2 * j + 1] = -w * s, w * c
                if ddz0 is not None:
                    ddz0[j, :, 2 * j], ddz0[j, :, 2 * j + 1] = -w * w * c, -w * w * s
        if self.time_input:
            z0[:, -1] = 0.0 if t is None else t
        return z0, dz0, ddz0

    def to_dict(self) -> dict:
        return {"spatial_dim": self.spatial_dim, "kind": self.kind,
                "periods": list(self.periods), "time_input": self.time_input}

    @classmethod
    def from_dict(cls, d: dict) -> "InputEmbedding":
        return cls(int(d["spatial_dim"]), d["kind"], tuple(d.get("periods", ())), bool(d.get("time_input", False)))


@dataclass(frozen=True)
class BoundaryMask:
    """``prod_j (b_j - x_j)(x_j - a_j)`` on a box, or no mask at all."""

    kind: str = "none"
    lower: tuple = ()
    upper: tuple = ()

    @classmethod
    def dirichlet_box(cls, lower, upper) -> "BoundaryMask":
        return cls("dirichlet_box", tuple(map(float, lower)), tuple(map(float, upper)))

    @property
    def active(self) -> bool:
        return self.kind == "dirichlet_box"

    def _factors(self, x):
        a, b = np.asarray(self.lower), np.asarray(self.upper)
        q = (b - x) * (x - a)
        dq = a + b - 2.0 * x
        return q, dq

    def values(self, x: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.ones(x.shape[0])
        q, _ = self._factors(x)
        return np.prod(q, axis=1)

    def gradients(self, x: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(x)
        q, dq = self._factors(x)
        d = x.shape[1]
        out = np.empty_like(x)
        for j in range(d):
            others = np.prod(np.delete(q, j, axis=1), axis=1) if d > 1 else 1.0
            out[:, j] = dq[:, j] * others
        return out

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros(x.shape[0])
        q, _ = self._factors(x)
        d = x.shape[1]
        out = np.zeros(x.shape[0])
        for j in range(d):
            others = np.prod(np.delete(q, j, axis=1), axis=1) if d > 1 else 1.0
            out += -2.0 * others
        return out


def init_random(arch: NetworkArchitecture, scheme: str = "lecun", seed: int = 0) -> NetworkParams:
    """LeCun-normal or Glorot-uniform weights, zero biases; pure function of the seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_out, fan_in in arch.layer_shapes():
        if scheme == "lecun":
            W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        elif scheme == "glorot":
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-lim, lim, (fan_out, fan_in))
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return NetworkParams(tuple(weights), tuple(biases))


def sfli_split(m1: int, spatial_dim: int) -> list:
    base, extra = divmod(m1, spatial_dim)
    return [base + (1 if k < extra else 0) for k in range(spatial_dim)]


def init_sfli(arch: NetworkArchitecture, domain, slope=None, seed: int = 0, spatial_dim: int = None) -> NetworkParams:
    """Structured first layer: neuron j computes ``tanh(s (x_k - c_j))``.

    First-layer neurons are split evenly across the spatial coordinates of an
    identity embedding (coordinates come first in the input vector); on each
    axis the centres are equispaced with both endpoints included. The default
    slope on an axis with ``n_k`` neurons and length ``L_k`` is ``n_k / L_k``.
    Deeper layers equal those of ``init_random(arch, "lecun", seed)``.
    """
    lower, upper = np.asarray(domain.lower, float), np.asarray(domain.upper, float)
    d = spatial_dim or len(lower)
    if d > arch.input_dim:
        raise ValueError("SFLI needs the spatial coordinates as raw network inputs")
    base = init_random(arch, "lecun", seed)
    m1 = arch.hidden_widths[0]
    W = np.zeros((m1, arch.input_dim))
    b = np.zeros(m1)
    row = 0
    for k, count in enumerate(sfli_split(m1, d)):
        if count == 0:
            continue
        length = upper[k] - lower[k]
        s = (count / length) if slope is None else float(slope)
        centres = np.linspace(lower[k], upper[k], count) if count > 1 else np.array([0.5 * (lower[k] + upper[k])])
        W[row:row + count, k] = s
        b[row:row + count] = -s * centres
        row += count
    return NetworkParams((W,) + base.weights[1:], (b,) + base.biases[1:])


def network_forward(params: NetworkParams, z0, dz0=None):
    """Last hidden layer and its input tangents ``(d, n, m)`` by forward-mode chain rule."""
    z, dz = z0, dz0
    for W, b in zip(params.weights, params.biases):
        z = np.tanh(z @ W.T + b)
        if dz is not None:
            dz = (dz @ W.T) * (1.0 - z * z)
    return z, dz


@dataclass(frozen=True, eq=False)
class FeatureTransform:
    """Orthogonalising map applied to the raw feature block.

    Features become ``((raw - E @ projection) @ stage1) @ stage2`` where ``E``
    holds the preserved columns (initial-condition slot, constant or mask).
    """

    projection: Optional[np.ndarray]
    stage1: np.ndarray
    stage2: np.ndarray
    singular_values: np.ndarray = None

    @property
    def rank(self) -> int:
        return self.stage2.shape[1]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Augmented basis ``[ic_slot?, features..., constant?]``.

    Under a Dirichlet mask the constant column is the mask function itself.
    ``time`` fixes the time input of networks that take one.
    """

    params: NetworkParams
    embedding: InputEmbedding
    mask: BoundaryMask = field(default_factory=BoundaryMask)
    ic_slot: Optional[Field] = None
    include_constant: bool = True
    transform: Optional[FeatureTransform] = None
    time: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.params.weights[0].shape[1] != self.embedding.output_dim:
            raise ShapeMismatch(
                f"network expects {self.params.weights[0].shape[1]} inputs, "
                f"embedding produces {self.embedding.output_dim}"
            )

    @property
    def spatial_dim(self) -> int:
        return self.embedding.spatial_dim

    @property
    def n_raw_features(self) -> int:
        return self.params.weights[-1].shape[0]

    @property
    def n_features(self) -> int:
        return self.transform.rank if self.transform is not None else self.n_raw_features

    @property
    def n_preserved(self) -> int:
        return int(self.ic_slot is not None) + int(self.include_constant)

    @property
    def n_basis(self) -> int:
        return self.n_preserved + self.n_features

    @property
    def feature_slice(self) -> slice:
        start = int(self.ic_slot is not None)
        return slice(start, start + self.n_features)

    def with_transform(self, transform: Optional[FeatureTransform]) -> "BasisSet":
        return replace(self, transform=transform, _cache={})

    def _check_points(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1 and self.spatial_dim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[1] != self.spatial_dim:
            raise ShapeMismatch(f"points of shape {points.shape} do not match dimension {self.spatial_dim}")
        return points

    def raw_features(self, points, grad=True):
        """Masked network features (n, m) and gradients (n, m, d)."""
        x = self._check_points(points)
        z0, dz0, _ = self.embedding.apply(x, self.time, order=1 if grad else 0)
        z, dz = network_forward(self.params, z0, dz0)
        g = None if dz is None else np.moveaxis(dz, 0, -1)
        if self.mask.active:
            mu = self.mask.values(x)
            if g is not None:
                g = g * mu[:, None, None] + z[:, :, None] * self.mask.gradients(x)[:, None, :]
            z = z * mu[:, None]
        return z, g

    def preserved_columns(self, points, grad=True):
        """Initial-condition and constant columns (n, p) and gradients (n, p, d)."""
        x = self._check_points(points)
        n, d = x.shape
        vals, grads = [], []
        if self.ic_slot is not None:
            if grad and hasattr(self.ic_slot, "values_and_gradients"):
                v, g = self.ic_slot.values_and_gradients(x)
            else:
                v = self.ic_slot.values(x)
                g = self.ic_slot.gradients(x) if grad else None
            vals.append(np.asarray(v, dtype=np.float64))
            if grad:
                grads.append(np.asarray(g, dtype=np.float64).reshape(n, d))
        if self.include_constant:
            if self.mask.active:
                vals.append(self.mask.values(x))
                if grad:
                    grads.append(self.mask.gradients(x))
            else:
                vals.append(np.ones(n))
                if grad:
                    grads.append(np.zeros((n, d)))
        E = np.stack(vals, axis=1) if vals else np.zeros((n, 0))
        dE = (np.stack(grads, axis=1) if grads else np.zeros((n, 0, d))) if grad else None
        return E, dE

    def _transform_block(self, z, g, E, dE):
        T = self.transform
        if T.projection is not None:
            z = z - E @ T.projection
            if g is not None:
                g = g - (np.ascontiguousarray(dE.transpose(2, 0, 1)) @ T.projection).transpose(1, 2, 0)
        z = (z @ T.stage1) @ T.stage2
        if g is not None:
            # per-direction contiguous slices keep the products on BLAS
            gd = np.ascontiguousarray(g.transpose(2, 0, 1))
            g = ((gd @ T.stage1) @ T.stage2).transpose(1, 2, 0)
        return z, g

    def _evaluate_chunk(self, x, grad):
        z, g = self.raw_features(x, grad)
        E, dE = self.preserved_columns(x, grad)
        if self.transform is not None:
            z, g = self._transform_block(z, g, E, dE)
        ic = int(self.ic_slot is not None)
        vals = np.concatenate([E[:, :ic], z, E[:, ic:]], axis=1)
        grads = None
        if grad:
            grads = np.concatenate([dE[:, :ic], g, dE[:, ic:]], axis=1)
        return vals, grads

    def evaluate(self, points, grad=True):
        """Basis values (n, n_basis) and, if requested, gradients (n, n_basis, d).

        The last evaluation is cached against the identity of ``points``, which
        lets a chain of restarted bases share work at the quadrature nodes.
        """
        cached = self._cache.get("last")
        if cached is not None and cached[0] is points and (cached[2] is not None or not grad):
            return cached[1], cached[2]
        x = self._check_points(points)
        n = x.shape[0]
        vals = np.empty((n, self.n_basis))
        grads = np.empty((n, self.n_basis, self.spatial_dim)) if grad else None
        for start in range(0, n, CHUNK):
            stop = min(start + CHUNK, n)
            v, g = self._evaluate_chunk(x[start:stop], grad)
            vals[start:stop] = v
            if grad:
                grads[start:stop] = g
        if isinstance(points, np.ndarray):
            self._cache["last"] = (points, vals, grads)
        return vals, grads

    def eval_features(self, points) -> np.ndarray:
        return self.evaluate(points, grad=False)[0]

    def eval_feature_gradients(self, points) -> np.ndarray:
        return self.evaluate(points, grad=True)[1]


class SolutionField:
    """``u_h = beta . Phi`` for a fixed basis, usable as the next basis's first column."""

    def __init__(self, basis: BasisSet, beta):
        self.basis = basis
        self.beta = np.array(beta, dtype=np.float64)
        if self.beta.shape != (basis.n_basis,):
            raise ShapeMismatch(f"beta has shape {self.beta.shape}, basis has {basis.n_basis} functions")

    def values(self, points) -> np.ndarray:
        vals, _ = self.basis.evaluate(points, grad=False)
        return vals @ self.beta

    def gradients(self, points) -> np.ndarray:
        _, grads = self.basis.evaluate(points, grad=True)
        return np.einsum("nbd,b->nd", grads, self.beta)

    def values_and_gradients(self, points):
        vals, grads = self.basis.evaluate(points, grad=True)
        return vals @ self.beta, np.einsum("nbd,b->nd", grads, self.beta)


# --- checkpoint files -------------------------------------------------------
#
# line 1: b"NGCKPT 1\n"
# line 2: UTF-8 JSON header terminated by b"\n"; keys: architecture,
#         embedding, seed, blocks (list of {name, shape}), extra
# rest:   the blocks in header order, each as raw little-endian float64 in
#         C order: W1, b1, ..., WL, bL, then the optional "head" block.

MAGIC = b"NGCKPT 1\n"


def save_checkpoint(path, params: NetworkParams, embedding: InputEmbedding, seed=None, head=None, extra=None):
    arch = params.architecture
    blocks = []
    arrays = []
    for l, (W, b) in enumerate(zip(params.weights, params.biases), start=1):
        blocks += [{"name": f"W{l}", "shape": list(W.shape)}, {"name": f"b{l}", "shape": list(b.shape)}]
        arrays += [W, b]
    if head is not None:
        head = np.asarray(head, dtype=np.float64)
        blocks.append({"name": "head", "shape": list(head.shape)})
        arrays.append(head)
    header = {
        "architecture": {"input_dim": arch.input_dim, "hidden_widths": list(arch.hidden_widths), "activation": "tanh"},
        "embedding": embedding.to_dict(),
        "seed": seed,
        "dtype": "<f8",
        "blocks": blocks,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: NetworkParams
    embedding: InputEmbedding
    seed: Optional[int]
    head: Optional[np.ndarray]
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC):end])
    offset = end + 1
    arrays, head = [], None
    for block in header["blocks"]:
        count = int(np.prod(block["shape"])) if block["shape"] else 1
        a = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(block["shape"]).astype(np.float64)
        offset += 8 * count
        if block["name"] == "head":
            head = a
        else:
            arrays.append(a)
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return Checkpoint(NetworkParams.from_arrays(arrays), InputEmbedding.from_dict(header["embedding"]),
                      header.get("seed"), head, header.get("extra", {}))
