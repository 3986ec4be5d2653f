"""Fully-connected generator networks and their exact gradients.

A generator is a chain of affine layers ``y = act(W @ x + b)`` with ``W``
stored ``out x in``.  All arithmetic is float64.

Batched evaluation goes through :func:`matmul_rows`, which multiplies in
fixed blocks of :data:`CHUNK_ROWS` rows.  BLAS picks different kernels for
different matrix heights, so a plain ``X @ W.T`` can give a row slightly
different bits depending on how many other rows share the call.  Fixing
the block height makes every row's result independent of the batch it is
evaluated in, which is what lets a single re-evaluation of a latent
reproduce the loss recorded during a batched multi-start run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .exceptions import NumericError, ShapeError, UsageError

ACTIVATIONS = ("sigmoid", "identity", "tanh")
LOSS_KINDS = ("L2", "L1")
CHUNK_ROWS = 64


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x):
    """Logistic function, stable for large ``|x|`` (saturates, never overflows)."""
    out = expit(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def activation_apply(kind, x):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return np.array(x, dtype=np.float64) if np.ndim(x) else float(x)
    raise UsageError(f"unknown activation {kind!r}")


def activation_deriv(kind, x):
    """Derivative of the activation with respect to its input ``x``."""
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(np.asarray(x, dtype=np.float64)) if np.ndim(x) else 1.0
    raise UsageError(f"unknown activation {kind!r}")


def _deriv_from_output(kind, y):
    # all supported activations have derivatives expressible in their output
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    return None  # identity


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        w, b = _frozen(self.weight), _frozen(self.bias)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"layer weight {w.shape} and bias {b.shape} do not match")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("layer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class MlpGenerator:
    """Frozen fully-connected network ``G``; differentiable in its input.

    Parameters are copied and marked read-only on construction, so a
    generator can be shared freely between threads and callers.
    """

    layers: tuple
    id: str = "generator"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a generator needs at least one layer")
        for k, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {k} outputs {a.out_dim} values but layer {k + 1} expects {b.in_dim}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, weights, biases, activations, id="generator"):
        if isinstance(activations, str):
            activations = [activations] * len(weights)
        return cls(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, activations)), id=id)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple:
        return (self.input_dim,) + tuple(l.out_dim for l in self.layers)

    @property
    def activations(self) -> tuple:
        return tuple(l.activation for l in self.layers)

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def then(self, other: "MlpGenerator", id=None) -> "MlpGenerator":
        """Network computing ``other(self(z))``."""
        return MlpGenerator(self.layers + other.layers, id=id or f"{self.id}+{other.id}")

    def with_id(self, id: str) -> "MlpGenerator":
        return MlpGenerator(self.layers, id=id)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_flat_params(self, theta) -> "MlpGenerator":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        layers, pos = [], 0
        for l in self.layers:
            nw, nb = l.weight.size, l.bias.size
            w = theta[pos:pos + nw].reshape(l.weight.shape)
            b = theta[pos + nw:pos + nw + nb]
            pos += nw + nb
            layers.append(Layer(w, b, l.activation))
        return MlpGenerator(tuple(layers), id=self.id)

    def equals(self, other) -> bool:
        """Bitwise equality of architecture, parameters and id."""
        if not isinstance(other, MlpGenerator) or self.id != other.id:
            return False
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and a.weight.shape == b.weight.shape
            and a.weight.tobytes() == b.weight.tobytes()
            and a.bias.tobytes() == b.bias.tobytes()
            for a, b in zip(self.layers, other.layers))

    __eq__ = equals
    __hash__ = object.__hash__

    def __call__(self, z):
        return forward(self, z)

    def __repr__(self):
        chain = "->".join(str(d) for d in self.dims)
        return f"MlpGenerator(id={self.id!r}, dims={chain}, activations={self.activations})"


@dataclass
class GradientBundle:
    """Per-layer parameter gradients, shaped like the network's layers."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b))
                   for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A probe or generated image with intensities in [0, 1].

    ``data`` is flat, row-major and channel-interleaved.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        d = _frozen(np.ravel(self.data))
        if d.size != self.width * self.height * self.channels:
            raise ShapeError(
                f"{d.size} values for a {self.width}x{self.height}x{self.channels} image")
        if not np.all(np.isfinite(d)):
            raise NumericError("image values must be finite")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise UsageError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @classmethod
    def from_array(cls, a, width=None, height=None, channels=1):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 3:
            height, width, channels = a.shape
        elif a.ndim == 2:
            height, width = a.shape
        elif width is None or height is None:
            side = int(round(np.sqrt(a.size / channels)))
            width = height = side
        return cls(width, height, channels, a.ravel())

    @property
    def n_values(self) -> int:
        return self.data.size

    def to_array(self) -> np.ndarray:
        if self.channels == 1:
            return self.data.reshape(self.height, self.width)
        return self.data.reshape(self.height, self.width, self.channels)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def matmul_rows(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w.T`` for 2-D ``x``, with row results independent of ``len(x)``."""
    n = x.shape[0]
    pad = (-n) % CHUNK_ROWS
    if pad:
        x = np.concatenate([x, np.zeros((pad, x.shape[1]))])
    y = np.matmul(x.reshape(-1, CHUNK_ROWS, x.shape[1]), w.T)
    return y.reshape(-1, w.shape[0])[:n]


def matmul_rows_t(d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``d @ w`` with the same row-invariance guarantee as :func:`matmul_rows`."""
    n = d.shape[0]
    pad = (-n) % CHUNK_ROWS
    if pad:
        d = np.concatenate([d, np.zeros((pad, d.shape[1]))])
    y = np.matmul(d.reshape(-1, CHUNK_ROWS, d.shape[1]), w)
    return y.reshape(-1, w.shape[1])[:n]


def _as_rows(z, dim, what="latent"):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    rows = z[None, :] if single else z
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise ShapeError(f"{what} has shape {z.shape}, expected last dimension {dim}")
    return rows, single


def forward_trace(gen: MlpGenerator, x: np.ndarray, row_invariant=True) -> list:
    """Outputs of every layer for a 2-D input batch; element 0 is the input."""
    mm = matmul_rows if row_invariant else (lambda a, w: a @ w.T)
    outs = [x]
    for layer in gen.layers:
        pre = mm(outs[-1], layer.weight) + layer.bias
        outs.append(activation_apply(layer.activation, pre))
    return outs


def backprop_input(gen: MlpGenerator, outs: list, out_grad: np.ndarray, check=True) -> np.ndarray:
    """Gradient w.r.t. the network input given ``dL/d(output)`` per row."""
    delta = out_grad
    for k in range(len(gen.layers) - 1, -1, -1):
        layer = gen.layers[k]
        d = _deriv_from_output(layer.activation, outs[k + 1])
        if d is not None:
            delta = delta * d
        delta = matmul_rows_t(delta, layer.weight)
        if check and not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient at layer {k}")
    return delta


def forward(gen: MlpGenerator, z):
    """Evaluate ``G(z)`` for one latent ``(d,)`` or a batch ``(n, d)``."""
    rows, single = _as_rows(z, gen.input_dim)
    if not np.all(np.isfinite(rows)):
        raise NumericError("latent input must be finite")
    out = forward_trace(gen, rows)[-1]
    return out[0] if single else out


def grad_latent(gen: MlpGenerator, z, output_grad):
    """Reverse-mode ``dL/dz`` given ``output_grad = dL/dG(z)``."""
    rows, single = _as_rows(z, gen.input_dim)
    g, _ = _as_rows(output_grad, gen.output_dim, "output gradient")
    if g.shape[0] != rows.shape[0]:
        raise ShapeError(f"{g.shape[0]} output gradients for {rows.shape[0]} latents")
    outs = forward_trace(gen, rows)
    for k, o in enumerate(outs[1:]):
        if not np.all(np.isfinite(o)):
            raise NumericError(f"non-finite activation at layer {k}")
    dz = backprop_input(gen, outs, g)
    return dz[0] if single else dz


def loss_and_output_grad(output, target, loss_kind="L2"):
    """Batch-mean loss over all values and its gradient w.r.t. ``output``."""
    r = output - target
    n = r.size
    if loss_kind == "L2":
        return float(np.mean(r * r)), (2.0 / n) * r
    if loss_kind == "L1":
        return float(np.mean(np.abs(r))), np.sign(r) / n
    raise UsageError(f"unknown loss kind {loss_kind!r}")


def grad_params(gen: MlpGenerator, z_batch, target_batch, loss_kind="L2"):
    """Batch-mean reconstruction loss and its exact parameter gradients.

    Returns ``(loss, GradientBundle)``.  The loss is the mean over samples
    of the per-sample mean squared (``L2``) or absolute (``L1``) error.
    """
    x = np.asarray(z_batch, dtype=np.float64)
    t = np.asarray(target_batch, dtype=np.float64)
    if x.ndim == 1:
        x, t = x[None, :], t.reshape(1, -1)
    if x.shape[0] == 0:
        raise UsageError("grad_params needs a non-empty batch")
    if x.shape[1] != gen.input_dim or t.shape != (x.shape[0], gen.output_dim):
        raise ShapeError(
            f"batch shapes {x.shape} -> {t.shape} do not fit a {gen.input_dim}->{gen.output_dim} network")
    outs = forward_trace(gen, x, row_invariant=False)
    loss, delta = loss_and_output_grad(outs[-1], t, loss_kind)
    gw, gb = [None] * len(gen.layers), [None] * len(gen.layers)
    for k in range(len(gen.layers) - 1, -1, -1):
        layer = gen.layers[k]
        d = _deriv_from_output(layer.activation, outs[k + 1])
        if d is not None:
            delta = delta * d
        gw[k] = delta.T @ outs[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = delta @ layer.weight
    return loss, GradientBundle(gw, gb)


def compose_forward(gens: Iterable[MlpGenerator], z):
    out = z
    for g in gens:
        out = forward(g, out)
    return out


def as_image_rows(images, n_values: int, what="probe") -> tuple:
    """Coerce ImageTensor / array / sequence input to a 2-D float array."""
    if isinstance(images, ImageTensor):
        images = images.data
    elif isinstance(images, Sequence) and images and isinstance(images[0], ImageTensor):
        images = np.stack([im.data for im in images])
    return _as_rows(images, n_values, what)
