"""Small dense-network engine: batched forward pass, reverse-mode gradients,
SGD and Adam.

Parameters of an :class:`Mlp` live in one flat float64 vector; each layer's
weight matrix and bias are views into it. Optimizers therefore act on a
single array per network, which keeps the training loops cheap.

Weights use the ``(out, in)`` convention, so a layer computes ``W @ x + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LINEAR = "linear"
LEAKY_RELU = "leaky_relu"
SOFTMAX = "softmax"
ACTIVATIONS = (LINEAR, LEAKY_RELU, SOFTMAX)

DEFAULT_LEAK = 0.01


class ShapeError(ValueError):
    """Raised when an input or gradient does not match a network's shape."""


class NonFiniteError(FloatingPointError):
    """Raised when an update would consume NaN or infinite values."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Stack of affine layers with per-layer activations.

    ``sizes`` lists the layer widths including input and output, e.g.
    ``[6, 8, 8, 2]``; ``activations`` has one entry per affine layer.
    Softmax is only allowed on the last layer.
    """

    def __init__(self, sizes, activations, params=None, leak=DEFAULT_LEAK, rng=None):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ShapeError(f"invalid layer sizes {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need exactly one activation per affine layer")
        for k, act in enumerate(activations):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if act == SOFTMAX and k != len(activations) - 1:
                raise ValueError("softmax is only allowed as the output transform")
        self.sizes = sizes
        self.activations = activations
        self.leak = float(leak)
        if not 0.0 <= self.leak < 1.0:
            raise ValueError("leaky ReLU slope must lie in [0, 1)")

        self._slices = []
        offset = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + n_out * n_in)
            offset += n_out * n_in
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((w, b, (n_out, n_in)))
        self.n_params = offset

        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            params = np.empty(offset)
            for (w, b, shape), n_in in zip(self._slices, sizes[:-1]):
                bound = 1.0 / np.sqrt(n_in)
                params[w] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
                params[b] = rng.uniform(-bound, bound, size=shape[0])
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != offset:
            raise ShapeError(f"expected {offset} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise NonFiniteError("network parameters must be finite")
        self.params = params

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self._slices)

    def weight(self, k: int) -> np.ndarray:
        w, _, shape = self._slices[k]
        return self.params[w].reshape(shape)

    def bias(self, k: int) -> np.ndarray:
        return self.params[self._slices[k][1]]

    def layers(self):
        """List of ``(weight, bias, activation)`` triples (views)."""
        return [(self.weight(k), self.bias(k), self.activations[k]) for k in range(self.n_layers)]

    def split(self, flat: np.ndarray):
        """Split a flat parameter-shaped vector into per-layer (dW, db) views."""
        return [(flat[w].reshape(shape), flat[b]) for w, b, shape in self._slices]

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activations, params=self.params.copy(), leak=self.leak)

    @classmethod
    def from_layers(cls, layers, leak=DEFAULT_LEAK) -> "Mlp":
        """Build a network from ``(weight, bias, activation)`` triples."""
        sizes = [np.shape(layers[0][0])[1]]
        flat = []
        for w, b, _ in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64).ravel()
            if w.shape[1] != sizes[-1] or b.size != w.shape[0]:
                raise ShapeError("consecutive layer dimensions do not chain")
            sizes.append(w.shape[0])
            flat.extend([w.ravel(), b])
        return cls(sizes, [a for _, _, a in layers], params=np.concatenate(flat), leak=leak)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "leak": self.leak,
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()} for w, b, _ in self.layers()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        flat = []
        for layer in d["layers"]:
            flat.append(np.asarray(layer["weight"], dtype=np.float64).ravel())
            flat.append(np.asarray(layer["bias"], dtype=np.float64).ravel())
        params = np.concatenate(flat) if flat else np.empty(0)
        return cls(d["sizes"], d["activations"], params=params, leak=d.get("leak", DEFAULT_LEAK))

    def __call__(self, x):
        return forward(self, x)

    def __repr__(self):
        return f"Mlp(sizes={self.sizes}, activations={self.activations})"


@dataclass
class Gradient:
    """Flat gradient congruent with an :class:`Mlp`'s parameter vector."""

    flat: np.ndarray
    net: Mlp = field(repr=False)

    def layers(self):
        return self.net.split(self.flat)

    def __post_init__(self):
        if self.flat.shape != self.net.params.shape:
            raise ShapeError("gradient is not congruent with its network")


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise ShapeError(f"input has shape {x.shape}, network expects {net.input_dim} features")
    return xb, single


# Internally activations are column-major, shape (features, batch), so the
# per-layer matmuls and bias reductions run over contiguous rows.


def _lrelu(z, leak):
    return np.maximum(z, leak * z)


def _lrelu_grad(g, z, leak):
    return g * (leak + (1.0 - leak) * (z > 0))


def _forward_cache(net: Mlp, xb: np.ndarray):
    h = np.ascontiguousarray(xb.T)
    acts = [h]
    pre = []
    for w, b, act in net.layers():
        z = w @ h
        z += b[:, None]
        pre.append(z)
        if act == LINEAR:
            h = z
        elif act == LEAKY_RELU:
            h = _lrelu(z, net.leak)
        else:
            h = softmax(z.T).T
        acts.append(h)
    return acts, pre


def _backward_cols(net: Mlp, acts, pre, g):
    """``g`` is (out, batch); returns flat gradient and input gradient (in, batch)."""
    flat = np.zeros_like(net.params)
    grads = net.split(flat)
    layers = net.layers()
    for k in range(len(layers) - 1, -1, -1):
        w, _, act = layers[k]
        if act == LEAKY_RELU:
            g = _lrelu_grad(g, pre[k], net.leak)
        elif act == SOFTMAX:
            s = acts[k + 1]
            g = s * (g - np.sum(g * s, axis=0, keepdims=True))
        dw, db = grads[k]
        np.matmul(g, acts[k].T, out=dw)
        db[...] = g.sum(axis=1)
        g = w.T @ g
    return flat, g


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate ``net`` on one input vector or a batch of row vectors."""
    xb, single = _as_batch(net, x)
    h = xb.T
    for w, b, act in net.layers():
        h = w @ h
        h += b[:, None]
        if act == LEAKY_RELU:
            h = _lrelu(h, net.leak)
        elif act == SOFTMAX:
            h = softmax(h.T).T
    return h[:, 0] if single else h.T


def backward(net: Mlp, x, grad_out) -> tuple[Gradient, np.ndarray]:
    """Reverse-mode pass.

    ``grad_out`` is the derivative of a scalar loss with respect to the
    network output (one row per input row). Returns the parameter gradient
    of that loss and its derivative with respect to the input. Contributions
    of batch rows are summed; callers that want a batch mean scale
    ``grad_out`` accordingly.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (xb.shape[0], net.output_dim):
        raise ShapeError(f"output gradient has shape {g.shape}, expected {(xb.shape[0], net.output_dim)}")
    acts, pre = _forward_cache(net, xb)
    flat, gx = _backward_cols(net, acts, pre, np.ascontiguousarray(g.T))
    return Gradient(flat, net), (gx[:, 0] if single else gx.T)


def forward_with_cache(net: Mlp, xb: np.ndarray):
    """Batched forward pass that also returns what :func:`backward_from_cache` needs.

    The returned output is a (batch, out) view.
    """
    acts, pre = _forward_cache(net, xb)
    return acts[-1].T, (acts, pre)


def backward_from_cache(net: Mlp, cache, g: np.ndarray) -> np.ndarray:
    """Flat parameter gradient for output gradient ``g`` of shape (batch, out)."""
    acts, pre = cache
    flat, _ = _backward_cols(net, acts, pre, np.ascontiguousarray(g.T))
    return flat


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite value in optimizer input")


def sgd_step(params: np.ndarray, grads: np.ndarray, learning_rate: float) -> np.ndarray:
    """Plain gradient-descent update ``params - learning_rate * grads``."""
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError("parameter and gradient shapes differ")
    _check_finite(grads)
    return params - learning_rate * grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if alpha <= 0:
            raise ValueError("Adam step size must be positive")
        return cls(np.zeros(shape), np.zeros(shape), 0, alpha, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.alpha, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params, grads) -> tuple[np.ndarray, AdamState]:
    """One Adam update. Returns new parameters and a new state; inputs are untouched."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("Adam state, parameters and gradients must share a shape")
    _check_finite(params, grads)
    new = state.copy()
    out = params.copy()
    adam_update_(new, out, grads)
    return out, new


def adam_update_(state: AdamState, params: np.ndarray, grads: np.ndarray) -> None:
    """In-place Adam update of ``params`` and ``state`` (hot training path)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    params -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)


def cross_entropy_softmax(logits, target_index) -> tuple[float, np.ndarray]:
    """Cross entropy of ``softmax(logits)`` against a class index.

    Returns the loss and its gradient with respect to the logits.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError("logits must be a vector")
    if not 0 <= int(target_index) < z.size:
        raise IndexError(f"target index {target_index} out of range for {z.size} classes")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[target_index])
    grad = np.exp(shifted - log_norm)
    grad[target_index] -= 1.0
    return loss, grad


def cross_entropy_softmax_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy over rows; gradient already divided by batch size."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_norm
    n = z.shape[0]
    rows = np.arange(n)
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return loss, grad / n
