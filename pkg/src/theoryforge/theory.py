"""Theories: a next-position predictor ``f`` paired with a domain scorer ``c``."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._jsonio import dumps

HIDDEN = 8


def predictor_net(T: int, hidden: int = HIDDEN, rng=None) -> ad.Mlp:
    """``2T -> hidden -> hidden -> 2``, linear throughout."""
    return ad.Mlp([2 * T, hidden, hidden, 2], [ad.LINEAR] * 3, rng=rng)


def classifier_net(T: int, hidden: int = HIDDEN, leak: float = ad.DEFAULT_LEAK, rng=None) -> ad.Mlp:
    """``2T -> hidden -> hidden -> 1`` with leaky ReLU hidden layers and a linear logit."""
    return ad.Mlp([2 * T, hidden, hidden, 1], [ad.LEAKY_RELU, ad.LEAKY_RELU, ad.LINEAR], leak=leak, rng=rng)


@dataclass
class Theory:
    f: ad.Mlp
    c: ad.Mlp
    origin: str = "random"

    def __post_init__(self):
        if self.f.input_dim != self.c.input_dim:
            raise ad.ShapeError("predictor and classifier must share the input dimension")
        if self.f.output_dim != 2:
            raise ad.ShapeError("predictor must output a 2-vector")
        if self.c.output_dim != 1:
            raise ad.ShapeError("classifier must output one logit")

    @property
    def T(self) -> int:
        return self.f.input_dim // 2

    @property
    def id(self) -> str:
        payload = dumps({"f": self.f.params, "c": self.c.params, "fs": self.f.sizes, "cs": self.c.sizes})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def copy(self) -> "Theory":
        return Theory(self.f.copy(), self.c.copy(), self.origin)

    def to_dict(self) -> dict:
        return {"f": self.f.to_dict(), "c": self.c.to_dict(), "origin": self.origin}

    @classmethod
    def from_dict(cls, d: dict) -> "Theory":
        return cls(ad.Mlp.from_dict(d["f"]), ad.Mlp.from_dict(d["c"]), d.get("origin", "random"))


@dataclass
class TheorySet:
    theories: list
    T: int
    eps: float = 10.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.theories:
            raise ValueError("a theory set cannot be empty")
        if self.eps <= 0:
            raise ValueError("precision floor must be positive")
        if any(th.f.input_dim != 2 * self.T for th in self.theories):
            raise ad.ShapeError("all theories must take 2T inputs")

    def __len__(self):
        return len(self.theories)

    def __iter__(self):
        return iter(self.theories)

    def __getitem__(self, i):
        return self.theories[i]

    def copy(self) -> "TheorySet":
        return TheorySet([t.copy() for t in self.theories], self.T, self.eps, list(self.history))

    def to_dict(self) -> dict:
        return {"T": self.T, "eps": self.eps, "theories": [t.to_dict() for t in self.theories]}

    @classmethod
    def from_dict(cls, d: dict) -> "TheorySet":
        return cls([Theory.from_dict(t) for t in d["theories"]], int(d["T"]), float(d["eps"]))


def random_theory(T: int, rng, hidden: int = HIDDEN, leak: float = ad.DEFAULT_LEAK) -> Theory:
    return Theory(predictor_net(T, hidden, rng), classifier_net(T, hidden, leak, rng))


def affine_predictor(weight, bias, hidden: int = HIDDEN) -> ad.Mlp:
    """Predictor network computing exactly ``weight @ x + bias``.

    The first layer copies the input into the hidden units, the second is an
    identity and the last applies the affine map.
    """
    weight = np.asarray(weight, dtype=np.float64)
    n_in = weight.shape[1]
    if hidden < n_in:
        raise ValueError("hidden width must be at least the input dimension")
    w1 = np.zeros((hidden, n_in))
    w1[:n_in, :n_in] = np.eye(n_in)
    w3 = np.zeros((weight.shape[0], hidden))
    w3[:, :n_in] = weight
    return ad.Mlp.from_layers(
        [(w1, np.zeros(hidden), ad.LINEAR), (np.eye(hidden), np.zeros(hidden), ad.LINEAR), (w3, bias, ad.LINEAR)]
    )


def coordinate_classifier(T: int, coord: int, scale: float = 1.0, offset: float = 0.0,
                          hidden: int = HIDDEN, leak: float = ad.DEFAULT_LEAK) -> ad.Mlp:
    """Classifier whose logit is ``scale * (1 + leak**2) * x[coord] + offset``.

    Two stacked leaky ReLUs give ``h(z) - h(-z) = (1 + leak**2) z``.
    """
    n_in = 2 * T
    w1 = np.zeros((hidden, n_in))
    w1[0, coord] = 1.0
    w1[1, coord] = -1.0
    w2 = np.eye(hidden)
    w3 = np.zeros((1, hidden))
    w3[0, 0], w3[0, 1] = scale, -scale
    return ad.Mlp.from_layers(
        [(w1, np.zeros(hidden), ad.LEAKY_RELU), (w2, np.zeros(hidden), ad.LEAKY_RELU), (w3, [offset], ad.LINEAR)],
        leak=leak,
    )


def recurrence_weights(T: int, coeffs) -> np.ndarray:
    """2 x 2T weight matrix applying scalar ``coeffs`` (oldest first) per axis."""
    coeffs = list(coeffs)
    W = np.zeros((2, 2 * T))
    for j, a in enumerate(coeffs[::-1]):
        pos = T - 1 - j
        W[0, 2 * pos] = a
        W[1, 2 * pos + 1] = a
    return W


def free_weights(T: int) -> np.ndarray:
    """``y_t = 2 y_{t-1} - y_{t-2}``."""
    return recurrence_weights(T, [-1.0, 2.0])


def predict(theory: Theory, x) -> np.ndarray:
    return ad.forward(theory.f, x)


def dl_loss(u, eps: float):
    """Description-length loss ``log2(1 + (u/eps)^2)`` in bits."""
    if eps <= 0:
        raise ValueError("precision floor must be positive")
    u = np.asarray(u, dtype=np.float64)
    out = np.log1p((u / eps) ** 2) / np.log(2.0)
    return float(out) if out.ndim == 0 else out


def prediction_error(theory: Theory, x, y):
    """Euclidean norm of ``f(x) - y``; vectorized over rows."""
    r = predict(theory, x) - np.asarray(y, dtype=np.float64)
    return np.linalg.norm(r, axis=-1)


def error_matrix(theories, X, Y) -> np.ndarray:
    """Residual norms, shape ``(n_samples, n_theories)``."""
    return np.stack([prediction_error(t, X, Y) for t in theories], axis=1)


def classifier_logits(theories, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.concatenate([ad.forward(t.c, X) for t in theories], axis=1)


def classify(theories, x):
    """Index of the largest classifier logit; ties go to the lowest index."""
    theories = list(theories)
    if not theories:
        raise ValueError("cannot classify with an empty theory set")
    x = np.asarray(x, dtype=np.float64)
    idx = np.argmax(classifier_logits(theories, x), axis=1)
    return int(idx[0]) if x.ndim == 1 else idx


def domain_partition(theories, X) -> list:
    """Sample indices owned by each theory under classifier argmax."""
    theories = list(theories)
    owner = classify(theories, np.atleast_2d(X))
    owner = np.atleast_1d(owner)
    return [np.flatnonzero(owner == i) for i in range(len(theories))]
