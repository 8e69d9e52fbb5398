"""Small expression trees for affine prediction rules.

Leaves are input variables ``Var(i)`` (index into the flattened window),
tagged constants ``Const`` and named parameters ``Param`` (used by master
theories). Inner nodes are ``Add``, ``Mul`` and ``Neg``. Nodes are frozen
dataclasses, so ``==`` is structural equality and trees are hashable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

INTEGER = "integer"
RATIONAL = "rational"
REAL = "real"
KINDS = (INTEGER, RATIONAL, REAL)


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    value: float
    kind: str = REAL
    num: int | None = None
    den: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constant kind {self.kind!r}")
        if self.kind == REAL:
            return
        if self.kind == INTEGER and self.den not in (None, 1):
            raise ValueError("integer constants have denominator 1")
        if self.num is None:
            raise ValueError("tagged constants need a numerator")
        den = 1 if self.den is None else self.den
        if den < 1 or math.gcd(abs(self.num), den) != 1:
            raise ValueError(f"{self.num}/{den} is not in lowest terms")

    @classmethod
    def integer(cls, m: int) -> "Const":
        return cls(float(m), INTEGER, int(m), 1)

    @classmethod
    def rational(cls, m: int, n: int) -> "Const":
        if n == 1:
            return cls.integer(m)
        return cls(m / n, RATIONAL, int(m), int(n))

    @classmethod
    def real(cls, r: float) -> "Const":
        return cls(float(r), REAL)


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Add:
    terms: tuple


@dataclass(frozen=True)
class Mul:
    factors: tuple


@dataclass(frozen=True)
class Neg:
    arg: object


PLACEHOLDER = Param("s")


def children(e) -> tuple:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Neg):
        return (e.arg,)
    return ()


def rebuild(e, kids):
    if isinstance(e, Add):
        return Add(tuple(kids))
    if isinstance(e, Mul):
        return Mul(tuple(kids))
    if isinstance(e, Neg):
        return Neg(kids[0])
    return e


def leaves(e):
    """Pre-order iterator over leaves."""
    kids = children(e)
    if not kids:
        yield e
        return
    for k in kids:
        yield from leaves(k)


def map_leaves(e, fn):
    kids = children(e)
    if not kids:
        return fn(e)
    return rebuild(e, [map_leaves(k, fn) for k in kids])


def evaluate(e, X, params=None):
    """Evaluate on a single window or a batch of windows (rows)."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(e, Var):
        return X[..., e.index]
    if isinstance(e, Const):
        return np.full(X.shape[:-1], e.value) if X.ndim > 1 else np.float64(e.value)
    if isinstance(e, Param):
        if params is None or e.name not in params:
            raise KeyError(f"unbound parameter {e.name}")
        return np.full(X.shape[:-1], float(params[e.name])) if X.ndim > 1 else np.float64(params[e.name])
    if isinstance(e, Add):
        return sum((evaluate(t, X, params) for t in e.terms[1:]), evaluate(e.terms[0], X, params))
    if isinstance(e, Mul):
        out = evaluate(e.factors[0], X, params)
        for f in e.factors[1:]:
            out = out * evaluate(f, X, params)
        return out
    if isinstance(e, Neg):
        return -evaluate(e.arg, X, params)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate_pair(exprs, X, params=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack([evaluate(e, X, params) for e in exprs], axis=1)


def affine_row(coeffs, bias) -> object:
    """Tree for ``sum_j coeffs[j] * x_j + bias``.

    ``coeffs`` and ``bias`` are ``Const`` instances. Zero terms are dropped,
    unit coefficients become bare variables (negated for -1) and the
    constant goes last.
    """
    terms = []
    for j, c in enumerate(coeffs):
        if c.value == 0.0:
            continue
        if c.kind != REAL and c.value == 1.0:
            terms.append(Var(j))
        elif c.kind != REAL and c.value == -1.0:
            terms.append(Neg(Var(j)))
        else:
            terms.append(Mul((c, Var(j))))
    if bias.value != 0.0:
        terms.append(bias)
    if not terms:
        return Const.integer(0)
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def _term_key(t):
    # variables ordered by index, constants and parameters last
    for leaf in leaves(t):
        if isinstance(leaf, Var):
            return (0, leaf.index)
    return (1, 0)


def canonical(e):
    """Sort every sum's terms by input index, constants last (stable)."""
    kids = children(e)
    if not kids:
        return e
    kids = [canonical(k) for k in kids]
    if isinstance(e, Add):
        flat = []
        for k in kids:
            flat.extend(k.terms if isinstance(k, Add) else (k,))
        kids = sorted(flat, key=_term_key)
    return rebuild(e, kids)


def skeleton(e):
    """Replace every constant (and parameter) by one placeholder symbol."""
    return map_leaves(e, lambda leaf: PLACEHOLDER if isinstance(leaf, (Const, Param)) else leaf)


def _fmt_const(c):
    if isinstance(c, Param):
        return c.name
    if c.kind == INTEGER:
        return str(c.num)
    if c.kind == RATIONAL:
        return f"{c.num}/{c.den}"
    return repr(c.value)


def to_str(e, names=None) -> str:
    name = (lambda i: f"x{i}") if names is None else (lambda i: names[i])
    if isinstance(e, Var):
        return name(e.index)
    if isinstance(e, (Const, Param)):
        return _fmt_const(e)
    if isinstance(e, Neg):
        return "-" + to_str(e.arg, names)
    if isinstance(e, Mul):
        return "*".join(to_str(f, names) if not isinstance(f, Add) else f"({to_str(f, names)})" for f in e.factors)
    if isinstance(e, Add):
        out = to_str(e.terms[0], names)
        for t in e.terms[1:]:
            s = to_str(t, names)
            out += f" - {s[1:]}" if s.startswith("-") else f" + {s}"
        return out
    raise TypeError(f"not an expression node: {e!r}")


def to_dict(e) -> dict:
    if isinstance(e, Var):
        return {"var": e.index}
    if isinstance(e, Const):
        d = {"const": e.value, "kind": e.kind}
        if e.kind != REAL:
            d["num"], d["den"] = e.num, e.den
        return d
    if isinstance(e, Param):
        return {"param": e.name}
    if isinstance(e, Add):
        return {"add": [to_dict(t) for t in e.terms]}
    if isinstance(e, Mul):
        return {"mul": [to_dict(f) for f in e.factors]}
    if isinstance(e, Neg):
        return {"neg": to_dict(e.arg)}
    raise TypeError(f"not an expression node: {e!r}")


def from_dict(d: dict):
    if "var" in d:
        return Var(int(d["var"]))
    if "const" in d:
        if d["kind"] == REAL:
            return Const.real(d["const"])
        return Const(float(d["const"]), d["kind"], int(d["num"]), int(d["den"]))
    if "param" in d:
        return Param(d["param"])
    if "add" in d:
        return Add(tuple(from_dict(t) for t in d["add"]))
    if "mul" in d:
        return Mul(tuple(from_dict(f) for f in d["mul"]))
    if "neg" in d:
        return Neg(from_dict(d["neg"]))
    raise ValueError(f"unrecognized expression record {d!r}")


def convergents(x: float, max_den: int = 10_000):
    """Continued-fraction convergents ``(m, n)`` of ``x`` in increasing ``n``."""
    if not math.isfinite(x):
        raise ValueError("cannot expand a non-finite value")
    sign = -1 if x < 0 else 1
    frac = Fraction(abs(x))
    h0, h1 = 0, 1
    k0, k1 = 1, 0
    while True:
        a = frac.numerator // frac.denominator
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if k1 > max_den:
            return
        yield sign * h1, k1
        rest = frac - a
        if rest == 0:
            return
        frac = 1 / rest


def affine_coefficients(e, n_inputs: int):
    """Inverse of :func:`affine_row`: tagged coefficients and constant term.

    Accepts any sum of ``c * x_j``, ``x_j``, ``-x_j`` and constants; missing
    variables get integer 0. Raises ``ValueError`` for other shapes.
    """
    coeffs = [Const.integer(0)] * n_inputs
    bias = Const.integer(0)
    terms = e.terms if isinstance(e, Add) else (e,)
    for t in terms:
        if isinstance(t, Var):
            j, c = t.index, Const.integer(1)
        elif isinstance(t, Neg) and isinstance(t.arg, Var):
            j, c = t.arg.index, Const.integer(-1)
        elif isinstance(t, Mul) and len(t.factors) == 2 and isinstance(t.factors[1], Var) \
                and isinstance(t.factors[0], Const):
            j, c = t.factors[1].index, t.factors[0]
        elif isinstance(t, Const):
            if bias.value != 0.0:
                raise ValueError("more than one constant term")
            bias = t
            continue
        else:
            raise ValueError(f"not an affine term: {to_str(t)}")
        if coeffs[j].value != 0.0:
            raise ValueError(f"variable x{j} appears twice")
        coeffs[j] = c
    return coeffs, bias
