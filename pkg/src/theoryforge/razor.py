"""Description-length accounting and the simplification pipeline.

A trained predictor is collapsed to one affine map, then pruned and snapped
coefficient by coefficient. Each transformation runs inside
:func:`minimize_dl`, which refits the remaining free coefficients and keeps
the change only when the total description length does not grow.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import symbolic as sym
from ._jsonio import dumps
from .theory import domain_partition

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)

# coefficient tags in AffineModel.kind
REAL, INTEGER, RATIONAL = 0, 1, 2
_KIND_NAMES = {REAL: sym.REAL, INTEGER: sym.INTEGER, RATIONAL: sym.RATIONAL}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


# ---------------------------------------------------------------------------
# description lengths


def dl_integer(m: int) -> float:
    if int(m) != m:
        raise ValueError(f"{m} is not an integer")
    return math.log2(1 + abs(int(m)))


def dl_rational(m: int, n: int) -> float:
    m, n = int(m), int(n)
    if n < 1:
        raise ValueError("denominator must be positive")
    if math.gcd(abs(m), n) != 1:
        raise ValueError(f"{m}/{n} is not in lowest terms")
    return math.log2((1 + abs(m)) * n)


def dl_real(r, eps: float):
    if eps <= 0:
        raise ValueError("precision floor must be positive")
    out = np.log1p((np.asarray(r, dtype=np.float64) / eps) ** 2) / LOG2
    return float(out) if out.ndim == 0 else out


def _const_dl(c: sym.Const, eps: float) -> float:
    if c.kind == sym.INTEGER:
        return dl_integer(c.num)
    if c.kind == sym.RATIONAL:
        return dl_rational(c.num, c.den)
    return dl_real(c.value, eps)


def dl_model(f, eps: float) -> float:
    """Bits for the coefficients of ``f``; structure is free.

    Accepts an ``Mlp`` (every parameter real), an :class:`AffineModel`, a
    single expression or a sequence of expressions.
    """
    if isinstance(f, ad.Mlp):
        return float(np.sum(dl_real(f.params, eps)))
    if isinstance(f, AffineModel):
        return f.dl(eps)
    if isinstance(f, SymbolicTheory):
        f = f.exprs
    exprs = f if isinstance(f, (list, tuple)) else [f]
    return float(sum(_const_dl(leaf, eps) for e in exprs for leaf in sym.leaves(e) if isinstance(leaf, sym.Const)))


@dataclass(frozen=True)
class DlReport:
    model_bits: float
    error_bits: float

    @property
    def total(self) -> float:
        return self.model_bits + self.error_bits

    def to_dict(self) -> dict:
        return {"model_bits": self.model_bits, "error_bits": self.error_bits, "total": self.total}


def _predict(f, X) -> np.ndarray:
    if isinstance(f, ad.Mlp):
        return ad.forward(f, X)
    if isinstance(f, AffineModel):
        return f.predict(X)
    if isinstance(f, SymbolicTheory):
        f = f.exprs
    return sym.evaluate_pair(f, X)


def error_bits(f, X, Y, eps: float) -> float:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return 0.0
    u = np.linalg.norm(_predict(f, X) - np.asarray(Y, dtype=np.float64), axis=1)
    return float(np.sum(dl_real(u, eps)))


def total_dl(f, X, Y, eps: float) -> DlReport:
    return DlReport(dl_model(f, eps), error_bits(f, X, Y, eps))


# ---------------------------------------------------------------------------
# affine models with tagged coefficients


@dataclass
class AffineModel:
    """``y = W x + b`` stored as ``A = [W | b]`` with a tag per coefficient.

    Real-tagged coefficients are free; integer and rational ones are frozen
    at ``num / den``.
    """

    A: np.ndarray
    kind: np.ndarray = None
    num: np.ndarray = None
    den: np.ndarray = None

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[1] < 2:
            raise ad.ShapeError("A must be (outputs, inputs + 1)")
        shape = self.A.shape
        self.kind = np.zeros(shape, np.int8) if self.kind is None else np.array(self.kind, np.int8)
        self.num = np.zeros(shape, np.int64) if self.num is None else np.array(self.num, np.int64)
        self.den = np.ones(shape, np.int64) if self.den is None else np.array(self.den, np.int64)

    @classmethod
    def from_mlp(cls, f: ad.Mlp) -> "AffineModel":
        if f.n_layers != 1 or f.activations[0] != ad.LINEAR:
            raise ValueError("collapse the network to one linear layer first")
        return cls(np.hstack([f.weight(0), f.bias(0)[:, None]]))

    @property
    def W(self) -> np.ndarray:
        return self.A[:, :-1]

    @property
    def b(self) -> np.ndarray:
        return self.A[:, -1]

    @property
    def free(self) -> np.ndarray:
        return self.kind == REAL

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.W.T + self.b

    def copy(self) -> "AffineModel":
        return AffineModel(self.A.copy(), self.kind.copy(), self.num.copy(), self.den.copy())

    def freeze(self, i: int, j: int, m: int, n: int = 1) -> None:
        self.A[i, j] = m / n
        self.kind[i, j] = INTEGER if n == 1 else RATIONAL
        self.num[i, j], self.den[i, j] = m, n

    def const(self, i: int, j: int) -> sym.Const:
        k = self.kind[i, j]
        if k == REAL:
            return sym.Const.real(self.A[i, j])
        return sym.Const.rational(int(self.num[i, j]), int(self.den[i, j]))

    def dl(self, eps: float) -> float:
        bits = 0.0
        for (i, j), k in np.ndenumerate(self.kind):
            if k == INTEGER:
                bits += dl_integer(self.num[i, j])
            elif k == RATIONAL:
                bits += dl_rational(self.num[i, j], self.den[i, j])
            else:
                bits += dl_real(self.A[i, j], eps)
        return bits

    def to_mlp(self) -> ad.Mlp:
        return ad.Mlp.from_layers([(self.W.copy(), self.b.copy(), ad.LINEAR)])

    def to_dict(self) -> dict:
        return {"A": self.A, "kind": self.kind, "num": self.num, "den": self.den}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineModel":
        return cls(d["A"], d["kind"], d["num"], d["den"])


def collapse_layers(f: ad.Mlp) -> ad.Mlp:
    """Merge every run of successive linear layers into one affine layer."""
    layers = f.layers()
    merged = [list(layers[0])]
    changed = False
    for W, b, act in layers[1:]:
        W0, b0, act0 = merged[-1]
        if act0 == ad.LINEAR:
            merged[-1] = [W @ W0, W @ b0 + b, act]
            changed = True
        else:
            merged.append([W, b, act])
    if not changed:
        raise ValueError("no two successive linear layers to collapse")
    return ad.Mlp.from_layers([tuple(m) for m in merged], leak=f.leak)


# ---------------------------------------------------------------------------
# refitting the free coefficients


def refit_irls(model: AffineModel, X, Y, eps: float, max_iter: int = 100, tol: float = 1e-12) -> AffineModel:
    """Minimize the summed DL loss over free coefficients, in place.

    Each step solves a weighted least-squares problem with weights
    ``1 / (eps**2 + u**2)``; the log loss is concave in ``u**2``, so this
    majorize-minimize scheme never increases the loss. A step that would
    increase it through round-off is discarded.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    free = model.free
    if len(X) == 0 or not free.any():
        return model
    Xa = np.hstack([X, np.ones((len(X), 1))])
    best = error_bits(model, X, Y, eps)
    for _ in range(max_iter):
        u2 = np.sum((model.predict(X) - Y) ** 2, axis=1)
        w = 1.0 / (eps * eps + u2)
        sw = np.sqrt(w / w.max())
        A = model.A.copy()
        for i in range(A.shape[0]):
            cols = np.flatnonzero(free[i])
            if len(cols) == 0:
                continue
            fixed = np.flatnonzero(~free[i])
            target = Y[:, i] - Xa[:, fixed] @ A[i, fixed]
            sol, *_ = np.linalg.lstsq(Xa[:, cols] * sw[:, None], target * sw, rcond=None)
            A[i, cols] = sol
        trial = model.copy()
        trial.A = A
        bits = error_bits(trial, X, Y, eps)
        if not bits < best:
            break
        gain = best - bits
        model.A = A
        best = bits
        if gain <= tol * max(1.0, best):
            break
    return model


def refit_adam(model: AffineModel, X, Y, eps: float, iters: int = 500, lr: float = 1e-3) -> AffineModel:
    """Alternative refit: plain Adam on the free coefficients, in place."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    free = model.free
    if len(X) == 0 or not free.any():
        return model
    Xa = np.hstack([X, np.ones((len(X), 1))])
    theta = model.A[free].copy()
    state = ad.AdamState.fresh(theta.shape, alpha=lr)
    A = model.A.copy()
    start = error_bits(model, X, Y, eps)
    for _ in range(iters):
        A[free] = theta
        R = Xa @ A.T - Y
        u2 = np.sum(R * R, axis=1)
        g = (2.0 / LOG2) * (R / (eps * eps + u2)[:, None]).T @ Xa
        theta, state = ad.adam_step(state, theta, g[free])
    A[free] = theta
    trial = model.copy()
    trial.A = A
    if error_bits(trial, X, Y, eps) <= start:
        model.A = A
    return model


# ---------------------------------------------------------------------------
# transformations
#
# A transformation is a callable ``t(model) -> model or None``. It returns a
# modified copy, or None once it has nothing left to try. The snapping
# transformations keep a queue, so repeated calls try successive candidates.


class LocalSnap:
    """Zero the weight columns of one past time step per call, oldest first."""

    name = "localSnap"

    def __init__(self, model: AffineModel):
        self.T = model.W.shape[1] // 2
        self.queue = list(range(self.T))

    def __call__(self, model: AffineModel):
        while self.queue:
            s = self.queue.pop(0)
            cols = [2 * s, 2 * s + 1]
            if np.all(model.A[:, cols] == 0) and np.all(model.kind[:, cols] != REAL):
                continue
            out = model.copy()
            for i in range(out.A.shape[0]):
                for j in cols:
                    out.freeze(i, j, 0)
            return out
        return None


class IntegerSnap:
    """Round one free coefficient per call, nearest-to-integer first."""

    name = "integerSnap"

    def __init__(self, model: AffineModel):
        self.seen = set()

    def __call__(self, model: AffineModel):
        A = model.A
        cands = [(abs(A[i, j] - np.rint(A[i, j])), i, j)
                 for (i, j), k in np.ndenumerate(model.kind) if k == REAL and (i, j) not in self.seen]
        if not cands:
            return None
        _, i, j = min(cands)
        self.seen.add((i, j))
        out = model.copy()
        out.freeze(i, j, int(np.rint(A[i, j])))
        return out


class RationalSnap:
    """Replace one free coefficient per call by a continued-fraction convergent.

    Convergents are tried in increasing denominator; the first whose
    substitution (followed by a refit) lowers the total DL is taken. When
    none does, the coefficient is left as is.
    """

    name = "rationalSnap"

    def __init__(self, model: AffineModel, X, Y, eps, refit, max_den: int = 10_000):
        self.X, self.Y, self.eps, self.refit = X, Y, eps, refit
        self.max_den = max_den
        self.seen = set()

    def __call__(self, model: AffineModel):
        cands = [(i, j) for (i, j), k in np.ndenumerate(model.kind) if k == REAL and (i, j) not in self.seen]
        if not cands:
            return None
        i, j = cands[0]
        self.seen.add((i, j))
        base = total_dl(model, self.X, self.Y, self.eps).total
        for m, n in sym.convergents(float(model.A[i, j]), self.max_den):
            out = model.copy()
            out.freeze(i, j, m, n)
            self.refit(out, self.X, self.Y, self.eps)
            if total_dl(out, self.X, self.Y, self.eps).total < base:
                return out
        return model.copy()


# ---------------------------------------------------------------------------
# driver


@dataclass
class TraceEntry:
    theory: str
    stage: str
    dl_before: float
    dl_after: float
    accepted: bool

    def to_dict(self) -> dict:
        return {"theory": self.theory, "stage": self.stage, "dl_before": self.dl_before,
                "dl_after": self.dl_after, "accepted": self.accepted}


DL_DECIMALS = 6


def _quantize(bits: float) -> float:
    # totals sum thousands of terms; a micro-bit is below any meaningful difference
    return round(bits, DL_DECIMALS) if math.isfinite(bits) else float("inf")


def minimize_dl(transform, f, X, Y, eps: float, refit=refit_irls, patience: int = 4,
                max_attempts: int = 10_000, trace=None, stage: str = "", theory_id: str = ""):
    """Apply ``transform`` repeatedly while the total DL does not grow.

    Each attempt transforms a clone, refits its free coefficients and
    compares totals, rounded to ``DL_DECIMALS`` places. A strict increase
    ends the loop and returns the last accepted model. Equal totals count
    as a decrease when the model bits went down and as a tie otherwise;
    ties are tolerated ``patience`` times in a row and a decrease resets
    the count. A transformation returning None (nothing left to try) also
    ends the loop.
    """
    current = f
    rep0 = total_dl(current, X, Y, eps)
    if not math.isfinite(rep0.total):
        raise ValueError("description length of the input is not finite")
    ties = 0
    for _ in range(max_attempts):
        cand = transform(current)
        if cand is None:
            break
        if isinstance(cand, AffineModel):
            refit(cand, X, Y, eps)
        rep1 = total_dl(cand, X, Y, eps)
        q0, q1 = _quantize(rep0.total), _quantize(rep1.total)
        accepted = q1 <= q0
        if trace is not None:
            trace.append(TraceEntry(theory_id, stage, q0, q1, accepted))
        if not accepted:
            break
        tie = q1 == q0 and not rep1.model_bits < rep0.model_bits
        current, rep0 = cand, rep1
        if tie:
            ties += 1
            if ties > patience:
                break
        else:
            ties = 0
    return current


@dataclass
class SymbolicTheory:
    """Simplified predictor: one expression per output component."""

    exprs: tuple
    report: DlReport
    eps: float
    T: int
    source: str = ""
    n_samples: int = 0
    trace: list = field(default_factory=list)

    @property
    def id(self) -> str:
        return hashlib.sha256(dumps([sym.to_dict(e) for e in self.exprs]).encode()).hexdigest()[:16]

    def predict(self, X) -> np.ndarray:
        return sym.evaluate_pair(self.exprs, X)

    def __str__(self) -> str:
        return "; ".join(sym.to_str(e) for e in self.exprs)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "exprs": [sym.to_dict(e) for e in self.exprs],
            "text": [sym.to_str(e) for e in self.exprs],
            "dl": self.report.to_dict(),
            "eps": self.eps,
            "T": self.T,
            "source": self.source,
            "n_samples": self.n_samples,
            "trace": [t.to_dict() for t in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SymbolicTheory":
        rep = DlReport(d["dl"]["model_bits"], d["dl"]["error_bits"])
        trace = [TraceEntry(**t) for t in d.get("trace", [])]
        return cls(tuple(sym.from_dict(e) for e in d["exprs"]), rep, float(d["eps"]), int(d["T"]),
                   d.get("source", ""), int(d.get("n_samples", 0)), trace)


def to_symbolic(f) -> tuple:
    """One tree per output row of a collapsed (single affine layer) model."""
    if isinstance(f, ad.Mlp):
        f = AffineModel.from_mlp(f)
    n = f.W.shape[1]
    return tuple(sym.affine_row([f.const(i, j) for j in range(n)], f.const(i, n)) for i in range(f.A.shape[0]))


class _ToSymbolic:
    name = "toSymbolic"

    def __init__(self):
        self.done = False

    def __call__(self, model):
        if self.done or not isinstance(model, AffineModel):
            return None
        self.done = True
        return to_symbolic(model)


class _Collapse:
    name = "collapseLayers"

    def __init__(self):
        self.done = False

    def __call__(self, f):
        if self.done or not isinstance(f, ad.Mlp):
            return None
        self.done = True
        return AffineModel.from_mlp(collapse_layers(f))


@dataclass
class RazorConfig:
    refit: str = "irls"
    adam_iters: int = 500
    patience: int = 4
    max_den: int = 10_000
    min_samples: int = 1

    def refit_fn(self):
        if self.refit == "irls":
            return refit_irls
        if self.refit == "adam":
            return lambda m, X, Y, eps: refit_adam(m, X, Y, eps, self.adam_iters)
        raise ValueError(f"unknown refit method {self.refit!r}")


def simplify(f: ad.Mlp, X, Y, eps: float, config: RazorConfig | None = None, theory_id: str = "") -> SymbolicTheory:
    """Run collapse, localSnap, integerSnap, rationalSnap and toSymbolic on one predictor."""
    config = config or RazorConfig()
    refit = config.refit_fn()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    trace = []
    T = f.input_dim // 2

    def run(stage, transform, model):
        return minimize_dl(transform, model, X, Y, eps, refit, config.patience, trace=trace,
                           stage=stage, theory_id=theory_id)

    model = run("collapseLayers", _Collapse(), f)
    if isinstance(model, ad.Mlp):
        # collapse rejected: nothing more can be done in affine form
        rep = total_dl(model, X, Y, eps)
        return SymbolicTheory((), rep, eps, T, theory_id, len(X), trace)
    model = run("localSnap", LocalSnap(model), model)
    model = run("integerSnap", IntegerSnap(model), model)
    model = run("rationalSnap", RationalSnap(model, X, Y, eps, refit, config.max_den), model)
    out = run("toSymbolic", _ToSymbolic(), model)
    exprs = out if isinstance(out, tuple) else to_symbolic(out)
    return SymbolicTheory(exprs, total_dl(exprs, X, Y, eps), eps, T, theory_id, len(X), trace)


def occams_razor(theories, X, Y, eps: float, config: RazorConfig | None = None) -> list:
    """Simplify each theory's predictor on the samples its classifier claims."""
    config = config or RazorConfig()
    theories = list(theories)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out = []
    for th, idx in zip(theories, domain_partition(theories, X)):
        if len(idx) < config.min_samples:
            log.info("theory %s owns no samples; skipped", th.id)
            continue
        st = simplify(th.f, X[idx], Y[idx], eps, config, theory_id=th.id)
        log.info("theory %s: %s (dl %.4g)", th.id, st, st.report.total)
        out.append(st)
    return out


def dl_trace_violations(trace) -> int:
    """Count accepted steps whose total DL went up."""
    return sum(1 for t in trace if t.accepted and t.dl_after > t.dl_before)


__all__ = [
    "AffineModel", "DlReport", "IntegerSnap", "LocalSnap", "RationalSnap", "RazorConfig", "SymbolicTheory",
    "TraceEntry", "collapse_layers", "dl_integer", "dl_model", "dl_rational", "dl_real", "dl_trace_violations",
    "error_bits", "minimize_dl", "occams_razor", "refit_adam", "refit_irls", "simplify", "to_symbolic",
    "total_dl",
]
