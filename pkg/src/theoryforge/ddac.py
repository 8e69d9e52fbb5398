"""Unsupervised differentiable divide-and-conquer.

Competing theories are trained jointly under a generalized-mean loss
(harmonic by default) so that each specializes on the samples it predicts
best; classifiers learn to route samples to the theory that currently
predicts them best. A second phase fine-tunes each predictor on the
samples its classifier claims.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .theory import TheorySet, classify, error_matrix, random_theory

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
LOSS_FLOOR = 1e-30
EPS_FLOOR = 1e-12


class TrainingError(RuntimeError):
    """Non-finite loss during training. ``snapshot`` holds the offending state."""

    def __init__(self, msg, snapshot=None):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    M: int = 4
    M0: int = 2
    K: int = 10000
    lr_f: float = 5e-3
    lr_c: float = 1e-3
    eps0: float = 10.0
    gamma: float = -1.0
    harmonic_rounds: int = 5
    finetune_rounds: int = 2
    domain_fraction: float = 0.30
    bad_fraction: float = 0.05
    mse_cut: float = 2e-6
    min_fraction: float = 0.005
    batch_size: int | None = 256
    lr_decay: float = 1e-4
    candidate_init: str = "split"
    split_noise: float = 1e-3
    optimizer: str = "adam"
    add_theories: bool = True
    delete_theories: bool = True
    candidate_iters: int = 1000
    hidden: int = 8
    leak: float = ad.DEFAULT_LEAK
    record_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.M < 1 or not 0 <= self.M0 <= self.M:
            raise ValueError("need 0 <= M0 <= M and M >= 1")
        if self.lr_f <= 0 or self.lr_c <= 0 or self.eps0 <= 0:
            raise ValueError("learning rates and eps0 must be positive")
        if self.gamma == 0:
            raise ValueError("gamma must be nonzero")
        for name in ("domain_fraction", "bad_fraction", "min_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.candidate_init not in ("split", "random"):
            raise ValueError("candidate_init must be 'split' or 'random'")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class BestIndexAssignment:
    b: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=int)


# ---------------------------------------------------------------------------
# losses


def dl_terms(R: np.ndarray, eps: float):
    """DL loss per row of residuals ``R`` and its derivative w.r.t. ``R``."""
    u2 = np.einsum("ij,ij->i", R, R)
    ell = np.log1p(u2 / eps**2) / LN2
    dR = R * (2.0 / (LN2 * (eps**2 + u2)))[:, None]
    return ell, dR


def mean_terms(ells: np.ndarray, gamma: float):
    """Per-sample generalized mean over theories (columns) and its gradient.

    Computed in log space so large negative ``gamma`` does not overflow.
    """
    ells = np.asarray(ells, dtype=np.float64)
    floored = np.maximum(ells, LOSS_FLOOR)
    M = ells.shape[1]
    a = gamma * np.log(floored)
    amax = a.max(axis=1, keepdims=True)
    w = np.exp(a - amax)
    s = w.sum(axis=1, keepdims=True)
    value = np.exp((amax[:, 0] + np.log(s[:, 0]) - math.log(M)) / gamma)
    weights = w / s
    grad = value[:, None] * weights / floored
    grad[ells < LOSS_FLOOR] = 0.0
    return value, grad


def generalized_mean_loss(theories, X, Y, eps: float, gamma: float = -1.0) -> float:
    """``sum_t ((1/M) sum_i l_it^gamma)^(1/gamma)`` with the DL loss ``l``."""
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    U = error_matrix(theories, X, Y)
    ells = np.log1p((U / eps) ** 2) / LN2
    value, _ = mean_terms(ells, gamma)
    return float(value.sum())


def harmonic_loss(theories, X, Y, eps: float) -> float:
    return generalized_mean_loss(theories, X, Y, eps, -1.0)


def domain_loss(theories, X, Y, eps: float) -> float:
    """Sum of each sample's DL loss under its classifier-selected theory."""
    theories = list(theories)
    U = error_matrix(theories, X, Y)
    owner = np.atleast_1d(classify(theories, np.atleast_2d(X)))
    u = U[np.arange(len(owner)), owner]
    return float((np.log1p((u / eps) ** 2) / LN2).sum())


def best_indices(theories, X, Y, eps: float) -> BestIndexAssignment:
    """Per sample, the theory with the smallest DL loss (ties -> lowest index)."""
    U = error_matrix(list(theories), X, Y)
    return BestIndexAssignment(np.argmin(U, axis=1))


def set_epsilon(theories, X, Y) -> float:
    """Median over samples of the best theory's prediction error, floored."""
    U = error_matrix(list(theories), X, Y)
    return max(float(np.median(U.min(axis=1))), EPS_FLOOR)


# ---------------------------------------------------------------------------
# training


class _Opt:
    __slots__ = ("net", "state", "lr", "kind")

    def __init__(self, net, lr, kind):
        self.net = net
        self.lr = lr
        self.kind = kind
        self.state = ad.AdamState.fresh(net.params.shape, alpha=lr) if kind == "adam" else None

    def step(self, grad, scale=1.0):
        if self.kind == "adam":
            self.state.alpha = self.lr * scale
            ad.adam_update_(self.state, self.net.params, grad)
        else:
            self.net.params -= (self.lr * scale) * grad


def _check(value, what, theories):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what}", snapshot=[t.to_dict() for t in theories])


class Trainer:
    """Gradient loop shared by all training phases of one run.

    Optimizer state is kept per network for the whole run, and the step
    sizes decay exponentially by a total factor ``config.lr_decay`` over
    ``total_iters`` iterations. The DL-loss gradient is taken in units of
    ``eps**2`` (a per-phase constant factor, so minimizers are unchanged);
    this keeps carried Adam moments commensurate after ``eps`` is reset.
    """

    def __init__(self, config: TrainConfig, rng=None, total_iters=None):
        self.config = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.total = max(int(total_iters or config.K), 1)
        self.count = 0
        self._opts = {}

    def _opt(self, net, lr):
        key = id(net)
        opt = self._opts.get(key)
        if opt is None or opt.net is not net:
            opt = self._opts[key] = _Opt(net, lr, self.config.optimizer)
        return opt

    def lr_scale(self) -> float:
        return self.config.lr_decay ** min(1.0, self.count / self.total)

    def forget(self, theory):
        for net in (theory.f, theory.c):
            self._opts.pop(id(net), None)

    def _f_step(self, theories, xb, yb, eps, loss_kind, scale, frozen=0):
        n = len(xb)
        outs, caches = [], []
        for th in theories:
            out, cache = ad.forward_with_cache(th.f, xb)
            outs.append(out)
            caches.append(cache)
        terms = [dl_terms(out - yb, eps) for out in outs]
        ells = np.stack([t[0] for t in terms], axis=1)
        if loss_kind == "harmonic":
            value, dl = mean_terms(ells, self.config.gamma)
            loss = float(value.mean())
        else:
            logits = np.concatenate([ad.forward(th.c, xb) for th in theories], axis=1)
            owner = np.argmax(logits, axis=1)
            rows = np.arange(n)
            loss = float(ells[rows, owner].mean())
            dl = np.zeros_like(ells)
            dl[rows, owner] = 1.0
        _check(loss, f"{loss_kind} loss", theories)
        unit = eps * eps / n
        for i, th in enumerate(theories[frozen:], start=frozen):
            g = terms[i][1] * (dl[:, i] * unit)[:, None]
            self._opt(th.f, self.config.lr_f).step(ad.backward_from_cache(th.f, caches[i], g), scale)
        return loss

    def _c_step(self, theories, xb, targets, scale):
        logits, caches = [], []
        for th in theories:
            out, cache = ad.forward_with_cache(th.c, xb)
            logits.append(out)
            caches.append(cache)
        ce, dz = ad.cross_entropy_softmax_batch(np.concatenate(logits, axis=1), targets)
        for i, th in enumerate(theories):
            self._opt(th.c, self.config.lr_c).step(ad.backward_from_cache(th.c, caches[i], dz[:, i:i + 1]), scale)
        return ce

    def run(self, theories, X, Y, eps, loss_kind, iters, train_classifier=True, hook=None,
            stop_when=None, history=None, advance=True, train_predictor=True, frozen=0):
        """Alternate predictor and classifier updates ``iters`` times, in place.

        Returns the number of completed iterations. ``stop_when(theories, k)``
        is consulted before update ``k`` and ends the loop when true. The first ``frozen`` predictors take part in the loss but
        are not updated.
        """
        theories = list(theories)
        n = len(X)
        bs = self.config.batch_size
        every = self.config.record_every
        for k in range(iters):
            if stop_when is not None and stop_when(theories, k):
                return k
            scale = self.lr_scale()
            if bs and bs < n:
                idx = self.rng.integers(0, n, size=bs)
                xb, yb = X[idx], Y[idx]
            else:
                xb, yb = X, Y
            loss = self._f_step(theories, xb, yb, eps, loss_kind, scale, frozen) if train_predictor else np.nan
            if history is not None and every and k % every == 0:
                history.append({"iter": k, "loss": loss})
            if train_classifier:
                # targets come from the predictors as just updated
                res = np.stack([ad.forward(th.f, xb) - yb for th in theories], axis=1)
                b = np.argmin(np.einsum("nmk,nmk->nm", res, res), axis=1)
                if hook is not None:
                    hook("best_indices", iteration=k, b=b, theories=theories, X=xb, Y=yb)
                self._c_step(theories, xb, b, scale)
            if advance:
                self.count += 1
        return iters


def train_steps(theories, X, Y, eps, loss_kind, config: TrainConfig, iters: int, rng=None,
                train_classifier=True, hook=None, stop_when=None, history=None):
    """Stand-alone training loop on a list of theories (mutated in place)."""
    trainer = Trainer(config, rng, total_iters=iters)
    return trainer.run(theories, X, Y, eps, loss_kind, iters, train_classifier, hook, stop_when, history)


def _iterative_train(trainer: Trainer, theories: list, X, Y, eps, loss_kind, hook=None, history=None) -> list:
    cfg = trainer.config
    trainer.run(theories, X, Y, eps, loss_kind, cfg.K, hook=hook, history=history)
    if cfg.K and cfg.add_theories:
        theories = _add_theories(trainer, theories, X, Y, eps)
    if cfg.K and cfg.delete_theories:
        keep = _keep_indices(theories, X, cfg.min_fraction)
        for i in range(len(theories)):
            if i not in keep:
                trainer.forget(theories[i])
        theories = [theories[i] for i in keep]
    return theories


def iterative_train(theories: TheorySet, X, Y, eps: float, loss_kind: str, config: TrainConfig,
                    rng=None, hook=None, history=None) -> TheorySet:
    """K training iterations followed by the optional add and delete passes.

    Returns a new set; the input is not modified.
    """
    if loss_kind not in ("harmonic", "domain"):
        raise ValueError("loss_kind must be 'harmonic' or 'domain'")
    if len(X) == 0:
        raise ValueError("empty dataset")
    out = theories.copy()
    trainer = Trainer(config, rng)
    out.theories = _iterative_train(trainer, out.theories, X, Y, eps, loss_kind, hook, history)
    out.eps = eps
    return out


def _add_theories(trainer: Trainer, theories: list, X, Y, eps) -> list:
    cfg = trainer.config
    theories = list(theories)
    n = len(X)
    owner = np.atleast_1d(classify(theories, X))
    U = error_matrix(theories, X, Y)
    for i in range(len(U[0])):
        mine = np.flatnonzero(owner == i)
        if len(mine) < cfg.domain_fraction * n:
            continue
        mse = U[mine, i] ** 2 / 2.0
        bad = mine[mse > cfg.mse_cut]
        if len(bad) < cfg.bad_fraction * len(mine):
            continue
        if cfg.candidate_init == "split":
            cand = theories[i].copy()
            cand.f.params += cfg.split_noise * trainer.rng.standard_normal(cand.f.params.shape)
            pretrain = [theories[i], cand]
        else:
            cand = random_theory(theories[0].T, trainer.rng, cfg.hidden, cfg.leak)
            pretrain = [cand]
        cand.origin = "added"
        trainer.run(pretrain, X[bad], Y[bad], eps, "harmonic", cfg.candidate_iters,
                    train_classifier=False, advance=False, frozen=len(pretrain) - 1)
        before = harmonic_loss(theories, X, Y, eps)
        after = harmonic_loss(theories + [cand], X, Y, eps)
        if after < before:
            log.info("added theory for domain %d: harmonic loss %.6g -> %.6g", i, before, after)
            theories.append(cand)
            # give the newcomer a domain before any deletion pass looks at it
            trainer.run(theories, X, Y, eps, "harmonic", cfg.candidate_iters,
                        advance=False, train_predictor=False)
        else:
            log.info("rejected candidate for domain %d: harmonic loss %.6g -> %.6g", i, before, after)
            trainer.forget(cand)
    return theories


def add_theories_pass(theories: TheorySet, X, Y, eps: float, config: TrainConfig, rng=None) -> TheorySet:
    """Spawn a theory for a large domain that is poorly fit in part.

    A theory owning at least ``domain_fraction`` of the samples, of which at
    least ``bad_fraction`` have per-component MSE above ``mse_cut``, gets a
    fresh candidate pre-trained on those badly fit samples. The candidate is
    kept only if the harmonic loss over all samples strictly drops.
    """
    out = theories.copy()
    trainer = Trainer(config, rng, total_iters=config.candidate_iters)
    out.theories = _add_theories(trainer, out.theories, X, Y, eps)
    return out


def _keep_indices(theories, X, min_fraction):
    if len(theories) == 1:
        return [0]
    owner = np.atleast_1d(classify(theories, X))
    counts = np.bincount(owner, minlength=len(theories))
    keep = [i for i in range(len(theories)) if counts[i] >= min_fraction * len(X)]
    return keep or [int(np.argmax(counts))]


def delete_theories_pass(theories: TheorySet, X, Y=None, min_fraction: float = 0.005) -> TheorySet:
    """Drop theories whose classifier domain holds under ``min_fraction`` of samples.

    The last remaining theory is never removed.
    """
    out = theories.copy()
    keep = _keep_indices(out.theories, X, min_fraction)
    out.theories = [out.theories[i] for i in keep]
    return out


# ---------------------------------------------------------------------------
# evaluation


def routing_accuracy(theories, X, labels) -> float:
    """Fraction routed consistently with held-out labels.

    Each theory is mapped to the label most common among the samples it
    claims; a sample counts as correct when its theory maps to its label.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    owner = np.atleast_1d(classify(list(theories), X))
    mapped = np.empty(len(list(theories)), dtype=labels.dtype)
    for i in range(len(mapped)):
        mine = labels[owner == i]
        mapped[i] = np.bincount(mine).argmax() if len(mine) else -1
    return float(np.mean(mapped[owner] == labels))


def _record(records, stage, it, theories, X, Y, eps, labels, interior, gamma):
    rec = {
        "stage": stage,
        "iter": it,
        "loss": generalized_mean_loss(theories.theories, X, Y, eps, gamma) / len(X),
        "eps": eps,
        "M": len(theories),
    }
    if labels is not None:
        mask = interior if interior is not None else np.ones(len(X), bool)
        rec["routing_accuracy"] = routing_accuracy(theories.theories, X[mask], labels[mask])
    records.append(rec)
    log.info("%s round %d: loss %.4g eps %.3g M %d", stage, it, rec["loss"], eps, rec["M"])


@dataclass
class DdacResult:
    theories: TheorySet
    eps: float
    records: list = field(default_factory=list)


def ddac(X, Y, proposed, config: TrainConfig, labels=None, interior=None, hook=None) -> DdacResult:
    """Harmonic training rounds followed by domain fine-tuning rounds.

    ``proposed`` theories (e.g. from a hub) are copied; the remaining
    ``M - len(proposed)`` theories start random. ``labels`` are used only
    for the routing-accuracy metric.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    T = X.shape[1] // 2
    proposed = [p.copy() for p in proposed][: config.M]
    fresh = [random_theory(T, rng, config.hidden, config.leak) for _ in range(config.M - len(proposed))]
    theories = TheorySet(proposed + fresh, T, config.eps0)
    trainer = Trainer(config, rng, total_iters=config.K * (config.harmonic_rounds + config.finetune_rounds))
    eps = config.eps0
    records = []
    phases = ["harmonic"] * config.harmonic_rounds + ["domain"] * config.finetune_rounds
    for k, kind in enumerate(phases):
        theories.theories = _iterative_train(trainer, theories.theories, X, Y, eps, kind, hook=hook)
        eps = set_epsilon(theories.theories, X, Y)
        theories.eps = eps
        it = k if kind == "harmonic" else k - config.harmonic_rounds
        _record(records, kind, it, theories, X, Y, eps, labels, interior, config.gamma)
    theories.history = records
    return DdacResult(theories, eps, records)


def iterations_to_threshold(X, Y, proposed, config: TrainConfig, threshold: float = 0.1,
                            max_iters: int | None = None, check_every: int = 1) -> int:
    """Iterations of the first harmonic round until the loss falls below ``threshold``.

    The loss is the generalized mean loss summed over the whole dataset at
    ``eps0``, checked before every ``check_every``-th update. Training starts
    from the same point as :func:`ddac`. Returns ``max_iters`` (default
    ``config.K``) if the threshold is never reached.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    T = X.shape[1] // 2
    proposed = [p.copy() for p in proposed][: config.M]
    fresh = [random_theory(T, rng, config.hidden, config.leak) for _ in range(config.M - len(proposed))]
    theories = proposed + fresh
    max_iters = config.K if max_iters is None else max_iters
    trainer = Trainer(config, rng, total_iters=config.K * (config.harmonic_rounds + config.finetune_rounds))

    def reached(ths, k):
        return k % check_every == 0 and generalized_mean_loss(ths, X, Y, config.eps0, config.gamma) < threshold

    return trainer.run(theories, X, Y, config.eps0, "harmonic", max_iters, stop_when=reached)
