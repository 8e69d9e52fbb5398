"""Locating domain boundaries from where extrapolations meet.

Around a place where no theory fits a trajectory, the theory that fits
before it is rolled forward and a past-predicting network of the theory
that fits after it is rolled backward. Where the two curves meet is the
boundary point. Matching velocities there indicate a transition into
another domain; a velocity jump indicates a reflection off a wall.
Samples whose windows touch a boundary are then excluded from classifier
training so the remaining domains are learned cleanly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ddac import EPS_FLOOR, TrainConfig, Trainer, ddac
from .razor import AffineModel, collapse_layers, refit_irls
from .theory import Theory, classifier_net, classify, domain_partition, error_matrix, predictor_net

log = logging.getLogger(__name__)

TRANSITION = "transition"
BOUNCE = "bounce"
NONE = "none"

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NoOverlapError(ValueError):
    pass


@dataclass
class BoundaryConfig:
    tol_pos: float = 3.0        # in units of eps
    tol_vel: float = 10.0       # in units of eps per step
    tol_fit: float = 3.0        # a sample is fitted when its residual is below tol_fit * eps
    radius: float = 2.0         # mask radius in median step lengths
    margin: int = 3             # extra rollout steps beyond the gap
    max_gap: int = 12           # longer unfitted stretches are not analysed
    grid: float = 0.01
    refine_tol: float = 1e-6
    past_iters: int = 10000
    past_rounds: int = 5
    past_refit: bool = True
    retrain_iters: int = 2000
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# past predictors


@dataclass
class PastPredictor:
    """Network mapping a window ``x_t`` to the position just before it."""

    net: ad.Mlp
    theory_id: str = ""
    mean_error: float = float("nan")
    median_error: float = float("nan")

    def __post_init__(self):
        if self.net.output_dim != 2 or self.net.input_dim % 2:
            raise ad.ShapeError("past predictor maps 2T inputs to a 2-vector")

    @property
    def T(self) -> int:
        return self.net.input_dim // 2

    def to_dict(self) -> dict:
        return {"net": self.net.to_dict(), "theory_id": self.theory_id,
                "mean_error": self.mean_error, "median_error": self.median_error}

    @classmethod
    def from_dict(cls, d: dict) -> "PastPredictor":
        return cls(ad.Mlp.from_dict(d["net"]), d.get("theory_id", ""), float(d["mean_error"]),
                   float(d["median_error"]))


def past_targets(ds):
    """Rows having a position ``T + 1`` steps back, and those positions."""
    rows, targets = [], []
    for tid, (start, pos) in ds.trajectories().items():
        for r in np.flatnonzero(ds.trajectory == tid):
            k = int(ds.step[r]) - ds.T - 1 - start
            if k >= 0:
                rows.append(r)
                targets.append(pos[k])
    return np.array(rows, dtype=int), np.array(targets, dtype=np.float64).reshape(-1, 2)


def train_past_predictor(theory: Theory, X, Yp, config: BoundaryConfig | None = None) -> PastPredictor:
    """Fit ``x_t -> y_{t-T-1}`` on one domain's samples with the usual training loop."""
    config = config or BoundaryConfig()
    X = np.asarray(X, dtype=np.float64)
    Yp = np.asarray(Yp, dtype=np.float64)
    T = X.shape[1] // 2
    rng = np.random.default_rng(config.seed)
    start = Theory(predictor_net(T, rng=rng), classifier_net(T, rng=rng), origin="past")
    if config.past_iters == 0 or len(X) == 0:
        log.warning("past predictor for %s left untrained", theory.id)
        net = start.f
    else:
        cfg = TrainConfig(M=1, M0=1, K=config.past_iters, harmonic_rounds=config.past_rounds, finetune_rounds=0,
                          add_theories=False, delete_theories=False, seed=config.seed)
        net = ddac(X, Yp, [start], cfg).theories[0].f
        if config.past_refit:
            net = _refit_affine(net, X, Yp)
    err = np.linalg.norm(ad.forward(net, X) - Yp, axis=1) if len(X) else np.array([np.nan])
    return PastPredictor(net, theory.id, float(np.mean(err)), float(np.median(err)))


def _refit_affine(net, X, Yp, passes: int = 3):
    """Robust affine refit of an all-linear network, re-centring eps each pass."""
    model = AffineModel.from_mlp(collapse_layers(net))
    for _ in range(passes):
        u = np.linalg.norm(model.predict(X) - Yp, axis=1)
        refit_irls(model, X, Yp, max(float(np.median(u)), EPS_FLOOR))
    return model.to_mlp()


def train_past_predictors(theories, ds, config: BoundaryConfig | None = None) -> list:
    theories = list(theories)
    rows, Yp = past_targets(ds)
    parts = domain_partition(theories, ds.X[rows]) if len(rows) else [np.array([], int)] * len(theories)
    return [train_past_predictor(th, ds.X[rows][idx], Yp[idx], config) for th, idx in zip(theories, parts)]


# ---------------------------------------------------------------------------
# curves


@dataclass
class Curve:
    """Positions at unit-spaced times ``t0, t0 + 1, ...``, linearly interpolated."""

    t0: float
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return len(self.points)

    @property
    def t1(self) -> float:
        return self.t0 + len(self.points) - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.points))

    def _segment(self, t):
        # right-hand segment; the last knot uses the final segment
        k = np.floor(np.asarray(t, dtype=np.float64) - self.t0).astype(int)
        return np.clip(k, 0, max(len(self.points) - 2, 0))

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if len(self.points) == 1:
            return np.broadcast_to(self.points[0], t.shape + (2,)).copy()
        k = self._segment(t)
        w = (t - self.t0 - k)[..., None]
        return (1.0 - w) * self.points[k] + w * self.points[k + 1]

    def slope(self, t) -> np.ndarray:
        if len(self.points) < 2:
            return np.zeros(2)
        k = int(self._segment(t))
        return self.points[k + 1] - self.points[k]

    @staticmethod
    def join(a: "Curve", b: "Curve") -> "Curve":
        """Concatenate curves that abut in time."""
        if len(a) == 0:
            return b
        if len(b) == 0:
            return a
        if b.t0 != a.t1 + 1:
            raise ValueError("curves do not abut")
        return Curve(a.t0, np.vstack([a.points, b.points]))


def _step_net(predictor):
    if isinstance(predictor, Theory):
        return predictor.f
    if isinstance(predictor, PastPredictor):
        return predictor.net
    if isinstance(predictor, ad.Mlp):
        return predictor
    raise TypeError(f"cannot roll out {type(predictor).__name__}")


def extrapolate(predictor, anchor_window, direction: str, horizon: int, t_anchor: float = 0.0) -> Curve:
    """Roll a difference equation out from ``anchor_window`` (oldest first).

    The anchor occupies times ``t_anchor .. t_anchor + T - 1``. Forward
    rollouts return the ``horizon`` positions after it; backward rollouts
    (with a past predictor) return the ``horizon`` positions before it, in
    time order.
    """
    net = _step_net(predictor)
    T = net.input_dim // 2
    win = np.asarray(anchor_window, dtype=np.float64).reshape(T, 2)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    out = []
    for _ in range(horizon):
        nxt = ad.forward(net, win.ravel())
        out.append(nxt)
        win = np.vstack([win[1:], nxt]) if direction == "forward" else np.vstack([nxt, win[:-1]])
    if direction == "forward":
        return Curve(t_anchor + T, np.array(out))
    if direction == "backward":
        return Curve(t_anchor - horizon, np.array(out[::-1]))
    raise ValueError("direction must be 'forward' or 'backward'")


# ---------------------------------------------------------------------------
# meeting points


@dataclass
class BoundaryPoint:
    t_star: float
    y_star: np.ndarray
    kind: str
    residual: float
    slope_gap: float = 0.0

    def to_dict(self) -> dict:
        return {"t_star": self.t_star, "y_star": np.asarray(self.y_star).tolist(), "kind": self.kind,
                "residual": self.residual, "slope_gap": self.slope_gap}


def _residual(a: Curve, b: Curve, t):
    return np.linalg.norm(a.at(t) - b.at(t), axis=-1)


def find_meeting(y_f: Curve, y_b: Curve, tol_pos: float, tol_vel: float, grid: float = 0.01,
                 refine_tol: float = 1e-6, tie: float | None = None) -> BoundaryPoint:
    """Time of closest approach of two curves and its classification.

    A grid search at spacing ``grid`` picks the earliest time whose
    residual is within ``tie`` of the smallest; a golden-section search
    within one grid cell then refines it, keeping only strict improvements.
    Slopes are compared on the segment holding ``t*`` and, when a knot lies
    within one grid cell, on the segments either side of it; the smallest
    difference decides between transition and bounce.
    """
    lo, hi = max(y_f.t0, y_b.t0), min(y_f.t1, y_b.t1)
    if len(y_f) == 0 or len(y_b) == 0 or lo > hi:
        raise NoOverlapError("the curves share no time interval")
    n = int(math.floor((hi - lo) / grid + 1e-9)) + 1
    ts = lo + grid * np.arange(n)
    if ts[-1] < hi:
        ts = np.append(ts, hi)
    res = _residual(y_f, y_b, ts)
    tie = 1e-3 * tol_pos if tie is None else tie
    best = int(np.flatnonzero(res <= res.min() + tie)[0])
    t_star, r_star = float(ts[best]), float(res[best])
    a, b = max(lo, t_star - grid), min(hi, t_star + grid)
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = _residual(y_f, y_b, c), _residual(y_f, y_b, d)
    while b - a > refine_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _residual(y_f, y_b, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _residual(y_f, y_b, d)
    t_ref = 0.5 * (a + b)
    r_ref = float(_residual(y_f, y_b, t_ref))
    if r_ref < r_star - tie:
        t_star, r_star = t_ref, r_ref
    y_star = 0.5 * (y_f.at(t_star) + y_b.at(t_star))
    # near a knot the curves may agree on only one of the adjacent segments
    probes = [t for t in (t_star - grid, t_star, t_star + grid) if lo <= t <= hi]
    gap = min(float(np.linalg.norm(y_f.slope(t) - y_b.slope(t))) for t in probes)
    if r_star >= tol_pos:
        kind = NONE
    elif gap < tol_vel:
        kind = TRANSITION
    else:
        kind = BOUNCE
    return BoundaryPoint(t_star, y_star, kind, r_star, gap)


# ---------------------------------------------------------------------------
# detection over trajectories


@dataclass
class BoundaryEvent:
    trajectory: int
    before: int
    after: int
    point: BoundaryPoint

    def to_dict(self) -> dict:
        return {"trajectory": self.trajectory, "before": self.before, "after": self.after, **self.point.to_dict()}


def _fit_labels(theories, positions, T, tol):
    """Best-fitting theory per target index (-1 where none fits)."""
    n = len(positions)
    labels = np.full(n, -1)
    if n <= T:
        return labels
    X = np.stack([positions[s - T:s].ravel() for s in range(T, n)])
    U = error_matrix(theories, X, positions[T:])
    best = np.argmin(U, axis=1)
    ok = U[np.arange(len(best)), best] < tol
    labels[T:] = np.where(ok, best, -1)
    return labels


def _clean_windows(labels, T):
    """``(s, i)`` for windows ``positions[s-T:s]`` whose T targets ending at ``s`` all fit theory ``i``."""
    out = []
    for s in range(2 * T - 1, len(labels)):
        seg = labels[s - T + 1:s + 1]
        if seg[0] >= 0 and np.all(seg == seg[0]):
            out.append((s, int(seg[0])))
    return out


def detect_trajectory(theories, past, positions, eps: float, config: BoundaryConfig | None = None,
                      t_offset: int = 0, trajectory: int = 0) -> list:
    """Boundary events along one trajectory (times in position indices plus ``t_offset``)."""
    config = config or BoundaryConfig()
    theories = list(theories)
    positions = np.asarray(positions, dtype=np.float64)
    T = theories[0].T
    labels = _fit_labels(theories, positions, T, config.tol_fit * eps)
    clean = _clean_windows(labels, T)
    events = []
    for (s1, a), (s2, b) in zip(clean, clean[1:]):
        if s2 == s1 + 1 and a == b:
            continue
        gap = (s2 - T) - (s1 - 1)
        if gap > config.max_gap:
            continue
        horizon = gap + config.margin
        fa = Curve(s1 - T, positions[s1 - T:s1])
        fb = Curve(s2 - T, positions[s2 - T:s2])
        y_f = Curve.join(fa, extrapolate(theories[a], positions[s1 - T:s1], "forward", horizon, s1 - T))
        y_b = Curve.join(extrapolate(past[b], positions[s2 - T:s2], "backward", horizon, s2 - T), fb)
        pt = find_meeting(y_f, y_b, config.tol_pos * eps, config.tol_vel * eps, config.grid, config.refine_tol)
        pt.t_star += t_offset
        events.append(BoundaryEvent(trajectory, a, b, pt))
    return events


def boundary_eps(theories, past, ds) -> float:
    """Precision scale for the boundary tolerances.

    The larger of two pooled medians over all samples: the forward residual
    of each sample's owning theory, and the past residual of its owner's
    past predictor.
    """
    theories = list(theories)
    owner = np.atleast_1d(classify(theories, ds.X))
    U = error_matrix(theories, ds.X, ds.Y)
    fwd = float(np.median(U[np.arange(len(ds)), owner]))
    rows, Yp = past_targets(ds)
    if len(rows) == 0 or not past:
        return max(fwd, EPS_FLOOR)
    own = owner[rows]
    P = np.stack([np.linalg.norm(ad.forward(p.net, ds.X[rows]) - Yp, axis=1) for p in past], axis=1)
    back = float(np.median(P[np.arange(len(rows)), own]))
    return max(fwd, back, EPS_FLOOR)


def detect_boundaries(theories, past, ds, eps: float, config: BoundaryConfig | None = None) -> list:
    config = config or BoundaryConfig()
    events = []
    for tid, (start, pos) in ds.trajectories().items():
        events.extend(detect_trajectory(theories, past, pos, eps, config, t_offset=start, trajectory=tid))
    return events


def median_step(ds) -> float:
    steps = np.linalg.norm(ds.Y - ds.X[:, -2:], axis=1)
    return float(np.median(steps))


def boundary_mask(ds, events, radius: float) -> np.ndarray:
    """Samples with any window position or target within ``radius`` of a boundary point of their trajectory."""
    mask = np.zeros(len(ds), dtype=bool)
    by_traj = {}
    for ev in events:
        if ev.point.kind != NONE:
            by_traj.setdefault(ev.trajectory, []).append(np.asarray(ev.point.y_star))
    for tid, pts in by_traj.items():
        rows = np.flatnonzero(ds.trajectory == tid)
        P = np.concatenate([ds.X[rows].reshape(len(rows), ds.T, 2), ds.Y[rows][:, None, :]], axis=1)
        for y in pts:
            near = np.linalg.norm(P - y, axis=2).min(axis=1) < radius
            mask[rows[near]] = True
    return mask


def eliminate_and_retrain(theories, ds, events, config: BoundaryConfig | None = None, train: TrainConfig | None = None):
    """Retrain the classifiers with boundary-touching samples left out.

    Predictors are not modified. Returns ``(theories, mask)`` where the
    theories are copies and ``mask`` flags the excluded samples.
    """
    config = config or BoundaryConfig()
    theories = [t.copy() for t in theories]
    mask = boundary_mask(ds, events, config.radius * median_step(ds))
    if not mask.any() or config.retrain_iters == 0:
        return theories, mask
    keep = ~mask
    train = train or TrainConfig(M=len(theories), M0=len(theories), seed=config.seed)
    trainer = Trainer(train, np.random.default_rng(config.seed), total_iters=config.retrain_iters)
    # the loss value is irrelevant here; only the classifiers are updated
    trainer.run(theories, ds.X[keep], ds.Y[keep], 1.0, "harmonic", config.retrain_iters, train_predictor=False)
    return theories, mask


@dataclass
class BoundaryReport:
    eps: float
    events: list
    mask: np.ndarray
    past: list = field(default_factory=list)

    def counts(self) -> dict:
        out = {TRANSITION: 0, BOUNCE: 0, NONE: 0}
        for ev in self.events:
            out[ev.point.kind] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "counts": self.counts(),
            "masked": int(self.mask.sum()),
            "events": [e.to_dict() for e in self.events],
            "past_predictors": [p.to_dict() for p in self.past],
        }


def boundary_pass(theories, ds, config: BoundaryConfig | None = None, train: TrainConfig | None = None):
    """Past predictors, detection and classifier retraining in one call.

    Returns ``(theories, report)``.
    """
    config = config or BoundaryConfig()
    theories = list(theories)
    past = train_past_predictors(theories, ds, config)
    eps = boundary_eps(theories, past, ds)
    events = detect_boundaries(theories, past, ds, eps, config)
    new, mask = eliminate_and_retrain(theories, ds, events, config, train)
    return new, BoundaryReport(eps, events, mask, past)
