"""Synthetic 2D ball worlds and their time-series datasets.

An arena is tiled by axis-aligned rectangular domains, each with its own
position-only difference equation (gravity, spring, magnetic rotation or
free flight). Arena walls reflect the ball elastically. Trajectories are
windowed into supervised samples ``x_t = (y_{t-T}, ..., y_{t-1})``,
``y_t``; ground-truth domain labels ride along for evaluation only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ._jsonio import atomic_write_text, dumps

FORMAT_VERSION = 1

KINDS = ("gravity", "spring", "magnetic", "free")


class DatasetFormatError(ValueError):
    """Malformed or incompatible dataset file."""


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"empty rectangle {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, p, closed=True) -> bool:
        x, y = p
        if closed:
            return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax
        return self.xmin < x < self.xmax and self.ymin < y < self.ymax

    def overlap_area(self, other: "Rect") -> float:
        w = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        h = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        return max(w, 0.0) * max(h, 0.0)

    def to_list(self):
        return [self.xmin, self.xmax, self.ymin, self.ymax]


@dataclass(frozen=True)
class DomainSpec:
    region: Rect
    kind: str = "free"
    g: tuple = (0.0, 0.0)
    k: float = 0.0
    center: tuple = (0.0, 0.0)
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "spring" and not self.k > 0:
            raise ValueError("spring stiffness must be positive")

    def step(self, prev: np.ndarray, cur: np.ndarray, dt: float) -> np.ndarray:
        """Next position from the two latest ones, ignoring walls."""
        if self.kind == "gravity":
            return 2 * cur - prev + np.asarray(self.g) * dt**2
        if self.kind == "spring":
            return 2 * cur - prev - self.k * (cur - np.asarray(self.center)) * dt**2
        if self.kind == "magnetic":
            a = self.omega * dt
            rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
            return cur + rot @ (cur - prev)
        return 2 * cur - prev

    def to_dict(self) -> dict:
        d = {"region": self.region.to_list(), "kind": self.kind}
        if self.kind == "gravity":
            d["g"] = list(self.g)
        elif self.kind == "spring":
            d["k"] = self.k
            d["center"] = list(self.center)
        elif self.kind == "magnetic":
            d["omega"] = self.omega
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(
            region=Rect(*d["region"]),
            kind=d.get("kind", "free"),
            g=tuple(d.get("g", (0.0, 0.0))),
            k=float(d.get("k", 0.0)),
            center=tuple(d.get("center", (0.0, 0.0))),
            omega=float(d.get("omega", 0.0)),
        )


@dataclass(frozen=True)
class WorldSpec:
    arena: Rect
    domains: tuple
    dt: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if not self.domains:
            raise ValueError("world needs at least one domain")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        covered = 0.0
        for i, d in enumerate(self.domains):
            r = d.region
            if not (self.arena.xmin <= r.xmin and r.xmax <= self.arena.xmax
                    and self.arena.ymin <= r.ymin and r.ymax <= self.arena.ymax):
                raise ValueError(f"domain {i} leaves the arena")
            for other in self.domains[i + 1:]:
                if r.overlap_area(other.region) > 0:
                    raise ValueError("domains overlap")
            covered += r.area
        if not np.isclose(covered, self.arena.area, rtol=1e-12):
            raise ValueError("domains do not tile the arena")

    def domain_index(self, p) -> int:
        # lowest index wins on shared edges
        for i, d in enumerate(self.domains):
            if d.region.contains(p):
                return i
        raise ValueError(f"point {tuple(p)} is outside the arena")

    def to_dict(self) -> dict:
        return {
            "arena": self.arena.to_list(),
            "domains": [d.to_dict() for d in self.domains],
            "dt": self.dt,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        return cls(
            arena=Rect(*d["arena"]),
            domains=tuple(DomainSpec.from_dict(x) for x in d["domains"]),
            dt=float(d.get("dt", 1.0)),
            seed=int(d.get("seed", 0)),
        )

    def digest(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode()).hexdigest()


@dataclass
class Trajectory:
    positions: np.ndarray  # (N+1, 2)
    domains: np.ndarray  # domain of each position
    bounced: np.ndarray  # position was produced by a wall reflection

    def __len__(self):
        return len(self.positions)


def simulate(spec: WorldSpec, y0, y1, steps: int) -> Trajectory:
    """Roll the world's difference equations forward from ``y0, y1``.

    The dynamics producing ``y_{t+2}`` are those of the domain containing
    ``y_{t+1}``. A step that would leave the arena has its normal
    component(s) flipped, which keeps the step length.
    """
    if steps <= 0:
        raise ValueError("steps must be positive")
    arena = spec.arena
    prev = np.asarray(y0, dtype=np.float64)
    cur = np.asarray(y1, dtype=np.float64)
    for p in (prev, cur):
        if not arena.contains(p):
            raise ValueError(f"initial point {tuple(p)} is outside the arena")
    pos = [prev, cur]
    bounced = [False, False]
    lo = np.array([arena.xmin, arena.ymin])
    hi = np.array([arena.xmax, arena.ymax])
    for _ in range(steps):
        dom = spec.domains[spec.domain_index(cur)]
        nxt = dom.step(prev, cur, spec.dt)
        out = (nxt < lo) | (nxt > hi)
        hit = bool(out.any())
        if hit:
            d = nxt - cur
            d[out] = -d[out]
            nxt = cur + d
            if np.any(nxt < lo) or np.any(nxt > hi):
                raise ValueError("step longer than the arena; reduce speeds or dt")
        prev, cur = cur, nxt
        pos.append(cur)
        bounced.append(hit)
    positions = np.array(pos)
    domains = np.array([spec.domain_index(p) for p in positions])
    return Trajectory(positions, domains, np.array(bounced))


def random_trajectories(spec: WorldSpec, n: int, steps: int, max_speed: float, rng=None):
    """``n`` trajectories from uniform starting points and bounded initial speed."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    a = spec.arena
    out = []
    for _ in range(n):
        y0 = np.array([rng.uniform(a.xmin, a.xmax), rng.uniform(a.ymin, a.ymax)])
        speed = max_speed * np.sqrt(rng.uniform())
        angle = rng.uniform(0, 2 * np.pi)
        y1 = y0 + speed * np.array([np.cos(angle), np.sin(angle)])
        y1 = np.clip(y1, [a.xmin, a.ymin], [a.xmax, a.ymax])
        out.append(simulate(spec, y0, y1, steps))
    return out


@dataclass
class Dataset:
    X: np.ndarray  # (n, 2T)
    Y: np.ndarray  # (n, 2)
    T: int
    labels: np.ndarray  # ground-truth domain governing each target
    interior: np.ndarray  # whole window inside one domain with no wall hit
    trajectory: np.ndarray  # source trajectory of each sample
    step: np.ndarray  # time index of the target within its trajectory
    dt: float = 1.0
    world: dict | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.X)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx], self.Y[idx], self.T, self.labels[idx], self.interior[idx],
            self.trajectory[idx], self.step[idx], self.dt, self.world, dict(self.meta),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.Y).tobytes())
        return h.hexdigest()

    def trajectories(self) -> dict:
        """Rebuild ``{trajectory id: (start step, positions)}`` from the windows."""
        out = {}
        for tid in np.unique(self.trajectory):
            rows = np.flatnonzero(self.trajectory == tid)
            rows = rows[np.argsort(self.step[rows])]
            first = rows[0]
            start = int(self.step[first]) - self.T
            pos = [p for p in self.X[first].reshape(self.T, 2)]
            pos.extend(self.Y[rows])
            out[int(tid)] = (start, np.array(pos))
        return out


def make_dataset(trajectories, T: int = 3, world: WorldSpec | None = None, seed=None) -> Dataset:
    """Window trajectories into samples; one per target position after the first ``T``."""
    if T < 1:
        raise ValueError("window length T must be at least 1")
    X, Y, labels, interior, traj, step = [], [], [], [], [], []
    for k, tr in enumerate(trajectories):
        n = len(tr)
        if n < T + 1:
            raise ValueError(f"trajectory {k} has {n} positions, need at least {T + 1}")
        p = tr.positions
        for t in range(T, n):
            X.append(p[t - T:t].ravel())
            Y.append(p[t])
            labels.append(int(tr.domains[t - 1]))
            win = tr.domains[t - T:t + 1]
            interior.append(bool(np.all(win == win[0]) and not tr.bounced[t - T + 1:t + 1].any()))
            traj.append(k)
            step.append(t)
    meta = {}
    if world is not None:
        meta["world_hash"] = world.digest()
        meta["seed"] = world.seed if seed is None else int(seed)
    elif seed is not None:
        meta["seed"] = int(seed)
    return Dataset(
        np.array(X, dtype=np.float64).reshape(-1, 2 * T),
        np.array(Y, dtype=np.float64).reshape(-1, 2),
        T,
        np.array(labels, dtype=int),
        np.array(interior, dtype=bool),
        np.array(traj, dtype=int),
        np.array(step, dtype=int),
        world.dt if world is not None else 1.0,
        world.to_dict() if world is not None else None,
        meta,
    )


def generate(spec: WorldSpec, n_trajectories=200, steps=100, T=3, max_speed=None, seed=None) -> Dataset:
    """Simulate ``n_trajectories`` random trajectories and window them."""
    seed = spec.seed if seed is None else seed
    if max_speed is None:
        a = spec.arena
        max_speed = 0.02 * min(a.xmax - a.xmin, a.ymax - a.ymin)
    rng = np.random.default_rng(seed)
    trajs = random_trajectories(spec, n_trajectories, steps, max_speed, rng)
    return make_dataset(trajs, T, world=spec, seed=seed)


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "T": ds.T,
        "dt": ds.dt,
        "world": ds.world,
        "meta": ds.meta,
        "samples": [[x.tolist(), y.tolist()] for x, y in zip(ds.X, ds.Y)],
        "labels": ds.labels.tolist(),
        "interior": ds.interior.tolist(),
        "trajectory": ds.trajectory.tolist(),
        "step": ds.step.tolist(),
    }


def dataset_from_dict(d: dict) -> Dataset:
    if not isinstance(d, dict) or "format_version" not in d:
        raise DatasetFormatError("not a dataset file")
    if d["format_version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset format version {d['format_version']}")
    try:
        T = int(d["T"])
        n = len(d["samples"])
        X = np.array([s[0] for s in d["samples"]], dtype=np.float64).reshape(n, 2 * T)
        Y = np.array([s[1] for s in d["samples"]], dtype=np.float64).reshape(n, 2)
        labels = np.array(d["labels"], dtype=int).reshape(n)
        interior = np.array(d.get("interior", [True] * n), dtype=bool).reshape(n)
        traj = np.array(d.get("trajectory", range(n)), dtype=int).reshape(n)
        step = np.array(d.get("step", [T] * n), dtype=int).reshape(n)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DatasetFormatError(f"malformed dataset: {exc}") from exc
    return Dataset(X, Y, T, labels, interior, traj, step, float(d.get("dt", 1.0)), d.get("world"), d.get("meta", {}))


def save_dataset(ds: Dataset, path) -> None:
    atomic_write_text(path, dumps(dataset_to_dict(ds)))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"cannot parse {path}: {exc}") from exc
    return dataset_from_dict(d)


def gravity_world(g=(0.0, -0.005), size=1.0, seed=0) -> WorldSpec:
    """Single gravity domain filling a square arena ``[-size, size]^2``."""
    arena = Rect(-size, size, -size, size)
    return WorldSpec(arena, (DomainSpec(arena, "gravity", g=tuple(g)),), seed=seed)


def split_world(left: DomainSpec | None = None, right: DomainSpec | None = None, size=1.0, seed=0) -> WorldSpec:
    """Square arena split at ``x = 0`` into two domains of equal area."""
    arena = Rect(-size, size, -size, size)
    lr = Rect(-size, 0.0, -size, size)
    rr = Rect(0.0, size, -size, size)
    left = DomainSpec(lr, "gravity", g=(0.0, -0.005)) if left is None else DomainSpec(lr, left.kind, left.g, left.k, left.center, left.omega)
    right = DomainSpec(rr, "free") if right is None else DomainSpec(rr, right.kind, right.g, right.k, right.center, right.omega)
    return WorldSpec(arena, (left, right), seed=seed)


def four_domain_world(size=1.0, seed=0) -> WorldSpec:
    """Quadrants with gravity, spring, magnetic and free dynamics."""
    arena = Rect(-size, size, -size, size)
    q = [
        DomainSpec(Rect(-size, 0.0, 0.0, size), "gravity", g=(0.0, -0.005)),
        DomainSpec(Rect(0.0, size, 0.0, size), "spring", k=0.02, center=(0.5 * size, 0.5 * size)),
        DomainSpec(Rect(-size, 0.0, -size, 0.0), "magnetic", omega=0.1),
        DomainSpec(Rect(0.0, size, -size, 0.0), "free"),
    ]
    return WorldSpec(arena, q, seed=seed)
