"""Grouping symbolic theories into parameterized master theories.

Theories are clustered by total description length, canonicalized, and
those sharing a structure are merged: coefficients that agree across the
group stay concrete and the rest become named parameters.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import symbolic as sym

REAL_TOL = 1e-9


# ---------------------------------------------------------------------------
# k-means


def _assign(P, C):
    d2 = ((P[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def _kmeans_once(P, K, rng, max_iter, history):
    C = P[rng.choice(len(P), size=K, replace=False)].copy()
    labels = None
    for _ in range(max_iter):
        new, d2 = _assign(P, C)
        if history is not None:
            history.append(float(d2[np.arange(len(P)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        reseeded = False
        for k in range(K):
            mine = labels == k
            if mine.any():
                C[k] = P[mine].mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centroid
                far = int(np.argmax(d2[np.arange(len(P)), labels]))
                C[k] = P[far]
                labels[far] = k
                d2[far, :] = 0.0
                reseeded = True
        if reseeded:
            # the donor clusters' centroids are stale; force another update
            labels = None
    labels, d2 = _assign(P, C)
    return labels, C, float(d2[np.arange(len(P)), labels].sum())


def kmeans(points, K: int, seed: int = 0, n_init: int = 10, max_iter: int = 300, history=None):
    """Lloyd's algorithm with random-point initialization and restarts.

    Returns ``(assignments, centroids)`` for the restart with the lowest
    within-cluster sum of squares. ``history``, if given, receives the
    distortion after each assignment step of every restart.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    N = len(P)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > N:
        raise ValueError(f"K = {K} exceeds the number of points ({N})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        labels, C, cost = _kmeans_once(P, K, rng, max_iter, history)
        if best is None or cost < best[2]:
            best = (labels, C, cost)
    return best[0], best[1]


def distortion(points, assignments, centroids) -> float:
    P = np.asarray(points, dtype=np.float64)
    P = P[:, None] if P.ndim == 1 else P
    C = np.asarray(centroids, dtype=np.float64)
    return float(((P - C[np.asarray(assignments)]) ** 2).sum())


# ---------------------------------------------------------------------------
# canonical forms


def canonicalize(exprs):
    """Canonical tree form and structure skeleton of an expression or tuple."""
    if isinstance(exprs, (list, tuple)):
        tree = tuple(sym.canonical(e) for e in exprs)
        return tree, tuple(sym.skeleton(e) for e in tree)
    tree = sym.canonical(exprs)
    return tree, sym.skeleton(tree)


def _same(a, b) -> bool:
    if isinstance(a, sym.Param) or isinstance(b, sym.Param):
        return a == b
    if a.kind != b.kind:
        return False
    if a.kind == sym.REAL:
        return abs(a.value - b.value) < REAL_TOL
    return (a.num, a.den) == (b.num, b.den)


def _coeff_leaves(tree):
    return [leaf for e in tree for leaf in sym.leaves(e) if isinstance(leaf, (sym.Const, sym.Param))]


def _substitute(tree, values):
    """Replace the coefficient leaves of ``tree``, in pre-order, by ``values``."""
    it = iter(values)

    def repl(leaf):
        return next(it) if isinstance(leaf, (sym.Const, sym.Param)) else leaf

    return tuple(sym.map_leaves(e, repl) for e in tree)


@dataclass
class MasterTheory:
    """A tree whose differing coefficients are parameters ``p1..pJ``."""

    exprs: tuple
    params: list
    members: list
    values: list
    clusters: list = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def skeleton(self):
        return tuple(sym.skeleton(e) for e in self.exprs)

    def member_values(self, member) -> list:
        return self.values[self.members.index(member)]

    def __str__(self) -> str:
        return "; ".join(sym.to_str(e) for e in self.exprs)

    def to_dict(self) -> dict:
        return {
            "exprs": [sym.to_dict(e) for e in self.exprs],
            "text": [sym.to_str(e) for e in self.exprs],
            "skeleton": [sym.to_str(e) for e in self.skeleton],
            "params": list(self.params),
            "members": [{"id": m, "params": [sym.to_dict(c) for c in v]} for m, v in zip(self.members, self.values)],
            "clusters": list(self.clusters),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MasterTheory":
        return cls(
            tuple(sym.from_dict(e) for e in d["exprs"]),
            list(d["params"]),
            [m["id"] for m in d["members"]],
            [[sym.from_dict(c) for c in m["params"]] for m in d["members"]],
            list(d.get("clusters", [])),
        )


def merge_group(trees, ids, clusters=()) -> MasterTheory:
    """Synchronized traversal of same-skeleton trees into one master."""
    columns = list(zip(*[_coeff_leaves(t) for t in trees]))
    names, master_leaves = [], []
    values = [[] for _ in trees]
    for col in columns:
        if all(_same(col[0], c) for c in col[1:]):
            master_leaves.append(col[0])
            continue
        name = f"p{len(names) + 1}"
        names.append(name)
        master_leaves.append(sym.Param(name))
        for v, c in zip(values, col):
            v.append(c)
    return MasterTheory(_substitute(trees[0], master_leaves), names, list(ids), values, list(clusters))


def instantiate(master: MasterTheory, params) -> tuple:
    """Substitute parameter values; numbers become real-tagged constants."""
    params = list(params)
    if len(params) != master.n_params:
        raise ValueError(f"expected {master.n_params} parameter values, got {len(params)}")
    binding = {n: v if isinstance(v, sym.Const) else sym.Const.real(float(v)) for n, v in zip(master.params, params)}
    return tuple(sym.map_leaves(e, lambda leaf: binding.get(leaf.name, leaf) if isinstance(leaf, sym.Param) else leaf)
                 for e in master.exprs)


@dataclass
class UnifyResult:
    masters: list
    unmerged: list
    assignments: list

    def to_dict(self) -> dict:
        return {
            "masters": [m.to_dict() for m in self.masters],
            "unmerged": list(self.unmerged),
            "assignments": list(self.assignments),
        }


def _member_id(theory, i):
    tid = getattr(theory, "id", None)
    return tid if tid is not None else str(i)


def unify(theories, K: int = 4, seed: int = 0) -> UnifyResult:
    """Cluster by total DL, keep each cluster's modal structure, merge masters.

    ``theories`` are :class:`~theoryforge.razor.SymbolicTheory` objects.
    Members whose structure differs from their cluster's mode are listed in
    ``unmerged`` by id.
    """
    theories = list(theories)
    if not theories:
        return UnifyResult([], [], [])
    dls = np.array([t.report.total for t in theories])
    labels, _ = kmeans(dls, min(K, len(theories)), seed=seed)
    canon = [canonicalize(t.exprs) for t in theories]
    ids = [_member_id(t, i) for i, t in enumerate(theories)]
    groups, unmerged = [], []
    for k in sorted(set(labels.tolist())):
        members = [i for i in range(len(theories)) if labels[i] == k]
        counts = Counter(canon[i][1] for i in members)
        lowest = {}
        for i in members:
            s = canon[i][1]
            lowest[s] = min(lowest.get(s, ids[i]), ids[i])
        # mode structure; ties go to the structure holding the lowest member id
        mode = min(counts, key=lambda s: (-counts[s], lowest[s]))
        groups.append(([i for i in members if canon[i][1] == mode], k))
        unmerged.extend(ids[i] for i in members if canon[i][1] != mode)
    # merge groups that share a structure
    merged = {}
    for members, k in groups:
        skel = canon[members[0]][1]
        slot = merged.setdefault(skel, ([], []))
        slot[0].extend(members)
        slot[1].append(int(k))
    masters = []
    for members, ks in merged.values():
        members = sorted(members)
        masters.append(merge_group([canon[i][0] for i in members], [ids[i] for i in members], ks))
    return UnifyResult(masters, unmerged, labels.tolist())
