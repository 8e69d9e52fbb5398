"""Persistent store of learned theories.

The hub keeps trained (network) theories together with a reference to the
data they were fitted on, plus symbolic and master theories. It proposes
stored theories for new data and admits newly trained ones whose mean
description-length loss on their own domain is small.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ._jsonio import atomic_write_text, dumps
from .razor import SymbolicTheory
from .theory import Theory, classifier_net, affine_predictor, dl_loss, domain_partition, error_matrix
from .unify import MasterTheory

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_ETA = 3.0


class HubFormatError(ValueError):
    pass


@dataclass
class TrainedEntry:
    theory: Theory
    eps: float
    dl: float
    dataset_hash: str
    indices: list

    @property
    def id(self) -> str:
        return self.theory.id

    def to_dict(self) -> dict:
        t = self.theory.to_dict()
        return {
            "id": self.id,
            "f": t["f"],
            "c": t["c"],
            "origin": t["origin"],
            "eps": self.eps,
            "dl": self.dl,
            "data_ref": {"dataset_hash": self.dataset_hash, "indices": list(self.indices)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedEntry":
        th = Theory.from_dict({"f": d["f"], "c": d["c"], "origin": d.get("origin", "hub")})
        if th.id != d["id"]:
            raise HubFormatError(f"stored id {d['id']} does not match its parameters")
        ref = d["data_ref"]
        return cls(th, float(d["eps"]), float(d["dl"]), ref["dataset_hash"], [int(i) for i in ref["indices"]])


@dataclass
class TheoryHub:
    trained: list = field(default_factory=list)
    symbolic: list = field(default_factory=list)
    masters: list = field(default_factory=list)

    def __len__(self):
        return len(self.trained)

    def ids(self) -> list:
        return [e.id for e in self.trained]

    def get(self, theory_id: str):
        """Trained entry, symbolic theory or master matching an id (or id prefix)."""
        for e in self.trained:
            if e.id.startswith(theory_id):
                return e
        for s in self.symbolic:
            if s.id.startswith(theory_id):
                return s
        for i, m in enumerate(self.masters):
            if f"m{i}" == theory_id:
                return m
        raise KeyError(theory_id)

    def put_trained(self, entry: TrainedEntry) -> None:
        """Insert or replace by id, so re-adding is idempotent."""
        for i, e in enumerate(self.trained):
            if e.id == entry.id:
                self.trained[i] = entry
                return
        self.trained.append(entry)

    def put_symbolic(self, st: SymbolicTheory) -> None:
        for i, s in enumerate(self.symbolic):
            if s.id == st.id:
                self.symbolic[i] = st
                return
        self.symbolic.append(st)

    def put_master(self, master: MasterTheory) -> None:
        """Insert, replacing any master with the same structure."""
        for i, m in enumerate(self.masters):
            if m.skeleton == master.skeleton:
                self.masters[i] = master
                return
        self.masters.append(master)

    def prune(self, ids=None, max_dl=None) -> int:
        """Remove trained entries by id prefix and/or with ``dl >= max_dl``."""
        ids = list(ids or [])
        before = len(self.trained)

        def drop(e):
            if any(e.id.startswith(i) for i in ids):
                return True
            return max_dl is not None and e.dl >= max_dl

        self.trained = [e for e in self.trained if not drop(e)]
        return before - len(self.trained)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "trained": [e.to_dict() for e in self.trained],
            "symbolic": [s.to_dict() for s in self.symbolic],
            "masters": [m.to_dict() for m in self.masters],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TheoryHub":
        if not isinstance(d, dict) or "format_version" not in d:
            raise HubFormatError("not a hub file")
        if d["format_version"] != FORMAT_VERSION:
            raise HubFormatError(f"unsupported hub format version {d['format_version']}")
        try:
            return cls(
                [TrainedEntry.from_dict(e) for e in d.get("trained", [])],
                [SymbolicTheory.from_dict(s) for s in d.get("symbolic", [])],
                [MasterTheory.from_dict(m) for m in d.get("masters", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, HubFormatError):
                raise
            raise HubFormatError(f"corrupt hub record: {exc}") from exc


def save(hub: TheoryHub, path) -> None:
    atomic_write_text(path, dumps(hub.to_dict()))


def load(path) -> TheoryHub:
    """Read a hub file; a missing or empty file gives an empty hub."""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return TheoryHub()
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise HubFormatError(f"corrupt hub file {path}: {exc}") from exc
    return TheoryHub.from_dict(d)


def symbolic_to_theory(st: SymbolicTheory, seed: int = 0) -> Theory:
    """Network theory computing a symbolic predictor, with a fresh classifier."""
    T = st.T
    n = 2 * T
    b = st.predict(np.zeros((1, n)))[0]
    W = np.stack([st.predict(np.eye(n)[j:j + 1])[0] - b for j in range(n)], axis=1)
    rng = np.random.default_rng([seed, int(st.id, 16) % (2 ** 32)])
    return Theory(affine_predictor(W, b), classifier_net(T, rng=rng), origin="symbolic")


def propose(hub: TheoryHub, X, Y, M0: int, eps: float, include_symbolic: bool = False, seed: int = 0) -> list:
    """Copies of the ``M0`` stored theories that best fit the most samples.

    Each sample goes to the theory with the smallest DL loss (lowest index
    on ties); theories are ranked by the size of their best-fit set, ties
    broken by hub order.
    """
    if M0 < 0:
        raise ValueError("M0 must be nonnegative")
    pool = [e.theory for e in hub.trained]
    if include_symbolic:
        pool += [symbolic_to_theory(s, seed) for s in hub.symbolic]
    if not pool or M0 == 0:
        return []
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[1] // 2
    pool = [t for t in pool if t.T == T]
    if not pool:
        return []
    best = np.argmin(dl_loss(error_matrix(pool, X, Y), eps), axis=1)
    counts = np.bincount(best, minlength=len(pool))
    order = sorted(range(len(pool)), key=lambda i: (-counts[i], i))
    return [pool[i].copy() for i in order[:M0]]


def add_trained(hub: TheoryHub, theories, X, Y, eps: float, eta: float = DEFAULT_ETA,
                dataset_hash: str = "") -> int:
    """Admit every theory whose mean DL loss on its classifier domain is below ``eta``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty dataset")
    theories = list(theories)
    added = 0
    for th, idx in zip(theories, domain_partition(theories, X)):
        if len(idx) == 0:
            continue
        u = np.linalg.norm(np.asarray(th.f(X[idx])) - Y[idx], axis=1)
        dl = float(np.mean(dl_loss(u, eps)))
        if dl < eta:
            hub.put_trained(TrainedEntry(th.copy(), float(eps), dl, dataset_hash, idx.tolist()))
            added += 1
            log.info("hub: added theory %s (mean dl %.3g bits on %d samples)", th.id, dl, len(idx))
        else:
            log.info("hub: theory %s not added (mean dl %.3g bits >= %.3g)", th.id, dl, eta)
    return added


__all__ = [
    "DEFAULT_ETA", "FORMAT_VERSION", "HubFormatError", "TheoryHub", "TrainedEntry", "add_trained", "load",
    "propose", "save", "symbolic_to_theory",
]
