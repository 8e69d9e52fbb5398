"""End-to-end learning run: propose, train, admit, simplify, unify, store, refine.

Every artifact is plain JSON written atomically, with the run seed recorded
in it and no timestamps, so a rerun with the same configuration, seed and
data reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import boundary as bd
from . import hub as hubmod
from . import worldgen
from ._jsonio import atomic_write_text, dumps
from .ddac import TrainConfig, ddac, generalized_mean_loss, routing_accuracy
from .razor import RazorConfig, occams_razor
from .theory import TheorySet, domain_partition, error_matrix
from .unify import unify

log = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class ConfigError(ValueError):
    """Invalid run configuration (exit status 1)."""


class PipelineError(RuntimeError):
    """A stage failed while running (exit status 2)."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration


def read_config_file(path) -> dict:
    """Parse a JSON or TOML configuration file into a dict."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            try:
                import tomli as tomllib
            except ModuleNotFoundError as exc:
                raise ConfigError("TOML configs need Python 3.11+ or the tomli package") from exc
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        d = json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return d


def config_section(cls, d):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


@dataclass
class RunConfig:
    data: str = ""
    out: str = "forge-out"
    hub: str = "hub.json"
    no_hub: bool = False
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    razor: RazorConfig = field(default_factory=RazorConfig)
    razor_eps: float | None = None     # None: the precision floor reached by training
    unify_k: int = 4
    eta: float = hubmod.DEFAULT_ETA
    include_symbolic: bool = False
    boundary: bd.BoundaryConfig = field(default_factory=bd.BoundaryConfig)
    boundaries: bool = True
    log_level: str = "WARNING"

    def __post_init__(self):
        # one seed drives every random choice of the run
        self.train.seed = self.seed
        self.boundary.seed = self.seed

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        sections = {
            "train": config_section(TrainConfig, d.pop("train", None)),
            "razor": config_section(RazorConfig, d.pop("razor", None)),
            "boundary": config_section(bd.BoundaryConfig, d.pop("boundary", None)),
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d, **sections)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if hasattr(v, "to_dict") else v
        out["razor"] = dict(self.razor.__dict__)
        return out

    def validate(self) -> "RunConfig":
        if not self.data:
            raise ConfigError("no dataset given")
        if not os.path.isfile(self.data) or not os.access(self.data, os.R_OK):
            raise ConfigError(f"dataset {self.data} is not a readable file")
        if not self.no_hub:
            parent = os.path.dirname(os.path.abspath(self.hub))
            if not os.path.isdir(parent):
                raise ConfigError(f"hub directory {parent} does not exist")
        if os.path.exists(self.out) and not os.path.isdir(self.out):
            raise ConfigError(f"output path {self.out} is not a directory")
        if self.unify_k < 1:
            raise ConfigError("unify_k must be at least 1")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.razor_eps is not None and not self.razor_eps > 0:
            raise ConfigError("razor_eps must be positive")
        if self.razor.refit not in ("irls", "adam"):
            raise ConfigError(f"unknown razor refit {self.razor.refit!r}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}")
        return self


# ---------------------------------------------------------------------------
# artifacts and metrics


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def emit_metrics(records, path) -> None:
    """Write one JSON object per line; each has stage, iter, loss, eps and M."""
    for r in records:
        missing = {"stage", "iter", "loss", "eps", "M"} - set(r)
        if missing:
            raise ValueError(f"metric record lacks {sorted(missing)}")
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_metrics(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def razor_records(symbolic, eps: float) -> list:
    """Metric records for every razor attempt, in pipeline order."""
    out = []
    for st in symbolic:
        for k, t in enumerate(st.trace):
            out.append({"stage": f"razor/{t.stage}", "iter": k, "loss": t.dl_after, "eps": eps,
                        "M": len(symbolic), "theory": t.theory, "dl_before": t.dl_before,
                        "accepted": t.accepted})
    return out


def load_theories(path) -> TheorySet:
    d = read_json(path)
    return TheorySet.from_dict(d["theories"] if "theories" in d and isinstance(d["theories"], dict) else d)


def theories_artifact(theories: TheorySet, seed: int) -> dict:
    return {"seed": seed, "theories": theories.to_dict()}


# ---------------------------------------------------------------------------
# evaluation


def evaluate(theories, ds) -> dict:
    """Prediction and routing quality of a theory set on a labelled dataset."""
    theories = list(theories)
    U = error_matrix(theories, ds.X, ds.Y)
    parts = domain_partition(theories, ds.X)
    owner = np.empty(len(ds), dtype=int)
    for i, idx in enumerate(parts):
        owner[idx] = i
    own = U[np.arange(len(ds)), owner]
    out = {
        "n_samples": len(ds),
        "M": len(theories),
        "median_error": float(np.median(own)),
        "mean_error": float(np.mean(own)),
        "best_fit_median_error": float(np.median(U.min(axis=1))),
        "domain_sizes": [len(p) for p in parts],
    }
    inner = ds.interior
    out["routing_accuracy"] = routing_accuracy(theories, ds.X, ds.labels)
    out["interior_routing_accuracy"] = routing_accuracy(theories, ds.X[inner], ds.labels[inner]) if inner.any() else None
    return out


# ---------------------------------------------------------------------------
# the run


@dataclass
class RunResult:
    summary: dict
    paths: dict


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            log.info("stage %s", name)
            try:
                return fn(*a, **kw)
            except (ConfigError, PipelineError):
                raise
            except Exception as exc:
                raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
        return inner
    return wrap


def run_pipeline(config: RunConfig) -> RunResult:
    """Execute every stage and write its artifact into ``config.out``.

    Stages: propose from the hub, DDAC, admit trained theories, Occam's
    razor, unification, hub write, boundary pass. The hub file is written
    once, atomically, after unification.
    """
    config.validate()
    seed = config.seed
    os.makedirs(config.out, exist_ok=True)
    paths = {k: os.path.join(config.out, f) for k, f in [
        ("config", "config.json"), ("metrics", "metrics.jsonl"), ("theories", "theories.json"),
        ("symbolic", "symbolic.json"), ("trace", "trace.json"), ("masters", "masters.json"),
        ("boundaries", "boundaries.json"), ("summary", "summary.json"),
    ]}
    write_json(paths["config"], config.to_dict())

    ds = _stage("load")(worldgen.load_dataset)(config.data)
    digest = ds.digest()
    hub = hubmod.TheoryHub() if config.no_hub else _stage("load")(hubmod.load)(config.hub)
    n_hub_before = len(hub)

    proposed = _stage("propose")(hubmod.propose)(hub, ds.X, ds.Y, config.train.M0, config.train.eps0,
                                                 config.include_symbolic, seed)
    res = _stage("ddac")(ddac)(ds.X, ds.Y, proposed, config.train, labels=ds.labels, interior=ds.interior)
    theories, eps = res.theories, res.eps
    write_json(paths["theories"], theories_artifact(theories, seed))

    added = _stage("add_trained")(hubmod.add_trained)(hub, theories, ds.X, ds.Y, eps, config.eta, digest)

    razor_eps = eps if config.razor_eps is None else config.razor_eps
    symbolic = _stage("razor")(occams_razor)(theories, ds.X, ds.Y, razor_eps, config.razor)
    write_json(paths["symbolic"], {"seed": seed, "symbolic": [s.to_dict() for s in symbolic]})
    write_json(paths["trace"], {"seed": seed, "trace": [t.to_dict() for s in symbolic for t in s.trace]})

    for st in symbolic:
        hub.put_symbolic(st)
    unified = _stage("unify")(unify)(hub.symbolic, config.unify_k, seed)
    write_json(paths["masters"], {"seed": seed, **unified.to_dict()})
    for m in unified.masters:
        hub.put_master(m)
    if not config.no_hub:
        _stage("hub")(hubmod.save)(hub, config.hub)

    records = [dict(r, stage=f"ddac/{r['stage']}") for r in res.records] + razor_records(symbolic, razor_eps)
    report = None
    if config.boundaries:
        refined, report = _stage("boundary")(bd.boundary_pass)(theories.theories, ds, config.boundary, config.train)
        refined_set = TheorySet(refined, theories.T, eps)
        write_json(paths["boundaries"], {"seed": seed, **report.to_dict(),
                                         "theories": refined_set.to_dict()})
        ev = evaluate(refined, ds)
        loss = generalized_mean_loss(refined, ds.X, ds.Y, eps, config.train.gamma) / len(ds)
        records.append({"stage": "boundary", "iter": 0, "loss": loss, "eps": report.eps,
                        "M": len(refined), "routing_accuracy": ev["interior_routing_accuracy"],
                        "masked": int(report.mask.sum())})
    emit_metrics(records, paths["metrics"])

    summary = {
        "seed": seed,
        "dataset_hash": digest,
        "proposed": len(proposed),
        "M": len(theories),
        "eps": eps,
        "hub_trained_before": n_hub_before,
        "hub_added": added,
        "hub_trained_after": len(hub),
        "symbolic": [str(s) for s in symbolic],
        "masters": [str(m) for m in unified.masters],
        "boundary_counts": report.counts() if report is not None else None,
        "evaluation": evaluate(theories, ds),
    }
    write_json(paths["summary"], summary)
    return RunResult(summary, paths)


__all__ = [
    "ConfigError", "PipelineError", "RunConfig", "RunResult", "emit_metrics", "evaluate", "load_theories",
    "read_config_file", "read_metrics", "run_pipeline", "theories_artifact", "write_json",
]
