"""``forge`` command line.

Exit status 0 on success, 1 for invalid input (arguments, configuration,
malformed files) and 2 when a stage fails while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import boundary as bd
from . import hub as hubmod
from . import worldgen
from .ddac import TrainConfig, TrainingError, ddac
from .pipeline import (
    ConfigError, PipelineError, RunConfig, emit_metrics, evaluate, load_theories, read_config_file, read_json,
    razor_records, run_pipeline, theories_artifact, write_json, config_section,
)
from .razor import RazorConfig, SymbolicTheory, occams_razor
from .theory import TheorySet
from .unify import unify

log = logging.getLogger("theoryforge")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

WORLDS = {
    "gravity": worldgen.gravity_world,
    "split": worldgen.split_world,
    "four": worldgen.four_domain_world,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _read_world(arg: str, seed: int) -> worldgen.WorldSpec:
    if arg in WORLDS:
        return WORLDS[arg](seed=seed)
    d = read_json(arg)
    return worldgen.WorldSpec.from_dict(d.get("world", d))


def _train_config(args) -> TrainConfig:
    d = read_config_file(args.config) if args.config else {}
    d = dict(d.get("train", d))
    for key in ("M", "M0", "K", "harmonic_rounds", "finetune_rounds"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    d["seed"] = args.seed
    return config_section(TrainConfig, d)


def _section_from(args, cls, name):
    d = read_config_file(args.config) if getattr(args, "config", None) else {}
    return config_section(cls, d.get(name, {}))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    world = _read_world(args.world, args.seed)
    ds = worldgen.generate(world, args.trajectories, args.steps, args.T, args.max_speed, seed=args.seed)
    worldgen.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples from {args.trajectories} trajectories to {args.out}")


def cmd_train(args):
    cfg = _train_config(args)
    ds = worldgen.load_dataset(args.data)
    proposed = []
    if args.hub and not args.no_hub:
        proposed = hubmod.propose(hubmod.load(args.hub), ds.X, ds.Y, cfg.M0, cfg.eps0)
    res = ddac(ds.X, ds.Y, proposed, cfg, labels=ds.labels, interior=ds.interior)
    write_json(args.out, {**theories_artifact(res.theories, args.seed), "config": cfg.to_dict()})
    metrics = args.metrics or os.path.splitext(args.out)[0] + ".metrics.jsonl"
    emit_metrics([dict(r, stage=f"ddac/{r['stage']}") for r in res.records], metrics)
    last = res.records[-1] if res.records else {}
    print(f"{len(res.theories)} theories, eps {res.eps:.3g}, routing {last.get('routing_accuracy')}; "
          f"wrote {args.out} and {metrics}")


def cmd_simplify(args):
    ts = load_theories(args.theories)
    ds = worldgen.load_dataset(args.data)
    eps = args.eps if args.eps is not None else ts.eps
    config = _section_from(args, RazorConfig, "razor")
    out = occams_razor(ts.theories, ds.X, ds.Y, eps, config)
    write_json(args.out, {"seed": args.seed, "symbolic": [s.to_dict() for s in out]})
    if args.trace:
        write_json(args.trace, {"seed": args.seed, "trace": [t.to_dict() for s in out for t in s.trace]})
    if args.metrics:
        emit_metrics(razor_records(out, eps), args.metrics)
    for s in out:
        print(f"{s.id}  dl {s.report.total:.6g}  {s}")


def _load_symbolic(path) -> list:
    d = read_json(path)
    return [SymbolicTheory.from_dict(s) for s in d.get("symbolic", d if isinstance(d, list) else [])]


def cmd_unify(args):
    symbolic = _load_symbolic(args.symbolic)
    hub = hubmod.load(args.hub) if args.hub else None
    if hub is not None:
        for s in symbolic:
            hub.put_symbolic(s)
        symbolic = hub.symbolic
    res = unify(symbolic, args.K, args.seed)
    write_json(args.out, {"seed": args.seed, **res.to_dict()})
    if hub is not None:
        for m in res.masters:
            hub.put_master(m)
        hubmod.save(hub, args.hub)
    for m in res.masters:
        print(f"{m.n_params} params  {len(m.members)} members  {m}")


def cmd_boundaries(args):
    ts = load_theories(args.theories)
    ds = worldgen.load_dataset(args.data)
    config = _section_from(args, bd.BoundaryConfig, "boundary")
    config.seed = args.seed
    refined, report = bd.boundary_pass(ts.theories, ds, config)
    write_json(args.out, {"seed": args.seed, **report.to_dict(),
                          "theories": TheorySet(refined, ts.T, ts.eps).to_dict()})
    print(f"boundaries {report.counts()}, masked {int(report.mask.sum())} samples; wrote {args.out}")


def cmd_hub(args):
    hub = hubmod.load(args.hub)
    if args.action == "ls":
        for e in hub.trained:
            print(f"trained   {e.id}  dl {e.dl:.4g}  eps {e.eps:.3g}  n {len(e.indices)}")
        for s in hub.symbolic:
            print(f"symbolic  {s.id}  dl {s.report.total:.6g}  {s}")
        for i, m in enumerate(hub.masters):
            print(f"master    m{i}  params {m.n_params}  members {len(m.members)}  {m}")
        return
    if args.action == "show":
        if not args.id:
            raise ConfigError("hub show needs an id")
        try:
            item = hub.get(args.id)
        except KeyError as exc:
            raise ConfigError(f"no hub entry matches {args.id}") from exc
        print(json.dumps(item.to_dict(), indent=1))
        return
    if args.action == "add":
        if args.symbolic:
            for s in _load_symbolic(args.symbolic):
                hub.put_symbolic(s)
            added = "symbolic theories"
        else:
            if not (args.theories and args.data):
                raise ConfigError("hub add needs --theories and --data (or --symbolic)")
            ts = load_theories(args.theories)
            ds = worldgen.load_dataset(args.data)
            n = hubmod.add_trained(hub, ts.theories, ds.X, ds.Y, ts.eps, args.eta, ds.digest())
            added = f"{n} of {len(ts)} trained theories"
        hubmod.save(hub, args.hub)
        print(f"added {added}; hub holds {len(hub)} trained, {len(hub.symbolic)} symbolic")
        return
    if args.action == "prune":
        ids = [args.id] if args.id else []
        if not ids and args.max_dl is None:
            raise ConfigError("hub prune needs an id or --max-dl")
        n = hub.prune(ids, args.max_dl)
        hubmod.save(hub, args.hub)
        print(f"removed {n} entries")


def cmd_run(args):
    d = read_config_file(args.config) if args.config else {}
    for key in ("data", "out", "hub", "seed"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.no_hub:
        d["no_hub"] = True
    if args.no_boundaries:
        d["boundaries"] = False
    config = RunConfig.from_dict(d)
    res = run_pipeline(config)
    s = res.summary
    print(f"M {s['M']}  eps {s['eps']:.3g}  hub +{s['hub_added']} ({s['hub_trained_after']} trained)")
    for text in s["symbolic"]:
        print(f"  symbolic: {text}")
    for text in s["masters"]:
        print(f"  master:   {text}")
    print(f"artifacts in {config.out}")


def cmd_eval(args):
    ts = load_theories(args.theories)
    ds = worldgen.load_dataset(args.data)
    out = {"seed": args.seed, **evaluate(ts.theories, ds)}
    if args.out:
        write_json(args.out, out)
    print(json.dumps(out, indent=1))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="forge", description="Learn piecewise theories from trajectory data.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("generate", cmd_generate, "simulate a world and write a dataset")
    sp.add_argument("--world", required=True, help="world spec file or one of: " + ", ".join(WORLDS))
    sp.add_argument("--trajectories", type=int, default=200)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--T", type=int, default=3)
    sp.add_argument("--max-speed", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train theories with divide-and-conquer")
    sp.add_argument("--data", required=True)
    sp.add_argument("--hub", default=None)
    sp.add_argument("--no-hub", action="store_true")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics", default=None)
    for key in ("M", "M0", "K"):
        sp.add_argument(f"--{key}", type=int, default=None)
    sp.add_argument("--harmonic-rounds", dest="harmonic_rounds", type=int, default=None)
    sp.add_argument("--finetune-rounds", dest="finetune_rounds", type=int, default=None)

    sp = add("simplify", cmd_simplify, "Occam's razor on trained theories")
    sp.add_argument("--theories", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace", default=None)
    sp.add_argument("--metrics", default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--config", default=None)

    sp = add("unify", cmd_unify, "merge symbolic theories into master theories")
    sp.add_argument("--symbolic", required=True)
    sp.add_argument("--hub", default=None)
    sp.add_argument("-K", type=int, default=4)
    sp.add_argument("--out", required=True)

    sp = add("boundaries", cmd_boundaries, "find domain boundaries and retrain classifiers")
    sp.add_argument("--theories", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)

    sp = add("hub", cmd_hub, "inspect or edit a theory hub")
    sp.add_argument("action", choices=["ls", "add", "prune", "show"])
    sp.add_argument("id", nargs="?", default=None)
    sp.add_argument("--hub", default="hub.json")
    sp.add_argument("--theories", default=None)
    sp.add_argument("--symbolic", default=None)
    sp.add_argument("--data", default=None)
    sp.add_argument("--eta", type=float, default=hubmod.DEFAULT_ETA)
    sp.add_argument("--max-dl", type=float, default=None)

    sp = add("run", cmd_run, "the whole pipeline")
    sp.set_defaults(seed=None)
    sp.add_argument("--config", default=None)
    sp.add_argument("--data", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--hub", default=None)
    sp.add_argument("--no-hub", action="store_true")
    sp.add_argument("--no-boundaries", action="store_true")

    sp = add("eval", cmd_eval, "prediction and routing quality on labelled data")
    sp.add_argument("--theories", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ConfigError, worldgen.DatasetFormatError, hubmod.HubFormatError, FileNotFoundError,
            IsADirectoryError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (TrainingError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
