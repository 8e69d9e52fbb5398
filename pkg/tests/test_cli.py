import json
import subprocess
import sys

import numpy as np
import pytest

from theoryforge import cli
from theoryforge import hub as hb
from theoryforge import worldgen as wg
from theoryforge.pipeline import read_metrics

SMALL = ["--M", "2", "--M0", "1", "--K", "200", "--harmonic-rounds", "2", "--finetune-rounds", "1"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["generate", "--world", "gravity", "--trajectories", "15", "--steps", "25",
                     "--out", str(d / "data.json")]) == 0
    assert cli.main(["train", "--data", str(d / "data.json"), "--no-hub", "--out", str(d / "theories.json")]
                    + SMALL) == 0
    return d


class TestCommands:
    def test_generate_is_deterministic(self, tmp_path):
        for name in ("a.json", "b.json"):
            assert cli.main(["generate", "--world", "split", "--trajectories", "3", "--steps", "10",
                             "--seed", "4", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_train_writes_metrics(self, workdir):
        records = read_metrics(workdir / "theories.metrics.jsonl")
        assert records and all({"stage", "iter", "loss", "eps", "M"} <= set(r) for r in records)

    def test_simplify_unify_chain(self, workdir):
        d = workdir
        assert cli.main(["simplify", "--theories", str(d / "theories.json"), "--data", str(d / "data.json"),
                         "--out", str(d / "symbolic.json"), "--trace", str(d / "trace.json")]) == 0
        assert cli.main(["unify", "--symbolic", str(d / "symbolic.json"), "--hub", str(d / "hub.json"),
                         "--out", str(d / "masters.json")]) == 0
        masters = json.loads((d / "masters.json").read_text())
        assert masters["masters"]
        assert hb.load(d / "hub.json").masters

    def test_boundaries_and_eval(self, workdir):
        d = workdir
        assert cli.main(["boundaries", "--theories", str(d / "theories.json"), "--data", str(d / "data.json"),
                         "--out", str(d / "boundaries.json"),
                         "--config", str(self._boundary_config(d))]) == 0
        assert cli.main(["eval", "--theories", str(d / "theories.json"), "--data", str(d / "data.json"),
                         "--out", str(d / "eval.json")]) == 0
        ev = json.loads((d / "eval.json").read_text())
        assert ev["n_samples"] == len(wg.load_dataset(d / "data.json"))

    @staticmethod
    def _boundary_config(d):
        p = d / "bconf.json"
        p.write_text(json.dumps({"boundary": {"past_iters": 100, "past_rounds": 1, "retrain_iters": 20}}))
        return p

    def test_hub_cycle(self, workdir, capsys):
        d = workdir
        h = str(d / "cycle_hub.json")
        assert cli.main(["hub", "add", "--hub", h, "--theories", str(d / "theories.json"),
                         "--data", str(d / "data.json"), "--eta", "1000"]) == 0
        n = len(hb.load(h))
        assert n >= 1
        capsys.readouterr()
        assert cli.main(["hub", "ls", "--hub", h]) == 0
        assert "trained" in capsys.readouterr().out
        tid = hb.load(h).trained[0].id
        assert cli.main(["hub", "show", tid[:8], "--hub", h]) == 0
        assert json.loads(capsys.readouterr().out)["id"] == tid
        assert cli.main(["hub", "prune", tid, "--hub", h]) == 0
        assert len(hb.load(h)) == n - 1

    def test_run(self, workdir, tmp_path):
        conf = tmp_path / "run.json"
        conf.write_text(json.dumps({
            "train": {"M": 2, "M0": 1, "K": 200, "harmonic_rounds": 2, "finetune_rounds": 1},
            "boundary": {"past_iters": 100, "past_rounds": 1, "retrain_iters": 20},
        }))
        assert cli.main(["run", "--config", str(conf), "--data", str(workdir / "data.json"),
                         "--out", str(tmp_path / "out"), "--hub", str(tmp_path / "hub.json")]) == 0
        assert (tmp_path / "out" / "summary.json").exists()
        assert len(hb.load(tmp_path / "hub.json").symbolic) >= 1


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_required(self):
        assert cli.main(["train", "--data", "x.json"]) == 1

    def test_missing_file(self, tmp_path):
        assert cli.main(["train", "--data", str(tmp_path / "none.json"), "--out", str(tmp_path / "t.json")]) == 1

    def test_malformed_dataset(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("[1, 2")
        assert cli.main(["eval", "--theories", str(p), "--data", str(p)]) == 1

    def test_bad_config_key(self, workdir, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"train": {"bogus": 1}}))
        assert cli.main(["run", "--config", str(conf), "--data", str(workdir / "data.json"),
                         "--out", str(tmp_path / "o")]) == 1

    def test_unknown_hub_id(self, tmp_path):
        assert cli.main(["hub", "show", "deadbeef", "--hub", str(tmp_path / "h.json")]) == 1

    def test_runtime_failure(self, tmp_path):
        ds = wg.generate(wg.gravity_world(), n_trajectories=2, steps=10, seed=0)
        ds.Y[:] = 1e200  # squared residuals overflow
        p = tmp_path / "huge.json"
        wg.save_dataset(ds, p)
        assert cli.main(["train", "--data", str(p), "--no-hub", "--out", str(tmp_path / "t.json")] + SMALL) == 2

    def test_process_exit_status(self):
        proc = subprocess.run([sys.executable, "-m", "theoryforge.cli", "hub", "frob"], capture_output=True)
        assert proc.returncode == 1
