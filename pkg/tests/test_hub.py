import json

import numpy as np
import pytest

from theoryforge import hub as hb
from theoryforge import razor as rz
from theoryforge import theory as th
from theoryforge import worldgen as wg
from theoryforge.unify import unify

from oracles import G, free_theory, gravity_theory


@pytest.fixture(scope="module")
def split_data():
    return wg.generate(wg.split_world(), n_trajectories=20, steps=40, max_speed=0.05, seed=5)


@pytest.fixture
def filled(split_data):
    ds = split_data
    h = hb.TheoryHub()
    ths = [gravity_theory(), free_theory()]
    hb.add_trained(h, ths, ds.X, ds.Y, 1e-6, dataset_hash=ds.digest())
    for s in rz.occams_razor(ths, ds.X, ds.Y, 1e-6):
        h.put_symbolic(s)
    for m in unify(h.symbolic, 2).masters:
        h.put_master(m)
    return h


class TestPersistence:
    def test_round_trip(self, filled, tmp_path):
        path = tmp_path / "hub.json"
        hb.save(filled, path)
        back = hb.load(path)
        assert back.ids() == filled.ids()
        assert [s.id for s in back.symbolic] == [s.id for s in filled.symbolic]
        assert [m.exprs for m in back.masters] == [m.exprs for m in filled.masters]
        hb.save(back, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_text() == path.read_text()

    def test_missing_file_is_empty(self, tmp_path):
        assert len(hb.load(tmp_path / "none.json")) == 0

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "hub.json"
        path.write_text("{\"format_version\": 1, \"trained\": [")
        with pytest.raises(hb.HubFormatError):
            hb.load(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "hub.json"
        path.write_text(json.dumps({"format_version": 2}))
        with pytest.raises(hb.HubFormatError):
            hb.load(path)

    def test_tampered_parameters(self, filled):
        d = filled.to_dict()
        d["trained"][0]["f"]["layers"][0]["bias"][0] += 1.0
        with pytest.raises(hb.HubFormatError):
            hb.TheoryHub.from_dict(d)


class TestAdmission:
    def test_eta_threshold(self, split_data):
        ds = split_data
        h = hb.TheoryHub()
        junk = th.random_theory(3, np.random.default_rng(0))
        n = hb.add_trained(h, [gravity_theory(), junk], ds.X, ds.Y, 1e-6)
        assert n == 1 and h.ids() == [gravity_theory().id]
        assert h.trained[0].dl < hb.DEFAULT_ETA

    def test_idempotent(self, split_data, filled):
        before = filled.ids()
        hb.add_trained(filled, [gravity_theory(), free_theory()], split_data.X, split_data.Y, 1e-6)
        assert filled.ids() == before

    def test_data_reference(self, split_data, filled):
        e = filled.trained[0]
        assert e.dataset_hash == split_data.digest()
        assert np.all(split_data.X[e.indices, 4] <= 0)

    def test_empty_data(self):
        with pytest.raises(ValueError):
            hb.add_trained(hb.TheoryHub(), [free_theory()], np.zeros((0, 6)), np.zeros((0, 2)), 1.0)


class TestPropose:
    def test_ranked_by_best_fit_count(self, split_data):
        ds = wg.generate(wg.gravity_world(g=G), n_trajectories=5, steps=20, seed=0)
        h = hb.TheoryHub()
        h.put_trained(hb.TrainedEntry(free_theory(), 1e-6, 0.0, "", []))
        h.put_trained(hb.TrainedEntry(gravity_theory(), 1e-6, 0.0, "", []))
        out = hb.propose(h, ds.X, ds.Y, 1, 1e-3)
        assert [t.id for t in out] == [gravity_theory().id]

    def test_returns_copies(self, split_data, filled):
        out = hb.propose(filled, split_data.X, split_data.Y, 2, 1e-3)
        out[0].f.params[:] = 0.0
        assert filled.ids() == [t.id for t in (gravity_theory(), free_theory())]

    def test_empty_hub_and_zero(self, split_data, filled):
        assert hb.propose(hb.TheoryHub(), split_data.X, split_data.Y, 2, 1.0) == []
        assert hb.propose(filled, split_data.X, split_data.Y, 0, 1.0) == []

    def test_symbolic_included_on_request(self, split_data, filled):
        h = hb.TheoryHub(symbolic=list(filled.symbolic))
        assert hb.propose(h, split_data.X, split_data.Y, 1, 1.0) == []
        out = hb.propose(h, split_data.X, split_data.Y, 2, 1.0, include_symbolic=True)
        assert {t.origin for t in out} == {"symbolic"}

    def test_symbolic_to_theory_predicts(self, filled):
        s = filled.symbolic[0]
        t = hb.symbolic_to_theory(s)
        X = np.random.default_rng(1).uniform(-1, 1, size=(10, 6))
        np.testing.assert_allclose(th.predict(t, X), s.predict(X), atol=1e-15)


class TestEditing:
    def test_prune_by_id(self, filled):
        gid = gravity_theory().id
        assert filled.prune([gid[:6]]) == 1
        assert gid not in filled.ids()

    def test_prune_by_dl(self, filled):
        for e in filled.trained:
            e.dl = 1.0
        filled.trained[0].dl = 2.5
        assert filled.prune(max_dl=2.0) == 1 and len(filled) == 1

    def test_get(self, filled):
        assert filled.get(filled.trained[0].id[:8]) is filled.trained[0]
        assert filled.get("m0") is filled.masters[0]
        with pytest.raises(KeyError):
            filled.get("zz")

    def test_put_master_replaces_same_structure(self, filled):
        n = len(filled.masters)
        filled.put_master(filled.masters[0])
        assert len(filled.masters) == n
