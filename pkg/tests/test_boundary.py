import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from theoryforge import boundary as bd
from theoryforge import theory as th
from theoryforge import worldgen as wg

from oracles import G, free_theory, gravity_theory, past_predictor

EPS = 1e-9


def exact_split():
    return [gravity_theory(), free_theory()], [past_predictor(g=G), past_predictor(g=(0.0, 0.0))]


def crossing_time(tr):
    """Interpolated time at which x passes 0, and the index of the first position past it."""
    x = tr.positions[:, 0]
    c = int(np.flatnonzero(np.diff(tr.domains))[0]) + 1
    return c - 1 + (0.0 - x[c - 1]) / (x[c] - x[c - 1]), c


class TestCurves:
    def test_forward_free(self):
        anchor = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
        c = bd.extrapolate(free_theory(), anchor, "forward", 3)
        assert c.t0 == 3
        np.testing.assert_allclose(c.points, [[3, 0], [4, 0], [5, 0]], atol=1e-14)

    def test_backward_free(self):
        anchor = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
        c = bd.extrapolate(past_predictor(g=(0.0, 0.0)), anchor, "backward", 3, t_anchor=10)
        assert c.t0 == 7 and c.t1 == 9
        np.testing.assert_allclose(c.points, [[-3, 0], [-2, 0], [-1, 0]], atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05),
           st.integers(1, 15))
    def test_backward_inverts_forward(self, x, y, vx, vy, h):
        p0 = np.array([x, y])
        v = np.array([vx, vy])
        anchor = np.array([p0, p0 + v, p0 + 2 * v + np.asarray(G)])
        fwd = bd.extrapolate(gravity_theory(), anchor, "forward", h)
        full = np.vstack([anchor, fwd.points])
        back = bd.extrapolate(past_predictor(), full[-3:], "backward", h, t_anchor=h)
        np.testing.assert_allclose(back.points, full[:h], atol=1e-12)

    def test_horizon_zero(self):
        c = bd.extrapolate(free_theory(), np.zeros((3, 2)), "forward", 0)
        assert len(c) == 0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            bd.extrapolate(free_theory(), np.zeros((3, 2)), "sideways", 2)
        with pytest.raises(ValueError):
            bd.extrapolate(free_theory(), np.zeros((3, 2)), "forward", -1)

    def test_interpolation_and_slope(self):
        c = bd.Curve(2.0, [[0, 0], [1, 2], [3, 2]])
        np.testing.assert_allclose(c.at(2.5), [0.5, 1.0])
        np.testing.assert_allclose(c.slope(3.5), [2.0, 0.0])
        np.testing.assert_allclose(c.slope(4.0), [2.0, 0.0])

    def test_join_requires_abutting(self):
        a = bd.Curve(0, np.zeros((2, 2)))
        assert bd.Curve.join(a, bd.Curve(2, np.ones((1, 2)))).t1 == 2
        with pytest.raises(ValueError):
            bd.Curve.join(a, bd.Curve(5, np.ones((1, 2))))


class TestMeeting:
    def test_identical_curves_meet_at_overlap_start(self):
        pts = np.cumsum(np.ones((6, 2)), axis=0)
        a = bd.Curve(0, pts)
        b = bd.Curve(2, pts[2:])
        p = bd.find_meeting(a, b, 1e-6, 1e-6)
        assert p.t_star == 2.0 and p.residual == 0.0 and p.kind == bd.TRANSITION

    def test_crossing_lines(self):
        t = np.arange(11.0)
        a = bd.Curve(0, np.stack([t, np.zeros_like(t)], axis=1))
        b = bd.Curve(0, np.stack([t, 0.4 * (t - 3.37)], axis=1))
        p = bd.find_meeting(a, b, 1e-3, 1e-3)
        assert p.t_star == pytest.approx(3.37, abs=1e-5)
        assert p.kind == bd.BOUNCE and p.slope_gap == pytest.approx(0.4)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a = bd.Curve(0, np.cumsum(rng.normal(size=(8, 2)), axis=0))
        b = bd.Curve(3, np.cumsum(rng.normal(size=(9, 2)), axis=0))
        p, q = bd.find_meeting(a, b, 0.1, 0.1), bd.find_meeting(b, a, 0.1, 0.1)
        assert p.t_star == q.t_star and p.kind == q.kind

    def test_far_apart_is_none(self):
        a = bd.Curve(0, np.zeros((4, 2)))
        b = bd.Curve(0, np.ones((4, 2)))
        assert bd.find_meeting(a, b, 0.1, 0.1).kind == bd.NONE

    def test_no_overlap(self):
        with pytest.raises(bd.NoOverlapError):
            bd.find_meeting(bd.Curve(0, np.zeros((3, 2))), bd.Curve(5, np.zeros((3, 2))), 1.0, 1.0)


class TestDetection:
    @pytest.mark.parametrize("vx,vy", [(0.03, 0.0), (0.021, 0.013), (0.047, -0.02)])
    def test_exact_transition(self, vx, vy):
        tr = wg.simulate(wg.split_world(), (-0.3, 0.2), (-0.3 + vx, 0.2 + vy), 18)
        ths, past = exact_split()
        events = bd.detect_trajectory(ths, past, tr.positions, EPS)
        tg, _ = crossing_time(tr)
        assert len(events) == 1
        ev = events[0]
        assert (ev.before, ev.after, ev.point.kind) == (0, 1, bd.TRANSITION)
        assert abs(ev.point.t_star - tg) <= 1

    @pytest.mark.parametrize("start,v", [((0.8, 0.0), (0.03, 0.01)), ((0.5, -0.8), (0.0, -0.035)),
                                         ((-0.6, 0.3), (-0.04, 0.0))])
    def test_exact_bounce(self, start, v):
        start = np.array(start)
        tr = wg.simulate(wg.split_world(), start, start + v, 30)
        k = int(np.flatnonzero(tr.bounced)[0])
        ths, past = exact_split()
        events = bd.detect_trajectory(ths, past, tr.positions, EPS)
        hits = [e for e in events if abs(e.point.t_star - (k - 1)) <= 1]
        assert len(hits) == 1 and hits[0].point.kind == bd.BOUNCE

    def test_smooth_trajectory_has_no_events(self):
        tr = wg.simulate(wg.split_world(), (0.2, 0.0), (0.21, 0.005), 30)
        ths, past = exact_split()
        assert bd.detect_trajectory(ths, past, tr.positions, EPS) == []

    def test_dataset_times_offset(self):
        tr = wg.simulate(wg.split_world(), (-0.3, 0.2), (-0.27, 0.2), 30)
        ds = wg.make_dataset([tr, tr])
        ths, past = exact_split()
        events = bd.detect_boundaries(ths, past, ds, EPS)
        assert [e.trajectory for e in events] == [0, 1]
        assert events[0].point.t_star == events[1].point.t_star


class TestElimination:
    @pytest.fixture(scope="class")
    @classmethod
    def data(cls):
        return wg.generate(wg.split_world(), n_trajectories=20, steps=40, max_speed=0.05, seed=11)

    def test_mask_matches_radius(self, data):
        ths, past = exact_split()
        events = bd.detect_boundaries(ths, past, data, EPS)
        r = 2.0 * bd.median_step(data)
        mask = bd.boundary_mask(data, events, r)
        expected = np.zeros(len(data), bool)
        for ev in [e for e in events if e.point.kind != bd.NONE]:
            rows = np.flatnonzero(data.trajectory == ev.trajectory)
            pts = np.concatenate([data.X[rows].reshape(-1, 3, 2), data.Y[rows][:, None]], axis=1)
            expected[rows[np.linalg.norm(pts - ev.point.y_star, axis=2).min(axis=1) < r]] = True
        np.testing.assert_array_equal(mask, expected)
        assert 0 < mask.sum() < len(data)

    def test_predictors_bit_identical_after_retrain(self, data):
        ths, past = exact_split()
        ths = [th.Theory(t.f, th.classifier_net(3, rng=np.random.default_rng(i))) for i, t in enumerate(ths)]
        events = bd.detect_boundaries(ths, past, data, EPS)
        cfg = bd.BoundaryConfig(retrain_iters=50)
        new, mask = bd.eliminate_and_retrain(ths, data, events, cfg)
        for a, b in zip(ths, new):
            assert a.f.params.tobytes() == b.f.params.tobytes()
        assert any(not np.array_equal(a.c.params, b.c.params) for a, b in zip(ths, new))

    def test_no_events_leaves_theories(self, data):
        ths, _ = exact_split()
        new, mask = bd.eliminate_and_retrain(ths, data, [])
        assert not mask.any()
        assert [t.id for t in new] == [t.id for t in ths]


class TestPastPredictors:
    def test_targets(self):
        tr = wg.simulate(wg.gravity_world(), (0.0, 0.0), (0.01, 0.0), 8)
        ds = wg.make_dataset([tr])
        rows, Yp = bd.past_targets(ds)
        np.testing.assert_array_equal(ds.step[rows], np.arange(4, 10))
        np.testing.assert_array_equal(Yp, tr.positions[:6])

    def test_recovers_exact_past(self):
        ds = wg.generate(wg.gravity_world(g=G), n_trajectories=20, steps=30, seed=3)
        rows, Yp = bd.past_targets(ds)
        keep = ds.interior[rows]
        cfg = bd.BoundaryConfig(past_iters=500, past_rounds=2)
        p = bd.train_past_predictor(gravity_theory(), ds.X[rows][keep], Yp[keep], cfg)
        assert p.median_error < 1e-10
        ref = past_predictor()
        X = ds.X[rows][keep][:20]
        np.testing.assert_allclose(bd.extrapolate(p, X[0], "backward", 5).points,
                                   bd.extrapolate(ref, X[0], "backward", 5).points, atol=1e-9)

    def test_zero_iterations_warns(self, caplog):
        ds = wg.generate(wg.gravity_world(), n_trajectories=2, steps=10, seed=0)
        rows, Yp = bd.past_targets(ds)
        with caplog.at_level(logging.WARNING, logger="theoryforge.boundary"):
            p = bd.train_past_predictor(gravity_theory(), ds.X[rows], Yp, bd.BoundaryConfig(past_iters=0))
        assert "untrained" in caplog.text
        assert np.isfinite(p.mean_error)

    def test_round_trip(self):
        p = past_predictor()
        back = bd.PastPredictor.from_dict(p.to_dict())
        np.testing.assert_array_equal(back.net.params, p.net.params)

    def test_config_round_trip(self):
        cfg = bd.BoundaryConfig(tol_pos=4.0, seed=3)
        assert bd.BoundaryConfig.from_dict(cfg.to_dict()) == cfg
