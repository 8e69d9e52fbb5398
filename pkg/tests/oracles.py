"""Independent reference computations and exact theories used across tests."""

import itertools
import math

import numpy as np

from theoryforge import autodiff as ad
from theoryforge import theory as th
from theoryforge import worldgen as wg
from theoryforge.boundary import PastPredictor

G = np.array([0.0, -0.005])


def reciprocal_mean(losses):
    """Harmonic mean of each row, written out longhand."""
    out = []
    for row in losses:
        out.append(len(row) / sum(1.0 / v for v in row))
    return np.array(out)


def finite_difference(fn, params, h=1e-6):
    g = np.zeros_like(params)
    for k in range(len(params)):
        p = params.copy()
        p[k] += h
        up = fn(p)
        p[k] -= 2 * h
        down = fn(p)
        g[k] = (up - down) / (2 * h)
    return g


def brute_force_kmeans_1d(points, K):
    """Optimal within-cluster sum of squares over all contiguous splits of sorted points."""
    pts = sorted(points)
    best = math.inf
    for cuts in itertools.combinations(range(1, len(pts)), K - 1):
        bounds = (0,) + cuts + (len(pts),)
        cost = 0.0
        for a, b in zip(bounds, bounds[1:]):
            grp = pts[a:b]
            mu = sum(grp) / len(grp)
            cost += sum((p - mu) ** 2 for p in grp)
        best = min(best, cost)
    return best


def gravity_theory(T=3, g=G, coord_sign=-1.0):
    return th.Theory(th.affine_predictor(th.free_weights(T), g), th.coordinate_classifier(T, 2 * T - 2, coord_sign))


def free_theory(T=3, coord_sign=1.0):
    return th.Theory(th.affine_predictor(th.free_weights(T), [0.0, 0.0]),
                     th.coordinate_classifier(T, 2 * T - 2, coord_sign))


def past_predictor(T=3, g=G):
    """Exact backward recurrence ``y_{t-T-1} = 2 y_{t-T} - y_{t-T+1} + g``."""
    coeffs = [2.0, -1.0] + [0.0] * (T - 2)
    return PastPredictor(th.affine_predictor(th.recurrence_weights(T, coeffs), g))


def random_net(rng, sizes=None, leak=0.01):
    sizes = sizes or [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 5)))]
    acts = [ad.LEAKY_RELU if rng.uniform() < 0.5 else ad.LINEAR for _ in range(len(sizes) - 1)]
    return ad.Mlp(sizes, acts, leak=leak, rng=rng)


def straight_crossing(x0=-0.1, y0=0.0, vx=0.03, vy=0.0, steps=20, world=None):
    world = world or wg.split_world()
    return wg.simulate(world, (x0, y0), (x0 + vx, y0 + vy), steps)


def mlp_forward(net, x):
    """Per-sample forward pass with explicit loops over units."""
    out = []
    for row in np.atleast_2d(x):
        h = [float(v) for v in row]
        for w, b, act in net.layers():
            z = [sum(w[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
            if act == ad.LEAKY_RELU:
                z = [v if v > 0 else net.leak * v for v in z]
            h = z
        out.append(h)
    return np.array(out)
