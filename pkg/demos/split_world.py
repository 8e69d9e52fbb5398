"""Unsupervised divide and conquer on a world with two halves.

The left half has gravity, the right half is force-free. Four newborn
theories compete under the harmonic loss; the survivors split the arena
between them without ever seeing the domain labels. Boundary detection
then locates crossings (transitions) and wall hits (bounces) on a
held-out set. Takes several minutes.
"""

from collections import Counter

import numpy as np

from theoryforge import boundary as bd
from theoryforge import ddac
from theoryforge import worldgen as wg


def trajectories(seed, n):
    world = wg.split_world(seed=seed)
    return world, wg.random_trajectories(world, n, 100, 0.05, np.random.default_rng(seed))


world, trajs = trajectories(1, 200)
ds = wg.make_dataset(trajs, 3, world)
res = ddac.ddac(ds.X, ds.Y, [], ddac.TrainConfig(M=4, M0=0), labels=ds.labels, interior=ds.interior)
for r in res.records:
    print(f"{r['stage']:8s} round {r['iter']}: loss/sample {r['loss']:.3g}  eps {r['eps']:.2g}  "
          f"M {r['M']}  routing {r['routing_accuracy']:.1%}")

_, held_trajs = trajectories(2, 50)
held = wg.make_dataset(held_trajs, 3)
ths = res.theories.theories
acc = ddac.routing_accuracy(ths, held.X[held.interior], held.labels[held.interior])
print(f"\n{len(ths)} theories survive; held-out interior routing accuracy {acc:.1%}")

_, report = bd.boundary_pass(ths, ds)
events = bd.detect_boundaries(ths, report.past, held, report.eps)
print(f"boundary eps {report.eps:.2g}; held-out events: {dict(Counter(e.point.kind for e in events))}")
for ev in events[:8]:
    p = ev.point
    print(f"  trajectory {ev.trajectory:2d}  t* = {p.t_star:6.2f}  {p.kind:10s}  at ({p.y_star[0]:+.3f}, {p.y_star[1]:+.3f})")
