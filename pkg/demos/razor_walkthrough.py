"""Occam's razor on a slightly perturbed gravity predictor.

A network that is almost the exact gravity recurrence is simplified stage
by stage; the trace shows every attempted transformation and the total
description length before and after it. Runs in a few seconds.
"""

import numpy as np

from theoryforge import razor as rz
from theoryforge import theory as th
from theoryforge import worldgen as wg

T = 3
g = (0.0, -0.005)

world = wg.gravity_world(g=g)
ds = wg.generate(world, n_trajectories=50, steps=60, seed=0)
keep = ds.interior
X, Y = ds.X[keep], ds.Y[keep]

# the exact recurrence plus small weight noise, as a trained net would look
f = th.affine_predictor(th.free_weights(T), g)
f.params += 1e-6 * np.random.default_rng(0).standard_normal(f.n_params)
eps = float(np.median(np.linalg.norm(f(X) - Y, axis=1)))
print(f"{len(X)} interior samples, precision floor eps = {eps:.3g}")
print(f"starting DL: {rz.total_dl(f, X, Y, eps).total:.2f} bits")

st = rz.simplify(f, X, Y, eps, theory_id="demo")
print("\nstage            before      after   accepted")
for t in st.trace:
    print(f"{t.stage:15s} {t.dl_before:9.2f}  {t.dl_after:9.2f}   {t.accepted}")
print(f"\nsymbolic form: {st}")
print(f"final DL: {st.report.total:.2f} bits (model {st.report.model_bits:.2f}, error {st.report.error_bits:.2f})")
print(f"trace violations: {rz.dl_trace_violations(st.trace)}")
