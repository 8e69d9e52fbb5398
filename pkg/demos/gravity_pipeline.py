"""Full pipeline on a single gravity world, then a second world with a new g.

The first run starts from an empty hub and should end with the symbolic
recurrence ``2*x_{t+1} - x_t + p`` for both coordinates. The second run,
on a world with stronger gravity, is seeded from the hub; unification
then merges both symbolic theories into one master with one parameter.
A second theory usually claims the windows that straddle a floor or
ceiling bounce; its symbolic form is the cheapest fit to those mixed
windows rather than a law, and the boundary pass later masks them out.
Takes a few minutes with the default training schedule.
"""

import sys
import tempfile
import time
from pathlib import Path

from theoryforge import hub as hb
from theoryforge import pipeline as pl
from theoryforge import worldgen as wg

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="forge-demo-"))
work.mkdir(parents=True, exist_ok=True)
hub_path = work / "hub.json"

for name, g in [("first", (0.0, -0.005)), ("second", (0.0, -0.008))]:
    data = work / f"{name}.json"
    wg.save_dataset(wg.generate(wg.gravity_world(g=g), 200, 100), data)
    t0 = time.perf_counter()
    res = pl.run_pipeline(pl.RunConfig(data=str(data), out=str(work / name), hub=str(hub_path)))
    s = res.summary
    print(f"\n{name} world, g = {g}: {time.perf_counter() - t0:.0f} s")
    print(f"  proposed from hub: {s['proposed']}, theories after training: {s['M']}, eps {s['eps']:.2g}")
    for text in s["symbolic"]:
        print(f"  symbolic: {text}")
    print(f"  boundary events: {s['boundary_counts']}")

hub = hb.load(hub_path)
print(f"\nhub now holds {len(hub.trained)} trained, {len(hub.symbolic)} symbolic, {len(hub.masters)} master theories")
for m in hub.masters:
    print(f"  master: {m}")
print(f"artifacts in {work}")
