"""Which particle columns does one graphical update actually read?

The audit replays a single step coordinate by coordinate through a wrapper
that records column access.  With local kernels a grid node reads at most
itself and four neighbours; with a global kernel every node reads all 100.
"""

import numpy as np

from graphsvgd.engine import EngineConfig, blanket_access_audit
from graphsvgd.kernel import KernelSpec
from graphsvgd.model import build_gaussian_mrf, grid_graph

model, _ = build_gaussian_mrf(grid_graph(10, 10), 100, np.random.default_rng(0))
for variant in ("local", "random_subset", "global"):
    report = blanket_access_audit(model, EngineConfig(kernel=KernelSpec(variant), n_particles=20))
    widths = [len(r) for r in report.reads]
    print(f"{variant:<14} columns read per node: min {min(widths)}, max {max(widths)}; "
          f"stays in Markov blanket: {report.blanket_local}")
