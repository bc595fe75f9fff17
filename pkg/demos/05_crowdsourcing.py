"""Worker bias and noise from synthetic crowd labels.

Eighty items, forty workers; each worker has an unknown offset b_j and noise
variance nu_j, ten items have known answers.  Particles live on
[item values, offsets, log variances] with log variances clipped to [-3, 3].
The label MSE compares the posterior-mean item values with the truth.
"""

import numpy as np

from graphsvgd import default_config, run_experiment

cfg = default_config("crowdsourcing", trials=2, particle_counts=[50], iterations=300,
                     params={"reference_steps": 2000, "reference_chains": 4, "reference_thin": 50})
rows = run_experiment(cfg).rows
for alg in ("vanilla", "graphical", "langevin"):
    vals = [r["label_mse"] for r in rows if r["algorithm"] == alg]
    print(f"{alg:<10} label MSE {np.mean(vals):.3f}")
