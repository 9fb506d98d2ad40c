"""
Bounding the single-photon rounds with decoy intensities
========================================================

Nobody sees photon numbers, only which intensity pair (u, v) was sent and
whether the measurement succeeded. Three intensities are enough to bound the
number of conclusive one-photon-each rounds from below, and their errors
from above.
"""

import numpy as np

from lossqpv.decoy import IntensityConfig, estimate
from lossqpv.experiments import decoy_cell_probabilities, sample_decoy_aggregate
from lossqpv.optics import ChannelModel

cfg = IntensityConfig(mu1=0.3, mu2=0.1, mu3=0.001)
channel = ChannelModel.from_overall_loss(15.0)
cells = decoy_cell_probabilities(channel, cfg, cfg.photon_cutoff())
rng = np.random.default_rng(7)

for m in (10**8, 10**10, 10**12):
    counts, truth = sample_decoy_aggregate(m, cells, rng)
    est = estimate(counts, cfg, nu=10)
    print(f"m={m:.0e}: s11={truth.s11:>12}  s_lb={est.s_lb:>12}   "
          f"r11={truth.r11:>10}  r_ub={est.r_ub:>10}  ratio={est.ratio:.3f}")

print("observed conclusive counts at the last m:\n", counts.n_obs)
