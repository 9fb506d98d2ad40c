"""
Linear-optics Bell measurement with weak coherent pulses
========================================================

Two phase-randomised pulses meet on a beamsplitter; four threshold detectors
(two output ports, two polarisations) decide Psi+, Psi- or no result.
"""

import numpy as np

from lossqpv.optics import ChannelModel, expected_gain_error, fock_outcome_table, sample_coherent

ideal = ChannelModel(misalignment_error=0.0, detector_efficiency=1.0, dark_count_prob=0.0)
table = fock_outcome_table(ideal)
# one photon from each side, same bits: Psi+ or nothing, each half the time
print("(1,1) photons, x=y=0:", table[1, 1, 0, 0, 0])

# The default channel: 64% detectors, 0.1% misalignment, 2.5e-6 dark counts
ch = ChannelModel()
print(f"loss of the measurement itself: {ch.bsm_loss_db:.3f} dB")

for loss in (10, 30, 50):
    q, e = expected_gain_error(0.1, 0.1, ChannelModel.from_overall_loss(loss))
    print(f"{loss:>3} dB  gain {q:.3e}  error rate {e:.3f}")

# Sampled detector clicks for a handful of rounds
rng = np.random.default_rng(0)
b, x, y = rng.integers(0, 2, size=(3, 200_000))
patterns, z = sample_coherent(b, x, y, 0.3, 0.3, ChannelModel.from_overall_loss(10), rng)
print("outcome counts (psi+, psi-, none):", np.bincount(z, minlength=3))
