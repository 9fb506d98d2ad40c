"""
Honest prover versus a two-agent attack
=======================================

Run the qubit protocol with an honest prover at the claimed position, then
with two adversaries flanking it. Loss does not help the attackers: they can
drop any fraction of rounds, but the answers they keep are wrong 1/4 of the time.
"""

import numpy as np

from lossqpv import HonestProver, ProtocolParams, run_qubit_protocol
from lossqpv.bounds import SoundnessInput, locc_xbasis_strategy, soundness_qubit
from lossqpv.experiments import run_qubit_mc
from lossqpv.geometry import Geometry

geo = Geometry()  # V1 at -1, V2 at +1, claimed position 0
params = ProtocolParams(m=10_000, n_th=4_000, delta_th=0.01)
rng = np.random.default_rng(1)

verdict, batch = run_qubit_protocol(params, HonestProver(), geo, rng)
print("honest:", verdict.value, verdict.reason.value, verdict.statistics)

verdict, batch = run_qubit_protocol(params, locc_xbasis_strategy(eta=0.9), geo, rng)
print("attack:", verdict.value, verdict.reason.value, verdict.statistics)

# At a small threshold the attack sometimes gets lucky; compare with the bound
small = ProtocolParams(m=50, n_th=50, delta_th=0.15)
rep = run_qubit_mc(small, locc_xbasis_strategy(1.0), trials=2000, seed=2)
print("attack acceptance at n_th=50:", rep.aggregates["acceptance"].value,
      " bound:", soundness_qubit(SoundnessInput(50, 0.15)))
