"""
How well can a cheating pair guess the parity?
==============================================

The verifiers send two BB84 qubits in the same basis; the right answer is the
parity of the two bits. Averaged over the basis, the two parity classes are
the mixed states rho_0 and rho_1 below.
"""

import numpy as np

from lossqpv import bounds, qcore

rho0, rho1 = qcore.parity_mixtures()
print("rho_0 =\n", np.round(rho0.real, 3))

# With unlimited joint measurements the best guess is the Helstrom value
print("Helstrom guess:", bounds.helstrom_guess(rho0, rho1))

# Adversaries restricted to PPT measurements cannot do better, even when they
# are allowed to answer only a fraction eta of the rounds
for eta in (0.01, 0.25, 1.0):
    rep = bounds.verify_ppt_certificates(eta)
    print(f"eta={eta:<5} primal {rep.primal_value:.6f}  dual {rep.dual_value:.6f}  "
          f"conditional guess {rep.primal_value / eta:.6f}")

# ...and a simple LOCC strategy (both measure X, swap bits) already reaches 3/4
strategy = bounds.locc_xbasis_strategy(eta=0.5)
guess, detected = bounds.exact_attack_guess(strategy)
print(f"X-basis attack: guess {guess}, detection rate {detected}")

# A coarse sweep over local measurement directions finds nothing better
best, top = bounds.product_measurement_search(keep=3)
print("best product-measurement guess:", round(best, 6))
