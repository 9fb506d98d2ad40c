"""
How much loss can the decoy protocol take?
==========================================

Feed expected counts (no sampling noise) into the estimators and watch the
bounded error ratio r_ub / s_lb climb with loss. The protocol fails once it
passes 1/4; more pulses push that point out.
"""

from lossqpv.decoy import IntensityConfig
from lossqpv.experiments import default_loss_grid, figure3_curve, find_cutoff
from lossqpv.optics import ChannelModel

channel = ChannelModel()
cfg = IntensityConfig(mu1=0.2, mu2=0.12, mu3=0.0)
grid = default_loss_grid(channel, stop=60, step=1.0)

for N in (1e10, 1e11, 1e12, 1e13):
    curve = figure3_curve(N, channel, cfg, nu=10, loss_grid_db=grid)
    cut = find_cutoff(curve)
    row = " ".join(f"{p.ratio:.2f}" if p.defined else "  - " for p in curve[::8])
    print(f"N={N:.0e} cutoff {cut:6.2f} dB | ratio every 8 dB: {row}")
