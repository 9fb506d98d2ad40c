"""Loss-tolerant quantum position verification: protocol simulation, decoy-state
estimation, guessing-probability certificates and loss-tolerance curves."""

from .bounds import (
    INCONCLUSIVE,
    AttackStrategy,
    SoundnessInput,
    helstrom_guess,
    locc_xbasis_strategy,
    soundness_decoy,
    soundness_qubit,
    verify_ppt_certificates,
)
from .decoy import CountTable, DecoyEstimate, IntensityConfig, PhotonTruth, estimate
from .geometry import Geometry
from .optics import ChannelModel
from .protocol import HonestProver, ProtocolParams, Verdict, run_qubit_protocol

__version__ = "0.1.0"
