"""Achievable information rates of bipolar and unipolar constellations over
oversampled direct-detection (square-law) channels."""

from .constellation import (
    Constellation,
    SymbolBlock,
    UpsampledSequence,
    make_constellation,
    draw_symbols,
    differential_precode,
    differential_decode,
    upsample,
)
from .density import AuxChannelParams, QuadratureSpec
from .trellis import (RateEstimate, TrellisSpec, brute_force_log_marginal, estimate_air,
                      forward_log_marginal, log_conditional)

__version__ = "0.1.0"
