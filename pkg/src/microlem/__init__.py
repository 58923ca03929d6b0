"""Day-ahead dispatch of unbalanced three-phase microgrids trading in a
local energy market, with harmonic-distortion and voltage power-quality
constraints enforced as second-order cone programs."""

__version__ = "0.1.0"
