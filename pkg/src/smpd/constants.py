"""Physical constants (CODATA 2018, exact SI values where defined)."""

import math

HBAR = 1.054571817e-34  # J s
H_PLANCK = 6.62607015e-34  # J s
K_B = 1.380649e-23  # J / K

TWO_PI = 2.0 * math.pi
