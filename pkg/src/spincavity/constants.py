"""Physical constants shared across the package.

CODATA 2018 values, fixed here instead of imported from a library so
that frozen regression numbers cannot drift with dependency upgrades.
All quantities are SI.
"""

import math

PLANCK = 6.62607015e-34  # J s (exact)
HBAR = 1.054571817e-34  # J s
BOLTZMANN = 1.380649e-23  # J / K (exact)
MU_0 = 1.25663706212e-6  # N / A^2
BOHR_MAGNETON = 9.2740100783e-24  # J / T
NUCLEAR_MAGNETON = 5.0507837461e-27  # J / T

TWO_PI = 2.0 * math.pi
