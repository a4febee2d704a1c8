"""Toolkit for donor spin ensembles coupled to a coplanar waveguide resonator.

Subpackages cover the donor spin system (levels, polarizations), the
input-output transmission model, spatial coupling estimators, the
least-squares fitting pipelines, sweep/config I/O, and the CLI.
"""

__version__ = "0.1.0"
