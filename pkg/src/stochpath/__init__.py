"""stochpath: classical dynamics, noisy ensembles, Fokker-Planck solving,
Euclidean path sampling, and reflection-positivity certification."""

__version__ = "0.1.0"

from . import classical, errors, fokker_planck, langevin, osfield, pathmc  # noqa: E402,F401
