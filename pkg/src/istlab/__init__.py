"""istlab: simulation and numerics for time-varying splitting trees and their
jumping chronological contour processes.

The package covers exact tree simulation under a bounded birth rate, the
contour path of a finite tree and the matching piecewise-deterministic Markov
process, a scale-function solver for extinction and hitting probabilities,
drift-based criticality classification, conditioned (h-transformed) trees,
and diffusion-scaling diagnostics against squared Bessel limits.
"""

__version__ = "0.1.0"
