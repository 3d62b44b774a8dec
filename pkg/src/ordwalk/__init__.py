"""Ordered random walks: simulation, exact identities, and limit-law checks.

Tools for k independent one-dimensional walks conditioned to stay strictly
ordered: exact rational verification of the determinantal survival identity
on lattice walks, the positive harmonic function V driving the conditioned
process, and the universal asymptotics (survival exponent, endpoint density,
squared-density ensemble, ordered diffusion bridge) at simulation scale.
"""

__version__ = "0.1.0"
