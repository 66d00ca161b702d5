"""Semi-implicit time stepping for parabolic SPDEs with additive Q-Wiener noise.

The stochastic convolution is advanced exactly, mode by mode, and added
to a finite element or finite volume discretization of the deterministic
part.
"""

__version__ = "0.1.0"
