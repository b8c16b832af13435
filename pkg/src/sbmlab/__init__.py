"""sbmlab: numerical laboratory for super-Brownian motion geometry.

Solvers for the radial semilinear boundary-value problems behind exit-measure
Laplace functionals, the exit-mass continuous-state branching process and its
mechanism, Monte Carlo checks of the Bessel/killed-Brownian identities, a
branching-particle simulator, and box-counting dimension estimation.
"""

from .params import ModelParams, derive_params

__version__ = "0.1.0"

__all__ = ["ModelParams", "derive_params", "__version__"]
