"""Dimension-dependent constants and the identities tying them together.

All constants are computed from closed forms involving square roots at
construction time; nothing is stored as a rounded decimal literal, so the
identity checks in the test suite are meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelParams:
    """Constants for the exterior-ball problem in spatial dimension d.

    Attributes
    ----------
    d : int
        Spatial dimension, 2 or 3.
    p : float
        Spatial decay exponent of boundary-proximity probabilities.
    alpha : float
        Small local-time tail exponent, (p - 2) / (4 - d).
    d_f : float
        Dimension of the boundary of the range, d + 2 - p.
    mu : float
        Radial drift index of the driving Bessel process.
    nu : float
        Bessel index, sqrt(mu^2 + 4 (4 - d)); p = mu + nu.
    lambda_d : float
        2 (4 - d), fixed point of the rescaled exit-mass flow.
    """

    d: int
    p: float
    alpha: float
    d_f: float
    mu: float
    nu: float
    lambda_d: float

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "p": self.p,
            "alpha": self.alpha,
            "d_f": self.d_f,
            "mu": self.mu,
            "nu": self.nu,
            "lambda_d": self.lambda_d,
        }


def derive_params(d: int) -> ModelParams:
    """Derive all model constants for dimension d in {2, 3}.

    p is obtained as mu + nu with mu the drift index (0 in d=2, 1/2 in
    d=3) and nu = sqrt(mu^2 + 4(4-d)); the remaining constants follow
    from p.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d!r}")
    mu = 0.0 if d == 2 else 0.5
    nu = math.sqrt(mu * mu + 4.0 * (4 - d))
    p = mu + nu
    alpha = (p - 2.0) / (4 - d)
    d_f = d + 2.0 - p
    lambda_d = 2.0 * (4 - d)
    return ModelParams(d=d, p=p, alpha=alpha, d_f=d_f, mu=mu, nu=nu, lambda_d=lambda_d)
