"""Built-in catalog of anharmonic potentials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def _quartic(x):
    return 0.25 * x**4


def _quartic_d(x):
    return x**3


def _quartic_dd(x):
    return 3 * x**2


def _sqrt_bond(x):
    return np.sqrt(1 + x * x) - 1


def _sqrt_bond_d(x):
    return x / np.sqrt(1 + x * x)


def _sqrt_bond_dd(x):
    return (1 + x * x) ** -1.5


ONSITE = {"quartic": (_quartic, _quartic_d, _quartic_dd)}
BOND = {"sqrt": (_sqrt_bond, _sqrt_bond_d, _sqrt_bond_dd)}


@dataclass(frozen=True)
class AnharmonicPotential:
    """On-site ``U`` and bond ``V`` picked by name from the catalog."""

    onsite: str = "quartic"
    bond: str = "sqrt"

    def __post_init__(self):
        if self.onsite not in ONSITE:
            raise ParameterError(f"unknown on-site potential {self.onsite!r}")
        if self.bond not in BOND:
            raise ParameterError(f"unknown bond potential {self.bond!r}")

    def U(self, x):
        return ONSITE[self.onsite][0](x)

    def dU(self, x):
        return ONSITE[self.onsite][1](x)

    def d2U(self, x):
        return ONSITE[self.onsite][2](x)

    def V(self, x):
        return BOND[self.bond][0](x)

    def dV(self, x):
        return BOND[self.bond][1](x)

    def d2V(self, x):
        return BOND[self.bond][2](x)

    def validate(self, lambda_prime: float, grid: np.ndarray | None = None) -> float:
        """Check evenness and convexity bounds on a grid.

        Returns the ellipticity constant ``c`` with ``c <= 1 + lambda_prime V'' <= 1/c``.
        Raises ParameterError when any hypothesis fails.
        """
        x = np.linspace(-20, 20, 4001) if grid is None else np.asarray(grid, dtype=float)
        if not (np.allclose(self.U(x), self.U(-x)) and np.allclose(self.V(x), self.V(-x))):
            raise ParameterError("potentials must be even")
        if np.any(self.d2U(x) < 0):
            raise ParameterError("U must be convex")
        stiff = 1 + lambda_prime * self.d2V(x)
        c = float(min(stiff.min(), 1 / stiff.max()))
        if c <= 0:
            raise ParameterError("1 + lambda_prime V'' must stay bounded away from 0")
        return c
