"""Conversion between physical and dimensionless time.

1D: time is measured in hbar / E_L with E_L = hbar^2 k_L^2 / (2 m) and
k_L = 4 pi / lambda (the lattice period is lambda / 2).
2D: time is measured in 2 m / (3 hbar k^2) with k = 2 pi / lambda.
"""

from dataclasses import dataclass

from scipy import constants

RB87_MASS = 86.909180527 * constants.atomic_mass
WAVELENGTH_1064 = 1064e-9

ONE_D_FAMILIES = ("linear1d", "gp1d")
TWO_D_FAMILIES = ("lattice2d",)


@dataclass(frozen=True)
class UnitConversion:
    wavelength: float = WAVELENGTH_1064
    mass: float = RB87_MASS

    def __post_init__(self):
        if not self.wavelength > 0 or not self.mass > 0:
            raise ValueError("wavelength and mass must be positive")

    @property
    def rate_1d(self):
        """E_L / hbar in 1/s."""
        k_lattice = 4.0 * constants.pi / self.wavelength
        return constants.hbar * k_lattice**2 / (2.0 * self.mass)

    @property
    def rate_2d(self):
        """3 hbar k^2 / (2 m) in 1/s."""
        k = 2.0 * constants.pi / self.wavelength
        return 3.0 * constants.hbar * k**2 / (2.0 * self.mass)

    def rate(self, family):
        if family in ONE_D_FAMILIES:
            return self.rate_1d
        if family in TWO_D_FAMILIES:
            return self.rate_2d
        raise ValueError(f"unknown problem family {family!r}")


def to_dimensionless_time(t_physical, family, uc=None):
    """Physical time in seconds to the family's dimensionless time."""
    if not t_physical > 0:
        raise ValueError(f"time must be positive, got {t_physical}")
    return t_physical * (uc or UnitConversion()).rate(family)


def to_physical_time(t_dimensionless, family, uc=None):
    if not t_dimensionless > 0:
        raise ValueError(f"time must be positive, got {t_dimensionless}")
    return t_dimensionless / (uc or UnitConversion()).rate(family)
