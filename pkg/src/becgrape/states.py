"""Initial and target states, fidelity and population observables."""

from dataclasses import dataclass

import numpy as np

from .gp import build_dvr_transform
from .lattice2d import Lattice2DParams, flatten

NORM_TOL = 1e-10


def _normalize(c):
    norm = np.linalg.norm(c)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return c / norm


def plane_wave(n, p):
    """Momentum eigenstate |phi_{q+n}> in the basis of ``p``."""
    c = np.zeros(p.dim, dtype=complex)
    c[p.index_of(n)] = 1.0
    return c


def plane_wave_2d(m, n, p):
    c = np.zeros(p.dim, dtype=complex)
    c[flatten(m, n, p)] = 1.0
    return c


def superposition(components, p):
    """Normalized sum of plane waves.

    ``components`` is a sequence of ``(index, amplitude)``; for a 1D lattice
    the index is ``n``, for a 2D lattice it is a pair ``(m, n)``.
    """
    components = list(components)
    if not components:
        raise ValueError("superposition needs at least one component")
    c = np.zeros(p.dim, dtype=complex)
    for index, amp in components:
        if isinstance(p, Lattice2DParams):
            c[flatten(*index, p)] += amp
        else:
            c[p.index_of(index)] += amp
    if np.linalg.norm(c) == 0.0:
        raise ValueError("superposition amplitudes are all zero")
    return _normalize(c)


def squeezed_state(x_c, p_c, xi, p):
    """Gaussian wave packet projected on the truncated q = 0 subspace.

    The packet is exp(-(x - x_c)^2 / (4 xi^2 sigma0^2) + i p_c x) with
    sigma0 = s^(-1/4), the ground-state width of the harmonic approximation
    of one lattice well, so ``xi < 1`` squeezes in position and ``xi > 1``
    stretches. The distance to ``x_c`` is taken on the circle, the packet is
    sampled on the DVR grid and mapped to momentum coefficients.
    """
    if not xi > 0:
        raise ValueError(f"squeezing parameter must be positive, got {xi}")
    if p.q != 0:
        raise ValueError("squeezed states are defined for q = 0 only")
    if p.s <= 0:
        raise ValueError("squeezed states need a positive lattice depth")
    dvr = build_dvr_transform(p)
    sigma = xi * p.s ** -0.25
    dx = np.mod(dvr.x - x_c + np.pi, 2.0 * np.pi) - np.pi
    g = np.exp(-(dx**2) / (4.0 * sigma**2) + 1j * p_c * dvr.x)
    return _normalize(dvr.from_grid(g))


def fidelity(a, b):
    """|<a|b>|^2 for two unit vectors of equal dimension."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    for name, v in (("first", a), ("second", b)):
        if abs(np.linalg.norm(v) - 1.0) > NORM_TOL:
            raise ValueError(f"{name} state is not normalized (norm {np.linalg.norm(v):.12f})")
    return float(min(1.0, abs(np.vdot(a, b)) ** 2))


def population_distribution(psi):
    return np.abs(np.asarray(psi)) ** 2


@dataclass(frozen=True)
class TargetSpec:
    """Declarative description of a state.

    ``kind`` is one of ``plane_wave``, ``superposition``, ``squeezed``,
    ``plane_wave_2d`` and ``superposition_2d``.
    """

    kind: str
    n: int = 0
    m: int = 0
    components: tuple = ()
    x_c: float = 0.0
    p_c: float = 0.0
    xi: float = 1.0

    KINDS = ("plane_wave", "superposition", "squeezed", "plane_wave_2d", "superposition_2d")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown state kind {self.kind!r}; expected one of {self.KINDS}")

    @property
    def is_2d(self):
        return self.kind.endswith("_2d")

    def build(self, p):
        if self.is_2d != isinstance(p, Lattice2DParams):
            raise ValueError(f"state kind {self.kind!r} does not match the lattice dimension")
        if self.kind == "plane_wave":
            return plane_wave(self.n, p)
        if self.kind == "plane_wave_2d":
            return plane_wave_2d(self.m, self.n, p)
        if self.kind == "squeezed":
            return squeezed_state(self.x_c, self.p_c, self.xi, p)
        return superposition(self.components, p)

