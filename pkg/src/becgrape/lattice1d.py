"""Truncated plane-wave model of a BEC in a 1D optical lattice.

Coefficients are ordered by increasing momentum index n = -n_max..n_max.
In dimensionless units the Hamiltonian in the q-subspace is

    H(phi) = H0 + cos(phi) H1 + sin(phi) H2

with H0 = diag((n+q)^2) and nearest-neighbour couplings -(s/4) e^{+-i phi}.
"""

from dataclasses import dataclass

import numpy as np

from .controls import ControlGrid
from .numkernel import propagate_spectral


@dataclass(frozen=True)
class Lattice1DParams:
    """Lattice depth ``s``, quasi-momentum ``q`` and truncation ``n_max``.

    ``s = 0`` is accepted so that free evolution can be used as a limit case.
    """

    s: float
    q: float = 0.0
    n_max: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s >= 0):
            raise ValueError(f"lattice depth s must be >= 0, got {self.s}")
        if not abs(self.q) <= 0.5:
            raise ValueError(f"quasi-momentum must lie in [-0.5, 0.5], got {self.q}")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a nonnegative integer, got {self.n_max}")
        object.__setattr__(self, "n_max", int(self.n_max))

    @property
    def dim(self):
        return 2 * self.n_max + 1

    @property
    def indices(self):
        """Momentum indices n in storage order."""
        return np.arange(-self.n_max, self.n_max + 1)

    def index_of(self, n):
        if abs(n) > self.n_max:
            raise IndexError(f"momentum index {n} outside |n| <= {self.n_max}")
        return int(n) + self.n_max


def build_kinetic(p):
    return np.diag((p.indices + p.q) ** 2).astype(complex)


def build_cos_coupling(p):
    off = np.full(p.dim - 1, -p.s / 4.0)
    return (np.diag(off, 1) + np.diag(off, -1)).astype(complex)


def build_sin_coupling(p):
    off = np.full(p.dim - 1, p.s / 4.0)
    # row n, column n+1 carries +i s/4; row n, column n-1 carries -i s/4
    return 1j * np.diag(off, 1) - 1j * np.diag(off, -1)


def hamiltonian_at(p, phi):
    return build_kinetic(p) + np.cos(phi) * build_cos_coupling(p) + np.sin(phi) * build_sin_coupling(p)


def control_derivative_at(p, phi):
    """dH/dphi = -sin(phi) H1 + cos(phi) H2."""
    return -np.sin(phi) * build_cos_coupling(p) + np.cos(phi) * build_sin_coupling(p)


def gauge_phases(p, phi):
    """Diagonal of D(phi) = diag(e^{i n phi}), for which H(phi) = D H(0) D^dagger.

    A phase shift of the lattice is a translation, so every H(phi) shares
    the spectrum of H(0). Accepts an array of phases and returns one row per
    phase.
    """
    return np.exp(1j * np.multiply.outer(phi, p.indices))


def linear_spectra(p, phis):
    """Eigendecompositions of H(phi_k) for each phase in ``phis``.

    Returns ``(evals, evecs)`` with shapes (n, N) and (n, N, N); one
    diagonalization of H(0) is shared by all steps.
    """
    phis = np.asarray(phis, dtype=float)
    evals0, evecs0 = np.linalg.eigh(hamiltonian_at(p, 0.0))
    evecs = gauge_phases(p, phis)[:, :, None] * evecs0[None, :, :]
    evals = np.broadcast_to(evals0, (phis.size, p.dim))
    return evals, evecs


def _check_state(p, psi0):
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (p.dim,):
        raise ValueError(f"state has shape {psi0.shape}, expected ({p.dim},)")
    return psi0


def propagate_linear(p, psi0, control, direction=1):
    """Piecewise-constant propagation of the linear 1D dynamics.

    Parameters
    ----------
    p : Lattice1DParams
    psi0 : ndarray, shape (N,)
        Initial coefficients.
    control : ControlGrid
        Single-channel phase control.
    direction : {1, -1}
        ``-1`` applies exp(+i H dt) at each step, i.e. runs time backwards;
        combined with ``control.reversed()`` it undoes a forward run.

    Returns
    -------
    ndarray, shape (n_steps + 1, N)
        States at every step boundary, starting with ``psi0``.
    """
    psi0 = _check_state(p, psi0)
    if not isinstance(control, ControlGrid) or control.channels != 1:
        raise ValueError("linear 1D propagation needs a single-channel ControlGrid")
    evals, evecs = linear_spectra(p, control.values[0])
    return propagate_spectral(evals, evecs, direction * control.dt, psi0)
