"""Gross-Pitaevskii dynamics in the FBR-DVR representation.

The FBR is the truncated plane-wave basis of :mod:`becgrape.lattice1d`; the
DVR is the uniform grid x_j = 2 pi j / N on [0, 2 pi). The unitary ``R``
maps FBR coefficients to (scaled) grid values, so the mean-field term
beta |psi(x)|^2, diagonal on the grid, becomes ``beta R^dagger G R`` in the
FBR with G_j = |psi(x_j)|^2 = (N / 2 pi) |(R psi)_j|^2.
"""

from dataclasses import dataclass

import numpy as np

from .controls import ControlGrid
from .lattice1d import (
    Lattice1DParams,
    build_cos_coupling,
    build_kinetic,
    build_sin_coupling,
    hamiltonian_at,
)
from .numkernel import general_expm, rk4_step


@dataclass(frozen=True)
class GPParams:
    lattice: Lattice1DParams
    beta: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")

    @property
    def dim(self):
        return self.lattice.dim


@dataclass(frozen=True)
class DVRTransform:
    """Change of basis between momentum coefficients and grid values.

    ``R[j, n] = exp(i 2 pi (q + n) j / N) / sqrt(N)``, rows indexed by grid
    point j, columns by momentum index n in storage order.
    """

    R: np.ndarray
    x: np.ndarray
    q: float

    @property
    def N(self):
        return self.R.shape[0]

    def to_grid(self, c):
        """Wave-function values psi(x_j) of FBR coefficients ``c``."""
        return np.sqrt(self.N / (2.0 * np.pi)) * (self.R @ c)

    def from_grid(self, values):
        """FBR coefficients of a function sampled on the grid (inverse of to_grid)."""
        return np.sqrt(2.0 * np.pi / self.N) * (self.R.conj().T @ values)


def build_dvr_transform(p):
    if isinstance(p, GPParams):
        p = p.lattice
    N = p.dim
    j = np.arange(N)
    R = np.exp(1j * 2.0 * np.pi / N * np.outer(j, p.indices + p.q)) / np.sqrt(N)
    return DVRTransform(R=R, x=2.0 * np.pi * j / N, q=p.q)


def grid_density(psi, dvr):
    """G_j = |psi(x_j)|^2."""
    return np.abs(dvr.to_grid(psi)) ** 2


def density_dvr(psi, dvr):
    """Diagonal matrix of |psi|^2 on the DVR grid."""
    return np.diag(grid_density(psi, dvr)).astype(complex)


def grid_overlap_imag(chi, psi, dvr):
    """I_j = Im[chi*(x_j) psi(x_j)]."""
    return np.imag(np.conj(dvr.to_grid(chi)) * dvr.to_grid(psi))


def overlap_imag_dvr(chi, psi, dvr):
    """Diagonal matrix of Im[chi* psi] on the DVR grid."""
    chi = np.asarray(chi)
    psi = np.asarray(psi)
    if chi.shape != psi.shape:
        raise ValueError(f"shape mismatch: chi {chi.shape}, psi {psi.shape}")
    return np.diag(grid_overlap_imag(chi, psi, dvr)).astype(complex)


def to_fbr(diagonal, dvr):
    """R^dagger diag(values) R for grid values ``diagonal``."""
    R = dvr.R
    return (R.conj().T * diagonal) @ R


def gp_hamiltonian(p, psi, phi, dvr=None):
    """H0 + cos(phi) H1 + sin(phi) H2 + beta R^dagger G R."""
    dvr = dvr or build_dvr_transform(p.lattice)
    H = hamiltonian_at(p.lattice, phi)
    if p.beta != 0.0:
        H = H + p.beta * to_fbr(grid_density(psi, dvr), dvr)
    return H


def gp_energy(p, psi, phi, dvr=None):
    """Mean-field energy <H_lin> + (beta / 2) * integral |psi|^4 (grid quadrature)."""
    dvr = dvr or build_dvr_transform(p.lattice)
    lin = np.vdot(psi, hamiltonian_at(p.lattice, phi) @ psi).real
    G = grid_density(psi, dvr)
    return lin + 0.5 * p.beta * (2.0 * np.pi / dvr.N) * np.sum(G**2)


def _check_inputs(p, psi0, control):
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (p.dim,):
        raise ValueError(f"state has shape {psi0.shape}, expected ({p.dim},)")
    if not isinstance(control, ControlGrid) or control.channels != 1:
        raise ValueError("GP propagation needs a single-channel ControlGrid")
    return psi0


def gp_forward(p, psi0, control, dvr=None):
    """Frozen-nonlinearity forward pass keeping each step's eigensystem.

    Returns ``(traj, evals, evecs)``; step k uses exp(-i H_GP(psi_k, phi_k) dt).
    """
    psi0 = _check_inputs(p, psi0, control)
    dvr = dvr or build_dvr_transform(p.lattice)
    n, N, dt = control.n_steps, p.dim, control.dt
    H0 = build_kinetic(p.lattice)
    H1 = build_cos_coupling(p.lattice)
    H2 = build_sin_coupling(p.lattice)
    phis = control.values[0]
    traj = np.empty((n + 1, N), dtype=complex)
    evals = np.empty((n, N))
    evecs = np.empty((n, N, N), dtype=complex)
    traj[0] = psi = psi0
    for k in range(n):
        H = H0 + np.cos(phis[k]) * H1 + np.sin(phis[k]) * H2
        if p.beta != 0.0:
            H = H + p.beta * to_fbr(grid_density(psi, dvr), dvr)
        w, V = np.linalg.eigh(H)
        psi = V @ (np.exp(-1j * w * dt) * (V.conj().T @ psi))
        traj[k + 1] = psi
        evals[k] = w
        evecs[k] = V
    return traj, evals, evecs


SCHEMES = ("start", "average")


def _average_density_step(H_lin, beta, psi, dt, dvr, tol=1e-14, max_iter=50):
    """exp(-i (H_lin + beta R^dagger Gbar R) dt) psi with Gbar the mean density.

    Gbar = (G(psi) + G(psi_next)) / 2 is solved by fixed-point iteration.
    The step conserves the mean-field energy exactly and is time-symmetric.
    """
    G0 = grid_density(psi, dvr)
    G = G0
    nxt = psi
    for _ in range(max_iter):
        w, V = np.linalg.eigh(H_lin + beta * to_fbr(G, dvr))
        new = V @ (np.exp(-1j * w * dt) * (V.conj().T @ psi))
        if np.max(np.abs(new - nxt)) < tol:
            return new
        nxt = new
        G = 0.5 * (G0 + grid_density(nxt, dvr))
    raise RuntimeError(
        f"average-density step did not converge in {max_iter} iterations; reduce dt"
    )


def propagate_gp(p, psi0, control, scheme="start"):
    """Trajectory (n_steps + 1, N) of a frozen-nonlinearity expm scheme.

    ``scheme="start"`` freezes the density at the start of each step (first
    order in dt; this is the scheme GRAPE differentiates). ``"average"``
    freezes it at the mean of the start and end densities, found
    self-consistently: second order, time-reversible and exactly
    energy-conserving for constant control, at a few eigendecompositions per
    step.
    """
    if scheme == "start":
        return gp_forward(p, psi0, control)[0]
    if scheme != "average":
        raise ValueError(f"unknown GP scheme {scheme!r}; expected one of {SCHEMES}")
    psi0 = _check_inputs(p, psi0, control)
    dvr = build_dvr_transform(p.lattice)
    traj = np.empty((control.n_steps + 1, p.dim), dtype=complex)
    traj[0] = psi = psi0
    for k, phi in enumerate(control.values[0]):
        psi = _average_density_step(hamiltonian_at(p.lattice, phi), p.beta, psi, control.dt, dvr)
        traj[k + 1] = psi
    return traj


def cubic_convolution(c):
    """sum_{m,l} c*_m c_l c_{n+m-l} for every n in the truncation window.

    Momenta outside the window contribute zero.
    """
    N = c.size
    n_max = (N - 1) // 2
    # rho_k = sum_l c_l c*_{l-k}, k = -2 n_max .. 2 n_max
    rho = np.convolve(c, np.conj(c[::-1]))
    full = np.convolve(rho, c)
    return full[2 * n_max : 4 * n_max + 1]


def gp_rhs(p, control):
    """Right-hand side dc/dt of the momentum-space GP equation."""
    H0 = build_kinetic(p.lattice)
    H1 = build_cos_coupling(p.lattice)
    H2 = build_sin_coupling(p.lattice)
    phis = control.values[0]
    dt_c = control.dt
    g = p.beta / (2.0 * np.pi)

    def f(t, c):
        k = min(int(np.floor(t / dt_c + 1e-9)), control.n_steps - 1)
        phi = phis[k]
        out = (H0 + np.cos(phi) * H1 + np.sin(phi) * H2) @ c
        if g != 0.0:
            out = out + g * cubic_convolution(c)
        return -1j * out

    return f


def propagate_gp_rk4(p, psi0, control, n_steps=None):
    """RK4 integration of the cubic-convolution GP equation in momentum space.

    ``n_steps`` must be a multiple of ``control.n_steps`` so that no RK4 step
    straddles a control discontinuity. Returns states at the RK4 step
    boundaries.
    """
    psi0 = _check_inputs(p, psi0, control)
    n_steps = control.n_steps if n_steps is None else int(n_steps)
    if n_steps % control.n_steps:
        raise ValueError("n_steps must be a multiple of the control grid size")
    f = gp_rhs(p, control)
    h = control.t_f / n_steps
    traj = np.empty((n_steps + 1, p.dim), dtype=complex)
    traj[0] = y = psi0
    for i in range(n_steps):
        # evaluate the piecewise control at the step's left edge
        y = rk4_step(lambda t, c: f(i * h, c), y, i * h, h)
        traj[i + 1] = y
    return traj


def _solve_previous_state(p, psi_next, phi, dt, dvr, tol=1e-14, max_iter=50):
    """Find psi with exp(-i H_GP(psi, phi) dt) psi = psi_next (fixed point)."""
    psi = psi_next
    for _ in range(max_iter):
        w, V = np.linalg.eigh(gp_hamiltonian(p, psi, phi, dvr))
        new = V @ (np.exp(1j * w * dt) * (V.conj().T @ psi_next))
        if np.max(np.abs(new - psi)) < tol:
            return new
        psi = new
    return psi


def extended_generator(p, psi, chi, phi, dvr):
    """Block generator [[H_GP, 0], [-2 i beta R^dag I R, H_GP]] of (psi, chi)."""
    H = gp_hamiltonian(p, psi, phi, dvr)
    N = p.dim
    M = np.zeros((2 * N, 2 * N), dtype=complex)
    M[:N, :N] = H
    M[N:, N:] = H
    if p.beta != 0.0:
        M[N:, :N] = -2j * p.beta * to_fbr(grid_overlap_imag(chi, psi, dvr), dvr)
    return M


def backward_extended(p, psi_f, chi_f, control):
    """Propagate state and adjoint backward with the extended 2N system.

    On step k the block generator is frozen at the state the forward scheme
    used for that step (found by fixed-point inversion of the forward step)
    and at the adjoint value at t_{k+1}; the stacked vector is mapped with
    exp(+i M dt).

    Returns
    -------
    psi_traj, chi_traj : ndarray, shape (n_steps + 1, N)
        Values at every step boundary, index k meaning t_k.
    """
    psi_f = _check_inputs(p, psi_f, control)
    chi_f = np.asarray(chi_f, dtype=complex)
    if chi_f.shape != psi_f.shape:
        raise ValueError(f"adjoint has shape {chi_f.shape}, expected {psi_f.shape}")
    dvr = build_dvr_transform(p.lattice)
    n, N, dt = control.n_steps, p.dim, control.dt
    phis = control.values[0]
    psis = np.empty((n + 1, N), dtype=complex)
    chis = np.empty((n + 1, N), dtype=complex)
    psis[n], chis[n] = psi_f, chi_f
    for k in range(n - 1, -1, -1):
        if p.beta != 0.0:
            psi_freeze = _solve_previous_state(p, psis[k + 1], phis[k], dt, dvr)
        else:
            psi_freeze = psis[k + 1]
        M = extended_generator(p, psi_freeze, chis[k + 1], phis[k], dvr)
        out = general_expm(1j * M * dt) @ np.concatenate([psis[k + 1], chis[k + 1]])
        psis[k], chis[k] = out[:N], out[N:]
    return psis, chis
