"""Dense complex linear-algebra kernels.

Propagators for Hermitian generators go through an eigendecomposition,
general (non-normal) exponentials through scaling-and-squaring, and a
fixed-step RK4 integrator is kept around as an independent oracle.
"""

import numpy as np
from scipy import linalg

HERMITIAN_TOL = 1e-12


def hermiticity_defect(H):
    """Return ``(max |H - H^dagger|, (row, col))`` of the worst entry."""
    H = np.asarray(H)
    diff = np.abs(H - H.conj().T)
    idx = np.unravel_index(np.argmax(diff), diff.shape)
    return float(diff[idx]), (int(idx[0]), int(idx[1]))


def check_hermitian(H, tol=HERMITIAN_TOL):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    defect, (i, j) = hermiticity_defect(H)
    if defect > tol:
        raise ValueError(
            f"matrix is not Hermitian: |H[{i},{j}] - conj(H[{j},{i}])| = {defect:.3e} "
            f"exceeds {tol:.0e}"
        )


def phase_factors(evals, dt):
    """exp(-i * evals * dt)."""
    return np.exp(-1j * np.asarray(evals) * dt)


def propagator_from_eig(evals, evecs, dt):
    """Assemble exp(-i H dt) from an eigendecomposition of H."""
    return (evecs * phase_factors(evals, dt)) @ evecs.conj().T


def hermitian_propagator(H, dt):
    """Return U = exp(-i H dt) for Hermitian ``H``.

    Parameters
    ----------
    H : ndarray, shape (n, n)
        Hermitian generator. Checked entrywise to ``HERMITIAN_TOL``.
    dt : float
        Time step (may be negative for backward propagation).

    Returns
    -------
    ndarray, shape (n, n)
        Unitary propagator.
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H)
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    evals, evecs = np.linalg.eigh(H)
    return propagator_from_eig(evals, evecs, dt)


def general_expm(A):
    """exp(A) for an arbitrary square complex matrix (scaling and squaring)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return linalg.expm(A)


def expm_frechet_kernel(evals, dt):
    """Divided differences of f(x) = exp(-i x dt) on the spectrum.

    Entry (i, j) is (f(l_i) - f(l_j)) / (l_i - l_j), which tends to f'(l_i)
    for coinciding eigenvalues. In the eigenbasis of H the Frechet derivative
    of exp(-i H dt) in direction E is this kernel times V^dagger E V,
    entrywise.

    Written as -i dt exp(-i m dt) sinc(d dt / 2) with m the mean and d the
    gap of each pair, which has no cancellation at d -> 0.
    """
    evals = np.asarray(evals, dtype=float)
    half = np.exp(-0.5j * evals * dt)
    gap = evals[..., :, None] - evals[..., None, :]
    # exp(-i m dt) factorizes into half-step phases of the two eigenvalues
    return (-1j * dt) * half[..., :, None] * half[..., None, :] * np.sinc(gap * (dt / (2.0 * np.pi)))


def rk4_step(f, y, t, dt):
    """One classical fourth-order Runge-Kutta step of dy/dt = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate_spectral(evals, evecs, dt, psi0):
    """Chain psi_{k+1} = V_k exp(-i w_k dt) V_k^dagger psi_k over all steps.

    ``evals`` (n, N) and ``evecs`` (n, N, N) hold one eigendecomposition per
    step. Returns the (n + 1, N) trajectory.
    """
    n = len(evals)
    traj = np.empty((n + 1, len(psi0)), dtype=complex)
    traj[0] = psi = np.asarray(psi0, dtype=complex)
    phases = phase_factors(evals, dt)
    for k in range(n):
        V = evecs[k]
        psi = V @ (phases[k] * (V.conj().T @ psi))
        traj[k + 1] = psi
    return traj


def propagate_rk4(hamiltonians, dt, psi0, substeps=4):
    """RK4 oracle for piecewise-constant linear dynamics i dpsi/dt = H_k psi.

    ``hamiltonians`` holds one (N, N) matrix per step; each step is split
    into ``substeps`` RK4 steps. Returns the (n + 1, N) trajectory at the
    step boundaries.
    """
    h = dt / substeps
    traj = np.empty((len(hamiltonians) + 1, len(psi0)), dtype=complex)
    traj[0] = psi = np.asarray(psi0, dtype=complex)
    for k, H in enumerate(hamiltonians):
        def f(t, y, H=H):
            return -1j * (H @ y)

        for j in range(substeps):
            psi = rk4_step(f, psi, j * h, h)
        traj[k + 1] = psi
    return traj
