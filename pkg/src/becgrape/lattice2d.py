"""Triangular 2D optical lattice at zero quasi-momentum.

Plane waves exp(i (m b1 + n b2) . r) are indexed by (m, n) with
-M <= m <= M, -N <= n <= N, flattened row-major (m outer, n inner). The
three phase differences phi12, phi23, phi31 enter through

    H = H0 + sum_l (e^{i phi_l} H_l^+ + e^{-i phi_l} H_l^-)

where H0 = diag(m^2 + n^2 - mn) and each H_l^+- shifts (m, n) by one
reciprocal-lattice vector with amplitude -s/4. Couplings leaving the
truncation window are dropped.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .controls import ControlGrid
from .numkernel import propagate_spectral

EDGE_POPULATION_TOL = 1e-6

# (dm, dn) such that H_l^+ = -(s/4) sum |m, n><m + dm, n + dn|
SHIFTS = {
    "12": (0, 1),
    "23": (-1, -1),
    "31": (1, 0),
}
CHANNEL_LABELS = tuple(SHIFTS)


@dataclass(frozen=True)
class Lattice2DParams:
    s: float
    M: int = 5
    N: int = 5

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s >= 0):
            raise ValueError(f"lattice depth s must be >= 0, got {self.s}")
        for name in ("M", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v}")
            object.__setattr__(self, name, int(v))

    @property
    def dim(self):
        return (2 * self.M + 1) * (2 * self.N + 1)

    def pairs(self):
        """All (m, n) in flat-index order."""
        return [(m, n) for m in range(-self.M, self.M + 1) for n in range(-self.N, self.N + 1)]


def in_range(m, n, p):
    return -p.M <= m <= p.M and -p.N <= n <= p.N


def flatten(m, n, p):
    if not in_range(m, n, p):
        raise IndexError(f"(m, n) = ({m}, {n}) outside |m| <= {p.M}, |n| <= {p.N}")
    return (int(m) + p.M) * (2 * p.N + 1) + int(n) + p.N


def unflatten(k, p):
    if not 0 <= k < p.dim:
        raise IndexError(f"flat index {k} outside 0..{p.dim - 1}")
    m, n = divmod(int(k), 2 * p.N + 1)
    return m - p.M, n - p.N


def build_kinetic2d(p):
    mn = np.array(p.pairs())
    m, n = mn[:, 0], mn[:, 1]
    return np.diag(m**2 + n**2 - m * n).astype(complex)


def _shift_matrix(p, dm, dn):
    """-(s/4) sum over in-window (m, n) of |m, n><m + dm, n + dn|."""
    H = np.zeros((p.dim, p.dim), dtype=complex)
    for m, n in p.pairs():
        if in_range(m + dm, n + dn, p):
            H[flatten(m, n, p), flatten(m + dm, n + dn, p)] = -p.s / 4.0
    return H


def build_shift_operators(p):
    """Dict ``{"12+": ..., "12-": ..., "23+": ..., ...}`` of the six couplings."""
    ops = {}
    for label, (dm, dn) in SHIFTS.items():
        ops[label + "+"] = _shift_matrix(p, dm, dn)
        ops[label + "-"] = _shift_matrix(p, -dm, -dn)
    return ops


def _channel_index(channel):
    label = str(channel).replace("phi", "").replace("_", "").replace(",", "")
    if label not in SHIFTS:
        raise ValueError(f"invalid channel {channel!r}; expected one of 12, 23, 31")
    return CHANNEL_LABELS.index(label)


def inversion_real_basis(p):
    """Unitary W whose columns are invariant under inversion times conjugation.

    H(phi) commutes with the antiunitary map c_{m,n} -> conj(c_{-m,-n}), so
    W^dagger H(phi) W is real symmetric for every phase triple. Columns are
    (e_k + e_{-k}) / sqrt(2) and i (e_k - e_{-k}) / sqrt(2) for each pair
    k != -k, and e_k for the centre.
    """
    W = np.zeros((p.dim, p.dim), dtype=complex)
    col = 0
    r = 1.0 / np.sqrt(2.0)
    for k, (m, n) in enumerate(p.pairs()):
        j = flatten(-m, -n, p)
        if j == k:
            W[k, col] = 1.0
            col += 1
        elif k < j:
            W[k, col] = W[j, col] = r
            W[k, col + 1] = 1j * r
            W[j, col + 1] = -1j * r
            col += 2
    return W


class Model2D:
    """Operator cache for one parameter set.

    Besides the plane-wave operators it keeps their images in the real basis
    of :func:`inversion_real_basis`, where H = H0 + sum_l (cos phi_l A_l +
    sin phi_l B_l) with real symmetric A_l = H_l^+ + H_l^- and
    B_l = i (H_l^+ - H_l^-).
    """

    def __init__(self, p):
        self.p = p
        self.H0 = build_kinetic2d(p)
        self.ops = build_shift_operators(p)
        self.plus = [self.ops[lab + "+"] for lab in CHANNEL_LABELS]
        self.minus = [self.ops[lab + "-"] for lab in CHANNEL_LABELS]
        self.W = inversion_real_basis(p)
        Wh = self.W.conj().T
        self.real_H0 = (Wh @ self.H0 @ self.W).real
        self.real_cos = [(Wh @ (hp + hm) @ self.W).real for hp, hm in zip(self.plus, self.minus)]
        self.real_sin = [(Wh @ (1j * (hp - hm)) @ self.W).real for hp, hm in zip(self.plus, self.minus)]

    def to_real_basis(self, v):
        return self.W.conj().T @ v

    def from_real_basis(self, v):
        """Inverse of :meth:`to_real_basis`; also maps trajectories row by row."""
        return np.asarray(v) @ self.W.T

    def hamiltonian(self, phases):
        H = self.H0.copy()
        for phi, Hp, Hm in zip(phases, self.plus, self.minus):
            H += np.exp(1j * phi) * Hp + np.exp(-1j * phi) * Hm
        return H

    def derivative(self, phases, channel, printed=False):
        i = _channel_index(channel)
        if printed:
            return 1j * (self.plus[i] - self.minus[i])
        phi = phases[i]
        return 1j * np.exp(1j * phi) * self.plus[i] - 1j * np.exp(-1j * phi) * self.minus[i]

    def real_spectra(self, control):
        """Batched eigendecompositions in the real basis: (evals, real evecs)."""
        Hs = np.repeat(self.real_H0[None], control.n_steps, axis=0)
        for c, (A, B) in enumerate(zip(self.real_cos, self.real_sin)):
            phi = control.values[c][:, None, None]
            Hs += np.cos(phi) * A + np.sin(phi) * B
        return np.linalg.eigh(Hs)

    def spectra(self, control):
        """Eigendecompositions of H at every step in the plane-wave basis."""
        phases = control.values.T
        Hs = np.repeat(self.H0[None], len(phases), axis=0)
        for c, (Hp, Hm) in enumerate(zip(self.plus, self.minus)):
            e = np.exp(1j * phases[:, c])[:, None, None]
            Hs += e * Hp + np.conj(e) * Hm
        return np.linalg.eigh(Hs)


def hamiltonian2d_at(p, phases):
    """Hamiltonian for the phase triple (phi12, phi23, phi31)."""
    return Model2D(p).hamiltonian(phases)


def control_derivative_2d(p, phases, channel, printed=False):
    """dH/dphi_l for channel l in {12, 23, 31}.

    The exact derivative is i e^{i phi_l} H_l^+ - i e^{-i phi_l} H_l^-.
    With ``printed=True`` the phase factors are dropped, giving
    i (H_l^+ - H_l^-), which coincides with the exact form at phi_l = 0.
    """
    return Model2D(p).derivative(phases, channel, printed)


def edge_population(psi, p):
    """Total population on the boundary of the truncation window."""
    pops = np.abs(np.asarray(psi)) ** 2
    edge = [k for k, (m, n) in enumerate(p.pairs()) if abs(m) == p.M or abs(n) == p.N]
    return float(pops[edge].sum())


def propagate_2d(p, psi0, control, direction=1, model=None):
    """Stepwise exp(-i H(phi12, phi23, phi31) dt) propagation.

    Returns the (n_steps + 1, d) trajectory. Warns when the population at
    the truncation edge exceeds ``EDGE_POPULATION_TOL``.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (p.dim,):
        raise ValueError(f"state has shape {psi0.shape}, expected ({p.dim},)")
    if not isinstance(control, ControlGrid) or control.channels != 3:
        raise ValueError("2D propagation needs a ControlGrid with 3 channels")
    model = model or Model2D(p)
    evals, evecs = model.real_spectra(control)
    traj = propagate_spectral(evals, evecs, direction * control.dt, model.to_real_basis(psi0))
    traj = model.from_real_basis(traj)
    check_edges(traj, p)
    return traj


def check_edges(traj, p):
    worst = max(edge_population(psi, p) for psi in traj[:: max(1, len(traj) // 50)])
    worst = max(worst, edge_population(traj[-1], p))
    if worst > EDGE_POPULATION_TOL:
        warnings.warn(
            f"population {worst:.2e} reached the truncation edge (M={p.M}, N={p.N}); "
            "consider a larger window",
            RuntimeWarning,
            stacklevel=3,
        )
    return worst

