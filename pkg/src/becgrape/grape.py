"""GRAPE for the three problem families: linear 1D, Gross-Pitaevskii 1D and 2D.

Gradients are reported on the Pontryagin scale

    g_k = Im <chi_k | dH/dphi_k | psi_k>,   chi(t_f) = 2 chi0 <target|psi(t_f)> target,

so that dF/dphi_k = (dt / chi0) g_k for a piecewise-constant control.

Two gradient routes are available:

``"exact"`` (default)
    Backpropagation through the discrete propagation scheme. The Frechet
    derivative of each step exponential is evaluated in the step's
    eigenbasis, and for the GP family the adjoint picks up the mean-field
    back-coupling 2 beta Im[chi* psi] psi from the frozen density, so the
    result equals the derivative of the computed fidelity to rounding.
``"pmp"``
    The continuous-time Pontryagin formula evaluated at the left end of each
    step, with the adjoint propagated backward by the same linear propagator
    (linear families) or by the extended 2N system (GP). Agrees with
    ``"exact"`` up to O(dt).
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .controls import ControlGrid
from .gp import (
    GPParams,
    backward_extended,
    build_dvr_transform,
    gp_forward,
)
from .lattice1d import (
    Lattice1DParams,
    build_cos_coupling,
    build_sin_coupling,
    linear_spectra,
)
from .lattice2d import Lattice2DParams, Model2D, check_edges
from .numkernel import expm_frechet_kernel, phase_factors, propagate_spectral

log = logging.getLogger(__name__)

STALL_GRAD_NORM = 1e-10
FAMILIES = ("linear1d", "gp1d", "lattice2d")


@dataclass(frozen=True)
class OptimizerSettings:
    epsilon: float = 1.0
    max_iterations: int = 2000
    fidelity_goal: float = 0.999
    chi0: float = 0.5
    line_search: bool = True
    backtrack: float = 0.5
    max_halvings: int = 30
    # step enlargement after an accepted line-search step
    growth: float = 1.5
    init_strategy: str = "uniform_random"
    init_value: float = 0.0
    init_amplitude: float = 0.1
    seed: int = 0
    gradient: str = "exact"
    max_restarts: int = 5
    restart_amplitude: float = 0.05
    # wall-clock budget in seconds, None for no limit
    max_seconds: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.fidelity_goal <= 1:
            raise ValueError("fidelity_goal must lie in (0, 1]")
        if self.init_strategy not in ("zero", "constant", "uniform_random"):
            raise ValueError(f"unknown init strategy {self.init_strategy!r}")
        if self.gradient not in ("exact", "pmp"):
            raise ValueError(f"unknown gradient method {self.gradient!r}")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.growth < 1:
            raise ValueError("growth factor must be >= 1")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("max_seconds must be positive")


@dataclass
class OptimizationResult:
    control: ControlGrid
    fidelity_trace: np.ndarray
    grad_norm_trace: np.ndarray
    final_state: np.ndarray
    termination_reason: str
    seed: int = 0
    restarts: int = 0
    epsilon_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def fidelity(self):
        return float(self.fidelity_trace[-1])

    @property
    def iterations(self):
        return len(self.fidelity_trace) - 1


@dataclass
class Forward:
    """Forward trajectory plus the per-step eigensystems that produced it."""

    traj: np.ndarray
    evals: np.ndarray
    evecs: np.ndarray

    @property
    def final(self):
        return self.traj[-1]


def adjoint_final(psi_f, target, chi0=0.5):
    """chi(t_f) = 2 chi0 <target|psi_f> target."""
    psi_f = np.asarray(psi_f)
    target = np.asarray(target)
    if psi_f.shape != target.shape:
        raise ValueError(f"dimension mismatch: {psi_f.shape} vs {target.shape}")
    return 2.0 * chi0 * np.vdot(target, psi_f) * target


def _exact_backprop(fwd, chi_f, dt, basis, coefs, back_coupling=None):
    """Backpropagate the adjoint through the stored steps.

    The control derivative at step k for channel c is
    ``sum_j coefs[c, j, k] * basis[j]``. ``back_coupling(k, K)`` returns the
    extra adjoint term of a state-dependent generator, given the step's
    sensitivity matrix K.
    """
    n = len(fwd.evals)
    V = fwd.evecs
    Vh = np.conj(np.swapaxes(V, -1, -2))
    evals = fwd.evals
    if np.all(evals == evals[:1]):
        # gauge-related steps share one spectrum
        evals = np.broadcast_to(evals[0], evals.shape)
        kernels = np.broadcast_to(expm_frechet_kernel(evals[0], dt), V.shape)
    else:
        kernels = expm_frechet_kernel(evals, dt)
    backward = np.conj(phase_factors(evals, dt))
    a = np.einsum("kij,kj->ki", Vh, fwd.traj[:-1])
    b = np.empty_like(a)
    chi = np.asarray(chi_f, dtype=complex)
    K = np.empty_like(V)
    for k in range(n - 1, -1, -1):
        b[k] = Vh[k] @ chi
        chi = V[k] @ (backward[k] * b[k])
        if back_coupling is not None:
            Y = np.conj(b[k])[:, None] * kernels[k] * a[k][None, :]
            # Re <chi, dU psi> = Re tr(K dH) for a perturbation dH of the generator
            K[k] = V[k] @ Y.T @ Vh[k]
            chi = chi + back_coupling(k, K[k])
    if back_coupling is None:
        Y = np.conj(b)[:, :, None] * kernels * a[:, None, :]
        K = V @ np.swapaxes(Y, -1, -2) @ Vh
    traces = np.stack([np.einsum("kab,ba->k", K, B) for B in basis])
    return np.einsum("cjk,jk->ck", coefs, traces).real / dt


class Problem:
    """A state-to-state transfer: dynamics, initial state and target.

    Subclasses supply ``forward`` and the control derivative in the form
    ``dH/dphi_c(k) = sum_j coefficients(control)[c, j, k] * basis[j]``.
    """

    family = None
    channels = 1
    basis = ()

    def __init__(self, params, psi0, target):
        self.params = params
        self.psi0 = np.asarray(psi0, dtype=complex)
        self.target = np.asarray(target, dtype=complex)
        for name, v in (("initial state", self.psi0), ("target", self.target)):
            if v.shape != (params.dim,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({params.dim},)")

    @property
    def dim(self):
        return self.params.dim

    def check_control(self, control):
        if control.channels != self.channels:
            raise ValueError(
                f"{self.family} needs {self.channels} control channel(s), got {control.channels}"
            )

    def forward(self, control):
        raise NotImplementedError

    def coefficients(self, control):
        raise NotImplementedError

    def derivatives(self, control, k):
        """dH/dphi_c at step k for every channel c."""
        coefs = self.coefficients(control)[:, :, k]
        return [sum(w * B for w, B in zip(row, self.basis)) for row in coefs]

    def fidelity(self, control=None, fwd=None):
        fwd = fwd if fwd is not None else self.forward(control)
        return float(min(1.0, abs(np.vdot(self.target, fwd.final)) ** 2))

    def working_target(self):
        """Target in the basis ``forward`` works in."""
        return self.target

    def to_original(self, states):
        """Map working-basis states (or trajectories) to the plane-wave basis."""
        return states

    def gradient(self, control, chi0=0.5, method="exact", fwd=None):
        """Per-channel, per-step gradient array of shape (channels, n_steps)."""
        self.check_control(control)
        fwd = fwd if fwd is not None else self.forward(control)
        chi_f = adjoint_final(fwd.final, self.working_target(), chi0)
        if method == "exact":
            return self._exact_gradient(control, fwd, chi_f)
        if method == "pmp":
            return self._pmp_gradient(control, fwd, chi_f)
        raise ValueError(f"unknown gradient method {method!r}")

    def _exact_gradient(self, control, fwd, chi_f):
        return _exact_backprop(fwd, chi_f, control.dt, self.basis, self.coefficients(control))

    def _pmp_gradient(self, control, fwd, chi_f):
        # linear dynamics: the adjoint obeys the same equation as the state
        n = control.n_steps
        chis = np.empty_like(fwd.traj)
        chis[n] = chi_f
        for k in range(n - 1, -1, -1):
            V = fwd.evecs[k]
            chis[k] = V @ (np.conj(phase_factors(fwd.evals[k], control.dt)) * (V.conj().T @ chis[k + 1]))
        return self._pmp_from_pair(control, fwd.traj, chis)

    def _pmp_from_pair(self, control, psis, chis):
        n = control.n_steps
        elements = np.stack(
            [np.einsum("ki,ij,kj->k", np.conj(chis[:n]), B, psis[:n]) for B in self.basis]
        )
        return np.einsum("cjk,jk->ck", self.coefficients(control), elements).imag


def _phase_coefficients_1d(phis):
    # dH/dphi = -sin(phi) H1 + cos(phi) H2
    return np.stack([-np.sin(phis), np.cos(phis)])[None].astype(complex)


class Linear1D(Problem):
    family = "linear1d"

    def __init__(self, params, psi0, target):
        super().__init__(params, psi0, target)
        self.basis = (build_cos_coupling(params), build_sin_coupling(params))

    def forward(self, control):
        self.check_control(control)
        evals, evecs = linear_spectra(self.params, control.values[0])
        traj = propagate_spectral(evals, evecs, control.dt, self.psi0)
        return Forward(traj, evals, evecs)

    def coefficients(self, control):
        return _phase_coefficients_1d(control.values[0])


class GP1D(Problem):
    family = "gp1d"

    def __init__(self, params, psi0, target):
        super().__init__(params, psi0, target)
        self.dvr = build_dvr_transform(params.lattice)
        # the mean-field term does not depend on the phase
        self.basis = (build_cos_coupling(params.lattice), build_sin_coupling(params.lattice))

    def forward(self, control):
        self.check_control(control)
        return Forward(*gp_forward(self.params, self.psi0, control, self.dvr))

    def coefficients(self, control):
        return _phase_coefficients_1d(control.values[0])

    def _exact_gradient(self, control, fwd, chi_f):
        beta = self.params.beta
        if beta == 0.0:
            return super()._exact_gradient(control, fwd, chi_f)
        R = self.dvr.R
        Rh = R.conj().T
        scale = 2.0 * beta * self.dim / (2.0 * np.pi)

        def back_coupling(k, K):
            # adjoint of psi_k -> U(psi_k) psi_k through the frozen density
            diag = np.einsum("ja,ab,jb->j", R, K, R.conj()).real
            return Rh @ (scale * diag * (R @ fwd.traj[k]))

        return _exact_backprop(
            fwd, chi_f, control.dt, self.basis, self.coefficients(control), back_coupling
        )

    def _pmp_gradient(self, control, fwd, chi_f):
        _, chis = backward_extended(self.params, fwd.final, chi_f, control)
        return self._pmp_from_pair(control, fwd.traj, chis)


class Lattice2D(Problem):
    family = "lattice2d"
    channels = 3

    def __init__(self, params, psi0, target, printed_derivative=False):
        super().__init__(params, psi0, target)
        self.model = Model2D(params)
        self.printed_derivative = printed_derivative
        # everything below runs in the real basis of the model
        W, Wh = self.model.W, self.model.W.conj().T
        self.basis = tuple(Wh @ B @ W for B in self.model.plus + self.model.minus)
        self.psi0_real = Wh @ self.psi0
        self.target_real = Wh @ self.target

    def forward(self, control):
        self.check_control(control)
        evals, evecs = self.model.real_spectra(control)
        traj = propagate_spectral(evals, evecs, control.dt, self.psi0_real)
        return Forward(traj, evals, evecs)

    def fidelity(self, control=None, fwd=None):
        fwd = fwd if fwd is not None else self.forward(control)
        return float(min(1.0, abs(np.vdot(self.target_real, fwd.final)) ** 2))

    def working_target(self):
        return self.target_real

    def to_original(self, states):
        return self.model.from_real_basis(states)

    def coefficients(self, control):
        # dH/dphi_l = i e^{i phi_l} H_l^+ - i e^{-i phi_l} H_l^-
        n = control.n_steps
        up = np.ones((3, n)) if self.printed_derivative else np.exp(1j * control.values)
        coefs = np.zeros((3, 6, n), dtype=complex)
        for c in range(3):
            coefs[c, c] = 1j * up[c]
            coefs[c, 3 + c] = -1j * np.conj(up[c])
        return coefs


def make_problem(params, psi0, target, **kwargs):
    if isinstance(params, GPParams):
        return GP1D(params, psi0, target)
    if isinstance(params, Lattice1DParams):
        return Linear1D(params, psi0, target)
    if isinstance(params, Lattice2DParams):
        return Lattice2D(params, psi0, target, **kwargs)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def gradient_linear(p, control, psi0, target, chi0=0.5, method="exact"):
    return Linear1D(p, psi0, target).gradient(control, chi0, method)[0]


def gradient_gp(p, control, psi0, target, chi0=0.5, method="exact"):
    return GP1D(p, psi0, target).gradient(control, chi0, method)[0]


def gradient_2d(p, control, psi0, target, chi0=0.5, method="exact", printed_derivative=False):
    problem = Lattice2D(p, psi0, target, printed_derivative)
    return problem.gradient(control, chi0, method)


def finite_difference_gradient(problem, control, h=1e-6):
    """Central differences dF/dphi for every channel and step.

    Compare with an adjoint gradient ``g`` through dF/dphi = (dt / chi0) g.
    """
    base = control.values
    out = np.zeros_like(base)
    for c in range(control.channels):
        for k in range(control.n_steps):
            plus = base.copy()
            minus = base.copy()
            plus[c, k] += h
            minus[c, k] -= h
            fp = problem.fidelity(control.with_values(plus))
            fm = problem.fidelity(control.with_values(minus))
            out[c, k] = (fp - fm) / (2.0 * h)
    return out


def initial_control(t_f, n_steps, settings, channels=1, optimize=None, rng=None):
    """Starting pulse according to ``settings.init_strategy``.

    Frozen channels are set to ``settings.init_value`` for every strategy
    except ``zero``.
    """
    flags = np.ones(channels, bool) if optimize is None else np.asarray(optimize, bool)
    if settings.init_strategy == "zero":
        values = np.zeros((channels, n_steps))
    else:
        values = np.full((channels, n_steps), float(settings.init_value))
        if settings.init_strategy == "uniform_random":
            rng = rng if rng is not None else np.random.default_rng(settings.seed)
            noise = rng.uniform(-settings.init_amplitude, settings.init_amplitude, (channels, n_steps))
            values += noise * flags[:, None]
    return ControlGrid(t_f, values, tuple(bool(f) for f in flags))


def optimize(problem, control0, settings=None, callback=None):
    """Gradient ascent on the transfer fidelity.

    Each iteration moves the optimizable channels by ``eps * g``. With the
    line search on, ``eps`` is shrunk by ``settings.backtrack`` until the
    fidelity does not decrease and enlarged by ``settings.growth`` after
    every accepted step, so the fidelity trace is non-decreasing.

    Terminates with ``goal_reached``, ``max_iterations``, ``time_limit``
    (``settings.max_seconds`` exceeded) or ``stalled`` (gradient norm below
    1e-10, or no ascent step found).
    """
    settings = settings or OptimizerSettings()
    start = time.perf_counter()
    problem.check_control(control0)
    if not any(control0.optimize):
        raise ValueError("at least one control channel must be optimizable")
    rng = np.random.default_rng(settings.seed)
    mask = control0.mask
    control = control0
    fwd = problem.forward(control)
    F = problem.fidelity(fwd=fwd)
    fids, gnorms, epss = [F], [], []
    eps = settings.epsilon
    restarts = 0
    reason = "max_iterations"

    def result(reason):
        if isinstance(problem, Lattice2D):
            check_edges(problem.to_original(fwd.traj), problem.params)
        log.info("%s after %d iterations, F = %.6f", reason, len(fids) - 1, F)
        return OptimizationResult(
            control=control,
            fidelity_trace=np.array(fids),
            grad_norm_trace=np.array(gnorms),
            final_state=problem.to_original(fwd.final.copy()),
            termination_reason=reason,
            seed=settings.seed,
            restarts=restarts,
            epsilon_trace=np.array(epss),
        )

    if F >= settings.fidelity_goal:
        return result("goal_reached")

    for _ in range(settings.max_iterations):
        g = problem.gradient(control, settings.chi0, settings.gradient, fwd) * mask
        gnorm = float(np.linalg.norm(g))
        gnorms.append(gnorm)
        if gnorm < STALL_GRAD_NORM:
            if F < 1e-10 and restarts < settings.max_restarts:
                # zero overlap with the target: the adjoint vanishes, kick the pulse
                restarts += 1
                kick = rng.uniform(-settings.restart_amplitude, settings.restart_amplitude, control.values.shape)
                control = control.with_values(control.values + kick * mask)
                fwd = problem.forward(control)
                F = problem.fidelity(fwd=fwd)
                fids.append(F)
                log.info("degenerate start, perturbing pulse (restart %d)", restarts)
                continue
            reason = "stalled"
            break

        accepted = False
        for _ in range(settings.max_halvings + 1):
            trial = control.with_values(control.values + eps * g)
            trial_fwd = problem.forward(trial)
            F_trial = problem.fidelity(fwd=trial_fwd)
            if not settings.line_search or F_trial >= F:
                accepted = True
                break
            eps *= settings.backtrack
        if not accepted:
            reason = "stalled"
            break
        epss.append(eps)
        control, fwd, F = trial, trial_fwd, F_trial
        fids.append(F)
        if settings.line_search:
            eps *= settings.growth
        if callback is not None:
            callback(len(fids) - 1, F, gnorm)
        if F >= settings.fidelity_goal:
            reason = "goal_reached"
            break
        if settings.max_seconds is not None and time.perf_counter() - start > settings.max_seconds:
            reason = "time_limit"
            break
    return result(reason)
