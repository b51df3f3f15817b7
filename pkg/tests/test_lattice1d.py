import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from becgrape.controls import ControlGrid
from becgrape.lattice1d import (
    Lattice1DParams,
    build_cos_coupling,
    build_kinetic,
    build_sin_coupling,
    control_derivative_at,
    gauge_phases,
    hamiltonian_at,
    propagate_linear,
)
from becgrape.numkernel import propagate_rk4
from becgrape.states import plane_wave
from helpers import random_state

phases = st.floats(-10.0, 10.0, allow_nan=False)
depths = st.floats(0.0, 20.0)
quasi = st.floats(-0.5, 0.5)


class TestParams:
    def test_defaults(self):
        p = Lattice1DParams(s=5.0)
        assert p.n_max == 10 and p.dim == 21 and p.q == 0.0

    @pytest.mark.parametrize("kwargs", [{"s": -1.0}, {"s": 1.0, "q": 0.7}, {"s": 1.0, "n_max": -1}, {"s": 1.0, "n_max": 2.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Lattice1DParams(**kwargs)

    def test_index_out_of_window(self):
        with pytest.raises(IndexError):
            Lattice1DParams(s=1.0, n_max=2).index_of(3)


class TestOperators:
    def test_kinetic_q0(self):
        np.testing.assert_array_equal(np.diag(build_kinetic(Lattice1DParams(s=1.0, n_max=1))), [1, 0, 1])

    def test_kinetic_half_quasi_momentum(self):
        K = build_kinetic(Lattice1DParams(s=1.0, q=0.5, n_max=1))
        np.testing.assert_allclose(np.diag(K), [0.25, 0.25, 2.25])

    def test_kinetic_entry(self):
        p = Lattice1DParams(s=1.0, n_max=10)
        assert build_kinetic(p)[p.index_of(2), p.index_of(2)] == 4

    def test_cos_coupling_entries(self):
        H1 = build_cos_coupling(Lattice1DParams(s=5.0, n_max=4))
        np.testing.assert_array_equal(np.diag(H1, 1), -1.25)
        np.testing.assert_array_equal(np.diag(H1, -1), -1.25)

    def test_sin_coupling_entries(self):
        p = Lattice1DParams(s=5.0, n_max=4)
        H2 = build_sin_coupling(p)
        for n in range(-3, 4):
            i = p.index_of(n)
            assert H2[i, i - 1] == -1.25j
            assert H2[i, i + 1] == 1.25j

    def test_zero_phase_is_cos_coupling(self):
        p = Lattice1DParams(s=5.0, n_max=3)
        np.testing.assert_array_equal(hamiltonian_at(p, 0.0), build_kinetic(p) + build_cos_coupling(p))

    def test_pi_phase(self):
        p = Lattice1DParams(s=5.0, n_max=3)
        np.testing.assert_allclose(hamiltonian_at(p, np.pi), build_kinetic(p) - build_cos_coupling(p), atol=1e-15)

    def test_quarter_turn_entry(self):
        p = Lattice1DParams(s=5.0, n_max=1)
        H = hamiltonian_at(p, np.pi / 2)
        assert H[p.index_of(0), p.index_of(-1)] == pytest.approx(-1.25j, abs=1e-15)
        assert np.max(np.abs(H - H.conj().T)) == 0.0

    def test_derivative_at_zero(self):
        p = Lattice1DParams(s=5.0, n_max=3)
        np.testing.assert_array_equal(control_derivative_at(p, 0.0), build_sin_coupling(p))

    def test_derivative_at_quarter_turn(self):
        p = Lattice1DParams(s=5.0, n_max=3)
        np.testing.assert_allclose(control_derivative_at(p, np.pi / 2), -build_cos_coupling(p), atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(phi=phases, s=depths)
    def test_derivative_matches_central_difference(self, phi, s):
        p = Lattice1DParams(s=s, n_max=3)
        h = 1e-5
        fd = (hamiltonian_at(p, phi + h) - hamiltonian_at(p, phi - h)) / (2 * h)
        assert np.max(np.abs(fd - control_derivative_at(p, phi))) < 1e-9 * max(1.0, s)

    @settings(max_examples=50, deadline=None)
    @given(phi=phases, s=depths, q=quasi, n_max=st.integers(0, 12))
    def test_hermitian_and_tridiagonal(self, phi, s, q, n_max):
        H = hamiltonian_at(Lattice1DParams(s=s, q=q, n_max=n_max), phi)
        assert np.max(np.abs(H - H.conj().T)) < 1e-14
        assert np.all(np.triu(H, 2) == 0) and np.all(np.tril(H, -2) == 0)

    @settings(max_examples=25, deadline=None)
    @given(phi=phases, s=depths)
    def test_gauge_identity(self, phi, s):
        p = Lattice1DParams(s=s, n_max=5)
        d = gauge_phases(p, phi)
        rotated = d[:, None] * hamiltonian_at(p, 0.0) * np.conj(d)[None, :]
        assert np.max(np.abs(rotated - hamiltonian_at(p, phi))) < 1e-13 * max(1.0, s)


class TestPropagation:
    def test_free_evolution(self, rng):
        p = Lattice1DParams(s=0.0, q=0.2, n_max=4)
        psi0 = random_state(rng, p.dim)
        t = 1.3
        traj = propagate_linear(p, psi0, ControlGrid.constant(t, 13, 0.4))
        expected = np.exp(-1j * (p.indices + p.q) ** 2 * t) * psi0
        np.testing.assert_allclose(traj[-1], expected, atol=1e-13)

    def test_matches_rk4(self):
        p = Lattice1DParams(s=5.0, n_max=10)
        control = ControlGrid.constant(7.6, 500, 0.0)
        psi0 = plane_wave(0, p)
        traj = propagate_linear(p, psi0, control)
        ref = propagate_rk4([hamiltonian_at(p, 0.0)] * 500, control.dt, psi0, substeps=2)
        assert np.max(np.abs(traj[-1] - ref[-1])) < 1e-6

    def test_piecewise_control_matches_rk4(self, rng):
        p = Lattice1DParams(s=5.0, n_max=6)
        control = ControlGrid(3.0, rng.uniform(-np.pi, np.pi, (1, 30)))
        psi0 = random_state(rng, p.dim)
        hs = [hamiltonian_at(p, phi) for phi in control.values[0]]
        ref = propagate_rk4(hs, control.dt, psi0, substeps=200)
        np.testing.assert_allclose(propagate_linear(p, psi0, control), ref, atol=1e-8)

    def test_time_reversal(self, rng):
        p = Lattice1DParams(s=5.0, n_max=10)
        control = ControlGrid(7.6, rng.uniform(-1, 1, (1, 200)))
        psi0 = random_state(rng, p.dim)
        final = propagate_linear(p, psi0, control)[-1]
        back = propagate_linear(p, final, control.reversed(), direction=-1)[-1]
        assert np.max(np.abs(back - psi0)) < 1e-9

    def test_norm_conserved_over_many_steps(self, rng):
        p = Lattice1DParams(s=8.0, q=0.1, n_max=10)
        control = ControlGrid(20.0, rng.uniform(-np.pi, np.pi, (1, 1000)))
        traj = propagate_linear(p, random_state(rng, p.dim), control)
        assert traj.shape == (1001, p.dim)
        assert np.max(np.abs(np.linalg.norm(traj, axis=1) - 1)) < 1e-10

    def test_rejects_wrong_shape(self):
        p = Lattice1DParams(s=1.0, n_max=2)
        with pytest.raises(ValueError, match="shape"):
            propagate_linear(p, np.ones(3), ControlGrid.constant(1.0, 2))

    def test_rejects_multichannel_control(self):
        p = Lattice1DParams(s=1.0, n_max=2)
        with pytest.raises(ValueError, match="single-channel"):
            propagate_linear(p, plane_wave(0, p), ControlGrid.constant(1.0, 2, channels=3))
