import numpy as np
import pytest

from kron_dyson import ensemble, mde
from kron_dyson.errors import DomainError, InputError, NumericalError


def m_sc(z):
    # Stieltjes transform of the semicircle law; the root with
    # sign(Im s) = sign(Im z) keeps m(conj z) = conj(m(z))
    z = complex(z)
    s = np.sqrt(z * z - 4.0 + 0j)
    if s.imag * z.imag < 0 or (z.imag == 0 and s.imag < 0):
        s = -s
    return (-z + s) / 2.0


class TestSolveAt:
    def test_semicircle_closed_form(self, semicircle):
        pt = mde.solve_mde_at(semicircle, 2j)
        assert abs(pt.M[0, 0] - 1j * (np.sqrt(2) - 1)) < 1e-11
        assert pt.residual <= 1e-11

    def test_deterministic_resolvent(self):
        ens = ensemble.make_ensemble(1, 2, np.array([[5.0]]), [], "gaussian")
        pt = mde.solve_mde_at(ens, 1j)
        assert abs(pt.M[0, 0] - 1.0 / (5.0 - 1j)) < 1e-12

    def test_shift_covariance(self, semicircle):
        c = 0.7
        shifted = ensemble.make_ensemble(
            1, 2, np.array([[c]]), [np.array([[2**-0.5]])], "gaussian"
        )
        z = 0.4 + 0.9j
        a = mde.solve_mde_at(shifted, z).M[0, 0]
        b = mde.solve_mde_at(semicircle, z - c).M[0, 0]
        assert abs(a - b) < 1e-10

    def test_lower_half_plane_rejected(self, semicircle):
        with pytest.raises(DomainError):
            mde.solve_mde_at(semicircle, -1j)

    def test_herglotz_at_probe_points(self, pencil4):
        for z in (0.3 + 0.05j, -2.0 + 1j, 4.0 + 0.2j, 2.5j):
            pt = mde.solve_mde_at(pencil4, z)
            im = (pt.M - pt.M.conj().T) / 2j
            assert np.linalg.eigvalsh(im).min() > 0
            assert pt.residual <= 1e-11

    def test_far_field_asymptotics(self, pencil4):
        # M(z) ~ -1/z with a second-order correction bounded by the model
        # scale constants
        C = np.linalg.norm(pencil4.K0, 2) + 2 * sum(
            np.linalg.norm(L, 2) ** 2 for L in pencil4.L
        ) + 2
        for z in (10j, 100j):
            M = mde.solve_mde_at(pencil4, z).M
            dev = np.linalg.norm(M + np.eye(4) / z, 2)
            assert dev <= C / abs(z) ** 2

    def test_reflection(self, pencil4):
        z = 1.2 + 0.3j
        upper = mde.solution_at(pencil4, z)
        lower = mde.solution_at(pencil4, np.conj(z))
        assert np.linalg.norm(lower - upper.conj().T) < 1e-10


class TestRealAxis:
    def test_semicircle_center(self, semicircle):
        bp = mde.continue_to_real_axis(semicircle, 0.0)
        assert abs(bp.M[0, 0] - 1j) < 1e-8
        assert abs(bp.rho - 1 / np.pi) < 1e-8
        assert not bp.flagged

    def test_semicircle_outside_support(self, semicircle):
        bp = mde.continue_to_real_axis(semicircle, 3.0)
        assert abs(bp.M[0, 0].imag) < 1e-6
        assert abs(bp.M[0, 0] - (-3 + np.sqrt(5)) / 2) < 1e-6
        assert bp.rho < 1e-6

    def test_atomic_point_deterministic(self):
        ens = ensemble.make_ensemble(1, 2, np.array([[1.0]]), [], "gaussian")
        bp = mde.continue_to_real_axis(ens, 0.0)
        assert abs(bp.M[0, 0] - 1.0) < 1e-5
        assert bp.rho < 1e-5

    def test_edge_is_flagged(self, semicircle):
        bp = mde.continue_to_real_axis(semicircle, 2.0)
        assert bp.flagged

    def test_bulk_point_guard(self, semicircle):
        with pytest.raises(DomainError):
            mde.bulk_point(semicircle, 3.0)


class TestDos:
    def test_semicircle_curve(self, semicircle):
        curve = mde.density_of_states(semicircle, points=801)
        assert abs(curve.mass - 1.0) <= 1e-3
        x, rho = curve.x, curve.rho
        # grid contains 0 (odd count, symmetric range)
        i0 = np.argmin(np.abs(x))
        assert abs(x[i0]) < 1e-12
        assert abs(rho[i0] - 1 / np.pi) < 1e-6
        assert rho[np.abs(x) >= 2.5].max() <= 1e-6
        assert np.all(rho >= 0)

    def test_mass_error_on_cropped_grid(self, semicircle):
        with pytest.raises(NumericalError):
            mde.density_of_states(semicircle, grid=np.linspace(-1.0, 1.0, 101))

    def test_bad_point_count(self, semicircle):
        with pytest.raises(InputError):
            mde.density_of_states(semicircle, points=1)

    def test_bulk_energies(self, semicircle):
        curve = mde.density_of_states(semicircle, points=401)
        bulk = curve.bulk_energies()
        assert bulk.size > 0
        assert np.all(np.abs(bulk) < 2.0)

    def test_boundedness_profile(self, pencil4):
        # M and its inverse stay bounded along the real axis, and within
        # the bulk the eigenvalues of Im M track rho within a fixed band
        curve = mde.density_of_states(pencil4, points=301)
        bulk = curve.bulk_energies(threshold=1e-2)
        ratios = []
        for x in bulk[:: max(1, bulk.size // 8)]:
            bp = mde.bulk_point(pencil4, float(x))
            im_eigs = np.linalg.eigvalsh((bp.M - bp.M.conj().T) / 2j)
            assert np.isfinite(np.linalg.norm(bp.M, 2))
            assert np.isfinite(np.linalg.norm(np.linalg.inv(bp.M), 2))
            ratios.append((im_eigs.min() / bp.rho, im_eigs.max() / bp.rho))
        lo = min(r[0] for r in ratios)
        hi = max(r[1] for r in ratios)
        assert 0 < lo <= hi < 50


class TestDerivative:
    def test_semicircle_closed_form(self, semicircle):
        m = m_sc(2j)
        want = m * m / (1 - m * m)
        got = mde.mde_derivative(semicircle, z=2j)
        assert abs(got[0, 0] - want) < 1e-10

    def test_deterministic_square(self):
        ens = ensemble.make_ensemble(1, 2, np.array([[2.0]]), [], "gaussian")
        M = mde.solve_mde_at(ens, 1j).M
        got = mde.mde_derivative(ens, z=1j)
        assert abs(got[0, 0] - M[0, 0] ** 2) < 1e-12

    def test_central_difference(self, pencil4):
        z = 0.8 + 0.4j
        h = 1e-5
        got = mde.mde_derivative(pencil4, z=z)
        fd = (
            mde.solve_mde_at(pencil4, z + h, tol=1e-13).M
            - mde.solve_mde_at(pencil4, z - h, tol=1e-13).M
        ) / (2 * h)
        assert np.linalg.norm(got - fd) < 1e-6
