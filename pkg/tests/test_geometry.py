import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfmb import (
    ArraySpec,
    DegenerateGeometryError,
    Pose,
    aperture_diameter,
    element_geometry,
    element_positions,
    path_geometry,
    per_element_delay,
    per_element_distance,
    per_element_orientation,
    rayleigh_distance,
    sns_amplitude,
    vec3,
)
from nfmb.constants import C


def identity_array(rows, cols, spacing):
    return ArraySpec(rows=rows, cols=cols, spacing=spacing, pose=Pose.identity())


class TestRayleighDistance:
    def test_zero_aperture(self):
        assert rayleigh_distance(0.0, 0.01) == 0.0

    def test_seven_by_seven_at_30ghz(self):
        # D is the diagonal of a 7x7 half-wavelength array at 30 GHz
        d = 6 * 0.005 * np.sqrt(2.0)
        assert rayleigh_distance(d, 0.01) == pytest.approx(0.36, rel=1e-6)

    def test_equal_aperture_and_wavelength(self):
        assert rayleigh_distance(0.01, 0.01) == pytest.approx(0.02)

    def test_invalid_wavelength(self):
        with pytest.raises(ValueError):
            rayleigh_distance(0.1, 0.0)
        with pytest.raises(ValueError):
            rayleigh_distance(-0.1, 0.01)

    @given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3))
    def test_quadratic_scaling(self, d, lam):
        assert rayleigh_distance(2 * d, lam) == pytest.approx(
            4 * rayleigh_distance(d, lam), rel=1e-12
        )


class TestElementPositions:
    def test_single_element(self):
        arr = identity_array(1, 1, 0.005)
        pos = element_positions(arr)
        assert pos.shape == (1, 3)
        np.testing.assert_allclose(pos[0], [0, 0, 0], atol=1e-15)

    def test_1x2_spacing(self):
        arr = identity_array(1, 2, 0.005)
        pos = element_positions(arr)
        assert np.linalg.norm(pos[1] - pos[0]) == pytest.approx(0.005)
        # lattice lies along the first basis direction
        assert abs(pos[1][0] - pos[0][0]) == pytest.approx(0.005)

    def test_reference_self_consistency(self):
        arr = identity_array(7, 7, 0.005)
        pos = element_positions(arr)
        assert arr.reference_index == 24  # central element of a 7x7
        np.testing.assert_allclose(pos[arr.reference_index], arr.pose.origin, atol=1e-15)

    def test_7x7_aperture_diagonal(self):
        arr = identity_array(7, 7, 0.005)
        # brute force over all pairs
        pos = element_positions(arr)
        brute = max(
            np.linalg.norm(pos[i] - pos[j])
            for i in range(len(pos))
            for j in range(len(pos))
        )
        assert aperture_diameter(arr) == pytest.approx(brute)
        assert aperture_diameter(arr) == pytest.approx(0.042426406, rel=1e-6)

    def test_aperture_trivial_cases(self):
        assert aperture_diameter(identity_array(1, 1, 0.01)) == 0.0
        assert aperture_diameter(identity_array(1, 2, 0.007)) == pytest.approx(0.007)

    def test_posed_array_lies_in_basis_plane(self):
        pose = Pose.facing((1.0, -2.0, 0.5), (0.0, 0.0, 0.5))
        arr = ArraySpec(rows=3, cols=4, spacing=0.01, pose=pose)
        pos = element_positions(arr)
        rel = pos - pose.origin
        # no component along boresight
        np.testing.assert_allclose(rel @ pose.basis[2], 0.0, atol=1e-12)


class TestPathGeometry:
    def test_single_hop_line(self):
        pg = path_geometry((0, 0, 0), (2, 0, 0), [(1, 0, 0)])
        assert pg.tau_ref == pytest.approx(2.0 / C, rel=1e-12)
        assert pg.d_tx == pytest.approx(1.0)
        assert pg.d_rx == pytest.approx(1.0)
        np.testing.assert_allclose(pg.omega_tx, [1, 0, 0])
        np.testing.assert_allclose(pg.omega_rx, [-1, 0, 0])

    def test_two_hops(self):
        pg = path_geometry((0, 0, 0), (0, 1, 0), [(1, 0, 0), (1, 1, 0)])
        assert pg.tau_ref == pytest.approx(3.0 / C, rel=1e-12)
        assert pg.d_tx == pytest.approx(1.0)
        assert pg.d_rx == pytest.approx(1.0)
        assert pg.bounce_order == 2

    def test_coincident_hop_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            path_geometry((0, 0, 0), (2, 0, 0), [(0, 0, 0)])

    def test_unit_orientation_vectors(self, rng):
        for _ in range(50):
            tx = rng.normal(size=3)
            rx = rng.normal(size=3) + 5.0
            hops = rng.normal(size=(2, 3)) + 2.0
            pg = path_geometry(tx, rx, hops)
            assert abs(np.linalg.norm(pg.omega_tx) - 1.0) < 1e-12
            assert abs(np.linalg.norm(pg.omega_rx) - 1.0) < 1e-12


class TestPerElement:
    def test_zero_offset_is_reference(self):
        assert per_element_distance(1.0, (1, 0, 0), (0, 0, 0)) == pytest.approx(1.0)
        np.testing.assert_allclose(
            per_element_orientation(1.0, (1, 0, 0), (0, 0, 0)), [1, 0, 0]
        )

    def test_lateral_offset(self):
        d = per_element_distance(1.0, (1, 0, 0), (0, 0.005, 0))
        assert d == pytest.approx(np.sqrt(1 + 0.000025), rel=1e-12)
        omega = per_element_orientation(1.0, (1, 0, 0), (0, 0.005, 0))
        np.testing.assert_allclose(omega, np.array([1.0, -0.005, 0.0]) / d, rtol=1e-12)
        assert abs(np.linalg.norm(omega) - 1.0) < 1e-12

    def test_element_at_scatterer(self):
        assert per_element_distance(1.0, (1, 0, 0), (1, 0, 0)) == pytest.approx(0.0)
        with pytest.raises(DegenerateGeometryError):
            per_element_orientation(1.0, (1, 0, 0), (1, 0, 0))

    def test_non_unit_omega_rejected(self):
        with pytest.raises(ValueError):
            per_element_distance(1.0, (1, 1, 0), (0, 0, 0))

    def test_triangle_consistency_oracle(self, rng):
        # scatterer = ref + d*omega and element = ref + o must give the plain
        # euclidean distance between scatterer and element
        for _ in range(100):
            ref = rng.normal(size=3)
            omega = rng.normal(size=3)
            omega /= np.linalg.norm(omega)
            d_ref = rng.uniform(0.5, 10.0)
            offset = rng.normal(size=3) * 0.05
            scatterer = ref + d_ref * omega
            element = ref + offset
            expected = np.linalg.norm(scatterer - element)
            assert per_element_distance(d_ref, omega, offset) == pytest.approx(
                expected, rel=1e-12
            )

    def test_far_field_convergence(self, rng):
        # lateral offsets: angle( Omega_elem, Omega_ref ) <= ||o|| / d_ref
        omega = np.array([1.0, 0.0, 0.0])
        offset_dir = np.array([0.0, 1.0, 0.0])
        norm_o = 0.01
        for ratio in (1e2, 1e3, 1e4):
            d_ref = ratio * norm_o
            omega_elem = per_element_orientation(d_ref, omega, norm_o * offset_dir)
            angle = np.arccos(np.clip(omega_elem @ omega, -1, 1))
            assert angle <= norm_o / d_ref
        # far-field example: deviation < 1e-4 rad at ratio 1e4
        omega_elem = per_element_orientation(1e4 * norm_o, omega, norm_o * offset_dir)
        assert np.arccos(np.clip(omega_elem @ omega, -1, 1)) < 1e-4


class TestDelaysAndSns:
    def test_delay_trivial(self):
        assert per_element_delay(1e-8, 0.0, 0.0) == pytest.approx(1e-8)

    def test_delay_sum(self):
        assert per_element_delay(10e-9, 0.1e-9, -0.05e-9) == pytest.approx(10.05e-9)

    def test_delay_consistent_with_distance(self):
        # offsets from per_element_distance on the 1 m example
        d_elem = per_element_distance(1.0, (1, 0, 0), (0, 0.005, 0))
        dtau = (d_elem - 1.0) / C
        tau_ref = 2.0 / C
        assert per_element_delay(tau_ref, dtau, 0.0) == pytest.approx(
            (1.0 + d_elem) / C, rel=1e-12
        )

    def test_delay_must_stay_positive(self):
        with pytest.raises(DegenerateGeometryError):
            per_element_delay(1e-9, -2e-9, 0.0)

    def test_sns_reference(self):
        assert sns_amplitude(10e-9, 10e-9) == 1.0

    def test_sns_ratio(self):
        assert sns_amplitude(10e-9, 20e-9) == pytest.approx(0.5)

    def test_sns_guard(self):
        with pytest.raises(ValueError):
            sns_amplitude(10e-9, 0.0)

    @given(st.floats(1e-10, 1e-6), st.floats(1e-10, 1e-6), st.floats(1e-10, 1e-6))
    def test_sns_strictly_decreasing(self, tau_ref, t1, t2):
        lo, hi = sorted([t1, t2])
        if lo < hi:
            assert sns_amplitude(tau_ref, lo) > sns_amplitude(tau_ref, hi)

    def test_element_geometry_record(self):
        rec = element_geometry(1.0, (1, 0, 0), (0, 0.005, 0), tau_ref=2.0 / C)
        assert rec.dalpha > 0
        assert rec.dtau == pytest.approx((rec.d_elem - 1.0) / C, rel=1e-12)
        assert abs(np.linalg.norm(rec.omega_elem) - 1.0) < 1e-12
        # dalpha = 1 exactly at the reference element
        ref = element_geometry(1.0, (1, 0, 0), (0, 0, 0), tau_ref=2.0 / C)
        assert ref.dalpha == 1.0


class TestPose:
    def test_identity(self):
        p = Pose.identity()
        np.testing.assert_allclose(p.basis, np.eye(3))

    def test_facing_is_right_handed(self):
        p = Pose.facing((0, 0, 0), (1, 2, 0.5))
        np.testing.assert_allclose(p.basis @ p.basis.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(p.basis) == pytest.approx(1.0)
        np.testing.assert_allclose(
            p.basis[2], vec3(1, 2, 0.5) / np.linalg.norm(vec3(1, 2, 0.5)), atol=1e-12
        )

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            Pose(origin=(0, 0, 0), basis=np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]]))

    def test_reference_index_validation(self):
        with pytest.raises(ValueError):
            ArraySpec(rows=2, cols=2, spacing=0.01, pose=Pose.identity(), reference_index=4)
        with pytest.raises(ValueError):
            ArraySpec(rows=2, cols=2, spacing=0.0, pose=Pose.identity())
