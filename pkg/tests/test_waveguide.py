"""Slab mode solver: counts, dispersion residuals, fields, overlaps.

The independent oracle is a 1-d finite-difference TE eigenproblem on a
1 nm grid (sparse tridiagonal), entirely separate from the analytic
transcendental-equation path it checks.
"""

import math

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from mrsim.errors import ValidationError
from mrsim.waveguide import (
    SlabGeometry,
    evaluate_straight_field,
    find_slab_modes,
    mode_count,
    mode_profile,
    find_slab_modes as _solve,
    straight_overlap,
)

PAPER_SLAB = SlabGeometry(core_index=1.5, background_index=1.0, width=0.4)
WIDE_SLAB = SlabGeometry(core_index=1.5, background_index=1.0, width=1.2)
LAMBDA = 1.05


def fd_effective_indices(geometry, wavelength, n_modes, h=0.001, pad=4.0):
    """Finite-difference oracle for TE effective indices on grid step h (um).

    Richardson-extrapolated from steps h and h/2 to cancel the O(h^2)
    discretization bias of the second difference.
    """

    def solve(step):
        k = 2.0 * math.pi / wavelength
        half = 0.5 * geometry.width
        x = np.arange(-half - pad, half + pad + step, step)
        n = np.where(np.abs(x) <= half, geometry.core_index, geometry.background_index)
        main = (n * k) ** 2 - 2.0 / step ** 2
        off = np.ones(len(x) - 1) / step ** 2
        lo = (geometry.background_index * k) ** 2
        hi = (geometry.core_index * k) ** 2
        vals = eigh_tridiagonal(
            main, off, select="v", select_range=(lo, hi), eigvals_only=True
        )
        beta = np.sqrt(np.sort(vals)[::-1][:n_modes])
        return beta / k

    coarse = solve(h)
    fine = solve(h / 2.0)
    return (4.0 * fine - coarse) / 3.0


class TestModeFinding:
    def test_paper_geometry_single_mode(self):
        # V = (2 pi / 1.05) * 0.4 * sqrt(1.25) ~ 2.675 < pi
        modes = find_slab_modes(PAPER_SLAB, LAMBDA)
        assert len(modes) == 1
        assert mode_count(PAPER_SLAB, LAMBDA) == 1
        m = modes[0]
        assert PAPER_SLAB.background_index < m.effective_index < PAPER_SLAB.core_index

    def test_degenerate_geometry_rejected(self):
        with pytest.raises(ValidationError):
            SlabGeometry(core_index=1.5, background_index=1.5, width=0.4)

    def test_wide_slab_count_and_fd_oracle(self):
        # V ~ 8.03: floor(V/pi) + 1 = 3 guided TE modes
        modes = find_slab_modes(WIDE_SLAB, LAMBDA)
        assert len(modes) == 3
        n_eff = np.array([m.effective_index for m in modes])
        oracle = fd_effective_indices(WIDE_SLAB, LAMBDA, 3)
        assert np.all(np.abs(n_eff - oracle) < 1e-6)

    def test_paper_geometry_fd_oracle(self):
        modes = find_slab_modes(PAPER_SLAB, LAMBDA)
        oracle = fd_effective_indices(PAPER_SLAB, LAMBDA, 1)
        assert abs(modes[0].effective_index - oracle[0]) < 1e-6

    def test_dispersion_residuals(self):
        for geo in (PAPER_SLAB, WIDE_SLAB):
            for m in find_slab_modes(geo, LAMBDA):
                assert abs(m.dispersion_residual()) < 1e-12

    def test_neff_ordering_and_width_monotonicity(self):
        modes = find_slab_modes(WIDE_SLAB, LAMBDA)
        n_eff = [m.effective_index for m in modes]
        assert all(a > b for a, b in zip(n_eff, n_eff[1:]))
        narrower = find_slab_modes(
            SlabGeometry(core_index=1.5, background_index=1.0, width=1.0), LAMBDA
        )
        assert narrower[0].effective_index < modes[0].effective_index

    def test_invalid_wavelength(self):
        with pytest.raises(ValidationError):
            find_slab_modes(PAPER_SLAB, -1.0)


class TestFields:
    def test_fundamental_center_maximum(self):
        (m,) = find_slab_modes(PAPER_SLAB, LAMBDA)
        f = evaluate_straight_field(m, 0.0, 0.0)
        assert f.e_y.real > 0
        assert abs(f.e_y.imag) == 0
        off = evaluate_straight_field(m, 0.15, 0.0)
        assert abs(off.e_y) < abs(f.e_y)

    def test_harmonic_z_dependence(self):
        (m,) = find_slab_modes(PAPER_SLAB, LAMBDA)
        period = 2.0 * math.pi / m.beta
        f1 = evaluate_straight_field(m, 0.1, 0.3)
        f2 = evaluate_straight_field(m, 0.1, 0.3 + period)
        assert abs(f1.e_y - f2.e_y) < 1e-12 * abs(f1.e_y)

    def test_cladding_exponential_tail(self):
        (m,) = find_slab_modes(PAPER_SLAB, LAMBDA)
        edge = 0.5 * PAPER_SLAB.width
        two_lengths = edge + 2.0 / m.sigma
        e_edge = abs(evaluate_straight_field(m, edge, 0.0).e_y)
        e_tail = abs(evaluate_straight_field(m, two_lengths, 0.0).e_y)
        assert abs(e_tail - math.exp(-2.0) * e_edge) < 1e-12 * e_edge

    def test_field_continuity_at_interfaces(self):
        for mode in find_slab_modes(WIDE_SLAB, LAMBDA):
            for sgn in (1.0, -1.0):
                edge = sgn * 0.5 * WIDE_SLAB.width
                below = evaluate_straight_field(mode, edge - 1e-12, 0.0)
                above = evaluate_straight_field(mode, edge + 1e-12, 0.0)
                scale = abs(below.e_y) + abs(below.h_z)
                assert abs(below.e_y - above.e_y) < 1e-10 * scale
                assert abs(below.h_z - above.h_z) < 1e-10 * scale

    def test_te_field_relations(self):
        (m,) = find_slab_modes(PAPER_SLAB, LAMBDA)
        k = 2.0 * math.pi / LAMBDA
        x = np.linspace(-1.0, 1.0, 41)
        f = evaluate_straight_field(m, x, 0.7)
        assert np.allclose(f.h_x, -(m.beta / k) * f.e_y, rtol=1e-13)
        h = 1e-6
        fp = evaluate_straight_field(m, x + h, 0.7)
        fm = evaluate_straight_field(m, x - h, 0.7)
        d_ey = (fp.e_y - fm.e_y) / (2 * h)
        assert np.allclose(f.h_z, (1j / k) * d_ey, rtol=1e-5, atol=1e-8)

    def test_unit_power_normalization(self):
        # integral Re(E x H*)_z dx = -(Re integral E_y conj(H_x)) = 1
        for mode in find_slab_modes(WIDE_SLAB, LAMBDA):
            x = np.linspace(-8.0, 8.0, 160001)
            f = evaluate_straight_field(mode, x, 0.0)
            s_z = -np.real(f.e_y * np.conj(f.h_x))
            power = np.trapezoid(s_z, x)
            assert abs(power - 1.0) < 2e-6


class TestOverlaps:
    def test_self_overlap_is_two(self):
        (m,) = find_slab_modes(PAPER_SLAB, LAMBDA)
        assert abs(straight_overlap(m, m) - 2.0) < 1e-8

    def test_cross_overlap_vanishes(self):
        modes = find_slab_modes(WIDE_SLAB, LAMBDA)
        for i, mi in enumerate(modes):
            for mj in modes[i + 1 :]:
                assert abs(straight_overlap(mi, mj)) < 1e-8

    def test_cross_overlap_matches_quadrature(self):
        modes = find_slab_modes(WIDE_SLAB, LAMBDA)
        k = 2.0 * math.pi / LAMBDA
        x = np.linspace(-10.0, 10.0, 400001)
        m0, m2 = modes[0], modes[2]
        p0, _ = mode_profile(m0, x)
        p2, _ = mode_profile(m2, x)
        numeric = ((m0.beta + m2.beta) / k) * np.trapezoid(p0 * p2, x)
        assert abs(straight_overlap(m0, m2) - numeric) < 1e-6

    def test_wavelength_mismatch_rejected(self):
        (a,) = find_slab_modes(PAPER_SLAB, 1.05)
        (b,) = find_slab_modes(PAPER_SLAB, 1.04)
        with pytest.raises(ValidationError):
            straight_overlap(a, b)
