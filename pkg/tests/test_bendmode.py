"""Whispering-gallery mode solver: roots, ordering, fields, passivity.

The root-search oracle is a brute-force rectangular scan of the complex
angular-order plane with local refinement, independent of the
production turning-point seeding.
"""

import cmath
import math

import numpy as np
import pytest

from mrsim.bendmode import (
    BendGeometry,
    BendMode,
    RadialTable,
    bend_field_from_table,
    dispersion_residual,
    evaluate_bend_field,
    find_bend_modes,
    radial_profile,
    segment_phase,
)
from mrsim.errors import ValidationError
from mrsim.waveguide import SlabGeometry, find_slab_modes

DISK = BendGeometry(radius=5.0, core_index=1.5, background_index=1.0, core_width=0.0)
LAMBDA = 1.043


@pytest.fixture(scope="module")
def disk_modes():
    return find_bend_modes(DISK, LAMBDA, 3)


def brute_force_roots(geometry, wavelength, n_re=260, n_im=24):
    """Oracle: dense |residual| scan over the confinement strip, local
    minima refined by damped secant iteration in the complex plane."""
    k = 2.0 * math.pi / wavelength
    lo = geometry.background_index * k * geometry.radius + 0.4
    hi = geometry.core_index * k * geometry.radius - 0.05
    res = np.linspace(lo, hi, n_re)
    ims = np.linspace(-0.8, -1e-6, n_im)
    mag = np.empty((n_re, n_im))
    for i, rr in enumerate(res):
        for j, ii in enumerate(ims):
            mag[i, j] = abs(dispersion_residual(geometry, wavelength, complex(rr, ii)))
    roots = []
    for i in range(1, n_re - 1):
        for j in range(n_im):
            m = mag[i, j]
            if m >= mag[i - 1, j] or m >= mag[i + 1, j]:
                continue
            if j > 0 and m >= mag[i, j - 1]:
                continue
            if j < n_im - 1 and m >= mag[i, j + 1]:
                continue
            nu0 = complex(res[i], ims[j])
            nu1 = nu0 + 1e-3
            f0 = dispersion_residual(geometry, wavelength, nu0)
            f1 = dispersion_residual(geometry, wavelength, nu1)
            for _ in range(80):
                if f1 == f0:
                    break
                nu2 = nu1 - f1 * (nu1 - nu0) / (f1 - f0)
                nu0, f0 = nu1, f1
                nu1 = nu2
                f1 = dispersion_residual(geometry, wavelength, nu1)
                if abs(nu1 - nu0) < 1e-10 * (1 + abs(nu1)):
                    break
            if abs(f1) < 1e-7 and lo - 1 < nu1.real < hi + 1 and nu1.imag < 1e-9:
                if all(abs(nu1 - r) > 1e-4 for r in roots):
                    roots.append(nu1)
    return sorted(roots, key=lambda nu: -nu.real)


class TestDispersionResidual:
    def test_off_root_probe_is_large(self):
        assert abs(dispersion_residual(DISK, LAMBDA, 10.0 + 0.0j)) > 1e-2

    def test_residual_small_at_roots(self, disk_modes):
        for m in disk_modes:
            assert abs(dispersion_residual(DISK, LAMBDA, m.angular_order)) < 1e-8

    def test_outgoing_incoming_reflection_symmetry(self):
        # conj(residual at nu) equals the incoming-wave (H1) residual at
        # conj(nu): the H2 formulation is not Schwarz-symmetric by itself
        from mrsim.specfun import bessel_j, hankel1

        nu = 38.0 - 0.2j
        k = 2 * math.pi / LAMBDA
        zc = DISK.core_index * k * DISK.radius
        zb = DISK.background_index * k * DISK.radius
        got = dispersion_residual(DISK, LAMBDA, nu)
        j = bessel_j(np.conj(nu), zc)
        h1 = hankel1(np.conj(nu), zb)
        mirrored = (
            DISK.core_index * j.derivative / j.value
            - DISK.background_index * h1.derivative / h1.value
        )
        assert abs(np.conj(got) - mirrored) < 1e-9 * abs(got)


class TestRootFinding:
    def test_three_modes_ordering_and_loss(self, disk_modes):
        assert [m.radial_order for m in disk_modes] == [0, 1, 2]
        attenuation = [-m.gamma.imag for m in disk_modes]
        assert attenuation[0] < attenuation[1] < attenuation[2]
        for m in disk_modes:
            assert m.gamma.imag < 0
            assert m.gamma.real > 0

    def test_fundamental_phase_constant_bracket(self, disk_modes):
        k = 2 * math.pi / LAMBDA
        nu0 = disk_modes[0].angular_order
        assert DISK.background_index * k * DISK.radius < nu0.real
        assert nu0.real < DISK.core_index * k * DISK.radius

    def test_deterministic(self, disk_modes):
        again = find_bend_modes(DISK, LAMBDA, 3)
        for a, b in zip(disk_modes, again):
            assert a.gamma == b.gamma

    def test_matches_brute_force_scan(self, disk_modes):
        oracle = brute_force_roots(DISK, LAMBDA)
        assert len(oracle) >= 3
        for m in disk_modes:
            dist = min(abs(m.angular_order - nu) for nu in oracle)
            assert dist < 1e-6, (m.radial_order, m.angular_order)

    def test_insufficient_modes_error(self):
        with pytest.raises(ValidationError, match="well-confined"):
            find_bend_modes(DISK, LAMBDA, 50)

    def test_newton_quadratic_convergence(self):
        # successive Newton errors against the converged root shrink
        # faster than linearly by a wide margin near the root
        from mrsim.bendmode import _newton_root

        root, trace = _newton_root(DISK, LAMBDA, 40.0 - 0.001j)
        iterates = [t[1] for t in trace if t[0] == "iterate"]
        errs = [abs(it - root) for it in iterates[:-1]]
        errs = [e for e in errs if e > 1e-13]
        assert len(errs) >= 2
        for e_prev, e_next in zip(errs, errs[1:]):
            assert e_next < 0.2 * e_prev or e_next < 1e-10

    def test_ring_slab_limit(self):
        ring = BendGeometry(
            radius=200.0, core_index=1.5, background_index=1.0, core_width=0.4
        )
        (mode,) = find_bend_modes(ring, 1.05, 1)
        slab = find_slab_modes(SlabGeometry(1.5, 1.0, 0.4), 1.05)[0]
        assert abs(mode.gamma.real - slab.beta) / slab.beta <= 1e-3

    def test_ring_interface_continuity(self):
        ring = BendGeometry(
            radius=5.0, core_index=1.5, background_index=1.0, core_width=0.4
        )
        (mode,) = find_bend_modes(ring, LAMBDA, 1)
        for r_if in (ring.inner_radius, ring.radius):
            lo, dlo = radial_profile(mode, r_if - 1e-11)
            hi, dhi = radial_profile(mode, r_if + 1e-11)
            assert abs(lo[0] - hi[0]) < 1e-8 * abs(lo[0])
            assert abs(dlo[0] - dhi[0]) < 1e-8 * abs(dlo[0])

    def test_invalid_geometry(self):
        with pytest.raises(ValidationError):
            BendGeometry(radius=5.0, core_index=1.0, background_index=1.5)
        with pytest.raises(ValidationError):
            BendGeometry(radius=0.3, core_index=1.5, background_index=1.0, core_width=0.4)
        with pytest.raises(ValidationError):
            find_bend_modes(DISK, LAMBDA, 0)


class TestFields:
    def test_angular_dependence(self, disk_modes):
        m = disk_modes[0]
        r = DISK.radius
        th1, dth = 0.3, 0.05
        f1 = evaluate_bend_field(m, r * math.cos(th1), r * math.sin(th1))
        f2 = evaluate_bend_field(m, r * math.cos(th1 + dth), r * math.sin(th1 + dth))
        ratio = complex(f2.e_y / f1.e_y)
        expect = cmath.exp(-1j * m.angular_order * dth)
        assert abs(ratio - expect) < 1e-9 * abs(expect)

    def test_te1_single_interior_node(self, disk_modes):
        m = disk_modes[1]
        r = np.linspace(2.2, 4.99, 1500)
        psi, _ = radial_profile(m, r)
        keep = np.abs(psi) > 1e-9 * np.abs(psi).max()
        s = np.real(psi)[keep]
        assert int(np.sum(s[:-1] * s[1:] < 0)) == 1

    def test_outgoing_tail_bounded(self, disk_modes):
        m = disk_modes[0]
        r = np.linspace(8.0, 14.0, 200)
        psi, _ = radial_profile(m, r)
        scaled = np.abs(psi) * np.sqrt(r)
        assert scaled.max() < 10.0 * scaled.min()

    def test_center_rejected(self, disk_modes):
        with pytest.raises(ValidationError):
            evaluate_bend_field(disk_modes[0], 0.0, 0.0)

    def test_radial_table_matches_direct(self, disk_modes):
        m = disk_modes[0]
        table = RadialTable(m, r_max=9.0)
        rng = np.random.RandomState(3)
        r = rng.uniform(2.0, 8.5, 200)
        psi_t, dpsi_t = table(r)
        psi_d, dpsi_d = radial_profile(m, r)
        scale = np.abs(psi_d).max()
        assert np.abs(psi_t - psi_d).max() < 1e-8 * scale
        dscale = np.abs(dpsi_d).max()
        assert np.abs(dpsi_t - dpsi_d).max() < 1e-8 * dscale

    def test_table_field_matches_direct_field(self, disk_modes):
        m = disk_modes[1]
        table = RadialTable(m, r_max=9.0)
        x = np.linspace(2.0, 6.0, 7)
        z = np.linspace(-2.0, 2.0, 5)
        xx, zz = np.meshgrid(x, z, indexing="ij")
        fd = evaluate_bend_field(m, xx, zz)
        ft = bend_field_from_table(m, table, xx, zz)
        assert np.abs(fd.e_y - ft.e_y).max() < 1e-8 * np.abs(fd.e_y).max()
        assert np.abs(fd.h_x - ft.h_x).max() < 1e-8 * np.abs(fd.h_x).max()


class TestSegmentPhase:
    def test_zero_length_identity(self, disk_modes):
        assert segment_phase(disk_modes[0], 0.0) == 1.0

    def test_roundtrip_passivity(self, disk_modes):
        for m in disk_modes:
            survival = abs(segment_phase(m, 2 * math.pi * DISK.radius))
            assert survival < 1.0

    def test_exponential_law(self, disk_modes):
        m = disk_modes[1]
        p1 = abs(segment_phase(m, 3.7))
        p2 = abs(segment_phase(m, 7.4))
        assert abs(p2 - p1 * p1) < 1e-12

    def test_negative_length_rejected(self, disk_modes):
        with pytest.raises(ValidationError):
            segment_phase(disk_modes[0], -1.0)
