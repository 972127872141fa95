"""Bent-straight waveguide couplers by coupled mode theory.

The coupler field is expanded over the isolated bend and straight modes
with z-dependent amplitudes C(z).  Power-type overlaps M and the
permittivity-contrast matrix F drive the first-order system

    M(z) dC/dz = F(z) C(z),

integrated from the input plane z_i to the output plane z_o with a
classical order-4 Runge-Kutta scheme.  Projecting the hybrid output
field onto the straight modes removes the slow drift caused by the
radiative bend tails and yields the scattering matrix between the port
amplitudes (bend ports first, then straight ports).

Geometry convention: the cavity center sits at the origin, the bus core
occupies x in [radius + gap, radius + gap + width], the input plane is
at z_i < 0 and the output plane at z_o > 0; the line of closest approach
is z = 0.  Bend-port amplitudes are referenced to the rim crossings of
the port planes, so cavity segments outside the coupler windows connect
with pure arc propagation factors.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bendmode import (
    BendGeometry,
    BendMode,
    RadialTable,
    bend_field_from_table,
    find_bend_modes,
)
from .errors import ConvergenceError, ValidationError
from .waveguide import SlabGeometry, StraightMode, evaluate_straight_field, find_slab_modes

_CONDITION_LIMIT = 1e10
_STEP_REFINEMENT_TOL = 1e-4
_TAIL_POWER_LIMIT = 1e-4
# F-matrix prefactor: -i k in units with omega mu0 = k (from the Lorentz
# reciprocity derivation with unit-power mode normalization)


@dataclass(frozen=True)
class CouplerGeometry:
    """Rectangular coupler window and quadrature controls.

    The window [x_left, x_right] x [z_in, z_out] must contain the bus
    core and the rim arc; port planes must intersect the rim circle,
    so |z_in| <= radius and z_out <= radius.
    """

    gap: float
    core_x_lo: float
    core_x_hi: float
    x_left: float
    x_right: float
    z_in: float
    z_out: float
    x_step: float = 0.005
    z_step: float = 0.025

    def __post_init__(self):
        if not self.gap > 0:
            raise ValidationError(f"gap must be positive, got {self.gap}")
        if not (self.z_in < 0.0 < self.z_out):
            raise ValidationError(
                f"need z_in < 0 < z_out, got z_in={self.z_in}, z_out={self.z_out}"
            )
        if not (self.x_left < self.core_x_lo < self.core_x_hi < self.x_right):
            raise ValidationError("window must contain the straight core strictly")
        if not (self.x_step > 0 and self.z_step > 0):
            raise ValidationError("quadrature steps must be positive")


def make_coupler_geometry(
    bend_geometry: BendGeometry,
    slab_geometry: SlabGeometry,
    gap: float,
    x_step: float = 0.005,
    z_step: float = 0.025,
    x_margin_inner: float = 3.0,
    x_margin_outer: float = 3.0,
    z_in: Optional[float] = None,
    z_out: Optional[float] = None,
) -> CouplerGeometry:
    """Default window: port planes at z = -R and +R, x from a few um
    inside the rim to a few um beyond the bus core."""
    radius = bend_geometry.radius
    if z_in is None:
        z_in = -radius
    if z_out is None:
        z_out = radius
    if not (-radius <= z_in < 0 < z_out <= radius):
        raise ValidationError(
            f"port planes must intersect the rim: need -R <= z_in < 0 < z_out <= R, "
            f"got z_in={z_in}, z_out={z_out}, R={radius}"
        )
    core_lo = radius + gap
    core_hi = core_lo + slab_geometry.width
    return CouplerGeometry(
        gap=gap,
        core_x_lo=core_lo,
        core_x_hi=core_hi,
        x_left=radius - x_margin_inner,
        x_right=core_hi + x_margin_outer,
        z_in=z_in,
        z_out=z_out,
        x_step=x_step,
        z_step=z_step,
    )


@dataclass(frozen=True)
class OverlapSystem:
    """Overlap matrix M and contrast matrix F at one height z."""

    m_matrix: np.ndarray
    f_matrix: np.ndarray
    z: float


@dataclass(eq=False)
class ScatteringMatrix:
    """Port-amplitude transfer of one coupler at one wavelength.

    entries[i, j]: output port i for unit input at port j, bend ports
    p = 0..N_b-1 first, then straight ports q = 0..N_s-1.
    """

    entries: np.ndarray
    wavelength: float
    bend_modes: tuple
    straight_modes: tuple
    geometry: CouplerGeometry
    condition_peak: float
    step_refinement_delta: float

    @property
    def n_bend(self) -> int:
        return len(self.bend_modes)

    @property
    def n_straight(self) -> int:
        return len(self.straight_modes)

    def max_singular_value(self) -> float:
        return float(np.linalg.svd(self.entries, compute_uv=False)[0])


class CmtCoupler:
    """Shared machinery: quadrature grids, mode fields, M/F assembly,
    RK4 transfer matrix, projection, port phase bookkeeping.

    conjugate=True (default) is the power-overlap bracket; the
    complex-symmetric variant (False) is kept for diagnostics only: the
    azimuthal phase of bend modes along a chord self-cancels without
    conjugation, so it cannot normalize whispering-gallery bases.
    """

    def __init__(self, bend_modes, straight_modes, geometry: CouplerGeometry,
                 conjugate: bool = True):
        self.conjugate = conjugate
        if len(bend_modes) + len(straight_modes) == 0:
            raise ValidationError("need at least one mode")
        wavelengths = {m.wavelength for m in bend_modes} | {
            m.wavelength for m in straight_modes
        }
        if len(wavelengths) != 1:
            raise ValidationError(f"mode wavelengths differ: {sorted(wavelengths)}")
        self.wavelength = wavelengths.pop()
        self.k = 2.0 * math.pi / self.wavelength
        self.geometry = geometry
        self.straight_modes = list(straight_modes)
        self._check_straight_tails()

        self.bend_geometry = bend_modes[0].geometry if bend_modes else None
        r_max = math.hypot(
            geometry.x_right, max(abs(geometry.z_in), abs(geometry.z_out))
        ) + 0.5
        self._tables = [RadialTable(m, r_max=r_max) for m in bend_modes]
        self._plane_cache = {}
        # normalize bend modes: window bracket at the input plane -> 2
        self.bend_modes = []
        for mode, table in zip(bend_modes, self._tables):
            bracket = self._bend_self_bracket(mode, table, geometry.z_in)
            if not bracket.real > 0:
                raise ConvergenceError(
                    f"bend mode p={mode.radial_order} has non-positive input-plane "
                    f"bracket {bracket:.3e}; window unsuitable for normalization",
                    trace=[("z_in", geometry.z_in)],
                )
            scale = complex(np.sqrt(2.0 / bracket))
            if scale.real < 0:
                scale = -scale
            self.bend_modes.append(mode.normalized(scale))
        self.n_bend = len(self.bend_modes)
        self.n_straight = len(self.straight_modes)
        self.n_total = self.n_bend + self.n_straight

    # -- geometry / quadrature ------------------------------------------

    def _check_straight_tails(self):
        g = self.geometry
        for mode in self.straight_modes:
            psi_l = mode.amplitude * (
                math.cos(mode.kappa * 0.5 * mode.geometry.width)
                if mode.parity > 0
                else math.sin(mode.kappa * 0.5 * mode.geometry.width)
            )
            beta_k = mode.beta / self.k
            tail = 0.0
            for edge, sign in ((g.x_left, -1), (g.x_right, +1)):
                d = (g.core_x_lo - edge) if sign < 0 else (edge - g.core_x_hi)
                if d < 0:
                    raise ValidationError("window does not contain the bus core")
                tail += beta_k * psi_l * psi_l * math.exp(-2.0 * mode.sigma * d) / (
                    2.0 * mode.sigma
                )
            if tail > _TAIL_POWER_LIMIT:
                raise ValidationError(
                    f"straight mode q={mode.order}: tail power {tail:.2e} outside "
                    f"the window exceeds {_TAIL_POWER_LIMIT:g}; widen x margins"
                )

    def _plane_grid(self, z):
        g = self.geometry
        edges = {g.x_left, g.x_right, g.core_x_lo, g.core_x_hi}
        if self.bend_geometry is not None:
            radii = [self.bend_geometry.radius]
            if not self.bend_geometry.is_disk:
                radii.append(self.bend_geometry.inner_radius)
            for radius in radii:
                if abs(z) < radius:
                    crossing = math.sqrt(radius * radius - z * z)
                    if g.x_left < crossing < g.x_right:
                        edges.add(crossing)
        cuts = sorted(edges)
        cuts = [c for c in cuts if g.x_left <= c <= g.x_right]
        xs, ws, mids = [], [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a < 1e-12:
                continue
            n_int = max(2, 2 * int(math.ceil((b - a) / (2.0 * g.x_step))))
            pts = np.linspace(a, b, n_int + 1)
            h = (b - a) / n_int
            w = np.full(n_int + 1, 2.0)
            w[1::2] = 4.0
            w[0] = w[-1] = 1.0
            w *= h / 3.0
            xs.append(pts)
            ws.append(w)
            mids.append(np.full(n_int + 1, 0.5 * (a + b)))
        return np.concatenate(xs), np.concatenate(ws), np.concatenate(mids)

    def _inside_cavity_core(self, mid_x, z):
        geo = self.bend_geometry
        r_mid = np.hypot(mid_x, z)
        inside = r_mid <= geo.radius
        if not geo.is_disk:
            inside &= r_mid >= geo.inner_radius
        return inside

    def _bend_self_bracket(self, mode, table, z):
        x, w, _ = self._plane_grid(z)
        f = bend_field_from_table(mode, table, x, np.full_like(x, z))
        if self.conjugate:
            return complex(-2.0 * np.sum(w * np.real(f.e_y * np.conj(f.h_x))))
        return complex(-2.0 * np.sum(w * f.e_y * f.h_x))

    # -- overlap assembly -----------------------------------------------

    def _assemble(self, z):
        key = round(z, 12)
        hit = self._plane_cache.get(key)
        if hit is not None:
            return hit
        x, w, mid = self._plane_grid(z)
        n = self.n_total
        ey = np.empty((n, x.size), dtype=complex)
        hx = np.empty((n, x.size), dtype=complex)
        z_arr = np.full_like(x, z)
        for p, (mode, table) in enumerate(zip(self.bend_modes, self._tables)):
            f = bend_field_from_table(mode, table, x, z_arr)
            scale = mode.normalization
            ey[p] = f.e_y * scale
            hx[p] = f.h_x * scale
        for q, mode in enumerate(self.straight_modes):
            f = evaluate_straight_field(mode, x, z)
            ey[self.n_bend + q] = f.e_y
            hx[self.n_bend + q] = f.h_x

        if self.conjugate:
            m_mat = -((ey * w) @ hx.conj().T + (hx * w) @ ey.conj().T)
        else:
            m_mat = -((ey * w) @ hx.T + (hx * w) @ ey.T)

        # row-dependent permittivity contrast (full structure minus the
        # structure that supports the row mode)
        g = self.geometry
        delta = np.zeros((n, x.size))
        if self.n_bend:
            ns2 = self.straight_modes[0].geometry.core_index ** 2 if self.straight_modes else None
            nb2 = self.bend_geometry.background_index ** 2
            if ns2 is not None:
                bus = (mid >= g.core_x_lo) & (mid <= g.core_x_hi)
                delta[: self.n_bend, :] = np.where(bus, ns2 - nb2, 0.0)
        if self.n_straight and self.bend_geometry is not None:
            nc2 = self.bend_geometry.core_index ** 2
            nb2 = self.bend_geometry.background_index ** 2
            cavity = self._inside_cavity_core(mid, z)
            delta[self.n_bend :, :] = np.where(cavity, nc2 - nb2, 0.0)

        if self.conjugate:
            f_mat = -1j * self.k * ((ey * (w * delta)) @ ey.conj().T)
        else:
            f_mat = -1j * self.k * ((ey * (w * delta)) @ ey.T)

        cond = float(np.linalg.cond(m_mat))
        if cond > _CONDITION_LIMIT:
            raise ConvergenceError(
                f"overlap matrix ill-conditioned (cond={cond:.2e}) at z={z:.4f}",
                trace=[("z", z), ("cond", cond)],
            )
        g_mat = np.linalg.solve(m_mat, f_mat)
        out = (m_mat, f_mat, g_mat, cond)
        self._plane_cache[key] = out
        return out

    def overlap_system(self, z) -> OverlapSystem:
        m_mat, f_mat, _, _ = self._assemble(z)
        return OverlapSystem(m_matrix=m_mat, f_matrix=f_mat, z=z)

    # -- integration ------------------------------------------------------

    def _n_steps(self) -> int:
        span = self.geometry.z_out - self.geometry.z_in
        return max(1, int(math.ceil(span / self.geometry.z_step)))

    def _rk4(self, n_steps, y0):
        g = self.geometry
        span = g.z_out - g.z_in
        h = span / n_steps
        y = y0.astype(complex).copy()
        cond_peak = 0.0
        nodes = [g.z_in]
        states = [y.copy()]
        for i in range(n_steps):
            z0 = g.z_in + i * h
            _, _, g1, c1 = self._assemble(z0)
            _, _, g2, c2 = self._assemble(z0 + 0.5 * h)
            _, _, g3, c3 = self._assemble(z0 + h)
            cond_peak = max(cond_peak, c1, c2, c3)
            k1 = g1 @ y
            k2 = g2 @ (y + 0.5 * h * k1)
            k3 = g2 @ (y + 0.5 * h * k2)
            k4 = g3 @ (y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nodes.append(z0 + h)
            states.append(y.copy())
        return y, cond_peak, np.array(nodes), states

    def transfer_matrix(self, verify: bool = True):
        """T with C(z_o) = T C(z_i); integrates at z_step and z_step/2 and
        returns the refined result, erroring if they disagree."""
        eye = np.eye(self.n_total, dtype=complex)
        n = self._n_steps()
        t_coarse, cond1, _, _ = self._rk4(n, eye)
        t_fine, cond2, _, _ = self._rk4(2 * n, eye)
        delta = float(np.max(np.abs(t_fine - t_coarse)))
        if verify and delta > _STEP_REFINEMENT_TOL:
            raise ConvergenceError(
                f"transfer matrix not converged across step refinement "
                f"(delta={delta:.2e} at z_step={self.geometry.z_step}); reduce z_step",
                trace=[("delta", delta)],
            )
        return t_fine, max(cond1, cond2), delta

    def trajectory(self, c_in):
        """Amplitude trajectory C(z) at the fine-step nodes for one input."""
        y0 = np.asarray(c_in, dtype=complex)
        if y0.shape != (self.n_total,):
            raise ValidationError(
                f"input vector must have length {self.n_total}, got {y0.shape}"
            )
        _, _, nodes, states = self._rk4(2 * self._n_steps(), y0)
        return nodes, np.array(states)

    # -- port bookkeeping ------------------------------------------------

    def rim_angle(self, z_plane: float) -> float:
        radius = self.bend_geometry.radius
        return math.asin(max(-1.0, min(1.0, z_plane / radius)))

    def input_phases(self) -> np.ndarray:
        """C(z_i) entries for unit port amplitudes: ports are referenced
        to the rim crossing (bend) or the plane itself (straight)."""
        g = self.geometry
        phases = np.empty(self.n_total, dtype=complex)
        phi_in = self.rim_angle(g.z_in)
        for p, mode in enumerate(self.bend_modes):
            phases[p] = np.exp(1j * mode.angular_order * phi_in)
        for q, mode in enumerate(self.straight_modes):
            phases[self.n_bend + q] = np.exp(1j * mode.beta * g.z_in)
        return phases

    def projection_matrix(self, project_bend: bool = True) -> np.ndarray:
        """Output-port extraction applied to C(z_o).

        Each port family reads the total output field through its own
        subspace projection (Gram-matrix inverse times cross overlaps),
        then strips the isolated-mode propagation phase.  For straight
        ports this is the classic stabilization correction; applying the
        same to bend ports removes the output-plane wobble their raw
        coefficients inherit from radiative basis members.  project_bend
        False keeps raw bend coefficients (diagnostic only).
        """
        g = self.geometry
        m_out, _, _, _ = self._assemble(g.z_out)
        phi_out = self.rim_angle(g.z_out)
        nb, ns = self.n_bend, self.n_straight
        # gram[i, j] = bracket with the total field in the first slot:
        # <sum_j C_j E_j ; mode_i> = sum_j C_j M[j, i] = (M^T C)_i
        gram = m_out.T
        p_mat = np.zeros((self.n_total, self.n_total), dtype=complex)
        bend_cross = np.zeros((nb, ns), dtype=complex)
        if project_bend and nb and ns:
            bend_cross = np.linalg.solve(gram[:nb, :nb], gram[:nb, nb:])
        for p, mode in enumerate(self.bend_modes):
            phase = np.exp(-1j * mode.angular_order * phi_out)
            p_mat[p, p] = phase
            p_mat[p, nb:] = phase * bend_cross[p]
        if ns:
            straight_cross = np.linalg.solve(gram[nb:, nb:], gram[nb:, :nb])
            for q, mode in enumerate(self.straight_modes):
                i = nb + q
                phase = np.exp(-1j * mode.beta * g.z_out)
                p_mat[i, i] = phase
                p_mat[i, :nb] = phase * straight_cross[q]
        return p_mat

    def scattering_matrix(self) -> ScatteringMatrix:
        t_mat, cond_peak, delta = self.transfer_matrix()
        s = self.projection_matrix() @ t_mat @ np.diag(self.input_phases())
        return ScatteringMatrix(
            entries=s,
            wavelength=self.wavelength,
            bend_modes=tuple(self.bend_modes),
            straight_modes=tuple(self.straight_modes),
            geometry=self.geometry,
            condition_peak=cond_peak,
            step_refinement_delta=delta,
        )


# -- public operations ----------------------------------------------------


def assemble_overlaps(bend_modes, straight_modes, geometry, z) -> OverlapSystem:
    """Overlap system M, F at height z (modes normalized per the window)."""
    return CmtCoupler(bend_modes, straight_modes, geometry).overlap_system(z)


def integrate_cme(bend_modes, straight_modes, geometry, verify=True):
    """Transfer matrix T with C(z_o) = T C(z_i)."""
    coupler = CmtCoupler(bend_modes, straight_modes, geometry)
    t_mat, _, _ = coupler.transfer_matrix(verify=verify)
    return t_mat


def apply_projection(t_matrix, bend_modes, straight_modes, geometry) -> ScatteringMatrix:
    """Scattering matrix from a precomputed transfer matrix."""
    coupler = CmtCoupler(bend_modes, straight_modes, geometry)
    s = coupler.projection_matrix() @ t_matrix @ np.diag(coupler.input_phases())
    return ScatteringMatrix(
        entries=s,
        wavelength=coupler.wavelength,
        bend_modes=tuple(coupler.bend_modes),
        straight_modes=tuple(coupler.straight_modes),
        geometry=geometry,
        condition_peak=0.0,
        step_refinement_delta=0.0,
    )


_SCATTERING_CACHE = {}


def compute_scattering_matrix(
    bend_geometry: BendGeometry,
    slab_geometry: SlabGeometry,
    coupler_geometry: CouplerGeometry,
    wavelength: float,
    n_bend: int,
    n_straight: int,
    bend_orders: Optional[tuple] = None,
) -> ScatteringMatrix:
    """End-to-end coupler solve with per-(geometry, wavelength) caching.

    bend_orders selects specific radial orders (default 0..n_bend-1).
    """
    if bend_orders is not None:
        bend_orders = tuple(bend_orders)
    key = (
        bend_geometry,
        slab_geometry,
        coupler_geometry,
        round(wavelength, 15),
        n_bend,
        n_straight,
        bend_orders,
    )
    hit = _SCATTERING_CACHE.get(key)
    if hit is not None:
        return hit

    if bend_orders is None:
        bend_modes = find_bend_modes(bend_geometry, wavelength, n_bend)
    else:
        solved = find_bend_modes(bend_geometry, wavelength, max(bend_orders) + 1)
        bend_modes = [solved[p] for p in bend_orders]
    x_center = 0.5 * (coupler_geometry.core_x_lo + coupler_geometry.core_x_hi)
    straight_all = find_slab_modes(slab_geometry, wavelength, x_center=x_center)
    if len(straight_all) < n_straight:
        raise ValidationError(
            f"slab supports only {len(straight_all)} guided modes, "
            f"requested {n_straight}"
        )
    straight_modes = straight_all[:n_straight]
    coupler = CmtCoupler(bend_modes, straight_modes, coupler_geometry)
    result = coupler.scattering_matrix()
    _SCATTERING_CACHE[key] = result
    return result


def clear_cache():
    _SCATTERING_CACHE.clear()
