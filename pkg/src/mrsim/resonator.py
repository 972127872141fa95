"""Closed microresonator: loop solution, spectra, resonances, field maps.

Two bent-straight couplers (I at the x > 0 rim, II mirrored at x < 0)
are connected by the free cavity arcs.  With port vectors A (input bus),
C (add bus) and cavity vectors a, b, c, d at the coupler port planes,

    [b; B] = S_I [a; A],    [d; D] = S_II [c; C],
    c = diag(exp(-i gamma L1)) b,    a = diag(exp(-i gamma L2)) d,

which closes into a dense linear system for the circulating amplitudes.
Transmitted and dropped powers are |B|^2 and |D|^2 per straight mode
under unit input power.

Global frame: cavity center at the origin; bus 1 along +z at
x = R + g1 + w/2 carrying A -> B; bus 2 mirrored at negative x carrying
C -> D in -z; the cavity circulates counterclockwise (phi from +x
toward +z).
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bendmode import BendGeometry, RadialTable, bend_field_from_table
from .coupler import (
    CmtCoupler,
    CouplerGeometry,
    ScatteringMatrix,
    compute_scattering_matrix,
    make_coupler_geometry,
)
from .errors import ConvergenceError, ValidationError
from .waveguide import SlabGeometry, evaluate_straight_field, find_slab_modes


@dataclass(frozen=True)
class ResonatorConfig:
    """Full device description plus numerical controls."""

    bend_geometry: BendGeometry
    slab_geometry: SlabGeometry
    gap1: float
    gap2: float
    n_bend_modes: int = 3
    n_straight_modes: int = 1
    bend_orders: Optional[tuple] = None  # explicit radial orders, else 0..N_b-1
    x_step: float = 0.005
    z_step: float = 0.025
    x_margin_inner: float = 3.8
    x_margin_outer: float = 3.0
    coupler_half_z: Optional[float] = None  # default 0.7 R

    def __post_init__(self):
        if not (self.gap1 > 0 and self.gap2 > 0):
            raise ValidationError(
                f"gaps must be positive, got gap1={self.gap1}, gap2={self.gap2}"
            )
        if self.n_bend_modes < 1 or self.n_straight_modes < 1:
            raise ValidationError("need at least one bend and one straight mode")

    @property
    def half_z(self) -> float:
        if self.coupler_half_z is not None:
            return self.coupler_half_z
        return 0.7 * self.bend_geometry.radius

    def coupler_geometry(self, gap: float) -> CouplerGeometry:
        return make_coupler_geometry(
            self.bend_geometry,
            self.slab_geometry,
            gap,
            x_step=self.x_step,
            z_step=self.z_step,
            x_margin_inner=self.x_margin_inner,
            x_margin_outer=self.x_margin_outer,
            z_in=-self.half_z,
            z_out=self.half_z,
        )

    def orders(self) -> tuple:
        if self.bend_orders is not None:
            return tuple(self.bend_orders)
        return tuple(range(self.n_bend_modes))


@dataclass(frozen=True)
class LoopSolution:
    """Port and cavity amplitudes satisfying the loop equations."""

    wavelength: float
    input_amplitudes: np.ndarray  # A
    add_amplitudes: np.ndarray  # C
    through_amplitudes: np.ndarray  # B
    drop_amplitudes: np.ndarray  # D
    cavity_a: np.ndarray
    cavity_b: np.ndarray
    cavity_c: np.ndarray
    cavity_d: np.ndarray
    residual: float


@dataclass(frozen=True)
class SpectrumPoint:
    wavelength: float
    transmitted_power: np.ndarray  # per straight mode
    dropped_power: np.ndarray
    cavity_mode_powers: np.ndarray  # |b_p|^2 per bend mode

    @property
    def total_transmitted(self) -> float:
        return float(np.sum(self.transmitted_power))

    @property
    def total_dropped(self) -> float:
        return float(np.sum(self.dropped_power))


@dataclass(frozen=True)
class Resonance:
    wavelength: float
    dropped_power: float
    classification: str
    dominant_order: int


@dataclass
class FieldMap:
    xs: np.ndarray
    zs: np.ndarray
    values: np.ndarray  # complex E_y, shape (len(xs), len(zs))
    wavelength: float


def segment_lengths(config: ResonatorConfig) -> dict:
    """Free cavity arc lengths between the coupler windows.

    The couplers cover the rim between their port-plane crossings; the
    remaining arc splits into segment 1 (coupler I output to coupler II
    input, through phi = pi/2) and segment 2 (II output to I input).
    """
    radius = config.bend_geometry.radius
    half_z = config.half_z
    if half_z > radius:
        raise ValidationError("coupler window exceeds the rim (theta >= pi/2)")
    theta = math.asin(half_z / radius)
    l_arc = radius * (math.pi - 2.0 * theta)
    return {"L1": l_arc, "L2": l_arc, "theta_w": theta}


def solve_loop(
    s1: ScatteringMatrix,
    s2: ScatteringMatrix,
    l1: float,
    l2: float,
    inputs: np.ndarray,
    add: np.ndarray,
) -> LoopSolution:
    """Solve the closed two-coupler system for all port amplitudes."""
    nb = s1.n_bend
    ns = s1.n_straight
    if s2.n_bend != nb or s2.n_straight != ns:
        raise ValidationError("coupler matrices have mismatched port counts")
    if abs(s1.wavelength - s2.wavelength) > 1e-15:
        raise ValidationError("coupler matrices have mismatched wavelengths")
    a_in = np.asarray(inputs, dtype=complex)
    c_in = np.asarray(add, dtype=complex)
    if a_in.shape != (ns,) or c_in.shape != (ns,):
        raise ValidationError(f"input/add vectors must have length {ns}")

    gammas = np.array([m.gamma for m in s1.bend_modes])
    p1 = np.exp(-1j * gammas * l1)
    p2 = np.exp(-1j * gammas * l2)

    s1_bb = s1.entries[:nb, :nb]
    s1_ba = s1.entries[:nb, nb:]
    s1_sb = s1.entries[nb:, :nb]
    s1_sa = s1.entries[nb:, nb:]
    s2_bb = s2.entries[:nb, :nb]
    s2_bc = s2.entries[:nb, nb:]
    s2_sb = s2.entries[nb:, :nb]
    s2_sc = s2.entries[nb:, nb:]

    # a = P2 (S2_db P1 (S1_bb a + S1_bA A) + S2_dC C)
    g_loop = (p2[:, None] * s2_bb) @ (p1[:, None] * s1_bb)
    rhs = (p2[:, None] * s2_bb) @ (p1 * (s1_ba @ a_in)) + p2 * (s2_bc @ c_in)
    system = np.eye(nb, dtype=complex) - g_loop
    try:
        a_vec = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            f"singular loop system (unit loop gain): {exc}",
            trace=[("l1", l1), ("l2", l2)],
        ) from exc

    b_vec = s1_bb @ a_vec + s1_ba @ a_in
    big_b = s1_sb @ a_vec + s1_sa @ a_in
    c_vec = p1 * b_vec
    d_vec = s2_bb @ c_vec + s2_bc @ c_in
    big_d = s2_sb @ c_vec + s2_sc @ c_in

    res = 0.0
    res = max(res, float(np.max(np.abs(b_vec - (s1_bb @ a_vec + s1_ba @ a_in)))))
    res = max(res, float(np.max(np.abs(c_vec - p1 * b_vec))))
    res = max(res, float(np.max(np.abs(a_vec - p2 * d_vec))))
    scale = max(1.0, float(np.max(np.abs(a_vec))), float(np.max(np.abs(b_vec))))
    return LoopSolution(
        wavelength=s1.wavelength,
        input_amplitudes=a_in,
        add_amplitudes=c_in,
        through_amplitudes=big_b,
        drop_amplitudes=big_d,
        cavity_a=a_vec,
        cavity_b=b_vec,
        cavity_c=c_vec,
        cavity_d=d_vec,
        residual=res / scale,
    )


def _couplers_for(config: ResonatorConfig, wavelength: float):
    geo1 = config.coupler_geometry(config.gap1)
    s1 = compute_scattering_matrix(
        config.bend_geometry,
        config.slab_geometry,
        geo1,
        wavelength,
        config.n_bend_modes,
        config.n_straight_modes,
        bend_orders=config.orders(),
    )
    if config.gap2 == config.gap1:
        return s1, s1
    geo2 = config.coupler_geometry(config.gap2)
    s2 = compute_scattering_matrix(
        config.bend_geometry,
        config.slab_geometry,
        geo2,
        wavelength,
        config.n_bend_modes,
        config.n_straight_modes,
        bend_orders=config.orders(),
    )
    return s1, s2


def solve_at(config: ResonatorConfig, wavelength: float,
             inputs=None, add=None) -> LoopSolution:
    """Loop solution at one wavelength (unit fundamental input default)."""
    ns = config.n_straight_modes
    if inputs is None:
        inputs = np.zeros(ns, dtype=complex)
        inputs[0] = 1.0
    if add is None:
        add = np.zeros(ns, dtype=complex)
    s1, s2 = _couplers_for(config, wavelength)
    seg = segment_lengths(config)
    return solve_loop(s1, s2, seg["L1"], seg["L2"], inputs, add)


def spectrum_point(config: ResonatorConfig, wavelength: float) -> SpectrumPoint:
    sol = solve_at(config, wavelength)
    return SpectrumPoint(
        wavelength=wavelength,
        transmitted_power=np.abs(sol.through_amplitudes) ** 2,
        dropped_power=np.abs(sol.drop_amplitudes) ** 2,
        cavity_mode_powers=np.abs(sol.cavity_b) ** 2,
    )


def _spectrum_worker(args):
    config, wavelength = args
    point = spectrum_point(config, wavelength)
    return (
        point.wavelength,
        point.transmitted_power,
        point.dropped_power,
        point.cavity_mode_powers,
    )


def compute_spectrum(
    config: ResonatorConfig,
    lambda_start: float,
    lambda_stop: float,
    lambda_step: float,
    workers: int = 1,
):
    """Wavelength sweep with unit power in the fundamental input mode.

    Each point is an independent solve; with workers > 1 the points are
    distributed over processes and reassembled in wavelength order, so
    the result is identical to the serial sweep.
    """
    if not (0 < lambda_start <= lambda_stop):
        raise ValidationError("need 0 < lambda_start <= lambda_stop")
    if lambda_step <= 0:
        raise ValidationError("lambda_step must be positive")
    n_pts = int(math.floor((lambda_stop - lambda_start) / lambda_step + 1e-9)) + 1
    wavelengths = [lambda_start + i * lambda_step for i in range(n_pts)]
    if workers > 1 and n_pts > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_spectrum_worker, [(config, w) for w in wavelengths],
                                 chunksize=max(1, n_pts // (4 * workers))))
    else:
        rows = [_spectrum_worker((config, w)) for w in wavelengths]
    points = [
        SpectrumPoint(
            wavelength=w,
            transmitted_power=pt,
            dropped_power=pd,
            cavity_mode_powers=pc,
        )
        for (w, pt, pd, pc) in rows
    ]
    return points


def find_resonances(spectrum, orders=None):
    """Interior maxima of total dropped power, refined by a local
    parabola; classified by the dominant circulating mode power."""
    if len(spectrum) < 3:
        raise ValidationError("need at least 3 spectral points")
    out = []
    for i in range(1, len(spectrum) - 1):
        p_prev = spectrum[i - 1].total_dropped
        p_here = spectrum[i].total_dropped
        p_next = spectrum[i + 1].total_dropped
        if not (p_here > p_prev and p_here > p_next):
            continue
        denom = p_prev - 2.0 * p_here + p_next
        if denom == 0:
            shift = 0.0
        else:
            shift = 0.5 * (p_prev - p_next) / denom
        step = spectrum[i + 1].wavelength - spectrum[i].wavelength
        dominant = int(np.argmax(spectrum[i].cavity_mode_powers))
        if orders is not None:
            dominant_order = orders[dominant]
        else:
            dominant_order = dominant
        out.append(
            Resonance(
                wavelength=spectrum[i].wavelength + shift * step,
                dropped_power=p_here,
                classification="fundamental" if dominant_order == 0 else "higher order",
                dominant_order=dominant_order,
            )
        )
    return out


# -- field maps -----------------------------------------------------------


class _ResonatorFields:
    """Piecewise field composition for the full structure."""

    def __init__(self, config: ResonatorConfig, wavelength: float,
                 inputs=None, add=None):
        self.config = config
        self.wavelength = wavelength
        ns = config.n_straight_modes
        if inputs is None:
            inputs = np.zeros(ns, dtype=complex)
            inputs[0] = 1.0
        if add is None:
            add = np.zeros(ns, dtype=complex)
        self.inputs = np.asarray(inputs, dtype=complex)
        self.add = np.asarray(add, dtype=complex)
        s1, s2 = _couplers_for(config, wavelength)
        self.s1, self.s2 = s1, s2
        seg = segment_lengths(config)
        self.theta_w = seg["theta_w"]
        self.solution = solve_loop(s1, s2, seg["L1"], seg["L2"], self.inputs, self.add)

        # coupler contexts for the interior superposition
        self.c1 = CmtCoupler(list(s1.bend_modes), list(s1.straight_modes),
                             s1.geometry)
        self.c2 = self.c1 if s2 is s1 else CmtCoupler(
            list(s2.bend_modes), list(s2.straight_modes), s2.geometry
        )
        nb = config.n_bend_modes
        sol = self.solution
        in1 = np.concatenate([sol.cavity_a, self.inputs])
        in2 = np.concatenate([sol.cavity_c, self.add])
        self.traj1 = self.c1.trajectory(self.c1.input_phases() * in1)
        self.traj2 = self.c2.trajectory(self.c2.input_phases() * in2)
        r_far = config.bend_geometry.radius + config.gap1 + config.gap2 + 20.0
        self.tables = [RadialTable(m, r_max=r_far) for m in s1.bend_modes]

    def _coupler_field(self, coupler, traj, x_local, z_local):
        nodes, states = traj
        idx = np.clip(np.searchsorted(nodes, z_local), 1, len(nodes) - 1)
        t = (z_local - nodes[idx - 1]) / (nodes[idx] - nodes[idx - 1])
        states = np.asarray(states)
        coeff = (1.0 - t)[..., None] * states[idx - 1] + t[..., None] * states[idx]
        total = np.zeros(np.shape(x_local), dtype=complex)
        for p, (mode, table) in enumerate(zip(coupler.bend_modes, coupler._tables)):
            f = bend_field_from_table(mode, table, x_local, z_local)
            total += coeff[..., p] * mode.normalization * f.e_y
        for q, mode in enumerate(coupler.straight_modes):
            f = evaluate_straight_field(mode, x_local, z_local)
            total += coeff[..., coupler.n_bend + q] * f.e_y
        return total

    def _segment_field(self, x, z, phi):
        """Bend superposition along the free arcs, amplitudes referenced
        to the segment entry ports."""
        sol = self.solution
        radius = self.config.bend_geometry.radius
        r = np.hypot(x, z)
        total = np.zeros(np.shape(x), dtype=complex)
        phi1_start = self.theta_w  # segment 1 entry (coupler I output)
        phi2_start = math.pi + self.theta_w  # segment 2 entry (II output)
        phi_mod = np.mod(phi, 2.0 * math.pi)
        in_seg1 = (phi_mod >= phi1_start) & (phi_mod <= math.pi - self.theta_w)
        in_seg2 = (phi_mod >= phi2_start) & (phi_mod <= 2.0 * math.pi - self.theta_w)
        for p, mode in enumerate(self.s1.bend_modes):
            psi, _ = self.tables[p](r)
            psi = psi * mode.normalization
            nu = mode.angular_order
            amp1 = sol.cavity_b[p] * np.exp(-1j * nu * (phi_mod - phi1_start))
            amp2 = sol.cavity_d[p] * np.exp(-1j * nu * (phi_mod - phi2_start))
            total += np.where(in_seg1, amp1 * psi, 0.0)
            total += np.where(in_seg2, amp2 * psi, 0.0)
        return total

    def _bus_field(self, x, z):
        """External straight waveguides with their port amplitudes."""
        sol = self.solution
        cfg = self.config
        half_z = cfg.half_z
        total = np.zeros(np.shape(x), dtype=complex)
        # bus 1 (x > 0): input A below the window, output B above
        for q, mode in enumerate(self.s1.straight_modes):
            before = z < -half_z
            after = z > half_z
            f = evaluate_straight_field(mode, x, z)
            profile = f.e_y * np.exp(1j * mode.beta * z)  # strip phase
            total += np.where(
                before,
                self.inputs[q] * profile * np.exp(-1j * mode.beta * (z + half_z)),
                0.0,
            )
            total += np.where(
                after,
                sol.through_amplitudes[q] * profile * np.exp(-1j * mode.beta * (z - half_z)),
                0.0,
            )
        # bus 2 (x < 0, local frame mirrored): C enters at global z > half_z,
        # D leaves toward global z < -half_z
        for q, mode in enumerate(self.s2.straight_modes):
            f = evaluate_straight_field(mode, -x, -z)
            profile = f.e_y * np.exp(1j * mode.beta * (-z))
            local_z = -z
            before = local_z < -half_z
            after = local_z > half_z
            total += np.where(
                before,
                self.add[q] * profile * np.exp(-1j * mode.beta * (local_z + half_z)),
                0.0,
            )
            total += np.where(
                after,
                sol.drop_amplitudes[q] * profile * np.exp(-1j * mode.beta * (local_z - half_z)),
                0.0,
            )
        return total

    def e_y(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        half_z = self.config.half_z
        g1 = self.c1.geometry
        g2 = self.c2.geometry
        in_c1 = (x >= g1.x_left) & (x <= g1.x_right) & (np.abs(z) <= half_z)
        # coupler II window in global coordinates (mirrored)
        in_c2 = (x <= -g2.x_left) & (x >= -g2.x_right) & (np.abs(z) <= half_z)
        out = np.zeros(np.shape(x), dtype=complex)
        if np.any(in_c1):
            out[in_c1] = self._coupler_field(self.c1, self.traj1, x[in_c1], z[in_c1])
        if np.any(in_c2):
            out[in_c2] = self._coupler_field(self.c2, self.traj2, -x[in_c2], -z[in_c2])
        rest = ~(in_c1 | in_c2)
        if np.any(rest):
            xr, zr = x[rest], z[rest]
            phi = np.arctan2(zr, xr)
            out[rest] = self._segment_field(xr, zr, phi) + self._bus_field(xr, zr)
        return out


def compose_field_map(config: ResonatorConfig, wavelength: float, xs, zs,
                      inputs=None, add=None) -> FieldMap:
    """E_y over a rectangular grid for the solved structure."""
    xs = np.asarray(xs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if xs.size == 0 or zs.size == 0:
        raise ValidationError("field map grid must be non-empty")
    if xs.size > 1 and np.any(np.diff(xs) <= 0):
        raise ValidationError("grid axes must be strictly increasing")
    if zs.size > 1 and np.any(np.diff(zs) <= 0):
        raise ValidationError("grid axes must be strictly increasing")
    fields = _ResonatorFields(config, wavelength, inputs=inputs, add=add)
    xx, zz = np.meshgrid(xs, zs, indexing="ij")
    values = fields.e_y(xx, zz)
    return FieldMap(xs=xs, zs=zs, values=values, wavelength=wavelength)
