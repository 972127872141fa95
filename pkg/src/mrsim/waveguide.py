"""Guided TE modes of the symmetric three-layer slab waveguide.

Profiles, propagation constants and overlaps are fully analytic.  Units:
lengths in micrometers, propagation constants in rad/um.  Fields follow
the exp(+i omega t), exp(-i beta z) convention with magnetic components
expressed in units where omega*mu0 equals the vacuum wavenumber k, so

    H_x = -(beta/k) E_y,      H_z = (i/k) dE_y/dx.

Modes are normalized to unit z-directed power flux in the sense
integral Re(E x H*)_z dx = 1, which makes the coupled-mode self overlap
bracket equal to 2 and |amplitude|^2 a power.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import ValidationError


@dataclass(frozen=True)
class SlabGeometry:
    """Symmetric slab: core of index core_index and width width (um)
    embedded in a background of index background_index."""

    core_index: float
    background_index: float
    width: float

    def __post_init__(self):
        if not (self.core_index > self.background_index >= 1.0):
            raise ValidationError(
                f"need core_index > background_index >= 1, got "
                f"core_index={self.core_index}, background_index={self.background_index}"
            )
        if not self.width > 0:
            raise ValidationError(f"width must be positive, got {self.width}")


@dataclass(frozen=True)
class StraightMode:
    """One guided TE slab mode at a fixed wavelength.

    kappa and sigma are the transverse wavenumber inside the core and the
    decay constant in the background; amplitude is the core field scale
    fixed by the power normalization; x_center locates the core axis.
    """

    geometry: SlabGeometry
    order: int
    wavelength: float
    beta: float
    kappa: float
    sigma: float
    amplitude: float
    x_center: float = 0.0

    @property
    def effective_index(self) -> float:
        return self.beta / (2.0 * math.pi / self.wavelength)

    @property
    def parity(self) -> int:
        """+1 for even (cosine) modes, -1 for odd (sine) modes."""
        return 1 if self.order % 2 == 0 else -1

    def dispersion_residual(self) -> float:
        """Value of the transcendental TE relation at this mode's root."""
        u = 0.5 * self.kappa * self.geometry.width
        v = 0.5 * self.sigma * self.geometry.width
        if self.parity > 0:
            return u * math.tan(u) - v
        return -u / math.tan(u) - v


class TEField(NamedTuple):
    e_y: np.ndarray
    h_x: np.ndarray
    h_z: np.ndarray


def mode_count(geometry: SlabGeometry, wavelength: float) -> int:
    """Number of guided TE modes from the V-number of the slab."""
    k = 2.0 * math.pi / wavelength
    v = k * geometry.width * math.sqrt(
        geometry.core_index ** 2 - geometry.background_index ** 2
    )
    return int(math.floor(v / math.pi)) + 1


def find_slab_modes(geometry: SlabGeometry, wavelength: float, x_center: float = 0.0):
    """All guided TE modes, ordered by descending effective index.

    Each mode's transcendental dispersion residual is below 1e-12; the
    returned count matches the analytic V-number count.
    """
    if not wavelength > 0:
        raise ValidationError(f"wavelength must be positive, got {wavelength}")
    k = 2.0 * math.pi / wavelength
    w = geometry.width
    ns, nb = geometry.core_index, geometry.background_index
    v_half = 0.5 * k * w * math.sqrt(ns * ns - nb * nb)

    modes = []
    m = 0
    while m * math.pi / 2.0 < v_half:
        lo = m * math.pi / 2.0
        hi = min((m + 1) * math.pi / 2.0, v_half)
        even = m % 2 == 0

        def relation(u):
            vv = math.sqrt(max(v_half * v_half - u * u, 0.0))
            if even:
                return u * math.tan(u) - vv
            return -u / math.tan(u) - vv

        eps = 1e-12 * max(1.0, hi)
        a, b = lo + eps, hi - eps
        fa, fb = relation(a), relation(b)
        if fa * fb > 0:
            m += 1
            continue
        u = brentq(relation, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        # Newton polish against the analytic derivative
        for _ in range(3):
            vv = math.sqrt(max(v_half * v_half - u * u, 0.0))
            if even:
                f = u * math.tan(u) - vv
                df = math.tan(u) + u / math.cos(u) ** 2 + u / max(vv, 1e-30)
            else:
                f = -u / math.tan(u) - vv
                df = -1.0 / math.tan(u) + u / math.sin(u) ** 2 + u / max(vv, 1e-30)
            step = f / df
            if abs(step) > 0.1:
                break
            u -= step
        kappa = 2.0 * u / w
        sigma = 2.0 * math.sqrt(max(v_half * v_half - u * u, 0.0)) / w
        beta_sq = ns * ns * k * k - kappa * kappa
        beta = math.sqrt(beta_sq)
        if not (nb * k < beta < ns * k):
            m += 1
            continue
        # power normalization: (beta/k) * integral psi^2 dx = 1
        if even:
            core = 0.5 * w + math.sin(2.0 * u) / (2.0 * kappa)
            tail = math.cos(u) ** 2 / sigma
        else:
            core = 0.5 * w - math.sin(2.0 * u) / (2.0 * kappa)
            tail = math.sin(u) ** 2 / sigma
        amplitude = 1.0 / math.sqrt((beta / k) * (core + tail))
        modes.append(
            StraightMode(
                geometry=geometry,
                order=m,
                wavelength=wavelength,
                beta=beta,
                kappa=kappa,
                sigma=sigma,
                amplitude=amplitude,
                x_center=x_center,
            )
        )
        m += 1
    return modes


def mode_profile(mode: StraightMode, x):
    """Transverse profile psi(x) and its derivative, both real arrays."""
    x = np.asarray(x, dtype=float)
    xr = x - mode.x_center
    half = 0.5 * mode.geometry.width
    a = mode.amplitude
    kap, sig = mode.kappa, mode.sigma
    u = kap * half
    inside = np.abs(xr) <= half
    sgn = np.sign(xr)
    tail = np.exp(-sig * np.clip(np.abs(xr) - half, 0.0, None))
    if mode.parity > 0:
        psi = np.where(inside, a * np.cos(kap * xr), a * math.cos(u) * tail)
        dpsi = np.where(
            inside, -a * kap * np.sin(kap * xr), -sgn * sig * a * math.cos(u) * tail
        )
    else:
        psi = np.where(inside, a * np.sin(kap * xr), sgn * a * math.sin(u) * tail)
        dpsi = np.where(
            inside, a * kap * np.cos(kap * xr), -sig * a * math.sin(u) * tail
        )
    return psi, dpsi


def evaluate_straight_field(mode: StraightMode, x, z) -> TEField:
    """TE field components at (x, z), including the harmonic z-dependence."""
    psi, dpsi = mode_profile(mode, x)
    k = 2.0 * math.pi / mode.wavelength
    phase = np.exp(-1j * mode.beta * np.asarray(z, dtype=float))
    e_y = psi * phase
    h_x = -(mode.beta / k) * e_y
    h_z = (1j / k) * dpsi * phase
    return TEField(e_y, h_x, h_z)


def straight_overlap(mode_i: StraightMode, mode_j: StraightMode) -> complex:
    """Power-type overlap bracket restricted to straight-straight pairs.

    Equals 2 for i == j under the unit-power normalization and vanishes
    for distinct guided modes of the same slab; evaluated in closed form.
    """
    if mode_i.wavelength != mode_j.wavelength:
        raise ValidationError(
            f"wavelength mismatch: {mode_i.wavelength} vs {mode_j.wavelength}"
        )
    if mode_i.geometry != mode_j.geometry or mode_i.x_center != mode_j.x_center:
        raise ValidationError("overlap requires modes of the same waveguide")
    k = 2.0 * math.pi / mode_i.wavelength
    if mode_i.parity != mode_j.parity:
        return 0.0 + 0.0j
    half = 0.5 * mode_i.geometry.width
    ki, kj = mode_i.kappa, mode_j.kappa
    si, sj = mode_i.sigma, mode_j.sigma
    ai, aj = mode_i.amplitude, mode_j.amplitude
    ui, uj = ki * half, kj * half
    if mode_i.order == mode_j.order:
        return 2.0 + 0.0j
    if mode_i.parity > 0:
        core = _cos_cos_integral(ki, kj, half)
        edge_i, edge_j = math.cos(ui), math.cos(uj)
    else:
        core = _sin_sin_integral(ki, kj, half)
        edge_i, edge_j = math.sin(ui), math.sin(uj)
    tails = 2.0 * edge_i * edge_j / (si + sj)
    integral = ai * aj * (core + tails)
    return complex(((mode_i.beta + mode_j.beta) / k) * integral)


def _cos_cos_integral(ki, kj, half):
    # integral of cos(ki x) cos(kj x) over [-half, half], ki != kj
    return math.sin((ki - kj) * half) / (ki - kj) + math.sin((ki + kj) * half) / (
        ki + kj
    )


def _sin_sin_integral(ki, kj, half):
    return math.sin((ki - kj) * half) / (ki - kj) - math.sin((ki + kj) * half) / (
        ki + kj
    )
