"""2D circular microresonator add/drop filter simulator.

Frequency-domain coupled mode theory: analytic straight and bent
waveguide modes, bent-straight coupler scattering matrices, cavity loop
closure, wavelength sweeps, and field maps.
"""

__version__ = "0.1.0"
