"""Physical constants (CODATA 2018) and the unit conversions used package-wide.

Everything downstream works in SI (W, Hz, s, T, K, J).  Couplings are the one
exception: axion-photon couplings are quoted in GeV^-1, as is conventional.
The natural-units power and scan-rate formulas are converted to SI in exactly
one place (:mod:`haloscope.axion`) through the factors defined here.
"""

import math

# Defining SI constants (exact since the 2019 redefinition).
H_PLANCK = 6.62607015e-34       # J s
K_BOLTZMANN = 1.380649e-23      # J / K
E_CHARGE = 1.602176634e-19      # C
C_LIGHT = 299792458.0           # m / s

HBAR = H_PLANCK / (2.0 * math.pi)           # J s
MU_0 = 1.25663706212e-6                     # N / A^2
ALPHA_FINE = 7.2973525693e-3                # fine-structure constant

# Energy conversions.
EV_TO_J = E_CHARGE
GEV_TO_J = 1e9 * E_CHARGE
J_TO_EV = 1.0 / EV_TO_J

# hbar*c in J m; cubed it converts an energy^-3 to a volume and back.
HBARC_JM = HBAR * C_LIGHT

LITER_TO_M3 = 1e-3
GEV_PER_CM3_TO_J_PER_M3 = GEV_TO_J / 1e-6
YOCTOWATT = 1e-24


def photon_energy(nu_hz: float) -> float:
    """Energy of one photon at frequency nu_hz, in joules."""
    return H_PLANCK * nu_hz


def frequency_to_mass_ev(nu_hz: float) -> float:
    """Particle mass m = h*nu, in eV."""
    return H_PLANCK * nu_hz * J_TO_EV


def mass_ev_to_frequency(m_ev: float) -> float:
    """Frequency nu = m/h for a mass given in eV."""
    return m_ev * EV_TO_J / H_PLANCK
