"""Axion haloscope signal power, photon rates and counting-vs-SQL figures.

All functions are pure and operate in SI units; the only natural-units
arithmetic (the signal-power and scan-rate formulas) is converted to SI in
:func:`axion_signal_power` and inherited from there.  Couplings are exposed
in GeV^-1.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import (
    ALPHA_FINE,
    GEV_PER_CM3_TO_J_PER_M3,
    GEV_TO_J,
    H_PLANCK,
    HBARC_JM,
    J_TO_EV,
    K_BOLTZMANN,
    LITER_TO_M3,
    MU_0,
    photon_energy,
)

G_GAMMA_KSVZ = -0.97
G_GAMMA_DFSZ = 0.36

# Peccei-Quinn scale convention: f_a / 10^12 GeV = 5.691 ueV / m_a.
FA_MA_PRODUCT_GEV_EV = 1e12 * 5.691e-6


@dataclass(frozen=True)
class HaloscopeConfig:
    """Magnet, cavity and axion-model parameters for the power formulas.

    Units are spelled in the field names; volumes in liters, fields in tesla,
    frequencies in Hz.  ``q_l`` may be passed for cross-checking and must then
    agree with q0/(1+beta).
    """

    g_gamma: float = G_GAMMA_KSVZ
    rho_a_gev_cm3: float = 0.45
    lambda_mev: float = 78.0
    b0_t: float = 2.0
    v_liter: float = 0.1
    c010: float = 0.64
    nu_c_hz: float = 7.3695e9
    q0: float = 9.0e5
    beta: float = 3.0
    q_a: float = 1.0e6
    q_l: float | None = field(default=None)

    def __post_init__(self):
        for name in ("rho_a_gev_cm3", "lambda_mev", "v_liter", "c010",
                     "nu_c_hz", "q0", "beta", "q_a"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.g_gamma == 0:
            raise ValueError("g_gamma must be nonzero")
        if self.b0_t < 0:
            raise ValueError("b0_t must be non-negative")
        if self.c010 > 1.0:
            raise ValueError(f"c010 must be <= 1, got {self.c010}")
        if self.q_l is not None:
            derived = self.q0 / (1.0 + self.beta)
            if not math.isclose(self.q_l, derived, rel_tol=1e-6):
                raise ValueError(
                    f"q_l={self.q_l} inconsistent with q0/(1+beta)={derived}")

    @property
    def q_loaded(self) -> float:
        """Loaded quality factor Q_L = Q0 / (1 + beta)."""
        return self.q0 / (1.0 + self.beta)

    @property
    def axion_linewidth_hz(self) -> float:
        """Signal linewidth nu_c / Q_a."""
        return self.nu_c_hz / self.q_a

    @property
    def cavity_linewidth_hz(self) -> float:
        """Loaded cavity linewidth nu_c / Q_L."""
        return self.nu_c_hz / self.q_loaded

    def replace(self, **kwargs) -> "HaloscopeConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(kwargs)
        return HaloscopeConfig(**fields)


@dataclass(frozen=True)
class DetectorFigures:
    """Operational single-photon-counter figures entering SNR comparisons.

    eta         operational efficiency, in (0, 1]
    gamma_dc_s  total dark-count rate [1/s]
    gamma_int_s intrinsic (non-thermal) dark rate [1/s]
    n_th        input-line thermal occupancy
    dnu_det_hz  effective detector bandwidth [Hz]
    dnu_a_hz    axion signal linewidth [Hz]
    """

    eta: float
    gamma_dc_s: float
    gamma_int_s: float
    n_th: float
    dnu_det_hz: float
    dnu_a_hz: float

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        for name in ("gamma_dc_s", "gamma_int_s", "n_th", "dnu_det_hz", "dnu_a_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gamma_int_s > self.gamma_dc_s:
            raise ValueError("gamma_int_s cannot exceed gamma_dc_s")


def thermal_occupation(nu_hz: float, temperature_k: float) -> float:
    """Bose-Einstein occupancy 1 / (exp(h nu / kB T) - 1)."""
    if nu_hz <= 0 or temperature_k <= 0:
        raise ValueError("frequency and temperature must be positive")
    x = H_PLANCK * nu_hz / (K_BOLTZMANN * temperature_k)
    return 1.0 / math.expm1(x)


def _antenna_factor(beta: float) -> float:
    # Extraction factor normalized to unity at critical coupling (beta = 1);
    # this normalization is what the benchmark power table is calibrated to.
    return 2.0 * beta / (1.0 + beta)


def axion_signal_power(cfg: HaloscopeConfig) -> float:
    """On-resonance axion conversion power at the antenna, in watts.

    Implements, in SI,

        P_a = g_gamma^2 (alpha/pi)^2 (rho_a hbar^3 c^3 / Lambda^4)
              * A(beta) * omega_c * (B0^2/mu0) * V * C010
              * Q_a Q_L / (Q_a + Q_L)

    with the antenna extraction factor A(beta) = 2 beta/(1+beta), i.e.
    normalized so that a critically coupled cavity delivers the full
    converted power.
    """
    rho_j_m3 = cfg.rho_a_gev_cm3 * GEV_PER_CM3_TO_J_PER_M3
    lambda_j = cfg.lambda_mev * 1e-3 * GEV_TO_J
    model_factor = (cfg.g_gamma * ALPHA_FINE / math.pi) ** 2
    halo_factor = HBARC_JM**3 * rho_j_m3 / lambda_j**4
    omega_c = 2.0 * math.pi * cfg.nu_c_hz
    q_eff = cfg.q_a * cfg.q_loaded / (cfg.q_a + cfg.q_loaded)
    return (model_factor * halo_factor * _antenna_factor(cfg.beta) * omega_c
            * cfg.b0_t**2 / MU_0 * cfg.v_liter * LITER_TO_M3 * cfg.c010 * q_eff)


def signal_photon_rate(cfg: HaloscopeConfig) -> float:
    """Signal photon rate P_a / (h nu_c), in photons per second."""
    return axion_signal_power(cfg) / photon_energy(cfg.nu_c_hz)


def coupling_conversions(nu_hz: float | None = None,
                         m_a_ev: float | None = None) -> dict:
    """Mass/frequency/PQ-scale conversions for the axion-photon coupling.

    Exactly one of ``nu_hz`` or ``m_a_ev`` must be given.  Returns a dict with
    ``m_a_ev``, ``nu_hz``, ``f_a_gev`` and ``g_agg_per_g_gamma`` (GeV^-1), the
    physical coupling per unit of the dimensionless model coupling:
    g_agg = g_gamma * alpha / (pi f_a).
    """
    if (nu_hz is None) == (m_a_ev is None):
        raise ValueError("give exactly one of nu_hz or m_a_ev")
    if nu_hz is not None:
        if nu_hz <= 0:
            raise ValueError("nu_hz must be positive")
        m_a_ev = H_PLANCK * nu_hz * J_TO_EV
    else:
        if m_a_ev <= 0:
            raise ValueError("m_a_ev must be positive")
        nu_hz = m_a_ev / (H_PLANCK * J_TO_EV)
    f_a_gev = FA_MA_PRODUCT_GEV_EV / m_a_ev
    return {
        "m_a_ev": m_a_ev,
        "nu_hz": nu_hz,
        "f_a_gev": f_a_gev,
        "g_agg_per_g_gamma": ALPHA_FINE / (math.pi * f_a_gev),
    }


def g_limit_from_power(p95_w: float, cfg: HaloscopeConfig) -> float:
    """Coupling |g_agg| (GeV^-1) whose signal power equals ``p95_w``.

    Uses the exact g^2 scaling of the power formula around the KSVZ
    benchmark; independent of the benchmark chosen.
    """
    if p95_w < 0:
        raise ValueError("p95_w must be >= 0")
    conv = coupling_conversions(nu_hz=cfg.nu_c_hz)
    g_ref = abs(cfg.g_gamma) * conv["g_agg_per_g_gamma"]
    p_ref = axion_signal_power(cfg)
    return g_ref * math.sqrt(p95_w / p_ref)


# Dimensionless FWHM of sqrt(x) exp(-x), solved once at import.
_MB_PEAK = 0.5
_MB_HALF = 0.5 * math.sqrt(_MB_PEAK) * math.exp(-_MB_PEAK)
_MB_X_LO = brentq(lambda x: math.sqrt(x) * math.exp(-x) - _MB_HALF, 1e-9, _MB_PEAK)
_MB_X_HI = brentq(lambda x: math.sqrt(x) * math.exp(-x) - _MB_HALF, _MB_PEAK, 20.0)
_MB_FWHM = _MB_X_HI - _MB_X_LO


def lineshape_scale_hz(nu_a_hz: float, q_a: float,
                       width_definition: str = "fwhm") -> float:
    """Scale parameter of the signal lineshape such that the chosen width
    measure equals nu_a / Q_a.

    width_definition: "fwhm" (default), "mean" (mean frequency offset,
    1.5*scale) or "rms" (rms offset, sqrt(1.5)*scale).
    """
    dnu = nu_a_hz / q_a
    if width_definition == "fwhm":
        return dnu / _MB_FWHM
    if width_definition == "mean":
        return dnu / 1.5
    if width_definition == "rms":
        return dnu / math.sqrt(1.5)
    raise ValueError(f"unknown width_definition {width_definition!r}")


def axion_lineshape(nu_hz, nu_a_hz: float, q_a: float = 1e6,
                    width_definition: str = "fwhm"):
    """Normalized signal spectral density (1/Hz) vs frequency.

    Maxwell-Boltzmann form in the offset x = nu - nu_a:
    p(nu) = (2/sqrt(pi)) sqrt(x)/s^1.5 exp(-x/s), zero below nu_a.
    Integrates to one; the width measure selected by ``width_definition``
    equals nu_a/Q_a.  Accepts scalars or arrays.
    """
    if nu_a_hz <= 0 or q_a <= 0:
        raise ValueError("nu_a_hz and q_a must be positive")
    s = lineshape_scale_hz(nu_a_hz, q_a, width_definition)
    nu = np.asarray(nu_hz, dtype=float)
    x = (nu - nu_a_hz) / s
    out = np.where(x > 0.0,
                   2.0 / math.sqrt(math.pi) * np.sqrt(np.clip(x, 0.0, None))
                   * np.exp(-np.clip(x, 0.0, None)) / s,
                   0.0)
    if np.isscalar(nu_hz):
        return float(out)
    return out


def scan_rate(cfg: HaloscopeConfig, snr_target: float, n_sys_j: float) -> float:
    """Search speed df/dt in Hz/s at fixed target significance.

    Closed form equivalent to

        df/dt = (g^4/Sigma^2)(rho^2/m^2)(B0^4 C^2 V^2 / N_sys^2)
                * (beta/(1+beta))^2 * Q_L Q_a^2/(Q_L+Q_a)

    evaluated as (P_a / (Sigma N_sys))^2 * (Q_a+Q_L)/(4 Q_L), which carries
    the same unit conversion as the power formula.
    """
    if snr_target <= 0 or n_sys_j <= 0:
        raise ValueError("snr_target and n_sys_j must be positive")
    p_a = axion_signal_power(cfg)
    q_l = cfg.q_loaded
    return (p_a / (snr_target * n_sys_j)) ** 2 * (cfg.q_a + q_l) / (4.0 * q_l)


def detection_snr(mode: str, p_a_w: float, nu_a_hz: float, t_s: float,
                  det: DetectorFigures) -> float:
    """Signal-to-noise after integrating for t_s seconds.

    mode "sql":     (P_a/h nu) sqrt(t / dnu_a)
    mode "counter": eta P_a t/h nu / sqrt(Gamma_dc t + eta P_a t/h nu),
    including signal shot noise.
    """
    if t_s <= 0:
        raise ValueError("t_s must be positive")
    if p_a_w < 0:
        raise ValueError("p_a_w must be >= 0")
    rate = p_a_w / photon_energy(nu_a_hz)
    mode = mode.lower()
    if mode == "sql":
        return rate * math.sqrt(t_s / det.dnu_a_hz)
    if mode == "counter":
        signal = det.eta * rate * t_s
        noise_var = det.gamma_dc_s * t_s + signal
        if noise_var == 0.0:
            return 0.0
        return signal / math.sqrt(noise_var)
    raise ValueError(f"unknown mode {mode!r}")


def speedup(det: DetectorFigures, dnu_c_hz: float) -> dict:
    """Scan-speed gain of photon counting over an SQL-limited receiver.

    R         = eta^2 dnu_a / Gamma_dc
    R_thermal = eta dnu_a / (n_th dnu_c)   (thermal-background-limited case,
                detector bandwidth matched to the cavity linewidth dnu_c)
    """
    if det.gamma_dc_s == 0.0:
        warnings.warn("gamma_dc = 0: speedup is unbounded", RuntimeWarning)
        r = math.inf
    else:
        r = det.eta**2 * det.dnu_a_hz / det.gamma_dc_s
    if det.n_th == 0.0 or dnu_c_hz == 0.0:
        r_th = math.inf
    else:
        r_th = det.eta * det.dnu_a_hz / (det.n_th * dnu_c_hz)
    return {"R": r, "R_thermal": r_th}


def measurement_time(mode: str, p_a_w: float, nu_a_hz: float,
                     snr_target: float, det: DetectorFigures) -> float:
    """Integration time to reach ``snr_target``, in seconds.

    mode "sql":     t = dnu_a (h nu SNR / P_a)^2
    mode "counter": t = (Gamma_dc/eta^2) (h nu SNR / P_a)^2
    """
    if p_a_w <= 0:
        raise ValueError("p_a_w must be positive")
    base = (photon_energy(nu_a_hz) * snr_target / p_a_w) ** 2
    mode = mode.lower()
    if mode == "sql":
        return det.dnu_a_hz * base
    if mode == "counter":
        return det.gamma_dc_s / det.eta**2 * base
    raise ValueError(f"unknown mode {mode!r}")
