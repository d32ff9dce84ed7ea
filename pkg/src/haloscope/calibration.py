"""Dispersive-qubit calibration chain: Stark shift / dephasing model versus
drive detuning, joint fits for (kappa, chi, epsilon), absolute input photon
flux and operational counter efficiency.

All rates and detunings are ordinary frequencies in Hz (the /2pi values);
angular factors enter only the flux-to-power conversion.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .constants import H_PLANCK


class CalibrationFitError(RuntimeError):
    """Dispersive fit failure (non-convergence or parameter at a bound)."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class DispersiveParams:
    """Input-resonator and qubit parameters of the dispersive model (Hz)."""

    kappa_hz: float
    chi_hz: float
    epsilon_hz: float
    kappa_l_hz: float = 0.0
    nu0_hz: float = 7.3693e9

    def __post_init__(self):
        if self.kappa_hz <= 0:
            raise ValueError("kappa_hz must be positive")
        if self.kappa_l_hz < 0:
            raise ValueError("kappa_l_hz must be >= 0")
        if self.kappa_hz <= self.kappa_l_hz:
            raise ValueError("kappa_hz must exceed kappa_l_hz")
        if self.chi_hz == 0:
            raise ValueError("chi_hz must be nonzero")
        if self.epsilon_hz < 0:
            raise ValueError("epsilon_hz must be >= 0")
        if self.nu0_hz <= 0:
            raise ValueError("nu0_hz must be positive")


@dataclass(frozen=True)
class RamseyObservation:
    """Measured qubit frequency shift and excess dephasing at one drive
    detuning, with 1-sigma uncertainties (all Hz)."""

    detuning_hz: float
    domega_hz: float
    dgamma_hz: float
    err_domega_hz: float
    err_dgamma_hz: float

    def __post_init__(self):
        if self.err_domega_hz <= 0 or self.err_dgamma_hz <= 0:
            raise ValueError("uncertainties must be positive")


def stark_dephasing_model(delta_hz, p: DispersiveParams):
    """Drive-induced qubit frequency shift and dephasing (Hz) vs detuning.

    Closed rational form:  domega + i dgamma = -4 chi eps^2 /
    ((kappa + i chi)^2 + 4 delta^2).  Vectorized over ``delta_hz``.
    """
    delta = np.asarray(delta_hz, dtype=float)
    z = -4.0 * p.chi_hz * p.epsilon_hz**2 / (
        (p.kappa_hz + 1j * p.chi_hz) ** 2 + 4.0 * delta**2)
    if np.isscalar(delta_hz):
        return float(z.real), float(z.imag)
    return z.real, z.imag


def coherent_amplitudes(delta_hz, p: DispersiveParams):
    """Steady-state resonator amplitudes (alpha_g, alpha_e) under the drive,
    for the qubit in ground/excited state."""
    delta = np.asarray(delta_hz, dtype=float)
    alpha_g = p.epsilon_hz / (p.kappa_hz / 2.0 + 1j * (delta - p.chi_hz / 2.0))
    alpha_e = p.epsilon_hz / (p.kappa_hz / 2.0 + 1j * (delta + p.chi_hz / 2.0))
    return alpha_g, alpha_e


def stark_dephasing_from_amplitudes(delta_hz, p: DispersiveParams):
    """Same observables computed as -chi * conj(alpha_g) * alpha_e; agrees
    with the closed form to machine precision."""
    alpha_g, alpha_e = coherent_amplitudes(delta_hz, p)
    z = -p.chi_hz * np.conj(alpha_g) * alpha_e
    if np.isscalar(delta_hz):
        return float(z.real), float(z.imag)
    return z.real, z.imag


@dataclass(frozen=True)
class DispersiveFit:
    params: DispersiveParams
    kappa_err_hz: float
    chi_err_hz: float
    epsilon_err_hz: float
    covariance: np.ndarray
    chi2_reduced: float


def fit_dispersive(observations, nu0_hz: float = 7.3693e9,
                   kappa_l_hz: float = 0.0) -> DispersiveFit:
    """Weighted joint least squares of (domega, dgamma) observations.

    Requires >= 8 detunings spanning the resonance.  kappa, chi and
    epsilon are fitted; epsilon enters as the amplitude scale.  Raises
    :class:`CalibrationFitError` on non-convergence or a parameter stuck
    at its positivity bound.
    """
    obs = list(observations)
    if len(obs) < 8:
        raise ValueError("need at least 8 detunings")
    delta = np.array([o.detuning_hz for o in obs])
    if delta.max() <= 0 or delta.min() >= 0:
        raise ValueError("detunings must span the resonance (both signs)")
    y = np.concatenate([[o.domega_hz for o in obs],
                        [o.dgamma_hz for o in obs]])
    sigma = np.concatenate([[o.err_domega_hz for o in obs],
                            [o.err_dgamma_hz for o in obs]])

    dgamma = np.array([o.dgamma_hz for o in obs])
    chi0 = max(2.0 * abs(delta[np.argmax(dgamma)]), 4.0 * np.min(np.abs(np.diff(delta))))
    kappa0 = chi0 / 4.0
    eps0 = math.sqrt(max(dgamma.max(), 1e-12) * kappa0 / 2.0)

    def model(d, kappa, chi, eps):
        p = DispersiveParams(kappa_hz=kappa, chi_hz=chi, epsilon_hz=eps,
                             kappa_l_hz=0.0, nu0_hz=nu0_hz)
        dom, dgam = stark_dephasing_model(d, p)
        return np.concatenate([dom, dgam])

    lower = np.array([1e-3 * kappa0, 1e-3 * chi0, 0.0])
    upper = np.array([1e3 * kappa0, 1e3 * chi0, 1e3 * eps0])
    try:
        popt, pcov = curve_fit(
            model, delta, y, p0=[kappa0, chi0, eps0], sigma=sigma,
            absolute_sigma=True, bounds=(lower, upper), maxfev=20000)
    except RuntimeError as exc:
        raise CalibrationFitError(f"dispersive fit did not converge: {exc}",
                                  {"p0": [kappa0, chi0, eps0]}) from exc
    rel_to_bounds = np.minimum(np.abs(popt - lower), np.abs(popt - upper))
    scale = np.maximum(np.abs(popt), 1e-30)
    if np.any(rel_to_bounds / scale < 1e-6):
        raise CalibrationFitError("fitted parameter stuck at bound",
                                  {"popt": popt.tolist()})

    errs = np.sqrt(np.abs(np.diag(pcov)))
    resid = (model(delta, *popt) - y) / sigma
    dof = max(len(y) - 3, 1)
    params = DispersiveParams(kappa_hz=popt[0], chi_hz=popt[1],
                              epsilon_hz=popt[2], kappa_l_hz=kappa_l_hz,
                              nu0_hz=nu0_hz)
    return DispersiveFit(params=params, kappa_err_hz=errs[0],
                         chi_err_hz=errs[1], epsilon_err_hz=errs[2],
                         covariance=pcov,
                         chi2_reduced=float(np.sum(resid**2) / dof))


def input_photon_flux(p: DispersiveParams) -> dict:
    """Calibrated drive photon flux at the resonator input.

    From input-output relations, P_in = hbar w0 k |eps|^2 / (k - k_l)^2 with
    angular rates; in Hz units the flux is 2 pi kappa eps^2 / (kappa -
    kappa_l)^2.  Returns {"flux_s": photons/s, "power_w": watts}.
    """
    if p.kappa_hz <= p.kappa_l_hz:
        raise ValueError("kappa must exceed kappa_l")
    flux = 2.0 * math.pi * p.kappa_hz * p.epsilon_hz**2 / (
        p.kappa_hz - p.kappa_l_hz) ** 2
    return {"flux_s": flux, "power_w": flux * H_PLANCK * p.nu0_hz}


def operational_efficiency(rate_on_s: float, rate_off_s: float, flux_s: float,
                           excess_err_s: float | None = None,
                           flux_err_s: float = 0.0,
                           duration_s: float = 60.0) -> tuple:
    """Operational efficiency eta = (rate_on - rate_off) / flux.

    The uncertainty combines the excess-rate error (Poisson over
    ``duration_s`` when not given) and the flux calibration error in
    quadrature.  Returns (eta, eta_err).
    """
    if flux_s <= 0:
        raise ValueError("flux_s must be positive")
    if rate_on_s < rate_off_s:
        raise ValueError("rate_on_s must be >= rate_off_s")
    excess = rate_on_s - rate_off_s
    eta = excess / flux_s
    if excess_err_s is None:
        excess_err_s = math.sqrt((rate_on_s + rate_off_s) / duration_s)
    if excess == 0.0:
        return 0.0, excess_err_s / flux_s
    err = eta * math.sqrt((excess_err_s / excess) ** 2
                          + (flux_err_s / flux_s) ** 2)
    return eta, err
