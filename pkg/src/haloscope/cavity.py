"""One-port driven cavity: reflection spectrum, pulse response, spectroscopy
fits and resolution of the over/undercoupled ambiguity.

Rates are ordinary frequencies in Hz throughout (kappa = full linewidth);
angular factors appear only inside the time-domain integrator.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit


class CavityFitError(RuntimeError):
    """Spectroscopy fit failure; carries a residual report."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class CavityMode:
    """Cavity mode with external coupling and internal loss rates in Hz."""

    nu_c_hz: float
    kappa_ext_hz: float
    kappa_int_hz: float

    def __post_init__(self):
        if self.nu_c_hz <= 0:
            raise ValueError("nu_c_hz must be positive")
        if self.kappa_ext_hz < 0 or self.kappa_int_hz < 0:
            raise ValueError("coupling rates must be >= 0")
        if self.kappa_ext_hz + self.kappa_int_hz == 0:
            raise ValueError("total linewidth must be nonzero")

    @property
    def kappa_tot_hz(self) -> float:
        return self.kappa_ext_hz + self.kappa_int_hz

    @property
    def beta(self) -> float:
        return self.kappa_ext_hz / self.kappa_int_hz

    @property
    def q0(self) -> float:
        return self.nu_c_hz / self.kappa_int_hz

    @property
    def q_loaded(self) -> float:
        return self.nu_c_hz / self.kappa_tot_hz

    @classmethod
    def from_beta(cls, nu_c_hz: float, q_loaded: float, beta: float) -> "CavityMode":
        """Build a mode from loaded quality factor and coupling coefficient."""
        kappa = nu_c_hz / q_loaded
        return cls(nu_c_hz=nu_c_hz,
                   kappa_ext_hz=kappa * beta / (1.0 + beta),
                   kappa_int_hz=kappa / (1.0 + beta))


@dataclass(frozen=True)
class PulseDrive:
    """Piecewise-constant drive envelope at a fixed carrier detuning.

    ``edges_s`` are segment start times (first must be 0), ``amplitudes``
    the envelope value on each segment; the drive is zero after
    ``duration_s``.
    """

    detuning_hz: float
    edges_s: tuple
    amplitudes: tuple
    duration_s: float

    def __post_init__(self):
        if len(self.edges_s) != len(self.amplitudes) or not self.edges_s:
            raise ValueError("edges_s and amplitudes must be equal-length, non-empty")
        if self.edges_s[0] != 0.0:
            raise ValueError("first segment must start at t=0")
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("envelope must be non-negative")
        if not math.isfinite(self.duration_s) or self.duration_s <= 0:
            raise ValueError("duration_s must be finite and positive")
        if any(t2 <= t1 for t1, t2 in zip(self.edges_s, self.edges_s[1:])):
            raise ValueError("edges_s must be strictly increasing")
        if self.edges_s[-1] >= self.duration_s:
            raise ValueError("last edge must precede duration_s")

    @classmethod
    def square(cls, duration_s: float, amplitude: float = 1.0,
               detuning_hz: float = 0.0) -> "PulseDrive":
        return cls(detuning_hz=detuning_hz, edges_s=(0.0,),
                   amplitudes=(amplitude,), duration_s=duration_s)

    def amplitude_at(self, t_s):
        """Envelope value at time(s) t_s (vectorized)."""
        t = np.asarray(t_s, dtype=float)
        idx = np.searchsorted(self.edges_s, t, side="right") - 1
        amp = np.asarray(self.amplitudes, dtype=float)[np.clip(idx, 0, None)]
        amp = np.where((t < 0) | (t >= self.duration_s), 0.0, amp)
        return amp if amp.ndim else float(amp)


def reflection_coefficient(delta_hz, mode: CavityMode):
    """Complex one-port reflection Gamma(delta) = 1 - k_ext/(k/2 - i delta)."""
    delta = np.asarray(delta_hz, dtype=float)
    gamma = 1.0 - mode.kappa_ext_hz / (mode.kappa_tot_hz / 2.0 - 1j * delta)
    return gamma


def reflection_mag2(delta_hz, mode: CavityMode):
    """Reflected power fraction |Gamma(delta)|^2; ((beta-1)/(beta+1))^2 on
    resonance, 1 far off resonance."""
    out = np.abs(reflection_coefficient(delta_hz, mode)) ** 2
    if np.isscalar(delta_hz):
        return float(out)
    return out


def pulse_response(mode: CavityMode, drive: PulseDrive, t_grid,
                   max_step_s: float | None = None) -> np.ndarray:
    """Reflected power vs time for a pulsed drive.

    Integrates da/dt = (i 2 pi Delta - pi kappa_tot) a + sqrt(2 pi k_ext) s(t)
    with a fixed-step RK4 scheme and returns |s(t) - sqrt(2 pi k_ext) a(t)|^2
    on ``t_grid``.  The internal step is capped at 1/(20 kappa_tot); a larger
    requested ``max_step_s`` is refused.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    stable_step = 1.0 / (20.0 * mode.kappa_tot_hz)
    if max_step_s is None:
        max_step_s = stable_step
    elif max_step_s > stable_step:
        raise ValueError(
            f"max_step_s={max_step_s:.3e} exceeds the stability cap "
            f"1/(20 kappa_tot)={stable_step:.3e}")
    t_end = float(t_grid[-1])
    lam = 2j * math.pi * drive.detuning_hz - math.pi * mode.kappa_tot_hz
    coupling = math.sqrt(2.0 * math.pi * mode.kappa_ext_hz)

    # Integrate segment by segment so envelope steps land on node boundaries.
    boundaries = [e for e in drive.edges_s if e < t_end]
    boundaries += [min(drive.duration_s, t_end), t_end]
    boundaries = sorted(set([0.0] + boundaries))

    ts = [0.0]
    amps = [complex(0.0)]
    a = 0.0 + 0.0j
    for t0, t1 in zip(boundaries, boundaries[1:]):
        s = float(drive.amplitude_at(0.5 * (t0 + t1)))
        n = max(1, int(math.ceil((t1 - t0) / max_step_s)))
        h = (t1 - t0) / n
        b = coupling * s

        def deriv(x):
            return lam * x + b

        for _ in range(n):
            k1 = deriv(a)
            k2 = deriv(a + 0.5 * h * k1)
            k3 = deriv(a + 0.5 * h * k2)
            k4 = deriv(a + h * k3)
            a = a + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ts.append(ts[-1] + h)
            amps.append(a)
        # guard against accumulated rounding at the segment end
        ts[-1] = t1

    ts = np.asarray(ts)
    amps = np.asarray(amps)
    a_re = np.interp(t_grid, ts, amps.real)
    a_im = np.interp(t_grid, ts, amps.imag)
    s_out = drive.amplitude_at(t_grid) - coupling * (a_re + 1j * a_im)
    return np.abs(s_out) ** 2


def _dip_model(nu, amplitude, depth, nu_c, kappa):
    lorentz = 1.0 / (1.0 + 4.0 * (nu - nu_c) ** 2 / kappa**2)
    return amplitude * (1.0 - depth * lorentz)


@dataclass(frozen=True)
class SpectroscopyFit:
    """Lorentzian absorption-dip fit with the coupling ambiguity explicit."""

    nu_c_hz: float
    nu_c_err_hz: float
    linewidth_hz: float
    linewidth_err_hz: float
    dip_depth: float
    dip_depth_err: float
    amplitude: float
    q_loaded: float
    beta_candidates: tuple     # (overcoupled, undercoupled); product is 1
    q0_candidates: tuple       # Q0 = (1+beta) * Q_L for each candidate
    rms_residual: float


def betas_from_depth(depth: float) -> tuple:
    """Coupling coefficients compatible with an on-resonance dip depth
    d = 4 beta/(1+beta)^2; returns (beta, 1/beta) with beta >= 1."""
    if not (0.0 < depth <= 1.0):
        raise ValueError(f"dip depth must be in (0, 1], got {depth}")
    root = 2.0 * math.sqrt(1.0 - depth)
    over = (2.0 - depth + root) / depth
    return (over, 1.0 / over)


def fit_cavity_spectroscopy(counts_vs_freq) -> SpectroscopyFit:
    """Least-squares Lorentzian fit of a photon-count absorption dip.

    ``counts_vs_freq``: array of shape (N, 2) with columns (frequency Hz,
    counts).  Requires >= 7 points spanning >= 3 fitted linewidths.  Counts
    are Poisson-weighted.  Raises :class:`CavityFitError` when no resonance
    is present or the fit does not converge.
    """
    table = np.asarray(counts_vs_freq, dtype=float)
    if table.ndim != 2 or table.shape[1] != 2 or table.shape[0] < 7:
        raise ValueError("need an (N>=7, 2) table of (frequency, counts)")
    nu = table[:, 0]
    counts = table[:, 1]
    order = np.argsort(nu)
    nu, counts = nu[order], counts[order]

    baseline = np.median(np.concatenate([counts[:3], counts[-3:]]))
    depth_counts = baseline - counts.min()
    if depth_counts <= 5.0 * math.sqrt(max(baseline, 1.0)):
        raise CavityFitError("no resonance found",
                             {"baseline": baseline, "min_counts": counts.min()})

    nu0 = nu[np.argmin(counts)]
    half = baseline - 0.5 * depth_counts
    below = nu[counts < half]
    kappa0 = max(below.max() - below.min(), np.diff(nu).min()) if below.size else \
        (nu[-1] - nu[0]) / 4.0
    p0 = [baseline, depth_counts / baseline, nu0, kappa0]

    sigma = np.sqrt(np.clip(counts, 1.0, None))
    try:
        popt, pcov = curve_fit(_dip_model, nu, counts, p0=p0, sigma=sigma,
                               absolute_sigma=True, method="lm", maxfev=20000)
    except RuntimeError as exc:
        resid = counts - _dip_model(nu, *p0)
        raise CavityFitError(
            f"spectroscopy fit did not converge: {exc}",
            {"initial_guess": p0, "rms_residual": float(np.std(resid))}) from exc

    amplitude, depth, nu_c, kappa = popt
    kappa = abs(kappa)
    errs = np.sqrt(np.abs(np.diag(pcov)))
    if not np.all(np.isfinite(popt)):
        raise CavityFitError("fit returned non-finite parameters",
                             {"popt": popt.tolist()})
    span = nu[-1] - nu[0]
    if span < 3.0 * kappa:
        raise ValueError(
            f"frequency span {span:.3g} Hz covers fewer than 3 linewidths "
            f"(kappa={kappa:.3g} Hz)")

    depth_eff = min(depth, 1.0)
    beta_pair = betas_from_depth(depth_eff)
    q_loaded = nu_c / kappa
    resid = (counts - _dip_model(nu, *popt)) / sigma
    return SpectroscopyFit(
        nu_c_hz=nu_c,
        nu_c_err_hz=errs[2],
        linewidth_hz=kappa,
        linewidth_err_hz=errs[3],
        dip_depth=depth,
        dip_depth_err=errs[1],
        amplitude=amplitude,
        q_loaded=q_loaded,
        beta_candidates=beta_pair,
        q0_candidates=tuple((1.0 + b) * q_loaded for b in beta_pair),
        rms_residual=float(np.sqrt(np.mean(resid**2))),
    )


@dataclass(frozen=True)
class BetaSelection:
    beta: float | None
    residual_ratio: float
    ambiguous: bool
    rss: tuple


def _scaled_rss(response: np.ndarray, model: np.ndarray) -> float:
    # best-fit scale and offset absorb the click-rate calibration
    design = np.column_stack([model, np.ones_like(model)])
    coef, *_ = np.linalg.lstsq(design, response, rcond=None)
    resid = response - design @ coef
    return float(np.sum(resid**2))


def disambiguate_beta(t_s, response, drive: PulseDrive,
                      candidates: tuple) -> BetaSelection:
    """Select between an over/undercoupled candidate pair from the
    time-domain pulse response.

    ``candidates`` is a pair of :class:`CavityMode` sharing Q_L.  The
    measured ``response`` (arbitrary units vs ``t_s``) is compared to each
    candidate's modeled pulse response after a free scale/offset fit; the
    candidate with the lower residual wins.  A residual ratio below 2 is
    declared ambiguous and no selection is made.
    """
    t_s = np.asarray(t_s, dtype=float)
    response = np.asarray(response, dtype=float)
    if t_s.shape != response.shape:
        raise ValueError("t_s and response must have matching shapes")
    if len(candidates) != 2:
        raise ValueError("candidates must be an over/undercoupled pair")
    rss = []
    for mode in candidates:
        model = pulse_response(mode, drive, t_s)
        rss.append(_scaled_rss(response, model))
    best = int(np.argmin(rss))
    worst = 1 - best
    ratio = rss[worst] / rss[best] if rss[best] > 0 else math.inf
    if ratio < 2.0:
        return BetaSelection(beta=None, residual_ratio=ratio,
                             ambiguous=True, rss=tuple(rss))
    return BetaSelection(beta=candidates[best].beta, residual_ratio=ratio,
                         ambiguous=False, rss=tuple(rss))
