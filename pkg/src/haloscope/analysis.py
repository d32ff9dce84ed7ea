"""From click streams to physics: count binning, Allan variance, bias,
likelihood-ratio significance, 95% CL count and power limits, exclusion
curves and scan-speed reporting.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .axion import HaloscopeConfig, g_limit_from_power
from .constants import frequency_to_mass_ev, photon_energy
from .protocol import KIND_DETECT, PHASE_OFF, ProtocolSchedule
from .smpd import ClickStream


class StreamScheduleMismatch(ValueError):
    """Stream and schedule do not share a provenance digest."""


@dataclass(frozen=True)
class CountWindow:
    """Paired on-resonance / sideband counts for one positioner step.

    ``duration_s`` is the live on-resonance counting time (the sideband live
    time is equal by construction); ``wall_s`` spans the whole step.
    """

    start_s: float
    duration_s: float
    wall_s: float
    n_c: int
    n_b: int
    nu_c_hz: float
    step_id: int

    def __post_init__(self):
        if self.n_c < 0 or self.n_b < 0:
            raise ValueError("counts must be >= 0")


def bin_counts(stream: ClickStream, schedule: ProtocolSchedule,
               check_digest: bool = True) -> list:
    """Group detect-phase clicks into per-step (N_c, N_b) windows.

    N_c counts label-0 clicks, N_b sums the four sideband labels over the
    same live time.  Windows exist for every step in the schedule, including
    steps with zero clicks.  Raises :class:`StreamScheduleMismatch` when the
    stream was generated against a different schedule.
    """
    if check_digest:
        want = stream.meta.get("schedule_digest")
        if want is not None and want != schedule.digest():
            raise StreamScheduleMismatch(
                f"stream digest {want} != schedule digest {schedule.digest()}")

    n_steps = int(schedule.step_id.max()) + 1 if len(schedule.step_id) else 0
    detect = (schedule.kind == KIND_DETECT) & (schedule.step_id >= 0)
    on_res = detect & (schedule.label == 0)

    live0 = np.bincount(schedule.step_id[on_res],
                        weights=schedule.duration_s[on_res],
                        minlength=n_steps)
    step_start = np.full(n_steps, np.inf)
    np.minimum.at(step_start, schedule.step_id[schedule.step_id >= 0],
                  schedule.start_s[schedule.step_id >= 0])
    step_end = np.full(n_steps, -np.inf)
    ends = schedule.start_s + schedule.duration_s
    np.maximum.at(step_end, schedule.step_id[schedule.step_id >= 0],
                  ends[schedule.step_id >= 0])

    if len(stream) > 0:
        blk = np.searchsorted(schedule.start_s, stream.t_s, side="right") - 1
        blk = np.clip(blk, 0, len(schedule.start_s) - 1)
        sid = schedule.step_id[blk]
        usable = (stream.phase == PHASE_OFF) & (sid >= 0) & \
            (schedule.kind[blk] == KIND_DETECT)
        sid = sid[usable]
        is_on = stream.label[usable] == 0
        n_c = np.bincount(sid[is_on], minlength=n_steps)
        n_b = np.bincount(sid[~is_on], minlength=n_steps)
    else:
        n_c = np.zeros(n_steps, dtype=int)
        n_b = np.zeros(n_steps, dtype=int)

    mid = 0.5 * (step_start + step_end)
    nus = schedule.nu_at(mid) if n_steps else np.empty(0)
    return [
        CountWindow(start_s=float(step_start[i]),
                    duration_s=float(live0[i]),
                    wall_s=float(step_end[i] - step_start[i]),
                    n_c=int(n_c[i]), n_b=int(n_b[i]),
                    nu_c_hz=float(np.atleast_1d(nus)[i]), step_id=i)
        for i in range(n_steps)
    ]


def allan_variance(series, taus, base_tau_s: float) -> np.ndarray:
    """Non-overlapping Allan variance of window-averaged values.

    ``series`` holds one value per base window of duration ``base_tau_s``;
    each requested tau must be an integer multiple of it and leave at least
    3 aggregated bins.  Returns sigma^2(tau) = 0.5 <(x_{i+1} - x_i)^2> of
    the aggregated means.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    out = np.empty(len(taus))
    for j, tau in enumerate(taus):
        m_float = tau / base_tau_s
        m = int(round(m_float))
        if m < 1 or abs(m_float - m) > 1e-6:
            raise ValueError(
                f"tau={tau} is not an integer multiple of base {base_tau_s}")
        n_agg = len(x) // m
        if n_agg < 3:
            raise ValueError(
                f"tau={tau} leaves {n_agg} aggregated bins; need >= 3")
        agg = x[: n_agg * m].reshape(n_agg, m).mean(axis=1)
        out[j] = 0.5 * np.mean(np.diff(agg) ** 2)
    return out


def default_taus(base_tau_s: float, n_windows: int, per_decade: int = 6) -> list:
    """Log-spaced integer-multiple taus leaving >= 3 aggregated bins."""
    m_max = n_windows // 3
    if m_max < 1:
        return []
    ms = sorted({int(round(10 ** e)) for e in
                 np.arange(0.0, math.log10(m_max) + 1e-9, 1.0 / per_decade)})
    return [m * base_tau_s for m in ms if 1 <= m <= m_max]


def estimate_bias(windows) -> float:
    """Pooled on/off count bias k_b = sum(N_c)/sum(N_b) - 1."""
    windows = list(windows)
    if not windows:
        raise ValueError("need at least one window")
    tot_c = sum(w.n_c for w in windows)
    tot_b = sum(w.n_b for w in windows)
    if tot_b == 0:
        raise ValueError("no sideband counts; bias undefined")
    return tot_c / tot_b - 1.0


@dataclass(frozen=True)
class SignificanceResult:
    s: float
    n_c_star: float
    n_b_star: float
    k_b: float


def significance_stat(n_c, n_b, k_b: float):
    """Likelihood-ratio significance of an on-resonance excess (vectorized).

    S = sqrt(2) { N_b ln[(k+2)N_b/(N_b+N_c)]
                + N_c ln[(k+2)N_c/((1+k)(N_b+N_c))] }^(1/2)

    which is the signed-free LR of free (mu_c, mu_b) against the single-
    parameter null mu_c = (1+k_b) mu_b.  Exactly zero at the balance point
    N_c = (1+k_b) N_b.
    """
    n_c = np.asarray(n_c, dtype=float)
    n_b = np.asarray(n_b, dtype=float)
    if np.any(n_c <= 0) or np.any(n_b <= 0):
        raise ValueError("counts must be positive")
    total = n_b + n_c
    t1 = n_b * np.log((k_b + 2.0) * n_b / total)
    t2 = n_c * np.log((k_b + 2.0) * n_c / ((1.0 + k_b) * total))
    s2 = 2.0 * (t1 + t2)
    balanced = np.abs(n_c - (1.0 + k_b) * n_b) <= 1e-9 * (1.0 + k_b) * n_b
    s = np.sqrt(np.clip(s2, 0.0, None))
    s = np.where(balanced, 0.0, s)
    if s.ndim == 0:
        return float(s)
    return s


def significance(n_c_star: float, n_b_star: float,
                 k_b: float) -> SignificanceResult:
    """Scalar significance with the large-sample validity warning."""
    if n_c_star <= 0 or n_b_star <= 0:
        raise ValueError("counts must be positive")
    if min(n_c_star, n_b_star) < 100:
        warnings.warn("counts below 100: large-sample (Wilks) regime is "
                      "marginal", RuntimeWarning)
    s = significance_stat(n_c_star, n_b_star, k_b)
    return SignificanceResult(s=float(s), n_c_star=n_c_star,
                              n_b_star=n_b_star, k_b=k_b)


def sigma_threshold_for_cl(cl: float) -> float:
    """Significance threshold for an upper limit at confidence ``cl``.

    95% maps to the stated 2-sigma convention; other levels use the
    two-sided Gaussian quantile.
    """
    if not (0.0 < cl < 1.0):
        raise ValueError("cl must be in (0, 1)")
    if abs(cl - 0.95) < 1e-12:
        return 2.0
    return float(norm.ppf(0.5 * (1.0 + cl)))


@dataclass(frozen=True)
class CountLimit:
    n95: int
    n95_continuous: float
    n_b_star: float
    k_b: float
    cl: float


def upper_limit_counts(n_b_star: float, k_b: float, cl: float = 0.95) -> CountLimit:
    """Smallest integer N_c >= (1+k_b) N_b with significance >= z(cl).

    Monotone bisection on the count axis; the continuous root of
    S(N) = z is reported alongside, the integer is the binding output.
    """
    if n_b_star <= 0:
        raise ValueError("n_b_star must be positive")
    z = sigma_threshold_for_cl(cl)
    base = (1.0 + k_b) * n_b_star

    def s_of(n):
        return significance_stat(n, n_b_star, k_b)

    lo = base
    hi = base + max(8.0, 4.0 * z * math.sqrt((1.0 + k_b) * (2.0 + k_b) * n_b_star))
    while s_of(hi) < z:
        hi = base + 2.0 * (hi - base)
    n95_cont = brentq(lambda n: s_of(n) - z, lo + 1e-9, hi, xtol=1e-6)

    lo_i = int(math.floor(base))
    hi_i = int(math.ceil(n95_cont))
    while not (s_of(hi_i) >= z and hi_i >= base):
        hi_i += 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if mid >= base and s_of(mid) >= z:
            hi_i = mid
        else:
            lo_i = mid
    return CountLimit(n95=hi_i, n95_continuous=float(n95_cont),
                      n_b_star=n_b_star, k_b=k_b, cl=cl)


def limit_power(n95_star: float, n_b_star: float, eta: float, nu_c_hz: float,
                dt_m_s: float = 600.0) -> float:
    """Excess-count limit converted to emitted signal power (W).

    P95 = h nu (N95 - N_b) / (eta dt_m): the detected excess is divided by
    the efficiency to refer the power to the cavity output.
    """
    if dt_m_s <= 0:
        raise ValueError("dt_m_s must be positive")
    if n95_star < n_b_star:
        raise ValueError("n95_star must be >= n_b_star")
    if not (0.0 < eta <= 1.0):
        raise ValueError("eta must be in (0, 1]")
    return photon_energy(nu_c_hz) * (n95_star - n_b_star) / (eta * dt_m_s)


@dataclass(frozen=True)
class Subinterval:
    windows: tuple
    n_c_star: int
    n_b_star: int
    start_s: float
    wall_s: float


def select_subinterval(windows, dt_m_s: float = 600.0) -> Subinterval:
    """Partition a step group into wall-clock sub-intervals of ``dt_m_s``
    and return the one with the lowest cavity counts (first on ties).

    Only sub-intervals with full live exposure compete: a truncated bucket
    at a group boundary would win on raw counts while representing less
    integration time.
    """
    windows = sorted(windows, key=lambda w: w.start_s)
    if not windows:
        raise ValueError("need at least one window")
    t0 = windows[0].start_s
    span = windows[-1].start_s + windows[-1].wall_s - t0
    if span < dt_m_s:
        warnings.warn(f"span {span:.1f} s shorter than dt_m={dt_m_s:.1f} s; "
                      "using a single truncated interval", RuntimeWarning)
    buckets = {}
    for w in windows:
        buckets.setdefault(int((w.start_s - t0) // dt_m_s), []).append(w)
    live = {k: sum(w.duration_s for w in ws) for k, ws in buckets.items()}
    full = 0.9 * max(live.values())
    candidates = [k for k in sorted(buckets) if live[k] >= full]
    best_key = None
    best_nc = None
    for key in candidates:
        nc = sum(w.n_c for w in buckets[key])
        if best_nc is None or nc < best_nc:
            best_nc, best_key = nc, key
    chosen = buckets[best_key]
    return Subinterval(
        windows=tuple(chosen),
        n_c_star=sum(w.n_c for w in chosen),
        n_b_star=sum(w.n_b for w in chosen),
        start_s=chosen[0].start_s,
        wall_s=chosen[-1].start_s + chosen[-1].wall_s - chosen[0].start_s,
    )


@dataclass(frozen=True)
class ExclusionPoint:
    nu_hz: float
    m_a_ev: float
    n95_star: int
    p95_w: float
    g_limit_gev_inv: float
    cl: float

    def __post_init__(self):
        if self.g_limit_gev_inv <= 0:
            raise ValueError("g_limit must be positive")
        if not (0.0 < self.cl < 1.0):
            raise ValueError("cl must be in (0, 1)")


@dataclass(frozen=True)
class ExclusionResult:
    points: tuple
    discoveries: tuple          # (nu_hz, significance) with S >= threshold
    scan_speed_hz_per_s: float
    scan_speed_mhz_per_day: float
    k_b: float
    dt_m_s: float


def group_by_linewidth(windows, linewidth_hz: float) -> list:
    """Split windows into consecutive cavity-linewidth frequency bins."""
    windows = sorted(windows, key=lambda w: (w.nu_c_hz, w.start_s))
    if not windows:
        return []
    nu0 = windows[0].nu_c_hz
    groups = {}
    for w in windows:
        groups.setdefault(int((w.nu_c_hz - nu0) / linewidth_hz), []).append(w)
    return [groups[k] for k in sorted(groups)]


def exclusion_curve(windows, cfg: HaloscopeConfig, eta: float,
                    k_b: float = 0.05, dt_m_s: float = 600.0,
                    cl: float = 0.95, discovery_sigma: float = 5.0,
                    linewidth_hz: float | None = None,
                    time_compression: float = 1.0) -> ExclusionResult:
    """Full inference chain: per cavity linewidth, select the best
    sub-interval, run the discovery test, set the count limit, convert to
    power and to a coupling limit.

    ``dt_m_s`` is the physical sub-interval duration; for a time-compressed
    stream the selection happens in the stream timebase (dt_m/f) while the
    power conversion and scan speed stay in physical time.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("need at least one window")
    if linewidth_hz is None:
        linewidth_hz = cfg.cavity_linewidth_hz
    select_dt = dt_m_s / time_compression

    points = []
    discoveries = []
    for group in group_by_linewidth(windows, linewidth_hz):
        sub = select_subinterval(group, select_dt)
        nu_bin = float(np.mean([w.nu_c_hz for w in group]))
        sig = significance(sub.n_c_star, sub.n_b_star, k_b)
        if sig.s >= discovery_sigma and sub.n_c_star > (1 + k_b) * sub.n_b_star:
            discoveries.append((nu_bin, sig.s))
        limit = upper_limit_counts(sub.n_b_star, k_b, cl)
        p95 = limit_power(limit.n95, sub.n_b_star, eta, nu_bin, dt_m_s)
        g95 = g_limit_from_power(p95, cfg.replace(nu_c_hz=nu_bin))
        points.append(ExclusionPoint(
            nu_hz=nu_bin, m_a_ev=frequency_to_mass_ev(nu_bin),
            n95_star=limit.n95, p95_w=p95, g_limit_gev_inv=g95, cl=cl))

    speed = linewidth_hz / dt_m_s
    return ExclusionResult(points=tuple(points), discoveries=tuple(discoveries),
                           scan_speed_hz_per_s=speed,
                           scan_speed_mhz_per_day=speed * 86400.0 / 1e6,
                           k_b=k_b, dt_m_s=dt_m_s)


def save_exclusion_text(result: ExclusionResult, path):
    with open(path, "w") as fh:
        fh.write("# columns: nu_hz m_a_ev n95 p95_w g_limit_gevinv cl\n")
        fh.write(f"# scan_speed_mhz_per_day={result.scan_speed_mhz_per_day:.4f}"
                 f" k_b={result.k_b} dt_m_s={result.dt_m_s}\n")
        for p in result.points:
            fh.write(f"{p.nu_hz:.3f} {p.m_a_ev:.9e} {p.n95_star:d} "
                     f"{p.p95_w:.6e} {p.g_limit_gev_inv:.6e} {p.cl:.3f}\n")
