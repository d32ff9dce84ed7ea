"""Single-microwave-photon-detector click-stream simulator.

Produces seeded, statistically faithful click streams: intrinsic and thermal
dark counts through a tunable Lorentzian buffer, an injected signal,
bounded efficiency drift, a common-mode rate random walk, and the detection
cycle dead-time accounting.  Streams are deterministic functions of the seed.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .constants import H_PLANCK, K_BOLTZMANN


@dataclass(frozen=True)
class SmpdParams:
    """Detector parameters.

    Rates are per second, frequencies in Hz, cycle timings in microseconds.
    ``dnu_det_hz`` is the effective detector bandwidth entering the thermal
    dark rate Gamma_th = eta * dnu_det * n_th; it is an operational input
    (default reproduces Gamma_th ~ 75 1/s at 44 mK with eta = 0.46).
    ``rate_random_walk`` is the diffusion coefficient of the common-mode
    rate random walk in (1/s)^2 per second.
    """

    kappa_b_hz: float = 0.7e6
    eta0: float = 0.46
    eta_drift_amplitude: float = 0.10
    eta_drift_tau_s: float = 180.0
    gamma_int_s: float = 10.0
    line_temperature_k: float = 0.044
    n_th_override: float | None = None
    dnu_det_hz: float = 5.05e5
    rate_random_walk: float = 5.0e-4
    pump_us: float = 10.5
    readout_us: float = 0.8
    latency_us: float = 0.7
    wait_us: float = 0.3
    pi_pulse_us: float = 0.2
    reset_excited_fraction: float = 0.119
    p_readout_e: float = 0.93
    p_th: float = 2e-4
    p_ground_misread: float = 5e-5
    calibration_flux_s: float = 20050.0

    def __post_init__(self):
        for name in ("kappa_b_hz", "eta_drift_tau_s", "pump_us", "readout_us",
                     "latency_us", "wait_us", "pi_pulse_us"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("eta_drift_amplitude", "gamma_int_s", "dnu_det_hz",
                     "rate_random_walk", "calibration_flux_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 < self.eta0 <= 1.0):
            raise ValueError("eta0 must be in (0, 1]")
        for name in ("reset_excited_fraction", "p_readout_e", "p_th",
                     "p_ground_misread"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be a probability")
        if self.line_temperature_k <= 0:
            raise ValueError("line_temperature_k must be positive")
        mean_us = self.mean_cycle_s * 1e6
        if not (12.0 <= mean_us <= 18.0):
            raise ValueError(f"mean cycle {mean_us:.3f} us outside [12, 18] us")

    @property
    def mean_cycle_s(self) -> float:
        """Mean detection-cycle duration; the excited-state reset branch
        replaces the idle wait with a pi pulse plus a second readout."""
        ground = self.pump_us + self.readout_us + self.latency_us + self.wait_us
        excited_extra = self.pi_pulse_us + self.readout_us - self.wait_us
        return (ground + self.reset_excited_fraction * excited_extra) * 1e-6

    def n_th(self, nu_hz):
        """Input-line thermal occupancy at frequency nu_hz (vectorized)."""
        if self.n_th_override is not None:
            if np.isscalar(nu_hz):
                return self.n_th_override
            return np.full(np.shape(nu_hz), self.n_th_override)
        x = H_PLANCK * np.asarray(nu_hz, dtype=float) / (
            K_BOLTZMANN * self.line_temperature_k)
        out = 1.0 / np.expm1(x)
        if np.isscalar(nu_hz):
            return float(out)
        return out

    def gamma_th_s(self, nu_hz: float) -> float:
        """Thermal dark rate eta0 * dnu_det * n_th at nominal efficiency."""
        return self.eta0 * self.dnu_det_hz * self.n_th(nu_hz)

    def gamma_dc_s(self, nu_hz: float) -> float:
        """Total operational dark-count rate at nominal efficiency."""
        return self.gamma_int_s + self.gamma_th_s(nu_hz)

    def detector_figures(self, nu_hz: float, q_a: float = 1e6):
        from .axion import DetectorFigures
        return DetectorFigures(
            eta=self.eta0,
            gamma_dc_s=self.gamma_dc_s(nu_hz),
            gamma_int_s=self.gamma_int_s,
            n_th=self.n_th(nu_hz),
            dnu_det_hz=self.dnu_det_hz,
            dnu_a_hz=nu_hz / q_a,
        )


@dataclass(frozen=True)
class TruthParams:
    """Ground truth of a simulated run.

    ``signal_rate_s``: photon rate at the cavity output (0 for background
    only).  ``k_b_true``: fractional excess of the on-resonance thermal rate
    over the sideband rate.  ``seed``: 64-bit stream seed.
    """

    signal_rate_s: float = 0.0
    k_b_true: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.signal_rate_s < 0:
            raise ValueError("signal_rate_s must be >= 0")
        if self.k_b_true < 0:
            raise ValueError("k_b_true must be >= 0")


def params_digest(params: SmpdParams, truth: TruthParams) -> str:
    payload = json.dumps([asdict(params), asdict(truth)], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def buffer_acceptance(delta_hz, kappa_b_hz: float):
    """Lorentzian buffer acceptance 1 / (1 + (2 delta / kappa_b)^2)."""
    if kappa_b_hz <= 0:
        raise ValueError("kappa_b_hz must be positive")
    delta = np.asarray(delta_hz, dtype=float)
    out = 1.0 / (1.0 + (2.0 * delta / kappa_b_hz) ** 2)
    if np.isscalar(delta_hz):
        return float(out)
    return out


def instantaneous_rate(state, params: SmpdParams, truth: TruthParams,
                       eta_s: float | None = None,
                       walk_s: float = 0.0) -> float:
    """Click rate (1/s) for a schedule state.

    Gamma = Gamma_int + eta * [dnu_det n_th (1 + k_b on_res)
            + signal_rate * acceptance(delta)] + walk, clipped at zero.
    ``eta_s`` defaults to the nominal efficiency; drift and walk values may
    be supplied by the caller (the stream generator samples them in time).
    """
    from .protocol import KIND_CALIBRATE, KIND_DETECT, PHASE_ON

    eta = params.eta0 if eta_s is None else eta_s
    if state.kind == KIND_DETECT:
        thermal = params.dnu_det_hz * params.n_th(state.nu_c_hz)
        if state.label == 0:
            thermal *= 1.0 + truth.k_b_true
        accepted = truth.signal_rate_s * buffer_acceptance(
            state.delta_hz, params.kappa_b_hz)
        rate = params.gamma_int_s + eta * (thermal + accepted) + walk_s
    elif state.kind == KIND_CALIBRATE and state.phase == PHASE_ON:
        thermal = params.dnu_det_hz * params.n_th(state.nu_c_hz)
        rate = (params.gamma_int_s
                + eta * (thermal + params.calibration_flux_s) + walk_s)
    else:
        return 0.0
    return max(rate, 0.0)


@dataclass(frozen=True)
class ClickRecord:
    t_s: float
    label: int
    phase: str  # "ON" | "OFF"


@dataclass
class ClickStream:
    """Timestamped detector clicks tagged with buffer label and phase."""

    t_s: np.ndarray
    label: np.ndarray
    phase: np.ndarray  # int8, 0=OFF 1=ON
    meta: dict = field(default_factory=dict)
    modulation: dict | None = None  # sampled drift/walk traces, not persisted

    def __len__(self):
        return len(self.t_s)

    def __getitem__(self, i) -> ClickRecord:
        return ClickRecord(t_s=float(self.t_s[i]), label=int(self.label[i]),
                           phase="ON" if self.phase[i] else "OFF")

    def save_text(self, path):
        header = dict(self.meta)
        lines = [f"# {k}={header[k]}" for k in sorted(header)]
        lines.append("# columns: t_s label phase")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
            for t, lab, ph in zip(self.t_s, self.label, self.phase):
                fh.write(f"{t:.9f} {lab:d} {'ON' if ph else 'OFF'}\n")

    @classmethod
    def load_text(cls, path) -> "ClickStream":
        meta = {}
        ts, labels, phases = [], [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        k, v = body.split("=", 1)
                        meta[k.strip()] = v.strip()
                    continue
                t, lab, ph = line.split()
                ts.append(float(t))
                labels.append(int(lab))
                phases.append(1 if ph == "ON" else 0)
        return cls(t_s=np.asarray(ts), label=np.asarray(labels, dtype=np.int8),
                   phase=np.asarray(phases, dtype=np.int8), meta=meta)

    def save_npz(self, path):
        np.savez_compressed(path, t_s=self.t_s, label=self.label,
                            phase=self.phase,
                            meta=np.array(json.dumps(self.meta)))

    @classmethod
    def load_npz(cls, path) -> "ClickStream":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        return cls(t_s=data["t_s"], label=data["label"].astype(np.int8),
                   phase=data["phase"].astype(np.int8), meta=meta)


def _ou_path(rng: np.random.Generator, n: int, dt: float, tau: float,
             stationary_std: float) -> np.ndarray:
    """Exact-discretization stationary Ornstein-Uhlenbeck path."""
    rho = math.exp(-dt / tau)
    innov = math.sqrt(1.0 - rho * rho) * stationary_std
    xi = rng.standard_normal(n)
    path = np.empty(n)
    path[0] = stationary_std * xi[0]
    for i in range(1, n):
        path[i] = rho * path[i - 1] + innov * xi[i]
    return path


def _walk_path(rng: np.random.Generator, n: int, dt: float,
               diffusion: float) -> np.ndarray:
    steps = rng.standard_normal(n - 1) * math.sqrt(diffusion * dt)
    return np.concatenate([[0.0], np.cumsum(steps)])


def generate_click_stream(schedule, params: SmpdParams, truth: TruthParams,
                          include_calibration_clicks: bool = False) -> ClickStream:
    """Thinning-based inhomogeneous Poisson sampling of detector clicks.

    Clicks are produced only inside active detection windows (and, when
    requested, inside signal-ON calibration windows), tagged with the
    schedule's label and phase.  Bitwise deterministic for a given seed.
    """
    from .protocol import KIND_CALIBRATE, KIND_DETECT, PHASE_ON

    rng = np.random.default_rng(truth.seed)
    end = schedule.end_s
    compression = schedule.compression

    # Drift and walk sampled on a regular grid; both processes are slow
    # compared to any block, so linear interpolation is exact enough.
    tau_drift = params.eta_drift_tau_s / compression
    dt_grid = max(min(tau_drift / 20.0, end / 64.0), end / 2_000_000)
    n_grid = int(math.ceil(end / dt_grid)) + 2
    grid_t = np.arange(n_grid) * dt_grid
    drift_u = _ou_path(rng, n_grid, dt_grid, tau_drift, stationary_std=0.5)
    drift_u = np.clip(drift_u, -1.0, 1.0)
    walk = _walk_path(rng, n_grid, dt_grid, params.rate_random_walk * compression)
    walk_clip = 5.0 * math.sqrt(params.rate_random_walk * compression * end) \
        * compression + 1e-12
    walk = np.clip(walk * compression, -walk_clip, walk_clip)

    live = schedule.kind == KIND_DETECT
    if include_calibration_clicks:
        live = live | ((schedule.kind == KIND_CALIBRATE)
                       & (schedule.phase == PHASE_ON))
    idx_live = np.flatnonzero(live)
    if idx_live.size == 0:
        return ClickStream(t_s=np.empty(0), label=np.empty(0, np.int8),
                           phase=np.empty(0, np.int8),
                           meta=_stream_meta(schedule, params, truth, 0.0, 0.0))

    starts = schedule.start_s[idx_live]
    durs = schedule.duration_s[idx_live]
    labels = schedule.label[idx_live]
    phases = schedule.phase[idx_live]
    kinds = schedule.kind[idx_live]
    nus = schedule.nu_at(starts + 0.5 * durs)

    # Per-block nominal-efficiency rate decomposition: Gamma = gamma_int
    # + eta * block_flux + walk.  block_flux carries thermal, bias, signal
    # and calibration-tone terms.
    n_th = np.atleast_1d(params.n_th(nus))
    thermal = params.dnu_det_hz * n_th * compression
    thermal = thermal * np.where(labels == 0, 1.0 + truth.k_b_true, 1.0)
    accepted = truth.signal_rate_s * compression * buffer_acceptance(
        labels.astype(float) * schedule.label_detuning_hz, params.kappa_b_hz)
    block_flux = thermal + accepted
    is_cal = (kinds == KIND_CALIBRATE) & (phases == PHASE_ON)
    block_flux = np.where(is_cal,
                          params.dnu_det_hz * n_th * compression
                          + params.calibration_flux_s * compression,
                          block_flux)

    gamma_int = params.gamma_int_s * compression
    eta_max = params.eta0 * (1.0 + params.eta_drift_amplitude)
    lam_max = gamma_int + eta_max * float(block_flux.max()) + walk_clip

    live_edges = np.concatenate([[0.0], np.cumsum(durs)])
    t_live_total = live_edges[-1]
    n_cand = rng.poisson(lam_max * t_live_total)
    u = np.sort(rng.uniform(0.0, t_live_total, n_cand))
    accept_u = rng.uniform(0.0, 1.0, n_cand)

    blk = np.searchsorted(live_edges, u, side="right") - 1
    blk = np.clip(blk, 0, len(durs) - 1)
    t_wall = starts[blk] + (u - live_edges[blk])

    eta_t = params.eta0 * (1.0 + params.eta_drift_amplitude
                           * np.interp(t_wall, grid_t, drift_u))
    walk_t = np.interp(t_wall, grid_t, walk)
    lam = np.clip(gamma_int + eta_t * block_flux[blk] + walk_t, 0.0, None)
    keep = accept_u < lam / lam_max

    stream = ClickStream(
        t_s=t_wall[keep],
        label=labels[blk[keep]].astype(np.int8),
        phase=phases[blk[keep]].astype(np.int8),
        meta=_stream_meta(schedule, params, truth, t_live_total, lam_max),
    )
    stream.meta["n_clicks"] = int(keep.sum())
    stream.modulation = {"t_s": grid_t, "eta": params.eta0 *
                         (1.0 + params.eta_drift_amplitude * drift_u),
                         "walk_s": walk}
    return stream


def _stream_meta(schedule, params, truth, t_live, lam_max) -> dict:
    return {
        "seed": truth.seed,
        "params_digest": params_digest(params, truth),
        "schedule_digest": schedule.digest(),
        "live_time_s": float(t_live),
        "rate_bound_s": float(lam_max),
        "compression": schedule.compression,
    }


def generate_clicks_per_cycle(params: SmpdParams, photon_rate_s: float,
                              duration_s: float, seed: int = 0) -> np.ndarray:
    """Per-cycle detection model for readout-fidelity studies.

    Walks the detection cycles one by one: a photon arriving within a cycle
    excites the qubit, the readout registers it with probability p(1|e),
    and a ground-state cycle can still click through the thermal qubit
    population or a ground misread.  Returns click timestamps (cycle ends).
    """
    rng = np.random.default_rng(seed)
    tau = params.mean_cycle_s
    n_cycles = int(duration_s / tau)
    p_photon = 1.0 - math.exp(-photon_rate_s * tau)
    excited = rng.uniform(size=n_cycles) < p_photon
    click_given_e = rng.uniform(size=n_cycles) < params.p_readout_e
    spurious = rng.uniform(size=n_cycles) < (params.p_th + params.p_ground_misread)
    clicked = np.where(excited, click_given_e, spurious)
    return (np.flatnonzero(clicked) + 1.0) * tau
