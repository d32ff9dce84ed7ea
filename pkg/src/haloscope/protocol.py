"""Deterministic scheduler for the nested sensing cycles.

Cycle structure, innermost first:

  (i)   detection cycle, ~12.4 us mean (see SmpdParams timings)
  (ii)  detuning step: flux ramp + pause, 8001 dark cycles (signal OFF,
        the haloscope observation window), 801 efficiency cycles (signal ON)
  (iii) 16 detuning steps in the fixed pattern
        0 0 1 2 2 1 0 0 0 0 -1 -2 -2 -1 0 0  (labels in MHz off resonance)
  (iv)  nano-positioner pulse, 5 s wait, 36 repeats of (iii), padding
  (v)   10 repeats of (iv), one 78 s calibration slot, saving pad; 920 s

Labels +-1, +-2 mirror the label-0 time exactly, halving the haloscope duty
cycle to 50%.  Time compression scales every duration by 1/f while the
simulator scales rates by f, preserving all count statistics.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .smpd import SmpdParams

KIND_DETECT = 0
KIND_CALIBRATE = 1
KIND_TUNE = 2
KIND_WAIT = 3
KIND_NAMES = {KIND_DETECT: "DETECT", KIND_CALIBRATE: "CALIBRATE",
              KIND_TUNE: "TUNE", KIND_WAIT: "WAIT"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

PHASE_OFF = 0
PHASE_ON = 1

DETUNE_PATTERN = (0, 0, 1, 2, 2, 1, 0, 0, 0, 0, -1, -2, -2, -1, 0, 0)
LABEL_DETUNING_HZ = 1.0e6

DARK_CYCLES = 8001
EFFICIENCY_CYCLES = 801
FLUX_RAMP_S = 0.72e-3
RAMP_PAUSE_S = 0.1e-3
PATTERN_REPEATS = 36          # repeats of (iii) per positioner step
STEPS_PER_SUPER = 10          # cycles (iv) per super-cycle (v)
STEP_WAIT_S = 5.0             # post-pulse wait opening each (iv)
STEP_TARGET_S = 78.2          # wall-clock budget of one cycle (iv)
CALIBRATION_SLOT_S = 78.0
SUPER_CYCLE_S = 920.0
PULSES_PER_SUPER = STEPS_PER_SUPER + 1   # one extra pulse opens calibration

SPEED_CAP_HZ_PER_HOUR = 12e3


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TuningPlan:
    """Cavity frequency ramp: start, speed and span.

    The positioner fires once per cycle (iv) and once before each
    calibration slot; each pulse advances the frequency by ``step_hz``
    (derived from the speed unless overridden).
    """

    start_hz: float = 7.36940e9
    speed_hz_per_hour: float = 5e3
    span_hz: float = 4.2e5
    step_hz: float | None = None

    def __post_init__(self):
        if self.start_hz <= 0:
            raise ValueError("start_hz must be positive")
        if self.speed_hz_per_hour < 0 or self.span_hz < 0:
            raise ValueError("speed and span must be >= 0")
        if self.effective_speed_hz_per_hour > SPEED_CAP_HZ_PER_HOUR * (1 + 1e-9):
            raise ScheduleError(
                f"tuning speed {self.effective_speed_hz_per_hour:.1f} Hz/h "
                f"exceeds the {SPEED_CAP_HZ_PER_HOUR:.0f} Hz/h cap")

    @property
    def derived_step_hz(self) -> float:
        if self.step_hz is not None:
            return self.step_hz
        return self.speed_hz_per_hour / 3600.0 * SUPER_CYCLE_S / PULSES_PER_SUPER

    @property
    def effective_speed_hz_per_hour(self) -> float:
        if self.step_hz is None:
            return self.speed_hz_per_hour
        return self.step_hz * PULSES_PER_SUPER / SUPER_CYCLE_S * 3600.0

    def super_cycles_for_span(self) -> int:
        step = self.derived_step_hz
        if step == 0.0 or self.span_hz == 0.0:
            return 1
        return max(1, int(math.ceil((self.span_hz / step + 1) / PULSES_PER_SUPER)))


@dataclass(frozen=True)
class ScheduleState:
    label: int
    phase: int
    kind: int
    nu_c_hz: float
    delta_hz: float

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]

    @property
    def phase_name(self) -> str:
        return "ON" if self.phase == PHASE_ON else "OFF"


@dataclass
class ProtocolSchedule:
    """Immutable block sequence plus the cavity frequency step function."""

    start_s: np.ndarray
    duration_s: np.ndarray
    label: np.ndarray
    phase: np.ndarray
    kind: np.ndarray
    step_id: np.ndarray
    freq_knots_s: np.ndarray
    freq_values_hz: np.ndarray
    compression: float = 1.0
    n_super_cycles: int = 0
    label_detuning_hz: float = LABEL_DETUNING_HZ
    meta: dict = field(default_factory=dict)

    @property
    def end_s(self) -> float:
        return float(self.start_s[-1] + self.duration_s[-1])

    def nu_at(self, t_s):
        """Cavity frequency at time(s) t_s (piecewise constant)."""
        idx = np.searchsorted(self.freq_knots_s, np.asarray(t_s, float),
                              side="right") - 1
        idx = np.clip(idx, 0, len(self.freq_values_hz) - 1)
        out = self.freq_values_hz[idx]
        if np.isscalar(t_s):
            return float(out)
        return out

    def state_at(self, t_s: float) -> ScheduleState:
        """Block attributes at time t_s; half-open [start, start+duration)."""
        if t_s < 0.0 or t_s >= self.end_s:
            raise ValueError(f"t={t_s} outside schedule [0, {self.end_s})")
        i = int(np.searchsorted(self.start_s, t_s, side="right")) - 1
        lab = int(self.label[i])
        return ScheduleState(
            label=lab,
            phase=int(self.phase[i]),
            kind=int(self.kind[i]),
            nu_c_hz=self.nu_at(t_s),
            delta_hz=lab * self.label_detuning_hz,
        )

    def digest(self) -> str:
        # rounded to the text-serialization precision so that a schedule
        # survives a save/load round trip with its digest intact
        h = hashlib.sha256()
        h.update(np.asarray([len(self.start_s), self.n_super_cycles],
                            dtype=np.int64).tobytes())
        h.update(np.asarray([self.compression,
                             np.round(self.end_s, 6)]).tobytes())
        h.update(np.round(self.duration_s[:64], 9).tobytes())
        vals = np.round(self.freq_values_hz, 3)
        if len(vals) > 1:    # text reload drops repeated values
            vals = vals[np.concatenate([[True], np.diff(vals) != 0.0])]
        h.update(vals.tobytes())
        return h.hexdigest()[:16]

    def accounting(self) -> dict:
        """Duty-cycle and dead-time budget over the whole schedule."""
        detect = self.kind == KIND_DETECT
        on_res = detect & (self.label == 0)
        off_res = detect & (self.label != 0)
        wall = self.end_s
        t_detect = float(self.duration_s[detect].sum())
        t0 = float(self.duration_s[on_res].sum())
        tb = float(self.duration_s[off_res].sum())
        return {
            "wall_s": wall,
            "detect_s": t_detect,
            "label0_detect_s": t0,
            "sideband_detect_s": tb,
            "dead_s": wall - t_detect,
            "dead_fraction": (wall - t_detect) / wall,
            "duty_detect": t_detect / wall,
            "duty_label0": t0 / wall,
            "super_cycle_s": wall / self.n_super_cycles if self.n_super_cycles else wall,
        }

    def to_text(self, path):
        with open(path, "w") as fh:
            fh.write(f"# digest={self.digest()}\n")
            fh.write(f"# compression={self.compression}\n")
            fh.write(f"# n_super_cycles={self.n_super_cycles}\n")
            fh.write("# columns: start_s duration_s label phase kind nu_c_hz\n")
            nus = self.nu_at(self.start_s)
            for i in range(len(self.start_s)):
                fh.write(f"{self.start_s[i]:.9f} {self.duration_s[i]:.9f} "
                         f"{int(self.label[i])} "
                         f"{'ON' if self.phase[i] else 'OFF'} "
                         f"{KIND_NAMES[int(self.kind[i])]} {nus[i]:.3f}\n")

    @classmethod
    def from_text(cls, path) -> "ProtocolSchedule":
        meta = {}
        rows = []
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
                s, d, lab, ph, kind, nu = line.split()
                rows.append((float(s), float(d), int(lab),
                             PHASE_ON if ph == "ON" else PHASE_OFF,
                             KIND_CODES[kind], float(nu)))
        if not rows:
            raise ScheduleError("empty schedule file")
        arr = np.asarray([(r[0], r[1], r[5]) for r in rows])
        label = np.asarray([r[2] for r in rows], dtype=np.int8)
        phase = np.asarray([r[3] for r in rows], dtype=np.int8)
        kind = np.asarray([r[4] for r in rows], dtype=np.int8)
        start, dur, nus = arr[:, 0], arr[:, 1], arr[:, 2]
        compression = float(meta.get("compression", 1.0))

        # Reconstruct positioner steps: a (iv) opens with the 5 s wait and
        # ends at the super-cycle calibration slot; tail blocks get -1.
        step_wait = STEP_WAIT_S / compression
        is_step_start = (kind == KIND_WAIT) & np.isclose(dur, step_wait, rtol=1e-9)
        calib_off = (kind == KIND_CALIBRATE) & (phase == PHASE_OFF)
        pos = np.arange(len(rows))
        last_start = np.maximum.accumulate(np.where(is_step_start, pos, -1))
        last_calib = np.maximum.accumulate(np.where(calib_off, pos, -1))
        counter = np.cumsum(is_step_start) - 1
        step_id = np.where((last_start >= 0) & (last_start > last_calib),
                           counter, -1).astype(np.int32)

        change = np.concatenate([[True], np.diff(nus) != 0.0])
        knots = start[change]
        values = nus[change]
        return cls(start_s=start, duration_s=dur, label=label, phase=phase,
                   kind=kind, step_id=step_id, freq_knots_s=knots,
                   freq_values_hz=values, compression=compression,
                   n_super_cycles=int(meta.get("n_super_cycles", 0)),
                   meta=meta)


def _supercycle_template(smpd: SmpdParams) -> dict:
    """Relative block layout of one super-cycle, uncompressed seconds."""
    cycle = smpd.mean_cycle_s
    dark_s = DARK_CYCLES * cycle
    eff_s = EFFICIENCY_CYCLES * cycle
    tune_s = FLUX_RAMP_S + RAMP_PAUSE_S
    iii_s = len(DETUNE_PATTERN) * (tune_s + dark_s + eff_s)
    body_s = PATTERN_REPEATS * iii_s
    pad_iv = STEP_TARGET_S - STEP_WAIT_S - body_s
    if pad_iv < 0:
        raise ScheduleError(
            f"cycle timings leave no slack: 36 patterns take {body_s:.2f} s "
            f"> {STEP_TARGET_S - STEP_WAIT_S:.2f} s")
    save_pad = SUPER_CYCLE_S - STEPS_PER_SUPER * STEP_TARGET_S - CALIBRATION_SLOT_S
    if save_pad < 0:
        raise ScheduleError("super-cycle budget infeasible")

    durs, labs, phases, kinds, steps = [], [], [], [], []

    def add(d, lab, ph, kind, step):
        durs.append(d)
        labs.append(lab)
        phases.append(ph)
        kinds.append(kind)
        steps.append(step)

    for step in range(STEPS_PER_SUPER):
        add(STEP_WAIT_S, 0, PHASE_OFF, KIND_WAIT, step)
        for _ in range(PATTERN_REPEATS):
            for lab in DETUNE_PATTERN:
                add(tune_s, lab, PHASE_OFF, KIND_TUNE, step)
                add(dark_s, lab, PHASE_OFF, KIND_DETECT, step)
                add(eff_s, lab, PHASE_ON, KIND_CALIBRATE, step)
        add(pad_iv, 0, PHASE_OFF, KIND_WAIT, step)
    add(CALIBRATION_SLOT_S, 0, PHASE_OFF, KIND_CALIBRATE, -1)
    add(save_pad, 0, PHASE_OFF, KIND_WAIT, -1)

    durations = np.asarray(durs)
    rel_start = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
    # positioner pulses: at each (iv) start and at the calibration slot
    step_marks = (np.asarray(kinds) == KIND_WAIT) & \
        (durations == STEP_WAIT_S)
    pulse_rel = rel_start[step_marks]
    calib_rel = rel_start[(np.asarray(kinds) == KIND_CALIBRATE)
                          & (np.asarray(phases) == PHASE_OFF)]
    return {
        "durations": durations,
        "rel_start": rel_start,
        "label": np.asarray(labs, dtype=np.int8),
        "phase": np.asarray(phases, dtype=np.int8),
        "kind": np.asarray(kinds, dtype=np.int8),
        "step": np.asarray(steps, dtype=np.int32),
        "pulse_rel": np.concatenate([pulse_rel, calib_rel]),
        "total_s": float(durations.sum()),
    }


def build_schedule(smpd: SmpdParams, plan: TuningPlan,
                   n_super_cycles: int | None = None,
                   compression: float = 1.0) -> ProtocolSchedule:
    """Deterministic schedule for ``n_super_cycles`` super-cycles.

    When ``n_super_cycles`` is None it is derived from the plan span.
    ``compression`` > 1 shrinks every duration by that factor (statistical
    equivalence is preserved by the simulator scaling rates up by the same
    factor).
    """
    if compression <= 0:
        raise ValueError("compression must be positive")
    if n_super_cycles is None:
        n_super_cycles = plan.super_cycles_for_span()
    if n_super_cycles < 0:
        raise ValueError("n_super_cycles must be >= 0")

    tpl = _supercycle_template(smpd)
    n_blocks = len(tpl["durations"])
    if n_super_cycles == 0:
        empty = np.empty(0)
        return ProtocolSchedule(
            start_s=empty, duration_s=empty,
            label=np.empty(0, np.int8), phase=np.empty(0, np.int8),
            kind=np.empty(0, np.int8), step_id=np.empty(0, np.int32),
            freq_knots_s=np.asarray([0.0]),
            freq_values_hz=np.asarray([plan.start_hz]),
            compression=compression, n_super_cycles=0)

    scale = 1.0 / compression
    durations = np.tile(tpl["durations"] * scale, n_super_cycles)
    rel = tpl["rel_start"] * scale
    super_s = tpl["total_s"] * scale
    offsets = np.repeat(np.arange(n_super_cycles) * super_s, n_blocks)
    starts = np.tile(rel, n_super_cycles) + offsets

    label = np.tile(tpl["label"], n_super_cycles)
    phase = np.tile(tpl["phase"], n_super_cycles)
    kind = np.tile(tpl["kind"], n_super_cycles)
    step = np.tile(tpl["step"], n_super_cycles)
    bump = np.repeat(np.arange(n_super_cycles, dtype=np.int32) * STEPS_PER_SUPER,
                     n_blocks)
    step_id = np.where(step >= 0, step + bump, -1).astype(np.int32)

    pulse_rel = np.sort(tpl["pulse_rel"]) * scale
    knots = (np.arange(n_super_cycles)[:, None] * super_s
             + pulse_rel[None, :]).ravel()
    values = plan.start_hz + np.arange(knots.size) * plan.derived_step_hz

    return ProtocolSchedule(
        start_s=starts, duration_s=durations, label=label, phase=phase,
        kind=kind, step_id=step_id, freq_knots_s=knots,
        freq_values_hz=values, compression=compression,
        n_super_cycles=n_super_cycles,
        meta={"plan_start_hz": plan.start_hz,
              "plan_step_hz": plan.derived_step_hz,
              "speed_hz_per_hour": plan.effective_speed_hz_per_hour})


def schedule_state(schedule: ProtocolSchedule, t_s: float) -> ScheduleState:
    """Module-level alias of :meth:`ProtocolSchedule.state_at`."""
    return schedule.state_at(t_s)


def calibration_slots(schedule: ProtocolSchedule) -> list:
    """Calibration slots (one per super-cycle), haloscope spectroscopy first."""
    mask = (schedule.kind == KIND_CALIBRATE) & (schedule.phase == PHASE_OFF)
    idx = np.flatnonzero(mask)
    return [
        {"t_s": float(schedule.start_s[i]),
         "duration_s": float(schedule.duration_s[i]),
         "tasks": ("cavity-spectroscopy", "smpd-retune")}
        for i in idx
    ]


def cycle_timing(params: SmpdParams) -> dict:
    """Nested time accounting implied by the cycle structure.

    Returns the mean detection cycle, the dark-block and efficiency-block
    durations, the per-super-cycle haloscope time and the dead-time budget.
    """
    tpl = _supercycle_template(params)
    cycle = params.mean_cycle_s
    dark_s = DARK_CYCLES * cycle
    detect_s = float(tpl["durations"][tpl["kind"] == KIND_DETECT].sum())
    label0_s = detect_s / 2.0
    total = tpl["total_s"]
    return {
        "mean_cycle_s": cycle,
        "dark_block_s": dark_s,
        "efficiency_block_s": EFFICIENCY_CYCLES * cycle,
        "label0_detect_s": label0_s,
        "detect_s": detect_s,
        "super_cycle_s": total,
        "duty_fraction": detect_s / total,
        "dead_fraction": (total - detect_s) / total,
    }
