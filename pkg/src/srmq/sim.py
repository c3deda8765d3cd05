"""Closed-loop simulation harness.

Wires the phase model to a controller (scheduled Q-table, a single fixed
core, or the delta-modulation baseline), runs a deterministic fixed-step
loop with scenario events, and computes tracking metrics from the
recorded trace.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from . import qlearn, scheduler
from .plant import (InductanceSurface, MotorParams, PhaseState,
                    ReferenceProfile, inductance_at, reference_at)
from .scheduler import QCoreTable, SafetyAbortError

CONTROLLERS = ("scheduled-qlearning", "single-qcore", "delta-modulation")

TRACE_COLUMNS = ("k", "t_s", "theta_deg", "r_A", "x_A", "u_V",
                 "K1", "K2", "cell_row", "cell_col", "cost")

SETTLE_FRACTION = 0.05   # |x - r| below this fraction of the amplitude counts as settled


@dataclass(frozen=True)
class Scenario:
    """One reproducible closed-loop run."""

    motor: MotorParams
    surface: InductanceSurface
    reference: ReferenceProfile
    controller: str = "scheduled-qlearning"
    duration: int = 0              # steps; 0 means five electrical cycles
    seed: int = 0
    online_learning: bool = False
    dither: float = 0.0            # exploration voltage during online learning, V
    r_scale: float = 1.0           # deliberate plant-resistance mismatch factor
    fixed_core: tuple | None = None  # (row, col) for the single-qcore controller
    delta_band: float = 0.0        # hysteresis band for the baseline, A

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; "
                             f"expected one of {CONTROLLERS}")
        if self.steps <= 0:
            raise ValueError("duration must be positive")
        if self.dither < 0:
            raise ValueError("dither must be non-negative")
        if self.r_scale <= 0:
            raise ValueError("r_scale must be positive")

    @property
    def steps(self) -> int:
        return self.duration if self.duration > 0 else 5 * self.motor.steps_per_cycle


@dataclass
class SimTrace:
    """Per-step record of the closed loop, as parallel arrays."""

    k: np.ndarray
    t: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    x: np.ndarray
    u: np.ndarray
    K: np.ndarray       # (n, 2) active gains
    cell: np.ndarray    # (n, 2) int, (-1, -1) for the baseline
    cost: np.ndarray
    summary: "Metrics | None" = None

    def __len__(self):
        return self.k.size


@dataclass
class Metrics:
    """Tracking quality over conduction windows (reference > 0).

    rmse includes each window's turn-on transient; rmse_settled is
    restricted to the samples after the 5 % settling point of each window
    (nan when no window settles, e.g. under delta modulation).  The first
    electrical cycle is always excluded.  Ripple is the mean peak-to-peak
    current over the second half of each window.  dk_per_cycle is the mean
    absolute change of the active gains between consecutive electrical
    cycles; its last entry is the convergence indicator.
    """

    rmse: float
    rmse_settled: float
    ripple: float
    settling_steps: list
    dk_per_cycle: list
    amplitude: float
    windows: int

    @property
    def dk_final(self) -> float:
        return self.dk_per_cycle[-1] if self.dk_per_cycle else 0.0

    def as_dict(self) -> dict:
        return {
            "rmse_A": self.rmse,
            "rmse_settled_A": self.rmse_settled,
            "ripple_A": self.ripple,
            "settling_steps_mean": (float(np.mean(self.settling_steps))
                                    if self.settling_steps else float("nan")),
            "dk_final": self.dk_final,
            "amplitude_A": self.amplitude,
            "windows": self.windows,
        }


def delta_modulation_step(x: float, r: float, V_dc: float,
                          band: float = 0.0) -> float:
    """Per-sample bang-bang voltage: +V below the reference, -V above.

    A non-zero band gives the hysteresis variant (no switching inside the
    band)."""
    if x < r - band:
        return V_dc
    if x > r + band:
        return -V_dc
    return 0.0


def _fixed_core_index(table: QCoreTable, scenario: Scenario):
    if scenario.fixed_core is not None:
        return tuple(scenario.fixed_core)
    ref = scenario.reference
    mid = (ref.theta_on + ref.theta_off) / 2
    loc = scheduler.locate(table, mid, ref.i_ref)
    return scheduler._corner(loc, table)


def run_closed_loop(scenario: Scenario, table: QCoreTable | None = None) -> SimTrace:
    """Run the scenario; deterministic for a fixed seed.

    Raises SafetyAbortError (carrying the partial trace in .trace) if the
    phase current exceeds three times the nominal rating.
    """
    params, surface, profile = scenario.motor, scenario.surface, scenario.reference
    uses_table = scenario.controller != "delta-modulation"
    if uses_table and table is None:
        raise ValueError(f"controller {scenario.controller!r} needs a trained table")

    if table is not None:
        Q_q = table.cfg.tracking_weight()
        R_u = table.cfg.r_weight
        gamma = table.cfg.gamma
    else:
        Q_q = scheduler.TableTrainConfig().tracking_weight()
        R_u = scheduler.TableTrainConfig().r_weight
        gamma = scheduler.TableTrainConfig().gamma

    plant_params = params if scenario.r_scale == 1.0 else \
        replace(params, R_phase=params.R_phase * scenario.r_scale)

    rng = np.random.default_rng(scenario.seed)
    n = scenario.steps
    i_limit = 3.0 * params.i_nominal
    single = _fixed_core_index(table, scenario) \
        if scenario.controller == "single-qcore" else None

    rec = {name: np.zeros(n) for name in ("theta", "r", "x", "u", "cost")}
    K_rec = np.zeros((n, 2))
    cell_rec = np.full((n, 2), -1, int)

    state = PhaseState()
    learn = scenario.online_learning and scenario.controller == "scheduled-qlearning"

    def finish(m):
        ks = np.arange(m)
        return SimTrace(ks, ks * params.T, rec["theta"][:m], rec["r"][:m],
                        rec["x"][:m], rec["u"][:m], K_rec[:m], cell_rec[:m],
                        rec["cost"][:m])

    for k in range(n):
        theta, x = state.theta, state.x
        r = reference_at(profile, theta, k)

        if scenario.controller == "delta-modulation":
            u = delta_modulation_step(x, r, params.V_dc, scenario.delta_band)
            K = np.zeros(2)
            cell = (-1, -1)
        else:
            if scenario.controller == "single-qcore":
                cell = single
                K = table.gains[cell]
            else:
                loc = scheduler.locate(table, theta, x)
                cell = scheduler._corner(loc, table)
                K = scheduler.scheduled_gain(table, theta, x)
            u = -(K[0] * x + K[1] * r)
            if learn and scenario.dither > 0:
                u += scenario.dither * rng.uniform(-1, 1)
        u = float(np.clip(u, -params.V_dc, params.V_dc))

        rec["theta"][k] = theta
        rec["r"][k] = r
        rec["x"][k] = x
        rec["u"][k] = u
        rec["cost"][k] = qlearn.stage_cost((x, r), u, Q_q, R_u)
        K_rec[k] = K
        cell_rec[k] = cell

        L = inductance_at(surface, theta, x)
        x_raw = (1 - plant_params.T * plant_params.R_phase / L) * x \
            + plant_params.T / L * u
        state = PhaseState(x=max(0.0, x_raw), theta=(theta + params.deg_per_step)
                           % params.rotor_pitch, k=k + 1)

        if state.x > i_limit:
            err = SafetyAbortError(
                f"current {state.x:.2f} A exceeded the {i_limit:.2f} A safety "
                f"bound at step {k}")
            err.trace = finish(k + 1)
            raise err

        if learn:
            r_next = reference_at(profile, state.theta, k + 1)
            # the tuple is only Bellman-consistent on flat reference
            # segments away from the zero-current clamp; settled samples are
            # skipped because a steady operating point only constrains the
            # kernel's level, not its shape, and would drag the gain around
            transient = r > 0 and abs(x - r) >= SETTLE_FRACTION * r
            if transient and r_next == r and x_raw >= 0.0:
                a, b = cell
                u_next = -(table.gains[a, b][0] * state.x
                           + table.gains[a, b][1] * r_next)
                tup = qlearn.DataTuple(np.array([x, r, u]),
                                       np.array([state.x, r_next, u_next]),
                                       rec["cost"][k])
                scheduler.update_core_online(table, tup, theta, x)

    return finish(n)


def _conduction_windows(trace: SimTrace, start: int):
    """Contiguous runs of constant positive reference from `start` on."""
    windows = []
    n = len(trace)
    k = start
    while k < n:
        if trace.r[k] > 0:
            j = k
            while j + 1 < n and trace.r[j + 1] == trace.r[k]:
                j += 1
            windows.append((k, j + 1))
            k = j + 1
        else:
            k += 1
    return windows


def compute_metrics(trace: SimTrace, scenario: Scenario) -> Metrics:
    """Tracking metrics over conduction windows after the first cycle."""
    spc = scenario.motor.steps_per_cycle
    windows = _conduction_windows(trace, start=min(spc, len(trace)))
    if not windows:
        raise ValueError("trace has no conduction window after the first cycle")

    err = trace.x - trace.r
    settled_sq, all_sq, ripples, settling = [], [], [], []
    for lo, hi in windows:
        amp = trace.r[lo]
        e = err[lo:hi]
        all_sq.append(e ** 2)
        inside = np.abs(e) < SETTLE_FRACTION * amp
        # first sample after which the error stays inside the band
        bad = np.flatnonzero(~inside)
        s = 0 if bad.size == 0 else bad[-1] + 1
        if s < hi - lo:
            settling.append(int(s))
            settled_sq.append(e[s:] ** 2)
        half = lo + (hi - lo) // 2
        ripples.append(float(trace.x[half:hi].max() - trace.x[half:hi].min()))

    rmse = float(np.sqrt(np.mean(np.concatenate(all_sq))))
    rmse_settled = float(np.sqrt(np.mean(np.concatenate(settled_sq)))) \
        if settled_sq else float("nan")

    n_cyc = len(trace) // spc
    dk = []
    for c in range(1, n_cyc):
        a = trace.K[(c - 1) * spc:c * spc]
        b = trace.K[c * spc:(c + 1) * spc]
        dk.append(float(np.mean(np.abs(b - a))))

    return Metrics(rmse=rmse, rmse_settled=rmse_settled,
                   ripple=float(np.mean(ripples)), settling_steps=settling,
                   dk_per_cycle=dk, amplitude=float(trace.r[windows[0][0]]),
                   windows=len(windows))


def export_trace(trace: SimTrace, path, fmt: str = "csv") -> None:
    """Write the trace as CSV (fixed column order) or JSON lines."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown trace format {fmt!r}")
    try:
        with open(path, "w", newline="") as f:
            if fmt == "csv":
                w = csv.writer(f)
                w.writerow(TRACE_COLUMNS)
                for i in range(len(trace)):
                    w.writerow(_row(trace, i))
            else:
                for i in range(len(trace)):
                    f.write(json.dumps(dict(zip(TRACE_COLUMNS, _row(trace, i)))) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def _row(trace: SimTrace, i: int):
    # str(float) is repr in Python 3, so values round-trip exactly
    return [int(trace.k[i]), float(trace.t[i]), float(trace.theta[i]),
            float(trace.r[i]), float(trace.x[i]), float(trace.u[i]),
            float(trace.K[i, 0]), float(trace.K[i, 1]),
            int(trace.cell[i, 0]), int(trace.cell[i, 1]), float(trace.cost[i])]
