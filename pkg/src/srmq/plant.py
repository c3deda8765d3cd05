"""Single-phase SRM electrical model.

Discrete-time phase-current dynamics with a nonlinear inductance surface
L(theta, i), rotor kinematics at constant speed, and the pulse-train
reference generator.  Everything here is a pure function over immutable
values, so instances are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# 1 RPM = 6 mechanical degrees per second
RPM_TO_DEG_PER_S = 6.0


@dataclass(frozen=True)
class MotorParams:
    """Electrical and kinematic parameters of one SRM phase."""

    R_phase: float = 2.0        # ohm
    T: float = 1e-4             # sample period, s
    L_unaligned: float = 6e-3   # H
    L_aligned: float = 16e-3    # H
    rotor_pitch: float = 45.0   # mechanical degrees per electrical period
    speed: float = 60.0         # RPM
    V_dc: float = 300.0         # supply magnitude, V
    i_nominal: float = 5.0      # rated current, A

    def __post_init__(self):
        if not (self.R_phase > 0):
            raise ValueError("R_phase must be positive")
        if not (self.T > 0):
            raise ValueError("sample period must be positive")
        if not (0 < self.L_unaligned < self.L_aligned):
            raise ValueError("need 0 < L_unaligned < L_aligned")
        if not (self.rotor_pitch > 0):
            raise ValueError("rotor_pitch must be positive")
        if not (self.V_dc > 0):
            raise ValueError("V_dc must be positive")
        if not (self.i_nominal > 0):
            raise ValueError("i_nominal must be positive")

    @property
    def deg_per_step(self) -> float:
        return self.speed * RPM_TO_DEG_PER_S * self.T

    @property
    def steps_per_cycle(self) -> int:
        """Samples in one electrical period (one rotor pitch)."""
        return int(round(self.rotor_pitch / self.deg_per_step))


@dataclass(frozen=True)
class InductanceSurface:
    """Tabulated phase inductance over (rotor angle, current).

    theta_grid spans exactly one rotor pitch with both endpoints present;
    the first and last angle columns must be equal so the surface continues
    periodically.  Values must be non-increasing in current at fixed angle
    (magnetic saturation).
    """

    theta_grid: np.ndarray   # deg, strictly ascending
    current_grid: np.ndarray  # A, strictly ascending
    values: np.ndarray       # H, shape (n_theta, n_current)

    def __post_init__(self):
        object.__setattr__(self, "theta_grid", np.asarray(self.theta_grid, float))
        object.__setattr__(self, "current_grid", np.asarray(self.current_grid, float))
        object.__setattr__(self, "values", np.asarray(self.values, float))
        if self.theta_grid.ndim != 1 or self.theta_grid.size < 2:
            raise ValueError("theta_grid needs at least 2 nodes")
        if self.current_grid.ndim != 1 or self.current_grid.size < 2:
            raise ValueError("current_grid needs at least 2 nodes")
        if np.any(np.diff(self.theta_grid) <= 0):
            raise ValueError("theta_grid must be strictly ascending")
        if np.any(np.diff(self.current_grid) <= 0):
            raise ValueError("current_grid must be strictly ascending")
        if self.values.shape != (self.theta_grid.size, self.current_grid.size):
            raise ValueError("values shape must be (n_theta, n_current)")
        if np.any(self.values <= 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("inductance values must be positive and finite")
        if not np.allclose(self.values[0], self.values[-1], rtol=0, atol=1e-12):
            raise ValueError("first and last theta columns must match (periodic)")
        if np.any(np.diff(self.values, axis=1) > 1e-12):
            raise ValueError("values must be non-increasing in current (saturation)")

    @property
    def pitch(self) -> float:
        return float(self.theta_grid[-1] - self.theta_grid[0])


@dataclass(frozen=True)
class PhaseState:
    """Phase current and rotor angle at step k."""

    x: float = 0.0       # phase current, A
    theta: float = 0.0   # mechanical angle, deg, in [0, rotor_pitch)
    k: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("step index must be non-negative")


@dataclass(frozen=True)
class ReferenceProfile:
    """Square-pulse current reference over the conduction window.

    step_events is a sequence of (step index, new amplitude); the amplitude
    in force at step k is the latest event with index <= k.
    """

    i_ref: float = 4.0
    theta_on: float = 10.0
    theta_off: float = 35.0
    step_events: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "step_events",
                           tuple((int(k), float(a)) for k, a in self.step_events))
        if self.i_ref < 0:
            raise ValueError("i_ref must be non-negative")
        if not (0 <= self.theta_on < self.theta_off):
            raise ValueError("need 0 <= theta_on < theta_off")

    def amplitude_at(self, k: int) -> float:
        amp = self.i_ref
        for idx, value in self.step_events:
            if idx <= k:
                amp = value
        return amp


def inductance_at(surface: InductanceSurface, theta: float, i: float) -> float:
    """Bilinear lookup of L(theta, i); theta wraps, current clamps to the grid."""
    tg, cg, vals = surface.theta_grid, surface.current_grid, surface.values
    span = surface.pitch
    th = tg[0] + (theta - tg[0]) % span
    i = min(max(i, cg[0]), cg[-1])

    a = int(np.searchsorted(tg, th, side="right")) - 1
    a = min(max(a, 0), tg.size - 2)
    b = int(np.searchsorted(cg, i, side="right")) - 1
    b = min(max(b, 0), cg.size - 2)

    l1 = (th - tg[a]) / (tg[a + 1] - tg[a])
    l2 = (i - cg[b]) / (cg[b + 1] - cg[b])
    return float((1 - l1) * (1 - l2) * vals[a, b]
                 + l1 * (1 - l2) * vals[a + 1, b]
                 + (1 - l1) * l2 * vals[a, b + 1]
                 + l1 * l2 * vals[a + 1, b + 1])


def default_surface(params: MotorParams, n_theta: int = 16, n_current: int = 8,
                    kappa: float = 0.5, i_sat: float | None = None,
                    i_max: float | None = None) -> InductanceSurface:
    """Analytic stand-in surface: raised cosine in angle times saturation in current.

    L(theta, i) = L_u + (L_a - L_u) * (1 + cos(2*pi*theta/pitch)) / 2 * s(i)
    with s(i) = 1 / (1 + kappa * (i / i_sat)^2) applied to the varying part,
    so the aligned/unaligned endpoints are preserved as i -> 0.
    """
    if i_sat is None:
        i_sat = params.i_nominal
    if i_max is None:
        i_max = 1.5 * params.i_nominal
    theta = np.linspace(0.0, params.rotor_pitch, n_theta)
    current = np.linspace(0.0, i_max, n_current)
    shape = (1 + np.cos(2 * np.pi * theta / params.rotor_pitch)) / 2
    sat = 1.0 / (1.0 + kappa * (current / i_sat) ** 2)
    values = params.L_unaligned + (params.L_aligned - params.L_unaligned) \
        * np.outer(shape, sat)
    return InductanceSurface(theta, current, values)


def step_phase(state: PhaseState, u: float, params: MotorParams,
               surface: InductanceSurface) -> PhaseState:
    """Advance the phase one sample under applied voltage u.

    x' = (1 - T*R/L) x + (T/L) u with L evaluated at the current operating
    point; the current is clamped at zero (the asymmetric bridge cannot
    drive it negative) and the rotor advances at constant speed.
    """
    if not math.isfinite(u):
        raise ValueError("applied voltage must be finite")
    L = inductance_at(surface, state.theta, state.x)
    x_next = (1 - params.T * params.R_phase / L) * state.x + params.T / L * u
    x_next = max(0.0, x_next)
    theta_next = (state.theta + params.deg_per_step) % params.rotor_pitch
    return PhaseState(x=x_next, theta=theta_next, k=state.k + 1)


def reference_at(profile: ReferenceProfile, theta: float, k: int) -> float:
    """Reference current sample: pulse amplitude inside the conduction window."""
    if profile.theta_on <= theta < profile.theta_off:
        return profile.amplitude_at(k)
    return 0.0


def save_surface_csv(surface: InductanceSurface, path) -> None:
    """Write the surface: first row = current grid, first column = theta grid."""
    with open(path, "w") as f:
        f.write("theta_deg," + ",".join(repr(float(c))
                                        for c in surface.current_grid) + "\n")
        for th, row in zip(surface.theta_grid, surface.values):
            f.write(repr(float(th)) + ","
                    + ",".join(repr(float(v)) for v in row) + "\n")


def load_surface_csv(path) -> InductanceSurface:
    """Read a surface written by save_surface_csv (strict rectangular shape)."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if len(lines) < 3:
        raise ValueError(f"{path}: surface file needs a header and >= 2 rows")
    current = np.array([float(v) for v in lines[0].split(",")[1:]])
    theta, rows = [], []
    width = current.size
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != width + 1:
            raise ValueError(f"{path}: ragged row, expected {width + 1} cells")
        theta.append(float(cells[0]))
        rows.append([float(v) for v in cells[1:]])
    return InductanceSurface(np.array(theta), current, np.array(rows))
