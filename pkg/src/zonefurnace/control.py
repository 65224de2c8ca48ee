"""Firing-rate PID control and slab walking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PidGains:
    kp: float = 1e-3  # 1/K
    ki: float = 2e-5  # 1/(K s)
    kd: float = 0.0  # s/K
    lo: float = 0.0
    hi: float = 1.0


@dataclass
class PidState:
    """Positional PID per control zone with conditional-integration anti-windup.

    ``integral`` holds the integral contribution in output units. Initialising it
    with the current firing rates makes the start bumpless: zero error leaves the
    output where it is.
    """

    gains: PidGains
    integral: np.ndarray
    prev_error: np.ndarray
    saturated: np.ndarray = field(default=None)

    @classmethod
    def start(cls, f0, gains: PidGains = PidGains()) -> "PidState":
        f0 = np.asarray(f0, dtype=float)
        return cls(gains, f0.copy(), np.zeros_like(f0), np.zeros(f0.shape, dtype=bool))

    def copy(self) -> "PidState":
        return PidState(self.gains, self.integral.copy(), self.prev_error.copy(), self.saturated.copy())


def pid_update(state: PidState, setpoints, measured, dt: float) -> tuple[np.ndarray, PidState]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = state.gains
    e = np.asarray(setpoints, dtype=float) - np.asarray(measured, dtype=float)
    d = (e - state.prev_error) / dt
    trial = state.integral + g.ki * e * dt
    raw = g.kp * e + trial + g.kd * d
    # only integrate when the output is not pushed further into saturation
    wind = ((raw > g.hi) & (e > 0)) | ((raw < g.lo) & (e < 0))
    integral = np.where(wind, state.integral, trial)
    out = g.kp * e + integral + g.kd * d
    f = np.clip(out, g.lo, g.hi)
    return f, PidState(g, integral, e, f != out)


def zone_measurement(tG, burners, n_control: int) -> np.ndarray:
    """Mean gas temperature over the distinct burner zones of each control zone."""
    tG = np.asarray(tG, dtype=float)
    out = np.zeros(n_control)
    for c in range(n_control):
        zones = sorted({g for cc, g in burners if cc == c})
        out[c] = tG[zones].mean()
    return out


@dataclass(frozen=True)
class WalkSchedule:
    walk_interval: float  # s
    dt: float
    charge_temperature: float = 298.15

    def __post_init__(self):
        if self.steps_per_walk < 1:
            raise ValueError("walk interval shorter than the time step")

    @property
    def steps_per_walk(self) -> int:
        return int(round(self.walk_interval / self.dt))

    def due(self, step: int) -> bool:
        """True when a push happens at the end of (1-based) step ``step``."""
        return step > 0 and step % self.steps_per_walk == 0


def walk_step(schedule: WalkSchedule, slabs: np.ndarray, step: int) -> tuple[np.ndarray, list]:
    """Shift slab grids one position toward the discharge end when a push is due.

    Slab 0 is nearest the charge end. Returns the new grid stack and event list
    (``("discharge", grid)``, ``("charge", index)``).
    """
    if not schedule.due(step):
        return slabs, []
    out = np.empty_like(slabs)
    out[1:] = slabs[:-1]
    out[0] = schedule.charge_temperature
    return out, [("discharge", slabs[-1].copy()), ("charge", 0)]
