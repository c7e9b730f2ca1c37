"""Sensor-node firmware emulation.

Covers the acquisition loop (boot, serial init, wait, read temperature, pH
and conductivity in that order, send), synthetic water ground truth, the
three probe models and the text frame that travels toward the base station.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class Phase(enum.Enum):
    BOOT = "Boot"
    SERIAL_INIT = "SerialInit"
    WAIT = "Wait"
    ACQ_TEMP = "AcqTemp"
    ACQ_PH = "AcqPh"
    ACQ_COND = "AcqCond"
    SEND = "Send"


class Event(enum.Enum):
    POWER_ON = "PowerOn"
    TIMER_EXPIRED = "TimerExpired"
    DATA_READY = "DataReady"
    TIMEOUT = "Timeout"


class Action(enum.Enum):
    NONE = "None"
    REQUEST_TEMP = "RequestTemp"
    REQUEST_PH = "RequestPh"
    REQUEST_COND = "RequestCond"
    EMIT_FRAME = "EmitFrame"


class IllegalTransition(ValueError):
    pass


class AcqState(NamedTuple):
    phase: Phase = Phase.BOOT
    phase_elapsed: float = 0.0
    cycle_restarts: int = 0


# (phase, event) -> (next phase, action).  SerialInit and Send finish when
# their serial I/O completes, which is signalled with DataReady.
TRANSITIONS = {
    (Phase.BOOT, Event.POWER_ON): (Phase.SERIAL_INIT, Action.NONE),
    (Phase.SERIAL_INIT, Event.DATA_READY): (Phase.WAIT, Action.NONE),
    (Phase.WAIT, Event.TIMER_EXPIRED): (Phase.ACQ_TEMP, Action.REQUEST_TEMP),
    (Phase.ACQ_TEMP, Event.DATA_READY): (Phase.ACQ_PH, Action.REQUEST_PH),
    (Phase.ACQ_PH, Event.DATA_READY): (Phase.ACQ_COND, Action.REQUEST_COND),
    (Phase.ACQ_COND, Event.DATA_READY): (Phase.SEND, Action.EMIT_FRAME),
    (Phase.SEND, Event.DATA_READY): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_TEMP, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_PH, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_COND, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
}

ACQUIRING = (Phase.ACQ_TEMP, Phase.ACQ_PH, Phase.ACQ_COND)


def step_acquisition(state: AcqState, event: Event) -> tuple[AcqState, Action]:
    try:
        nxt, action = TRANSITIONS[(state.phase, event)]
    except KeyError:
        raise IllegalTransition(f"{event.value} is not legal in {state.phase.value}") from None
    restarts = state.cycle_restarts + (event is Event.TIMEOUT)
    return AcqState(nxt, 0.0, restarts), action


def tick(state: AcqState, dt: float, wait_seconds: float, timeout_seconds: float):
    """Let ``dt`` seconds pass in the current phase.

    Returns the advanced state and the timer event that fired, if any:
    TimerExpired once the wait period is over, Timeout once a sensor has
    been silent for ``timeout_seconds``.
    """
    state = state._replace(phase_elapsed=state.phase_elapsed + dt)
    if state.phase is Phase.WAIT and state.phase_elapsed >= wait_seconds:
        return state, Event.TIMER_EXPIRED
    if state.phase in ACQUIRING and state.phase_elapsed >= timeout_seconds:
        return state, Event.TIMEOUT
    return state, None


def run_cycle(state: AcqState, wait_seconds: float, timeout_seconds: float,
              response_seconds: float = 0.5, fail_at: Phase | None = None):
    """Drive one acquisition cycle starting from Boot, SerialInit or Wait.

    ``fail_at`` names the sensor phase whose probe never answers.  Returns
    ``(state, emitted, elapsed_seconds)``; the state is back in Wait.
    """
    elapsed = 0.0
    if state.phase is Phase.BOOT:
        state, _ = step_acquisition(state, Event.POWER_ON)
    if state.phase is Phase.SERIAL_INIT:
        state, _ = step_acquisition(state, Event.DATA_READY)
    if state.phase is not Phase.WAIT:
        raise IllegalTransition(f"cycle cannot start from {state.phase.value}")

    state, ev = tick(state, wait_seconds - state.phase_elapsed, wait_seconds, timeout_seconds)
    elapsed += wait_seconds
    state, _ = step_acquisition(state, ev)
    while state.phase in ACQUIRING:
        if state.phase is fail_at:
            state, ev = tick(state, timeout_seconds, wait_seconds, timeout_seconds)
            elapsed += timeout_seconds
            state, _ = step_acquisition(state, ev)
            return state, False, elapsed
        elapsed += response_seconds
        state, _ = step_acquisition(state, Event.DATA_READY)
    # now in Send
    state, _ = step_acquisition(state, Event.DATA_READY)
    return state, True, elapsed


# -- sensors -------------------------------------------------------------

@dataclass(frozen=True)
class SensorModel:
    min: float
    max: float
    resolution: float
    accuracy: float
    relative: bool = False  # accuracy is a fraction of the reading
    noise_sigma: float | None = None  # None: accuracy / 2

    @property
    def decimals(self) -> int:
        return max(0, -int(math.floor(math.log10(self.resolution) + 1e-9)))

    def sigma_for(self, truth):
        if self.noise_sigma is not None:
            return self.noise_sigma * abs(truth) if self.relative else self.noise_sigma
        half = self.accuracy / 2.0
        return half * abs(truth) if self.relative else half


# Probe datasheet values.  Temperature covers -15..70 C.
PH_SENSOR = SensorModel(min=0.0, max=14.0, resolution=0.01, accuracy=0.2)
TEMP_SENSOR = SensorModel(min=-15.0, max=70.0, resolution=0.1, accuracy=0.3)
COND_SENSOR = SensorModel(min=0.0, max=200.0, resolution=0.0001, accuracy=0.01, relative=True)


def quantize(value, resolution: float, decimals: int):
    """Round half-up to the nearest multiple of ``resolution``.

    The ratio is rounded to 9 places first so that e.g. 7.005/0.01 lands
    on 700.5 instead of 700.4999999.
    """
    if isinstance(value, np.ndarray):
        steps = np.floor(np.round(value / resolution, 9) + 0.5)
        return np.round(steps * resolution, decimals) + 0.0
    steps = math.floor(round(value / resolution, 9) + 0.5)
    return round(steps * resolution, decimals) + 0.0  # no -0.0


def sample_sensor(model: SensorModel, truth, rng):
    """Noisy, clamped, quantized reading of ``truth``.

    Works on scalars or numpy arrays.  Arrays always consume one normal
    draw per element; a noise-free scalar reading draws nothing.
    """
    sigma = model.sigma_for(truth)
    if isinstance(truth, np.ndarray):
        noisy = truth + sigma * rng.standard_normal(truth.shape)
        return quantize(np.clip(noisy, model.min, model.max), model.resolution, model.decimals)
    noisy = truth + sigma * float(rng.standard_normal()) if sigma else truth
    return quantize(min(model.max, max(model.min, noisy)), model.resolution, model.decimals)


# -- ground truth -------------------------------------------------------

@dataclass(frozen=True)
class WaterProfile:
    base_temp: float = 25.0  # C
    base_ph: float = 7.2
    base_cond: float = 0.5  # mS/cm
    temp_gradient: tuple[float, float] = (0.0, 0.0)  # per metre, (x, y)
    ph_gradient: tuple[float, float] = (0.0, 0.0)
    cond_gradient: tuple[float, float] = (0.0, 0.0)
    temp_amplitude: float = 2.0
    ph_amplitude: float = 0.1
    cond_amplitude: float = 0.02
    day_seconds: float = 86400.0


def truth_at(profile: WaterProfile, x, y, time):
    """(temperature, pH, conductivity) at a point; scalars or arrays."""
    if isinstance(x, np.ndarray) or isinstance(time, np.ndarray):
        diurnal = np.sin(2.0 * np.pi * np.asarray(time) / profile.day_seconds)
    else:
        diurnal = math.sin(2.0 * math.pi * time / profile.day_seconds)
    tg, pg, cg = profile.temp_gradient, profile.ph_gradient, profile.cond_gradient
    temp = profile.base_temp + tg[0] * x + tg[1] * y + profile.temp_amplitude * diurnal
    ph = profile.base_ph + pg[0] * x + pg[1] * y + profile.ph_amplitude * diurnal
    cond = profile.base_cond + cg[0] * x + cg[1] * y + profile.cond_amplitude * diurnal
    return temp, ph, cond


# -- frame codec --------------------------------------------------------

MAGIC = "AWQMP"


class FrameError(ValueError):
    pass


class MalformedFrame(FrameError):
    pass


class OutOfRangeFrame(FrameError):
    pass


@dataclass(frozen=True)
class MeasurementFrame:
    node_id: int
    sequence: int
    timestamp: int  # seconds since start
    temperature: float
    ph: float
    conductivity: float
    residual_energy: float


def encode_frame(frame: MeasurementFrame) -> bytes:
    return (
        f"{MAGIC},{frame.node_id:d},{frame.sequence:d},{frame.timestamp:d},"
        f"{frame.temperature:.1f},{frame.ph:.2f},{frame.conductivity:.4f},"
        f"{frame.residual_energy:.6f}\n"
    ).encode("ascii")


_INT = r"(0|[1-9][0-9]*)"
_FIELD_PATTERNS = [
    re.compile(_INT),
    re.compile(_INT),
    re.compile(_INT),
    re.compile(r"-?(0|[1-9][0-9]*)\.[0-9]"),
    re.compile(r"-?(0|[1-9][0-9]*)\.[0-9]{2}"),
    re.compile(r"-?(0|[1-9][0-9]*)\.[0-9]{4}"),
    re.compile(r"-?(0|[1-9][0-9]*)\.[0-9]{6}"),
]
_FIELD_NAMES = ("node_id", "sequence", "timestamp", "temperature", "ph", "conductivity",
                "residual_energy")


def decode_frame(data: bytes, sensors=(TEMP_SENSOR, PH_SENSOR, COND_SENSOR)) -> MeasurementFrame:
    """Parse one encoded line.  Only the exact canonical layout is accepted."""
    try:
        text = data.decode("ascii")
    except (UnicodeDecodeError, AttributeError) as exc:
        raise MalformedFrame(f"not an ASCII byte string: {exc}") from None
    if not text.endswith("\n") or "\n" in text[:-1]:
        raise MalformedFrame("frame must be a single newline-terminated line")
    parts = text[:-1].split(",")
    if parts[0] != MAGIC:
        raise MalformedFrame(f"bad magic {parts[0]!r}")
    if len(parts) != 1 + len(_FIELD_PATTERNS):
        raise MalformedFrame(f"expected {1 + len(_FIELD_PATTERNS)} fields, got {len(parts)}")
    for name, pattern, raw in zip(_FIELD_NAMES, _FIELD_PATTERNS, parts[1:]):
        if not pattern.fullmatch(raw):
            raise MalformedFrame(f"bad {name} field {raw!r}")
    vals = parts[1:]
    frame = MeasurementFrame(
        node_id=int(vals[0]),
        sequence=int(vals[1]),
        timestamp=int(vals[2]),
        temperature=float(vals[3]),
        ph=float(vals[4]),
        conductivity=float(vals[5]),
        residual_energy=float(vals[6]),
    )
    temp_s, ph_s, cond_s = sensors
    for name, value, s in (("temperature", frame.temperature, temp_s),
                           ("ph", frame.ph, ph_s),
                           ("conductivity", frame.conductivity, cond_s)):
        if not s.min <= value <= s.max:
            raise OutOfRangeFrame(f"{name}={value} outside [{s.min}, {s.max}]")
    if frame.residual_energy < 0.0:
        raise OutOfRangeFrame(f"residual_energy={frame.residual_energy} is negative")
    return frame
