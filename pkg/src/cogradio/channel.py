"""Two-state Markov model of primary-user occupancy and baseband samples.

Transition convention: ``p`` is the probability that a busy channel becomes
idle in the next slot, ``q`` the probability that an idle channel becomes
busy.  The stationary idle probability is therefore ``p / (p + q)`` and the
belief recursion used by the MAC layer, ``x' = x (1 - q) + (1 - x) p``, is the
one-step forecast of the same chain.
"""

from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ChannelError(ValueError):
    """Invalid channel parameters or trace data."""


class SlotState(enum.IntEnum):
    """Occupancy of one channel in one slot.

    The integer value is the S(n) encoding used in trace files: 1 means the
    primary user is inactive (a spectrum hole), 0 means it is transmitting.
    """

    BUSY = 0
    IDLE = 1

    @property
    def binary(self) -> int:
        """+1 for busy, -1 for idle (predictor series encoding)."""
        return 1 if self is SlotState.BUSY else -1

    @classmethod
    def from_binary(cls, value: int | float) -> "SlotState":
        if value == 1:
            return cls.BUSY
        if value == -1:
            return cls.IDLE
        raise ChannelError(f"binary series values must be +1 or -1, got {value!r}")


@dataclass(frozen=True)
class ChannelParams:
    p: float
    q: float
    sigma_s2: float = 1.0
    sigma_n2: float = 1.0
    require_positive_correlation: bool = True

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ChannelError(f"{name} must lie in [0, 1], got {v}")
        if self.require_positive_correlation and not 1.0 - self.p - self.q > 0.0:
            raise ChannelError(
                f"1 - p - q must be positive (p={self.p}, q={self.q}); "
                "pass require_positive_correlation=False to allow it"
            )
        if not self.sigma_s2 > 0.0:
            raise ChannelError(f"sigma_s2 must be positive, got {self.sigma_s2}")
        if not self.sigma_n2 > 0.0:
            raise ChannelError(f"sigma_n2 must be positive, got {self.sigma_n2}")

    @property
    def correlation(self) -> float:
        """Lag-one correlation ``1 - p - q`` of the occupancy chain."""
        return 1.0 - self.p - self.q

    def transition_matrix(self) -> np.ndarray:
        """Row-stochastic matrix indexed by ``SlotState`` values (BUSY=0, IDLE=1)."""
        return np.array([[1.0 - self.p, self.p], [self.q, 1.0 - self.q]])


@dataclass
class OccupancyTrace:
    states: list[SlotState]
    slot_duration: float = 0.01

    def __post_init__(self):
        if len(self.states) < 1:
            raise ChannelError("an occupancy trace needs at least one slot")
        self.states = [SlotState(s) for s in self.states]

    def __len__(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        """S(n) values as an int array (1 idle, 0 busy)."""
        return np.fromiter((int(s) for s in self.states), dtype=np.int64, count=len(self.states))

    def idle_fraction(self) -> float:
        return float(self.as_array().mean())

    def encode(self) -> np.ndarray:
        """The +1 (busy) / -1 (idle) series."""
        return 1.0 - 2.0 * self.as_array().astype(float)

    @classmethod
    def decode(cls, series: Iterable[float], slot_duration: float = 0.01) -> "OccupancyTrace":
        return cls([SlotState.from_binary(v) for v in series], slot_duration)

    def to_csv(self, path: str | os.PathLike | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["slot", "state"])
        for n, s in enumerate(self.states):
            writer.writerow([n, int(s)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path: str | os.PathLike, slot_duration: float = 0.01) -> "OccupancyTrace":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["slot", "state"]:
                raise ChannelError(f"{path}: expected header 'slot,state', got {reader.fieldnames}")
            states = []
            for i, row in enumerate(reader):
                if int(row["slot"]) != i:
                    raise ChannelError(f"{path}: slot column out of order at row {i + 1}")
                value = int(row["state"])
                if value not in (0, 1):
                    raise ChannelError(f"{path}: state must be 0 or 1, got {value} at slot {i}")
                states.append(SlotState(value))
        return cls(states, slot_duration)


def stationary_idle_prob(params: ChannelParams) -> float:
    if params.p + params.q == 0.0:
        raise ChannelError("p = q = 0: the chain never mixes and has no unique stationary law")
    return params.p / (params.p + params.q)


def step_channel(state: SlotState, params: ChannelParams, rng: np.random.Generator) -> SlotState:
    """Advance one slot.  Consumes exactly one uniform draw from ``rng``."""
    u = rng.random()
    if state is SlotState.IDLE:
        return SlotState.BUSY if u < params.q else SlotState.IDLE
    return SlotState.IDLE if u < params.p else SlotState.BUSY


def generate_trace(
    params: ChannelParams,
    length: int,
    initial: SlotState,
    rng: np.random.Generator,
    slot_duration: float = 0.01,
) -> OccupancyTrace:
    """Sample ``length`` slots starting from ``initial``.

    Draws the same uniforms, in the same order, as ``length - 1`` calls to
    :func:`step_channel`, so both routes give identical traces for a seed.
    """
    if length < 1:
        raise ChannelError(f"trace length must be at least 1, got {length}")
    u = rng.random(length - 1)
    states = np.empty(length, dtype=np.int8)
    s = int(initial)
    states[0] = s
    p, q = params.p, params.q
    for n in range(1, length):
        if s == 1:
            s = 0 if u[n - 1] < q else 1
        else:
            s = 1 if u[n - 1] < p else 0
        states[n] = s
    return OccupancyTrace([SlotState(int(v)) for v in states], slot_duration)


def complex_gaussian(variance: float, n: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex normal samples, ``E|z|^2 = variance``."""
    scale = np.sqrt(variance / 2.0)
    return scale * rng.standard_normal(n) + 1j * (scale * rng.standard_normal(n))


def sample_slot_signal(
    state: SlotState, params: ChannelParams, nb: int, rng: np.random.Generator
) -> np.ndarray:
    """Received samples for one sensing window.

    Idle: noise only.  Busy: noise plus an independent Gaussian primary signal.
    """
    if nb < 1:
        raise ChannelError(f"sample count must be at least 1, got {nb}")
    y = complex_gaussian(params.sigma_n2, nb, rng)
    if state is SlotState.BUSY:
        y = y + complex_gaussian(params.sigma_s2, nb, rng)
    return y


def generate_traces(
    params: ChannelParams | Sequence[ChannelParams],
    n_channels: int,
    length: int,
    rngs: Sequence[np.random.Generator],
    slot_duration: float = 0.01,
) -> list[OccupancyTrace]:
    """One independent trace per channel, each started from its stationary law."""
    if isinstance(params, ChannelParams):
        params = [params] * n_channels
    traces = []
    for c in range(n_channels):
        rng = rngs[c]
        pi = stationary_idle_prob(params[c]) if params[c].p + params[c].q > 0 else 1.0
        initial = SlotState.IDLE if rng.random() < pi else SlotState.BUSY
        traces.append(generate_trace(params[c], length, initial, rng, slot_duration))
    return traces
