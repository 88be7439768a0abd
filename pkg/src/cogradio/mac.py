"""Belief-state medium access for secondary users.

Each secondary user keeps, per channel, the probability ``x`` that the
channel is idle in the current slot and chooses one of three actions:
transmit, sense, or sleep.  Transmitting or sleeping gives no information and
the belief is propagated through the occupancy chain; sensing reveals the
slot's state and the belief restarts from that state.

The expected one-slot reward of transmitting at belief ``x`` is
``x (R_t + C_c) - C_c``: ``R_t`` if the slot is idle, ``-C_c`` on a collision
with the primary user.  Sensing costs ``C_s``; sleeping is free.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ._rng import spawn
from .channel import ChannelParams, SlotState, generate_traces, stationary_idle_prob

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Structurally invalid simulation scenario."""


class Action(enum.IntEnum):
    TRANSMIT = 0
    SENSE = 1
    SLEEP = 2


@dataclass(frozen=True)
class RewardParams:
    r_t: float
    c_c: float
    c_s: float

    def __post_init__(self):
        if not self.r_t > 0.0:
            raise ScenarioError(f"r_t must be positive, got {self.r_t}")
        if self.c_c < 0.0 or self.c_s < 0.0:
            raise ScenarioError(f"costs must be nonnegative, got c_c={self.c_c}, c_s={self.c_s}")

    @property
    def break_even(self) -> float:
        """Belief at which transmitting has zero expected reward."""
        return self.c_c / (self.r_t + self.c_c)

    def protects_primary(self, channel: ChannelParams) -> bool:
        """True when blind transmission at the stationary belief does not pay.

        Emits a warning otherwise: with ``C_c / (R_t + C_c) < p / (p + q)``
        a user that never senses transmits in every slot.
        """
        ok = self.break_even >= stationary_idle_prob(channel)
        if not ok:
            warnings.warn(
                f"collision cost too low: break-even belief {self.break_even:.4g} is below the "
                f"stationary idle probability {stationary_idle_prob(channel):.4g}",
                stacklevel=2,
            )
        return ok


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    user: int
    channel: int
    action: Action
    true_state: SlotState
    belief: float
    reward: float
    collision: bool


def belief_predict(x: float, params: ChannelParams) -> float:
    return x * (1.0 - params.q) + (1.0 - x) * params.p


def belief_collapse(sensed: SlotState) -> float:
    return 1.0 if sensed is SlotState.IDLE else 0.0


def belief_bayes(x: float, sensed_busy: bool, p_d: float, p_f: float) -> float:
    """Posterior idle probability after an imperfect sensing result."""
    if sensed_busy:
        idle, busy = x * p_f, (1.0 - x) * p_d
    else:
        idle, busy = x * (1.0 - p_f), (1.0 - x) * (1.0 - p_d)
    total = idle + busy
    return x if total == 0.0 else idle / total


def reward(x: float, action: Action, params: RewardParams) -> float:
    """Expected reward of ``action`` at idle belief ``x``."""
    if action is Action.TRANSMIT:
        return x * (params.r_t + params.c_c) - params.c_c
    if action is Action.SENSE:
        return -params.c_s
    return 0.0


class Policy(Protocol):
    name: str

    def decide(self, belief: float, remaining: int, true_state: SlotState) -> Action: ...


@dataclass
class MyopicPolicy:
    """Maximize this slot's expected reward; sense near the break-even point.

    Transmit when the expected transmit reward is strictly positive.  Below
    that, sense when the belief is strictly within ``sense_margin`` of the
    break-even belief, and sleep otherwise.
    """

    params: RewardParams
    sense_margin: float = 0.0
    name: str = "myopic"

    def decide(self, belief, remaining=1, true_state=None):
        if reward(belief, Action.TRANSMIT, self.params) > 0.0:
            return Action.TRANSMIT
        if self.params.break_even - belief < self.sense_margin:
            return Action.SENSE
        return Action.SLEEP


def myopic_policy(x: float, params: RewardParams, sense_margin: float = 0.0) -> Action:
    return MyopicPolicy(params, sense_margin).decide(x)


@dataclass
class SleepPolicy:
    name: str = "sleep"

    def decide(self, belief, remaining=1, true_state=None):
        return Action.SLEEP


@dataclass
class GeniePolicy:
    """Transmits exactly when the channel is idle; an upper bound, not a MAC."""

    name: str = "genie"

    def decide(self, belief, remaining=1, true_state=None):
        return Action.TRANSMIT if true_state is SlotState.IDLE else Action.SLEEP


@dataclass
class DpPolicy:
    """Finite-horizon optimal policy over a discretized belief.

    ``values[k]`` holds the optimal expected reward over ``k`` remaining
    slots at each grid belief, with linear interpolation between grid points.
    Iteration stops early once ``values[k] - values[k - period]`` is constant
    over the grid (to ``tol``).  Backing up a constant shift gives the same
    shift, so from then on the stages repeat with that period up to an
    additive constant, which never changes an argmax; longer horizons reuse
    the stored stage of matching phase.
    """

    channel: ChannelParams
    params: RewardParams
    horizon: int
    grid: np.ndarray
    values: list[np.ndarray]
    period: int = 1
    name: str = "dp"

    def value(self, remaining: int) -> np.ndarray:
        last = len(self.values) - 1
        if remaining <= last:
            return self.values[remaining]
        return self.values[last - (last - remaining) % self.period]

    def _stage_q(self, x, v_next: np.ndarray):
        ch, pr = self.channel, self.params
        g = self.grid
        x = np.asarray(x, dtype=float)
        cont = np.interp(x * (1.0 - ch.q) + (1.0 - x) * ch.p, g, v_next)
        after_idle, after_busy = np.interp([1.0 - ch.q, ch.p], g, v_next)
        q_tx = x * (pr.r_t + pr.c_c) - pr.c_c + cont
        q_sense = -pr.c_s + x * after_idle + (1.0 - x) * after_busy
        return q_tx, q_sense, cont

    def q_values(self, x, remaining: int):
        """``(transmit, sense, sleep)`` action values at belief ``x``."""
        if remaining < 1:
            raise ValueError("no decision is made with zero slots remaining")
        return self._stage_q(x, self.value(remaining - 1))

    def decide(self, belief, remaining=1, true_state=None):
        q_tx, q_sense, q_sleep = self.q_values(belief, remaining)
        return _argmax_action(float(q_tx), float(q_sense), float(q_sleep))

    def table(self, remaining: int) -> np.ndarray:
        """Action codes over the grid for ``remaining`` slots to go."""
        q_tx, q_sense, q_sleep = self.q_values(self.grid, remaining)
        return _argmax_actions(q_tx, q_sense, q_sleep)


def _argmax_action(q_tx: float, q_sense: float, q_sleep: float) -> Action:
    # ties resolve to sleep, then transmit, then sense
    best, act = q_sleep, Action.SLEEP
    if q_tx > best:
        best, act = q_tx, Action.TRANSMIT
    if q_sense > best:
        act = Action.SENSE
    return act


def _argmax_actions(q_tx, q_sense, q_sleep) -> np.ndarray:
    act = np.full(np.shape(q_tx), int(Action.SLEEP), dtype=np.int8)
    best = np.array(q_sleep, dtype=float, copy=True)
    m = q_tx > best
    act[m] = Action.TRANSMIT
    best[m] = q_tx[m]
    act[q_sense > best] = Action.SENSE
    return act


def dp_policy(
    channel: ChannelParams,
    params: RewardParams,
    horizon: int,
    grid: int = 1001,
    tol: float = 1e-12,
    max_period: int = 8,
) -> DpPolicy:
    """Value iteration on the belief dynamics over ``horizon`` slots."""
    if horizon < 1:
        raise ScenarioError(f"horizon must be >= 1, got {horizon}")
    if grid < 2:
        raise ScenarioError(f"belief grid needs at least 2 points, got {grid}")
    pol = DpPolicy(channel, params, horizon, np.linspace(0.0, 1.0, grid), [np.zeros(grid)])
    scale = tol * max(1.0, params.r_t, params.c_c, params.c_s)
    for k in range(1, horizon + 1):
        q_tx, q_sense, q_sleep = pol._stage_q(pol.grid, pol.values[-1])
        v = np.maximum(np.maximum(q_tx, q_sense), q_sleep)
        pol.values.append(v)
        period = next(
            (P for P in range(1, min(max_period, k - 1) + 1) if np.ptp(v - pol.values[k - P]) <= scale),
            None,
        )
        if period is not None:
            pol.period = period
            break
    log.debug("dp policy: %d stages stored for horizon %d", len(pol.values) - 1, horizon)
    return pol


@dataclass
class Scenario:
    channel: ChannelParams | Sequence[ChannelParams]
    reward: RewardParams
    policy: Policy
    horizon: int
    n_channels: int = 1
    n_users: int = 1
    channels_per_user: int | None = None
    imperfect_sensing: tuple[float, float] | None = None  # (p_d, p_f)
    slot_duration: float = 0.01

    def __post_init__(self):
        if self.horizon < 1:
            raise ScenarioError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_channels < 1 or self.n_users < 1:
            raise ScenarioError("need at least one channel and one user")
        if self.channels_per_user is None:
            self.channels_per_user = math.ceil(self.n_channels / self.n_users)
        if self.channels_per_user < 1:
            raise ScenarioError(f"channels_per_user must be >= 1, got {self.channels_per_user}")
        if not isinstance(self.channel, ChannelParams) and len(self.channel) != self.n_channels:
            raise ScenarioError("one ChannelParams per channel is required")
        if self.imperfect_sensing is not None:
            p_d, p_f = self.imperfect_sensing
            if not (0.0 <= p_d <= 1.0 and 0.0 <= p_f <= 1.0):
                raise ScenarioError(f"sensing probabilities out of range: {self.imperfect_sensing}")

    def channel_params(self, c: int) -> ChannelParams:
        return self.channel if isinstance(self.channel, ChannelParams) else self.channel[c]


@dataclass
class SimulationSummary:
    horizon: int
    n_channels: int
    n_users: int
    total_reward: float
    successes: int
    collisions: int
    sensing_count: int
    idle_opportunities: int

    @property
    def throughput(self) -> float:
        """Successful packets per slot."""
        return self.successes / self.horizon

    @property
    def normalized_throughput(self) -> float:
        """Successful packets per idle channel-slot."""
        return self.successes / self.idle_opportunities if self.idle_opportunities else 0.0

    @property
    def per_user_normalized_throughput(self) -> float:
        return self.normalized_throughput / self.n_users

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "n_channels": self.n_channels,
            "n_users": self.n_users,
            "total_reward": self.total_reward,
            "successes": self.successes,
            "collisions": self.collisions,
            "sensing_count": self.sensing_count,
            "idle_opportunities": self.idle_opportunities,
            "throughput": self.throughput,
            "normalized_throughput": self.normalized_throughput,
            "per_user_normalized_throughput": self.per_user_normalized_throughput,
        }


@dataclass
class SimulationResult:
    summary: SimulationSummary
    records: list[SlotRecord] = field(default_factory=list)


def slot_assignment(slot: int, n_channels: int, n_users: int, per_user: int) -> list[tuple[int, list[int]]]:
    """Round-robin partition of channels among users for one slot.

    Position ``i`` in the slot's deal holds channel ``(slot + i) mod N`` and
    goes to user ``(slot + i) mod M``; each user keeps at most ``per_user``
    channels.  Every channel has at most one user in a slot, and the deal
    rotates so that all channels and all users take turns.
    """
    owned: dict[int, list[int]] = {}
    for i in range(n_channels):
        u = (slot + i) % n_users
        chans = owned.setdefault(u, [])
        if len(chans) < per_user:
            chans.append((slot + i) % n_channels)
    return sorted(owned.items())


def run_simulation(scenario: Scenario, seed: int, record: bool = True) -> SimulationResult:
    """Play ``scenario`` for its horizon.

    Channel traces are drawn from per-channel streams derived from ``seed``,
    so scenarios that differ only in users or policy see the same primary
    activity.  Beliefs are kept per channel and shared by the secondary
    network, each user transmits at most one packet per slot, and only
    collisions with the primary user are penalized.
    """
    sc = scenario
    n_ch, horizon = sc.n_channels, sc.horizon
    rngs = spawn(seed, n_ch + 1)
    sense_rng = rngs[-1]
    params = [sc.channel_params(c) for c in range(n_ch)]
    traces = generate_traces(params, n_ch, horizon, rngs[:n_ch], sc.slot_duration)
    states = np.stack([t.as_array() for t in traces])
    beliefs = [stationary_idle_prob(p) if p.p + p.q > 0 else 1.0 for p in params]
    rp = sc.reward

    total = 0.0
    successes = collisions = sensed = 0
    records: list[SlotRecord] = []
    idle_opportunities = int(states.sum())
    single = n_ch == 1 and sc.n_users == 1

    for n in range(horizon):
        remaining = horizon - n
        actions = [Action.SLEEP] * n_ch
        users = [[0, [0]]] if single else slot_assignment(n, n_ch, sc.n_users, sc.channels_per_user)
        for user, chans in users:
            chosen = [sc.policy.decide(beliefs[c], remaining, SlotState(int(states[c, n]))) for c in chans]
            tx = [i for i, a in enumerate(chosen) if a is Action.TRANSMIT]
            if len(tx) > 1:
                keep = max(tx, key=lambda i: (beliefs[chans[i]], -i))
                for i in tx:
                    if i != keep:
                        chosen[i] = Action.SLEEP
            for c, a in zip(chans, chosen):
                actions[c] = a
                s = int(states[c, n])
                collision = False
                if a is Action.TRANSMIT:
                    if s == 1:
                        r = rp.r_t
                        successes += 1
                    else:
                        r = -rp.c_c
                        collisions += 1
                        collision = True
                elif a is Action.SENSE:
                    r = -rp.c_s
                    sensed += 1
                else:
                    r = 0.0
                total += r
                if record:
                    records.append(SlotRecord(n, user, c, a, SlotState(s), beliefs[c], r, collision))
        for c in range(n_ch):
            x = beliefs[c]
            if actions[c] is Action.SENSE:
                s = int(states[c, n])
                if sc.imperfect_sensing is None:
                    x = 1.0 if s == 1 else 0.0
                else:
                    p_d, p_f = sc.imperfect_sensing
                    alarm = sense_rng.random() < (p_d if s == 0 else p_f)
                    x = belief_bayes(x, alarm, p_d, p_f)
            p = params[c]
            beliefs[c] = x * (1.0 - p.q) + (1.0 - x) * p.p

    summary = SimulationSummary(
        horizon, n_ch, sc.n_users, total, successes, collisions, sensed, idle_opportunities
    )
    return SimulationResult(summary, records)


@dataclass(frozen=True)
class SweepRow:
    density: float
    users: int
    channels_per_user: int
    normalized_throughput: float
    per_user_normalized_throughput: float
    collisions: int


def users_for_density(density: float, area_km2: float = 1.0) -> int:
    return max(1, int(round(density * area_km2)))


def density_sweep(
    base: Scenario,
    densities: Sequence[float],
    seed: int,
    area_km2: float = 1.0,
    channels_per_user=None,
    jobs: int = 1,
) -> list[SweepRow]:
    """Normalized throughput as the secondary-user density grows.

    ``channels_per_user`` maps a user count to the per-user channel budget;
    by default each user covers an even share of the channels.  All
    densities reuse ``seed`` and hence the same primary activity.
    """
    if not densities:
        raise ScenarioError("density list is empty")
    if any(d <= 0 for d in densities) or list(densities) != sorted(densities):
        raise ScenarioError("densities must be positive and ascending")
    scenarios = []
    for d in densities:
        m = users_for_density(d, area_km2)
        per_user = channels_per_user(m) if channels_per_user else math.ceil(base.n_channels / m)
        scenarios.append(
            Scenario(
                base.channel, base.reward, base.policy, base.horizon, base.n_channels, m, per_user,
                base.imperfect_sensing, base.slot_duration,
            )
        )
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_run_summary, scenarios, [seed] * len(scenarios)))
    else:
        results = [_run_summary(s, seed) for s in scenarios]
    return [
        SweepRow(d, s.n_users, s.channels_per_user, r.normalized_throughput, r.per_user_normalized_throughput, r.collisions)
        for d, s, r in zip(densities, scenarios, results)
    ]


def _run_summary(scenario: Scenario, seed: int) -> SimulationSummary:
    return run_simulation(scenario, seed, record=False).summary
