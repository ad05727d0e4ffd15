"""Exact event-driven Monte Carlo of the popularity process and competition metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .model import (InfluencerParams, SystemParams, conditional_jump_mean,
                    posting_intensity)

MODES = ("exact", "previous")
DEFAULT_BURNIN_FRAC = 0.2
_CHUNK_MAX = 1 << 20


class EventKind(str, Enum):
    INTERNAL = "Internal"
    EXTERNAL = "External"


_KIND_CODES = (EventKind.INTERNAL, EventKind.EXTERNAL)


@dataclass(frozen=True)
class Event:
    time: float
    kind: EventKind
    state_before_jump: float
    jump_size: float

    @property
    def state_after_jump(self) -> float:
        return self.state_before_jump + self.jump_size


@dataclass(eq=False)
class EventLog:
    """Jump events of one influencer, stored column-wise."""

    influencer_id: int
    times: np.ndarray
    kinds: np.ndarray
    x_before: np.ndarray
    jumps: np.ndarray
    horizon: float
    seed: int | None = None
    x0: float = 0.0
    gamma: float | None = None

    def __post_init__(self):
        n = self.times.shape[0]
        if not (self.kinds.shape[0] == self.x_before.shape[0] == self.jumps.shape[0] == n):
            raise ValueError("event columns have different lengths")

    @property
    def x_after(self) -> np.ndarray:
        return self.x_before + self.jumps

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, k) -> Event:
        return Event(float(self.times[k]), _KIND_CODES[self.kinds[k]],
                     float(self.x_before[k]), float(self.jumps[k]))

    def __iter__(self) -> Iterator[Event]:
        return (self[k] for k in range(len(self)))

    def n_posts(self, t0: float = 0.0, t1: float | None = None) -> int:
        t1 = self.horizon if t1 is None else t1
        sel = (self.times > t0) & (self.times <= t1) & (self.kinds == _kernels.INTERNAL)
        return int(np.count_nonzero(sel))

    def posting_rate(self, t0: float = 0.0) -> float:
        """Posts per day over (t0, horizon]; exogenous events are not counted."""
        if self.horizon <= t0:
            raise ValueError("empty window")
        return self.n_posts(t0) / (self.horizon - t0)

    def state_at(self, t: float) -> float:
        """X(t), right-continuous."""
        k = np.searchsorted(self.times, t, side="right") - 1
        if k < 0:
            start, x = 0.0, self.x0
        else:
            start, x = self.times[k], self.x_after[k]
        if self.gamma is None:
            raise ValueError("log carries no decay rate")
        return float(x * math.exp(-self.gamma * (t - start)))

    def to_csv(self, path_or_buf=None) -> str | None:
        """Write columns influencer_id, time_days, kind, x_before, jump, x_after."""
        return write_events_csv([self], path_or_buf)

    def equals(self, other: "EventLog") -> bool:
        return (self.influencer_id == other.influencer_id and self.horizon == other.horizon
                and all(np.array_equal(getattr(self, c), getattr(other, c))
                        for c in ("times", "kinds", "x_before", "jumps")))


def write_events_csv(logs: Sequence[EventLog], path_or_buf=None) -> str | None:
    own = path_or_buf is None
    buf = io.StringIO() if own else None
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        fh = open(path_or_buf, "w", newline="")
    else:
        fh = buf if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["influencer_id", "time_days", "kind", "x_before", "jump", "x_after"])
        for log in logs:
            xa = log.x_after
            for k in range(len(log)):
                w.writerow([log.influencer_id, repr(float(log.times[k])),
                            _KIND_CODES[log.kinds[k]].value, repr(float(log.x_before[k])),
                            repr(float(log.jumps[k])), repr(float(xa[k]))])
    finally:
        if fh is not buf and fh is not path_or_buf:
            fh.close()
    return buf.getvalue() if own else None


def read_events_csv(path) -> list[EventLog]:
    cols: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cols.setdefault(int(row["influencer_id"]), []).append(row)
    logs = []
    for iid, rows in sorted(cols.items()):
        t = np.array([float(r["time_days"]) for r in rows])
        kinds = np.array([0 if r["kind"] == EventKind.INTERNAL.value else 1 for r in rows], dtype=np.int8)
        xb = np.array([float(r["x_before"]) for r in rows])
        jumps = np.array([float(r["jump"]) for r in rows])
        logs.append(EventLog(iid, t, kinds, xb, jumps, horizon=float(t[-1]) if len(t) else 0.0))
    return logs


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def stream_seeds(seed: int, influencer: int = 0, replica: int = 0) -> list[np.random.SeedSequence]:
    """Independent seed sequences for (arrivals, jumps V, jumps W).

    Derived from (master seed, replica, influencer) only, so results do not
    depend on how many influencers or replicas share a run.
    """
    root = np.random.SeedSequence(seed, spawn_key=(replica, influencer))
    return root.spawn(3)


# ---------------------------------------------------------------------------
# Single-step primitives
# ---------------------------------------------------------------------------


def inter_jump_survival(zeta, z, sys: SystemParams, inf: InfluencerParams):
    """P(zeta > s) for the time to the next event starting at post-jump state z."""
    zeta = np.asarray(zeta, dtype=float)
    base = (inf.lambda0 + sys.mu) * zeta
    if inf.lambda1 == 0.0:
        return np.exp(-base)
    if inf.phi == 0.0:
        return np.exp(-base - inf.lambda1 * zeta)
    gp = sys.gamma * inf.phi
    return np.exp(-base - inf.lambda1 / gp * z**inf.phi * -np.expm1(-gp * zeta))


def sample_inter_jump(z: float, sys: SystemParams, inf: InfluencerParams,
                      rng: np.random.Generator, size=None):
    """Time to the next event (post or exogenous) from post-jump state z.

    Exact thinning against the intensity at the current state; reduces to a
    plain exponential draw when the intensity does not depend on the state.
    """
    if z < 0:
        raise ValueError("state must be >= 0")
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    if inf.lambda1 == 0.0 or inf.phi == 0.0 or z == 0.0:
        rate = float(posting_intensity(z, inf)) + sys.mu
        out[:] = rng.standard_exponential(n) / rate if rate > 0 else math.inf
    else:
        m = 2 * n + 64
        while True:
            E = rng.standard_exponential(m)
            U = rng.random(m)
            used = _kernels.inter_jump_batch(float(z), sys.gamma, inf.lambda0, inf.lambda1,
                                             inf.phi, sys.mu, E, U, out)
            if used >= 0:
                break
            m *= 2
    if size is None:
        return float(out[0])
    return out.reshape(size)


def external_probability(x: float, sys: SystemParams, inf: InfluencerParams) -> float:
    total = float(posting_intensity(x, inf)) + sys.mu
    return sys.mu / total if total > 0 else 0.0


def classify_event(x_at_jump: float, sys: SystemParams, inf: InfluencerParams,
                   rng: np.random.Generator) -> EventKind:
    """Attribute an event at state ``x_at_jump`` to posting or the exogenous stream."""
    if sys.mu == 0.0:
        return EventKind.INTERNAL
    if rng.random() < external_probability(x_at_jump, sys, inf):
        return EventKind.EXTERNAL
    return EventKind.INTERNAL


def step(x: float, sys: SystemParams, inf: InfluencerParams, rng: np.random.Generator,
         t: float = 0.0, zeta: float | None = None, jump: float | None = None,
         kind: EventKind | None = None, mode: str = "exact") -> Event:
    """Advance the embedded chain by one event from post-jump state ``x``.

    The state decays exactly for the inter-event time, the event type is
    drawn from the intensities at the jump instant (``mode="exact"``) or at
    ``x`` itself (``mode="previous"``), and the jump is added.  ``zeta``,
    ``jump`` and ``kind`` may be forced.  The returned event's
    ``state_after_jump`` is the next chain state.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if zeta is None:
        zeta = sample_inter_jump(x, sys, inf, rng)
    xd = x * math.exp(-sys.gamma * zeta)
    if kind is None:
        kind = classify_event(xd if mode == "exact" else x, sys, inf, rng)
    if jump is None:
        if kind is EventKind.INTERNAL:
            jump = float(conditional_jump_mean(xd, sys, inf)) * float(inf.v_hat.sample(rng))
        else:
            jump = float(sys.w_dist.sample(rng))
    return Event(t + zeta, kind, xd, jump)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def _chunk_size(sys, inf, horizon, x_guess):
    rate = float(posting_intensity(max(x_guess, 1.0), inf)) + sys.mu
    return int(min(_CHUNK_MAX, max(1024, 1.1 * rate * horizon + 64)))


def simulate_trajectory(sys: SystemParams, inf: InfluencerParams, horizon: float, seed: int,
                        x0: float = 0.0, influencer_id: int = 0, replica: int = 0,
                        mode: str = "exact", max_events: int | None = None) -> EventLog:
    """All events of one influencer in [0, horizon], reproducible from the seed.

    Raises OverflowError when more than ``max_events`` events occur.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if x0 < 0:
        raise ValueError("initial state must be >= 0")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    ss_e, ss_v, ss_w = stream_seeds(seed, influencer_id, replica)
    rng_e, rng_v, rng_w = (np.random.Generator(np.random.PCG64(s)) for s in (ss_e, ss_v, ss_w))
    n = _chunk_size(sys, inf, horizon, x0)
    nw = n if sys.mu > 0 else 1
    E = rng_e.standard_exponential(n)
    U = rng_e.random(n)
    V = inf.v_hat.sample(rng_v, n)
    W = sys.w_dist.sample(rng_w, nw)
    state = np.array([0.0, float(x0), float(x0)])
    cursor = np.zeros(4, dtype=np.int64)
    parts = []

    def fresh():
        return (np.empty(n), np.empty(n, dtype=np.int8), np.empty(n), np.empty(n))

    out = fresh()
    while True:
        done = _kernels.advance(state, float(horizon), sys.gamma, sys.theta, sys.epsilon,
                                inf.beta, inf.lambda0, inf.lambda1, inf.phi, sys.mu,
                                mode == "previous", E, U, V, W, cursor, *out)
        if done:
            break
        if cursor[0] >= E.shape[0]:
            E = rng_e.standard_exponential(n)
            U = rng_e.random(n)
            cursor[0] = 0
        if cursor[1] >= V.shape[0]:
            V = inf.v_hat.sample(rng_v, n)
            cursor[1] = 0
        if cursor[2] >= W.shape[0]:
            W = sys.w_dist.sample(rng_w, nw)
            cursor[2] = 0
        if max_events is not None and len(parts) * n + cursor[3] > max_events:
            raise OverflowError(f"more than {max_events} events before the horizon")
        if cursor[3] >= n:
            parts.append(out)
            out = fresh()
            cursor[3] = 0
    k = int(cursor[3])
    if max_events is not None and len(parts) * n + k > max_events:
        raise OverflowError(f"more than {max_events} events before the horizon")
    parts.append(tuple(a[:k] for a in out))
    cols = [np.concatenate([p[c] for p in parts]) for c in range(4)]
    return EventLog(influencer_id, cols[0], cols[1], cols[2], cols[3], float(horizon), seed,
                    float(x0), sys.gamma)


@dataclass(eq=False)
class JointTrajectory:
    """Independent trajectories of several influencers on a shared clock."""

    logs: list[EventLog]
    system: SystemParams
    horizon: float
    burn_in: float
    replica: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError("burn-in must lie in [0, horizon)")
        if any(log.horizon != self.horizon for log in self.logs):
            raise ValueError("all logs must share the horizon")

    @property
    def window(self) -> float:
        return self.horizon - self.burn_in

    def merged(self):
        """Event times, influencer ids and log-levels ln X(T+) + gamma*T, time-ordered."""
        g = self.system.gamma
        t = np.concatenate([log.times for log in self.logs])
        ids = np.concatenate([np.full(len(log), i, dtype=np.int64) for i, log in enumerate(self.logs)])
        lv = np.concatenate([np.log(log.x_after) + g * log.times for log in self.logs])
        order = np.argsort(t, kind="stable")
        return t[order], ids[order], lv[order]


def simulate_population(scenario=None, replica: int = 0, *, system: SystemParams | None = None,
                        influencers: Sequence[InfluencerParams] | None = None,
                        horizon: float | None = None, seed: int = 0,
                        burnin_frac: float = DEFAULT_BURNIN_FRAC, x0=0.0,
                        mode: str = "exact") -> JointTrajectory:
    """Simulate every influencer of a scenario (or of explicit parameters)."""
    if scenario is not None:
        system, influencers = scenario.system, scenario.influencers
        horizon, seed, burnin_frac = scenario.horizon, scenario.seed, scenario.burnin_frac
    if not influencers:
        raise ValueError("need at least one influencer")
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (len(influencers),))
    logs = [simulate_trajectory(system, inf, horizon, seed, x0=float(x0s[i]),
                                influencer_id=i, replica=replica, mode=mode)
            for i, inf in enumerate(influencers)]
    return JointTrajectory(logs, system, float(horizon), burnin_frac * horizon, replica)


# ---------------------------------------------------------------------------
# Competition metrics
# ---------------------------------------------------------------------------


@dataclass
class Leadership:
    lead_time: np.ndarray
    stays: np.ndarray
    window: float

    def __add__(self, other: "Leadership") -> "Leadership":
        return Leadership(self.lead_time + other.lead_time, self.stays + other.stays,
                          self.window + other.window)

    @property
    def probability(self) -> np.ndarray:
        return self.lead_time / self.window

    @property
    def average_stay(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.stays > 0, self.lead_time / np.maximum(self.stays, 1), np.nan)


def leadership(jt: JointTrajectory) -> Leadership:
    if jt.window <= 0:
        raise ValueError("empty post-burn-in window")
    t, ids, lv = jt.merged()
    with np.errstate(divide="ignore"):
        start = np.log(np.array([log.x0 for log in jt.logs], dtype=float))
    lead, stays = _kernels.leadership(t, ids, lv, start, jt.burn_in, jt.horizon)
    return Leadership(lead, stays, jt.window)


def _pooled(jts) -> Leadership:
    if isinstance(jts, JointTrajectory):
        return leadership(jts)
    it = iter(jts)
    total = leadership(next(it))
    for jt in it:
        total = total + leadership(jt)
    return total


def first_place_probability(jt) -> np.ndarray:
    """Fraction of post-burn-in time each influencer holds the top popularity.

    Accepts one joint trajectory or an iterable of replicas (pooled).
    """
    return _pooled(jt).probability


def first_place_average_stay(jt) -> np.ndarray:
    """Mean length of uninterrupted spells in first place; nan if never first."""
    return _pooled(jt).average_stay


# ---------------------------------------------------------------------------
# Occupation times
# ---------------------------------------------------------------------------


@dataclass
class OccupationHistogram:
    edges: np.ndarray
    occupation: np.ndarray
    underflow: float = 0.0
    overflow: float = 0.0
    window: float = field(default=0.0)

    def __add__(self, other):
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("histograms have different edges")
        return OccupationHistogram(self.edges, self.occupation + other.occupation,
                                   self.underflow + other.underflow,
                                   self.overflow + other.overflow, self.window + other.window)

    @property
    def total(self) -> float:
        return float(self.underflow + self.occupation.sum() + self.overflow)

    @property
    def density(self) -> np.ndarray:
        return self.occupation / (self.window * np.diff(self.edges))

    def cdf_at_edges(self) -> np.ndarray:
        """Fraction of time spent below each edge."""
        return (self.underflow + np.concatenate([[0.0], np.cumsum(self.occupation)])) / self.window

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "occupation_days", "density"])
            for lo, hi, occ, d in zip(self.edges[:-1], self.edges[1:], self.occupation, self.density):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(occ)), repr(float(d))])


def occupation_pdf(log: EventLog, edges, gamma: float | None = None, t0: float = 0.0,
                   t1: float | None = None) -> OccupationHistogram:
    """Exact time spent by X in each bin of ``edges`` over [t0, t1]."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] <= 0:
        raise ValueError("edges must be positive and strictly increasing")
    gamma = log.gamma if gamma is None else gamma
    if gamma is None:
        raise ValueError("gamma is required")
    t1 = log.horizon if t1 is None else t1
    if not t1 > t0:
        raise ValueError("empty window")
    occ = np.zeros(edges.size + 1)
    _kernels.occupation(log.times, log.x_after, float(log.x0), float(gamma), float(t0),
                        float(t1), np.log(edges), occ)
    return OccupationHistogram(edges, occ[1:-1].copy(), float(occ[0]), float(occ[-1]), t1 - t0)


def time_average(log: EventLog, gamma: float | None = None, t0: float = 0.0,
                 t1: float | None = None) -> float:
    """Exact time average of X over [t0, t1]."""
    gamma = log.gamma if gamma is None else gamma
    t1 = log.horizon if t1 is None else t1
    starts = np.concatenate([[0.0], log.times])
    ends = np.concatenate([log.times, [t1]])
    xs = np.concatenate([[log.x0], log.x_after])
    a = np.clip(starts, t0, t1)
    b = np.clip(ends, t0, t1)
    xa = xs * np.exp(-gamma * (a - starts))
    area = xa * -np.expm1(-gamma * (b - a)) / gamma
    return float(area.sum() / (t1 - t0))
