"""
Kernel log-rank test for two groups of right-censored survival times.

Every process (counting, at-risk) is only needed at the observed event times,
so the weighted log-rank integral reduces to one point mass per event.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional
import logging

import numpy as np

from services.bootstrap import TestReport, WeightScheme, WildBuilder, calibrate, wild_replicates
from services.errors import InputError
from services.functional import PointMassFunctional, norm_sq
from services.kernels import KernelSpec
from services.mmd import group_warnings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CensoredObs:
    time: float
    event: bool
    group: int


@dataclass(frozen=True)
class RiskSnapshot:
    t: float
    y0: int
    y1: int

    @property
    def y(self) -> int:
        return self.y0 + self.y1


@dataclass(frozen=True)
class CensoredSample:
    time: np.ndarray
    event: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).reshape(-1).astype(bool)
        group = np.asarray(self.group).reshape(-1)
        if not (time.shape == event.shape == group.shape):
            raise InputError(f"time/event/group lengths differ: {time.shape[0]}, {event.shape[0]}, {group.shape[0]}")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise InputError("survival times must be finite and nonnegative")
        if not np.all(np.isin(group, (0, 1))):
            raise InputError("group labels must be 0 or 1")
        group = group.astype(int)
        if np.sum(group == 0) < 1 or np.sum(group == 1) < 1:
            raise InputError("both groups need at least one observation")
        for arr in (time, event, group):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "group", group)

    @classmethod
    def from_observations(cls, obs: Iterable[CensoredObs]) -> "CensoredSample":
        obs = list(obs)
        return cls(
            np.array([o.time for o in obs], dtype=float),
            np.array([o.event for o in obs], dtype=bool),
            np.array([o.group for o in obs], dtype=int),
        )

    @property
    def obs(self) -> List[CensoredObs]:
        return [CensoredObs(float(t), bool(e), int(g)) for t, e, g in zip(self.time, self.event, self.group)]

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n0(self) -> int:
        return int(np.sum(self.group == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.group == 1))

    @property
    def n_events(self) -> int:
        return int(np.sum(self.event))


def _at_risk_counts(s: CensoredSample, t: np.ndarray):
    """Y_0(t), Y_1(t) with the closed inequality time >= t, vectorised over t"""
    counts = []
    for label in (0, 1):
        ordered = np.sort(s.time[s.group == label])
        counts.append(ordered.shape[0] - np.searchsorted(ordered, t, side="left"))
    return counts[0], counts[1]


def at_risk(s: CensoredSample, t: float) -> RiskSnapshot:
    if t < 0:
        raise InputError(f"time must be nonnegative, got {t}")
    y0, y1 = _at_risk_counts(s, np.asarray([t], dtype=float))
    return RiskSnapshot(t=float(t), y0=int(y0[0]), y1=int(y1[0]))


def _event_terms(s: CensoredSample):
    """Event indices, their times, and the unweighted coefficients"""
    events = np.flatnonzero(s.event)
    times = s.time[events]
    if events.size == 0:
        return events, times, np.zeros(0)
    y0, y1 = _at_risk_counts(s, times)
    y0 = y0.astype(float)
    y1 = y1.astype(float)
    # y >= 1 at an event time: the subject itself is still at risk
    weight = y0 * y1 / (y0 + y1)
    groups = s.group[events]
    own = np.where(groups == 0, y0, y1)
    sign = np.where(groups == 0, 1.0, -1.0)
    scale = np.sqrt(s.n / (s.n0 * s.n1))
    return events, times, scale * weight * sign / own


def logrank_coefficients(s: CensoredSample) -> PointMassFunctional:
    _, times, coeffs = _event_terms(s)
    return PointMassFunctional(times.reshape(-1, 1), coeffs, {"label": "logrank"})


class LogrankWildBuilder(WildBuilder):
    """One weight per subject; censored subjects' weights are drawn but unused"""
    label = "logrank-wild"

    def __init__(self, s: CensoredSample):
        events, times, coeffs = _event_terms(s)
        super().__init__(times.reshape(-1, 1), s.n)
        self.events = events
        self.base = coeffs

    def coefficients(self, weights: np.ndarray) -> np.ndarray:
        return self.base * weights[self.events]


def logrank_wild_builder(s: CensoredSample) -> LogrankWildBuilder:
    return LogrankWildBuilder(s)


def km_transform(s: CensoredSample) -> CensoredSample:
    """Replace every time by the pooled Kaplan-Meier distribution estimate F(time), in [0, 1]"""
    event_times = np.unique(s.time[s.event])
    if event_times.size == 0:
        return CensoredSample(np.zeros(s.n), s.event, s.group)
    ordered = np.sort(s.time)
    at_risk_total = ordered.shape[0] - np.searchsorted(ordered, event_times, side="left")
    deaths = np.array([np.sum(s.event & (s.time == u)) for u in event_times], dtype=float)
    survival = np.cumprod(1.0 - deaths / at_risk_total)
    last = np.searchsorted(event_times, s.time, side="right") - 1
    distribution = np.where(last >= 0, 1.0 - survival[np.clip(last, 0, None)], 0.0)
    return CensoredSample(np.clip(distribution, 0.0, 1.0), s.event, s.group)


def resolve_time_kernel(spec: KernelSpec, s: CensoredSample) -> KernelSpec:
    """
    Fix the length-scale of a kernel on the time axis. The median heuristic runs over
    the distinct observed times: ties from a common study end (or from the flat tail of
    the Kaplan-Meier scale) would otherwise pull the median to zero.
    """
    if spec.is_resolved:
        return spec
    distinct = np.unique(s.time)
    if distinct.size < 2:
        # every kernel value is K(0) whatever the length-scale
        logger.warning("all observed times coincide; using lengthscale_sq = 1")
        return spec.model_copy(update={"lengthscale_sq": 1.0})
    return spec.resolve(distinct.reshape(-1, 1))


def logrank_test(
    s: CensoredSample,
    spec: KernelSpec,
    scheme: Optional[WeightScheme] = None,
    M: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    use_km_transform: bool = False,
    threads: int = 1,
) -> TestReport:
    scheme = scheme or WeightScheme()
    warnings = group_warnings(s.n0, s.n1)
    if use_km_transform:
        s = km_transform(s)

    echo = {"n0": s.n0, "n1": s.n1, "events": s.n_events, "km_transform": use_km_transform, "weights": scheme.kind}
    if s.n_events == 0:
        message = "no observed events; the statistic and every replicate are 0"
        logger.warning(message)
        return calibrate(0.0, [0.0] * M, alpha, test="logrank", n=s.n, seed=seed,
                         kernel=spec, warnings=warnings + [message], config_echo=echo)

    spec = resolve_time_kernel(spec, s)
    statistic = norm_sq(logrank_coefficients(s), spec)
    logger.info(f"Log-rank statistic {statistic:.6g} ({s.n_events} events, n={s.n})")
    replicates = wild_replicates(logrank_wild_builder(s), scheme, s.n, M, spec, seed, threads)

    return calibrate(statistic, replicates, alpha, test="logrank", n=s.n, seed=seed,
                     kernel=spec, warnings=warnings, config_echo=echo)
