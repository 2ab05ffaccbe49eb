from dataclasses import dataclass
from typing import List, Optional
import logging

import numpy as np

from services.bootstrap import TestReport, WeightScheme, WildBuilder, calibrate, wild_replicates
from services.errors import InputError
from services.functional import PointMassFunctional, norm_sq
from services.kernels import KernelSpec, as_points

logger = logging.getLogger(__name__)

# below this fraction of the pooled sample a group is treated as vanishing
MIN_GROUP_FRACTION = 0.05


@dataclass(frozen=True)
class TwoSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = as_points(self.x)
        y = as_points(self.y)
        if x.shape[0] < 1 or y.shape[0] < 1:
            raise InputError(f"both groups need at least one observation (got {x.shape[0]} and {y.shape[0]})")
        if x.shape[1] != y.shape[1]:
            raise InputError(f"groups have different dimensions: {x.shape[1]} vs {y.shape[1]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n0(self) -> int:
        return self.x.shape[0]

    @property
    def n1(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.n0 + self.n1

    @property
    def pooled(self) -> np.ndarray:
        return np.vstack([self.x, self.y])

    def swapped(self) -> "TwoSample":
        return TwoSample(self.y, self.x)


def mmd_coefficients(s: TwoSample) -> PointMassFunctional:
    """sqrt(n)/n0 on every x, -sqrt(n)/n1 on every y: the difference of empirical means, scaled"""
    root_n = np.sqrt(s.n)
    coeffs = np.concatenate([np.full(s.n0, root_n / s.n0), np.full(s.n1, -root_n / s.n1)])
    return PointMassFunctional(s.pooled, coeffs, {"label": "mmd"})


def mmd_statistic(s: TwoSample, spec: KernelSpec) -> float:
    """n * MMD^2 between the two empirical measures (V-statistic form)"""
    return norm_sq(mmd_coefficients(s), spec)


class MMDWildBuilder(WildBuilder):
    """
    First n0 weights are U (group 0), the remaining n1 are V (group 1).
    Each block is centred within its group before use.
    """
    label = "mmd-wild"

    def __init__(self, s: TwoSample):
        super().__init__(s.pooled, s.n)
        self.n0 = s.n0
        self.n1 = s.n1
        self.root_n = np.sqrt(s.n)

    def coefficients(self, weights: np.ndarray) -> np.ndarray:
        u = weights[:self.n0]
        v = weights[self.n0:]
        w_x = u - u.mean()
        w_y = v - v.mean()
        return np.concatenate([self.root_n * w_x / self.n0, -self.root_n * w_y / self.n1])


def mmd_wild_builder(s: TwoSample) -> MMDWildBuilder:
    return MMDWildBuilder(s)


def group_warnings(n0: int, n1: int) -> List[str]:
    fraction = min(n0, n1) / (n0 + n1)
    if fraction < MIN_GROUP_FRACTION:
        message = f"smallest group is {fraction:.1%} of the sample (n0={n0}, n1={n1})"
        logger.warning(message)
        return [message]
    return []


def mmd_test(
    s: TwoSample,
    spec: KernelSpec,
    scheme: Optional[WeightScheme] = None,
    M: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> TestReport:
    scheme = scheme or WeightScheme()
    spec = spec.resolve(s.pooled)
    warnings = group_warnings(s.n0, s.n1)

    statistic = mmd_statistic(s, spec)
    logger.info(f"MMD statistic {statistic:.6g} (n0={s.n0}, n1={s.n1})")
    replicates = wild_replicates(mmd_wild_builder(s), scheme, s.n, M, spec, seed, threads)

    return calibrate(
        statistic, replicates, alpha,
        test="mmd", n=s.n, seed=seed, kernel=spec, warnings=warnings,
        config_echo={"n0": s.n0, "n1": s.n1, "dim": s.x.shape[1], "weights": scheme.kind},
    )
