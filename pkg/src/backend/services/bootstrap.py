from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Union
import logging
import math
import os

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.errors import InputError, ReplicateError
from services.functional import PointMassFunctional, clamp_norm_sq, norm_sq, quadratic_form
from services.kernels import KernelSpec, as_points, gram

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


class WeightScheme(BaseModel):
    """Wild bootstrap multipliers: i.i.d., mean 0, variance 1"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["rademacher", "gaussian"] = "rademacher"


def stream_generator(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream addressed by (seed, *keys)"""
    sequence = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed for a sub-task, e.g. the bootstrap of one simulated dataset"""
    sequence = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        return stream_generator(self.seed, self.stream_id)


def resolve_threads(threads: Union[int, str, None]) -> int:
    if threads is None:
        return 1
    if threads == "auto":
        return os.cpu_count() or 1
    count = int(threads)
    if count < 1:
        raise InputError(f"threads must be >= 1 or 'auto', got {threads}")
    return count


def run_indexed(task: Callable[[int], Any], count: int, threads: int = 1) -> List[Any]:
    """Run task(0..count-1); results are ordered by index whatever the schedule"""
    if threads <= 1 or count <= 1:
        return [task(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, range(count)))


def gen_weights(scheme: WeightScheme, n: int, rng: Union[RngStream, np.random.Generator]) -> np.ndarray:
    if n < 0:
        raise InputError(f"weight count must be nonnegative, got {n}")
    generator = rng.generator() if isinstance(rng, RngStream) else rng
    if n == 0:
        return np.zeros(0)
    if scheme.kind == "rademacher":
        return generator.integers(0, 2, size=n) * 2.0 - 1.0
    return generator.standard_normal(n)


class WildBuilder:
    """
    Maps a weight vector to the wild bootstrap version of a statistic.
    The point set is fixed; only the coefficients depend on the weights, so the
    Gram matrix is computed once per test instead of once per replicate.
    """
    label = "wild"

    def __init__(self, points: np.ndarray, n_weights: int):
        points = as_points(points).copy()
        points.setflags(write=False)
        self.points = points
        self.n_weights = n_weights

    def coefficients(self, weights: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, weights) -> PointMassFunctional:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.shape[0] != self.n_weights:
            raise InputError(f"{self.label}: expected {self.n_weights} weights, got {weights.shape[0]}")
        return PointMassFunctional(self.points, self.coefficients(weights), {"label": self.label})


def wild_functionals(
    builder: Callable[[np.ndarray], PointMassFunctional],
    scheme: WeightScheme,
    n_weights: int,
    M: int,
    seed: int,
    threads: int = 1,
) -> List[PointMassFunctional]:
    """The M bootstrap representers; replicate b draws its weights from RngStream(seed, b)"""
    if M < 1:
        raise InputError(f"number of bootstrap replicates must be >= 1, got {M}")

    def build(b: int) -> PointMassFunctional:
        weights = gen_weights(scheme, n_weights, RngStream(seed, b))
        try:
            return builder(weights)
        except Exception as e:
            raise ReplicateError(b, e) from e

    return run_indexed(build, M, threads)


def wild_replicates(
    builder: Callable[[np.ndarray], PointMassFunctional],
    scheme: WeightScheme,
    n_weights: int,
    M: int,
    spec: KernelSpec,
    seed: int,
    threads: int = 1,
) -> List[float]:
    if M < 1:
        raise InputError(f"number of bootstrap replicates must be >= 1, got {M}")

    shared_points = getattr(builder, "points", None)
    shared_entries = None
    if shared_points is not None and len(shared_points) > 0:
        shared_entries = gram(spec, shared_points).entries
        kernel_max = float(np.max(np.abs(shared_entries)))

    def replicate(b: int) -> float:
        weights = gen_weights(scheme, n_weights, RngStream(seed, b))
        try:
            f = builder(weights)
        except Exception as e:
            raise ReplicateError(b, e) from e
        if shared_entries is not None and f.points is shared_points:
            return clamp_norm_sq(quadratic_form(shared_entries, f.coeffs), f.coeffs, kernel_max, f.meta)
        return norm_sq(f, spec)

    replicates = run_indexed(replicate, M, threads)
    logger.info(f"Computed {M} wild bootstrap replicates ({scheme.kind} weights)")
    return replicates


class TestReport(BaseModel):
    __test__ = False  # not a pytest class

    test: str = ""
    n: int = 0
    statistic: float
    replicates: List[float]
    critical_value: float
    p_value: float = Field(ge=0.0, le=1.0)
    reject: bool
    alpha: float = Field(gt=0.0, lt=1.0)
    M: int = Field(ge=1)
    seed: int = 0
    kernel: Optional[Dict[str, Any]] = None
    warnings: List[str] = Field(default_factory=list)
    config_echo: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_decision(self):
        if self.reject != (self.statistic > self.critical_value):
            raise ValueError("reject must equal statistic > critical_value")
        return self

    def replicate_summary(self) -> Dict[str, float]:
        values = np.asarray(self.replicates)
        return {
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "min": float(values[0]),
            "median": float(np.median(values)),
            "max": float(values[-1]),
        }

    def to_json_dict(self, emit_replicates: bool = False) -> Dict[str, Any]:
        data = {
            "test": self.test,
            "n": self.n,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "M": self.M,
            "kernel": self.kernel,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "replicate_summary": self.replicate_summary(),
            "config": self.config_echo,
        }
        if emit_replicates:
            data["replicates"] = list(self.replicates)
        return data


def critical_position(alpha: float, M: int) -> int:
    """1-based position ceil((1 - alpha) M) in the ascending replicate list"""
    # rounding first keeps e.g. (1 - 0.05) * 100 from landing on 95.000000001
    position = math.ceil(round((1.0 - alpha) * M, 9))
    return min(max(position, 1), M)


def calibrate(
    statistic: float,
    replicates: Sequence[float],
    alpha: float,
    *,
    test: str = "",
    n: int = 0,
    seed: int = 0,
    kernel: Optional[KernelSpec] = None,
    warnings: Optional[List[str]] = None,
    config_echo: Optional[Dict[str, Any]] = None,
) -> TestReport:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if len(replicates) == 0:
        raise InputError("calibration needs at least one bootstrap replicate")

    ordered = sorted(float(r) for r in replicates)
    M = len(ordered)
    critical_value = ordered[critical_position(alpha, M) - 1]
    exceed = sum(1 for r in ordered if r >= statistic)
    p_value = (1 + exceed) / (M + 1)
    reject = bool(statistic > critical_value)

    logger.info(f"{test or 'test'}: statistic={statistic:.6g}, critical={critical_value:.6g}, "
                f"p={p_value:.4f}, reject={reject}")

    return TestReport(
        test=test,
        n=n,
        statistic=float(statistic),
        replicates=ordered,
        critical_value=critical_value,
        p_value=p_value,
        reject=reject,
        alpha=alpha,
        M=M,
        seed=seed,
        kernel=kernel.describe() if kernel is not None else None,
        warnings=list(warnings or []),
        config_echo=dict(config_echo or {}),
    )
