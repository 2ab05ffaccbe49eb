"""
Simulated data sets and the rejection-rate harness behind the power curves.

Repetition r at grid point g always draws its data from the stream (seed, g, r)
and bootstraps with a seed derived from the same key, so a whole experiment is
reproducible and can run on any number of threads.
"""
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from services.bootstrap import derive_seed, resolve_threads, run_indexed, stream_generator
from services.errors import ExperimentError, InputError
from services.gcm import CondSample
from services.kernels import KernelSpec, paired_kernel
from services.logrank import CensoredSample
from services.mmd import TwoSample
from services.runner import TestConfig, TestFn, as_test_fn, preset_test

logger = logging.getLogger(__name__)

GeneratorName = Literal["data1", "data2", "two_sample", "survival"]

# parameter swept by a grid when the caller does not name one
DEFAULT_GRID_PARAM = {"data1": "gamma", "data2": "d", "two_sample": "shift", "survival": "rate1"}

# 95% normal quantile for the binomial half-widths
Z95 = 1.959963984540054


def gen_data1(n: int, gamma: float, rng: np.random.Generator) -> CondSample:
    """Z ~ N(0,1), X = Z + U1 sin(5Z), Y = Z^2 + gamma U1 + (1 - gamma) U2"""
    if not 0.0 <= gamma <= 1.0:
        raise InputError(f"gamma must lie in [0, 1], got {gamma}")
    z = rng.standard_normal(n)
    u1 = rng.standard_normal(n)
    u2 = rng.standard_normal(n)
    x = z + u1 * np.sin(5.0 * z)
    y = z ** 2 + gamma * u1 + (1.0 - gamma) * u2
    return CondSample(x, y, z.reshape(-1, 1))


def gen_data2(n: int, d: int, rng: np.random.Generator) -> CondSample:
    """Z, U ~ N(0, I_d); X = Z_1 + d^{-1/2} sum U_i Z_i, Y = Z_2 + d^{-1/2} sum U_i"""
    if d < 2:
        raise InputError(f"data2 needs d >= 2, got {d}")
    z = rng.standard_normal((n, d))
    u = rng.standard_normal((n, d))
    x = z[:, 0] + np.sum(u * z, axis=1) / np.sqrt(d)
    y = z[:, 1] + np.sum(u, axis=1) / np.sqrt(d)
    return CondSample(x, y, z)


def gen_two_sample(n0: int, n1: int, shift: float, rng: np.random.Generator) -> TwoSample:
    if n0 < 1 or n1 < 1:
        raise InputError(f"group sizes must be >= 1, got {n0} and {n1}")
    x = rng.standard_normal(n0)
    y = shift + rng.standard_normal(n1)
    return TwoSample(x.reshape(-1, 1), y.reshape(-1, 1))


def gen_survival(
    n0: int,
    n1: int,
    rate1: float,
    cens0: float,
    cens1: float,
    rng: np.random.Generator,
) -> CensoredSample:
    """
    Event times Exp(1) in group 0 and Exp(rate1) in group 1, censoring Exp(cens_l);
    a censoring rate of 0 means no censoring.
    """
    if rate1 <= 0 or cens0 < 0 or cens1 < 0:
        raise InputError("hazard must be positive and censoring rates nonnegative")
    if n0 < 1 or n1 < 1:
        raise InputError(f"group sizes must be >= 1, got {n0} and {n1}")

    def censoring(rate: float, size: int) -> np.ndarray:
        if rate == 0:
            return np.full(size, np.inf)
        return rng.exponential(1.0 / rate, size)

    latent = np.concatenate([rng.exponential(1.0, n0), rng.exponential(1.0 / rate1, n1)])
    censor = np.concatenate([censoring(cens0, n0), censoring(cens1, n1)])
    group = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    return CensoredSample(np.minimum(latent, censor), latent <= censor, group)


def population_mmd_sq(shift: float, spec: KernelSpec, draws: int, rng: np.random.Generator) -> float:
    """Monte-Carlo E K(X,X') - 2 E K(X,Y) + E K(Y,Y') for N(0,1) against N(shift,1)"""
    x, x2 = rng.standard_normal(draws), rng.standard_normal(draws)
    y, y2 = shift + rng.standard_normal(draws), shift + rng.standard_normal(draws)
    return float(
        np.mean(paired_kernel(spec, x, x2))
        - 2.0 * np.mean(paired_kernel(spec, x, y))
        + np.mean(paired_kernel(spec, y, y2))
    )


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: GeneratorName
    n: int = Field(default=100, ge=1)
    gamma: float = Field(default=0.0, ge=0.0, le=1.0)
    d: int = Field(default=2, ge=2)
    n0: Optional[int] = Field(default=None, ge=1)
    n1: Optional[int] = Field(default=None, ge=1)
    shift: float = 0.0
    rate1: float = Field(default=1.0, gt=0.0)
    cens0: float = Field(default=0.25, ge=0.0)
    cens1: float = Field(default=0.25, ge=0.0)

    def group_sizes(self) -> Tuple[int, int]:
        n0 = self.n0 if self.n0 is not None else self.n // 2
        n1 = self.n1 if self.n1 is not None else self.n - n0
        return n0, n1

    def with_param(self, param: str, value) -> "GeneratorConfig":
        if param not in type(self).model_fields or param == "name":
            raise InputError(f"{param!r} is not a generator parameter")
        try:
            return type(self).model_validate({**self.model_dump(), param: value})
        except ValidationError as e:
            reasons = "; ".join(item["msg"] for item in e.errors())
            raise InputError(f"grid value {value!r} is invalid for {param}: {reasons}") from e


def generate(config: GeneratorConfig, rng: np.random.Generator):
    if config.name == "data1":
        return gen_data1(config.n, config.gamma, rng)
    if config.name == "data2":
        return gen_data2(config.n, config.d, rng)
    n0, n1 = config.group_sizes()
    if config.name == "two_sample":
        return gen_two_sample(n0, n1, config.shift, rng)
    return gen_survival(n0, n1, config.rate1, config.cens0, config.cens1, rng)


class ExperimentResult(BaseModel):
    test: str = ""
    param_name: str = ""
    param_grid: List[float]
    rates: List[float]
    reps: int = Field(ge=1)
    ci_half_width: List[float]
    seed: int = 0
    config_echo: Dict = Field(default_factory=dict)

    def rows(self) -> List[Dict[str, float]]:
        rows = []
        for param, rate, half in zip(self.param_grid, self.rates, self.ci_half_width):
            rows.append({
                "param": param,
                "rate": rate,
                "ci_low": max(0.0, rate - half),
                "ci_high": min(1.0, rate + half),
                "reps": self.reps,
            })
        return rows


def binomial_half_width(rate: float, reps: int) -> float:
    return Z95 * math.sqrt(rate * (1.0 - rate) / reps)


def power_curves(
    tests: Mapping[str, Union[TestConfig, TestFn]],
    generator: GeneratorConfig,
    grid: Sequence[float],
    reps: int,
    seed: int,
    grid_param: Optional[str] = None,
    threads: Union[int, str] = 1,
) -> Dict[str, ExperimentResult]:
    """
    Rejection rates of several tests on the same simulated data sets.
    A failing repetition aborts the whole experiment; no partial rates are returned.
    """
    if reps < 1:
        raise InputError(f"reps must be >= 1, got {reps}")
    if not tests:
        raise InputError("power_curves needs at least one test")
    grid = list(grid)
    grid_param = grid_param or DEFAULT_GRID_PARAM[generator.name]
    configs = [generator.with_param(grid_param, value) for value in grid]
    names = list(tests)
    test_fns = [as_test_fn(tests[name]) for name in names]

    def repetition(k: int) -> Tuple[bool, ...]:
        gi, r = divmod(k, reps)
        try:
            sample = generate(configs[gi], stream_generator(seed, gi, r))
            test_seed = derive_seed(seed, gi, r, 1)
            return tuple(bool(fn(sample, test_seed).reject) for fn in test_fns)
        except Exception as e:
            raise ExperimentError(gi, grid[gi], r, e) from e

    workers = resolve_threads(threads)
    logger.info(f"Running {len(grid)} grid points x {reps} repetitions for {names} on {workers} thread(s)")
    outcomes = np.array(run_indexed(repetition, len(grid) * reps, workers), dtype=bool)
    outcomes = outcomes.reshape(len(grid), reps, len(names))

    results = {}
    for t, name in enumerate(names):
        rates = outcomes[:, :, t].mean(axis=1).tolist()
        test = tests[name]
        results[name] = ExperimentResult(
            test=name,
            param_name=grid_param,
            param_grid=[float(v) for v in grid],
            rates=rates,
            reps=reps,
            ci_half_width=[binomial_half_width(p, reps) for p in rates],
            seed=seed,
            config_echo={
                "generator": generator.model_dump(),
                "test": test.model_dump(exclude={"threads"}) if isinstance(test, TestConfig) else getattr(test, "__name__", "custom"),
            },
        )
        logger.info(f"{name}: rates {['%.3f' % p for p in rates]} over {grid_param}={grid}")
    return results


def rejection_rate(
    test_config: Union[TestConfig, TestFn],
    generator_config: GeneratorConfig,
    grid: Sequence[float],
    reps: int,
    seed: int,
    grid_param: Optional[str] = None,
    threads: Union[int, str] = 1,
) -> ExperimentResult:
    name = test_config.test if isinstance(test_config, TestConfig) else "custom"
    return power_curves({name: test_config}, generator_config, grid, reps, seed, grid_param, threads)[name]


FIGURE_TESTS = ("gcm", "wgcm", "kgcm1", "kgcm2", "kgcm3")


def figure_preset(name: str, M: int = 300) -> Tuple[GeneratorConfig, List[float], Dict[str, TestConfig]]:
    """Desk-scale versions of the two conditional-independence power figures"""
    tests = {test: preset_test(test, M=M) for test in FIGURE_TESTS}
    if name == "figure1":
        return GeneratorConfig(name="data1", n=100), [0.0, 0.25, 0.5, 0.75, 1.0], tests
    if name == "figure2":
        return GeneratorConfig(name="data2", n=100), [2, 5, 10, 15, 20], tests
    raise InputError(f"unknown figure preset {name!r}")
