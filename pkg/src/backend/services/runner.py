from typing import Callable, Dict, Literal, Union
import logging

from pydantic import BaseModel, ConfigDict, Field

from services.bootstrap import TestReport, WeightScheme
from services.errors import InputError
from services.gcm import CondSample, RegressionConfig, gcm_test, kgcm_test, wgcm_test
from services.kernels import KernelSpec
from services.logrank import CensoredSample, logrank_test
from services.mmd import TwoSample, mmd_test

logger = logging.getLogger(__name__)

TestName = Literal["mmd", "logrank", "kgcm", "gcm", "wgcm"]

# length-scales of the three kernelised GCM variants in the experiments
KERNEL_PRESETS: Dict[str, KernelSpec] = {
    "kgcm1": KernelSpec(family="squared-exponential", lengthscale_sq=0.1),
    "kgcm2": KernelSpec(family="squared-exponential", lengthscale_sq=1.0),
    "kgcm3": KernelSpec(family="squared-exponential", lengthscale_rule="median-heuristic"),
}


class TestConfig(BaseModel):
    __test__ = False  # not a pytest class
    model_config = ConfigDict(frozen=True)

    test: TestName
    kernel: KernelSpec = KernelSpec(lengthscale_rule="median-heuristic")
    scheme: WeightScheme = WeightScheme()
    M: int = Field(default=1000, ge=1)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    regression: RegressionConfig = RegressionConfig()
    km_transform: bool = False
    threads: int = Field(default=1, ge=1)


TestFn = Callable[[object, int], TestReport]


def preset_test(name: str, M: int = 1000, alpha: float = 0.05, **overrides) -> TestConfig:
    """kgcm1 / kgcm2 / kgcm3 / gcm / wgcm / mmd / logrank with experiment defaults"""
    if name in KERNEL_PRESETS:
        return TestConfig(test="kgcm", kernel=KERNEL_PRESETS[name], M=M, alpha=alpha, **overrides)
    if name in ("gcm", "wgcm", "mmd", "logrank", "kgcm"):
        return TestConfig(test=name, M=M, alpha=alpha, **overrides)
    raise InputError(f"unknown test preset {name!r}")


def run_test(config: TestConfig, sample, seed: int) -> TestReport:
    common = dict(scheme=config.scheme, M=config.M, alpha=config.alpha, seed=seed, threads=config.threads)

    if config.test == "mmd":
        _expect(sample, TwoSample, config.test)
        return mmd_test(sample, config.kernel, **common)
    if config.test == "logrank":
        _expect(sample, CensoredSample, config.test)
        return logrank_test(sample, config.kernel, use_km_transform=config.km_transform, **common)

    _expect(sample, CondSample, config.test)
    if config.test == "kgcm":
        return kgcm_test(sample, config.regression, config.kernel, **common)
    if config.test == "gcm":
        return gcm_test(sample, config.regression, **common)
    return wgcm_test(sample, config.regression, **common)


def _expect(sample, kind: type, test: str):
    if not isinstance(sample, kind):
        raise InputError(f"{test} test needs a {kind.__name__}, got {type(sample).__name__}")


def as_test_fn(test: Union[TestConfig, TestFn]) -> TestFn:
    if isinstance(test, TestConfig):
        return lambda sample, seed: run_test(test, sample, seed)
    return test
