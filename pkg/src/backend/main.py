"""
Command-line entry point.

    python main.py mmd --data two.csv --kernel se --lengthscale median --seed 7
    python main.py logrank --data surv.csv --km-transform
    python main.py gcm --data cond.csv --test kgcm --degree 2 --interactions
    python main.py spectrum --test kgcm --data cond.csv --bootstrap 500
    python main.py simulate --preset figure1 --reps 100 --output figure1.csv

Exit codes: 0 when the command ran (whatever the test decided), 2 for usage
and input errors, 1 for anything else.
"""
from typing import Dict, List, Literal, Optional, Sequence, Union
import argparse
import logging
import os
import sys

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.bootstrap import WeightScheme, resolve_threads, stream_generator
from services.csv_io import read_csv, write_report
from services.errors import InputError
from services.gcm import RegressionConfig, fit_residuals, kgcm_wild_builder
from services.kernels import KernelSpec
from services.logrank import km_transform, logrank_wild_builder, resolve_time_kernel
from services.mmd import mmd_wild_builder
from services.runner import KERNEL_PRESETS, TestConfig, preset_test, run_test
from services.simlab import FIGURE_TESTS, GeneratorConfig, figure_preset, power_curves
from services.spectrum import SpectrumReport, ks_distance, quantiles, sample_weighted_chisq, spectrum_from_builder

logger = logging.getLogger(__name__)

Subcommand = Literal["mmd", "logrank", "gcm", "simulate", "spectrum"]

SCHEMAS = {"mmd": "two_sample", "logrank": "survival", "gcm": "conditional", "kgcm": "conditional"}
FAMILIES = {"se": "squared-exponential", "constant": "constant", "rq": "rational-quadratic"}
DEFAULT_M = {"mmd": 1000, "logrank": 1000, "gcm": 1000, "spectrum": 500, "simulate": 300}
DEFAULT_SIM_TESTS = {"data1": FIGURE_TESTS, "data2": FIGURE_TESTS, "two_sample": ("mmd",), "survival": ("logrank",)}

# RunConfig field -> the flag that sets it, for usage messages
FIELD_FLAGS = {
    "kernel": "--kernel", "lengthscale": "--lengthscale", "rq_alpha": "--rq-alpha", "alpha": "--alpha",
    "M": "--bootstrap", "weights": "--weights", "seed": "--seed", "degree": "--degree",
    "interactions": "--interactions", "output": "--output", "threads": "--threads", "data": "--data",
    "test": "--test", "tests": "--tests", "generator": "--generator", "preset": "--preset", "grid": "--grid",
    "grid_param": "--grid-param", "n": "--n", "reps": "--reps", "draws": "--draws",
}

# stream for the chi-square draws; bootstrap replicates use one-element keys
CHISQ_STREAM = (0, 1)


class Settings:
    """Defaults that may come from the environment or a .env file; flags always win"""

    def __init__(self):
        load_dotenv()
        self.seed = os.getenv("KBT_SEED")
        self.threads = os.getenv("KBT_THREADS", "1")
        self.log_level = os.getenv("KBT_LOG_LEVEL", "INFO")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    subcommand: Subcommand
    data: Optional[str] = None
    test: str = ""
    kernel: Literal["se", "constant", "rq"] = "se"
    lengthscale: Union[float, Literal["median"]] = "median"
    rq_alpha: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    M: int = Field(default=1000, ge=1)
    weights: Literal["rademacher", "gaussian"] = "rademacher"
    seed: int = 0
    degree: Optional[int] = Field(default=None, ge=0)
    interactions: Optional[bool] = None
    km_transform: bool = False
    output: str = "-"
    threads: Union[int, Literal["auto"]] = 1
    emit_replicates: bool = False
    log_level: str = "INFO"
    # simulate
    generator: Optional[Literal["data1", "data2", "two_sample", "survival"]] = None
    preset: Optional[Literal["figure1", "figure2"]] = None
    tests: List[str] = Field(default_factory=list)
    grid: List[float] = Field(default_factory=list)
    grid_param: Optional[str] = None
    n: int = Field(default=100, ge=2)
    reps: int = Field(default=100, ge=1)
    # spectrum
    draws: int = Field(default=10000, ge=1)

    @field_validator("lengthscale")
    @classmethod
    def _positive_lengthscale(cls, value):
        if value != "median" and not value > 0:
            raise ValueError("must be positive or 'median'")
        return value

    @field_validator("threads")
    @classmethod
    def _positive_threads(cls, value):
        if value != "auto" and value < 1:
            raise ValueError("must be >= 1 or 'auto'")
        return value

    @field_validator("tests")
    @classmethod
    def _known_tests(cls, value):
        known = set(KERNEL_PRESETS) | {"mmd", "logrank", "kgcm", "gcm", "wgcm"}
        unknown = [name for name in value if name not in known]
        if unknown:
            raise ValueError(f"unknown test(s) {unknown}; choose from {sorted(known)}")
        return value

    @model_validator(mode="after")
    def _check_subcommand(self):
        if self.subcommand == "simulate":
            if (self.preset is None) == (self.generator is None):
                raise ValueError("exactly one of --preset and --generator is required")
            if self.generator is not None and not self.grid:
                raise ValueError("--grid is required with --generator")
            if self.output == "-" and len(self.simulation_tests()) > 1:
                raise ValueError("--output must name a file when several tests are simulated")
        elif self.data is None:
            raise ValueError("--data is required")
        elif not os.path.isfile(self.data):
            raise ValueError(f"--data: no such file {self.data!r}")
        return self

    def kernel_spec(self) -> KernelSpec:
        family = FAMILIES[self.kernel]
        if self.lengthscale == "median":
            return KernelSpec(family=family, lengthscale_rule="median-heuristic", rq_alpha=self.rq_alpha)
        return KernelSpec(family=family, lengthscale_sq=self.lengthscale, rq_alpha=self.rq_alpha)

    def regression(self) -> RegressionConfig:
        return RegressionConfig(degree=self.degree, interactions=self.interactions)

    def test_config(self, test: str, threads: Union[int, str] = 1) -> TestConfig:
        overrides = dict(
            scheme=WeightScheme(kind=self.weights),
            regression=self.regression(),
            km_transform=self.km_transform,
            threads=resolve_threads(threads),
        )
        if test not in KERNEL_PRESETS:
            overrides["kernel"] = self.kernel_spec()
        return preset_test(test, M=self.M, alpha=self.alpha, **overrides)

    def simulation_tests(self) -> List[str]:
        if self.tests:
            return list(self.tests)
        if self.preset is not None:
            return list(FIGURE_TESTS)
        return list(DEFAULT_SIM_TESTS.get(self.generator, ()))


def _lengthscale_arg(value: str):
    if value == "median":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'median', got {value!r}")


def _threads_arg(value: str):
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a count or 'auto', got {value!r}")


def _list_arg(kind):
    def parse(value: str):
        try:
            return [kind(part) for part in value.split(",") if part.strip() != ""]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {value!r}")
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="input CSV")
    common.add_argument("--kernel", choices=sorted(FAMILIES), default="se")
    common.add_argument("--lengthscale", type=_lengthscale_arg, default="median",
                        help="squared length-scale, or 'median' for the median heuristic")
    common.add_argument("--rq-alpha", type=float, default=1.0, help="shape of the rational-quadratic kernel")
    common.add_argument("--alpha", type=float, default=0.05, help="test level")
    common.add_argument("--bootstrap", dest="M", type=int, default=None, help="number of wild bootstrap replicates")
    common.add_argument("--weights", choices=["rademacher", "gaussian"], default="rademacher")
    common.add_argument("--seed", type=int, default=None, help="defaults to $KBT_SEED, then 0")
    common.add_argument("--degree", type=int, default=None, help="polynomial degree of the regressions")
    common.add_argument("--interactions", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--km-transform", action="store_true", help="compare on the pooled Kaplan-Meier scale")
    common.add_argument("--output", default="-", help="report path, '-' for stdout")
    common.add_argument("--threads", type=_threads_arg, default=None, help="worker count or 'auto'")
    common.add_argument("--emit-replicates", action="store_true")
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="kbt", description="Kernelised linear test statistics")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sub.add_parser("mmd", parents=[common], help="two-sample MMD test")
    sub.add_parser("logrank", parents=[common], help="kernel log-rank test for censored data")
    gcm = sub.add_parser("gcm", parents=[common], help="conditional independence tests")
    gcm.add_argument("--test", choices=["kgcm", "gcm", "wgcm"], default="kgcm")

    spectrum = sub.add_parser("spectrum", parents=[common], help="eigenvalues of the bootstrap covariance operator")
    spectrum.add_argument("--test", choices=["mmd", "logrank", "kgcm"], required=True)
    spectrum.add_argument("--draws", type=int, default=10000, help="weighted chi-square Monte-Carlo draws")

    simulate = sub.add_parser("simulate", parents=[common], help="rejection rates on simulated data")
    simulate.add_argument("--preset", choices=["figure1", "figure2"])
    simulate.add_argument("--generator", choices=["data1", "data2", "two_sample", "survival"])
    simulate.add_argument("--tests", type=_list_arg(str), default=[], help="comma-separated test names")
    simulate.add_argument("--grid", type=_list_arg(float), default=[], help="comma-separated parameter values")
    simulate.add_argument("--grid-param")
    simulate.add_argument("--n", type=int, default=100)
    simulate.add_argument("--reps", type=int, default=100)
    return parser


def _usage_message(error: ValidationError) -> str:
    messages = []
    for item in error.errors():
        field = item["loc"][0] if item["loc"] else None
        flag = FIELD_FLAGS.get(field)
        text = item["msg"].replace("Value error, ", "")
        messages.append(f"{flag}: {text}" if flag else text)
    return "; ".join(messages)


def parse_args(argv: Optional[Sequence[str]] = None, settings: Optional[Settings] = None) -> RunConfig:
    """Parse and validate; usage errors exit with status 2"""
    settings = settings or Settings()
    parser = build_parser()
    args = parser.parse_args(argv)

    seed = args.seed
    if seed is None:
        try:
            seed = int(settings.seed) if settings.seed else 0
        except ValueError:
            parser.error(f"KBT_SEED must be an integer, got {settings.seed!r}")
    threads = args.threads if args.threads is not None else settings.threads
    if threads != "auto":
        try:
            threads = int(threads)
        except ValueError:
            parser.error(f"KBT_THREADS must be a count or 'auto', got {threads!r}")

    values = dict(
        subcommand=args.subcommand,
        data=args.data,
        kernel=args.kernel,
        lengthscale=args.lengthscale,
        rq_alpha=args.rq_alpha,
        alpha=args.alpha,
        M=args.M if args.M is not None else DEFAULT_M[args.subcommand],
        weights=args.weights,
        seed=seed,
        degree=args.degree,
        interactions=args.interactions,
        km_transform=args.km_transform,
        output=args.output,
        threads=threads,
        emit_replicates=args.emit_replicates,
        log_level=args.log_level or settings.log_level,
    )
    if args.subcommand in ("gcm", "spectrum"):
        values["test"] = args.test
    else:
        values["test"] = args.subcommand
    if args.subcommand == "spectrum":
        values["draws"] = args.draws
    if args.subcommand == "simulate":
        values.update(generator=args.generator, preset=args.preset, tests=args.tests, grid=args.grid,
                      grid_param=args.grid_param, n=args.n, reps=args.reps)

    try:
        return RunConfig(**values)
    except ValidationError as e:
        parser.error(_usage_message(e))


def run_single(config: RunConfig):
    sample = read_csv(config.data, SCHEMAS[config.subcommand])
    test_config = config.test_config(config.test, config.threads)
    report = run_test(test_config, sample, config.seed)
    logger.info(f"{report.test}: statistic {report.statistic:.6g}, p-value {report.p_value:.4g}, reject={report.reject}")
    write_report(report, config.output, emit_replicates=config.emit_replicates)


def run_spectrum(config: RunConfig):
    sample = read_csv(config.data, SCHEMAS[config.test])
    spec = config.kernel_spec()

    if config.test == "mmd":
        spec = spec.resolve(sample.pooled)
        builder = mmd_wild_builder(sample)
    elif config.test == "logrank":
        if config.km_transform:
            sample = km_transform(sample)
        if sample.n_events == 0:
            raise InputError("no observed events; the log-rank covariance operator is zero")
        spec = resolve_time_kernel(spec, sample)
        builder = logrank_wild_builder(sample)
    else:
        residuals = fit_residuals(sample, config.regression())
        for message in residuals.warnings:
            logger.warning(message)
        spec = spec.resolve(sample.z)
        builder = kgcm_wild_builder(residuals, sample.z)

    scheme = WeightScheme(kind=config.weights)
    estimate, replicates = spectrum_from_builder(
        builder, scheme, sample.n, config.M, spec, config.seed, resolve_threads(config.threads),
    )
    draws = sample_weighted_chisq(estimate.eigenvalues, config.draws, stream_generator(config.seed, *CHISQ_STREAM))

    report = SpectrumReport(
        test=config.test,
        n=sample.n,
        seed=config.seed,
        draws=config.draws,
        kernel=spec.describe(),
        estimate=estimate,
        mean_replicate=float(np.mean(replicates)),
        chisq_quantiles=quantiles(draws),
        replicate_quantiles=quantiles(replicates),
        ks_to_replicates=ks_distance(draws, replicates),
    )
    write_report(report, config.output)


def _output_paths(output: str, names: List[str]) -> Dict[str, str]:
    if len(names) == 1:
        return {names[0]: output}
    stem, ext = os.path.splitext(output)
    return {name: f"{stem}_{name}{ext or '.csv'}" for name in names}


def run_simulation(config: RunConfig):
    if config.preset is not None:
        generator, grid, _ = figure_preset(config.preset, M=config.M)
        generator = generator.model_copy(update={"n": config.n})
        grid_param = None
    else:
        generator = GeneratorConfig(name=config.generator, n=config.n)
        grid = config.grid
        grid_param = config.grid_param

    names = config.simulation_tests()
    # the repetitions are spread over the threads; each test runs single-threaded inside one
    tests = {name: config.test_config(name) for name in names}
    results = power_curves(tests, generator, grid, config.reps, config.seed, grid_param, config.threads)
    for name, path in _output_paths(config.output, names).items():
        write_report(results[name], path)


def dispatch(config: RunConfig):
    if config.subcommand == "simulate":
        run_simulation(config)
    elif config.subcommand == "spectrum":
        run_spectrum(config)
    else:
        run_single(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = Settings()
    try:
        config = parse_args(argv, settings)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(
        level=getattr(logging, config.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logger.info(f"Running {config.subcommand} with seed {config.seed}")

    try:
        dispatch(config)
    except InputError as e:
        print(f"kbt: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"{config.subcommand} failed: {e}", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
