"""
Conditional independence of X and Y given Z through regression residuals.

The kernelised generalised covariance measure (KGCM) takes the supremum of the
weighted GCM statistic S(w) = n^{-1/2} sum_i w(Z_i) eps_X_i eps_Y_i over the unit
ball of the RKHS on Z. The plain GCM (w = 1) and the fixed-weight wGCM are kept
as baselines.
"""
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import lstsq

from services.bootstrap import (
    TestReport,
    WeightScheme,
    WildBuilder,
    calibrate,
    wild_functionals,
    wild_replicates,
)
from services.errors import InputError
from services.functional import PointMassFunctional, apply, norm_sq
from services.kernels import KernelSpec, as_points

logger = logging.getLogger(__name__)

RegressionFn = Callable[[np.ndarray], np.ndarray]
WeightFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class CondSample:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        z = as_points(self.z)
        if not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise InputError(f"x, y, z lengths differ: {x.shape[0]}, {y.shape[0]}, {z.shape[0]}")
        if x.shape[0] < 1:
            raise InputError("conditional sample is empty")
        if z.shape[1] < 1:
            raise InputError("z needs at least one coordinate")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]


class RegressionConfig(BaseModel):
    """Polynomial least squares for E(X|Z) and E(Y|Z). Unset fields default by dimension."""
    model_config = ConfigDict(frozen=True)

    degree: Optional[int] = Field(default=None, ge=0)
    interactions: Optional[bool] = None
    intercept: bool = True

    def resolved(self, d: int) -> Tuple[int, bool]:
        degree = self.degree if self.degree is not None else (2 if d == 1 else 1)
        interactions = self.interactions if self.interactions is not None else d == 1
        return degree, interactions


@dataclass(frozen=True)
class ResidualSet:
    eps_x: np.ndarray
    eps_y: np.ndarray
    a_f_hat: Optional[float] = None
    a_g_hat: Optional[float] = None
    rank: int = 0
    n_columns: int = 0
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.eps_x.shape[0]


# known conditional means of the simulated data sets, for the regression-error diagnostics
DATA1_TRUTH: Tuple[RegressionFn, RegressionFn] = (lambda z: z[:, 0], lambda z: z[:, 0] ** 2)


def data2_truth(d: int) -> Tuple[RegressionFn, RegressionFn]:
    return (lambda z: z[:, 0], lambda z: z[:, 1])


def poly_design(z, cfg: RegressionConfig) -> np.ndarray:
    """Intercept, then monomials by total degree; cross terms only with interactions on"""
    z = as_points(z)
    n, d = z.shape
    degree, interactions = cfg.resolved(d)
    columns = [np.ones(n)] if cfg.intercept else []
    for k in range(1, degree + 1):
        if interactions:
            for combo in combinations_with_replacement(range(d), k):
                columns.append(np.prod(z[:, list(combo)], axis=1))
        else:
            for j in range(d):
                columns.append(z[:, j] ** k)
    if not columns:
        return np.zeros((n, 0))
    return np.column_stack(columns)


def fit_residuals(
    s: CondSample,
    cfg: Optional[RegressionConfig] = None,
    truth: Optional[Tuple[RegressionFn, RegressionFn]] = None,
) -> ResidualSet:
    cfg = cfg or RegressionConfig()
    if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.y)) and np.all(np.isfinite(s.z))):
        raise InputError("regression inputs must be finite")

    design = poly_design(s.z, cfg)
    n, n_columns = design.shape
    targets = np.column_stack([s.x, s.y])
    warnings: List[str] = []

    if n_columns == 0:
        fitted, rank = np.zeros_like(targets), 0
    else:
        # SVD-based solve: minimal-norm coefficients when the design is rank deficient
        coef, _, rank, _ = lstsq(design, targets, lapack_driver="gelsd")
        fitted = design @ coef

    if n_columns >= n:
        warnings.append(f"regression is saturated: {n_columns} design columns for n={n}")
    if rank < n_columns:
        warnings.append(f"design matrix is rank deficient (rank {rank} < {n_columns} columns)")
    for message in warnings:
        logger.warning(message)

    residuals = targets - fitted
    if rank == n:
        # interpolating fit
        residuals = np.zeros_like(targets)

    a_f_hat = a_g_hat = None
    if truth is not None:
        f_true, g_true = truth
        a_f_hat = float(np.mean((fitted[:, 0] - f_true(s.z)) ** 2))
        a_g_hat = float(np.mean((fitted[:, 1] - g_true(s.z)) ** 2))

    return ResidualSet(
        eps_x=residuals[:, 0],
        eps_y=residuals[:, 1],
        a_f_hat=a_f_hat,
        a_g_hat=a_g_hat,
        rank=int(rank),
        n_columns=n_columns,
        warnings=tuple(warnings),
    )


def _check_lengths(r: ResidualSet, z: np.ndarray):
    if z.shape[0] != r.n:
        raise InputError(f"{r.n} residual pairs but {z.shape[0]} conditioning points")


def kgcm_coefficients(r: ResidualSet, z) -> PointMassFunctional:
    z = as_points(z)
    _check_lengths(r, z)
    coeffs = r.eps_x * r.eps_y / np.sqrt(r.n)
    return PointMassFunctional(z, coeffs, {"label": "kgcm"})


class KGCMWildBuilder(WildBuilder):
    """Raw multipliers on each residual product; no centring"""
    label = "kgcm-wild"

    def __init__(self, r: ResidualSet, z):
        z = as_points(z)
        _check_lengths(r, z)
        super().__init__(z, r.n)
        self.base = r.eps_x * r.eps_y / np.sqrt(r.n)

    def coefficients(self, weights: np.ndarray) -> np.ndarray:
        return self.base * weights


def kgcm_wild_builder(r: ResidualSet, z) -> KGCMWildBuilder:
    return KGCMWildBuilder(r, z)


def constant_weight(point: np.ndarray) -> float:
    return 1.0


def sign_weight(i: int) -> WeightFn:
    def weight(point: np.ndarray) -> float:
        return float(np.sign(point[i]))
    weight.__name__ = f"sign_z{i + 1}"
    return weight


def default_weight_functions(d: int) -> List[WeightFn]:
    """sign(z) when d = 1; {1, sign(z_1), ..., sign(z_d)} otherwise"""
    if d == 1:
        return [sign_weight(0)]
    return [constant_weight] + [sign_weight(i) for i in range(d)]


@dataclass(frozen=True)
class WGCMStatistic:
    values: Tuple[float, ...]
    names: Tuple[str, ...]

    @property
    def aggregate(self) -> float:
        """max_j |S(w_j)|"""
        return max(abs(v) for v in self.values) if self.values else 0.0


def wgcm_statistic(r: ResidualSet, z, weight_fns: Sequence[WeightFn]) -> WGCMStatistic:
    f = kgcm_coefficients(r, z)
    values = tuple(apply(f, omega) for omega in weight_fns)
    names = tuple(getattr(omega, "__name__", f"w{j}") for j, omega in enumerate(weight_fns))
    return WGCMStatistic(values=values, names=names)


def _weight_matrix(points: np.ndarray, weight_fns: Sequence[WeightFn]) -> np.ndarray:
    return np.array([[float(omega(p)) for omega in weight_fns] for p in points]).reshape(len(points), len(weight_fns))


def kgcm_test(
    s: CondSample,
    cfg: Optional[RegressionConfig],
    spec: KernelSpec,
    scheme: Optional[WeightScheme] = None,
    M: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> TestReport:
    cfg = cfg or RegressionConfig()
    scheme = scheme or WeightScheme()
    residuals = fit_residuals(s, cfg)
    spec = spec.resolve(s.z)

    statistic = norm_sq(kgcm_coefficients(residuals, s.z), spec)
    logger.info(f"KGCM statistic {statistic:.6g} (n={s.n}, d={s.d})")
    replicates = wild_replicates(kgcm_wild_builder(residuals, s.z), scheme, s.n, M, spec, seed, threads)

    degree, interactions = cfg.resolved(s.d)
    return calibrate(
        statistic, replicates, alpha, test="kgcm", n=s.n, seed=seed, kernel=spec,
        warnings=list(residuals.warnings),
        config_echo={"d": s.d, "degree": degree, "interactions": interactions, "weights": scheme.kind},
    )


def wgcm_test(
    s: CondSample,
    cfg: Optional[RegressionConfig],
    weight_fns: Optional[Sequence[WeightFn]] = None,
    scheme: Optional[WeightScheme] = None,
    M: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
    test_name: str = "wgcm",
) -> TestReport:
    """Fixed weights aggregated by max |S(w_j)|; the bootstrap aggregates its replicates the same way"""
    cfg = cfg or RegressionConfig()
    scheme = scheme or WeightScheme()
    weight_fns = list(weight_fns) if weight_fns is not None else default_weight_functions(s.d)
    residuals = fit_residuals(s, cfg)

    observed = wgcm_statistic(residuals, s.z, weight_fns)
    logger.info(f"{test_name} statistic {observed.aggregate:.6g} over {len(weight_fns)} weight(s)")

    omega = _weight_matrix(s.z, weight_fns)
    functionals = wild_functionals(kgcm_wild_builder(residuals, s.z), scheme, s.n, M, seed, threads)
    replicates = [float(np.max(np.abs(f.coeffs @ omega))) for f in functionals]

    degree, interactions = cfg.resolved(s.d)
    return calibrate(
        observed.aggregate, replicates, alpha, test=test_name, n=s.n, seed=seed,
        warnings=list(residuals.warnings),
        config_echo={
            "d": s.d, "degree": degree, "interactions": interactions, "weights": scheme.kind,
            "weight_functions": list(observed.names),
            "per_weight_statistics": list(observed.values),
        },
    )


def gcm_test(
    s: CondSample,
    cfg: Optional[RegressionConfig],
    scheme: Optional[WeightScheme] = None,
    M: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> TestReport:
    """Plain GCM: the weighted test with the single weight w = 1"""
    return wgcm_test(s, cfg, [constant_weight], scheme, M, alpha, seed, threads, test_name="gcm")
