"""
Empirical spectrum of the covariance operator behind a kernelised statistic.

B wild bootstrap representers xi_b give the operator (1/B) sum_b xi_b (x) xi_b,
whose nonzero eigenvalues are those of G / B with G[a][b] = <xi_a, xi_b>. The
weighted chi-square law sum_i lambda_i Z_i^2 built from them is the limit the
bootstrap replicates should follow.
"""
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import eigvalsh
from scipy.stats import ks_2samp

from services.bootstrap import WeightScheme, wild_functionals
from services.errors import InputError
from services.functional import PointMassFunctional, cross_inner
from services.kernels import KernelSpec, gram

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-10
QUANTILE_LEVELS = (0.5, 0.9, 0.95, 0.99)


class SpectrumEstimate(BaseModel):
    eigenvalues: List[float]
    trace: float = Field(ge=0.0)
    B: int = Field(ge=1)
    clamped: int = 0
    min_raw: float = 0.0


class SpectrumReport(BaseModel):
    test: str
    n: int
    seed: int
    draws: int
    kernel: Optional[Dict[str, Any]] = None
    estimate: SpectrumEstimate
    mean_replicate: float
    chisq_quantiles: Dict[str, float]
    replicate_quantiles: Dict[str, float]
    ks_to_replicates: float


def _shares_points(fs: Sequence[PointMassFunctional]) -> bool:
    first = fs[0].points
    return all(f.points is first or (f.points.shape == first.shape and np.array_equal(f.points, first)) for f in fs)


def representer_gram(fs: Sequence[PointMassFunctional], spec: KernelSpec) -> np.ndarray:
    B = len(fs)
    if B < 1:
        raise InputError("representer Gram needs at least one functional")

    if len(fs[0]) > 0 and _shares_points(fs):
        # one kernel matrix for all representers: G = C^T K C
        coeffs = np.column_stack([f.coeffs for f in fs])
        entries = gram(spec, fs[0].points).entries
        G = coeffs.T @ entries @ coeffs
        return (G + G.T) / 2.0

    G = np.zeros((B, B))
    for a in range(B):
        for b in range(a, B):
            G[a, b] = G[b, a] = cross_inner(fs[a], fs[b], spec)
    return G


def estimate_eigenvalues(G, B: Optional[int] = None) -> SpectrumEstimate:
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] == 0:
        raise InputError(f"expected a non-empty square matrix, got shape {G.shape}")
    B = B or G.shape[0]
    asymmetry = float(np.max(np.abs(G - G.T)))
    if asymmetry > SYMMETRY_TOLERANCE * max(1.0, float(np.max(np.abs(G)))):
        raise InputError(f"representer Gram is not symmetric (max asymmetry {asymmetry:.3e})")

    operator = (G + G.T) / (2.0 * B)
    raw = eigvalsh(operator)[::-1]
    trace = float(np.trace(operator))
    min_raw = float(raw[-1])
    if min_raw < -SYMMETRY_TOLERANCE * max(trace, 0.0):
        logger.warning(f"Covariance operator has a negative eigenvalue beyond round-off: {min_raw:.3e}")
    clamped = int(np.sum(raw < 0.0))
    eigenvalues = np.clip(raw, 0.0, None)

    logger.info(f"Estimated {eigenvalues.shape[0]} eigenvalues, trace {trace:.6g}, {clamped} clamped")
    return SpectrumEstimate(
        eigenvalues=eigenvalues.tolist(),
        trace=max(trace, 0.0),
        B=B,
        clamped=clamped,
        min_raw=min_raw,
    )


def sample_weighted_chisq(lambdas: Sequence[float], draws: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of sum_i lambda_i Z_i^2 with i.i.d. standard normal Z_i"""
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if np.any(lambdas < 0):
        raise InputError("weights of a weighted chi-square must be nonnegative")
    if lambdas.size == 0:
        return np.zeros(draws)
    normals = rng.standard_normal((draws, lambdas.size))
    return (normals ** 2) @ lambdas


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Sup-distance between the two empirical distribution functions"""
    if len(a) == 0 or len(b) == 0:
        raise InputError("KS distance needs two non-empty samples")
    return float(ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float)).statistic)


def quantiles(values: Sequence[float], levels: Sequence[float] = QUANTILE_LEVELS) -> Dict[str, float]:
    values = np.asarray(values, dtype=float)
    return {f"{level:g}": float(np.quantile(values, level)) for level in levels}


def spectrum_from_builder(
    builder: Callable[[np.ndarray], PointMassFunctional],
    scheme: WeightScheme,
    n_weights: int,
    B: int,
    spec: KernelSpec,
    seed: int,
    threads: int = 1,
) -> Tuple[SpectrumEstimate, List[float]]:
    """Eigenvalues from B bootstrap representers, plus the B replicate values themselves"""
    functionals = wild_functionals(builder, scheme, n_weights, B, seed, threads)
    G = representer_gram(functionals, spec)
    replicates = [max(float(v), 0.0) for v in np.diag(G)]
    return estimate_eigenvalues(G, B), replicates
