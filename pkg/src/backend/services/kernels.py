from dataclasses import dataclass
from typing import Literal, Optional
import hashlib
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import eigvalsh
from scipy.spatial.distance import cdist, pdist, squareform

from services.errors import InputError

logger = logging.getLogger(__name__)

KernelFamily = Literal["squared-exponential", "constant", "rational-quadratic"]
LengthscaleRule = Literal["fixed", "median-heuristic"]


class KernelSpec(BaseModel):
    """
    Kernel configuration. The squared-exponential family uses exp(-|u-v|^2 / l^2),
    without the usual factor 2, so that l^2 = 0.1 and l^2 = 1 mean what the
    conditional-independence experiments mean by them.
    """
    model_config = ConfigDict(frozen=True)

    family: KernelFamily = "squared-exponential"
    lengthscale_sq: Optional[float] = Field(default=None, gt=0)
    lengthscale_rule: LengthscaleRule = "fixed"
    rq_alpha: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_lengthscale(self):
        if self.family != "constant" and self.lengthscale_rule == "fixed" and self.lengthscale_sq is None:
            raise ValueError("lengthscale_sq is required when lengthscale_rule is 'fixed'")
        return self

    @property
    def is_resolved(self) -> bool:
        return self.family == "constant" or self.lengthscale_sq is not None

    def resolve(self, points) -> "KernelSpec":
        """Apply the median heuristic once; specs that are already resolved come back unchanged"""
        if self.is_resolved:
            return self
        lengthscale_sq = median_heuristic(points)
        logger.info(f"Median heuristic resolved lengthscale_sq={lengthscale_sq:.6g}")
        return self.model_copy(update={"lengthscale_sq": lengthscale_sq})

    def describe(self) -> dict:
        return {
            "family": self.family,
            "lengthscale_sq": self.lengthscale_sq,
            "rule": self.lengthscale_rule,
        }


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    points_hash: str

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def min_eigenvalue(self) -> float:
        return float(eigvalsh(self.entries)[0]) if self.n else 0.0

    def is_psd(self, rel_tol: float = 1e-8) -> bool:
        return self.min_eigenvalue() >= -rel_tol * float(np.trace(self.entries))


def as_points(points) -> np.ndarray:
    """Coerce a point list to a float (m, d) array. Scalars are 1-dimensional points."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InputError(f"points must be a list of vectors, got array of shape {arr.shape}")
    return arr


def points_fingerprint(points: np.ndarray) -> str:
    arr = np.ascontiguousarray(points, dtype=float)
    digest = hashlib.md5(arr.tobytes())
    digest.update(str(arr.shape).encode())
    return digest.hexdigest()


def _require_resolved(spec: KernelSpec):
    if not spec.is_resolved:
        raise InputError("kernel length-scale is unresolved; call KernelSpec.resolve(points) first")


def _profile(spec: KernelSpec, sq_dist: np.ndarray) -> np.ndarray:
    """Kernel value as a function of the squared Euclidean distance"""
    if spec.family == "constant":
        return np.ones_like(sq_dist, dtype=float)
    _require_resolved(spec)
    if spec.family == "squared-exponential":
        return np.exp(-sq_dist / spec.lengthscale_sq)
    # rational-quadratic, tends to the squared-exponential as rq_alpha grows
    return (1.0 + sq_dist / (spec.rq_alpha * spec.lengthscale_sq)) ** (-spec.rq_alpha)


def eval_kernel(spec: KernelSpec, u, v) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise InputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    sq_dist = float(np.sum((u - v) ** 2))
    return float(_profile(spec, np.asarray(sq_dist)))


def median_heuristic(points) -> float:
    """Median of |x_i - x_j|^2 over pairs i < j (mean of the middle two for an even count)"""
    arr = as_points(points)
    if arr.shape[0] < 2:
        raise InputError("median heuristic needs at least 2 points")
    sq_dists = pdist(arr, metric="sqeuclidean")
    median = float(np.median(sq_dists))
    if median <= 0.0:
        raise InputError("median pairwise squared distance is zero; points are (mostly) identical")
    return median


def gram(spec: KernelSpec, points) -> GramMatrix:
    arr = as_points(points)
    m = arr.shape[0]
    if m == 0:
        raise InputError("gram needs at least one point")
    # pdist visits each unordered pair once, so the matrix is exactly symmetric
    sq_dists = squareform(pdist(arr, metric="sqeuclidean")) if m > 1 else np.zeros((1, 1))
    entries = _profile(spec, sq_dists)
    return GramMatrix(entries=entries, points_hash=points_fingerprint(arr))


def cross_gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Kernel values K(a_i, b_j) between two point sets"""
    a_arr = as_points(a)
    b_arr = as_points(b)
    if a_arr.shape[0] == 0 or b_arr.shape[0] == 0:
        return np.zeros((a_arr.shape[0], b_arr.shape[0]))
    if a_arr.shape[1] != b_arr.shape[1]:
        raise InputError(f"dimension mismatch: {a_arr.shape[1]} vs {b_arr.shape[1]}")
    return _profile(spec, cdist(a_arr, b_arr, metric="sqeuclidean"))


def paired_kernel(spec: KernelSpec, a, b) -> np.ndarray:
    """K(a_i, b_i) row by row, for Monte-Carlo expectations over independent pairs"""
    a_arr = as_points(a)
    b_arr = as_points(b)
    if a_arr.shape != b_arr.shape:
        raise InputError(f"paired point sets differ in shape: {a_arr.shape} vs {b_arr.shape}")
    return _profile(spec, np.sum((a_arr - b_arr) ** 2, axis=1))
