"""
Bounded linear test-statistics stored as point masses.

A statistic S(w) = sum_i c_i w(t_i) is kept as its (points, coefficients) pair.
Its kernelisation, the supremum of S(w)^2 over the unit ball of the RKHS, is
then the single quadratic form c^T K c over the Gram matrix of the points.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional
import logging

import numpy as np

from services.errors import InputError
from services.kernels import KernelSpec, as_points, cross_gram, gram

logger = logging.getLogger(__name__)

# relative size of negative round-off tolerated in c^T K c before it is reported
NEGATIVE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PointMassFunctional:
    points: np.ndarray
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        points = as_points(self.points)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if points.shape[0] != coeffs.shape[0]:
            raise InputError(f"{points.shape[0]} points but {coeffs.shape[0]} coefficients")
        if not np.all(np.isfinite(coeffs)):
            raise InputError("coefficients must be finite")
        # read-only arrays are shared as-is (wild bootstrap builders reuse one point set)
        if points.flags.writeable:
            points = points.copy()
            points.setflags(write=False)
        if coeffs.flags.writeable:
            coeffs = coeffs.copy()
            coeffs.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def empty(cls, dim: int = 1, label: str = "") -> "PointMassFunctional":
        return cls(np.zeros((0, dim)), np.zeros(0), {"label": label})

    @property
    def label(self) -> str:
        return self.meta.get("label", "")


def apply(f: PointMassFunctional, omega: Callable) -> float:
    """S(omega) = sum_i c_i omega(t_i); omega receives each point as a 1-d array"""
    if len(f) == 0:
        return 0.0
    values = np.empty(len(f))
    for i, point in enumerate(f.points):
        value = np.asarray(omega(point), dtype=float)
        if value.size != 1:
            raise InputError(f"weight function returned {value.size} values for one point")
        values[i] = value.reshape(-1)[0]
    return float(np.dot(f.coeffs, values))


def quadratic_form(entries: np.ndarray, coeffs: np.ndarray) -> float:
    return float(coeffs @ (entries @ coeffs))


def raw_norm_sq(f: PointMassFunctional, spec: KernelSpec) -> float:
    """c^T K c before clamping; may be slightly negative from round-off"""
    if len(f) == 0:
        return 0.0
    return quadratic_form(gram(spec, f.points).entries, f.coeffs)


def clamp_norm_sq(raw: float, coeffs: np.ndarray, kernel_max: float, meta: Optional[dict] = None) -> float:
    """Clamp round-off below zero; the pre-clamp value is kept in meta["pre_clamp_norm_sq"]"""
    if raw >= 0.0:
        return raw
    if meta is not None:
        meta["pre_clamp_norm_sq"] = raw
    scale = float(np.sum(np.abs(coeffs))) ** 2 * kernel_max
    if raw < -NEGATIVE_TOLERANCE * scale:
        label = (meta or {}).get("label", "")
        logger.warning(f"Quadratic form {label!r} is negative beyond round-off: {raw:.3e} (scale {scale:.3e})")
    return 0.0


def norm_sq(f: PointMassFunctional, spec: KernelSpec) -> float:
    """Squared RKHS norm of the Riesz representer, i.e. the kernelised statistic"""
    if len(f) == 0:
        return 0.0
    entries = gram(spec, f.points).entries
    raw = quadratic_form(entries, f.coeffs)
    return clamp_norm_sq(raw, f.coeffs, float(np.max(np.abs(entries))), f.meta)


def cross_inner(f: PointMassFunctional, g: PointMassFunctional, spec: KernelSpec) -> float:
    """Inner product of the two Riesz representers"""
    if len(f) == 0 or len(g) == 0:
        return 0.0
    if f.dim != g.dim:
        raise InputError(f"dimension mismatch: {f.dim} vs {g.dim}")
    return float(f.coeffs @ cross_gram(spec, f.points, g.points) @ g.coeffs)


def representer(f: PointMassFunctional, spec: KernelSpec) -> Callable:
    """The function x -> sum_i c_i K(t_i, x)"""
    def evaluate(x) -> float:
        x_arr = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
        if len(f) == 0:
            return 0.0
        return float(cross_gram(spec, f.points, x_arr)[:, 0] @ f.coeffs)
    return evaluate


def scale(f: PointMassFunctional, a: float) -> PointMassFunctional:
    return PointMassFunctional(f.points, a * f.coeffs, dict(f.meta))


def add(f: PointMassFunctional, g: PointMassFunctional) -> PointMassFunctional:
    if len(f) == 0:
        return g
    if len(g) == 0:
        return f
    if f.dim != g.dim:
        raise InputError(f"dimension mismatch: {f.dim} vs {g.dim}")
    label = f.label if f.label == g.label else f"{f.label}+{g.label}"
    return PointMassFunctional(
        np.vstack([f.points, g.points]),
        np.concatenate([f.coeffs, g.coeffs]),
        {"label": label},
    )


def consolidate(f: PointMassFunctional) -> PointMassFunctional:
    """Merge duplicate points by summing their coefficients. Never applied implicitly."""
    if len(f) == 0:
        return f
    unique, inverse = np.unique(f.points, axis=0, return_inverse=True)
    merged = np.zeros(unique.shape[0])
    np.add.at(merged, inverse.reshape(-1), f.coeffs)
    return PointMassFunctional(unique, merged, dict(f.meta))
