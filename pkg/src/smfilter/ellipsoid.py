"""Ellipsoid values, point sampling, and the outer-approximation algebra
for sums of ellipsoidal sets.

An ellipsoid is stored as a center c and an SPD shape matrix P and denotes
the set {x : (x - c)^T P^{-1} (x - c) <= 1}.  Equivalently, with any factor
E such that E E^T = P, it is {c + E u : ||u|| <= 1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpdError

# Relative asymmetry tolerated before a shape matrix is rejected outright.
SYM_RTOL = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2."""
    return 0.5 * (a + a.T)


def spd_cholesky(p: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor of an SPD matrix with a one-shot jitter retry.

    If the first factorization fails, 1e-12 * tr(P)/n * I is added once and
    the factorization retried; a second failure raises SpdError.  Returns
    (L, P_used) with L lower triangular, L L^T = P_used.
    """
    p = symmetrize(np.asarray(p, dtype=float))
    try:
        return np.linalg.cholesky(p), p
    except np.linalg.LinAlgError:
        pass
    n = p.shape[0]
    jitter = 1e-12 * np.trace(p) / n
    p_j = p + jitter * np.eye(n)
    try:
        return np.linalg.cholesky(p_j), p_j
    except np.linalg.LinAlgError:
        raise SpdError(
            f"{what} is not positive definite (jitter retry failed); "
            f"eigenvalue range [{np.linalg.eigvalsh(p).min():.3e}, "
            f"{np.linalg.eigvalsh(p).max():.3e}]"
        ) from None


@dataclass(frozen=True)
class Ellipsoid:
    """Center vector plus SPD shape matrix; immutable."""

    center: np.ndarray
    shape: np.ndarray
    # Cached Cholesky factor of shape (L L^T = shape), computed on creation.
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        shape = np.asarray(self.shape, dtype=float).copy()
        if center.ndim != 1:
            raise ValueError("center must be a vector")
        if shape.shape != (center.size, center.size):
            raise ValueError(
                f"shape matrix is {shape.shape}, expected "
                f"({center.size}, {center.size})"
            )
        scale = max(np.abs(shape).max(), 1.0)
        if np.abs(shape - shape.T).max() > SYM_RTOL * scale:
            raise ValueError("shape matrix is not symmetric")
        chol, shape = spd_cholesky(shape, what="shape matrix")
        for arr in (center, shape, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.center.size

    def factor(self) -> np.ndarray:
        """A matrix E with E E^T = shape (here the Cholesky factor)."""
        return self._chol

    def quadratic_form(self, x: np.ndarray) -> np.ndarray:
        """(x - c)^T P^{-1} (x - c) for a point (n,) or batch (m, n)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} != {self.dim}")
        dev = np.atleast_2d(x) - self.center
        # Solve L z = dev^T; form value is ||z||^2 per column.
        z = np.linalg.solve(self._chol, dev.T)
        vals = np.sum(z * z, axis=0)
        return vals[0] if x.ndim == 1 else vals


@dataclass(frozen=True)
class PointCloud:
    """A set of m points of common dimension, tagged with how it was made."""

    points: np.ndarray
    provenance: str = "image"  # boundary | interior | image

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (m, n) array")
        if self.provenance not in ("boundary", "interior", "image"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def contains(e: Ellipsoid, x: np.ndarray, slack: float = 0.0):
    """True iff (x - c)^T P^{-1} (x - c) <= 1 + slack (boundary counts).

    Accepts a single point or an (m, n) batch; returns bool or bool array.
    """
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    return e.quadratic_form(x) <= 1.0 + slack


def _sphere(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """m points uniform on the unit sphere in R^n."""
    u = rng.standard_normal((m, n))
    norms = np.linalg.norm(u, axis=1)
    while np.any(norms == 0.0):  # pragma: no cover - probability zero
        bad = norms == 0.0
        u[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(u, axis=1)
    return u / norms[:, None]


def sample_boundary(e: Ellipsoid, m: int, rng: np.random.Generator) -> PointCloud:
    """m points on the boundary of e: c + E u with u uniform on the sphere."""
    if m < 1:
        raise ValueError("m must be >= 1")
    u = _sphere(m, e.dim, rng)
    pts = e.center + u @ e.factor().T
    return PointCloud(pts, "boundary")


def sample_interior(e: Ellipsoid, m: int, rng: np.random.Generator) -> PointCloud:
    """m points uniform over the volume of e (sphere direction, radius r^(1/n))."""
    if m < 1:
        raise ValueError("m must be >= 1")
    n = e.dim
    u = _sphere(m, n, rng)
    r = rng.random(m) ** (1.0 / n)
    pts = e.center + (u * r[:, None]) @ e.factor().T
    return PointCloud(pts, "interior")


def minkowski_outer(ef: Ellipsoid, q: np.ndarray, p: float) -> Ellipsoid:
    """Ellipsoid covering the sum of ef and the centered ellipsoid with shape q.

    The returned set has the same center as ef and shape
    (1 + 1/p) * ef.shape + (1 + p) * q, valid for any p > 0.
    """
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    q = symmetrize(np.asarray(q, dtype=float))
    if q.shape != ef.shape.shape:
        raise ValueError(f"q is {q.shape}, expected {ef.shape.shape}")
    spd_cholesky(q, what="noise shape matrix")
    shape = (1.0 + 1.0 / p) * ef.shape + (1.0 + p) * q
    return Ellipsoid(ef.center, symmetrize(shape))


def optimal_p(pf: np.ndarray, q: np.ndarray) -> float:
    """The p minimizing the trace of the covering-sum shape:
    sqrt(tr(Pf)) / sqrt(tr(Q)).  At this p the trace equals
    (sqrt(tr Pf) + sqrt(tr Q))^2."""
    tp = float(np.trace(np.asarray(pf, dtype=float)))
    tq = float(np.trace(np.asarray(q, dtype=float)))
    if tp <= 0 or tq <= 0:
        raise ValueError("both matrices must have positive trace")
    return np.sqrt(tp / tq)
