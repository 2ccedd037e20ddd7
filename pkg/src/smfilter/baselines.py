"""Comparison filters: an unscented Kalman filter and the extended
set-membership filter that linearizes the model and inflates the noise
bounds by a sampled bound on the linearization remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dsmf import FusionParams, SystemModel, fuse, optimize_rho
from .ellipsoid import (
    Ellipsoid,
    minkowski_outer,
    optimal_p,
    sample_boundary,
    sample_interior,
    spd_cholesky,
    symmetrize,
)

# Sampled remainder bounds: number of samples, boundary fraction, and the
# multiplicative safety margin on the per-axis maxima.
N_REMAINDER = 500
BOUNDARY_FRACTION = 0.8
REMAINDER_SAFETY = 1.1
# Points at which the curvature (Hessian) of the model maps is sampled for
# the worst-case quadratic completion of the remainder bound.
N_HESSIAN = 40


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of the UKF state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        _, cov = spd_cholesky(np.asarray(self.cov, dtype=float), what="covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class UkfOptions:
    """noise_cov_scale: factor turning a noise-bound shape matrix into the
    covariance handed to the UKF.  None means the covariance of a uniform
    draw over the bound, shape/(dim+2); 1.0 treats the shape itself as the
    covariance."""

    noise_cov_scale: float | None = None

    def scale_for(self, dim: int) -> float:
        if self.noise_cov_scale is None:
            return 1.0 / (dim + 2.0)
        return float(self.noise_cov_scale)


@dataclass(frozen=True)
class RemainderBound:
    """Axis-aligned ellipsoidal bound on the linearization remainder, to be
    added to a noise bound.  The matrix is SPD or exactly zero."""

    matrix: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)

    @classmethod
    def from_halfwidths(cls, half: np.ndarray,
                        safety: float = REMAINDER_SAFETY) -> "RemainderBound":
        """Axis-aligned ellipsoid covering the box of the given per-axis
        half-widths, scaled by the safety factor (shape is
        diag(dim * (safety*halfwidth)^2) so box corners are covered).  Axes
        with no observed remainder get a negligible floor so the matrix
        stays SPD; all-zero half-widths give the zero bound."""
        half = safety * np.atleast_1d(np.asarray(half, dtype=float))
        top = half.max()
        if top == 0.0:
            return cls(np.zeros((half.size, half.size)))
        half = np.maximum(half, 1e-12 * top)
        dim = half.size
        return cls(np.diag(dim * half**2))

    @classmethod
    def from_samples(cls, remainders: np.ndarray,
                     safety: float = REMAINDER_SAFETY) -> "RemainderBound":
        """Bound a sampled remainder cloud by its per-axis maxima."""
        remainders = np.atleast_2d(np.asarray(remainders, dtype=float))
        return cls.from_halfwidths(np.abs(remainders).max(axis=0), safety)


def add_remainder(noise_shape: np.ndarray, bound: RemainderBound) -> np.ndarray:
    """Inflate a noise bound by a remainder bound via the trace-optimal
    covering sum; the zero bound is a no-op."""
    if bound.is_zero:
        return noise_shape
    base = Ellipsoid(np.zeros(noise_shape.shape[0]), noise_shape)
    p = optimal_p(noise_shape, bound.matrix)
    return minkowski_outer(base, bound.matrix, p).shape


def numerical_jacobian(fn, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian with per-component step
    rel_step * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    steps = rel_step * np.maximum(1.0, np.abs(x))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * steps[i]))
    return np.column_stack(cols)


def _f_jacobian(model: SystemModel, x: np.ndarray, k: int) -> np.ndarray:
    if model.f_jac is not None:
        return np.asarray(model.f_jac(x, k), dtype=float)
    return numerical_jacobian(lambda z: model.f(z, k), x)


def _h_jacobian(model: SystemModel, x: np.ndarray) -> np.ndarray:
    if model.h_jac is not None:
        return np.atleast_2d(np.asarray(model.h_jac(x), dtype=float))
    return np.atleast_2d(numerical_jacobian(model.h, x))


def _remainder_samples(e: Ellipsoid, m: int, rng) -> np.ndarray:
    """Boundary-biased sample of an ellipsoid (boundary points maximize
    quadratic remainders)."""
    n_bound = max(1, int(round(BOUNDARY_FRACTION * m)))
    pts = [sample_boundary(e, n_bound, rng).points]
    if m - n_bound > 0:
        pts.append(sample_interior(e, m - n_bound, rng).points)
    return np.vstack(pts)


def hessian_abs_max(fn, pts: np.ndarray, out_dim: int,
                    rel_step: float = 1e-4) -> np.ndarray:
    """Entrywise maximum |Hessian| of each output of fn over sample points.

    fn maps (..., n) -> (..., out_dim) batches.  Second differences below
    the finite-difference noise floor are zeroed, so exactly linear maps
    report zero curvature.  Returns an (out_dim, n, n) array.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    m, n = pts.shape
    steps = rel_step * np.maximum(1.0, np.abs(pts))  # (m, n)
    f0 = np.atleast_2d(fn(pts))
    hess = np.zeros((m, out_dim, n, n))
    for a in range(n):
        ea = np.zeros(n)
        ea[a] = 1.0
        ha = steps[:, a:a + 1]
        fpa = np.atleast_2d(fn(pts + ha * ea))
        fma = np.atleast_2d(fn(pts - ha * ea))
        hess[:, :, a, a] = (fpa - 2.0 * f0 + fma) / ha**2
        for b in range(a + 1, n):
            eb = np.zeros(n)
            eb[b] = 1.0
            hb = steps[:, b:b + 1]
            fpp = np.atleast_2d(fn(pts + ha * ea + hb * eb))
            fpm = np.atleast_2d(fn(pts + ha * ea - hb * eb))
            fmp = np.atleast_2d(fn(pts - ha * ea + hb * eb))
            fmm = np.atleast_2d(fn(pts - ha * ea - hb * eb))
            mixed = (fpp - fpm - fmp + fmm) / (4.0 * ha * hb)
            hess[:, :, a, b] = mixed
            hess[:, :, b, a] = mixed
    out = np.abs(hess).max(axis=0)  # (out_dim, n, n)
    # Noise floor: second differences of a flat function leave cancellation
    # residue of order eps * |f| / h^2.
    scale = np.abs(f0).max(axis=0) + 1e-30
    h_min = steps.min()
    floor = 64.0 * np.finfo(float).eps * scale / h_min**2
    out[out <= floor[:, None, None]] = 0.0
    return out


def _remainder_halfwidths(e: Ellipsoid, fn, jac: np.ndarray, k_args,
                          rng, n_samples: int) -> np.ndarray:
    """Per-axis remainder bound over the ellipsoid: the larger of the
    sampled remainder maxima and the worst-case quadratic completion
    0.5 * sum_ab max|H_j[a,b]| r_a r_b over the enclosing box (the
    classical curvature bound, with the Hessians sampled numerically)."""
    c = e.center
    x = _remainder_samples(e, n_samples, rng)
    rem = np.atleast_2d(fn(x)) - np.atleast_2d(fn(c)) - (x - c) @ jac.T
    direct = np.abs(rem).max(axis=0)
    h_pts = _remainder_samples(e, N_HESSIAN, rng)
    h_max = hessian_abs_max(fn, h_pts, out_dim=jac.shape[0])
    radii = np.sqrt(np.diag(e.shape))
    quad = 0.5 * np.einsum("jab,a,b->j", h_max, radii, radii)
    return np.maximum(direct, quad)


def remainder_bound_f(e: Ellipsoid, model: SystemModel, k: int,
                      rng, n_samples: int = N_REMAINDER) -> RemainderBound:
    """Sampled bound on f(x) - f(c) - J (x - c) over the ellipsoid."""
    jac = _f_jacobian(model, e.center, k)
    half = _remainder_halfwidths(
        e, lambda x: model.f(x, k), jac, k, rng, n_samples
    )
    return RemainderBound.from_halfwidths(half)


def remainder_bound_h(e: Ellipsoid, model: SystemModel,
                      rng, n_samples: int = N_REMAINDER) -> RemainderBound:
    """Sampled bound on h(x) - h(c) - J (x - c) over the ellipsoid."""
    jac = _h_jacobian(model, e.center)
    half = _remainder_halfwidths(e, model.h, jac, None, rng, n_samples)
    return RemainderBound.from_halfwidths(half)


def esmf_predict(e_k: Ellipsoid, model: SystemModel, k: int,
                 rng: np.random.Generator) -> Ellipsoid:
    """Linearized prediction: propagate the shape through the Jacobian and
    cover the sum with the remainder-inflated process noise."""
    c = e_k.center
    jac = _f_jacobian(model, c, k)
    lin_shape = symmetrize(jac @ e_k.shape @ jac.T)
    q_eff = add_remainder(model.Q, remainder_bound_f(e_k, model, k, rng))
    base = Ellipsoid(model.f(c, k), lin_shape)
    return minkowski_outer(base, q_eff, optimal_p(lin_shape, q_eff))


def esmf_update(e_pred: Ellipsoid, model: SystemModel, y: np.ndarray, k: int,
                rng: np.random.Generator,
                size_criterion: str = "trace") -> tuple[Ellipsoid, FusionParams]:
    """Linearized measurement update via the shared fusion formulas.

    With y = h(x) + v linearized at the predicted center c, the
    measurement-consistent set is {x : (C x - z)^T R_eff^{-1} (C x - z) <= 1}
    with C the Jacobian, z = y - h(c) + C c, and R_eff the noise bound
    inflated by the sampled remainder bound.
    """
    y = np.asarray(y, dtype=float)
    c = e_pred.center
    jac = _h_jacobian(model, c)
    r_eff = add_remainder(model.R, remainder_bound_h(e_pred, model, rng))
    z = y - np.atleast_1d(model.h(c)) + jac @ c
    meas = Ellipsoid(z, r_eff)
    params = optimize_rho(e_pred, meas, jac, size_criterion)
    center, shape, delta = fuse(e_pred, meas, jac, params.rho)
    return Ellipsoid(center, shape), replace(params, delta=delta)


def esmf_step(e_k: Ellipsoid, model: SystemModel, y: np.ndarray, k: int,
              rng: np.random.Generator,
              size_criterion: str = "trace") -> Ellipsoid:
    """One extended set-membership filter step."""
    e_pred = esmf_predict(e_k, model, k, rng)
    updated, _ = esmf_update(e_pred, model, y, k, rng, size_criterion)
    return updated


def _sigma_points(mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric sigma-point set: mean +- sqrt(n) * L columns, equal weights.

    Reproduces the mean and covariance exactly and is exact for linear maps.
    """
    n = mean.size
    chol, _ = spd_cholesky(cov, what="sigma-point covariance")
    spread = np.sqrt(n) * chol.T  # rows are sqrt(n) L^T rows = columns of L
    pts = np.vstack([mean + spread, mean - spread])
    weights = np.full(2 * n, 1.0 / (2 * n))
    return pts, weights


def ukf_step(belief: GaussianBelief, model: SystemModel, y: np.ndarray, k: int,
             opts: UkfOptions = UkfOptions()) -> GaussianBelief:
    """One unscented predict/update cycle.

    Noise covariances are the bound shape matrices scaled per opts; the
    measurement update uses the standard cross-covariance gain.
    """
    y = np.asarray(y, dtype=float)
    q_cov = model.Q * opts.scale_for(model.state_dim)
    r_cov = model.R * opts.scale_for(model.meas_dim)

    pts, w = _sigma_points(belief.mean, belief.cov)
    xp = model.f(pts, k)
    mean_p = w @ xp
    dx = xp - mean_p
    cov_p = symmetrize(dx.T @ (w[:, None] * dx) + q_cov)

    pts2, w2 = _sigma_points(mean_p, cov_p)
    yp = np.atleast_2d(model.h(pts2))
    y_mean = w2 @ yp
    dy = yp - y_mean
    dx2 = pts2 - mean_p
    s = symmetrize(dy.T @ (w2[:, None] * dy) + r_cov)
    c_xy = dx2.T @ (w2[:, None] * dy)
    chol_s, s = spd_cholesky(s, what="innovation covariance")
    gain = np.linalg.solve(chol_s.T, np.linalg.solve(chol_s, c_xy.T)).T
    mean = mean_p + gain @ (y - y_mean)
    cov = symmetrize(cov_p - gain @ s @ gain.T)
    return GaussianBelief(mean, cov)
