"""Distribution containers and closed-form Gaussian divergences.

Two carrier families are supported throughout the toolkit: weighted point
clouds (:class:`EmpiricalDistribution`) and Gaussians given by their moments
(:class:`Gaussian1D`, :class:`GaussianND`, :class:`GaussianJoint`).  The
closed forms here (`gaussian_kl`, `gaussian_w2`) are the reference values
that the transport solvers are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmpiricalDistribution",
    "Gaussian1D",
    "GaussianND",
    "GaussianJoint",
    "gaussian_kl",
    "gaussian_w2",
    "psd_sqrt",
    "sample",
]

# Eigenvalues of a nominally-PSD matrix may come out slightly negative from
# eigh; anything above this magnitude is treated as genuinely indefinite.
PSD_EIG_TOL = 1e-8

_WEIGHT_SUM_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a read-only float64 copy of `arr`."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def psd_sqrt(mat: np.ndarray, *, eig_tol: float = PSD_EIG_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues in [-eig_tol, 0] are clamped to zero; anything below
    -eig_tol raises, because that is an indefinite input rather than
    round-off.

    Args:
        mat: symmetric PSD matrix, shape (d, d).
        eig_tol: tolerance for negative eigenvalues attributed to round-off.

    Returns:
        Symmetric matrix S with S @ S == mat (up to round-off).
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-8, rtol=0.0):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min(initial=0.0) < -eig_tol:
        raise ValueError(
            f"matrix is not positive semi-definite: min eigenvalue {vals.min():.3e}"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Weighted point cloud on R^d.

    Attributes:
        points: array of shape (n, d), all entries finite.
        weights: array of shape (n,), nonnegative, summing to 1 within 1e-9.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError(f"points must have shape (n, d), got {points.shape}")
        n, d = points.shape
        if n < 1 or d < 1:
            raise ValueError(f"need at least one point and one dimension, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("points contain non-finite entries")
        if weights.shape != (n,):
            raise ValueError(f"weights must have shape ({n},), got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights contain non-finite entries")
        if weights.min() < 0.0:
            raise ValueError(f"weights must be nonnegative, min is {weights.min():.3e}")
        total = weights.sum()
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_SUM_TOL}, got {total!r}")
        object.__setattr__(self, "points", _freeze(points))
        object.__setattr__(self, "weights", _freeze(weights))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "EmpiricalDistribution":
        """Uniformly weighted cloud over `points`."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def cov(self) -> np.ndarray:
        centered = self.points - self.mean()
        return (centered * self.weights[:, None]).T @ centered


@dataclass(frozen=True)
class Gaussian1D:
    """Scalar Gaussian with strictly positive variance."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        mean = float(self.mean)
        variance = float(self.variance)
        if not np.isfinite(mean) or not np.isfinite(variance):
            raise ValueError("mean and variance must be finite")
        if variance <= 0.0:
            raise ValueError(f"variance must be positive, got {variance!r}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    def as_nd(self) -> "GaussianND":
        return GaussianND(np.array([self.mean]), np.array([[self.variance]]))


@dataclass(frozen=True)
class GaussianND:
    """Gaussian on R^d given by mean vector and symmetric PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.shape[0]
        if d < 1:
            raise ValueError("mean must have at least one component")
        if cov.shape != (d, d):
            raise ValueError(f"cov must have shape ({d}, {d}), got {cov.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("mean and cov must be finite")
        if not np.allclose(cov, cov.T, atol=1e-8, rtol=0.0):
            raise ValueError("cov must be symmetric")
        cov = (cov + cov.T) / 2.0
        min_eig = np.linalg.eigvalsh(cov).min()
        if min_eig < -PSD_EIG_TOL:
            raise ValueError(f"cov is not PSD: min eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GaussianJoint:
    """Joint Gaussian over (X, Y) in block-moment form.

    The input block X has dimension d and the output block Y dimension k.
    Blocks must assemble into a symmetric PSD covariance of shape
    (d + k, d + k).
    """

    mean_x: np.ndarray
    mean_y: np.ndarray
    cov_xx: np.ndarray
    cov_xy: np.ndarray
    cov_yy: np.ndarray

    def __post_init__(self) -> None:
        mean_x = np.asarray(self.mean_x, dtype=np.float64).reshape(-1)
        mean_y = np.asarray(self.mean_y, dtype=np.float64).reshape(-1)
        d, k = mean_x.shape[0], mean_y.shape[0]
        if d < 1 or k < 1:
            raise ValueError("both blocks must be nonempty")
        cov_xx = np.asarray(self.cov_xx, dtype=np.float64)
        cov_xy = np.asarray(self.cov_xy, dtype=np.float64).reshape(d, k)
        cov_yy = np.asarray(self.cov_yy, dtype=np.float64)
        if cov_xx.shape != (d, d):
            raise ValueError(f"cov_xx must have shape ({d}, {d}), got {cov_xx.shape}")
        if cov_yy.shape != (k, k):
            raise ValueError(f"cov_yy must have shape ({k}, {k}), got {cov_yy.shape}")
        full = np.block([[cov_xx, cov_xy], [cov_xy.T, cov_yy]])
        if not np.all(np.isfinite(full)) or not np.all(np.isfinite(mean_x)) or not np.all(
            np.isfinite(mean_y)
        ):
            raise ValueError("moments must be finite")
        if not np.allclose(full, full.T, atol=1e-8, rtol=0.0):
            raise ValueError("joint covariance must be symmetric")
        min_eig = np.linalg.eigvalsh((full + full.T) / 2.0).min()
        if min_eig < -PSD_EIG_TOL:
            raise ValueError(f"joint covariance is not PSD: min eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "mean_x", _freeze(mean_x))
        object.__setattr__(self, "mean_y", _freeze(mean_y))
        object.__setattr__(self, "cov_xx", _freeze((cov_xx + cov_xx.T) / 2.0))
        object.__setattr__(self, "cov_xy", _freeze(cov_xy))
        object.__setattr__(self, "cov_yy", _freeze((cov_yy + cov_yy.T) / 2.0))

    @property
    def dim_x(self) -> int:
        return self.mean_x.shape[0]

    @property
    def dim_y(self) -> int:
        return self.mean_y.shape[0]

    def x_marginal(self) -> GaussianND:
        return GaussianND(self.mean_x, self.cov_xx)

    def y_marginal(self) -> GaussianND:
        return GaussianND(self.mean_y, self.cov_yy)

    def full(self) -> GaussianND:
        mean = np.concatenate([self.mean_x, self.mean_y])
        cov = np.block([[self.cov_xx, self.cov_xy], [self.cov_xy.T, self.cov_yy]])
        return GaussianND(mean, cov)


GaussianLike = Gaussian1D | GaussianND


def _as_nd(dist: GaussianLike) -> GaussianND:
    if isinstance(dist, Gaussian1D):
        return dist.as_nd()
    if isinstance(dist, GaussianND):
        return dist
    raise TypeError(f"expected Gaussian1D or GaussianND, got {type(dist).__name__}")


def gaussian_kl(p: GaussianLike, q: GaussianLike) -> float:
    """KL divergence KL(p || q) between Gaussians, in nats.

    Both covariances must be nonsingular; a singular input is an error
    rather than an infinite value, since downstream callers treat +inf as
    a bug.

    Args:
        p: the distribution whose expectation the divergence is taken under.
        q: the reference distribution.

    Returns:
        0.5 * [tr(Sq^-1 Sp) - log det(Sp)/det(Sq) - d + (mp-mq)^T Sq^-1 (mp-mq)].
    """
    p_nd, q_nd = _as_nd(p), _as_nd(q)
    if p_nd.dim != q_nd.dim:
        raise ValueError(f"dimension mismatch: {p_nd.dim} vs {q_nd.dim}")
    d = p_nd.dim
    sign_p, logdet_p = np.linalg.slogdet(p_nd.cov)
    sign_q, logdet_q = np.linalg.slogdet(q_nd.cov)
    if sign_p <= 0 or not np.isfinite(logdet_p):
        raise ValueError("first covariance is singular; KL is undefined here")
    if sign_q <= 0 or not np.isfinite(logdet_q):
        raise ValueError("second covariance is singular; KL is undefined here")
    q_inv_p = np.linalg.solve(q_nd.cov, p_nd.cov)
    diff = p_nd.mean - q_nd.mean
    quad = diff @ np.linalg.solve(q_nd.cov, diff)
    return float(0.5 * (np.trace(q_inv_p) - d + logdet_q - logdet_p + quad))


def gaussian_w2(p: GaussianLike, q: GaussianLike) -> float:
    """Squared 2-Wasserstein distance between Gaussians.

    Degenerate (singular PSD) covariances are fine here, unlike for
    `gaussian_kl`.

    Returns:
        ||mp - mq||^2 + tr(Sp) + tr(Sq) - 2 tr((Sp^1/2 Sq Sp^1/2)^1/2).
    """
    p_nd, q_nd = _as_nd(p), _as_nd(q)
    if p_nd.dim != q_nd.dim:
        raise ValueError(f"dimension mismatch: {p_nd.dim} vs {q_nd.dim}")
    root_p = psd_sqrt(p_nd.cov)
    cross = psd_sqrt(root_p @ q_nd.cov @ root_p)
    diff = p_nd.mean - q_nd.mean
    value = diff @ diff + np.trace(p_nd.cov) + np.trace(q_nd.cov) - 2.0 * np.trace(cross)
    # The Bures term can undershoot zero by round-off on near-identical inputs.
    return float(max(value, 0.0))


def sample(
    dist: Gaussian1D | GaussianND | GaussianJoint | EmpiricalDistribution,
    n: int,
    seed: int,
) -> EmpiricalDistribution:
    """Draw n points from `dist` as a uniformly weighted cloud.

    Sampling is deterministic in `seed`.  A GaussianJoint is sampled over
    the concatenated (x, y) space; an EmpiricalDistribution is resampled
    with replacement according to its weights.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if isinstance(dist, Gaussian1D):
        pts = rng.normal(dist.mean, np.sqrt(dist.variance), size=(n, 1))
    elif isinstance(dist, GaussianND):
        z = rng.standard_normal((n, dist.dim))
        pts = dist.mean + z @ psd_sqrt(dist.cov)
    elif isinstance(dist, GaussianJoint):
        full = dist.full()
        z = rng.standard_normal((n, full.dim))
        pts = full.mean + z @ psd_sqrt(full.cov)
    elif isinstance(dist, EmpiricalDistribution):
        idx = rng.choice(dist.size, size=n, p=dist.weights)
        pts = dist.points[idx]
    else:
        raise TypeError(f"cannot sample from {type(dist).__name__}")
    return EmpiricalDistribution.from_points(pts)
