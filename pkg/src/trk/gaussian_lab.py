"""Closed-form transfer risks for jointly Gaussian tasks.

A task is a joint Gaussian over inputs X and outputs Y; its optimal linear
predictor and the induced prediction laws have explicit moments, so every
risk in `transfer_core` collapses to a formula here.  The module covers the
basic source/target case with scalar outputs, the regret of reusing the
source predictor, and the two structured extensions: augmenting the feature
space (target inputs extend source inputs) and augmenting the output space
(target outputs extend source outputs).

All decompositions split a risk into a variance term, driven by mismatch of
the prediction spreads, and a bias term, driven by mismatch of the prediction
means.  KL risks are in nats; Wasserstein risks are squared distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .distributions import Gaussian1D, GaussianJoint, GaussianND, gaussian_kl, gaussian_w2, psd_sqrt
from .transfer_core import AffineModel

__all__ = [
    "GaussianTask",
    "RiskDecomposition",
    "optimal_linear_model",
    "predictive_laws",
    "basic_case_risks",
    "regret",
    "risk_regret_residual",
    "feature_augmentation_risks",
    "output_augmentation_risks",
    "output_augmentation_laws",
    "optimal_output_initializer",
    "augment_features",
    "conditionally_independent_augmentation",
    "restrict_inputs",
    "restrict_outputs",
    "random_task",
    "random_basic_pair",
]

_ROLES = ("source", "target")
_EMBED_TOL = 1e-9


@dataclass(frozen=True)
class GaussianTask:
    """A learning task: joint Gaussian law of (X, Y) plus a role label."""

    joint: GaussianJoint
    role: str = "source"

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")

    @property
    def dim_x(self) -> int:
        return self.joint.dim_x

    @property
    def dim_y(self) -> int:
        return self.joint.dim_y


@dataclass(frozen=True)
class RiskDecomposition:
    """Variance/bias split of a risk; total is their sum by construction."""

    variance_term: float
    bias_term: float
    total: float | None = None

    def __post_init__(self) -> None:
        variance = float(self.variance_term)
        bias = float(self.bias_term)
        if variance < -1e-12 or bias < -1e-12:
            raise ValueError(f"risk terms must be nonnegative, got ({variance}, {bias})")
        total = self.total
        if total is None:
            total = variance + bias
        elif abs(float(total) - (variance + bias)) > 1e-12:
            raise ValueError(
                f"total {total!r} does not match variance + bias = {variance + bias!r}"
            )
        object.__setattr__(self, "variance_term", variance)
        object.__setattr__(self, "bias_term", bias)
        object.__setattr__(self, "total", float(total))


def _h(ratio: float) -> float:
    """The scalar KL kernel h(x) = (x - log x - 1) / 2, nonnegative on x > 0."""
    return 0.5 * (ratio - np.log(ratio) - 1.0)


def optimal_linear_model(task: GaussianTask) -> AffineModel:
    """Bayes-optimal affine predictor of Y from X under squared loss.

    weights = (cov_xx^-1 cov_xy)^T and bias = mean_y - weights @ mean_x;
    requires a nonsingular input covariance.
    """
    joint = task.joint
    sign, logdet = np.linalg.slogdet(joint.cov_xx)
    if sign <= 0 or not np.isfinite(logdet):
        raise ValueError("input covariance is singular; the optimal model is not unique")
    w = np.linalg.solve(joint.cov_xx, joint.cov_xy)  # (d, k)
    bias = joint.mean_y - w.T @ joint.mean_x
    return AffineModel(w.T, bias)


def _scalar_setup(source: GaussianTask, target: GaussianTask):
    """Shared moments for the scalar-output source/target formulas."""
    if source.dim_y != 1 or target.dim_y != 1:
        raise ValueError(
            f"basic case needs scalar outputs, got dims {source.dim_y} and {target.dim_y}"
        )
    if source.dim_x != target.dim_x:
        raise ValueError(
            f"input dimension mismatch: source {source.dim_x}, target {target.dim_x}"
        )
    w_s = optimal_linear_model(source).weights[0]
    w_t = optimal_linear_model(target).weights[0]
    cov_tx = target.joint.cov_xx
    var_st = float(w_s @ cov_tx @ w_s)
    var_t = float(w_t @ cov_tx @ w_t)
    bias = float(
        target.joint.mean_y[0]
        - source.joint.mean_y[0]
        - w_s @ (target.joint.mean_x - source.joint.mean_x)
    )
    return w_s, w_t, cov_tx, var_st, var_t, bias


def predictive_laws(source: GaussianTask, target: GaussianTask) -> tuple[Gaussian1D, Gaussian1D]:
    """Prediction laws on the target inputs: (source model's, target model's).

    The first law is what the frozen source predictor outputs on target
    inputs; the second is what the target-optimal predictor outputs.  Both
    are the closed-form counterparts of pushing the target input law through
    the respective affine models.
    """
    w_s, _, _, var_st, var_t, bias = _scalar_setup(source, target)
    if var_st <= 0.0 or var_t <= 0.0:
        raise ValueError(
            "degenerate prediction law: a predictor has zero variance on the target inputs"
        )
    mean_t = float(target.joint.mean_y[0])
    return Gaussian1D(mean_t - bias, var_st), Gaussian1D(mean_t, var_t)


def basic_case_risks(
    source: GaussianTask, target: GaussianTask
) -> tuple[RiskDecomposition, RiskDecomposition]:
    """Output risks of reusing the source predictor on the target task.

    Returns (kl, w): the KL risk KL(P_T || P_ST) splits into
    h(var_T / var_ST) plus bias^2 / (2 var_ST), and the squared-W2 risk into
    (sqrt(var_ST) - sqrt(var_T))^2 plus bias^2, where var_ST and var_T are
    the prediction variances of the source and target models on the target
    inputs and bias is the prediction-mean gap.

    Raises:
        ValueError: when either prediction variance vanishes; the KL split
            is undefined there and no clamped value is returned.
    """
    _, _, _, var_st, var_t, bias = _scalar_setup(source, target)
    if var_st <= 0.0 or var_t <= 0.0:
        raise ValueError(
            "degenerate prediction law: a predictor has zero variance on the target inputs"
        )
    kl = RiskDecomposition(_h(var_t / var_st), bias**2 / (2.0 * var_st))
    w = RiskDecomposition((np.sqrt(var_st) - np.sqrt(var_t)) ** 2, bias**2)
    return kl, w


def regret(source: GaussianTask, target: GaussianTask) -> float:
    """Excess squared loss of the source predictor over the target optimum.

    Equals ||cov_TX^(1/2) (w_T - w_S)||^2 + bias^2: the loss gap
    E[(Y - f_S(X))^2] - E[(Y - f_T(X))^2] on the target task.
    """
    w_s, w_t, cov_tx, _, _, bias = _scalar_setup(source, target)
    root = psd_sqrt(cov_tx)
    diff = root @ (w_t - w_s)
    return float(diff @ diff + bias**2)


def risk_regret_residual(
    source: GaussianTask, target: GaussianTask
) -> tuple[float, float, float]:
    """W-risk, regret, and their gap, each from its own formula.

    The residual 2 (||a|| ||b|| - <a, b>) with a = cov_TX^(1/2) w_T and
    b = cov_TX^(1/2) w_S is nonnegative by Cauchy-Schwarz, which is exactly
    why the squared-W2 risk never exceeds the regret.
    """
    w_s, w_t, cov_tx, var_st, var_t, bias = _scalar_setup(source, target)
    if var_st <= 0.0 or var_t <= 0.0:
        raise ValueError(
            "degenerate prediction law: a predictor has zero variance on the target inputs"
        )
    root = psd_sqrt(cov_tx)
    a, b = root @ w_t, root @ w_s
    risk = (np.sqrt(var_st) - np.sqrt(var_t)) ** 2 + bias**2
    regret_value = float((a - b) @ (a - b) + bias**2)
    residual = 2.0 * (np.linalg.norm(a) * np.linalg.norm(b) - a @ b)
    return float(risk), regret_value, float(residual)


def _check_embedding(actual: np.ndarray, expected: np.ndarray, label: str) -> None:
    if not np.allclose(actual, expected, atol=_EMBED_TOL, rtol=0.0):
        raise ValueError(f"target does not embed the source blocks: {label} differs")


def feature_augmentation_risks(
    source: GaussianTask, target: GaussianTask
) -> tuple[RiskDecomposition, RiskDecomposition]:
    """Output risks when the target task adds feature coordinates.

    The target input space extends the source input space: leading blocks of
    the target moments must equal the source moments exactly, and the target
    output is the same scalar.  The pretrained model reads only the original
    coordinates, so its prediction law on the target inputs coincides with
    its law on the source task, the bias vanishes, and both risks reduce to
    the explained-variance ratio r = var_T / var_S:

        kl = (h(r), 0)    w = ((sqrt(var_T) - sqrt(var_S))^2, 0)

    where var = cov_YX cov_XX^-1 cov_XY for each task.
    """
    if source.dim_y != 1 or target.dim_y != 1:
        raise ValueError("feature augmentation needs scalar outputs")
    d = source.dim_x
    if target.dim_x <= d:
        raise ValueError(
            f"target must add feature coordinates: source dim {d}, target dim {target.dim_x}"
        )
    sj, tj = source.joint, target.joint
    _check_embedding(tj.mean_x[:d], sj.mean_x, "input mean")
    _check_embedding(tj.cov_xx[:d, :d], sj.cov_xx, "input covariance")
    _check_embedding(tj.mean_y, sj.mean_y, "output mean")
    _check_embedding(tj.cov_xy[:d, :], sj.cov_xy, "input-output covariance")
    _check_embedding(tj.cov_yy, sj.cov_yy, "output variance")

    def explained_variance(joint: GaussianJoint) -> float:
        return float(joint.cov_xy[:, 0] @ np.linalg.solve(joint.cov_xx, joint.cov_xy[:, 0]))

    var_s = explained_variance(sj)
    var_t = explained_variance(tj)
    if var_s <= 0.0 or var_t <= 0.0:
        raise ValueError("degenerate prediction law: explained variance vanishes")
    kl = RiskDecomposition(_h(var_t / var_s), 0.0)
    w = RiskDecomposition((np.sqrt(var_t) - np.sqrt(var_s)) ** 2, 0.0)
    return kl, w


def _split_output_blocks(source: GaussianTask, target: GaussianTask):
    """Validate the output-augmentation embedding and return (d, l, k)."""
    d, l = source.dim_x, source.dim_y
    if target.dim_x != d:
        raise ValueError(f"input dimension mismatch: source {d}, target {target.dim_x}")
    if target.dim_y <= l:
        raise ValueError(
            f"target must add output coordinates: source dim {l}, target dim {target.dim_y}"
        )
    sj, tj = source.joint, target.joint
    _check_embedding(tj.mean_x, sj.mean_x, "input mean")
    _check_embedding(tj.cov_xx, sj.cov_xx, "input covariance")
    _check_embedding(tj.mean_y[:l], sj.mean_y, "output mean")
    _check_embedding(tj.cov_xy[:, :l], sj.cov_xy, "input-output covariance")
    _check_embedding(tj.cov_yy[:l, :l], sj.cov_yy, "output covariance")
    return d, l, target.dim_y - l


def output_augmentation_laws(
    source: GaussianTask, target: GaussianTask, initializer: AffineModel
) -> tuple[GaussianND, GaussianND]:
    """Prediction laws (P_ST, P_T) when the target adds output coordinates.

    The intermediate model stacks the frozen source predictor with the
    initializer on the new coordinates; the target model is the optimal
    predictor of the full output vector.  Both laws are Gaussians on
    R^(l + k) with explicit moments.
    """
    d, l, k = _split_output_blocks(source, target)
    if initializer.in_dim != d or initializer.out_dim != k:
        raise ValueError(
            f"initializer must map inputs (dim {d}) to the new outputs (dim {k}), "
            f"got {initializer.in_dim} -> {initializer.out_dim}"
        )
    source_model = optimal_linear_model(source)
    stacked = AffineModel(
        np.vstack([source_model.weights, initializer.weights]),
        np.concatenate([source_model.bias, initializer.bias]),
    )
    x_law = target.joint.x_marginal()
    p_st = GaussianND(
        stacked.weights @ x_law.mean + stacked.bias,
        stacked.weights @ x_law.cov @ stacked.weights.T,
    )
    target_model = optimal_linear_model(target)
    p_t = GaussianND(
        target_model.weights @ x_law.mean + target_model.bias,
        target_model.weights @ x_law.cov @ target_model.weights.T,
    )
    return p_st, p_t


def output_augmentation_risks(
    source: GaussianTask, target: GaussianTask, initializer: AffineModel
) -> tuple[float, float, RiskDecomposition]:
    """Risks of the stacked predictor when the target adds output coordinates.

    Returns (kl, w, decomposition): kl is KL(P_T || P_ST) via the
    trace/log-det form, w the squared W2 between the same laws, and the
    decomposition recomputes the same KL as an eigenvalue sum
    sum_i (lam_i - log lam_i - 1) / 2 over the generalized eigenvalues of
    (cov_T, cov_ST) plus the explicit bias quadratic form, giving an
    independent route to the identical total.
    """
    p_st, p_t = output_augmentation_laws(source, target, initializer)
    sign, _ = np.linalg.slogdet(p_st.cov)
    if sign <= 0:
        raise ValueError(
            "intermediate prediction covariance is singular; pick an initializer with "
            "nonzero response on the new outputs"
        )
    kl = gaussian_kl(p_t, p_st)
    w = gaussian_w2(p_t, p_st)
    lams = eigh(p_t.cov, p_st.cov, eigvals_only=True)
    if lams.min() <= 0.0:
        raise ValueError("target prediction covariance is singular; KL split is undefined")
    variance = float(0.5 * np.sum(lams - np.log(lams) - 1.0))
    diff = p_t.mean - p_st.mean
    bias = float(0.5 * diff @ np.linalg.solve(p_st.cov, diff))
    return kl, w, RiskDecomposition(variance, bias)


def optimal_output_initializer(source: GaussianTask, target: GaussianTask) -> AffineModel:
    """Initializer matching the optimal predictor of the new output block.

    With weights cov_SX^-1 cov_X,new and the mean-matching bias the stacked
    intermediate law coincides with the target prediction law, so both
    augmentation risks vanish.
    """
    d, l, _ = _split_output_blocks(source, target)
    cov_x_new = target.joint.cov_xy[:, l:]
    w = np.linalg.solve(source.joint.cov_xx, cov_x_new)
    bias = target.joint.mean_y[l:] - w.T @ source.joint.mean_x
    return AffineModel(w.T, bias)


def augment_features(
    source: GaussianTask,
    mean_new: np.ndarray,
    cov_new: np.ndarray,
    cov_cross: np.ndarray,
    cov_new_y: np.ndarray,
    role: str = "target",
) -> GaussianTask:
    """Extend a scalar-output task with new feature coordinates.

    Args:
        mean_new: mean of the added coordinates, shape (k,).
        cov_new: covariance of the added coordinates, shape (k, k).
        cov_cross: covariance between original and added coordinates (d, k).
        cov_new_y: covariance between added coordinates and the output (k, 1).

    The assembled joint must be PSD; the container validates that.
    """
    if source.dim_y != 1:
        raise ValueError("feature augmentation needs a scalar output")
    sj = source.joint
    mean_new = np.asarray(mean_new, dtype=float).reshape(-1)
    k = mean_new.shape[0]
    cov_new = np.asarray(cov_new, dtype=float).reshape(k, k)
    cov_cross = np.asarray(cov_cross, dtype=float).reshape(sj.dim_x, k)
    cov_new_y = np.asarray(cov_new_y, dtype=float).reshape(k, 1)
    joint = GaussianJoint(
        mean_x=np.concatenate([sj.mean_x, mean_new]),
        mean_y=sj.mean_y,
        cov_xx=np.block([[sj.cov_xx, cov_cross], [cov_cross.T, cov_new]]),
        cov_xy=np.vstack([sj.cov_xy, cov_new_y]),
        cov_yy=sj.cov_yy,
    )
    return GaussianTask(joint, role=role)


def conditionally_independent_augmentation(
    source: GaussianTask,
    mean_new: np.ndarray,
    cov_new: np.ndarray,
    cov_cross: np.ndarray,
    role: str = "target",
) -> GaussianTask:
    """Feature augmentation whose new coordinates add no predictive value.

    Choosing cov_new_y = cov_cross^T cov_XX^-1 cov_XY makes the output
    conditionally independent of the new coordinates given the original
    ones, so the optimal target predictor ignores them and the transfer
    risks vanish.
    """
    cov_cross = np.asarray(cov_cross, dtype=float).reshape(source.dim_x, -1)
    cov_new_y = cov_cross.T @ np.linalg.solve(source.joint.cov_xx, source.joint.cov_xy)
    return augment_features(source, mean_new, cov_new, cov_cross, cov_new_y, role=role)


def restrict_inputs(task: GaussianTask, keep: int, role: str = "source") -> GaussianTask:
    """Sub-task over the first `keep` input coordinates."""
    if not 1 <= keep <= task.dim_x:
        raise ValueError(f"keep must be in [1, {task.dim_x}], got {keep}")
    j = task.joint
    joint = GaussianJoint(
        mean_x=j.mean_x[:keep],
        mean_y=j.mean_y,
        cov_xx=j.cov_xx[:keep, :keep],
        cov_xy=j.cov_xy[:keep, :],
        cov_yy=j.cov_yy,
    )
    return GaussianTask(joint, role=role)


def restrict_outputs(task: GaussianTask, keep: int, role: str = "source") -> GaussianTask:
    """Sub-task over the first `keep` output coordinates."""
    if not 1 <= keep <= task.dim_y:
        raise ValueError(f"keep must be in [1, {task.dim_y}], got {keep}")
    j = task.joint
    joint = GaussianJoint(
        mean_x=j.mean_x,
        mean_y=j.mean_y[:keep],
        cov_xx=j.cov_xx,
        cov_xy=j.cov_xy[:, :keep],
        cov_yy=j.cov_yy[:keep, :keep],
    )
    return GaussianTask(joint, role=role)


def random_task(
    dim_x: int,
    dim_y: int,
    seed: int,
    eig_range: tuple[float, float] = (0.5, 2.0),
    mean_scale: float = 0.5,
    role: str = "source",
) -> GaussianTask:
    """Random nondegenerate task with controlled spectrum and mean scale.

    The full (X, Y) covariance is drawn with eigenvalues uniform in
    eig_range under a Haar-random basis, which keeps every conditional
    covariance nonsingular and the risk magnitudes O(1).
    """
    lo, hi = eig_range
    if not 0.0 < lo <= hi:
        raise ValueError(f"eig_range must satisfy 0 < lo <= hi, got {eig_range}")
    rng = np.random.default_rng(seed)
    n = dim_x + dim_y
    basis, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = rng.uniform(lo, hi, size=n)
    full = (basis * eigs) @ basis.T
    mean = rng.normal(scale=mean_scale, size=n)
    joint = GaussianJoint(
        mean_x=mean[:dim_x],
        mean_y=mean[dim_x:],
        cov_xx=full[:dim_x, :dim_x],
        cov_xy=full[:dim_x, dim_x:],
        cov_yy=full[dim_x:, dim_x:],
    )
    return GaussianTask(joint, role=role)


def _regression_joint(
    mean_x: np.ndarray, cov_xx: np.ndarray, w: np.ndarray, b: float, noise_var: float
) -> GaussianJoint:
    return GaussianJoint(
        mean_x=mean_x,
        mean_y=[float(w @ mean_x) + b],
        cov_xx=cov_xx,
        cov_xy=(cov_xx @ w)[:, None],
        cov_yy=[[float(w @ cov_xx @ w) + noise_var]],
    )


def random_basic_pair(
    dim: int,
    seed: int,
    eig_range: tuple[float, float] = (0.5, 2.0),
    drift: float = 0.25,
) -> tuple[GaussianTask, GaussianTask]:
    """Random scalar-output source task plus a drifted target task.

    Both joints come from a linear model Y = w . X + b + noise.  The target
    drifts from the source in every component (input law, weights, bias,
    noise level).  Bounded weights and bounded drift keep both risks and the
    spread of their naive Monte-Carlo estimators O(1), so sampled
    cross-checks can use absolute tolerances.
    """
    lo, hi = eig_range
    if not 0.0 < lo <= hi:
        raise ValueError(f"eig_range must satisfy 0 < lo <= hi, got {eig_range}")
    if drift < 0.0:
        raise ValueError(f"drift must be nonnegative, got {drift}")
    rng = np.random.default_rng(seed)

    def input_cov() -> np.ndarray:
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        return (basis * rng.uniform(lo, hi, size=dim)) @ basis.T

    cov_sx = input_cov()
    mean_sx = rng.uniform(-0.5, 0.5, size=dim)
    direction = rng.normal(size=dim)
    w_s = direction / np.linalg.norm(direction) * rng.uniform(0.7, 1.1)
    b_s = rng.uniform(-0.5, 0.5)
    source = GaussianTask(
        _regression_joint(mean_sx, cov_sx, w_s, b_s, rng.uniform(0.4, 1.0)), role="source"
    )

    # Convex blending keeps the input spectrum inside eig_range.
    cov_tx = 0.8 * cov_sx + 0.2 * input_cov()
    mean_tx = mean_sx + rng.uniform(-drift, drift, size=dim)
    w_t = w_s + rng.uniform(-drift, drift, size=dim)
    b_t = b_s + rng.uniform(-drift, drift)
    target = GaussianTask(
        _regression_joint(mean_tx, cov_tx, w_t, b_t, rng.uniform(0.4, 1.0)), role="target"
    )
    return source, target
