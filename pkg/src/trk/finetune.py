"""Gradient-descent training for output transport maps and classifier heads.

Two training problems live here.  The first descends the output transport
risk: given a pretrained source model and an empirical target law, fit a map
on top of the source outputs so the pushforward matches the target output
law, and report the achieved Wasserstein risk under a fixed epoch budget.
The second is a plain softmax classifier head used to measure transfer
accuracy on held-out data.

For scalar outputs the risk objective is the exact quantile-coupling
Wasserstein cost, which is piecewise smooth in the parameters; training uses
its subgradient with ties resolved to zero.  For multi-dimensional outputs
the objective switches to an entropic surrogate whose gradient flows through
the transport plan, while the reported risk always comes from the exact
solver.  Everything is full-batch and seeded, so runs are bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .distributions import EmpiricalDistribution
from .optimal_transport import OtConfig, wasserstein
from .transfer_core import AffineMap, AffineModel, TransportMap

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "AffineMapFamily",
    "SoftmaxHeadFamily",
    "transport_objective",
    "cross_entropy_objective",
    "minimize_output_risk",
    "train_classifier",
    "SyntheticDomain",
    "make_synthetic_domains",
    "PairResult",
    "evaluate_risk_accuracy_pairs",
]

_INIT_SCALE = 0.1
_PLATEAU_TOL = 1e-9


def _freeze_labels(arr: np.ndarray) -> np.ndarray:
    """Return a read-only integer copy of `arr`."""
    out = np.array(arr, dtype=np.int64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for full-batch gradient descent.

    epochs is an exact budget when minimizing the output risk and an upper
    bound when training a classifier, where plateau_patience epochs without
    improvement stop the run early.
    """

    epochs: int = 10
    learning_rate: float = 0.05
    seed: int = 0
    plateau_patience: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.plateau_patience < 1:
            raise ValueError(f"plateau_patience must be >= 1, got {self.plateau_patience}")


@dataclass(frozen=True)
class TrainTrace:
    """Objective values at the start of each epoch plus the kept parameters."""

    objectives: tuple[float, ...]
    parameters: np.ndarray
    epochs_run: int

    def __post_init__(self) -> None:
        if len(self.objectives) != self.epochs_run:
            raise ValueError(
                f"trace length {len(self.objectives)} != epochs_run {self.epochs_run}"
            )


class TrainingDivergedError(RuntimeError):
    """The objective left the reals; the partial trace rides along."""

    def __init__(self, message: str, trace: TrainTrace):
        super().__init__(message)
        self.trace = trace


class AffineMapFamily:
    """Affine output maps y = W z + b with a flat parameter vector."""

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"dimensions must be >= 1, got ({in_dim}, {out_dim})")
        self.in_dim = in_dim
        self.out_dim = out_dim

    def parameter_count(self) -> int:
        return self.out_dim * (self.in_dim + 1)

    def init_parameters(self, rng: np.random.Generator) -> np.ndarray:
        weights = rng.uniform(-_INIT_SCALE, _INIT_SCALE, size=self.out_dim * self.in_dim)
        return np.concatenate([weights, np.zeros(self.out_dim)])

    def unpack(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.out_dim * self.in_dim
        return params[:split].reshape(self.out_dim, self.in_dim), params[split:]

    def pack(self, model: AffineModel) -> np.ndarray:
        if (model.in_dim, model.out_dim) != (self.in_dim, self.out_dim):
            raise ValueError(
                f"model shape ({model.in_dim}, {model.out_dim}) does not match "
                f"family shape ({self.in_dim}, {self.out_dim})"
            )
        return np.concatenate([model.weights.ravel(), model.bias])

    def apply(self, params: np.ndarray, points: np.ndarray) -> np.ndarray:
        weights, bias = self.unpack(params)
        return points @ weights.T + bias

    def build(self, params: np.ndarray) -> TransportMap:
        weights, bias = self.unpack(params)
        return AffineMap(AffineModel(weights, bias))


class SoftmaxHeadFamily(AffineMapFamily):
    """Affine logits read through a softmax; parameters as in the base."""

    def __init__(self, in_dim: int, classes: int):
        if classes < 2:
            raise ValueError(f"classes must be >= 2, got {classes}")
        super().__init__(in_dim, classes)
        self.classes = classes

    def predict(self, params: np.ndarray, points: np.ndarray) -> np.ndarray:
        return np.argmax(self.apply(params, points), axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _quantile_cost_and_grad(
    values: np.ndarray, weights: np.ndarray, proxy: EmpiricalDistribution, p: float
) -> tuple[float, np.ndarray]:
    """Exact 1-D W_p^p against the proxy and its subgradient in `values`.

    Walks the merged quantile segments once; each segment couples one atom
    of either side, so the subgradient accumulates per-segment terms with
    sign(0) = 0 at ties.
    """
    order = np.argsort(values, kind="stable")
    u = values[order]
    cu = np.cumsum(weights[order])
    order_v = np.argsort(proxy.points[:, 0], kind="stable")
    v = proxy.points[order_v, 0]
    cv = np.cumsum(proxy.weights[order_v])
    edges = np.concatenate([[0.0], np.union1d(cu[:-1], cv[:-1]), [1.0]])
    mids = (edges[:-1] + edges[1:]) / 2.0
    # Round-off can leave a cumulative weight a hair under 1; clip the index.
    iu = np.minimum(np.searchsorted(cu, mids, side="left"), len(u) - 1)
    iv = np.minimum(np.searchsorted(cv, mids, side="left"), len(v) - 1)
    gaps = np.diff(edges)
    diff = u[iu] - v[iv]
    # Overflow to inf on a runaway iterate is fine: the trainer reads any
    # non-finite objective as divergence.
    with np.errstate(over="ignore"):
        cost = float(np.sum(np.abs(diff) ** p * gaps))
        if p == 1.0:
            seg = np.sign(diff) * gaps
        else:
            seg = p * np.abs(diff) ** (p - 1.0) * np.sign(diff) * gaps
    grad_sorted = np.zeros(len(u))
    np.add.at(grad_sorted, iu, seg)
    grad = np.zeros(len(u))
    grad[order] = grad_sorted
    return cost, grad


def _entropic_cost_and_grad(
    outputs: np.ndarray,
    weights: np.ndarray,
    proxy: EmpiricalDistribution,
    p: float,
    epsilon: float,
    max_iter: int,
) -> tuple[float, np.ndarray]:
    """Entropic surrogate cost and its plan-weighted gradient in `outputs`."""
    cfg = OtConfig(p=p, method="sinkhorn", sinkhorn_epsilon=epsilon, sinkhorn_max_iter=max_iter)
    _, coupling = wasserstein(EmpiricalDistribution(outputs, weights), proxy, cfg)
    diff = outputs[:, None, :] - proxy.points[None, :, :]
    norms = np.linalg.norm(diff, axis=2)
    safe = np.where(norms > 0.0, norms, 1.0)
    scale = coupling.plan * p * safe ** (p - 2.0)
    scale = np.where(norms > 0.0, scale, 0.0)
    grad = np.sum(scale[:, :, None] * diff, axis=1)
    return coupling.cost, grad


def transport_objective(
    family: AffineMapFamily,
    params: np.ndarray,
    inputs: np.ndarray,
    weights: np.ndarray,
    proxy: EmpiricalDistribution,
    p: float = 1.0,
    epsilon: float | None = None,
    sinkhorn_max_iter: int = 5000,
) -> tuple[float, np.ndarray]:
    """Training objective W_p^p(pushforward, proxy) and its parameter gradient.

    Scalar output families get the exact quantile cost; higher-dimensional
    ones need `epsilon` and get the entropic surrogate.  The gradient chains
    the per-output subgradient through the affine parameterization.
    """
    outputs = family.apply(params, inputs)
    if family.out_dim == 1:
        cost, grad_out = _quantile_cost_and_grad(outputs[:, 0], weights, proxy, p)
        grad_out = grad_out[:, None]
    else:
        if epsilon is None:
            raise ValueError("multi-dimensional outputs need an explicit epsilon")
        cost, grad_out = _entropic_cost_and_grad(
            outputs, weights, proxy, p, epsilon, sinkhorn_max_iter
        )
    grad_weights = grad_out.T @ inputs
    grad_bias = grad_out.sum(axis=0)
    return cost, np.concatenate([grad_weights.ravel(), grad_bias])


def cross_entropy_objective(
    family: SoftmaxHeadFamily,
    params: np.ndarray,
    points: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Weighted softmax cross-entropy and its parameter gradient."""
    logits = family.apply(params, points)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_norm[:, None]
    value = float(-np.sum(weights * log_probs[np.arange(len(labels)), labels]))
    residual = np.exp(log_probs)
    residual[np.arange(len(labels)), labels] -= 1.0
    residual *= weights[:, None]
    grad_weights = residual.T @ points
    grad_bias = residual.sum(axis=0)
    return value, np.concatenate([grad_weights.ravel(), grad_bias])


def _exact_risk(
    outputs: np.ndarray, weights: np.ndarray, proxy: EmpiricalDistribution, p: float
) -> float:
    support = max(len(outputs), proxy.size)
    cfg = OtConfig(p=p, lp_max_support=max(support, 400))
    distance, _ = wasserstein(EmpiricalDistribution(outputs, weights), proxy, cfg)
    return distance**p


def minimize_output_risk(
    family: AffineMapFamily,
    source_model,
    law_xt: EmpiricalDistribution,
    law_yt_proxy: EmpiricalDistribution,
    p: float = 1.0,
    cfg: TrainConfig = TrainConfig(),
    init: np.ndarray | None = None,
) -> tuple[float, TransportMap, TrainTrace]:
    """Descend W_p^p(map # source outputs, proxy) for exactly cfg.epochs.

    The epoch budget is the search-space restriction: no early stopping, and
    the returned map is the best iterate seen, never worse than the
    initialization.  The reported risk is always the exact transport cost of
    that map, even when training descended the entropic surrogate.

    Returns:
        (risk, map, trace) with risk = W_p^p of the best iterate.

    Raises:
        TrainingDivergedError: if the objective leaves the reals; the error
            carries the trace accumulated so far.
        ValueError: on dimension mismatches between family, model and laws.
    """
    if family.parameter_count() < 1:
        raise ValueError("family has no trainable parameters")
    inputs = np.asarray(source_model(law_xt.points), dtype=float)
    if inputs.shape[1] != family.in_dim:
        raise ValueError(
            f"source model emits dimension {inputs.shape[1]}, family expects {family.in_dim}"
        )
    if law_yt_proxy.dim != family.out_dim:
        raise ValueError(
            f"proxy dimension {law_yt_proxy.dim} != family output dimension {family.out_dim}"
        )
    params = (
        np.asarray(init, dtype=float)
        if init is not None
        else family.init_parameters(np.random.default_rng(cfg.seed))
    )
    if params.shape != (family.parameter_count(),):
        raise ValueError(f"init must have shape ({family.parameter_count()},)")

    epsilon = None
    if family.out_dim > 1:
        # Freeze the surrogate temperature at the usual fraction of the
        # initial cost scale so the objective stays fixed across epochs.
        initial = family.apply(params, inputs)
        diff = initial[:, None, :] - law_yt_proxy.points[None, :, :]
        epsilon = 0.05 * float(np.mean(np.linalg.norm(diff, axis=2) ** p))

    objectives: list[float] = []
    best_params, best_value = params.copy(), np.inf
    for _ in range(cfg.epochs):
        value, grad = transport_objective(
            family, params, inputs, law_xt.weights, law_yt_proxy, p, epsilon
        )
        if not np.isfinite(value):
            trace = TrainTrace(tuple(objectives), best_params, len(objectives))
            raise TrainingDivergedError(
                f"objective became {value} at epoch {len(objectives)}", trace
            )
        objectives.append(value)
        if value < best_value:
            best_params, best_value = params.copy(), value
        params = params - cfg.learning_rate * grad
    final_value, _ = transport_objective(
        family, params, inputs, law_xt.weights, law_yt_proxy, p, epsilon
    )
    if np.isfinite(final_value) and final_value < best_value:
        best_params = params.copy()
    trace = TrainTrace(tuple(objectives), best_params, cfg.epochs)
    risk = _exact_risk(family.apply(best_params, inputs), law_xt.weights, law_yt_proxy, p)
    return risk, family.build(best_params), trace


def train_classifier(
    family: SoftmaxHeadFamily,
    features: EmpiricalDistribution,
    labels: np.ndarray,
    eval_features: EmpiricalDistribution,
    eval_labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(epochs=100),
) -> tuple[float, AffineModel, TrainTrace]:
    """Fit the softmax head by full-batch descent; score on the held-out split.

    Runs at most cfg.epochs epochs and stops once the cross-entropy has not
    improved for cfg.plateau_patience consecutive epochs.  The returned model
    is the lowest-loss iterate.

    Returns:
        (accuracy, model, trace) with accuracy weighted by the held-out
        distribution's weights.

    Raises:
        ValueError: on labels outside {0..classes-1} or a single-class
            training set.
        TrainingDivergedError: if the loss leaves the reals.
    """
    labels = np.asarray(labels)
    eval_labels = np.asarray(eval_labels)
    for name, arr, dist in (("labels", labels, features), ("eval_labels", eval_labels, eval_features)):
        if arr.shape != (dist.size,):
            raise ValueError(f"{name} must have shape ({dist.size},), got {arr.shape}")
        if arr.min() < 0 or arr.max() >= family.classes:
            raise ValueError(f"{name} must lie in [0, {family.classes}), got range "
                             f"[{arr.min()}, {arr.max()}]")
    if len(np.unique(labels)) < 2:
        raise ValueError("training labels contain a single class")
    if features.dim != family.in_dim:
        raise ValueError(f"features dimension {features.dim} != family input {family.in_dim}")

    params = family.init_parameters(np.random.default_rng(cfg.seed))
    losses: list[float] = []
    best_params, best_loss, stall = params.copy(), np.inf, 0
    for _ in range(cfg.epochs):
        value, grad = cross_entropy_objective(family, params, features.points, labels, features.weights)
        if not np.isfinite(value):
            trace = TrainTrace(tuple(losses), best_params, len(losses))
            raise TrainingDivergedError(f"loss became {value} at epoch {len(losses)}", trace)
        losses.append(value)
        if value < best_loss - _PLATEAU_TOL:
            best_params, best_loss, stall = params.copy(), value, 0
        else:
            stall += 1
            if stall >= cfg.plateau_patience:
                break
        params = params - cfg.learning_rate * grad
    trace = TrainTrace(tuple(losses), best_params, len(losses))
    predicted = family.predict(best_params, eval_features.points)
    accuracy = float(np.sum(eval_features.weights * (predicted == eval_labels)))
    weights, bias = family.unpack(best_params)
    return accuracy, AffineModel(weights, bias), trace


@dataclass(frozen=True)
class SyntheticDomain:
    """A labeled feature cloud split into a training and a held-out half."""

    name: str
    train: EmpiricalDistribution
    train_labels: np.ndarray
    held_out: EmpiricalDistribution
    held_out_labels: np.ndarray
    classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_labels", _freeze_labels(self.train_labels))
        object.__setattr__(self, "held_out_labels", _freeze_labels(self.held_out_labels))
        if self.train_labels.shape != (self.train.size,):
            raise ValueError("train_labels must match the training cloud size")
        if self.held_out_labels.shape != (self.held_out.size,):
            raise ValueError("held_out_labels must match the held-out cloud size")


def make_synthetic_domains(
    seed: int,
    n_domains: int = 3,
    classes: int = 3,
    samples_per_domain: int = 400,
    rotation: float = 0.15,
    shift: float = 1.4,
    spread: float = 0.0,
) -> list[SyntheticDomain]:
    """Generate 2-D class-blob domains with increasing drift from the first.

    Domain k rotates the class-mean ring by k * rotation radians, translates
    it by shift * k(k+2)/3 along the first axis, and widens the class blobs
    by a factor 1 + k * spread.  The quadratic offsets make every pairwise
    domain distance distinct, so transfer quality degrades along a clean
    ladder.  Each domain is split in half for training and evaluation.
    """
    if n_domains < 2:
        raise ValueError(f"need at least 2 domains, got {n_domains}")
    if samples_per_domain < 4 * classes:
        raise ValueError(f"samples_per_domain too small for {classes} classes")
    angles = 2.0 * np.pi * np.arange(classes) / classes
    base_means = 1.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    domains = []
    for k in range(n_domains):
        rng = np.random.default_rng(seed + 7919 * k)
        theta = k * rotation
        frame = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        offset = shift * k * (k + 2) / 3.0
        means = base_means @ frame.T + offset * np.array([1.0, 0.0])
        sigma = 0.45 * (1.0 + k * spread)
        labels = np.arange(samples_per_domain) % classes
        points = means[labels] + rng.normal(scale=sigma, size=(samples_per_domain, 2))
        perm = rng.permutation(samples_per_domain)
        points, labels = points[perm], labels[perm]
        half = samples_per_domain // 2
        domains.append(
            SyntheticDomain(
                name=f"domain_{chr(ord('a') + k)}",
                train=EmpiricalDistribution.from_points(points[:half]),
                train_labels=labels[:half],
                held_out=EmpiricalDistribution.from_points(points[half:]),
                held_out_labels=labels[half:],
                classes=classes,
            )
        )
    return domains


@dataclass(frozen=True)
class PairResult:
    """One row of the transfer table for an ordered source -> target pair."""

    pair: str
    accuracy: float
    input_risk: float
    output_risk: float
    combined: float


def evaluate_risk_accuracy_pairs(
    domains: list[SyntheticDomain],
    combiner,
    risk_cfg: TrainConfig = TrainConfig(learning_rate=0.5),
    train_cfg: TrainConfig = TrainConfig(epochs=100),
    input_rescale: float = 1.0,
) -> list[PairResult]:
    """Transfer table over all ordered domain pairs.

    For each pair the source head is trained on the source domain, target
    points are re-expressed as source logits, and three quantities come out:
    the input risk W_1 between the raw feature clouds (optionally rescaled),
    the trained-and-budgeted output risk against the target label law, and
    the fine-tuned head's held-out accuracy.  Per-pair seeds are derived as
    seed + pair index so pairs are independent but reproducible.
    """
    if len(domains) < 2:
        raise ValueError(f"need at least 2 domains, got {len(domains)}")
    if input_rescale <= 0.0:
        raise ValueError(f"input_rescale must be positive, got {input_rescale}")
    classes = domains[0].classes
    if any(d.classes != classes for d in domains):
        raise ValueError("all domains must share the class count")
    from .transfer_core import combine  # local import to avoid cycle at module load

    results = []
    pair_index = 0
    for source in domains:
        for target in domains:
            if source is target:
                continue
            pair_risk_cfg = replace(risk_cfg, seed=risk_cfg.seed + pair_index)
            pair_train_cfg = replace(train_cfg, seed=train_cfg.seed + pair_index)
            _, source_model, _ = train_classifier(
                SoftmaxHeadFamily(source.train.dim, classes),
                source.train,
                source.train_labels,
                source.held_out,
                source.held_out_labels,
                pair_train_cfg,
            )

            # The transferred representation is the frozen source head's
            # class probabilities.  Saturation far from the source decision
            # boundaries loses information, so domain shift actually hurts;
            # raw logits would let the fine-tuned head undo any shift.
            def represent(points: np.ndarray) -> np.ndarray:
                return _softmax(source_model(points))

            e_in = input_rescale * wasserstein(
                target.train, source.train, OtConfig(p=1.0)
            )[0]
            proxy = EmpiricalDistribution.from_points(
                target.train_labels.astype(float)[:, None]
            )
            e_out, _, _ = minimize_output_risk(
                AffineMapFamily(classes, 1),
                represent,
                target.train,
                proxy,
                p=1.0,
                cfg=pair_risk_cfg,
            )
            accuracy, _, _ = train_classifier(
                SoftmaxHeadFamily(classes, classes),
                EmpiricalDistribution.from_points(represent(target.train.points)),
                target.train_labels,
                EmpiricalDistribution.from_points(represent(target.held_out.points)),
                target.held_out_labels,
                pair_train_cfg,
            )
            results.append(
                PairResult(
                    pair=f"{source.name}->{target.name}",
                    accuracy=accuracy,
                    input_risk=e_in,
                    output_risk=e_out,
                    combined=combine(combiner, e_in, e_out),
                )
            )
            pair_index += 1
    return results
