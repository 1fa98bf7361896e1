"""Experiment orchestration: config parsing, dataset ingestion, reports.

A run is driven by a strict JSON config (unknown keys are rejected so typos
fail loudly), produces a JSON report plus a flat CSV pair table, and is
deterministic given the seed: the pair table is byte-identical across runs.
Three modes share the report schema.  `empirical` ingests labeled feature
clouds and runs the transfer protocol over every ordered dataset pair (or
just combines externally supplied risk rows).  `gaussian_lab` draws random
task pairs and reports their closed-form risks, regret and residual.
`synthetic_office` generates drifting class-blob domains and reports the
accuracy/risk table with rank correlations.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .distributions import EmpiricalDistribution
from .finetune import (
    SyntheticDomain,
    TrainConfig,
    evaluate_risk_accuracy_pairs,
    make_synthetic_domains,
)
from .gaussian_lab import (
    GaussianTask,
    basic_case_risks,
    random_basic_pair,
    random_task,
    risk_regret_residual,
)
from .optimal_transport import OtConfig
from .transfer_core import (
    IdentityMap,
    LinearCombiner,
    PolynomialCombiner,
    RiskCombiner,
    combine,
    input_risk,
)

__all__ = [
    "PipelineConfig",
    "ingest_dataset",
    "run",
    "fit_combiner",
]

_MODES = ("empirical", "gaussian_lab", "synthetic_office")
_FIT_NOISE_TOL = 1e-12
_CSV_COLUMNS = ("source", "target", "accuracy", "input_risk", "output_risk", "transfer_risk")


def _reject_unknown(mapping: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        full = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ValueError(f"unknown config key {full!r}")


def _build_combiner(spec: dict) -> RiskCombiner:
    _reject_unknown(spec, {"form", "weight", "input_coeff", "output_coeff", "power"}, "combiner")
    form = spec.get("form")
    if form == "linear":
        _reject_unknown(spec, {"form", "weight"}, "combiner")
        return LinearCombiner(float(spec.get("weight", 1.0)))
    if form == "polynomial2":
        return PolynomialCombiner(
            float(spec.get("input_coeff", 1.0)),
            float(spec.get("output_coeff", 1.0)),
            float(spec.get("power", 2.0)),
        )
    raise ValueError(f"combiner.form must be 'linear' or 'polynomial2', got {form!r}")


def _build_ot(spec: dict) -> tuple[str, OtConfig]:
    allowed = {"kind", "p", "method", "sinkhorn_epsilon", "sinkhorn_max_iter", "lp_max_support"}
    _reject_unknown(spec, allowed, "divergence")
    kind = spec.get("kind", "wasserstein")
    if kind not in ("wasserstein", "kl"):
        raise ValueError(f"divergence.kind must be 'wasserstein' or 'kl', got {kind!r}")
    cfg = OtConfig(
        p=float(spec.get("p", 2.0)),
        method=spec.get("method", "auto"),
        sinkhorn_epsilon=spec.get("sinkhorn_epsilon"),
        sinkhorn_max_iter=int(spec.get("sinkhorn_max_iter", 2000)),
        lp_max_support=int(spec.get("lp_max_support", 400)),
    )
    return kind, cfg


def _build_train(spec: dict, seed: int, path: str, defaults: TrainConfig) -> TrainConfig:
    _reject_unknown(spec, {"epochs", "learning_rate", "plateau_patience"}, path)
    return TrainConfig(
        epochs=int(spec.get("epochs", defaults.epochs)),
        learning_rate=float(spec.get("learning_rate", defaults.learning_rate)),
        seed=seed,
        plateau_patience=int(spec.get("plateau_patience", defaults.plateau_patience)),
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Parsed and validated run configuration."""

    mode: str
    seed: int
    out_dir: Path
    combiner: RiskCombiner
    divergence_kind: str
    ot: OtConfig
    train: TrainConfig
    risk_train: TrainConfig
    input_risk_rescale: float
    mode_params: dict
    echo: dict

    @staticmethod
    def from_dict(raw: dict) -> "PipelineConfig":
        allowed = {
            "mode", "seed", "out_dir", "combiner", "divergence", "train", "risk_train",
            "input_risk_rescale", "empirical", "gaussian_lab", "synthetic_office",
        }
        _reject_unknown(raw, allowed, "")
        mode = raw.get("mode")
        if mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
        seed = int(raw.get("seed", 0))
        out_dir = Path(raw.get("out_dir", "trk_run"))
        combiner = _build_combiner(raw.get("combiner", {"form": "polynomial2"}))
        divergence_kind, ot = _build_ot(raw.get("divergence", {}))
        train = _build_train(raw.get("train", {}), seed, "train", TrainConfig(epochs=100))
        risk_train = _build_train(
            raw.get("risk_train", {}), seed, "risk_train", TrainConfig(learning_rate=0.5)
        )
        rescale = float(raw.get("input_risk_rescale", 1.0))
        if rescale <= 0.0:
            raise ValueError(f"input_risk_rescale must be positive, got {rescale}")
        mode_params = _validate_mode_params(mode, raw.get(mode, {}))
        echo = _normalized_echo(
            mode, seed, out_dir, raw, combiner, divergence_kind, ot, train, risk_train, rescale,
            mode_params,
        )
        return PipelineConfig(
            mode=mode,
            seed=seed,
            out_dir=out_dir,
            combiner=combiner,
            divergence_kind=divergence_kind,
            ot=ot,
            train=train,
            risk_train=risk_train,
            input_risk_rescale=rescale,
            mode_params=mode_params,
            echo=echo,
        )

    @staticmethod
    def from_json(path: str | Path, overrides: dict | None = None) -> "PipelineConfig":
        with open(path) as handle:
            raw = json.load(handle)
        if not isinstance(raw, dict):
            raise ValueError("config root must be a JSON object")
        raw.update(overrides or {})
        return PipelineConfig.from_dict(raw)


def _validate_mode_params(mode: str, params: dict) -> dict:
    if mode == "empirical":
        _reject_unknown(params, {"datasets", "format", "label_column"}, "empirical")
        return {
            "datasets": list(params.get("datasets", [])),
            "format": params.get("format"),
            "label_column": params.get("label_column", "label"),
        }
    if mode == "gaussian_lab":
        _reject_unknown(
            params, {"dim", "n_pairs", "drift", "identical_tasks"}, "gaussian_lab"
        )
        out = {
            "dim": int(params.get("dim", 2)),
            "n_pairs": int(params.get("n_pairs", 6)),
            "drift": float(params.get("drift", 0.25)),
            "identical_tasks": bool(params.get("identical_tasks", False)),
        }
        if out["dim"] < 1 or out["n_pairs"] < 1:
            raise ValueError("gaussian_lab.dim and n_pairs must be >= 1")
        return out
    _reject_unknown(
        params,
        {"n_domains", "classes", "samples_per_domain", "rotation", "shift", "spread"},
        "synthetic_office",
    )
    return {
        "n_domains": int(params.get("n_domains", 3)),
        "classes": int(params.get("classes", 3)),
        "samples_per_domain": int(params.get("samples_per_domain", 400)),
        "rotation": float(params.get("rotation", 0.15)),
        "shift": float(params.get("shift", 1.4)),
        "spread": float(params.get("spread", 0.0)),
    }


def _combiner_echo(combiner: RiskCombiner) -> dict:
    if isinstance(combiner, LinearCombiner):
        return {"form": "linear", "weight": combiner.weight}
    return {
        "form": "polynomial2",
        "input_coeff": combiner.input_coeff,
        "output_coeff": combiner.output_coeff,
        "power": combiner.power,
    }


def _normalized_echo(
    mode, seed, out_dir, raw, combiner, divergence_kind, ot, train, risk_train, rescale,
    mode_params,
) -> dict:
    return {
        "mode": mode,
        "seed": seed,
        "out_dir": str(out_dir),
        "combiner": _combiner_echo(combiner),
        "divergence": {
            "kind": divergence_kind,
            "p": ot.p,
            "method": ot.method,
            "sinkhorn_epsilon": ot.sinkhorn_epsilon,
            "sinkhorn_max_iter": ot.sinkhorn_max_iter,
            "lp_max_support": ot.lp_max_support,
        },
        "train": {
            "epochs": train.epochs,
            "learning_rate": train.learning_rate,
            "plateau_patience": train.plateau_patience,
        },
        "risk_train": {
            "epochs": risk_train.epochs,
            "learning_rate": risk_train.learning_rate,
            "plateau_patience": risk_train.plateau_patience,
        },
        "input_risk_rescale": rescale,
        mode: mode_params if mode != "empirical" else dict(mode_params),
    }


def ingest_dataset(
    path: str | Path, format: str | None = None, label_column: str = "label"
) -> tuple[EmpiricalDistribution, np.ndarray]:
    """Load a labeled feature cloud from CSV (header row) or JSON.

    CSV files take uniform weights; the designated label column is split off
    and every other column is a feature.  JSON files are objects with
    "features" (list of rows), "labels", and optional per-row "weights",
    which may be unnormalized counts and are rescaled to sum to 1.
    Malformed cells are reported with their file line number.

    Returns:
        (distribution, labels) with one label per row, as floats.
    """
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".").lower()
    if format == "csv":
        return _ingest_csv(path, label_column)
    if format == "json":
        return _ingest_json(path)
    raise ValueError(f"format must be 'csv' or 'json', got {format!r}")


def _ingest_csv(path: Path, label_column: str) -> tuple[EmpiricalDistribution, np.ndarray]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [name.strip() for name in header]
        if label_column not in header:
            raise ValueError(f"{path}: no {label_column!r} column in header {header}")
        label_idx = header.index(label_column)
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {line_no} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise ValueError(f"{path}: line {line_no}, column {name!r}: missing value")
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: line {line_no}, column {name!r}: could not parse {cell!r}"
                    ) from None
            labels.append(parsed.pop(label_idx))
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return EmpiricalDistribution.from_points(np.asarray(rows)), np.asarray(labels)


def _ingest_json(path: Path) -> tuple[EmpiricalDistribution, np.ndarray]:
    with open(path) as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: invalid JSON at line {err.lineno}") from None
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: top level must be an object")
    _reject_unknown(payload, {"features", "labels", "weights"}, str(path))
    features = payload.get("features")
    labels = payload.get("labels")
    if not features or labels is None:
        raise ValueError(f"{path}: needs non-empty 'features' and 'labels'")
    width = len(features[0])
    for i, row in enumerate(features):
        if len(row) != width:
            raise ValueError(f"{path}: features row {i} has {len(row)} values, expected {width}")
        if not all(isinstance(x, (int, float)) for x in row):
            raise ValueError(f"{path}: features row {i} has a non-numeric value")
    if len(labels) != len(features):
        raise ValueError(f"{path}: {len(labels)} labels for {len(features)} feature rows")
    weights = payload.get("weights")
    if weights is None:
        dist = EmpiricalDistribution.from_points(np.asarray(features, dtype=float))
    else:
        if len(weights) != len(features):
            raise ValueError(f"{path}: {len(weights)} weights for {len(features)} feature rows")
        w = np.asarray(weights, dtype=float)
        if not np.all(np.isfinite(w)) or w.min() < 0.0 or w.sum() <= 0.0:
            raise ValueError(f"{path}: weights must be finite, nonnegative, not all zero")
        dist = EmpiricalDistribution(np.asarray(features, dtype=float), w / w.sum())
    return dist, np.asarray(labels, dtype=float)


def _dataset_to_domain(
    path: str, cfg: PipelineConfig, classes_hint: list[int]
) -> SyntheticDomain:
    dist, raw_labels = ingest_dataset(
        path, cfg.mode_params["format"], cfg.mode_params["label_column"]
    )
    labels = np.rint(raw_labels).astype(int)
    if not np.allclose(raw_labels, labels) or labels.min() < 0:
        raise ValueError(f"{path}: labels must be nonnegative integers for transfer runs")
    if dist.size < 4:
        raise ValueError(f"{path}: need at least 4 rows to split")
    classes_hint.append(int(labels.max()) + 1)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(dist.size)
    half = dist.size // 2
    first, second = perm[:half], perm[half:]

    def part(idx):
        weights = dist.weights[idx]
        return EmpiricalDistribution(dist.points[idx], weights / weights.sum())

    classes = max(classes_hint)
    return SyntheticDomain(
        name=Path(path).stem,
        train=part(first),
        train_labels=labels[first],
        held_out=part(second),
        held_out_labels=labels[second],
        classes=classes,
    )


def _pair_rows_from_domains(domains: list[SyntheticDomain], cfg: PipelineConfig) -> list[dict]:
    results = evaluate_risk_accuracy_pairs(
        domains, cfg.combiner, cfg.risk_train, cfg.train, cfg.input_risk_rescale
    )
    rows = []
    for res in results:
        source, target = res.pair.split("->")
        rows.append(
            {
                "source": source,
                "target": target,
                "accuracy": res.accuracy,
                "input_risk": res.input_risk,
                "output_risk": res.output_risk,
                "transfer_risk": res.combined,
            }
        )
    return rows


def _run_empirical(cfg: PipelineConfig, override_risks: str | Path | None) -> list[dict]:
    if override_risks is not None:
        return _rows_from_override(override_risks, cfg)
    paths = cfg.mode_params["datasets"]
    if len(paths) < 2:
        raise ValueError("empirical mode needs at least 2 datasets (or an override table)")
    classes_hint: list[int] = []
    domains = [_dataset_to_domain(p, cfg, classes_hint) for p in paths]
    classes = max(classes_hint)
    if classes < 2:
        raise ValueError("datasets contain fewer than 2 classes")
    domains = [
        SyntheticDomain(
            d.name, d.train, d.train_labels, d.held_out, d.held_out_labels, classes
        )
        for d in domains
    ]
    return _pair_rows_from_domains(domains, cfg)


def _rows_from_override(path: str | Path, cfg: PipelineConfig) -> list[dict]:
    """Combine externally supplied risk rows; no training happens here."""
    rows = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        needed = {"source", "target", "input_risk", "output_risk"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise ValueError(f"{path}: override table needs columns {sorted(needed)}")
        for line_no, record in enumerate(reader, start=2):
            try:
                e_in = cfg.input_risk_rescale * float(record["input_risk"])
                e_out = float(record["output_risk"])
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: non-numeric risk") from None
            accuracy = record.get("accuracy")
            rows.append(
                {
                    "source": record["source"],
                    "target": record["target"],
                    "accuracy": float(accuracy) if accuracy not in (None, "") else None,
                    "input_risk": e_in,
                    "output_risk": e_out,
                    "transfer_risk": combine(cfg.combiner, e_in, e_out),
                }
            )
    if not rows:
        raise ValueError(f"{path}: override table has no rows")
    return rows


def _run_gaussian_lab(cfg: PipelineConfig) -> list[dict]:
    params = cfg.mode_params
    rows = []
    for i in range(params["n_pairs"]):
        if params["identical_tasks"]:
            source = random_task(params["dim"], 1, seed=cfg.seed + i)
            target = GaussianTask(source.joint, role="target")
        else:
            source, target = random_basic_pair(
                params["dim"], seed=cfg.seed + i, drift=params["drift"]
            )
        kl, w = basic_case_risks(source, target)
        risk, regret_value, residual = risk_regret_residual(source, target)
        e_in = cfg.input_risk_rescale * input_risk(
            IdentityMap(params["dim"]),
            target.joint.x_marginal(),
            source.joint.x_marginal(),
            metric=cfg.divergence_kind,
            cfg=cfg.ot,
        )
        e_out = kl.total if cfg.divergence_kind == "kl" else w.total
        rows.append(
            {
                "source": f"task_{i}_source",
                "target": f"task_{i}_target",
                "accuracy": None,
                "input_risk": e_in,
                "output_risk": e_out,
                "transfer_risk": combine(cfg.combiner, e_in, e_out),
                "kl_variance": kl.variance_term,
                "kl_bias": kl.bias_term,
                "w_variance": w.variance_term,
                "w_bias": w.bias_term,
                "regret": regret_value,
                "residual": residual,
                "risk_w": risk,
            }
        )
    return rows


def _run_synthetic_office(cfg: PipelineConfig) -> list[dict]:
    domains = make_synthetic_domains(cfg.seed, **cfg.mode_params)
    return _pair_rows_from_domains(domains, cfg)


def _correlations(rows: list[dict]) -> dict | None:
    scored = [(r["accuracy"], r["transfer_risk"]) for r in rows if r["accuracy"] is not None]
    if len(scored) < 3:
        return None
    accuracy = np.array([s[0] for s in scored])
    risk = np.array([s[1] for s in scored])
    if np.all(accuracy == accuracy[0]) or np.all(risk == risk[0]):
        return None
    return {
        "spearman": float(stats.spearmanr(accuracy, risk).statistic),
        "pearson": float(stats.pearsonr(accuracy, risk).statistic),
    }


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_outputs(report: dict, rows: list[dict], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(_CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in _CSV_COLUMNS))
    (out_dir / "pairs.csv").write_text("\n".join(lines) + "\n")
    with open(out_dir / "report.json", "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")


def run(cfg: PipelineConfig, override_risks: str | Path | None = None) -> dict:
    """Execute the configured experiment and write report.json and pairs.csv.

    Returns the report document.  The pair table is a deterministic function
    of the config and seed; wall-clock timings live only in the report.
    """
    timings: dict[str, float] = {}
    start = time.perf_counter()
    if cfg.mode == "empirical":
        rows = _run_empirical(cfg, override_risks)
    elif cfg.mode == "gaussian_lab":
        rows = _run_gaussian_lab(cfg)
    else:
        rows = _run_synthetic_office(cfg)
    timings["pairs"] = time.perf_counter() - start

    report = {
        "version": __version__,
        "config": cfg.echo,
        "rows": rows,
        "correlations": _correlations(rows),
        "plot_data": {
            "transfer_risk": [r["transfer_risk"] for r in rows],
            "accuracy": [r["accuracy"] for r in rows],
        },
        "timings": timings,
    }
    _write_outputs(report, rows, cfg.out_dir)
    return report


def fit_combiner(
    rows: list[tuple[float, float, float]],
    form: str,
    grid_size: int = 50,
    grid_max: float = 2.0,
) -> tuple[RiskCombiner, float]:
    """Pick combiner coefficients maximizing |Pearson(combined, accuracy)|.

    Searches a deterministic coefficient grid (linear: grid_size^2 weights on
    [0, grid_max]; polynomial2: grid_size x grid_size over [0, grid_max]^2),
    skipping degenerate combos whose combined risk is constant across rows.
    Ties resolve to the first grid point scanned.

    Returns:
        (combiner, achieved |correlation|).
    """
    if len(rows) < 3:
        raise ValueError(f"need at least 3 rows, got {len(rows)}")
    e_in = np.array([r[0] for r in rows], dtype=float)
    e_out = np.array([r[1] for r in rows], dtype=float)
    accuracy = np.array([r[2] for r in rows], dtype=float)
    if np.all(accuracy == accuracy[0]):
        raise ValueError("accuracy values are all equal; correlation is undefined")
    if grid_size < 2 or grid_max <= 0.0:
        raise ValueError("grid_size must be >= 2 and grid_max positive")

    if form == "linear":
        candidates = [LinearCombiner(w) for w in np.linspace(0.0, grid_max, grid_size**2)]
    elif form == "polynomial2":
        axis = np.linspace(0.0, grid_max, grid_size)
        candidates = [
            PolynomialCombiner(ci, co, 2.0) for ci in axis for co in axis
        ]
    else:
        raise ValueError(f"form must be 'linear' or 'polynomial2', got {form!r}")

    best: tuple[RiskCombiner, float] | None = None
    accuracy_centered = accuracy - accuracy.mean()
    accuracy_norm = float(np.sqrt(np.sum(accuracy_centered**2)))
    for candidate in candidates:
        combined = np.array([candidate.combine(i, o) for i, o in zip(e_in, e_out)])
        centered = combined - combined.mean()
        norm = float(np.sqrt(np.sum(centered**2)))
        # A constant combined vector centers to rounding noise, not exact
        # zeros, so constancy is judged relative to the values' magnitude;
        # the same scale separates real correlation gains from noise ties.
        scale = max(1.0, float(np.abs(combined).max()))
        if norm <= _FIT_NOISE_TOL * scale:
            continue
        corr = abs(float(np.sum(centered * accuracy_centered)) / (norm * accuracy_norm))
        if best is None or corr > best[1] + _FIT_NOISE_TOL:
            best = (candidate, corr)
    if best is None:
        raise ValueError("every grid combiner was constant on these rows")
    return best
