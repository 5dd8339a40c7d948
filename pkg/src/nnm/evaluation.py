"""MAE/RMSE metrics, cross-validation harness, and error curves."""

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import split_folds
from .solver import fit

log = logging.getLogger(__name__)


def mae(predictions, truths):
    """Mean absolute error, in stars."""
    p, t = _paired(predictions, truths)
    return float(np.abs(p - t).mean())


def rmse(predictions, truths):
    """Root mean squared error, in stars."""
    p, t = _paired(predictions, truths)
    return float(np.sqrt(((p - t) ** 2).mean()))


def _paired(predictions, truths):
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("need equal-length nonempty prediction/truth lists")
    return p, t


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    mae: float
    rmse: float
    n_test: int
    n_fallback: int


@dataclass
class MetricReport:
    """Cross-validation summary; everything needed to reproduce it."""

    folds: list
    mae_mean: float
    mae_std: float
    rmse_mean: float
    rmse_std: float
    fallback_count: int
    config: dict = field(default_factory=dict)

    @classmethod
    def from_folds(cls, folds, config):
        maes = np.array([f.mae for f in folds])
        rmses = np.array([f.rmse for f in folds])
        return cls(
            folds=folds,
            mae_mean=float(maes.mean()), mae_std=float(maes.std()),
            rmse_mean=float(rmses.mean()), rmse_std=float(rmses.std()),
            fallback_count=sum(f.n_fallback for f in folds),
            config=dict(config),
        )

    def to_json_str(self):
        doc = {
            "folds": [asdict(f) for f in self.folds],
            "mae": {"mean": self.mae_mean, "std": self.mae_std},
            "rmse": {"mean": self.rmse_mean, "std": self.rmse_std},
            "fallback_count": self.fallback_count,
            "config": self.config,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def to_csv_str(self):
        lines = ["fold,mae,rmse,n_test,n_fallback"]
        for f in self.folds:
            lines.append(f"{f.fold},{f.mae!r},{f.rmse!r},{f.n_test},{f.n_fallback}")
        lines.append(f"mean,{self.mae_mean!r},{self.rmse_mean!r},,")
        lines.append(f"std,{self.mae_std!r},{self.rmse_std!r},,")
        return "\n".join(lines) + "\n"


def predict_stars(model, test_triples, fallback):
    """Star predictions for (user, item, stars) triples.

    Pairs whose user or item is unknown to the model receive the
    ``fallback`` rating (typically the training-set mean); predictions
    are continuous, never rounded.  Returns (predictions, truths,
    n_fallback).
    """
    n = len(test_triples)
    u_rows = np.array([model.user_row.get(int(u), -1) for u, _, _ in test_triples])
    i_rows = np.array([model.item_row.get(int(i), -1) for _, i, _ in test_triples])
    truths = np.array([float(r) for _, _, r in test_triples])
    known = (u_rows >= 0) & (i_rows >= 0)

    preds = np.full(n, float(fallback))
    if known.any():
        p = model.user_matrix[u_rows[known]]
        e = model.item_matrix[i_rows[known]]
        z = model.num_levels
        if model.mode == "binary":
            scores = (p * e).sum(axis=1)
            preds[known] = np.clip(z * scores, 1.0, float(z))
        else:
            dist = np.einsum("md,mdz->mz", p, e)
            preds[known] = np.argmax(dist, axis=1) + 1.0
    return preds, truths, int(n - known.sum())


def cross_validate(dataset, config, n_folds=5, rng_seed=0):
    """K-fold evaluation: fit on each training fold, score the held-out pairs."""
    folds = split_folds(dataset, n_folds=n_folds, rng_seed=rng_seed)
    fold_metrics = []
    for fold in folds:
        model, _ = fit(fold.train, config)
        fallback = fold.train.global_mean()
        preds, truths, n_fallback = predict_stars(model, fold.test, fallback)
        fold_metrics.append(FoldMetrics(
            fold=fold.fold, mae=mae(preds, truths), rmse=rmse(preds, truths),
            n_test=len(fold.test), n_fallback=n_fallback,
        ))
        log.info("fold %d: MAE %.4f RMSE %.4f (%d fallbacks)",
                 fold.fold, fold_metrics[-1].mae, fold_metrics[-1].rmse, n_fallback)

    echo = asdict(config)
    echo.update({"n_folds": n_folds, "split_seed": rng_seed, "z": dataset.z})
    return MetricReport.from_folds(fold_metrics, echo)


def curve_vs_dimension(dataset, dims, base_config, n_folds=5, rng_seed=0):
    """Cross-validated error per model dimension; rows (D, MAE, RMSE)."""
    rows = []
    for d in dims:
        report = cross_validate(dataset, replace(base_config, dimension=d),
                                n_folds=n_folds, rng_seed=rng_seed)
        rows.append((int(d), report.mae_mean, report.rmse_mean))
        log.info("D=%d: MAE %.4f RMSE %.4f", d, report.mae_mean, report.rmse_mean)
    return rows


def curve_vs_iteration(dataset, config, n_folds=5, rng_seed=0):
    """Held-out MAE after each outer iteration of a single-fold fit.

    Rows are (iteration, train objective, test MAE).  The train
    objective is the phase objective at the end of the iteration, i.e.
    on the augmented index set while zero-fill preprocessing is active.
    """
    fold = split_folds(dataset, n_folds=n_folds, rng_seed=rng_seed)[0]
    fallback = fold.train.global_mean()
    test_maes = []

    def track(iteration, model):
        preds, truths, _ = predict_stars(model, fold.test, fallback)
        test_maes.append(mae(preds, truths))

    _, report = fit(fold.train, config, iteration_callback=track)
    user_steps = report.iteration_records("user")
    return [(r.iteration, r.phase_objective, test_maes[r.iteration - 1])
            for r in user_steps]


def write_curve_csv(rows, header, path):
    lines = [header]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
