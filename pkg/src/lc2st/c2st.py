"""Classifier two-sample test statistics, null distributions, and diagnostics.

Statistics
----------
* :func:`t_acc`  -- two-class accuracy with ties predicted as class 0;
* :func:`t_mse`  -- sum of the two per-class mean squared deviations of the
  predicted class-1 probability from one half (range [0, 1/2]); the
  ``bounded`` variant averages the terms instead (range [0, 1/4]);
* :func:`t_mse0` -- single-class MSE statistic over estimator draws only,
  the workhorse of the local test (range [0, 1/4]);
* :func:`t_acc0` -- single-class accuracy, provided only to reproduce its
  documented failure mode (it is necessary but not sufficient).

Procedures
----------
The local test trains one classifier on joint-data pairs (theta, x) labeled by
provenance (estimator vs simulator), with the null distribution from
label-permutation refits.  The normalizing-flow variant instead classifies
latent pairs (z, x) and its null ensemble needs no estimator at all, so it can
be precomputed once and reused across estimators and observations.

p-values use the strict-exceedance count (number of null statistics above
the observed one, over n_null); ``conservative=True`` switches to the
finite-sample correction (1 + ties-or-above) / (n_null + 1),
which can never return zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ConfigurationError,
    LabeledPairDataset,
    JointDataset,
    NumericError,
    RngStream,
)

__all__ = [
    "t_acc",
    "t_mse",
    "t_mse0",
    "t_acc0",
    "p_value_from_null",
    "TestResult",
    "NullEnsemble",
    "fit_null_ensemble",
    "lc2st_training_set",
    "lc2st_train",
    "lc2st_evaluate",
    "lc2st_nf_train",
    "lc2st_nf_null",
    "lc2st_nf_evaluate",
    "c2st_permutation_test",
    "PPPlotData",
    "pp_plot",
    "default_levels",
    "MarginalHeatmap",
    "probability_heatmap",
    "heatmap_rows",
    "append_conditioning",
]

_EPS = 1e-12

# Upper statistic bound by method tag; accuracy-type methods are bounded by 1.
_STAT_UPPER = {
    "lc2st": 0.25,
    "lc2st-nf": 0.25,
    "oracle-c2st-mse": 0.5,
    "oracle-c2st-acc": 1.0,
}


def append_conditioning(points: np.ndarray, x_o: np.ndarray | None) -> np.ndarray:
    """Feature rows for classifier queries: points, or (points ++ x_o)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x_o is None:
        return points
    x_o = np.asarray(x_o, dtype=np.float64).ravel()
    return np.hstack([points, np.broadcast_to(x_o, (points.shape[0], x_o.shape[0]))])


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def _require_balanced(data: LabeledPairDataset) -> None:
    if data.n_class0 != data.n_class1:
        raise ConfigurationError(
            f"statistic assumes equally many samples per class, got "
            f"{data.n_class0} vs {data.n_class1}"
        )
    if data.n == 0:
        raise ConfigurationError("validation set is empty")


def t_acc(clf, val: LabeledPairDataset) -> float:
    """Fraction of correct hard predictions at threshold 1/2 (ties -> class 0)."""
    _require_balanced(val)
    d = np.asarray(clf.predict_proba(val.ws))
    predicted = (d > 0.5).astype(np.int64)
    return float(np.mean(predicted == val.labels))


def t_mse(clf, val: LabeledPairDataset, bounded: bool = False) -> float:
    """Sum over both classes of the per-class mean of (d - 1/2)^2.

    The literal normalization sums the two per-class means (range [0, 1/2]);
    ``bounded=True`` halves it so the statistic shares the [0, 1/4] range of
    the single-class version.
    """
    _require_balanced(val)
    d = np.asarray(clf.predict_proba(val.ws))
    sq = (d - 0.5) ** 2
    total = float(np.mean(sq[val.labels == 0]) + np.mean(sq[val.labels == 1]))
    return total / 2.0 if bounded else total


def t_mse0(clf, points: np.ndarray, x_o: np.ndarray | None = None) -> float:
    """Single-class MSE statistic: mean of (d - 1/2)^2 over estimator draws."""
    ws = append_conditioning(points, x_o)
    if len(ws) == 0:
        raise ConfigurationError("need at least one evaluation point")
    d = np.asarray(clf.predict_proba(ws))
    return float(np.mean((d - 0.5) ** 2))


def t_acc0(clf, points: np.ndarray, x_o: np.ndarray | None = None) -> float:
    """Fraction of estimator draws predicted as class 0 (ties -> class 0).

    Kept only for the documented failure-mode comparison; unlike t_mse0 it is
    not a sufficient statistic for local consistency.
    """
    ws = append_conditioning(points, x_o)
    if len(ws) == 0:
        raise ConfigurationError("need at least one evaluation point")
    d = np.asarray(clf.predict_proba(ws))
    return float(np.mean(d <= 0.5))


def p_value_from_null(statistic: float, null_statistics: np.ndarray, conservative: bool = False) -> float:
    """Permutation p-value of ``statistic`` against a null sample."""
    nulls = np.asarray(null_statistics, dtype=np.float64)
    if nulls.size == 0:
        raise ConfigurationError("p-value needs a nonempty null ensemble")
    if conservative:
        return float((1 + np.sum(nulls >= statistic)) / (nulls.size + 1))
    return float(np.sum(nulls > statistic) / nulls.size)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    """Outcome of one local test at one observation."""

    __test__ = False  # statistical test result, not a pytest case

    method: str
    statistic: float
    null_statistics: np.ndarray | None
    p_value: float | None
    x_o: np.ndarray
    n_v: int
    n_h: int
    seeds: dict
    p_value_kind: str | None = "strict"

    def __post_init__(self) -> None:
        upper = _STAT_UPPER.get(self.method)
        if upper is not None and not (-_EPS <= self.statistic <= upper + _EPS):
            raise ConfigurationError(
                f"statistic {self.statistic} outside [0, {upper}] for method {self.method!r}"
            )
        if self.null_statistics is not None:
            nulls = np.asarray(self.null_statistics, dtype=np.float64)
            object.__setattr__(self, "null_statistics", nulls)
            if self.p_value_kind == "strict":
                expected = p_value_from_null(self.statistic, nulls)
                if self.p_value is None or abs(self.p_value - expected) > _EPS:
                    raise ConfigurationError("p_value does not match the strict exceedance count")
        if self.p_value is not None and not (0.0 <= self.p_value <= 1.0):
            raise ConfigurationError("p_value must lie in [0, 1]")

    @staticmethod
    def from_stats(
        method: str,
        statistic: float,
        null_statistics: np.ndarray | None,
        x_o: np.ndarray,
        n_v: int,
        seeds: dict,
        conservative: bool = False,
    ) -> "TestResult":
        nulls = None if null_statistics is None else np.asarray(null_statistics, dtype=np.float64)
        if nulls is None or nulls.size == 0:
            return TestResult(method, statistic, None, None, np.asarray(x_o), n_v, 0, seeds, None)
        kind = "conservative" if conservative else "strict"
        p = p_value_from_null(statistic, nulls, conservative=conservative)
        return TestResult(method, statistic, nulls, p, np.asarray(x_o), n_v, int(nulls.size), seeds, kind)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "x_o": np.asarray(self.x_o).ravel().tolist(),
            "statistic": self.statistic,
            "p_value": self.p_value,
            "null_statistics": [] if self.null_statistics is None else self.null_statistics.tolist(),
            "n_v": self.n_v,
            "n_h": self.n_h,
            "seeds": self.seeds,
        }

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class NullEnsemble:
    """Classifiers fitted under the null construction, with their seed ledger."""

    classifiers: list
    provenance: str  # 'permutation' | 'nf-resampled'
    streams: list[tuple[int, int]] = field(default_factory=list)
    latent_dim: int | None = None

    def __post_init__(self) -> None:
        if self.provenance not in ("permutation", "nf-resampled"):
            raise ConfigurationError(f"unknown ensemble provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.classifiers)


# ---------------------------------------------------------------------------
# Local test on the joint (theta, x) space
# ---------------------------------------------------------------------------


def fit_null_ensemble(
    data: LabeledPairDataset,
    fit_fn,
    n_null: int,
    stream: RngStream,
    paired: bool = False,
) -> NullEnsemble:
    """Permutation null: refit on label-permuted copies, fresh permutation per trial.

    ``paired=False`` permutes all labels freely, the right symmetry when the
    rows are independent draws (oracle tests on samples from two distributions).

    ``paired=True`` flips labels within aligned row pairs (row i with row
    i + n/2), for training sets where both class rows at index i share one
    conditioning observation.  Free permutation is not a symmetry of that
    construction: it leaves sampling imbalances in the per-class observation
    marginals that classifiers pick up, inflating null statistics and skewing
    p-values conservative.  Requires the block layout produced by
    ``from_class_arrays`` with equal class counts.
    """
    if paired:
        k = data.n // 2
        expected = np.concatenate([np.zeros(k, dtype=np.int64), np.ones(k, dtype=np.int64)])
        if data.n % 2 or not np.array_equal(data.labels, expected):
            raise ConfigurationError(
                "paired permutation requires class-0 rows stacked above class-1 rows, equal counts"
            )
    classifiers = []
    streams = []
    for h in range(n_null):
        sub = stream.child("trial", h)
        rng = sub.child("perm").generator()
        if paired:
            flips = rng.random(data.n // 2) < 0.5
            labels = np.concatenate([flips.astype(np.int64), 1 - flips.astype(np.int64)])
            permuted = data.with_labels(labels)
        else:
            perm = rng.permutation(data.n)
            permuted = data.with_labels(data.labels[perm])
        classifiers.append(fit_fn(permuted, sub.child("fit")))
        streams.append((sub.seed, sub.stream_id))
    return NullEnsemble(classifiers=classifiers, provenance="permutation", streams=streams)


def lc2st_training_set(estimator, cal: JointDataset, stream: RngStream) -> LabeledPairDataset:
    """Joint-space classification set: one estimator draw per calibration row
    (class 0) against the simulated pairs (class 1), same observations in both."""
    theta_q = estimator.sample_conditional(cal.xs, stream)
    theta_q = np.asarray(theta_q, dtype=np.float64)
    bad = ~np.all(np.isfinite(theta_q), axis=1)
    if np.any(bad):
        raise NumericError(f"estimator produced non-finite draw at calibration row {int(np.argmax(bad))}")
    return LabeledPairDataset.from_class_arrays(
        np.hstack([theta_q, cal.xs]),
        np.hstack([cal.thetas, cal.xs]),
    )


def lc2st_train(
    estimator,
    cal: JointDataset,
    fit_fn,
    n_null: int,
    stream: RngStream,
):
    """Train the local-test classifier and its permutation null ensemble.

    For every calibration row, one estimator draw at that row's observation
    joins class 0 and the simulated pair joins class 1; both classes share the
    conditioning observations.  Returns (classifier, ensemble); ``n_null=0``
    returns an empty ensemble.
    """
    if cal.n == 0:
        raise ConfigurationError("calibration set is empty")
    data = lc2st_training_set(estimator, cal, stream.child("estimator"))
    clf = fit_fn(data, stream.child("fit"))
    ensemble = fit_null_ensemble(data, fit_fn, n_null, stream.child("null"), paired=True)
    return clf, ensemble


def _evaluate_mse0(clf, ensemble: NullEnsemble, ws: np.ndarray):
    stat = t_mse0(clf, ws)
    nulls = np.array([t_mse0(member, ws) for member in ensemble.classifiers])
    return stat, nulls


def lc2st_evaluate(
    clf,
    ensemble: NullEnsemble,
    estimator,
    x_o: np.ndarray,
    n_v: int,
    stream: RngStream,
    conservative: bool = False,
) -> TestResult:
    """Local test statistic and p-value at ``x_o``.

    Fresh estimator draws are shared by the trained classifier and every null
    classifier, so all statistics are computed on the same sample set.
    """
    if n_v < 1:
        raise ConfigurationError("n_v must be at least 1")
    theta_q = estimator.sample(np.asarray(x_o, dtype=np.float64), n_v, stream.child("eval"))
    ws = append_conditioning(theta_q, x_o)
    stat, nulls = _evaluate_mse0(clf, ensemble, ws)
    seeds = {"seed": int(stream.seed), "stream_id": int(stream.stream_id)}
    return TestResult.from_stats(
        "lc2st", stat, nulls if len(ensemble) else None, x_o, n_v, seeds, conservative
    )


# ---------------------------------------------------------------------------
# Normalizing-flow specialization on the latent (z, x) space
# ---------------------------------------------------------------------------


def lc2st_nf_train(flow, cal: JointDataset, fit_fn, stream: RngStream):
    """Train the latent-space classifier for a flow estimator.

    Class 0 pairs fresh standard-normal latents with the calibration
    observations; class 1 uses the inverse-flow image of the simulated
    parameters.  Under a locally consistent flow both classes are standard
    normal at every observation.
    """
    if cal.n == 0:
        raise ConfigurationError("calibration set is empty")
    z0 = stream.child("z").generator().standard_normal((cal.n, flow.m))
    try:
        z_q, _ = flow.inverse(cal.thetas, cal.xs)
    except NumericError:
        for i in range(cal.n):
            try:
                flow.inverse(cal.thetas[i : i + 1], cal.xs[i : i + 1])
            except NumericError as exc:
                raise NumericError(f"flow inverse failed at calibration row {i}: {exc}") from exc
        raise
    bad = ~np.all(np.isfinite(z_q), axis=1)
    if np.any(bad):
        raise NumericError(f"flow inverse produced non-finite latent at calibration row {int(np.argmax(bad))}")
    data = LabeledPairDataset.from_class_arrays(
        np.hstack([z0, cal.xs]),
        np.hstack([z_q, cal.xs]),
    )
    return fit_fn(data, stream.child("fit"))


def lc2st_nf_null(
    cal_xs: np.ndarray,
    m: int,
    fit_fn,
    n_null: int,
    stream: RngStream,
) -> NullEnsemble:
    """Estimator-independent null ensemble for the flow variant.

    Each trial draws fresh standard-normal latents for both classes against
    the same observations, so one ensemble is reusable across flows and
    observations.
    """
    if n_null < 1:
        raise ConfigurationError("n_null must be at least 1")
    cal_xs = np.atleast_2d(np.asarray(cal_xs, dtype=np.float64))
    classifiers = []
    streams = []
    for h in range(n_null):
        sub = stream.child("trial", h)
        rng = sub.child("z").generator()
        z0 = rng.standard_normal((cal_xs.shape[0], m))
        z1 = rng.standard_normal((cal_xs.shape[0], m))
        data = LabeledPairDataset.from_class_arrays(
            np.hstack([z0, cal_xs]),
            np.hstack([z1, cal_xs]),
        )
        classifiers.append(fit_fn(data, sub.child("fit")))
        streams.append((sub.seed, sub.stream_id))
    return NullEnsemble(classifiers=classifiers, provenance="nf-resampled", streams=streams, latent_dim=m)


def lc2st_nf_evaluate(
    clf,
    ensemble: NullEnsemble,
    x_o: np.ndarray,
    m: int,
    n_v: int,
    stream: RngStream,
    conservative: bool = False,
) -> TestResult:
    """Flow-variant statistic and p-value at ``x_o``.

    Evaluation latents are standard normal and independent of the observation;
    the same draws feed the trained classifier and every null classifier.
    """
    if n_v < 1:
        raise ConfigurationError("n_v must be at least 1")
    z = stream.child("eval").generator().standard_normal((n_v, m))
    ws = append_conditioning(z, x_o)
    stat, nulls = _evaluate_mse0(clf, ensemble, ws)
    seeds = {"seed": int(stream.seed), "stream_id": int(stream.stream_id)}
    return TestResult.from_stats(
        "lc2st-nf", stat, nulls if len(ensemble) else None, x_o, n_v, seeds, conservative
    )


# ---------------------------------------------------------------------------
# Generic permutation test (oracle C2ST and the shift-pair experiment)
# ---------------------------------------------------------------------------


def c2st_permutation_test(
    train: LabeledPairDataset,
    stat_fn,
    fit_fn,
    n_null: int,
    stream: RngStream,
    method: str,
    x_o: np.ndarray | None = None,
    n_v: int = 0,
    conservative: bool = False,
) -> TestResult:
    """Fit, refit under label permutations, and score with ``stat_fn``.

    ``stat_fn(clf) -> float`` closes over whatever validation data the caller
    prepared; the same validation data scores the trained classifier and every
    null classifier.
    """
    clf = fit_fn(train, stream.child("fit"))
    ensemble = fit_null_ensemble(train, fit_fn, n_null, stream.child("null"))
    stat = float(stat_fn(clf))
    nulls = np.array([stat_fn(member) for member in ensemble.classifiers]) if len(ensemble) else None
    seeds = {"seed": int(stream.seed), "stream_id": int(stream.stream_id)}
    x_tag = np.empty(0) if x_o is None else np.asarray(x_o)
    return TestResult.from_stats(method, stat, nulls, x_tag, n_v, seeds, conservative)


# ---------------------------------------------------------------------------
# PP-plot diagnostics
# ---------------------------------------------------------------------------


def default_levels(n: int = 100) -> np.ndarray:
    return np.linspace(0.005, 0.995, n)


@dataclass(frozen=True)
class PPPlotData:
    """Empirical CDF of predicted class-0 probabilities with null bands.

    Under the null the predicted probabilities sit at one half, so the CDF is
    a step function at 0.5; systematic departures outside the band flag local
    inconsistency.
    """

    levels: np.ndarray
    cdf: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        for name in ("levels", "cdf", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != self.levels.shape:
                raise ConfigurationError("pp-plot arrays must share the levels grid")
        for name in ("cdf", "lower", "upper"):
            arr = getattr(self, name)
            if np.any(arr < -_EPS) or np.any(arr > 1 + _EPS):
                raise ConfigurationError(f"{name} values must lie in [0, 1]")
            if np.any(np.diff(arr) < -_EPS):
                raise ConfigurationError(f"{name} must be monotone nondecreasing in the level")
        if np.any(self.lower > self.upper + _EPS):
            raise ConfigurationError("lower band must not exceed upper band")

    def fraction_inside(self) -> float:
        inside = (self.cdf >= self.lower - _EPS) & (self.cdf <= self.upper + _EPS)
        return float(np.mean(inside))

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [
            (float(l), float(c), float(lo), float(up))
            for l, c, lo, up in zip(self.levels, self.cdf, self.lower, self.upper)
        ]


def _ecdf_at(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    sorted_vals = np.sort(values)
    return np.searchsorted(sorted_vals, levels, side="right") / len(values)


def pp_plot(
    clf,
    ensemble: NullEnsemble,
    eval_ws: np.ndarray,
    levels: np.ndarray | None = None,
    alpha: float = 0.05,
) -> PPPlotData:
    """Local PP-plot: CDF of class-0 probabilities with (1-alpha) null bands.

    The band at each level is the empirical [alpha/2, 1-alpha/2] quantile
    range of the null classifiers' CDFs on the same evaluation points.
    """
    eval_ws = np.atleast_2d(np.asarray(eval_ws, dtype=np.float64))
    if eval_ws.shape[0] == 0:
        raise ConfigurationError("pp_plot needs a nonempty evaluation set")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError("alpha must lie in (0, 1)")
    levels = default_levels() if levels is None else np.asarray(levels, dtype=np.float64)
    if np.any(levels <= 0.0) or np.any(levels >= 1.0):
        raise ConfigurationError("levels must lie strictly inside (0, 1)")
    if len(ensemble) == 0:
        raise ConfigurationError("pp_plot needs a nonempty null ensemble")
    d0_main = 1.0 - np.asarray(clf.predict_proba(eval_ws))
    cdf = _ecdf_at(d0_main, levels)
    null_cdfs = np.vstack(
        [_ecdf_at(1.0 - np.asarray(member.predict_proba(eval_ws)), levels) for member in ensemble.classifiers]
    )
    lower = np.quantile(null_cdfs, alpha / 2.0, axis=0)
    upper = np.quantile(null_cdfs, 1.0 - alpha / 2.0, axis=0)
    return PPPlotData(levels=levels, cdf=cdf, lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# Predicted-probability heatmaps over estimator marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalHeatmap:
    """Histogram of estimator samples colored by mean class-0 probability.

    ``dims = (i, i)`` marks a 1-D marginal (counts and mean_prob are vectors);
    ``dims = (i, j)`` with i < j a 2-D marginal (matrices).  Empty bins carry
    count 0 and NaN probability.
    """

    dims: tuple[int, int]
    edges_i: np.ndarray
    edges_j: np.ndarray | None
    counts: np.ndarray
    mean_prob: np.ndarray


def probability_heatmap(
    clf,
    flow,
    x_o: np.ndarray,
    n: int,
    bins: int,
    stream: RngStream,
) -> list[MarginalHeatmap]:
    """Mean class-0 probability per histogram bin, for all 1-D and 2-D marginals.

    Latents are drawn from the base distribution, mapped through the flow at
    ``x_o`` to parameter space for binning, while probabilities are evaluated
    on the latent inputs (z, x_o) -- high class-0 probability marks regions
    where the estimator carries more mass than the joint data supports.
    """
    if bins < 2:
        raise ConfigurationError("need at least 2 bins per axis")
    if n < 1:
        raise ConfigurationError("need at least one sample")
    z = stream.child("z").generator().standard_normal((n, flow.m))
    xs = np.broadcast_to(np.asarray(x_o, dtype=np.float64).reshape(1, -1), (n, flow.d))
    thetas, _ = flow.forward(z, xs)
    d0 = 1.0 - np.asarray(clf.predict_proba(append_conditioning(z, x_o)))
    out: list[MarginalHeatmap] = []
    edges = [np.histogram_bin_edges(thetas[:, i], bins=bins) for i in range(flow.m)]
    for i in range(flow.m):
        counts, _ = np.histogram(thetas[:, i], bins=edges[i])
        sums, _ = np.histogram(thetas[:, i], bins=edges[i], weights=d0)
        with np.errstate(invalid="ignore"):
            mean_prob = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        out.append(MarginalHeatmap((i, i), edges[i], None, counts, mean_prob))
    for i in range(flow.m):
        for j in range(i + 1, flow.m):
            counts, _, _ = np.histogram2d(thetas[:, i], thetas[:, j], bins=(edges[i], edges[j]))
            sums, _, _ = np.histogram2d(thetas[:, i], thetas[:, j], bins=(edges[i], edges[j]), weights=d0)
            with np.errstate(invalid="ignore"):
                mean_prob = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
            out.append(MarginalHeatmap((i, j), edges[i], edges[j], counts.astype(np.int64), mean_prob))
    return out


def heatmap_rows(heatmaps: list[MarginalHeatmap]) -> list[tuple]:
    """Flatten heatmaps to (dim_i, dim_j, bin_i, bin_j, count, mean_prob) rows."""
    rows: list[tuple] = []
    for hm in heatmaps:
        i, j = hm.dims
        if i == j:
            for bi, (c, p) in enumerate(zip(hm.counts, hm.mean_prob)):
                rows.append((i, j, bi, 0, int(c), float(p)))
        else:
            for bi in range(hm.counts.shape[0]):
                for bj in range(hm.counts.shape[1]):
                    rows.append((i, j, bi, bj, int(hm.counts[bi, bj]), float(hm.mean_prob[bi, bj])))
    return rows
