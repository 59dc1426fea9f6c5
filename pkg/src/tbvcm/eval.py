"""Metrics, k-fold cross validation, baseline models and coefficient recovery."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import boost
from .core import ActionSchema, Column, Dataset, Loss, Task, fit_glm, sigmoid
from .data.generators import SEAMS
from .data.io import write_csv
from .errors import UsageError
from .tree import fit_tree, presort


def metric(task: Task | str, predictions, y) -> float:
    """Mean squared error for regression, 0-1 loss (threshold 0.5) for classification."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if predictions.size == 0 or predictions.size != y.size:
        raise UsageError("metric needs two non-empty vectors of equal length")
    if Task(task) is Task.REGRESSION:
        return float(np.mean((predictions - y) ** 2))
    return float(np.mean((predictions >= 0.5).astype(float) != y))


# ---- baselines -------------------------------------------------------------


class GlobalLinear:
    """One (generalized) linear model for all rows."""

    name = "lm"

    def __init__(self, max_iter: int = 50):
        self.max_iter = max_iter

    def fit(self, data: Dataset) -> "GlobalLinear":
        self.loss = Loss.for_task(data.task)
        self.coef_ = fit_glm(data.x, data.y, self.loss, max_iter=self.max_iter, tol=1e-8)
        return self

    def predict(self, x, z=None):
        return self.loss.inverse_link(np.sum(np.atleast_2d(x) * self.coef_, axis=1))


class SaturatedLinear:
    """A separate linear model for every combination of the categorical action columns.

    Groups with fewer than ``p + 2`` training rows, and combinations unseen
    during training, use the global model.  Continuous action columns play
    no role.
    """

    name = "lms"

    def __init__(self, max_iter: int = 50):
        self.max_iter = max_iter

    def fit(self, data: Dataset) -> "SaturatedLinear":
        self.global_ = GlobalLinear(self.max_iter).fit(data)
        self.loss = self.global_.loss
        self.cat_cols = [j for j in range(len(data.schema)) if data.schema.is_categorical(j)]
        self.groups_ = {}
        if not self.cat_cols:
            warnings.warn("no categorical action columns; saturated model equals the global model",
                          stacklevel=2)
            return self
        keys = self._keys(data.z)
        for key in sorted(set(keys)):
            rows = np.array([k == key for k in keys])
            if rows.sum() >= data.p + 2:
                self.groups_[key] = fit_glm(data.x[rows], data.y[rows], self.loss,
                                            max_iter=self.max_iter, tol=1e-8)
        return self

    def _keys(self, z):
        z = np.atleast_2d(z)
        return [tuple(int(v) for v in row) for row in z[:, self.cat_cols]]

    def coefficients(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        if not self.cat_cols:
            return np.tile(self.global_.coef_, (z.shape[0], 1))
        return np.array([self.groups_.get(k, self.global_.coef_) for k in self._keys(z)])

    def predict(self, x, z):
        eta = np.sum(np.atleast_2d(x) * self.coefficients(z), axis=1)
        return self.loss.inverse_link(eta)


class PlainGbm:
    """Gradient boosted trees of the response on all covariates (predictive and action).

    Written independently of the boosting drivers: it boosts a scalar score
    ``F`` starting from 0 and never forms coefficient vectors.  Tree ``b`` uses
    the same random stream as coefficient slot 0 of iteration ``b`` in the
    drivers, so with no predictive covariates both produce the same trees.
    With logistic deviance it serves as the boosted-trees classifier baseline.
    """

    name = "gbm"

    def __init__(self, cfg: boost.FitConfig | None = None):
        self.cfg = cfg or boost.FitConfig()

    def _features(self, x, z):
        return np.column_stack([np.atleast_2d(z), np.atleast_2d(x)[:, 1:]])

    def fit(self, data: Dataset) -> "PlainGbm":
        cfg = self.cfg
        self.loss = Loss.for_task(data.task)
        self.rate = cfg.rate_for(data.p)
        self.schema = data.schema.extend(ActionSchema(tuple(Column(f"__x_{n}") for n in data.x_names)))
        feats = self._features(data.x, data.z)
        order = presort(feats)
        score = np.zeros(data.n)
        self.trees = []
        for b in range(cfg.iterations):
            if self.loss is Loss.SQUARED_ERROR:
                resid = data.y - score
            else:
                resid = data.y - sigmoid(score)
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, b, 0)))
            tree = fit_tree(feats, resid, cfg.tree, self.schema, rng=rng, sorted_cols=order)
            score = score + self.rate * tree.predict(feats, cfg.unseen)
            self.trees.append(tree)
        self.train_score_ = score
        return self

    def decision_function(self, x, z):
        feats = self._features(x, z)
        score = np.zeros(feats.shape[0])
        for tree in self.trees:
            score = score + self.rate * tree.predict(feats, self.cfg.unseen)
        return score

    def predict(self, x, z):
        return self.loss.inverse_link(self.decision_function(x, z))


class Tvcm:
    """Adapter giving the boosted VCM the same fit/predict shape as the baselines."""

    name = "tvcm"

    def __init__(self, cfg: boost.FitConfig | None = None):
        self.cfg = cfg or boost.FitConfig()

    def fit(self, data: Dataset) -> "Tvcm":
        self.model_, self.trace_ = boost.fit(data, self.cfg)
        return self

    def predict(self, x, z):
        return self.model_.predict(x, z)


BASELINES = {"lm": GlobalLinear, "lms": SaturatedLinear, "gbm": PlainGbm}
_ALIASES = {"globallinear": "lm", "global": "lm", "saturatedlinear": "lms", "saturated": "lms",
            "plaingbm": "gbm"}


def make_method(kind: str, cfg: boost.FitConfig | None = None):
    key = _ALIASES.get(kind.lower(), kind.lower())
    if key == "tvcm":
        return Tvcm(cfg)
    if key == "gbm":
        return PlainGbm(cfg)
    if key in BASELINES:
        return BASELINES[key]()
    raise UsageError(f"unknown method {kind!r}; choose from tvcm, lm, lms, gbm")


def fit_baseline(data: Dataset, kind: str, cfg: boost.FitConfig | None = None):
    """Fit ``GlobalLinear`` (lm), ``SaturatedLinear`` (lms) or ``PlainGbm`` (gbm)."""
    if _ALIASES.get(kind.lower(), kind.lower()) == "tvcm":
        raise UsageError("tvcm is not a baseline; use boost.fit")
    return make_method(kind, cfg).fit(data)


# ---- cross validation --------------------------------------------------------


@dataclass
class CvReport:
    method: str
    scores: list[float]
    metric_name: str = "mse"

    def __post_init__(self):
        if len(self.scores) < 2:
            raise UsageError("a cross-validation report needs at least two folds")

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def sd(self) -> float:
        return float(np.std(self.scores, ddof=1))

    def summary(self) -> str:
        return "%.4g(%.2g)" % (self.mean, self.sd)


def fold_ids(n: int, k: int, seed: int = 0) -> np.ndarray:
    """Shuffled fold labels; fold sizes differ by at most one."""
    if k < 2:
        raise UsageError("need at least 2 folds")
    if n < k:
        raise UsageError(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.repeat(np.arange(k), sizes)
    return ids


def cross_validate(data: Dataset, cfg: boost.FitConfig | None = None, k: int = 10, seed: int = 0,
                   method: str | Callable = "tvcm") -> CvReport:
    """k-fold cross validation of one method.

    ``method`` is a name (``tvcm``, ``lm``, ``lms``, ``gbm``) or a factory
    returning an object with ``fit(data)`` and ``predict(x, z)``.  When the
    dataset carries standardization parameters they are refitted on every
    training fold.
    """
    ids = fold_ids(data.n, k, seed)
    factory = (lambda: make_method(method, cfg)) if isinstance(method, str) else method
    scores = []
    name = method if isinstance(method, str) else getattr(method, "__name__", "custom")
    for f in range(k):
        train = data.subset(np.flatnonzero(ids != f))
        test = data.subset(np.flatnonzero(ids == f))
        if data.standardization is not None:
            train = train.standardized()
        est = factory().fit(train)
        scores.append(metric(data.task, est.predict(test.x, test.z), test.y))
    return CvReport(name, scores, "mse" if data.task is Task.REGRESSION else "0-1")


def benchmark(data: Dataset, cfg: boost.FitConfig | None = None, k: int = 10, seed: int = 0,
              methods: Sequence[str] = ("tvcm", "lm", "lms", "gbm")) -> list[CvReport]:
    """Cross-validate several methods on the same fold assignment."""
    return [cross_validate(data, cfg, k, seed, m) for m in methods]


def format_reports(reports: Sequence[CvReport]) -> str:
    width = max(len(r.method) for r in reports)
    lines = [f"{'method':<{width}}  {reports[0].metric_name}"]
    lines += [f"{r.method:<{width}}  {r.summary()}" for r in reports]
    return "\n".join(lines)


def write_reports(reports: Sequence[CvReport], path):
    k = len(reports[0].scores)
    header = ["method", "metric", "mean", "sd", *(f"fold_{i + 1}" for i in range(k))]
    write_csv(path, header, [[r.method, r.metric_name, r.mean, r.sd, *r.scores] for r in reports])


# ---- coefficient recovery -----------------------------------------------------


@dataclass
class RecoveryReport:
    mae: np.ndarray
    interior_mae: np.ndarray | None = None
    n_interior: int = 0
    margin: float | None = None

    def rows(self):
        for j in range(len(self.mae)):
            inner = None if self.interior_mae is None else float(self.interior_mae[j])
            yield j, float(self.mae[j]), inner


def recovery(model, data: Dataset, interior_margin: float | None = None) -> RecoveryReport:
    """Mean absolute coefficient error against the generator's truth (raw units).

    Rows closer than ``interior_margin`` to a true discontinuity are dropped
    from the interior score.  Unknown generators get the overall score only.
    """
    if data.truth is None:
        raise UsageError("dataset carries no ground truth")
    beta = np.atleast_2d(model.coefficient_at(data.z, raw=True))
    err = np.abs(beta - data.truth)
    report = RecoveryReport(mae=err.mean(axis=0))
    seam = SEAMS.get(data.generator or "")
    if seam is None:
        return report
    dist, default_margin = seam
    margin = default_margin if interior_margin is None else interior_margin
    inside = dist(data.z) >= margin
    report.margin = margin
    report.n_interior = int(inside.sum())
    report.interior_mae = err[inside].mean(axis=0) if inside.any() else np.full(err.shape[1], math.nan)
    return report
