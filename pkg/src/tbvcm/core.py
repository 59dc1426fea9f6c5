"""Domain types, losses and model evaluation for tree boosted VCMs.

A varying coefficient model predicts through a local linear predictor

    eta(x, z) = x^T beta(z),    x = (1, x^1, ..., x^p),

where every slot of ``beta`` is a sum of regression trees over the action
covariates ``z``.  Regression uses the identity link, binary classification
the logit link.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, NumericError, UsageError

# Deviance is evaluated on probabilities clipped to this band; gradients are not.
PROB_CLIP = 1e-12
ETA_CLIP = math.log((1.0 - PROB_CLIP) / PROB_CLIP)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


def _sigmoid(eta):
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(eta):
    """Numerically stable logistic function, scalar or array."""
    out = _sigmoid(np.atleast_1d(eta))
    return float(out[0]) if np.ndim(eta) == 0 else out


class Loss(str, enum.Enum):
    """Per-observation loss ``l(y, eta)`` on the linear predictor."""

    SQUARED_ERROR = "squared_error"
    LOGISTIC_DEVIANCE = "logistic_deviance"

    @classmethod
    def for_task(cls, task: Task) -> "Loss":
        return cls.SQUARED_ERROR if Task(task) is Task.REGRESSION else cls.LOGISTIC_DEVIANCE

    @property
    def task(self) -> Task:
        return Task.REGRESSION if self is Loss.SQUARED_ERROR else Task.CLASSIFICATION

    def evaluate(self, eta, y):
        eta = np.asarray(eta, dtype=float)
        y = np.asarray(y, dtype=float)
        if self is Loss.SQUARED_ERROR:
            return 0.5 * (eta - y) ** 2
        # clamping p to [PROB_CLIP, 1 - PROB_CLIP] is clamping eta to +-ETA_CLIP;
        # -log-likelihood = softplus(eta) - y * eta avoids cancellation near p = 1
        e = np.clip(eta, -ETA_CLIP, ETA_CLIP)
        return np.logaddexp(0.0, e) - y * e

    def residual(self, eta, y):
        """Negative derivative of the loss with respect to ``eta``."""
        eta = np.asarray(eta, dtype=float)
        if self is Loss.SQUARED_ERROR:
            return np.asarray(y, dtype=float) - eta
        return np.asarray(y, dtype=float) - _sigmoid(np.atleast_1d(eta)).reshape(eta.shape)

    def mean(self, eta, y) -> float:
        return float(np.mean(self.evaluate(eta, y)))

    def inverse_link(self, eta):
        if self is Loss.SQUARED_ERROR:
            return np.asarray(eta, dtype=float)
        return _sigmoid(np.atleast_1d(eta)).reshape(np.shape(eta))


def pseudo_gradient(loss: Loss, x, y, beta) -> np.ndarray:
    """Negative gradient of ``l(y, x^T beta)`` with respect to ``beta``.

    Works on a single row (``x`` and ``beta`` of shape ``(p+1,)``) or on a
    batch of rows (``(n, p+1)`` each, ``y`` of shape ``(n,)``).

    >>> pseudo_gradient(Loss.SQUARED_ERROR, [1.0, 2.0], 3.0, [0.0, 0.0])
    array([3., 6.])
    """
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape != beta.shape:
        raise UsageError(f"x has shape {x.shape} but beta has shape {beta.shape}")
    y = np.asarray(y, dtype=float)
    if y.shape != x.shape[:-1]:
        raise UsageError(f"y has shape {y.shape}, expected {x.shape[:-1]}")
    with np.errstate(over="ignore", invalid="ignore"):
        eta = np.sum(x * beta, axis=-1)
        r = Loss(loss).residual(eta, y)
        g = r[..., None] * x
    if not np.all(np.isfinite(g)):
        raise NumericError("pseudo gradient is not finite")
    return g


# --------------------------------------------------------------------------
# Action space
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    """One action covariate.  ``levels`` is ``None`` for continuous columns."""

    name: str
    levels: tuple[str, ...] | None = None

    @property
    def categorical(self) -> bool:
        return self.levels is not None

    def code(self, value: str) -> int:
        """Integer code of a categorical level; -1 when unseen."""
        try:
            return self.levels.index(value)
        except ValueError:
            return -1


@dataclass(frozen=True)
class ActionSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate action column names: {names}")
        for c in self.columns:
            if c.levels is None:
                continue
            levels = tuple(c.levels)
            if not levels or len(set(levels)) != len(levels):
                raise DataError(f"column {c.name!r}: levels must be non-empty and unique")

    @classmethod
    def continuous(cls, names: Sequence[str]) -> "ActionSchema":
        return cls(tuple(Column(n) for n in names))

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def is_categorical(self, j: int) -> bool:
        return self.columns[j].categorical

    def n_levels(self, j: int) -> int:
        levels = self.columns[j].levels
        return 0 if levels is None else len(levels)

    def extend(self, other: "ActionSchema") -> "ActionSchema":
        return ActionSchema(self.columns + other.columns)

    def to_dict(self) -> list[dict]:
        out = []
        for c in self.columns:
            if c.categorical:
                out.append({"name": c.name, "kind": "categorical", "levels": list(c.levels)})
            else:
                out.append({"name": c.name, "kind": "continuous"})
        return out

    @classmethod
    def from_dict(cls, doc: Sequence[Mapping]) -> "ActionSchema":
        cols = []
        for c in doc:
            if c["kind"] == "categorical":
                cols.append(Column(str(c["name"]), tuple(str(v) for v in c["levels"])))
            elif c["kind"] == "continuous":
                cols.append(Column(str(c["name"])))
            else:
                raise DataError(f"unknown column kind {c['kind']!r}")
        return cls(tuple(cols))


# --------------------------------------------------------------------------
# Standardization of the predictive covariates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationParams:
    """Affine map of predictive columns ``1..p`` onto ``[-1, 1]``.

    ``lo[k]`` and ``hi[k]`` are the training minimum and maximum of column
    ``k + 1``.  A degenerate column (``lo == hi``) maps to 0.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise DataError("standardization bounds differ in length")
        for a, b in zip(self.lo, self.hi):
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise DataError(f"invalid standardization bounds ({a}, {b})")

    @classmethod
    def fit(cls, x: np.ndarray) -> "StandardizationParams":
        x = np.asarray(x, dtype=float)
        if x.shape[1] == 1:
            return cls((), ())
        return cls(tuple(x[:, 1:].min(axis=0)), tuple(x[:, 1:].max(axis=0)))

    @classmethod
    def identity(cls, p: int) -> "StandardizationParams":
        return cls((-1.0,) * p, (1.0,) * p)

    @property
    def p(self) -> int:
        return len(self.lo)

    def _center_half(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return (hi + lo) / 2.0, (hi - lo) / 2.0

    def apply(self, x) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        if x.shape[-1] != self.p + 1:
            raise UsageError(f"expected {self.p + 1} design columns, got {x.shape[-1]}")
        c, h = self._center_half()
        safe = np.where(h > 0, h, 1.0)
        x[..., 1:] = np.where(h > 0, (x[..., 1:] - c) / safe, 0.0)
        return x

    def invert(self, xs) -> np.ndarray:
        xs = np.array(xs, dtype=float, copy=True)
        c, h = self._center_half()
        xs[..., 1:] = xs[..., 1:] * h + c
        return xs

    def coefficients_to_raw(self, beta) -> np.ndarray:
        """Re-express coefficients fitted on the standardized design in raw units."""
        beta = np.array(beta, dtype=float, copy=True)
        c, h = self._center_half()
        safe = np.where(h > 0, h, 1.0)
        slopes = np.where(h > 0, beta[..., 1:] / safe, 0.0)
        beta[..., 0] = beta[..., 0] - np.sum(slopes * c, axis=-1)
        beta[..., 1:] = slopes
        return beta

    def to_dict(self) -> dict:
        return {"min": list(self.lo), "max": list(self.hi)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "StandardizationParams":
        return cls(tuple(doc["min"]), tuple(doc["max"]))


# --------------------------------------------------------------------------
# Dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Predictive design ``x`` (intercept first), action rows ``z`` and response ``y``.

    ``x`` always holds raw values.  When ``standardization`` is set, fitting
    uses ``design()``, the standardized copy, and the fitted model keeps the
    parameters so that prediction takes raw covariates.  Categorical action
    columns hold integer level codes into ``schema``.  ``truth`` carries the
    generator's true coefficients in raw units and is never read by fitting
    code.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    task: Task
    schema: ActionSchema
    x_names: tuple[str, ...] = ()
    standardization: StandardizationParams | None = None
    truth: np.ndarray | None = None
    generator: str | None = None
    y_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if z.ndim == 1:
            z = z[:, None]
        task = Task(self.task)
        n = len(y)
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if x.shape[0] != n or z.shape[0] != n:
            raise DataError(f"row counts differ: x={x.shape[0]}, z={z.shape[0]}, y={n}")
        if z.shape[1] != len(self.schema):
            raise DataError(f"z has {z.shape[1]} columns, schema has {len(self.schema)}")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)) or not np.all(np.isfinite(z)):
            raise DataError("x, z and y must be finite")
        if not np.all(x[:, 0] == 1.0):
            raise DataError("column 0 of x must be the intercept (all ones)")
        if task is Task.CLASSIFICATION and not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("classification labels must be 0 or 1")
        for j, col in enumerate(self.schema.columns):
            if col.categorical:
                codes = z[:, j]
                if np.any(codes != np.round(codes)) or np.any(codes < 0) or np.any(codes >= len(col.levels)):
                    raise DataError(f"column {col.name!r}: invalid level codes")
        names = tuple(self.x_names) or tuple(f"x{k}" for k in range(1, x.shape[1]))
        if len(names) != x.shape[1] - 1:
            raise DataError("x_names must name every non-intercept column")
        if self.standardization is not None and self.standardization.p != x.shape[1] - 1:
            raise DataError("standardization does not match the design width")
        truth = self.truth
        if truth is not None:
            truth = np.asarray(truth, dtype=float)
            if truth.shape != x.shape:
                raise DataError("truth must have the same shape as x")
        for attr, val in (("x", x), ("z", z), ("y", y), ("task", task), ("x_names", names), ("truth", truth)):
            object.__setattr__(self, attr, val)
        for arr in (x, z, y, truth):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1] - 1

    def design(self) -> np.ndarray:
        if self.standardization is None:
            return self.x
        return self.standardization.apply(self.x)

    def standardized(self) -> "Dataset":
        """Copy with standardization parameters fitted on this data."""
        return replace(self, standardization=StandardizationParams.fit(self.x))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            x=self.x[idx],
            z=self.z[idx],
            y=self.y[idx],
            truth=None if self.truth is None else self.truth[idx],
        )


# --------------------------------------------------------------------------
# Fitted model
# --------------------------------------------------------------------------


class Scheme(str, enum.Enum):
    SIMULTANEOUS = "simultaneous"
    COMPONENTWISE = "componentwise"
    SERIALIZED = "serialized"
    BOULEVARD = "boulevard"


@dataclass(frozen=True)
class IterationRecord:
    """Trees added in one boosting iteration, keyed by coefficient slot."""

    trees: Mapping[int, object]
    b: int = 0

    def __post_init__(self):
        if not self.trees:
            raise UsageError("an iteration needs at least one tree")
        object.__setattr__(self, "trees", dict(sorted(self.trees.items())))


@dataclass(frozen=True, eq=False)
class VcmModel:
    schema: ActionSchema
    standardization: StandardizationParams
    loss: Loss
    beta0: np.ndarray
    rate: float
    iterations: tuple[IterationRecord, ...] = ()
    scheme: Scheme = Scheme.SIMULTANEOUS
    truncation: float | None = None
    x_names: tuple[str, ...] = ()
    unseen: str = "majority"

    def __post_init__(self):
        beta0 = np.array(self.beta0, dtype=float).ravel()
        if not np.all(np.isfinite(beta0)):
            raise UsageError("beta0 must be finite")
        beta0.setflags(write=False)
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "iterations", tuple(self.iterations))
        object.__setattr__(self, "x_names", tuple(self.x_names) or tuple(f"x{k}" for k in range(1, len(beta0))))
        if not 0.0 < self.rate <= 1.0:
            raise UsageError(f"rate must lie in (0, 1], got {self.rate}")
        if self.standardization.p != len(beta0) - 1:
            raise UsageError("standardization does not match the number of coefficients")
        if self.scheme is Scheme.BOULEVARD and not (self.truncation and self.truncation > 0):
            raise UsageError("boulevard models need a positive truncation")
        for rec in self.iterations:
            if any(not 0 <= j < len(beta0) for j in rec.trees):
                raise UsageError("iteration refers to a coefficient slot out of range")

    @property
    def p(self) -> int:
        return len(self.beta0) - 1

    @property
    def task(self) -> Task:
        return self.loss.task

    def truncate(self, b: int) -> "VcmModel":
        """The model after its first ``b`` iterations."""
        return replace(self, iterations=self.iterations[:b])

    def _check_z(self, z) -> tuple[np.ndarray, bool]:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if z.shape[1] != len(self.schema):
            raise UsageError(f"expected {len(self.schema)} action columns, got {z.shape[1]}")
        return z, single

    def coefficient_path(self, z) -> Iterator[np.ndarray]:
        """Yield the coefficients at ``z`` before and after every iteration.

        The first yielded array is ``beta0``; the one after iteration ``b``
        equals ``truncate(b).coefficient_at(z)`` bit for bit.
        """
        z, _ = self._check_z(z)
        beta = np.tile(self.beta0, (z.shape[0], 1))
        yield beta.copy()
        for k, rec in enumerate(self.iterations):
            if self.scheme is Scheme.BOULEVARD:
                step = np.zeros_like(beta)
                for j, tree in rec.trees.items():
                    vals = np.clip(tree.predict(z, unseen=self.unseen), -self.truncation, self.truncation)
                    step[:, j] = self.rate * vals
                beta = boulevard_update(beta, step, k)
            else:
                for j, tree in rec.trees.items():
                    beta[:, j] += self.rate * tree.predict(z, unseen=self.unseen)
            yield beta.copy()

    def coefficient_at(self, z, raw: bool = False) -> np.ndarray:
        """Coefficient vector(s) at action row(s) ``z``.

        With ``raw=True`` the coefficients are re-expressed for the raw,
        unstandardized predictive covariates.
        """
        z, single = self._check_z(z)
        for beta in self.coefficient_path(z):
            pass
        if raw:
            beta = self.standardization.coefficients_to_raw(beta)
        return beta[0] if single else beta

    def linear_predictor(self, x, z) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        xs = self.standardization.apply(x)
        beta = np.atleast_2d(self.coefficient_at(z))
        if beta.shape[0] != xs.shape[0]:
            raise UsageError("x and z row counts differ")
        eta = np.sum(xs * beta, axis=1)
        return float(eta[0]) if single else eta

    def predict(self, x, z) -> np.ndarray | float:
        """Mean response: the linear predictor for regression, a probability for classification."""
        eta = self.linear_predictor(x, z)
        out = self.loss.inverse_link(eta)
        return float(out) if np.ndim(eta) == 0 else out


def boulevard_update(beta: np.ndarray, step: np.ndarray, k: int) -> np.ndarray:
    """Averaging step ``beta_{k+1} = k/(k+1) beta_k + step/(k+1)``.

    Written as ``beta + (step - beta)/(k+1)`` so that, in floating point, the
    result never leaves the interval spanned by ``beta`` and ``step``.
    """
    if k == 0:
        return step.copy()
    return beta + (step - beta) / (k + 1)


# Convenience functions mirroring the model methods.

def coefficient_at(model: VcmModel, z, raw: bool = False) -> np.ndarray:
    return model.coefficient_at(z, raw=raw)


def linear_predictor(model: VcmModel, x, z):
    return model.linear_predictor(x, z)


def predict(model: VcmModel, x, z):
    return model.predict(x, z)


# --------------------------------------------------------------------------
# Global (generalized) linear fits
# --------------------------------------------------------------------------


def fit_glm(x, y, loss: Loss, max_iter: int = 25, tol: float = 1e-8, jitter: float = 1e-8) -> np.ndarray:
    """Least squares (closed form) or logistic regression (Newton) on design ``x``.

    A ridge ``jitter * I`` is added to the normal equations.  Raises
    ``NumericError`` when the system stays singular.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.shape[1]
    ridge = jitter * np.eye(k)
    try:
        if Loss(loss) is Loss.SQUARED_ERROR:
            beta = np.linalg.solve(x.T @ x + ridge, x.T @ y)
        else:
            beta = np.zeros(k)
            for _ in range(max_iter):
                mu = _sigmoid(x @ beta)
                w = mu * (1.0 - mu)
                hess = (x * w[:, None]).T @ x + ridge
                step = np.linalg.solve(hess, x.T @ (y - mu))
                beta = beta + step
                if np.max(np.abs(step)) < tol:
                    break
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular design: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise NumericError("linear fit produced non-finite coefficients")
    return beta
