"""Boosting drivers for tree boosted varying coefficient models.

Four update schemes are available:

simultaneous
    Every iteration computes all pseudo-gradient coordinates at the current
    coefficients, fits one tree per coordinate and adds all of them.
componentwise
    Fits the same ``p + 1`` candidate trees but keeps only the one whose
    update lowers the training loss the most.
serialized
    Each micro-iteration draws a coordinate uniformly at random, recomputes
    that gradient coordinate and fits a single tree.
boulevard
    Trees grown on subsamples, truncated at ``M`` and averaged with weights
    ``b/(b+1)`` and ``rate/(b+1)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (Dataset, IterationRecord, Loss, Scheme, StandardizationParams, VcmModel,
                   boulevard_update, fit_glm)
from .errors import NumericError, UsageError
from .tree import TreeConfig, fit_tree, presort

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """Boosting knobs.

    ``rate=None`` means ``1/(1+p)``.  ``truncation=None`` lets boulevard pick
    three times the standard deviation of the initial pseudo-gradient
    magnitudes.  ``subsample`` is the boulevard subsample fraction.
    ``holdout`` enables early stopping on a held-out fraction of the rows.
    """

    iterations: int = 100
    rate: float | None = None
    tree: TreeConfig = field(default_factory=TreeConfig)
    scheme: Scheme = Scheme.SIMULTANEOUS
    truncation: float | None = None
    subsample: float = 0.5
    seed: int = 0
    init: str = "zeros"
    holdout: float | None = None
    patience: int = 10
    threads: int = 1
    unseen: str = "majority"

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.iterations < 0:
            raise UsageError("iterations must be >= 0")
        if self.rate is not None and not 0.0 < self.rate <= 1.0:
            raise UsageError(f"rate must lie in (0, 1], got {self.rate}")
        if self.truncation is not None and not self.truncation > 0:
            raise UsageError("truncation must be positive")
        if not 0.0 < self.subsample <= 1.0:
            raise UsageError("subsample fraction must lie in (0, 1]")
        if self.init not in ("zeros", "glm"):
            raise UsageError(f"unknown init {self.init!r}")
        if self.holdout is not None and not 0.0 < self.holdout < 1.0:
            raise UsageError("holdout fraction must lie in (0, 1)")
        if self.patience < 1 or self.threads < 1:
            raise UsageError("patience and threads must be positive")
        if self.unseen not in ("majority", "strict"):
            raise UsageError(f"unknown unseen-level policy {self.unseen!r}")

    def rate_for(self, p: int) -> float:
        return self.rate if self.rate is not None else 1.0 / (1 + p)


@dataclass
class FitTrace:
    """Per-iteration diagnostics.  ``initial_*`` describe the state before iteration 1."""

    initial_loss: float = math.nan
    initial_residual_norm: float = math.nan
    train_loss: list[float] = field(default_factory=list)
    residual_norm: list[float] = field(default_factory=list)
    selected: list[int | None] = field(default_factory=list)
    holdout_loss: list[float | None] = field(default_factory=list)
    candidate_losses: list[np.ndarray | None] = field(default_factory=list)
    stopped_at: int | None = None

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        for b in range(len(self)):
            yield {
                "iteration": b + 1,
                "train_loss": self.train_loss[b],
                "residual_norm": self.residual_norm[b],
                "selected": "" if self.selected[b] is None else self.selected[b],
                "holdout_loss": "" if self.holdout_loss[b] is None else self.holdout_loss[b],
            }

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["iteration", "train_loss", "residual_norm", "selected",
                                               "holdout_loss"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _tree_rng(seed: int, b: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, b, j)))


def _check_rate(scheme: Scheme, rate: float, p: int):
    if scheme is Scheme.BOULEVARD:
        return  # averaging keeps the path bounded for any rate
    limit = 1.0 / (1 + p)
    if scheme in (Scheme.COMPONENTWISE, Scheme.SERIALIZED):
        limit = max(limit, 0.5)
    if rate > limit * (1 + 1e-12):
        warnings.warn(f"learning rate {rate:g} exceeds {limit:g} recommended for the {scheme.value} scheme",
                      stacklevel=3)


class _State:
    """Mutable bookkeeping shared by the drivers."""

    def __init__(self, data: Dataset, cfg: FitConfig):
        self.cfg = cfg
        self.loss = Loss.for_task(data.task)
        self.p = data.p
        x = data.design()
        rows = np.arange(data.n)
        hold = None
        if cfg.holdout:
            perm = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,))).permutation(data.n)
            n_hold = max(1, int(round(cfg.holdout * data.n)))
            if n_hold >= data.n:
                raise UsageError("holdout leaves no training rows")
            hold, rows = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
        self.x, self.z, self.y = x[rows], data.z[rows], data.y[rows]
        self.schema = data.schema
        if hold is not None:
            self.hx, self.hz, self.hy = x[hold], data.z[hold], data.y[hold]
        else:
            self.hx = None
        if cfg.init == "glm":
            self.beta0 = fit_glm(self.x, self.y, self.loss, max_iter=25, tol=1e-8)
        else:
            self.beta0 = np.zeros(self.p + 1)
        self.rate = cfg.rate_for(self.p)
        _check_rate(cfg.scheme, self.rate, self.p)
        self.beta = np.tile(self.beta0, (len(self.y), 1))
        self.hbeta = None if self.hx is None else np.tile(self.beta0, (len(self.hy), 1))
        self.sorted_cols = presort(self.z)
        self.trace = FitTrace()
        eta = self.eta()
        self.trace.initial_loss = self.loss.mean(eta, self.y)
        self.trace.initial_residual_norm = self._rnorm(eta)
        self.records: list[IterationRecord] = []
        self.best = (math.inf, 0)
        self._pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def eta(self):
        return np.sum(self.x * self.beta, axis=1)

    def _rnorm(self, eta):
        r = self.loss.residual(eta, self.y)
        return float(np.sqrt(np.sum(r * r) / len(r)))

    def gradients(self, b: int) -> np.ndarray:
        r = self.loss.residual(self.eta(), self.y)
        g = r[:, None] * self.x
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite pseudo gradient at iteration {b + 1}")
        return g

    def fit_trees(self, targets: dict[int, np.ndarray], b: int, tree_cfg: TreeConfig):
        def one(j):
            tree = fit_tree(self.z, targets[j], tree_cfg, self.schema, rng=_tree_rng(self.cfg.seed, b, j),
                            sorted_cols=self.sorted_cols)
            return j, tree, tree.predict(self.z, self.cfg.unseen)

        keys = sorted(targets)
        if self._pool is not None and len(keys) > 1:
            return list(self._pool.map(one, keys))
        return [one(j) for j in keys]

    def close_iteration(self, b: int, record: IterationRecord, selected=None, candidates=None) -> bool:
        """Store the record and trace row; return True when early stopping fires."""
        self.records.append(record)
        eta = self.eta()
        loss = self.loss.mean(eta, self.y)
        if not math.isfinite(loss):
            raise NumericError(f"training loss is not finite at iteration {b + 1}")
        t = self.trace
        t.train_loss.append(loss)
        t.residual_norm.append(self._rnorm(eta))
        t.selected.append(selected)
        t.candidate_losses.append(candidates)
        if self.hx is None:
            t.holdout_loss.append(None)
            return False
        hl = self.loss.mean(np.sum(self.hx * self.hbeta, axis=1), self.hy)
        t.holdout_loss.append(hl)
        if hl < self.best[0]:
            self.best = (hl, b + 1)
        if b + 1 - self.best[1] >= self.cfg.patience:
            t.stopped_at = b + 1
            return True
        return False

    def holdout_add(self, j: int, tree, rate: float):
        if self.hx is not None:
            self.hbeta[:, j] += rate * tree.predict(self.hz, self.cfg.unseen)

    def model(self, data: Dataset, truncation=None) -> VcmModel:
        records = self.records
        if self.hx is not None and self.best[1] > 0:
            records = records[: self.best[1]]
        if self._pool is not None:
            self._pool.shutdown()
        return VcmModel(
            schema=data.schema,
            standardization=data.standardization or StandardizationParams.identity(data.p),
            loss=self.loss,
            beta0=self.beta0,
            rate=self.rate,
            iterations=tuple(records),
            scheme=self.cfg.scheme,
            truncation=truncation,
            x_names=data.x_names,
            unseen=self.cfg.unseen,
        )


def fit(data: Dataset, cfg: FitConfig | None = None) -> tuple[VcmModel, FitTrace]:
    """Fit a tree boosted VCM with the scheme named in ``cfg``."""
    cfg = cfg or FitConfig()
    driver = {
        Scheme.SIMULTANEOUS: _fit_simultaneous,
        Scheme.COMPONENTWISE: fit_componentwise,
        Scheme.SERIALIZED: fit_serialized_random,
        Scheme.BOULEVARD: fit_boulevard,
    }[cfg.scheme]
    # overflow is reported through NumericError, not floating point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return driver(data, cfg)


def _fit_simultaneous(data: Dataset, cfg: FitConfig):
    st = _State(data, cfg)
    for b in range(cfg.iterations):
        g = st.gradients(b)
        fitted = st.fit_trees({j: g[:, j] for j in range(st.p + 1)}, b, cfg.tree)
        for j, tree, out in fitted:
            st.beta[:, j] += st.rate * out
            st.holdout_add(j, tree, st.rate)
        if st.close_iteration(b, IterationRecord({j: t for j, t, _ in fitted}, b)):
            break
    return st.model(data), st.trace


def fit_componentwise(data: Dataset, cfg: FitConfig):
    """Component-wise optimal selection: one tree per iteration, the best of ``p + 1`` candidates."""
    cfg = replace(cfg, scheme=Scheme.COMPONENTWISE)
    st = _State(data, cfg)
    for b in range(cfg.iterations):
        g = st.gradients(b)
        fitted = st.fit_trees({j: g[:, j] for j in range(st.p + 1)}, b, cfg.tree)
        eta = st.eta()
        losses = np.array([st.loss.mean(eta + st.rate * out * st.x[:, j], st.y) for j, _, out in fitted])
        k = int(np.argmin(losses))
        j, tree, out = fitted[k]
        st.beta[:, j] += st.rate * out
        st.holdout_add(j, tree, st.rate)
        if st.close_iteration(b, IterationRecord({j: tree}, b), selected=j, candidates=losses):
            break
    return st.model(data), st.trace


def fit_serialized_random(data: Dataset, cfg: FitConfig):
    """Randomized serialized updates; ``cfg.iterations`` counts single-tree micro-steps."""
    cfg = replace(cfg, scheme=Scheme.SERIALIZED)
    st = _State(data, cfg)
    pick = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    for b in range(cfg.iterations):
        j = int(pick.integers(st.p + 1))
        r = st.loss.residual(st.eta(), st.y)
        gj = r * st.x[:, j]
        if not np.all(np.isfinite(gj)):
            raise NumericError(f"non-finite pseudo gradient at iteration {b + 1}")
        ((_, tree, out),) = st.fit_trees({j: gj}, b, cfg.tree)
        st.beta[:, j] += st.rate * out
        st.holdout_add(j, tree, st.rate)
        if st.close_iteration(b, IterationRecord({j: tree}, b), selected=j):
            break
    return st.model(data), st.trace


def default_truncation(g: np.ndarray) -> float:
    """Three standard deviations of the pseudo-gradient magnitudes (1.0 if degenerate)."""
    m = 3.0 * float(np.std(np.abs(g)))
    return m if m > 0 and math.isfinite(m) else 1.0


def fit_boulevard(data: Dataset, cfg: FitConfig):
    """Boulevard boosting: subsampled trees, truncated and averaged."""
    cfg = replace(cfg, scheme=Scheme.BOULEVARD)
    st = _State(data, cfg)
    tree_cfg = cfg.tree
    if tree_cfg.strategy == "cart":
        tree_cfg = replace(tree_cfg, strategy="subsampled", subsample=cfg.subsample)
    elif tree_cfg.strategy == "subsampled":
        tree_cfg = replace(tree_cfg, subsample=cfg.subsample)
    m = cfg.truncation if cfg.truncation is not None else default_truncation(st.gradients(0))
    for b in range(cfg.iterations):
        g = st.gradients(b)
        fitted = st.fit_trees({j: g[:, j] for j in range(st.p + 1)}, b, tree_cfg)
        step = np.zeros_like(st.beta)
        for j, _, out in fitted:
            step[:, j] = st.rate * np.clip(out, -m, m)
        st.beta = boulevard_update(st.beta, step, b)
        if st.hx is not None:
            hstep = np.zeros_like(st.hbeta)
            for j, tree, _ in fitted:
                hstep[:, j] = st.rate * np.clip(tree.predict(st.hz, cfg.unseen), -m, m)
            st.hbeta = boulevard_update(st.hbeta, hstep, b)
        if st.close_iteration(b, IterationRecord({j: t for j, t, _ in fitted}, b)):
            break
    return st.model(data, truncation=m), st.trace


def residual_norm(data: Dataset, model: VcmModel) -> float:
    """Unscaled L2 norm of the training residuals ``y - x^T beta(z)``."""
    if model.loss is not Loss.SQUARED_ERROR:
        raise UsageError("residual_norm is defined for the squared error loss only")
    r = data.y - model.linear_predictor(data.x, data.z)
    return float(np.sqrt(np.sum(r * r)))
