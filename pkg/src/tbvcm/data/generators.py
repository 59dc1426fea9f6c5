"""Synthetic data with known varying coefficients.

All draws come from ``numpy.random.default_rng(seed)``, i.e. the PCG64 bit
generator behind numpy's ``Generator``.  The noise term ``N(0, 0.25)`` is read
as variance 0.25 (standard deviation 0.5).

Every generator attaches the true coefficients (raw units, intercept first)
as ``Dataset.truth``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ActionSchema, Column, Dataset, Task, sigmoid
from ..errors import UsageError

NOISE_SD = 0.5

VCM2D_LOW = np.array([0.0, 1.0, 3.0, -5.0])
VCM2D_HIGH = np.array([0.0, 0.0, 10.0, 0.0])

# branch -> coefficients (intercept, x1..x7), in the order the rules are tried
HIGHORDER_BRANCHES = np.array([
    [1, 3, 7, 0, 0, 0, 0, 0],       # z1 < 4
    [-5, 2, 4, 6, 0, 0, 0, 0],      # z1 > 8
    [5, 0, 5, 5, 0, 0, 0, 0],       # z2 in {1, 3, 5}
    [10, 0, 0, 0, 10, 0, 0, 0],     # z3 < 0.5
    [10, 0, 0, 0, 0, 10, 0, 0],     # z4 < 0.4
    [5, 0, -5, -10, 0, 0, 0, 0],    # z3 < z4
    [0, -10, 0, 10, 0, 0, 0, 0],    # otherwise
], dtype=float)


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    seed: int = 0
    literal: bool = False

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise UsageError(f"unknown generator {self.kind!r}; choose from {sorted(GENERATORS)}")
        if self.n < 1:
            raise UsageError("n must be >= 1")

    def generate(self) -> Dataset:
        if self.kind == "vcm2d-logit":
            return gen_vcm2d_logit(self.n, self.seed, literal=self.literal)
        return GENERATORS[self.kind](self.n, self.seed)


def _check_n(n):
    if int(n) < 1:
        raise UsageError("n must be >= 1")
    return int(n)


def vcm2d_truth(z) -> np.ndarray:
    z = np.atleast_2d(z)
    low = (z[:, 0] + z[:, 1]) < 1.0
    return np.where(low[:, None], VCM2D_LOW, VCM2D_HIGH)


def gen_vcm2d(n: int, seed: int = 0) -> Dataset:
    """Two-region coefficients split along the diagonal ``z1 + z2 = 1``."""
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 3))
    z = rng.uniform(size=(n, 2))
    eps = rng.normal(0.0, NOISE_SD, size=n)
    design = np.column_stack([np.ones(n), x])
    truth = vcm2d_truth(z)
    y = np.sum(design * truth, axis=1) + eps
    return Dataset(design, z, y, Task.REGRESSION, ActionSchema.continuous(["z1", "z2"]),
                   x_names=("x1", "x2", "x3"), truth=truth, generator="vcm2d")


def gen_vcm2d_logit(n: int, seed: int = 0, literal: bool = False) -> Dataset:
    """Binary version of :func:`gen_vcm2d`.

    ``literal=False``: logit P(Y=1) is the regional linear term.
    ``literal=True``: logit P(Y=1) is the exponential of that term.
    """
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 3))
    z = rng.uniform(size=(n, 2))
    design = np.column_stack([np.ones(n), x])
    truth = vcm2d_truth(z)
    eta = np.sum(design * truth, axis=1)
    if literal:
        eta = np.exp(eta)
    y = (rng.uniform(size=n) < sigmoid(eta)).astype(float)
    return Dataset(design, z, y, Task.CLASSIFICATION, ActionSchema.continuous(["z1", "z2"]),
                   x_names=("x1", "x2", "x3"), truth=truth,
                   generator="vcm2d-logit-literal" if literal else "vcm2d-logit")


def highorder_branch(z) -> np.ndarray:
    """Index (0..6) of the first matching rule for each action row."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    z1, z2, z3, z4 = z.T
    conds = [z1 < 4, z1 > 8, np.isin(z2, (1, 3, 5)), z3 < 0.5, z4 < 0.4, z3 < z4]
    return np.select(conds, list(range(6)), default=6)


def gen_highorder(n: int, seed: int = 0, categorical: bool = False) -> Dataset:
    """Seven linear regimes selected by a nested rule over four action covariates.

    ``categorical=True`` declares ``z1`` and ``z2`` categorical with levels
    ``"1" .. "10"`` (codes 0..9) instead of treating them as numbers.
    """
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    z12 = rng.integers(1, 11, size=(n, 2)).astype(float)
    z34 = rng.uniform(size=(n, 2))
    x = rng.standard_normal(size=(n, 7))
    eps = rng.normal(0.0, NOISE_SD, size=n)
    z = np.column_stack([z12, z34])
    truth = HIGHORDER_BRANCHES[highorder_branch(z)]
    design = np.column_stack([np.ones(n), x])
    y = np.sum(design * truth, axis=1) + eps
    if categorical:
        levels = tuple(str(k) for k in range(1, 11))
        schema = ActionSchema((Column("z1", levels), Column("z2", levels), Column("z3"), Column("z4")))
        z = z.copy()
        z[:, :2] -= 1
    else:
        schema = ActionSchema.continuous(["z1", "z2", "z3", "z4"])
    return Dataset(design, z, y, Task.REGRESSION, schema,
                   x_names=tuple(f"x{k}" for k in range(1, 8)), truth=truth, generator="highorder")


GENERATORS = {
    "vcm2d": gen_vcm2d,
    "vcm2d-logit": gen_vcm2d_logit,
    "highorder": gen_highorder,
}


# ---- distance of an action row to the nearest true discontinuity ----------

def _vcm2d_seam(z):
    z = np.atleast_2d(z)
    return np.abs(z[:, 0] + z[:, 1] - 1.0) / np.sqrt(2.0)


def _highorder_seam(z):
    z = np.atleast_2d(z)
    z3, z4 = z[:, 2], z[:, 3]
    return np.minimum.reduce([np.abs(z3 - 0.5), np.abs(z4 - 0.4), np.abs(z3 - z4)])


SEAMS = {
    "vcm2d": (_vcm2d_seam, 0.2),
    "vcm2d-logit": (_vcm2d_seam, 0.2),
    "vcm2d-logit-literal": (_vcm2d_seam, 0.2),
    "highorder": (_highorder_seam, 0.05),
}
