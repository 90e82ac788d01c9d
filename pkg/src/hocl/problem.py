"""Learning problem: datasets, linear-in-parameter models, training loss and
the validation map used by the leader's target set.

All losses use the squared error ``l(a, b) = (a - b)**2 / 2`` averaged over
the samples, so for a design matrix ``D`` (rows ``h(x_i)``) we have::

    J0(theta)      = |D theta - y|^2 / (2 m)
    grad J0(theta) = D^T (D theta - y) / m
    hess J0        = D^T D / m          (constant)
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import ControlPartition, TimeGrid


class DimensionError(ValueError):
    pass


# --------------------------------------------------------------------------
# datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    """``m`` samples of ``d`` real features with one real label each."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DimensionError(f"features must be a matrix, got shape {X.shape}")
        if X.shape[0] < 1:
            raise DimensionError("a dataset needs at least one sample")
        if y.shape[0] != X.shape[0]:
            raise DimensionError(
                f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains NaN or Inf")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


def load_dataset(path, header: bool = True) -> Dataset:
    """Read a CSV whose last column is the label and the rest are features."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(c) for c in r] for r in rows])
    if data.shape[1] < 2:
        raise DimensionError(f"{path}: need at least one feature and a label")
    return Dataset(data[:, :-1], data[:, -1])


def save_dataset(ds: Dataset, path, header: bool = True) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(ds.d)] + ["y"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def bootstrap_indices(m0: int, m1: int, m2: int, seed: int,
                      with_replacement: bool) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the training and validation splits.

    The stream is numpy's PCG64 seeded with ``seed``. With replacement the
    first ``m1`` draws of ``Generator.integers(0, m0)`` index the training
    split and the next ``m2`` the validation split. Without replacement a
    single ``Generator.permutation(m0)`` is cut into ``[:m1]`` and
    ``[m1:m1+m2]``.
    """
    if m1 <= 0 or m2 <= 0:
        raise ValueError("empty split")
    if not with_replacement and m1 + m2 > m0:
        raise ValueError(f"insufficient samples: {m1}+{m2} > {m0}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if with_replacement:
        i1 = rng.integers(0, m0, size=m1)
        i2 = rng.integers(0, m0, size=m2)
    else:
        perm = rng.permutation(m0)
        i1, i2 = perm[:m1], perm[m1:m1 + m2]
    return i1, i2


def bootstrap_split(z0: Dataset, m1: int, m2: int, seed: int,
                    with_replacement: bool = False) -> tuple[Dataset, Dataset]:
    i1, i2 = bootstrap_indices(z0.m, m1, m2, seed, with_replacement)
    return z0.take(i1), z0.take(i2)


# --------------------------------------------------------------------------
# hypothesis class

# (pattern, number of leading groups that are feature indices, column builder)
_BASIS_PATTERNS = [
    (re.compile(r"^1$"), 0, lambda X, g: np.ones(X.shape[0])),
    (re.compile(r"^x(\d+)$"), 1, lambda X, g: X[:, g[0]]),
    (re.compile(r"^x(\d+)\^(\d+)$"), 1, lambda X, g: X[:, g[0]] ** g[1]),
    (re.compile(r"^x(\d+)\*x(\d+)$"), 2, lambda X, g: X[:, g[0]] * X[:, g[1]]),
    (re.compile(r"^sin\(x(\d+)\)$"), 1, lambda X, g: np.sin(X[:, g[0]])),
    (re.compile(r"^cos\(x(\d+)\)$"), 1, lambda X, g: np.cos(X[:, g[0]])),
    (re.compile(r"^exp\(x(\d+)\)$"), 1, lambda X, g: np.exp(X[:, g[0]])),
]


def _basis_column(name: str, X: np.ndarray) -> np.ndarray:
    for pat, n_idx, fn in _BASIS_PATTERNS:
        mt = pat.match(name.replace(" ", ""))
        if mt:
            g = [int(v) for v in mt.groups()]
            if any(j >= X.shape[1] for j in g[:n_idx]):
                raise DimensionError(f"basis {name!r} refers to a missing feature")
            return fn(X, g)
    raise ValueError(f"unknown basis function {name!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Linear-in-parameters hypothesis ``h(x) = phi(x) . theta``.

    ``kind="linear"`` uses the raw features (``p = d``); ``kind="fixed-basis"``
    maps each sample through the named basis functions, e.g.
    ``("1", "x0", "x0^2", "sin(x1)", "x0*x1")``.
    """

    kind: str
    param_dim: int
    basis: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        if self.kind not in ("linear", "fixed-basis"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.param_dim < 1:
            raise ValueError("param_dim must be positive")
        if self.kind == "fixed-basis":
            if len(self.basis) != self.param_dim:
                raise DimensionError("fixed-basis models need one parameter per basis function")
            for b in self.basis:
                if not any(pat.match(b.replace(" ", "")) for pat, _, _ in _BASIS_PATTERNS):
                    raise ValueError(f"unknown basis function {b!r}")
        elif self.basis:
            raise ValueError("linear models take no basis list")

    @classmethod
    def linear(cls, d: int) -> "ModelSpec":
        return cls("linear", d)

    @classmethod
    def fixed_basis(cls, names: Sequence[str]) -> "ModelSpec":
        return cls("fixed-basis", len(names), tuple(names))

    def design(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "linear":
            if X.shape[1] != self.param_dim:
                raise DimensionError(
                    f"linear model with p={self.param_dim} got {X.shape[1]} features")
            return X
        return np.column_stack([_basis_column(b, X) for b in self.basis])


# --------------------------------------------------------------------------
# losses

def _check_theta(theta, p: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != p:
        raise DimensionError(f"expected a {p}-vector, got shape {theta.shape}")
    return theta


def _design(z: Dataset, model: ModelSpec | None) -> np.ndarray:
    return z.features if model is None else model.design(z.features)


def loss_J0(theta, z: Dataset, model: ModelSpec | None = None) -> float:
    """Mean squared-error loss ``(1/m) sum (h(x_i) - y_i)^2 / 2``."""
    D = _design(z, model)
    theta = _check_theta(theta, D.shape[1])
    r = D @ theta - z.labels
    return float(0.5 * np.dot(r, r) / z.m)


def grad_J0(theta, z: Dataset, model: ModelSpec | None = None) -> np.ndarray:
    """``D^T (D theta - y) / m``; accepts a batch of parameter rows."""
    D = _design(z, model)
    theta = _check_theta(theta, D.shape[1])
    r = theta @ D.T - z.labels
    return r @ D / z.m


def hvp_J0(theta, v, z: Dataset, model: ModelSpec | None = None) -> np.ndarray:
    """Hessian-vector product ``D^T D v / m`` (independent of ``theta``)."""
    D = _design(z, model)
    _check_theta(theta, D.shape[1])
    v = _check_theta(v, D.shape[1])
    return (v @ D.T) @ D / z.m


def phi(theta, z2: Dataset, model: ModelSpec | None = None) -> float:
    """Validation map: the training loss evaluated on the validation set."""
    return loss_J0(theta, z2, model)


def grad_phi(theta, z2: Dataset, model: ModelSpec | None = None) -> np.ndarray:
    return grad_J0(theta, z2, model)


# --------------------------------------------------------------------------
# full problem definition

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    model: ModelSpec
    train_set: Dataset
    valid_set: Dataset
    theta0: np.ndarray
    T: float = 1.0
    N: int = 50
    alpha: float = 1.0
    beta: float = 1.0
    gamma1: float = 0.5
    gamma2: float = 0.5
    u_max: float = 1.0
    partition: ControlPartition | None = None
    z_target: float = 0.0
    eps_tol: float = 1e-6
    name: str = field(default="", compare=False)

    def __post_init__(self):
        p = self.model.param_dim
        theta0 = _check_theta(np.array(self.theta0, dtype=float).reshape(-1), p)
        if theta0.shape != (p,):
            raise DimensionError(f"theta0 must have length {p}")
        if not np.all(np.isfinite(theta0)):
            raise ValueError("theta0 must be finite")
        theta0.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        if self.partition is None:
            object.__setattr__(self, "partition", ControlPartition.default(p))
        if not self.partition.covers(p):
            raise ValueError(f"partition does not cover 0..{p - 1} exactly")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be strictly positive")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0.0 <= g < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {g}")
        if not self.u_max >= 0:
            raise ValueError("u_max must be nonnegative")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        # validates T and N
        TimeGrid(self.T, self.N)
        # both datasets must fit the model
        self.model.design(self.train_set.features[:1])
        self.model.design(self.valid_set.features[:1])

    def replace(self, **changes) -> "ProblemSpec":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        if "theta0" not in changes and "model" in changes:
            kw["theta0"] = np.zeros(changes["model"].param_dim)
        return ProblemSpec(**kw)

    @property
    def p(self) -> int:
        return self.model.param_dim

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def mask(self, agent: str) -> np.ndarray:
        return self.partition.mask(agent, self.p)

    @cached_property
    def _train_quadratic(self) -> tuple[np.ndarray, np.ndarray]:
        D = self.model.design(self.train_set.features)
        m = self.train_set.m
        H = D.T @ D / m
        b = D.T @ self.train_set.labels / m
        H.setflags(write=False)
        b.setflags(write=False)
        return H, b

    @property
    def train_hessian(self) -> np.ndarray:
        return self._train_quadratic[0]

    @property
    def flow_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """``(H, b)`` with ``grad J0(theta) = theta @ H - b`` (``H`` symmetric)."""
        return self._train_quadratic

    def flow_gradient(self, theta: np.ndarray) -> np.ndarray:
        """``grad J0(theta, Z1)`` via the cached normal equations; batched rows ok."""
        H, b = self._train_quadratic
        return theta @ H - b

    def flow_hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        return v @ self._train_quadratic[0]

    def loss(self, theta) -> float:
        return loss_J0(theta, self.train_set, self.model)

    def phi(self, theta) -> float:
        return phi(theta, self.valid_set, self.model)

    def grad_phi(self, theta) -> np.ndarray:
        return grad_phi(theta, self.valid_set, self.model)


# --------------------------------------------------------------------------
# reference instances

def orthonormal_design(p: int) -> np.ndarray:
    """A ``p x p`` design ``D`` with ``D^T D / p = I``.

    For ``p`` a power of two this is a Sylvester-Hadamard matrix, whose Gram
    matrix is exactly ``p I`` in floating point; otherwise ``sqrt(p) I``.
    """
    if p & (p - 1) == 0:
        D = np.ones((1, 1))
        while D.shape[0] < p:
            D = np.block([[D, D], [D, -D]])
        return D
    return math.sqrt(p) * np.eye(p)


def identity_design(theta_star) -> Dataset:
    """Dataset whose training loss has gradient ``theta - theta_star``."""
    theta_star = np.asarray(theta_star, dtype=float)
    D = orthonormal_design(theta_star.size)
    return Dataset(D, D @ theta_star)


def reference_problem(p: int = 2, N: int = 50, T: float = 1.0, **overrides) -> ProblemSpec:
    """Strictly convex quadratic instance used throughout tests and demos.

    Both datasets come from the same noiseless linear model with minimizer
    ``(1, -1, 1, -1, ...)`` and an orthonormal design, so
    ``grad J0(theta) = theta - theta_star`` and ``Phi`` shares the minimizer.
    Pass ``theta_valid`` to shift the validation minimizer.
    """
    theta_star = np.array([(-1.0) ** i for i in range(p)])
    theta_val = np.asarray(overrides.pop("theta_valid", theta_star), dtype=float)
    kw = dict(
        model=ModelSpec.linear(p),
        train_set=identity_design(theta_star),
        valid_set=identity_design(theta_val),
        theta0=np.zeros(p),
        T=T, N=N, alpha=1.0, beta=1.0, gamma1=0.5, gamma2=0.5,
        u_max=1.0, z_target=0.0, eps_tol=1e-6, name="reference",
    )
    kw.update(overrides)
    return ProblemSpec(**kw)
