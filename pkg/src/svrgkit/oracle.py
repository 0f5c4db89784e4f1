"""Finite-sum problem abstraction, IFO accounting and the randomness contract.

A problem ``f(x) = (1/n) sum_i f_i(x)`` is described by a :class:`FiniteSum`
subclass. Problems are immutable; every counted access goes through an
:class:`Oracle`, which is a view of a problem bound to an :class:`IfoLedger`.
Instrumentation (objective values, exact gradients used for reporting) goes
through the problem directly and is never charged.
"""

from __future__ import annotations

import abc
import threading
from typing import Optional, Sequence, Union

import numpy as np

RNG_ALGORITHM = "numpy.PCG64"

SeedLike = Union[int, np.random.Generator, None]


class ContractViolation(ValueError):
    """A precondition of a public operation was not met."""


class NumericError(ArithmeticError):
    """A non-finite value appeared in a component evaluation."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class IfoLedger:
    """Monotone counter of component-gradient evaluations.

    One full gradient costs exactly ``n`` units. Increments are atomic so a
    ledger may be shared by threads evaluating distinct components.
    """

    def __init__(self, count: int = 0):
        if count < 0:
            raise ContractViolation("ledger count must be nonnegative")
        self._count = int(count)
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def charge(self, units: int) -> None:
        if units < 0:
            raise ContractViolation("IFO charges are nonnegative")
        with self._lock:
            self._count += int(units)

    def passes(self, n: int) -> float:
        """Effective passes through the data: ledger count divided by ``n``."""
        return self._count / n

    def __repr__(self) -> str:
        return f"IfoLedger(count={self._count})"


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Deterministic generator for index draws.

    Integer seeds build a fresh PCG64 stream (identified by ``RNG_ALGORITHM``
    in every run record); an existing Generator is passed through so several
    runs can share one stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ContractViolation("a seed is required; runs are always reproducible")
    return np.random.Generator(np.random.PCG64(int(seed)))


def draw_indices(rng: np.random.Generator, n: int, size) -> np.ndarray:
    """Uniform indices in ``{0, ..., n-1}``, drawn with replacement."""
    return rng.integers(0, n, size=size)


def as_vector(x, d: int) -> np.ndarray:
    """Validate and copy ``x`` as a float64 parameter vector of dimension ``d``."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != d:
        raise ContractViolation(f"expected a vector of dimension {d}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("parameter vector has non-finite coordinates")
    return arr


class FiniteSum(abc.ABC):
    """Base class for ``f(x) = (1/n) sum_i f_i(x)`` over dense ``x`` in R^d.

    Subclasses implement the vectorised ``component_values`` and
    ``component_gradients`` for an index array and set ``n``, ``d`` and the
    per-component smoothness constant ``L``. ``sigma`` (a bound on every
    component gradient norm), ``f_star`` (exact optimum) and
    ``f_star_lower_bound`` are optional metadata.
    """

    n: int
    d: int
    sigma: Optional[float] = None
    f_star: Optional[float] = None
    f_star_lower_bound: Optional[float] = None
    convex_components: bool = False

    @property
    @abc.abstractmethod
    def L(self) -> float:
        ...

    @abc.abstractmethod
    def component_values(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Values ``f_i(x)`` for every ``i`` in ``idx``, shape ``(len(idx),)``."""

    @abc.abstractmethod
    def component_gradients(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Gradients ``grad f_i(x)`` stacked row-wise, shape ``(len(idx), d)``."""

    def component_gradient_differences(self, idx: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Rows ``grad f_i(x) - grad f_i(y)``; subclasses may fuse the two evaluations."""
        return self.component_gradients(idx, x) - self.component_gradients(idx, y)

    def value(self, x: np.ndarray) -> float:
        return float(np.mean(self.component_values(np.arange(self.n), x)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Exact full gradient for instrumentation; not charged to any ledger."""
        return self.component_gradients(np.arange(self.n), x).mean(axis=0)

    def grad_norm_sq(self, x: np.ndarray) -> float:
        g = self.gradient(x)
        return float(g @ g)

    def oracle(self, ledger: Optional[IfoLedger] = None) -> "Oracle":
        return Oracle(self, ledger)


class Oracle:
    """IFO view of a problem: every component gradient is charged one unit."""

    def __init__(self, problem: FiniteSum, ledger: Optional[IfoLedger] = None):
        self.problem = problem
        self.ledger = ledger if ledger is not None else IfoLedger()

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def d(self) -> int:
        return self.problem.d

    @property
    def L(self) -> float:
        return self.problem.L

    def component_value(self, i: int, x: np.ndarray) -> float:
        return float(self.problem.component_values(np.array([i]), x)[0])

    def component_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        self.ledger.charge(1)
        return self.problem.component_gradients(np.array([i]), x)[0]

    def component_gradients(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        self.ledger.charge(len(idx))
        return self.problem.component_gradients(idx, x)

    def gradient_differences(self, idx: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``grad f_i(x) - grad f_i(y)`` for each ``i``; charges ``2 len(idx)``."""
        self.ledger.charge(2 * len(idx))
        return self.problem.component_gradient_differences(idx, x, y)


def _as_oracle(obj: Union[Oracle, FiniteSum]) -> Oracle:
    return obj if isinstance(obj, Oracle) else Oracle(obj)


def _problem_of(obj: Union[Oracle, FiniteSum]) -> FiniteSum:
    return obj.problem if isinstance(obj, Oracle) else obj


def full_gradient(oracle: Oracle, x: np.ndarray) -> np.ndarray:
    """Average of all ``n`` component gradients at ``x``; charges ``n`` IFO units.

    Raises:
      ContractViolation: ``x`` has the wrong dimension.
      NumericError: some component gradient is non-finite; ``index`` names it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != oracle.d:
        raise ContractViolation(f"expected a vector of dimension {oracle.d}, got shape {x.shape}")
    grads = oracle.component_gradients(np.arange(oracle.n), x)
    if not np.all(np.isfinite(grads)):
        bad = int(np.argwhere(~np.all(np.isfinite(grads), axis=1))[0, 0])
        raise NumericError(f"component {bad} returned a non-finite gradient", index=bad)
    return grads.mean(axis=0)


def finite_difference_gradient(oracle, x, h: Optional[float] = None) -> np.ndarray:
    """Central-difference estimate of the full gradient. Never touches a ledger.

    ``h`` defaults to ``1e-6 * (1 + ||x||)``.
    """
    problem = _problem_of(oracle)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if h is None:
        h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    if not h > 0:
        raise ContractViolation("finite-difference step must be positive")
    grad = np.empty_like(x)
    e = np.zeros_like(x)
    for j in range(x.shape[0]):
        e[j] = h
        grad[j] = (problem.value(x + e) - problem.value(x - e)) / (2.0 * h)
        e[j] = 0.0
    return grad


def component_mean_gradient(problem: FiniteSum, x: np.ndarray, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """Mean of component gradients evaluated one index at a time (test oracle)."""
    order = range(problem.n) if order is None else order
    total = np.zeros(problem.d)
    for i in order:
        total += problem.component_gradients(np.array([i]), x)[0]
    return total / problem.n
