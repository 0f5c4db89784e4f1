"""Rate certificates, analysed step-size schedules and variance diagnostics.

The certificate of a constant schedule ``(eta, beta, m, b)`` is the backward
recursion

    c_m = 0,   c_t = c_{t+1} (1 + theta) + eta^2 L^3 / b,   theta = eta beta + 2 eta^2 L^2 / b

together with ``Gamma_t = eta - c_{t+1} eta / beta - eta^2 L - 2 c_{t+1} eta^2``
and ``gamma_n = min_t Gamma_t``. A schedule is certified when every ``Gamma_t``
is positive.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from .oracle import ContractViolation, FiniteSum

DEFAULT_MU = 0.25
DEFAULT_NU = 1.0 / 40.0

# sequences longer than this are streamed rather than stored
MATERIALIZE_LIMIT = 2_000_000


# steps composed into one affine map when streaming very long sequences
_BLOCK = 4096


@numba.njit(cache=True)
def _advance(theta, k, steps, s, comp):
    # c <- c + (theta c + k), repeated, with Neumaier compensation so that
    # long runs keep full relative accuracy despite fl(1 + theta) rounding.
    for _ in range(steps):
        inc = theta * (s + comp) + k
        tot = s + inc
        if abs(s) >= abs(inc):
            comp += (s - tot) + inc
        else:
            comp += (inc - tot) + s
        s = tot
    return s, comp


@numba.njit(cache=True)
def _recurse_stream(theta, k, m):
    # Returns (c_0, c_1, monotone). The step map F(c) = (1 + theta) c + k is
    # affine, so _BLOCK steps compose to c + (d c + e) with d and e obtained
    # by running the same recursion from zero (increments theta and k).
    d, dc = _advance(theta, theta, _BLOCK, 0.0, 0.0)
    e, ec = _advance(theta, k, _BLOCK, 0.0, 0.0)
    d += dc
    e += ec
    steps = m - 1
    s, comp = _advance(theta, k, steps % _BLOCK, 0.0, 0.0)
    monotone = True
    for _ in range(steps // _BLOCK):
        inc = d * (s + comp) + e
        monotone &= inc > 0.0
        tot = s + inc
        if abs(s) >= abs(inc):
            comp += (s - tot) + inc
        else:
            comp += (inc - tot) + s
        s = tot
    c1 = s + comp
    s, comp = _advance(theta, k, 1, s, comp)
    return s + comp, c1, monotone


@numba.njit(cache=True)
def _recurse_fill(theta, k, m, eta, beta, L, c, gamma):
    s = 0.0
    comp = 0.0
    c[m] = 0.0
    for t in range(m - 1, -1, -1):
        c_next = s + comp
        gamma[t] = eta - c_next * eta / beta - eta * eta * L - 2.0 * c_next * eta * eta
        inc = theta * c_next + k
        tot = s + inc
        if abs(s) >= abs(inc):
            comp += (s - tot) + inc
        else:
            comp += (inc - tot) + s
        s = tot
        c[t] = s + comp


@dataclass(frozen=True)
class RateCertificate:
    """Backward-recursion certificate for a constant schedule.

    ``c`` (length ``m + 1``, indexed by ``t``) and ``gamma`` (length ``m``)
    are stored only when ``m`` is small enough to materialise; ``c0``, ``c1``
    and ``gamma_n`` are always available.
    """

    eta: float
    beta: float
    L: float
    m: int
    b: int
    theta: float
    c0: float
    c1: float
    c0_closed_form: float
    gamma_n: float
    valid: bool
    monotone: bool
    n: Optional[int] = None
    c: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    gamma: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def recursion_gap(self) -> float:
        """Relative gap between the recursed and closed-form ``c_0``."""
        if self.c0_closed_form == 0:
            return abs(self.c0)
        return abs(self.c0 - self.c0_closed_form) / abs(self.c0_closed_form)


def closed_form_c0(eta: float, beta: float, L: float, m: int, b: int = 1) -> float:
    """``c_0 = (eta^2 L^3 / b) ((1 + theta)^m - 1) / theta``, via expm1/log1p."""
    theta = eta * beta + 2.0 * eta * eta * L * L / b
    k = eta * eta * L ** 3 / b
    exponent = m * math.log1p(theta)
    if exponent > 700.0:
        raise OverflowError(
            f"(1 + theta)^m overflows (m log(1 + theta) = {exponent:.1f}); use a smaller m or eta")
    return k * math.expm1(exponent) / theta


def compute_c_sequence(eta: float, beta: float, L: float, m: int, b: int = 1,
                       n: Optional[int] = None, materialize: Optional[bool] = None) -> RateCertificate:
    """Run the ``c_t`` recursion and evaluate ``Gamma_t`` for every ``t < m``.

    Raises:
      ContractViolation: nonpositive ``eta``, ``beta`` or ``L``, or ``m, b < 1``.
      OverflowError: ``(1 + theta)^m`` is not representable.
    """
    if not (eta > 0 and beta > 0 and L > 0):
        raise ContractViolation("eta, beta and L must be positive")
    if m < 1 or b < 1:
        raise ContractViolation("m and b must be at least 1")
    m = int(m)
    theta = eta * beta + 2.0 * eta * eta * L * L / b
    k = eta * eta * L ** 3 / b
    c0_closed = closed_form_c0(eta, beta, L, m, b)
    if materialize is None:
        materialize = m <= MATERIALIZE_LIMIT
    if materialize:
        c = np.empty(m + 1)
        gamma = np.empty(m)
        _recurse_fill(theta, k, m, eta, beta, L, c, gamma)
        c0, c1 = float(c[0]), float(c[1])
        gamma_n = float(gamma.min())
        monotone = bool(np.all(np.diff(c) < 0))
    else:
        c, gamma = None, None
        # Gamma_t decreases in c_{t+1} and c_t decreases in t, so the
        # minimum sits at t = 0
        c0, c1, monotone = _recurse_stream(theta, k, m)
        gamma_n = eta - c1 * eta / beta - eta * eta * L - 2.0 * c1 * eta * eta
    if not math.isfinite(c0):
        raise OverflowError("c recursion overflowed; use a smaller m or eta")
    return RateCertificate(
        eta=eta, beta=beta, L=L, m=m, b=b, theta=theta, c0=float(c0), c1=float(c1),
        c0_closed_form=c0_closed, gamma_n=float(gamma_n), valid=bool(gamma_n > 0),
        monotone=bool(monotone), n=n, c=c, gamma=gamma)


class ScheduleParams(NamedTuple):
    eta: float
    beta: float
    m: int


def _floor(value: float) -> int:
    # guards against pow() landing a hair below an exact integer
    return int(math.floor(value * (1.0 + 1e-12)))


def theoretical_svrg_params(n: int, L: float, alpha: float, mu0: float = DEFAULT_MU) -> ScheduleParams:
    """``eta = mu0 / (L n^alpha)``, ``beta = L / n^(alpha/2)``, ``m = floor(n^(3 alpha/2) / (3 mu0))``."""
    if not 0 < mu0 < 1:
        raise ContractViolation("mu0 must lie in (0, 1)")
    if not 0 < alpha <= 1:
        raise ContractViolation("alpha must lie in (0, 1]")
    if n < 1 or not L > 0:
        raise ContractViolation("need n >= 1 and L > 0")
    alpha = float(alpha)
    eta = mu0 / (L * n ** alpha)
    beta = L / n ** (alpha / 2.0)
    m = _floor(n ** (1.5 * alpha) / (3.0 * mu0))
    if m < 1:
        raise ContractViolation("epoch length floors to 0; use a larger n or a smaller mu0")
    return ScheduleParams(eta, beta, m)


def theoretical_minibatch_params(n: int, L: float, b: int, mu2: float = DEFAULT_MU) -> ScheduleParams:
    """``eta = mu2 b / (L n^(2/3))``, ``beta = L / n^(1/3)``, ``m = floor(n / (3 b mu2))``.

    Valid only for mini-batches smaller than ``n^(2/3)``.
    """
    if not 0 < mu2 < 1:
        raise ContractViolation("mu2 must lie in (0, 1)")
    if n < 1 or not L > 0:
        raise ContractViolation("need n >= 1 and L > 0")
    if not 1 <= b < n ** (2.0 / 3.0):
        raise ContractViolation(f"mini-batch size must satisfy 1 <= b < n^(2/3) = {n ** (2 / 3):.3f}")
    n23 = n ** (2.0 / 3.0)
    eta = mu2 * b / (L * n23)
    beta = L / n ** (1.0 / 3.0)
    m = _floor(n / (3.0 * b * mu2))
    if m < 1:
        raise ContractViolation("epoch length floors to 0; use a smaller b or mu2")
    return ScheduleParams(eta, beta, m)


def sgd_step_size(f_gap: float, L: float, sigma: float, T: int) -> float:
    """Constant step ``c / sqrt(T)`` with ``c = sqrt(2 f_gap / (L sigma^2))``."""
    if not (f_gap > 0 and L > 0 and sigma > 0 and T > 0):
        raise ContractViolation("f_gap, L, sigma and T must all be positive")
    c = math.sqrt(2.0 * f_gap / (L * sigma * sigma))
    return c / math.sqrt(T)


def msvrg_step_size(n: int, L: float, sigma: float, f_gap: float, T: float,
                    mu1: float = DEFAULT_MU):
    """Max rule ``eta = max(c / sqrt(T), mu1 / (L n^(2/3)))``, ``c = sqrt(f_gap / (2 L sigma^2))``.

    Returns ``(eta, branch, eta_sgd, eta_svrg)`` where ``branch`` is ``"sgd"``
    when the ``c/sqrt(T)`` term is strictly larger and ``"svrg"`` otherwise.
    """
    if not (sigma > 0 and f_gap > 0):
        raise ContractViolation("sigma and f_gap must be positive")
    c = math.sqrt(f_gap / (2.0 * L * sigma * sigma))
    eta_sgd = c / math.sqrt(T)
    eta_svrg = mu1 / (L * n ** (2.0 / 3.0))
    if eta_sgd > eta_svrg:
        return eta_sgd, "sgd", eta_sgd, eta_svrg
    return eta_svrg, "svrg", eta_sgd, eta_svrg


def msvrg_crossover(n: int, L: float, sigma: float, f_gap: float, mu1: float = DEFAULT_MU) -> float:
    """Horizon ``T* = c^2 L^2 n^(4/3) / mu1^2`` at which both branches coincide."""
    c = math.sqrt(f_gap / (2.0 * L * sigma * sigma))
    return c * c * L * L * n ** (4.0 / 3.0) / (mu1 * mu1)


def msvrg_nu_bar(mu1: float = DEFAULT_MU, nu1: float = DEFAULT_NU) -> float:
    return max(2.0 * nu1 / mu1, mu1 / (2.0 * nu1))


# ---------------------------------------------------------------------------
# Certificate reports
# ---------------------------------------------------------------------------

CSV_HEADER = ("n", "alpha", "b", "eta", "beta", "m", "gamma_n", "bound", "valid")


@dataclass(frozen=True)
class CertificateReport:
    n: int
    alpha: float
    b: int
    mu: float
    nu: float
    certificate: RateCertificate
    bound: float
    c0_bound: float

    @property
    def valid(self) -> bool:
        return self.certificate.valid

    @property
    def meets_bound(self) -> bool:
        return self.certificate.gamma_n >= self.bound

    def csv_row(self) -> list:
        c = self.certificate
        return [self.n, repr(self.alpha), self.b, repr(c.eta), repr(c.beta), c.m,
                repr(c.gamma_n), repr(self.bound), str(self.valid).lower()]

    def to_text(self) -> str:
        c = self.certificate
        lines = [
            f"schedule   n={self.n} alpha={self.alpha:.6g} b={self.b} mu={self.mu:g}",
            f"           eta={c.eta:.6e} beta={c.beta:.6e} m={c.m} theta={c.theta:.6e}",
            f"c_0        recursion={c.c0:.12e} closed-form={c.c0_closed_form:.12e} "
            f"rel-gap={c.recursion_gap:.2e}",
            f"           upper bound {self.c0_bound:.6e} ({'ok' if c.c0 <= self.c0_bound else 'EXCEEDED'})",
            f"gamma_n    {c.gamma_n:.6e}  (required >= {self.bound:.6e} with nu={self.nu:g}: "
            f"{'ok' if self.meets_bound else 'NOT MET'})",
            f"valid      {'yes' if self.valid else 'NO'} (all Gamma_t > 0)",
        ]
        return "\n".join(lines)


def certify(n: int, L: float, alpha: float = 2.0 / 3.0, b: int = 1,
            mu: float = DEFAULT_MU, nu: float = DEFAULT_NU) -> CertificateReport:
    """Certificate for the analysed schedule of ``(n, L, alpha, b, mu)``.

    ``b = 1`` uses the general-``alpha`` schedule; ``b > 1`` uses the
    mini-batch schedule, which is stated for ``alpha = 2/3`` only.
    """
    if b == 1:
        eta, beta, m = theoretical_svrg_params(n, L, alpha, mu)
        bound = nu / (L * n ** alpha)
        c0_bound = n ** (-alpha / 2.0) * mu * L * (math.e - 1.0)
    else:
        if abs(alpha - 2.0 / 3.0) > 1e-12:
            raise ContractViolation("mini-batch schedules are defined for alpha = 2/3 only")
        eta, beta, m = theoretical_minibatch_params(n, L, b, mu)
        bound = nu * b / (L * n ** (2.0 / 3.0))
        c0_bound = n ** (-1.0 / 3.0) * mu * L * (math.e - 1.0)
    cert = compute_c_sequence(eta, beta, L, m, b, n=n)
    return CertificateReport(n=n, alpha=float(alpha), b=b, mu=mu, nu=nu, certificate=cert,
                             bound=bound, c0_bound=c0_bound)


def parse_fraction(text: str) -> float:
    return float(Fraction(text))


# ---------------------------------------------------------------------------
# Variance diagnostics and supporting inequalities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceDiagnostic:
    mean_sq: float
    bound: float
    variance: float
    exact: bool
    batches: int
    stderr: Optional[float] = None

    @property
    def holds(self) -> bool:
        return self.mean_sq <= self.bound + 1e-9


def variance_diagnostic(problem: FiniteSum, x, x_snapshot, b: int = 1, *,
                        full_batch: bool = False, monte_carlo: bool = False,
                        samples: int = 100_000, seed: int = 0,
                        max_enumeration: int = 10 ** 6) -> VarianceDiagnostic:
    """Second moment of the variance-reduced direction and its upper bound.

    The direction for batch ``I`` is ``mean_{i in I}(grad f_i(x) - grad f_i(x_snap)) + grad f(x_snap)``.
    All ``n^b`` ordered batches drawn with replacement are enumerated when
    ``n^b <= max_enumeration``; otherwise ``monte_carlo=True`` is required and
    the moment is estimated with a standard error. ``full_batch`` uses the
    single batch ``{0..n-1}``, which makes the direction deterministic.
    The bound is ``2 ||grad f(x)||^2 + (2 L^2 / b) ||x - x_snap||^2``.
    """
    x = np.asarray(x, dtype=np.float64)
    xs = np.asarray(x_snapshot, dtype=np.float64)
    if x.shape != (problem.d,) or xs.shape != (problem.d,):
        raise ContractViolation("x and x_snapshot must have the problem dimension")
    if b < 1:
        raise ContractViolation("batch size must be at least 1")
    all_idx = np.arange(problem.n)
    diffs = problem.component_gradients(all_idx, x) - problem.component_gradients(all_idx, xs)
    g_snap = problem.component_gradients(all_idx, xs).mean(axis=0)
    g_x = problem.component_gradients(all_idx, x).mean(axis=0)
    delta = x - xs
    eff_b = problem.n if full_batch else b
    bound = 2.0 * float(g_x @ g_x) + 2.0 * problem.L ** 2 / eff_b * float(delta @ delta)

    if full_batch:
        u = diffs.mean(axis=0) + g_snap
        return VarianceDiagnostic(float(u @ u), bound, 0.0, True, 1)

    total = problem.n ** b
    if total <= max_enumeration:
        acc = 0.0
        acc_mean = np.zeros(problem.d)
        chunk = max(1, 200_000 // b)
        batches = itertools.product(range(problem.n), repeat=b)
        while True:
            block = np.array(list(itertools.islice(batches, chunk)), dtype=np.int64)
            if block.size == 0:
                break
            u = diffs[block].mean(axis=1) + g_snap
            acc += float(np.einsum("ij,ij->", u, u))
            acc_mean += u.sum(axis=0)
        mean_sq = acc / total
        mean_u = acc_mean / total
        return VarianceDiagnostic(mean_sq, bound, mean_sq - float(mean_u @ mean_u), True, total)

    if not monte_carlo:
        raise ContractViolation(
            f"enumerating {problem.n}^{b} batches is infeasible; pass monte_carlo=True")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, problem.n, size=(samples, b))
    u = diffs[idx].mean(axis=1) + g_snap
    sq = np.einsum("ij,ij->i", u, u)
    mean_u = u.mean(axis=0)
    return VarianceDiagnostic(float(sq.mean()), bound, float(sq.mean() - mean_u @ mean_u), False,
                              samples, stderr=float(sq.std(ddof=1) / math.sqrt(samples)))


def convex_variance_bound(problem: FiniteSum, x, x_snapshot, f_star: Optional[float] = None):
    """Enumerated ``E||v||^2`` and ``4L [f(x) - f* + f(x_snap) - f*]`` for convex components."""
    f_star = problem.f_star if f_star is None else f_star
    if f_star is None:
        raise ContractViolation("the optimal value is required")
    diag = variance_diagnostic(problem, x, x_snapshot, 1)
    bound = 4.0 * problem.L * (problem.value(x) - f_star + problem.value(x_snapshot) - f_star)
    return diag.mean_sq, bound


def bregman_gap(problem: FiniteSum, i: int, x, y):
    """``(||grad g(x) - grad g(y)||^2, 2L [g(x) - g(y) - <grad g(y), x - y>])`` for ``g = f_i``."""
    idx = np.array([i])
    gx = problem.component_gradients(idx, x)[0]
    gy = problem.component_gradients(idx, y)[0]
    lhs = float((gx - gy) @ (gx - gy))
    gap = float(problem.component_values(idx, x)[0] - problem.component_values(idx, y)[0] - gy @ (x - y))
    return lhs, 2.0 * problem.L * gap


def sum_norm_inequality(zs: Sequence[np.ndarray]):
    """``(||z_1 + ... + z_r||^2, r (||z_1||^2 + ... + ||z_r||^2))``."""
    zs = [np.asarray(z, dtype=np.float64) for z in zs]
    s = np.sum(zs, axis=0)
    return float(s @ s), len(zs) * float(sum(z @ z for z in zs))


@dataclass(frozen=True)
class DominanceReport:
    passed: Optional[bool]
    worst_ratio: float
    checked: int
    skipped: int


def gradient_dominance_check(problem: FiniteSum, tau: float, points, f_star: Optional[float] = None,
                             tol: float = 1e-9) -> DominanceReport:
    """Scan ``(f(x) - f*) / ||grad f(x)||^2`` over ``points``.

    ``passed`` is ``None`` when only a lower bound on ``f*`` is known, since no
    claim can then be made. Points with ``||grad f||^2 < 1e-12`` are skipped.
    """
    exact = True
    if f_star is None:
        f_star = problem.f_star
    if f_star is None:
        f_star = problem.f_star_lower_bound
        exact = False
    if f_star is None:
        raise ContractViolation("f* or a lower bound on it is required")
    worst = -math.inf
    checked = skipped = 0
    for x in points:
        gsq = problem.grad_norm_sq(np.asarray(x, dtype=np.float64))
        if gsq < 1e-12:
            skipped += 1
            continue
        checked += 1
        worst = max(worst, (problem.value(x) - f_star) / gsq)
    passed = (worst <= tau + tol) if exact else None
    return DominanceReport(passed=passed, worst_ratio=worst, checked=checked, skipped=skipped)
