"""SGD, gradient descent, SVRG (plain and mini-batch), GD-SVRG and MSVRG.

Every optimizer is a deterministic state machine: given a problem, a start
point, a schedule and a seed it returns the same :class:`RunRecord`. IFO
calls are charged to a ledger; checkpoint evaluations (objective value and
exact gradient norm) are instrumentation and are never charged, so adding or
removing checkpoints leaves the iterate sequence untouched.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import certificates as cert
from .oracle import (
    RNG_ALGORITHM,
    ContractViolation,
    FiniteSum,
    IfoLedger,
    Oracle,
    SeedLike,
    as_vector,
    draw_indices,
    full_gradient,
    make_rng,
)

DIVERGENCE_LIMIT = 1e12
_INDEX_BLOCK = 1 << 15

StepSizes = Union[float, Sequence[float], Callable[[int], float]]


class Checkpoint(NamedTuple):
    ifo_calls: int
    effective_passes: float
    f_value: float
    grad_norm_sq: float
    step: int


@dataclass
class RunRecord:
    """Everything a run produced.

    ``x_out`` is the algorithm's output: the sampled iterate ``x_a`` for the
    SVRG family, the last iterate for SGD and GD, ``x^K`` for GD-SVRG.
    """

    algorithm: str
    n: int
    seed: Optional[int]
    checkpoints: List[Checkpoint]
    x_out: np.ndarray
    x_final: np.ndarray
    x_snapshot: Optional[np.ndarray] = None
    status: str = "ok"
    diverged_at: Optional[int] = None
    rng: str = RNG_ALGORITHM
    schedule: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    trace: Optional[List[np.ndarray]] = None
    indices: Optional[List[np.ndarray]] = None
    outer: Optional[List[Checkpoint]] = None
    ifo_total: int = 0

    @property
    def ifo_calls(self) -> np.ndarray:
        return np.array([c.ifo_calls for c in self.checkpoints])

    @property
    def effective_passes(self) -> np.ndarray:
        return np.array([c.effective_passes for c in self.checkpoints])

    @property
    def f_values(self) -> np.ndarray:
        return np.array([c.f_value for c in self.checkpoints])

    @property
    def grad_norm_sq(self) -> np.ndarray:
        return np.array([c.grad_norm_sq for c in self.checkpoints])

    def min_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.grad_norm_sq)

    @property
    def final_grad_norm_sq(self) -> float:
        return self.checkpoints[-1].grad_norm_sq


class _Recorder:
    """Collects checkpoints and guards against divergence."""

    def __init__(self, problem: FiniteSum, oracle: Oracle, every: Optional[int]):
        self.problem = problem
        self.oracle = oracle
        self.every = every
        self.points: List[Checkpoint] = []

    def due(self, step: int) -> bool:
        return self.every is not None and step % self.every == 0

    def record(self, x: np.ndarray, step: int) -> Checkpoint:
        count = self.oracle.ledger.count
        if self.points and self.points[-1].ifo_calls == count:
            return self.points[-1]
        g = self.problem.gradient(x)
        cp = Checkpoint(count, count / self.problem.n, self.problem.value(x), float(g @ g), step)
        self.points.append(cp)
        return cp


_LIMIT_SQ = DIVERGENCE_LIMIT ** 2


def _diverged(x: np.ndarray) -> bool:
    # also true for nan
    return not x @ x <= _LIMIT_SQ


def _step_fn(step_sizes: StepSizes) -> Callable[[int], float]:
    if callable(step_sizes):
        return step_sizes
    if np.ndim(step_sizes) == 0:
        eta = float(step_sizes)
        if not eta > 0:
            raise ContractViolation("step sizes must be positive")
        return lambda t: eta
    seq = np.asarray(step_sizes, dtype=np.float64)
    if np.any(seq <= 0):
        raise ContractViolation("step sizes must be positive")
    return lambda t: float(seq[t])


def constant_schedule(eta: float) -> Callable[[int], float]:
    return _step_fn(eta)


def inverse_t_schedule(eta0: float, eta_prime: float, n: int) -> Callable[[int], float]:
    """``eta_t = eta0 / (1 + eta_prime floor(t / n))``; ``eta_prime = 0`` is constant."""
    if not eta0 > 0 or eta_prime < 0:
        raise ContractViolation("need eta0 > 0 and eta_prime >= 0")
    return lambda t: eta0 / (1.0 + eta_prime * (t // n))


def _setup(problem, x0, ledger):
    if isinstance(problem, Oracle):
        oracle = problem if ledger is None else Oracle(problem.problem, ledger)
        problem = problem.problem
    else:
        oracle = Oracle(problem, ledger)
    return problem, oracle, as_vector(x0, problem.d)


# ---------------------------------------------------------------------------
# SGD and gradient descent
# ---------------------------------------------------------------------------


def run_sgd(problem, x0, T: int, step_sizes: StepSizes, seed: SeedLike, *,
            batch_size: int = 1, checkpoint_every: Optional[int] = None,
            trace: bool = False, record_indices: bool = False,
            ledger: Optional[IfoLedger] = None) -> RunRecord:
    """``x^{t+1} = x^t - eta_t grad f_{i_t}(x^t)`` with ``i_t`` uniform, ``T`` steps.

    With ``batch_size > 1`` the gradient is averaged over a batch drawn with
    replacement. Checkpoints are taken at step 0, every ``checkpoint_every``
    steps and at the end.
    """
    problem, oracle, x = _setup(problem, x0, ledger)
    if T < 1:
        raise ContractViolation("T must be at least 1")
    if batch_size < 1:
        raise ContractViolation("batch size must be at least 1")
    eta = _step_fn(step_sizes)
    rng = make_rng(seed)
    rec = _Recorder(problem, oracle, checkpoint_every)
    rec.record(x, 0)
    xs = [] if trace else None
    idx_log = [] if record_indices else None
    status, bad_step = "ok", None
    block = None
    for t in range(T):
        if t % _INDEX_BLOCK == 0:
            block = draw_indices(rng, problem.n, (min(_INDEX_BLOCK, T - t), batch_size))
        I = block[t % _INDEX_BLOCK]
        if idx_log is not None:
            idx_log.append(I.copy())
        grads = oracle.component_gradients(I, x)
        direction = grads[0] if batch_size == 1 else grads.sum(axis=0) / batch_size
        x = x - eta(t) * direction
        if _diverged(x):
            status, bad_step = "diverged", t
            break
        if xs is not None:
            xs.append(x.copy())
        if rec.due(t + 1):
            rec.record(x, t + 1)
    if status == "ok":
        rec.record(x, T)
    return RunRecord(
        algorithm="sgd", n=problem.n, seed=seed if isinstance(seed, int) else None,
        checkpoints=rec.points, x_out=x, x_final=x, status=status, diverged_at=bad_step,
        schedule={"T": T, "batch_size": batch_size,
                  "step_sizes": step_sizes if np.ndim(step_sizes) == 0 and not callable(step_sizes)
                  else getattr(step_sizes, "__name__", "custom")},
        trace=xs, indices=idx_log, ifo_total=oracle.ledger.count)


def run_gd(problem, x0, steps: int, eta: float, *, checkpoint_every: Optional[int] = 1,
           trace: bool = False, ledger: Optional[IfoLedger] = None) -> RunRecord:
    """``x^{k+1} = x^k - eta grad f(x^k)``; ``n`` IFO calls per step."""
    problem, oracle, x = _setup(problem, x0, ledger)
    if not eta > 0:
        raise ContractViolation("eta must be positive")
    if steps < 1:
        raise ContractViolation("steps must be at least 1")
    rec = _Recorder(problem, oracle, checkpoint_every)
    rec.record(x, 0)
    xs = [] if trace else None
    status, bad_step = "ok", None
    for k in range(steps):
        x = x - eta * full_gradient(oracle, x)
        if _diverged(x):
            status, bad_step = "diverged", k
            break
        if xs is not None:
            xs.append(x.copy())
        if rec.due(k + 1):
            rec.record(x, k + 1)
    if status == "ok":
        rec.record(x, steps)
    return RunRecord(algorithm="gd", n=problem.n, seed=None, checkpoints=rec.points, x_out=x,
                     x_final=x, status=status, diverged_at=bad_step,
                     schedule={"steps": steps, "eta": eta}, trace=xs,
                     ifo_total=oracle.ledger.count)


# ---------------------------------------------------------------------------
# SVRG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvrgSchedule:
    """Step sizes, epoch length, snapshot weights, batch size and horizon.

    ``snapshot_dist`` holds ``p_0..p_m``. When omitted it follows ``mode``:
    ``"nonconvex"`` puts all mass on the last inner iterate, ``"convex"``
    spreads it uniformly over ``x_0..x_{m-1}``.
    """

    eta: Union[float, tuple]
    m: int
    T: int
    batch_size: int = 1
    mode: str = "nonconvex"
    snapshot_dist: Optional[tuple] = None

    def __post_init__(self):
        if self.m < 1 or self.T < 1:
            raise ContractViolation("m and T must be at least 1")
        if self.batch_size < 1:
            raise ContractViolation("batch size must be at least 1")
        if self.mode not in ("nonconvex", "convex"):
            raise ContractViolation("mode must be 'nonconvex' or 'convex'")
        if np.ndim(self.eta) == 0:
            if not float(self.eta) > 0:
                raise ContractViolation("step sizes must be positive")
        else:
            etas = tuple(float(e) for e in self.eta)
            if len(etas) != self.m or min(etas) <= 0:
                raise ContractViolation("need m positive step sizes")
            object.__setattr__(self, "eta", etas)
        if self.snapshot_dist is None:
            if self.mode == "nonconvex":
                p = (0.0,) * self.m + (1.0,)
            else:
                p = (1.0 / self.m,) * self.m + (0.0,)
            object.__setattr__(self, "snapshot_dist", p)
        else:
            p = tuple(float(v) for v in self.snapshot_dist)
            if len(p) != self.m + 1 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-12:
                raise ContractViolation("snapshot_dist must hold m+1 nonnegative weights summing to 1")
            object.__setattr__(self, "snapshot_dist", p)

    @property
    def epochs(self) -> int:
        return -(-self.T // self.m)

    def step_size(self, t: int) -> float:
        return float(self.eta) if np.ndim(self.eta) == 0 else self.eta[t]

    def ifo_per_epoch(self, n: int) -> int:
        return n + 2 * self.batch_size * self.m

    def echo(self) -> dict:
        eta = float(self.eta) if np.ndim(self.eta) == 0 else list(self.eta)
        return {"eta": eta, "m": self.m, "T": self.T, "epochs": self.epochs,
                "batch_size": self.batch_size, "mode": self.mode}

    @classmethod
    def theoretical(cls, n: int, L: float, T: int, alpha: float = 2.0 / 3.0,
                    mu: float = cert.DEFAULT_MU, batch_size: int = 1) -> "SvrgSchedule":
        """Schedule given by the general-alpha or mini-batch rate analysis.

        The certificate must be valid; an invalid one raises.
        """
        if batch_size == 1:
            eta, beta, m = cert.theoretical_svrg_params(n, L, alpha, mu)
        else:
            eta, beta, m = cert.theoretical_minibatch_params(n, L, batch_size, mu)
        c = cert.compute_c_sequence(eta, beta, L, m, batch_size, n=n)
        if not c.valid:
            raise ContractViolation(f"theoretical schedule fails its certificate (gamma_n={c.gamma_n:g})")
        return cls(eta=eta, m=m, T=T, batch_size=batch_size)


def run_svrg(problem, x0, schedule: SvrgSchedule, seed: SeedLike, *,
             checkpoint_every: Optional[int] = None, full_batch: bool = False,
             trace: bool = False, record_indices: bool = False,
             ledger: Optional[IfoLedger] = None) -> RunRecord:
    """SVRG over ``S = ceil(T/m)`` full epochs.

    Each epoch charges ``n`` for the snapshot gradient and ``2b`` per inner
    update. The snapshot ``x~ = sum_i p_i x_i`` is kept as a running weighted
    sum. The output iterate ``x_a`` is fixed by one uniform draw over all
    ``S m`` inner iterates made before the first epoch. Checkpoints are taken
    at the starting snapshot, after every epoch (at the new snapshot) and,
    if ``checkpoint_every`` is set, every that many inner steps at the current
    iterate. ``full_batch`` replaces every mini-batch by all ``n`` indices
    (diagnostic mode).
    """
    problem, oracle, x = _setup(problem, x0, ledger)
    n, m = problem.n, schedule.m
    b = n if full_batch else schedule.batch_size
    S = schedule.epochs
    rng = make_rng(seed)
    pick = int(rng.integers(S * m))
    p = schedule.snapshot_dist
    constant_eta = np.ndim(schedule.eta) == 0
    eta = float(schedule.eta) if constant_eta else None
    rec = _Recorder(problem, oracle, checkpoint_every)
    x_tilde = x.copy()
    rec.record(x_tilde, 0)
    x_a = None
    xs = [] if trace else None
    idx_log = [] if record_indices else None
    all_idx = np.arange(n)
    status, bad_step = "ok", None
    epoch_f = [problem.value(x_tilde)]
    step = 0
    for s in range(S):
        g = full_gradient(oracle, x_tilde)
        acc = p[0] * x if p[0] != 0.0 else np.zeros_like(x)
        block = None if full_batch else draw_indices(rng, n, (m, b))
        for t in range(m):
            if step == pick:
                x_a = x.copy()
            I = all_idx if full_batch else block[t]
            if idx_log is not None:
                idx_log.append(I.copy())
            diff = oracle.gradient_differences(I, x, x_tilde)
            v = (diff[0] if b == 1 else diff.sum(axis=0) / b) + g
            x = x - (eta if constant_eta else schedule.eta[t]) * v
            step += 1
            if not x @ x <= _LIMIT_SQ:
                status, bad_step = "diverged", step - 1
                break
            if p[t + 1] != 0.0:
                acc = acc + p[t + 1] * x
            if xs is not None:
                xs.append(x.copy())
            if rec.due(step) and t + 1 < m:
                rec.record(x, step)
        if status != "ok":
            break
        x_tilde = acc
        if _diverged(x_tilde):
            status, bad_step = "diverged", step - 1
            break
        cp = rec.record(x_tilde, step)
        epoch_f.append(cp.f_value)
        if not math.isfinite(cp.f_value) or abs(cp.f_value) > DIVERGENCE_LIMIT:
            status, bad_step = "diverged", step - 1
            break
    if x_a is None:
        x_a = x.copy()
    return RunRecord(
        algorithm="svrg" if schedule.batch_size == 1 else "minibatch_svrg",
        n=n, seed=seed if isinstance(seed, int) else None, checkpoints=rec.points,
        x_out=x_a, x_final=x, x_snapshot=x_tilde, status=status, diverged_at=bad_step,
        schedule=schedule.echo(),
        notes={"output_index": pick, "epoch_f_values": epoch_f, "full_batch": full_batch},
        trace=xs, indices=idx_log, ifo_total=oracle.ledger.count)


def run_minibatch_svrg(problem, x0, schedule: SvrgSchedule, seed: SeedLike, **kwargs) -> RunRecord:
    """Mini-batch SVRG: the direction averages ``b`` index draws with replacement."""
    if schedule.batch_size < 1:
        raise ContractViolation("batch size must be at least 1")
    return run_svrg(problem, x0, schedule, seed, **kwargs)


# ---------------------------------------------------------------------------
# GD-SVRG and MSVRG
# ---------------------------------------------------------------------------


def gd_svrg_theoretical_schedule(n: int, L: float, tau: float, mu1: float = cert.DEFAULT_MU,
                                 nu1: float = cert.DEFAULT_NU) -> SvrgSchedule:
    """``T = ceil(2 L tau n^(2/3) / nu1)``, ``m = floor(n / (3 mu1))``, ``eta = mu1 / (L n^(2/3))``."""
    n23 = n ** (2.0 / 3.0)
    T = math.ceil(2.0 * L * tau * n23 / nu1)
    m = cert._floor(n / (3.0 * mu1))
    if m < 1:
        raise ContractViolation("epoch length floors to 0")
    eta = mu1 / (L * n23)
    c = cert.compute_c_sequence(eta, L / n ** (1.0 / 3.0), L, m, 1, n=n)
    if not c.valid:
        raise ContractViolation(f"schedule fails its certificate (gamma_n={c.gamma_n:g})")
    return SvrgSchedule(eta=eta, m=m, T=T)


def run_gd_svrg(problem, x0, K: int, schedule: Optional[SvrgSchedule] = None, seed: SeedLike = 0, *,
                tau: Optional[float] = None, mu1: float = cert.DEFAULT_MU,
                nu1: float = cert.DEFAULT_NU, checkpoint_every: Optional[int] = None,
                ledger: Optional[IfoLedger] = None) -> RunRecord:
    """Restart SVRG ``K`` times, each from the previous output ``x^k``.

    Pass an explicit ``schedule`` or, for theoretical mode, leave it ``None``
    and supply ``tau`` (defaults to ``problem.tau`` if the problem has one).
    All restarts share one random stream, so ``K = 1`` is exactly one SVRG
    call with the same seed.
    """
    problem, oracle, x = _setup(problem, x0, ledger)
    if K < 1:
        raise ContractViolation("K must be at least 1")
    status = "ok"
    notes = {}
    if schedule is None:
        tau = getattr(problem, "tau", None) if tau is None else tau
        if tau is None or not math.isfinite(tau):
            raise ContractViolation("theoretical mode needs a finite gradient-dominance constant tau")
        schedule = gd_svrg_theoretical_schedule(problem.n, problem.L, tau, mu1, nu1)
        notes.update(theoretical=True, tau=tau)
        if not tau > problem.n ** (1.0 / 3.0):
            status = "warning"
            notes["warning"] = "tau <= n^(1/3): the linear-rate guarantee does not apply"
            warnings.warn(notes["warning"], RuntimeWarning, stacklevel=2)
    elif schedule.mode != "nonconvex":
        raise ContractViolation("GD-SVRG restarts use the nonconvex snapshot distribution")
    rng = make_rng(seed)
    g0 = problem.gradient(x)
    outer = [Checkpoint(oracle.ledger.count, oracle.ledger.passes(problem.n), problem.value(x),
                        float(g0 @ g0), 0)]
    points: List[Checkpoint] = []
    inner = None
    for k in range(1, K + 1):
        inner = run_svrg(problem, x, schedule, rng, checkpoint_every=checkpoint_every,
                         ledger=oracle.ledger)
        for cp in inner.checkpoints:
            if not points or cp.ifo_calls > points[-1].ifo_calls:
                points.append(cp)
        if inner.status == "diverged":
            status = "diverged"
            break
        x = inner.x_out
        g = problem.gradient(x)
        outer.append(Checkpoint(oracle.ledger.count, oracle.ledger.passes(problem.n),
                                problem.value(x), float(g @ g), k))
    return RunRecord(algorithm="gd_svrg", n=problem.n, seed=seed if isinstance(seed, int) else None,
                     checkpoints=points, x_out=x, x_final=inner.x_final, x_snapshot=inner.x_snapshot,
                     status=status, schedule=dict(schedule.echo(), K=K), notes=notes, outer=outer,
                     ifo_total=oracle.ledger.count)


def run_msvrg(problem, x0, T: int, sigma: float, f_gap_estimate: float, seed: SeedLike, *,
              mu1: float = cert.DEFAULT_MU, checkpoint_every: Optional[int] = None,
              ledger: Optional[IfoLedger] = None) -> RunRecord:
    """SVRG with the step ``max(c / sqrt(T), mu1 / (L n^(2/3)))`` and ``m = floor(n / (3 mu1))``.

    ``T`` must be a multiple of ``m``. The record notes which branch of the
    max rule was active.
    """
    base = problem.problem if isinstance(problem, Oracle) else problem
    if not (sigma > 0 and f_gap_estimate > 0):
        raise ContractViolation("sigma and the objective-gap estimate must be positive")
    m = cert._floor(base.n / (3.0 * mu1))
    if m < 1 or T < 1 or T % m != 0:
        raise ContractViolation(f"T must be a positive multiple of m = {m}")
    eta, branch, eta_sgd, eta_svrg = cert.msvrg_step_size(base.n, base.L, sigma, f_gap_estimate, T, mu1)
    record = run_svrg(problem, x0, SvrgSchedule(eta=eta, m=m, T=T), seed,
                      checkpoint_every=checkpoint_every, ledger=ledger)
    record.algorithm = "msvrg"
    record.notes.update(branch=branch, eta=eta, eta_sgd=eta_sgd, eta_svrg=eta_svrg,
                        crossover_T=cert.msvrg_crossover(base.n, base.L, sigma, f_gap_estimate, mu1))
    return record
