"""Turn a validated :class:`ExperimentSpec` into runs, CSV files and a manifest."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import certificates as cert
from .. import optimizers as opt
from ..oracle import RNG_ALGORITHM, ContractViolation, FiniteSum, IfoLedger, make_rng
from ..problems import (
    MlpProblem,
    NonconvexLogisticProblem,
    load_libsvm,
    make_logistic,
    make_quadratic,
    make_synthetic_classification,
)
from .config import AlgorithmSpec, ExperimentSpec, ProblemSpec, SpecError

CSV_HEADER = ("effective_passes", "ifo_calls", "f_value", "grad_norm_sq")
MANIFEST = "manifest.json"


def build_problem(spec: ProblemSpec) -> FiniteSum:
    p = spec.params
    if spec.type == "quadratic":
        return make_quadratic(spec.n, spec.d, float(p.get("lambda", 0.05)), spec.seed,
                              L=float(p.get("L", 1.0)), offset_scale=float(p.get("offset_scale", 1.0)))
    if spec.type == "logistic":
        row_norm = p.get("row_norm", "1.0")
        return make_logistic(spec.n, spec.d, lambda_r=float(p.get("lambda_r", 0.01)), seed=spec.seed,
                             flip=float(p.get("flip", 0.1)),
                             row_norm=None if row_norm == "none" else float(row_norm))
    if spec.type == "mlp":
        classes = int(p.get("classes", 3))
        rows, labels = make_synthetic_classification(spec.n, spec.d, classes, spec.seed,
                                                     separation=float(p.get("separation", 6.0)))
        return MlpProblem(rows, labels, hidden=int(p.get("hidden", 16)), reg=float(p.get("reg", 1e-3)),
                          activation=p.get("activation", "tanh"), classes=classes,
                          L=float(p["L"]) if "L" in p else None)
    if spec.type == "libsvm":
        n_features = int(p["n_features"]) if "n_features" in p else None
        rows, labels = load_libsvm(p["path"], n_features=n_features)
        return NonconvexLogisticProblem(rows, binary_labels(labels), float(p.get("lambda_r", 0.01)))
    raise ContractViolation(f"unknown problem type {spec.type!r}")


def binary_labels(labels) -> np.ndarray:
    """Map a two-valued label vector onto -1 (smaller value) and +1."""
    values = np.unique(labels)
    if len(values) != 2:
        raise ContractViolation(f"binary classification needs two label values, found {len(values)}")
    return np.where(labels == values[1], 1.0, -1.0)


def initial_point(spec: ProblemSpec, problem: FiniteSum) -> np.ndarray:
    if spec.x0 == "zeros":
        return np.zeros(problem.d)
    if spec.x0 == "init":
        if not isinstance(problem, MlpProblem):
            raise ContractViolation("x0 = init is only defined for the mlp problem")
        return problem.init_params(spec.x0_seed)
    scale = float(spec.x0.split(":", 1)[1]) if ":" in spec.x0 else 1.0
    return scale * np.random.default_rng(spec.x0_seed).normal(size=problem.d)


@dataclass
class ResolvedAlgorithm:
    """An algorithm entry with every schedule quantity fixed."""

    spec: AlgorithmSpec
    schedule: dict
    certificate: Optional[dict] = None
    svrg: Optional[opt.SvrgSchedule] = None
    checkpoint_every: Optional[int] = None
    extra: dict = field(default_factory=dict)


def _certificate_dict(report: cert.CertificateReport) -> dict:
    c = report.certificate
    return {"eta": c.eta, "beta": c.beta, "m": c.m, "b": c.b, "gamma_n": c.gamma_n,
            "required_gamma": report.bound, "valid": report.valid, "meets_bound": report.meets_bound}


def _explicit_certificate(eta: float, L: float, n: int, m: int, b: int) -> dict:
    beta = L / n ** (1.0 / 3.0)
    try:
        c = cert.compute_c_sequence(eta, beta, L, m, b, n=n)
    except OverflowError:
        return {"eta": eta, "beta": beta, "m": m, "b": b, "valid": False, "note": "c recursion overflows"}
    return {"eta": eta, "beta": beta, "m": m, "b": b, "gamma_n": c.gamma_n, "valid": c.valid}


def _f_gap(problem: FiniteSum, x0: np.ndarray) -> float:
    lower = problem.f_star if problem.f_star is not None else problem.f_star_lower_bound
    if lower is None:
        raise ContractViolation("no known lower bound on f; cannot size the step")
    return max(problem.value(x0) - lower, 1e-12)


def resolve(a: AlgorithmSpec, problem: FiniteSum, x0: np.ndarray, budget_passes: float,
            cadence: Optional[float]) -> ResolvedAlgorithm:
    """Fix all schedule quantities; theoretical schedules must pass their certificate.

    Raises:
      SpecError: the schedule cannot be built or does not fit the budget.
    """
    n, L = problem.n, problem.L
    loc = f"algorithm.{a.label}"
    budget = int(math.floor(budget_passes * n))
    b = a.batch_size
    if a.method == "sgd":
        T = budget // b
        if T < 1:
            raise SpecError([(loc, "budget allows no SGD step")])
        if a.schedule == "constant":
            sched = {"kind": "constant", "eta": a.eta}
        elif a.schedule == "inverse_t":
            sched = {"kind": "inverse_t", "eta0": a.eta0, "eta_prime": a.eta_prime}
        else:
            if problem.sigma is None:
                raise SpecError([(loc, "the sqrt_T schedule needs a gradient bound sigma")])
            eta = cert.sgd_step_size(_f_gap(problem, x0), L, problem.sigma, T)
            sched = {"kind": "sqrt_T", "eta": eta, "sigma": problem.sigma}
        sched.update(T=T, batch_size=b)
        every = max(1, round(cadence * n / b)) if cadence else max(1, n // b)
        return ResolvedAlgorithm(a, sched, checkpoint_every=every)
    if a.method == "gd":
        steps = int(budget_passes)
        if steps < 1:
            raise SpecError([(loc, "budget allows no gradient step")])
        every = max(1, round(cadence)) if cadence else 1
        return ResolvedAlgorithm(a, {"kind": "gd", "eta": a.eta, "steps": steps}, checkpoint_every=every)

    # SVRG family
    warm = a.warm_start_iters
    certificate = None
    extra = {}
    if a.method == "msvrg":
        m = cert._floor(n / (3.0 * a.mu))
        eta, b = None, 1
    elif a.method == "gd_svrg" and a.schedule == "theoretical":
        tau = a.tau if a.tau is not None else getattr(problem, "tau", None)
        if tau is None or not math.isfinite(tau):
            raise SpecError([(f"{loc}.tau", "theoretical gd_svrg needs a gradient-dominance constant")])
        try:
            svrg = opt.gd_svrg_theoretical_schedule(n, L, tau, a.mu, a.nu)
        except ContractViolation as exc:
            raise SpecError([(loc, str(exc))]) from None
        certificate = _explicit_certificate(svrg.eta, L, n, svrg.m, 1)
        extra["tau"] = tau
        eta, m, b = svrg.eta, svrg.m, 1
    elif a.schedule == "theoretical":
        try:
            report = cert.certify(n, L, a.alpha, b, a.mu, a.nu)
        except ContractViolation as exc:
            raise SpecError([(loc, str(exc))]) from None
        certificate = _certificate_dict(report)
        if not report.valid:
            raise SpecError([(loc, f"theoretical schedule fails its certificate (gamma_n={report.certificate.gamma_n:g})")])
        eta, m = report.certificate.eta, report.certificate.m
    else:
        eta, m = a.eta, a.resolve_m(n)
        certificate = _explicit_certificate(eta, L, n, m, b)
    per_epoch = n + 2 * b * m
    remaining = budget - warm
    if a.method == "gd_svrg":
        epochs = svrg.epochs if a.schedule == "theoretical" else max(remaining // per_epoch // a.K, 0)
        if a.K * epochs * per_epoch > remaining or epochs < 1:
            raise SpecError([(loc, f"{a.K} outer iterations of {epochs} epochs do not fit the budget")])
    else:
        epochs = remaining // per_epoch
        if epochs < 1:
            raise SpecError([(loc, "budget is below one epoch")])
    T = epochs * m
    if a.method == "msvrg":
        if problem.sigma is None:
            raise SpecError([(loc, "msvrg needs a gradient bound sigma")])
        extra.update(sigma=problem.sigma, f_gap=_f_gap(problem, x0))
        eta, branch, _, _ = cert.msvrg_step_size(n, L, problem.sigma, extra["f_gap"], T, a.mu)
        extra["branch"] = branch
    svrg = opt.SvrgSchedule(eta=eta, m=m, T=T, batch_size=b, mode=a.mode)
    sched = dict(svrg.echo(), kind=a.schedule)
    if warm:
        sched.update(warm_start_iters=warm, warm_start_eta=a.warm_start_eta)
    if a.method == "gd_svrg":
        sched["K"] = a.K
    every = max(1, round(cadence * n / (2 * b))) if cadence else None
    return ResolvedAlgorithm(a, sched, certificate=certificate, svrg=svrg, checkpoint_every=every, extra=extra)


def execute(r: ResolvedAlgorithm, problem: FiniteSum, x0: np.ndarray, seed: int) -> opt.RunRecord:
    """One (algorithm, seed) run."""
    a, s = r.spec, r.schedule
    if a.method == "sgd":
        if s["kind"] == "inverse_t":
            steps = opt.inverse_t_schedule(s["eta0"], s["eta_prime"], problem.n)
        else:
            steps = s["eta"]
        rec = opt.run_sgd(problem, x0, s["T"], steps, seed, batch_size=s["batch_size"],
                          checkpoint_every=r.checkpoint_every)
    elif a.method == "gd":
        rec = opt.run_gd(problem, x0, s["steps"], s["eta"], checkpoint_every=r.checkpoint_every)
    elif a.method == "gd_svrg":
        rec = opt.run_gd_svrg(problem, x0, a.K, r.svrg, seed, checkpoint_every=r.checkpoint_every)
    else:
        ledger = IfoLedger()
        rng = make_rng(seed)
        start = x0
        if a.warm_start_iters:
            warm = opt.run_sgd(problem, x0, a.warm_start_iters, a.warm_start_eta, rng, ledger=ledger)
            start = warm.x_final
        if a.method == "msvrg":
            rec = opt.run_msvrg(problem, start, r.svrg.T, r.extra["sigma"], r.extra["f_gap"], rng,
                                mu1=a.mu, checkpoint_every=r.checkpoint_every, ledger=ledger)
        else:
            rec = opt.run_svrg(problem, start, r.svrg, rng, checkpoint_every=r.checkpoint_every,
                               ledger=ledger)
        if a.warm_start_iters:
            rec.notes["warm_start_passes"] = a.warm_start_iters / problem.n
    rec.algorithm = a.label
    rec.seed = seed
    return rec


def csv_text(record: opt.RunRecord) -> str:
    """The run's checkpoints in the fixed CSV schema.

    Diverged runs get a trailing ``status`` column and a last row marking the
    point of divergence.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    diverged = record.status == "diverged"
    w.writerow(CSV_HEADER + (("status",) if diverged else ()))
    for cp in record.checkpoints:
        row = [repr(float(cp.effective_passes)), cp.ifo_calls, repr(float(cp.f_value)), repr(float(cp.grad_norm_sq))]
        w.writerow(row + (["ok"] if diverged else []))
    if diverged:
        w.writerow([repr(record.ifo_total / record.n), record.ifo_total, "nan", "nan", "diverged"])
    return buf.getvalue()


def read_run_csv(path) -> Dict[str, np.ndarray]:
    """Parse a run CSV into columns; the ``diverged`` marker row is dropped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:4]) != CSV_HEADER:
            raise ContractViolation(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = [r for r in reader if r and (len(r) < 5 or r[4] != "diverged")]
    cols = {name: np.array([float(r[j]) for r in rows]) for j, name in enumerate(CSV_HEADER)}
    cols["ifo_calls"] = cols["ifo_calls"].astype(np.int64)
    return cols


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class ExperimentResult:
    records: Dict[Tuple[str, int], opt.RunRecord]
    files: List[Path]
    manifest: Path


def _execute_task(task):
    return execute(*task)


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Run every (algorithm, seed) pair and write the CSVs and manifest.

    Every schedule is resolved (and certified, for theoretical entries)
    before the first run starts.
    """
    problem = build_problem(spec.problem)
    x0 = initial_point(spec.problem, problem)
    resolved, errors = [], []
    for a in spec.algorithms:
        try:
            resolved.append(resolve(a, problem, x0, spec.budget_passes, spec.checkpoint_passes))
        except SpecError as exc:
            errors.extend(exc.errors)
    if errors:
        raise SpecError(errors)
    out = Path(spec.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContractViolation(f"cannot create output directory {out}: {exc.strerror}") from None
    tasks = [(r, problem, x0, seed) for r in resolved for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute_task, tasks))
    else:
        results = [_execute_task(t) for t in tasks]
    records, files, runs = {}, [], []
    for (r, _, _, seed), rec in zip(tasks, results):
        name = f"{r.spec.label}_seed{seed}.csv"
        path = out / name
        path.write_text(csv_text(rec))
        records[(r.spec.label, seed)] = rec
        files.append(path)
        entry = {"algorithm": r.spec.label, "method": r.spec.method, "seed": seed, "file": name,
                 "status": rec.status, "ifo_calls": rec.ifo_total, "checkpoints": len(rec.checkpoints)}
        for key in ("branch", "output_index", "warm_start_passes"):
            if key in rec.notes:
                entry[key] = rec.notes[key]
        runs.append(entry)
    manifest = {
        "name": spec.name,
        "rng": RNG_ALGORITHM,
        "csv_header": list(CSV_HEADER),
        "seeds": list(spec.seeds),
        "budget_passes": spec.budget_passes,
        "checkpoint_passes": spec.checkpoint_passes,
        "problem": dict(spec.problem.descriptor(), L=problem.L, sigma=problem.sigma,
                        f_star=problem.f_star, n=problem.n, d=problem.d),
        "algorithms": {r.spec.label: {"method": r.spec.method, "schedule": r.schedule,
                                      "certificate": r.certificate}
                       for r in resolved},
        "runs": runs,
    }
    mpath = out / MANIFEST
    mpath.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return ExperimentResult(records=records, files=files, manifest=mpath)


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ContractViolation(f"{directory} has no {MANIFEST}")
    return json.loads(path.read_text())
