"""Experiment specifications read from flat INI files.

A spec has one ``[experiment]`` section, one ``[problem]`` section and one
``[algorithm.<label>]`` section per algorithm::

    [experiment]
    seeds = 0, 1, 2
    budget_passes = 20
    checkpoint_passes = 0.5
    output_dir = runs/quadratic

    [problem]
    type = quadratic
    n = 100
    d = 10
    lambda = 0.05

    [algorithm.svrg]
    method = svrg
    schedule = theoretical
    mu = 0.25

Validation collects every problem before raising, so one run of a broken
spec reports all of them.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..certificates import DEFAULT_MU, DEFAULT_NU, parse_fraction
from ..oracle import ContractViolation

OUTPUT_ENV = "SVRGKIT_OUTPUT_DIR"
DEFAULT_OUTPUT = "runs"

PROBLEM_TYPES = ("quadratic", "logistic", "mlp", "libsvm")
METHODS = ("sgd", "gd", "svrg", "gd_svrg", "msvrg")
SCHEDULES = {
    "sgd": ("constant", "sqrt_T", "inverse_t"),
    "gd": ("constant",),
    "svrg": ("theoretical", "explicit"),
    "gd_svrg": ("theoretical", "explicit"),
    "msvrg": ("theoretical",),
}


class SpecError(ContractViolation):
    """Invalid experiment spec; ``errors`` lists ``(location, message)`` pairs."""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("invalid experiment spec:\n" + "\n".join(f"  {loc}: {msg}" for loc, msg in self.errors))


@dataclass(frozen=True)
class ProblemSpec:
    type: str
    n: int = 0
    d: int = 0
    seed: int = 0
    params: Dict[str, str] = field(default_factory=dict)
    x0: str = "zeros"
    x0_seed: int = 0

    def descriptor(self) -> dict:
        out = {"type": self.type, "n": self.n, "d": self.d, "seed": self.seed,
               "x0": self.x0, "x0_seed": self.x0_seed}
        out.update(sorted(self.params.items()))
        return out


@dataclass(frozen=True)
class AlgorithmSpec:
    """One algorithm entry; unused fields keep their defaults."""

    label: str
    method: str
    schedule: str
    eta: Optional[float] = None
    eta0: Optional[float] = None
    eta_prime: float = 1.0
    m: Optional[str] = None
    batch_size: int = 1
    mode: str = "nonconvex"
    alpha: float = 2.0 / 3.0
    mu: float = DEFAULT_MU
    nu: float = DEFAULT_NU
    tau: Optional[float] = None
    K: Optional[int] = None
    warm_start_iters: int = 0
    warm_start_eta: Optional[float] = None

    @property
    def svrg_family(self) -> bool:
        return self.method in ("svrg", "gd_svrg", "msvrg")

    def resolve_m(self, n: int) -> int:
        """Epoch length; accepts an integer or ``n/<k>``."""
        text = str(self.m).replace(" ", "")
        if text.startswith("n/"):
            return max(1, n // int(text[2:]))
        return int(text)

    def echo(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class VarianceSpec:
    pairs: int = 20
    batch_sizes: Tuple[int, ...] = (1,)
    scale: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    problem: ProblemSpec
    algorithms: Tuple[AlgorithmSpec, ...]
    seeds: Tuple[int, ...]
    budget_passes: float
    checkpoint_passes: Optional[float]
    output_dir: Path
    variance: VarianceSpec = VarianceSpec()
    source: Optional[Path] = None


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


class _Reader:
    """Typed access to a section that records errors instead of raising."""

    def __init__(self, section: configparser.SectionProxy, errors: list):
        self.section = section
        self.name = section.name
        self.errors = errors
        self.used = set()

    def _get(self, key, cast, default, required):
        self.used.add(key)
        if key not in self.section:
            if required:
                self.errors.append((f"{self.name}.{key}", "missing"))
            return default
        raw = self.section[key].strip()
        try:
            return cast(raw)
        except (ValueError, ZeroDivisionError):
            self.errors.append((f"{self.name}.{key}", f"cannot parse {raw!r}"))
            return default

    def str(self, key, default=None, required=False):
        return self._get(key, str, default, required)

    def int(self, key, default=None, required=False):
        return self._get(key, int, default, required)

    def float(self, key, default=None, required=False):
        return self._get(key, parse_fraction, default, required)

    def ints(self, key, default=None, required=False):
        return self._get(key, lambda s: tuple(int(v) for v in s.replace(",", " ").split()), default, required)

    def leftovers(self):
        for key in self.section:
            if key not in self.used:
                self.errors.append((f"{self.name}.{key}", "unknown key"))


_PROBLEM_KEYS = {
    "quadratic": ("lambda", "L", "offset_scale"),
    "logistic": ("lambda_r", "flip", "row_norm"),
    "mlp": ("classes", "hidden", "reg", "activation", "separation", "L"),
    "libsvm": ("path", "lambda_r", "n_features"),
}


def _read_problem(section, errors) -> ProblemSpec:
    r = _Reader(section, errors)
    ptype = r.str("type", required=True)
    if ptype is not None and ptype not in PROBLEM_TYPES:
        errors.append(("problem.type", f"expected one of {', '.join(PROBLEM_TYPES)}"))
        ptype = None
    n = r.int("n", 0, required=ptype not in (None, "libsvm"))
    d = r.int("d", 0, required=ptype not in (None, "libsvm"))
    seed = r.int("seed", 0)
    x0 = r.str("x0", "zeros")
    x0_seed = r.int("x0_seed", 0)
    params = {}
    for key in _PROBLEM_KEYS.get(ptype, ()):
        r.used.add(key)
        if key in section:
            params[key] = section[key].strip()
    if ptype == "libsvm" and "path" not in params:
        errors.append(("problem.path", "missing"))
    if ptype is not None:
        r.leftovers()
    if ptype not in (None, "libsvm") and (n < 1 or d < 1):
        errors.append(("problem", "n and d must be positive"))
    if not (x0 in ("zeros", "init") or x0.startswith("random")):
        errors.append(("problem.x0", "expected zeros, init or random[:scale]"))
    return ProblemSpec(type=ptype or "invalid", n=n or 0, d=d or 0, seed=seed, params=params,
                       x0=x0, x0_seed=x0_seed)


def _read_algorithm(section, errors) -> Optional[AlgorithmSpec]:
    label = section.name.split(".", 1)[1]
    r = _Reader(section, errors)
    method = r.str("method", required=True)
    if method is not None and method not in METHODS:
        errors.append((f"{section.name}.method", f"expected one of {', '.join(METHODS)}"))
        method = None
    allowed = SCHEDULES.get(method, ())
    schedule = r.str("schedule", allowed[0] if allowed else None)
    if method is not None and schedule not in allowed:
        errors.append((f"{section.name}.schedule", f"{method} supports {', '.join(allowed)}"))
    spec = dict(
        eta=r.float("eta"), eta0=r.float("eta0"), eta_prime=r.float("eta_prime", 1.0),
        m=r.str("m"), batch_size=r.int("batch_size", 1), mode=r.str("mode", "nonconvex"),
        alpha=r.float("alpha", 2.0 / 3.0), mu=r.float("mu", DEFAULT_MU), nu=r.float("nu", DEFAULT_NU),
        tau=r.float("tau"), K=r.int("K"), warm_start_iters=r.int("warm_start_iters", 0),
        warm_start_eta=r.float("warm_start_eta"))
    r.leftovers()
    if method is None:
        return None
    loc = section.name
    need = []
    if schedule == "constant":
        need.append("eta")
    if schedule == "inverse_t":
        need.append("eta0")
    if method in ("svrg", "gd_svrg") and schedule == "explicit":
        need += ["eta", "m"]
    for key in need:
        if spec[key] is None:
            errors.append((f"{loc}.{key}", f"required for {method} with schedule {schedule}"))
    for key in ("eta", "eta0", "warm_start_eta"):
        if spec[key] is not None and not spec[key] > 0:
            errors.append((f"{loc}.{key}", "must be positive"))
    if spec["batch_size"] is not None and spec["batch_size"] < 1:
        errors.append((f"{loc}.batch_size", "must be at least 1"))
    if spec["mode"] not in ("nonconvex", "convex"):
        errors.append((f"{loc}.mode", "expected nonconvex or convex"))
    if spec["m"] is not None:
        text = spec["m"].replace(" ", "")
        ok = text[2:].isdigit() if text.startswith("n/") else text.isdigit()
        if not ok or text in ("0", "n/0"):
            errors.append((f"{loc}.m", "expected a positive integer or n/<k>"))
    if spec["warm_start_iters"] and spec["warm_start_eta"] is None:
        errors.append((f"{loc}.warm_start_eta", "required when warm_start_iters > 0"))
    if method == "gd_svrg" and spec["K"] is None:
        errors.append((f"{loc}.K", "required for gd_svrg"))
    if not 0 < spec["mu"] < 1:
        errors.append((f"{loc}.mu", "must lie in (0, 1)"))
    return AlgorithmSpec(label=label, method=method, schedule=schedule, **spec)


def parse_spec(text: str, source: Optional[Path] = None) -> ExperimentSpec:
    """Parse and validate a spec.

    Raises:
      SpecError: listing every problem found.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    errors: List[Tuple[str, str]] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise SpecError([("file", str(exc).splitlines()[0])]) from None
    for name in parser.sections():
        if name not in ("experiment", "problem", "variance") and not name.startswith("algorithm."):
            errors.append((name, "unknown section"))
    if "experiment" not in parser:
        errors.append(("experiment", "missing section"))
    if "problem" not in parser:
        errors.append(("problem", "missing section"))
    exp = _Reader(parser["experiment"], errors) if "experiment" in parser else None
    seeds, budget, cadence, out, name = (0,), 0.0, None, None, "experiment"
    if exp is not None:
        name = exp.str("name", source.stem if source else "experiment")
        seeds = exp.ints("seeds", (0,))
        budget = exp.float("budget_passes", 0.0, required=True)
        cadence = exp.float("checkpoint_passes")
        out = exp.str("output_dir")
        exp.leftovers()
        if not budget > 0:
            errors.append(("experiment.budget_passes", "must be positive"))
        if cadence is not None and not cadence > 0:
            errors.append(("experiment.checkpoint_passes", "must be positive"))
        if not seeds or len(set(seeds)) != len(seeds):
            errors.append(("experiment.seeds", "need distinct seeds"))
    problem = _read_problem(parser["problem"], errors) if "problem" in parser else None
    algos = [_read_algorithm(parser[s], errors) for s in parser.sections() if s.startswith("algorithm.")]
    algos = tuple(a for a in algos if a is not None)
    if not any(s.startswith("algorithm.") for s in parser.sections()):
        errors.append(("algorithm.*", "no algorithm sections"))
    variance = VarianceSpec()
    if "variance" in parser:
        v = _Reader(parser["variance"], errors)
        variance = VarianceSpec(pairs=v.int("pairs", 20), batch_sizes=v.ints("batch_sizes", (1,)),
                                scale=v.float("scale", 1.0), seed=v.int("seed", 0))
        v.leftovers()
    if problem is not None and problem.n:
        n = problem.n
        for a in algos:
            if a.svrg_family and budget > 0:
                cost = _epoch_cost_passes(a, n)
                if cost is not None and budget < cost:
                    errors.append((f"algorithm.{a.label}",
                                   f"budget of {budget:g} passes is below one epoch ({cost:g} passes)"))
    if errors:
        raise SpecError(errors)
    out_dir = Path(out) if out else default_output_dir() / name
    return ExperimentSpec(name=name, problem=problem, algorithms=algos, seeds=tuple(seeds),
                          budget_passes=float(budget), checkpoint_passes=cadence, output_dir=out_dir,
                          variance=variance, source=source)


def _epoch_cost_passes(a: AlgorithmSpec, n: int) -> Optional[float]:
    """Passes used by warm start plus one epoch, when known before building the problem."""
    warm = a.warm_start_iters / n
    if a.schedule == "explicit" and a.m is not None:
        m = a.resolve_m(n)
    elif a.method == "msvrg" or (a.method == "gd_svrg" and a.schedule == "theoretical"):
        m = math.floor(n / (3.0 * a.mu))
    elif a.schedule == "theoretical":
        # epoch length of the analysed schedule does not depend on L
        if a.batch_size > 1:
            m = math.floor(n / (3.0 * a.batch_size * a.mu))
        else:
            m = math.floor(n ** (1.5 * a.alpha) / (3.0 * a.mu))
    else:
        return None
    return warm + (n + 2 * a.batch_size * max(m, 1)) / n


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError([(str(path), f"cannot read: {exc.strerror}")]) from None
    return parse_spec(text, source=path)
