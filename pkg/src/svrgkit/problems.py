"""Concrete finite-sum instances, data ingestion and smoothness estimation."""

from __future__ import annotations

import csv
import math
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .oracle import ContractViolation, FiniteSum, make_rng

# max_x |d/dx x^2/(1+x^2)| = 3*sqrt(3)/8, attained at x = 1/sqrt(3)
_REG_GRAD_MAX = 3.0 * math.sqrt(3.0) / 8.0
# max_x |d^2/dx^2 x^2/(1+x^2)| = 2, attained at x = 0
_REG_CURV_MAX = 2.0


class LibsvmParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Quadratics
# ---------------------------------------------------------------------------


class QuadraticProblem(FiniteSum):
    """``f_i(x) = 0.5 x^T A_i x - b_i^T x`` with symmetric PSD ``A_i``.

    The mean Hessian ``M = mean(A_i)`` fixes the strong convexity modulus
    ``lam = lambda_min(M)``; for ``lam > 0`` the minimiser solves ``M x = mean(b_i)``
    and ``f`` is ``1/(2 lam)``-gradient dominated.
    """

    convex_components = True

    def __init__(self, A, b):
        A = np.array(A, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ContractViolation("A must have shape (n, d, d)")
        if b.shape != A.shape[:2]:
            raise ContractViolation("b must have shape (n, d)")
        if not np.allclose(A, np.swapaxes(A, 1, 2)):
            raise ContractViolation("component matrices must be symmetric")
        self.A = A
        self.b = b
        self.n, self.d = b.shape
        self.A_mean = A.mean(axis=0)
        self.b_mean = b.mean(axis=0)
        self.lam = float(np.linalg.eigvalsh(self.A_mean)[0])
        self._L = float(max(np.linalg.eigvalsh(Ai)[-1] for Ai in A))
        if self.lam > 0:
            self.x_star = np.linalg.solve(self.A_mean, self.b_mean)
            self.f_star = self.value(self.x_star)
            self.f_star_lower_bound = self.f_star
        else:
            self.x_star = None

    @property
    def L(self) -> float:
        return self._L

    @property
    def tau(self) -> float:
        if self.lam <= 0:
            return math.inf
        return 1.0 / (2.0 * self.lam)

    def component_values(self, idx, x):
        Ax = self.A[idx] @ x
        return 0.5 * (Ax @ x) - self.b[idx] @ x

    def component_gradients(self, idx, x):
        return self.A[idx] @ x - self.b[idx]

    def component_gradient_differences(self, idx, x, y):
        return self.A[idx] @ (x - y)


def make_quadratic(
    n: int,
    d: int,
    lambda_target: float,
    seed: int,
    L: float = 1.0,
    offset_scale: float = 1.0,
) -> QuadraticProblem:
    """Random quadratic whose mean Hessian has smallest eigenvalue ``lambda_target``.

    Each ``A_i = B_i + lambda_target I`` where the PSD parts ``B_i`` share a
    common null direction, so ``lambda_min(mean A_i)`` equals the target up to
    rounding. The ``B_i`` are scaled so that ``max_i ||A_i||_2 = L`` (only
    possible for ``d >= 2``; in one dimension ``A_i = lambda_target``).
    """
    if not lambda_target > 0:
        raise ContractViolation("lambda_target must be positive")
    if n < 1 or d < 1:
        raise ContractViolation("n and d must be at least 1")
    if d >= 2 and not L > lambda_target:
        raise ContractViolation("L must exceed lambda_target")
    rng = np.random.default_rng(seed)
    A = np.zeros((n, d, d))
    if d >= 2:
        null = rng.normal(size=d)
        null /= np.linalg.norm(null)
        P = np.eye(d) - np.outer(null, null)
        G = rng.normal(size=(n, d, d)) / math.sqrt(d)
        B = P @ G @ np.swapaxes(G, 1, 2) @ P
        B = 0.5 * (B + np.swapaxes(B, 1, 2))
        top = max(np.linalg.eigvalsh(Bi)[-1] for Bi in B)
        B *= (L - lambda_target) / top
        A += B
    A += lambda_target * np.eye(d)
    centre = offset_scale * rng.normal(size=d)
    b = A @ centre + offset_scale * rng.normal(size=(n, d))
    return QuadraticProblem(A, b)


# ---------------------------------------------------------------------------
# Logistic regression with a nonconvex regulariser
# ---------------------------------------------------------------------------


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class NonconvexLogisticProblem(FiniteSum):
    """``f_i(x) = log(1 + exp(-y_i <a_i, x>)) + lam_r sum_j x_j^2 / (1 + x_j^2)``.

    Each component is L-smooth with ``L = max_i ||a_i||^2 / 4 + 2 lam_r`` and
    has gradient norm at most ``sigma = max_i ||a_i|| + lam_r (3 sqrt 3 / 8) sqrt d``
    everywhere. The objective is bounded below by 0.
    """

    def __init__(self, rows, labels, lambda_r: float = 0.0):
        rows = np.array(rows, dtype=np.float64)
        labels = np.array(labels, dtype=np.float64)
        if rows.ndim != 2 or labels.shape != (rows.shape[0],):
            raise ContractViolation("rows must be (n, d) and labels (n,)")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ContractViolation("labels must be -1 or +1")
        if lambda_r < 0:
            raise ContractViolation("regularisation weight must be nonnegative")
        self.rows = rows
        self.labels = labels
        self.lambda_r = float(lambda_r)
        self.n, self.d = rows.shape
        self._ya = rows * labels[:, None]
        sq = np.einsum("ij,ij->i", rows, rows)
        self._L = float(sq.max() / 4.0 + _REG_CURV_MAX * self.lambda_r)
        self.sigma = float(np.sqrt(sq.max()) + self.lambda_r * _REG_GRAD_MAX * math.sqrt(self.d))
        self.f_star_lower_bound = 0.0
        self.convex_components = self.lambda_r == 0.0

    @property
    def L(self) -> float:
        return self._L

    def regulariser(self, x):
        return self.lambda_r * float(np.sum(x * x / (1.0 + x * x)))

    def regulariser_gradient(self, x):
        return self.lambda_r * 2.0 * x / (1.0 + x * x) ** 2

    def component_values(self, idx, x):
        return _log1pexp(-(self._ya[idx] @ x)) + self.regulariser(x)

    def component_gradients(self, idx, x):
        ya = self._ya[idx]
        coef = -_sigmoid(-(ya @ x))
        return coef[:, None] * ya + self.regulariser_gradient(x)

    def component_gradient_differences(self, idx, x, y):
        ya = self._ya[idx]
        coef = _sigmoid(-(ya @ y)) - _sigmoid(-(ya @ x))
        return coef[:, None] * ya + (self.regulariser_gradient(x) - self.regulariser_gradient(y))

    def value(self, x):
        return float(np.mean(_log1pexp(-(self._ya @ x)))) + self.regulariser(x)

    def gradient(self, x):
        coef = -_sigmoid(-(self._ya @ x))
        return (coef @ self._ya) / self.n + self.regulariser_gradient(x)


def make_logistic(
    n: int,
    d: int,
    lambda_r: float = 0.01,
    seed: int = 0,
    flip: float = 0.1,
    row_norm: Optional[float] = 1.0,
    signal: float = 3.0,
) -> NonconvexLogisticProblem:
    """Planted-model logistic instance.

    Rows are Gaussian, rescaled to norm ``row_norm`` when given; labels follow
    ``sign(<a_i, w>)`` for a planted ``w`` of norm ``signal`` and are flipped
    with probability ``flip`` so the data are not separable.
    """
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, d))
    if row_norm is not None:
        rows *= row_norm / np.linalg.norm(rows, axis=1, keepdims=True)
    else:
        rows /= math.sqrt(d)
    w = rng.normal(size=d)
    w *= signal / np.linalg.norm(w)
    labels = np.where(rows @ w >= 0, 1.0, -1.0)
    labels[rng.random(n) < flip] *= -1.0
    return NonconvexLogisticProblem(rows, labels, lambda_r)


# ---------------------------------------------------------------------------
# One-hidden-layer perceptron
# ---------------------------------------------------------------------------


class MlpProblem(FiniteSum):
    """Softmax cross-entropy of a one-hidden-layer network, per example.

    Parameters are packed as ``[W1 (H x d_in), b1 (H), W2 (C x H), b2 (C)]``.
    The l2 penalty ``(reg/2)(||W1||^2 + ||W2||^2)`` is added to every component.
    ``L`` has no closed form; unless supplied it is estimated empirically and
    should be read as a heuristic step-size scale.
    """

    def __init__(self, rows, labels, hidden: int = 16, reg: float = 1e-3,
                 activation: str = "tanh", classes: Optional[int] = None,
                 L: Optional[float] = None):
        rows = np.array(rows, dtype=np.float64)
        labels = np.asarray(labels).astype(np.int64)
        if rows.ndim != 2 or labels.shape != (rows.shape[0],):
            raise ContractViolation("rows must be (n, d_in) and labels (n,)")
        if activation not in ("tanh", "sigmoid"):
            raise ContractViolation("activation must be 'tanh' or 'sigmoid'")
        self.rows = rows
        self.labels = labels
        self.n, self.d_in = rows.shape
        self.hidden = int(hidden)
        self.classes = int(classes if classes is not None else labels.max() + 1)
        if labels.min() < 0 or labels.max() >= self.classes:
            raise ContractViolation("labels must lie in 0..classes-1")
        self.reg = float(reg)
        self.activation = activation
        H, C, D = self.hidden, self.classes, self.d_in
        self._shapes = [(H, D), (H,), (C, H), (C,)]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        self.d = sum(self._sizes)
        self._L_override = L

    def unpack(self, x):
        parts, start = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            parts.append(x[start:start + size].reshape(shape))
            start += size
        return parts

    def init_params(self, seed: int) -> np.ndarray:
        """Normalised (Glorot) uniform init; biases start at zero."""
        rng = np.random.default_rng(seed)
        H, C, D = self.hidden, self.classes, self.d_in
        r1 = math.sqrt(6.0 / (D + H))
        r2 = math.sqrt(6.0 / (H + C))
        return np.concatenate([
            rng.uniform(-r1, r1, size=H * D), np.zeros(H),
            rng.uniform(-r2, r2, size=C * H), np.zeros(C),
        ])

    def _act(self, z):
        if self.activation == "tanh":
            h = np.tanh(z)
            return h, 1.0 - h * h
        h = 1.0 / (1.0 + np.exp(-z))
        return h, h * (1.0 - h)

    def _forward(self, idx, x):
        W1, b1, W2, b2 = self.unpack(x)
        A = self.rows[idx]
        h, dh = self._act(A @ W1.T + b1)
        z = h @ W2.T + b2
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        s = ez.sum(axis=1, keepdims=True)
        lse = (zmax + np.log(s))[:, 0]
        probs = ez / s
        return A, h, dh, z, lse, probs, (W1, W2)

    def _penalty(self, x):
        W1, _, W2, _ = self.unpack(x)
        return 0.5 * self.reg * (float(np.sum(W1 * W1)) + float(np.sum(W2 * W2)))

    def component_values(self, idx, x):
        idx = np.asarray(idx)
        _, _, _, z, lse, _, _ = self._forward(idx, x)
        return lse - z[np.arange(len(idx)), self.labels[idx]] + self._penalty(x)

    def _backward(self, idx, x):
        A, h, dh, _, _, probs, (W1, W2) = self._forward(idx, x)
        dz = probs
        dz[np.arange(len(idx)), self.labels[idx]] -= 1.0
        dpre = (dz @ W2) * dh
        return A, h, dz, dpre, W1, W2

    def component_gradients(self, idx, x):
        idx = np.asarray(idx)
        A, h, dz, dpre, W1, W2 = self._backward(idx, x)
        k = len(idx)
        gW1 = dpre[:, :, None] * A[:, None, :] + self.reg * W1
        gW2 = dz[:, :, None] * h[:, None, :] + self.reg * W2
        return np.concatenate([gW1.reshape(k, -1), dpre, gW2.reshape(k, -1), dz], axis=1)

    def gradient(self, x):
        idx = np.arange(self.n)
        A, h, dz, dpre, W1, W2 = self._backward(idx, x)
        n = self.n
        return np.concatenate([
            (dpre.T @ A / n + self.reg * W1).ravel(), dpre.mean(axis=0),
            (dz.T @ h / n + self.reg * W2).ravel(), dz.mean(axis=0),
        ])

    @cached_property
    def _estimated_L(self) -> float:
        return estimate_smoothness(self, trials=64, seed=0, center=self.init_params(0), scale=0.5)

    @property
    def L(self) -> float:
        if self._L_override is not None:
            return float(self._L_override)
        return self._estimated_L


# ---------------------------------------------------------------------------
# Smoothness estimation
# ---------------------------------------------------------------------------


def estimate_smoothness(problem: FiniteSum, trials: int = 1000, seed: int = 0,
                        scale: float = 1.0, center=None, power_steps: int = 3) -> float:
    """Empirical max of ``||grad f_i(x) - grad f_i(y)|| / ||x - y||``.

    Each trial draws a component ``i``, a point ``x`` around ``center`` and a
    random direction, then refines the direction with a few power-iteration
    steps on gradient differences. Every ratio evaluated is a genuine
    Lipschitz quotient, so the result never exceeds the true constant.
    Coincident pairs are skipped.
    """
    if trials < 1:
        raise ContractViolation("trials must be at least 1")
    rng = np.random.default_rng(seed)
    center = np.zeros(problem.d) if center is None else np.asarray(center, dtype=np.float64)
    probe = 1e-3 * max(scale, 1e-12)
    best = 0.0
    for _ in range(trials):
        i = np.array([rng.integers(problem.n)])
        x = center + scale * rng.normal(size=problem.d)
        u = rng.normal(size=problem.d)
        gx = problem.component_gradients(i, x)[0]
        for _ in range(power_steps + 1):
            nu = np.linalg.norm(u)
            if nu == 0 or not np.isfinite(nu):
                break
            u = probe * u / nu
            y = x + u
            du = np.linalg.norm(y - x)
            if du == 0:
                break
            diff = problem.component_gradients(i, y)[0] - gx
            best = max(best, float(np.linalg.norm(diff) / du))
            u = diff
    return best


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def normalize_unit_interval(rows: np.ndarray) -> np.ndarray:
    """Affinely map each feature column onto [0, 1].

    Constant columns carry no range to rescale and are clipped into [0, 1].
    """
    rows = np.asarray(rows, dtype=np.float64)
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    span = hi - lo
    out = np.clip(rows, 0.0, 1.0)
    varying = span > 0
    out[:, varying] = (rows[:, varying] - lo[varying]) / span[varying]
    return out


def load_libsvm(path, n_features: Optional[int] = None, normalize: bool = True):
    """Read ``label idx:val ...`` lines into a dense row matrix and labels.

    Indices are 1-based; the dimension is inferred from the largest index
    unless ``n_features`` is given. Rows keep file order.
    """
    labels, entries = [], []
    max_index = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
            except ValueError:
                raise LibsvmParseError(f"bad label {tokens[0]!r}", lineno) from None
            feats = {}
            for tok in tokens[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(f"expected idx:val, got {tok!r}", lineno)
                try:
                    j, v = int(key), float(val)
                except ValueError:
                    raise LibsvmParseError(f"bad feature {tok!r}", lineno) from None
                if j < 1:
                    raise LibsvmParseError(f"feature index {j} must be >= 1", lineno)
                feats[j] = v
                max_index = max(max_index, j)
            entries.append(feats)
    if not labels:
        raise ContractViolation(f"{path} contains no examples")
    d = max_index if n_features is None else int(n_features)
    if max_index > d:
        raise ContractViolation(f"feature index {max_index} exceeds n_features={d}")
    rows = np.zeros((len(labels), d))
    for r, feats in enumerate(entries):
        for j, v in feats.items():
            rows[r, j - 1] = v
    if normalize:
        rows = normalize_unit_interval(rows)
    return rows, np.array(labels)


def write_libsvm(path, rows, labels) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w") as fh:
        for row, label in zip(rows, labels):
            feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in enumerate(row) if v != 0.0)
            fh.write(f"{float(label)!r} {feats}".rstrip() + "\n")


def write_csv(path, rows, labels) -> None:
    """Dump a dataset with header ``label,x1,...,xd``."""
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x{j + 1}" for j in range(rows.shape[1])])
        for row, label in zip(rows, labels):
            w.writerow([repr(label.item() if hasattr(label, "item") else label)] + [repr(float(v)) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise ContractViolation("dataset CSV must start with a 'label' column")
        data = [[float(v) for v in r] for r in reader if r]
    arr = np.array(data)
    return arr[:, 1:], arr[:, 0]


def make_synthetic_classification(n: int, d: int, classes: int, seed: int,
                                  separation: float = 6.0):
    """Balanced Gaussian blobs with unit-variance clusters.

    Class centres are pairwise ``separation`` apart when ``classes <= d``
    (scaled orthonormal directions), otherwise drawn at random with that
    scale. Labels are ``0..classes-1``.
    """
    if classes < 2:
        raise ContractViolation("need at least two classes")
    if n < classes:
        raise ContractViolation("need at least one example per class")
    rng = np.random.default_rng(seed)
    if classes <= d:
        Q, _ = np.linalg.qr(rng.normal(size=(d, classes)))
        centers = (separation / math.sqrt(2.0)) * Q.T
        if classes == 2:
            centers = np.stack([0.5 * separation * Q[:, 0], -0.5 * separation * Q[:, 0]])
    else:
        centers = separation * rng.normal(size=(classes, d))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    rows = centers[labels] + rng.normal(size=(n, d))
    return rows, labels
