"""Base linear classifiers trained from scratch.

Binary logistic regression and linear SVM, multi-class softmax regression,
class prototypes, and one-vs-all prediction. All solvers are deterministic
full-batch methods:

  logistic / softmax:  0.5*||w||^2 + C * sum(loss_i), gradient descent with
                       backtracking line search until the gradient norm
                       drops below `tol`.
  linear SVM:          0.5*||w||^2 + C * sum(hinge_i), diminishing-step
                       subgradient descent with best-iterate tracking.

Biases are never regularized. Flattened layout is [weights..., bias] per
class, bias last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateLabels, DimensionError, EmptyClass, FormatError

_MAGIC = b"CLSF"
KIND_LOGISTIC, KIND_SVM, KIND_SOFTMAX = 0, 1, 2


@dataclass(frozen=True)
class FitConfig:
    inverse_reg_C: float = 1.0
    max_iter: int = 20000
    tol: float = 1e-6
    step_rule: str = "backtracking"  # or "fixed"
    step_size: float = 0.1  # used by the "fixed" rule
    solver: str = "newton"  # "newton" (curvature steps) or "gd" (plain descent)

    def validate(self):
        if self.inverse_reg_C <= 0 or not np.isfinite(self.inverse_reg_C):
            raise DataError("inverse_reg_C must be positive")
        if self.tol <= 0:
            raise DataError("tol must be positive")
        if self.max_iter < 1:
            raise DataError("max_iter must be >= 1")
        if self.step_rule not in ("backtracking", "fixed"):
            raise DataError(f"unknown step rule {self.step_rule!r}")
        if self.solver not in ("newton", "gd"):
            raise DataError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray
    bias: float
    fit_info: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise DimensionError("weights must be a vector")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise DataError("non-finite classifier parameters")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights, [self.bias]])

    @staticmethod
    def unflatten(vec: np.ndarray) -> "LinearClassifier":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] < 2:
            raise DimensionError("flattened classifier must have length >= 2")
        return LinearClassifier(vec[:-1], float(vec[-1]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearClassifier):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.bias == other.bias


@dataclass(frozen=True)
class MulticlassLinear:
    weight_rows: np.ndarray  # (N, d)
    biases: np.ndarray  # (N,)
    fit_info: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight_rows, dtype=np.float64)
        b = np.ascontiguousarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError("weight_rows must be (N, d) with matching biases")
        if w.shape[0] < 2:
            raise DimensionError("multiclass classifier needs N >= 2")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("non-finite classifier parameters")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight_rows", w)
        object.__setattr__(self, "biases", b)

    @property
    def n_classes(self) -> int:
        return self.weight_rows.shape[0]

    @property
    def dim(self) -> int:
        return self.weight_rows.shape[1]

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w, [b]]) for w, b in zip(self.weight_rows, self.biases)])

    @staticmethod
    def unflatten(vec: np.ndarray, n_classes: int) -> "MulticlassLinear":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] % n_classes != 0:
            raise DimensionError("flattened length must be N*(d+1)")
        per = vec.shape[0] // n_classes
        rows = vec.reshape(n_classes, per)
        return MulticlassLinear(rows[:, :-1], rows[:, -1])

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.weight_rows.T + self.biases

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MulticlassLinear):
            return NotImplemented
        return np.array_equal(self.weight_rows, other.weight_rows) and np.array_equal(self.biases, other.biases)


@dataclass(frozen=True)
class PrototypePair:
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.positive, dtype=np.float64)
        n = np.ascontiguousarray(self.negative, dtype=np.float64)
        if p.shape != n.shape or p.ndim != 1:
            raise DimensionError("prototype vectors must share one dimension")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(n))):
            raise DataError("non-finite prototypes")
        p.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negative", n)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.positive, self.negative])


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise DimensionError("X must be 2D")
    if y.shape != (X.shape[0],):
        raise DimensionError("y must match the number of rows")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite features")
    return X, y


def _smooth_minimize(fun_grad, x0: np.ndarray, cfg: FitConfig, hess=None):
    """Deterministic descent with Armijo backtracking, stopping on the
    gradient norm. With `hess` and solver="newton", damped Newton steps are
    taken (falling back to the gradient direction when the solve is not a
    descent direction); otherwise plain gradient descent.
    """
    x = x0.copy()
    f, g = fun_grad(x)
    use_newton = hess is not None and cfg.solver == "newton"
    step = cfg.step_size if cfg.step_rule == "fixed" else 1.0
    objectives = [f]
    converged = False
    for _ in range(cfg.max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= cfg.tol:
            converged = True
            break
        direction = g
        if use_newton:
            H = hess(x)
            try:
                d = np.linalg.solve(H + 1e-12 * np.eye(H.shape[0]), g)
                if np.all(np.isfinite(d)) and d @ g > 0:
                    direction = d
            except np.linalg.LinAlgError:
                pass
        if cfg.step_rule == "fixed":
            x = x - step * direction
            f, g = fun_grad(x)
        else:
            slope = direction @ g
            t = 1.0 if use_newton else step
            while True:
                x_new = x - t * direction
                f_new, g_new = fun_grad(x_new)
                if f_new <= f - 1e-4 * t * slope:
                    break
                t *= 0.5
                if t < 1e-18:
                    x_new, f_new, g_new = x, f, g
                    break
            x, f, g = x_new, f_new, g_new
            if not use_newton:
                step = t * 2.0
        objectives.append(f)
    else:
        converged = np.linalg.norm(g) <= cfg.tol
    info = {
        "converged": converged,
        "n_iter": len(objectives) - 1,
        "objective": float(f),
        "grad_norm": float(np.linalg.norm(g)),
        "objectives": objectives,
    }
    return x, info


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, C: float):
    """Objective and gradient; params = [w..., b], y in {-1,+1}."""
    w, b = params[:-1], params[-1]
    z = X @ w + b
    m = -y * z
    f = 0.5 * w @ w + C * np.sum(np.logaddexp(0.0, m))
    s = -y * _sigmoid(m)  # d/dz of logaddexp term
    grad_w = w + C * (X.T @ s)
    grad_b = C * np.sum(s)
    return f, np.concatenate([grad_w, [grad_b]])


def train_logistic(X, y, cfg: FitConfig = FitConfig()) -> LinearClassifier:
    cfg.validate()
    X, y = _check_xy(X, y)
    y = y.astype(np.float64)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise DegenerateLabels("labels must be in {-1,+1}")
    if np.unique(y).size < 2:
        raise DegenerateLabels("need both classes present")
    C = cfg.inverse_reg_C
    Xt = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    reg = np.eye(X.shape[1] + 1)
    reg[-1, -1] = 0.0  # bias is not regularized

    def hess(params):
        m = -y * (Xt @ params)
        s = _sigmoid(m)
        return reg + C * (Xt.T * (s * (1.0 - s))) @ Xt

    params, info = _smooth_minimize(
        lambda p: logistic_objective(p, X, y, C), np.zeros(X.shape[1] + 1), cfg, hess=hess
    )
    return LinearClassifier(params[:-1], params[-1], fit_info=info)


def svm_objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, C: float) -> float:
    w, b = params[:-1], params[-1]
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * w @ w + C * np.sum(np.maximum(0.0, margins))


def train_linear_svm(X, y, cfg: FitConfig = FitConfig()) -> LinearClassifier:
    """Diminishing-step subgradient descent on the hinge objective.

    Internally minimizes the equivalent lam/2*||w||^2 + mean(hinge) with
    lam = 1/(C*n) and step 1/(lam*(t+1)); tracks the best iterate and stops
    when the best objective stops improving by more than tol over a window.
    """
    cfg.validate()
    X, y = _check_xy(X, y)
    y = y.astype(np.float64)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise DegenerateLabels("labels must be in {-1,+1}")
    if np.unique(y).size < 2:
        raise DegenerateLabels("need both classes present")
    n, d = X.shape
    C = cfg.inverse_reg_C
    lam = 1.0 / (C * n)
    w = np.zeros(d)
    b = 0.0
    best = np.concatenate([w, [b]])
    best_obj = svm_objective(best, X, y, C)
    window, last_check = 200, best_obj
    n_iter = 0
    for t in range(cfg.max_iter):
        n_iter = t + 1
        margins = 1.0 - y * (X @ w + b)
        active = margins > 0.0
        grad_w = lam * w - (X[active].T @ y[active]) / n
        grad_b = -np.sum(y[active]) / n
        eta = 1.0 / (lam * (t + 1))
        w = w - eta * grad_w
        b = b - eta * grad_b
        cand = np.concatenate([w, [b]])
        obj = svm_objective(cand, X, y, C)
        if obj < best_obj:
            best_obj, best = obj, cand
        if (t + 1) % window == 0:
            if last_check - best_obj <= cfg.tol * max(1.0, abs(best_obj)):
                break
            last_check = best_obj
    info = {"converged": True, "n_iter": n_iter, "objective": float(best_obj)}
    return LinearClassifier(best[:-1], best[-1], fit_info=info)


def softmax_objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int, C: float):
    n, d = X.shape
    mat = params.reshape(n_classes, d + 1)
    W, b = mat[:, :-1], mat[:, -1]
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    expz = np.exp(logits)
    probs = expz / expz.sum(axis=1, keepdims=True)
    ll = logits[np.arange(n), y] - np.log(expz.sum(axis=1))
    f = 0.5 * np.sum(W * W) - C * np.sum(ll)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_W = W + C * (delta.T @ X)
    grad_b = C * delta.sum(axis=0)
    grad = np.concatenate([grad_W, grad_b[:, None]], axis=1).ravel()
    return f, grad


def train_softmax(X, y, cfg: FitConfig = FitConfig()) -> MulticlassLinear:
    cfg.validate()
    X, y = _check_xy(X, y)
    y = y.astype(np.int64)
    if y.min() < 0:
        raise DegenerateLabels("labels must be in 0..N-1")
    n_classes = int(y.max()) + 1
    if n_classes < 2 or np.unique(y).size != n_classes:
        raise DegenerateLabels("every class in 0..N-1 needs at least one example")
    C = cfg.inverse_reg_C
    p_dim = X.shape[1] + 1
    x0 = np.zeros(n_classes * p_dim)
    Xt = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    reg = np.eye(n_classes * p_dim)
    for c in range(n_classes):
        reg[c * p_dim + p_dim - 1, c * p_dim + p_dim - 1] = 0.0  # biases unregularized

    def hess(params):
        mat = params.reshape(n_classes, p_dim)
        logits = Xt @ mat.T
        logits -= logits.max(axis=1, keepdims=True)
        expz = np.exp(logits)
        P = expz / expz.sum(axis=1, keepdims=True)
        B = P[:, :, None] * Xt[:, None, :]  # (n, K, p)
        H = -np.einsum("nap,nbq->apbq", B, B)
        diag = np.einsum("nc,np,nq->cpq", P, Xt, Xt)
        for c in range(n_classes):
            H[c, :, c, :] += diag[c]
        return reg + C * H.reshape(n_classes * p_dim, n_classes * p_dim)

    params, info = _smooth_minimize(lambda p: softmax_objective(p, X, y, n_classes, C), x0, cfg, hess=hess)
    mat = params.reshape(n_classes, X.shape[1] + 1)
    return MulticlassLinear(mat[:, :-1], mat[:, -1], fit_info=info)


def decision(clf: LinearClassifier, x: np.ndarray) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != clf.dim:
        raise DimensionError(f"expected dim {clf.dim}, got {x.shape[-1]}")
    score = x @ clf.weights + clf.bias
    return float(score) if x.ndim == 1 else score


def predict_ova(clfs, x: np.ndarray):
    """Argmax over per-class decision scores; ties go to the lowest index."""
    clfs = list(clfs)
    if len(clfs) < 2:
        raise DimensionError("predict_ova needs at least 2 classifiers")
    scores = np.stack([np.atleast_1d(decision(c, x)) for c in clfs], axis=1)
    pred = np.argmax(scores, axis=1)
    return int(pred[0]) if np.asarray(x).ndim == 1 else pred


def compute_prototypes(X_pos, X_neg) -> PrototypePair:
    X_pos = np.asarray(X_pos, dtype=np.float64)
    X_neg = np.asarray(X_neg, dtype=np.float64)
    if X_pos.size == 0 or X_neg.size == 0:
        raise EmptyClass("both prototype sides need at least one sample")
    if X_pos.ndim != 2 or X_neg.ndim != 2 or X_pos.shape[1] != X_neg.shape[1]:
        raise DimensionError("prototype inputs must be 2D with equal dim")
    return PrototypePair(X_pos.mean(axis=0), X_neg.mean(axis=0))


def class_prototypes(supports: np.ndarray) -> np.ndarray:
    """Per-class means for (n_way, k, d) support arrays, flattened."""
    supports = np.asarray(supports, dtype=np.float64)
    if supports.ndim != 3:
        raise DimensionError("supports must be (n_way, k, d)")
    return supports.mean(axis=1).ravel()


def save_classifier(clf, path) -> None:
    if isinstance(clf, LinearClassifier):
        kind = KIND_SVM if (clf.fit_info or {}).get("kind") == "svm" else KIND_LOGISTIC
        d, n_classes, payload = clf.dim, 1, clf.flatten()
    elif isinstance(clf, MulticlassLinear):
        kind, d, n_classes, payload = KIND_SOFTMAX, clf.dim, clf.n_classes, clf.flatten()
    else:
        raise DimensionError("unsupported classifier type")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", d, n_classes, kind))
        fh.write(payload.astype("<f4").tobytes())


def load_classifier(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("bad magic; not a classifier file")
    d, n_classes, kind = struct.unpack_from("<III", blob, 4)
    payload = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    if kind == KIND_SOFTMAX:
        if payload.shape[0] != n_classes * (d + 1):
            raise FormatError("payload length mismatch")
        return MulticlassLinear.unflatten(payload, n_classes)
    if payload.shape[0] != d + 1:
        raise FormatError("payload length mismatch")
    return LinearClassifier.unflatten(payload)
