"""Probabilistic binary source classifiers: linear and RBF-kernel logistic
regression fitted by regularized maximum likelihood.

Every classifier exposes ``predict_proba(X) -> P(y=+1 | x)`` with values
clipped into (EPS_CLIP, 1 - EPS_CLIP); downstream composite normalization
divides by mixtures of these probabilities and must never see 0 or 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

MODEL_JSON_VERSION = 1

EPS_CLIP = 1e-12


class ConvergenceWarning(UserWarning):
    pass


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + exp(t)), overflow-safe
    return np.logaddexp(0.0, t)


def _clip_proba(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS_CLIP, 1.0 - EPS_CLIP)


def _check_dim(X: np.ndarray, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != dim:
        raise ValueError(f"expected feature dimension {dim}, got {X.shape[1]}")
    return X


def posterior(model, x, y: int) -> float:
    """q(y | x) for a single input; the two labels sum to 1 exactly."""
    p_plus = float(model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0])
    return p_plus if y == 1 else 1.0 - p_plus


@dataclass
class LinearLogReg:
    weights: np.ndarray
    intercept: float
    l2: float

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(X, self.dim)
        return X @ self.weights + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _clip_proba(expit(self.decision(X)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.predict_proba(X) >= 0.5, 1, -1)

    def to_json(self) -> dict:
        return {
            "version": MODEL_JSON_VERSION,
            "kind": "linear_logreg",
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2": self.l2,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearLogReg":
        _check_envelope(obj, "linear_logreg")
        return cls(np.asarray(obj["weights"], dtype=np.float64), float(obj["intercept"]), float(obj["l2"]))


@dataclass
class KernelLogReg:
    centers: np.ndarray
    duals: np.ndarray
    intercept: float
    bandwidth: float
    l2: float

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(X, self.dim)
        # chunked so large prediction grids never materialize a full kernel matrix
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], 2048):
            block = X[start:start + 2048]
            out[start:start + 2048] = (
                rbf_kernel(block, self.centers, self.bandwidth) @ self.duals + self.intercept
            )
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _clip_proba(expit(self.decision(X)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.predict_proba(X) >= 0.5, 1, -1)

    def to_json(self) -> dict:
        return {
            "version": MODEL_JSON_VERSION,
            "kind": "kernel_logreg",
            "dim": self.dim,
            "centers": self.centers.tolist(),
            "duals": self.duals.tolist(),
            "intercept": self.intercept,
            "bandwidth": self.bandwidth,
            "l2": self.l2,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KernelLogReg":
        _check_envelope(obj, "kernel_logreg")
        return cls(
            np.asarray(obj["centers"], dtype=np.float64),
            np.asarray(obj["duals"], dtype=np.float64),
            float(obj["intercept"]),
            float(obj["bandwidth"]),
            float(obj["l2"]),
        )


def _check_envelope(obj: dict, kind: str) -> None:
    if obj.get("version") != MODEL_JSON_VERSION:
        raise ValueError(f"unsupported model envelope version: {obj.get('version')!r}")
    if obj.get("kind") != kind:
        raise ValueError(f"expected model kind {kind!r}, got {obj.get('kind')!r}")


def classifier_from_json(obj: dict):
    kind = obj.get("kind")
    if kind == "linear_logreg":
        return LinearLogReg.from_json(obj)
    if kind == "kernel_logreg":
        return KernelLogReg.from_json(obj)
    raise ValueError(f"unknown classifier kind: {kind!r}")


def rbf_kernel(X: np.ndarray, Y: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian kernel exp(-||x - y||^2 / (2 sigma^2))."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth**2))


def median_pairwise_distance(X: np.ndarray, max_points: int = 1000) -> float:
    """Median heuristic bandwidth; subsamples evenly for large inputs."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n > max_points:
        X = X[np.linspace(0, n - 1, max_points).astype(int)]
        n = max_points
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(X * X, axis=1)[None, :]
        - 2.0 * (X @ X.T)
    )
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def _run_lbfgs(fun, x0, gtol: float, maxiter: int, what: str):
    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-18, "maxiter": maxiter, "maxfun": 10 * maxiter},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    if grad_norm > gtol * 100:
        warnings.warn(
            f"{what}: optimizer stopped with gradient norm {grad_norm:.3g} "
            f"after {res.nit} iterations",
            ConvergenceWarning,
            stacklevel=3,
        )
    return res


def fit_logreg(data, l2: float = 1e-6, gtol: float = 1e-8, maxiter: int = 1000) -> LinearLogReg:
    """MLE of linear logistic regression on labels in {-1,+1}.

    Minimizes mean softplus(-y (w.x + b)) + l2 ||w||^2; the intercept is
    not penalized.  l2 > 0 is required if the data may be linearly
    separable, otherwise the MLE is unbounded.
    """
    if len(data) == 0:
        raise ValueError("cannot fit on an empty dataset")
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    X, y = data.features, data.labels.astype(np.float64)
    n, d = X.shape

    def fun(w):
        weights, b = w[:d], w[d]
        margins = y * (X @ weights + b)
        obj = _softplus(-margins).mean() + l2 * weights @ weights
        coef = -y * expit(-margins) / n
        grad = np.empty(d + 1)
        grad[:d] = X.T @ coef + 2.0 * l2 * weights
        grad[d] = coef.sum()
        return obj, grad

    res = _run_lbfgs(fun, np.zeros(d + 1), gtol, maxiter, "fit_logreg")
    return LinearLogReg(res.x[:d].copy(), float(res.x[d]), l2)


def fit_kernel_logreg(
    data,
    bandwidth: float | None = None,
    l2: float = 1e-4,
    gtol: float = 1e-8,
    maxiter: int = 500,
) -> KernelLogReg:
    """RBF-kernel logistic regression with all training points as centers.

    Minimizes mean softplus(-y (K a + b)) + l2 a'Ka (RKHS norm penalty).
    Bandwidth defaults to the median pairwise distance heuristic.
    """
    if len(data) == 0:
        raise ValueError("cannot fit on an empty dataset")
    if l2 <= 0:
        raise ValueError("l2 must be > 0 for the kernel model")
    X, y = data.features, data.labels.astype(np.float64)
    n = X.shape[0]
    if bandwidth is None:
        bandwidth = median_pairwise_distance(X)
    K = rbf_kernel(X, X, bandwidth)

    def fun(w):
        a, b = w[:n], w[n]
        Ka = K @ a
        margins = y * (Ka + b)
        obj = _softplus(-margins).mean() + l2 * (a @ Ka)
        coef = -y * expit(-margins) / n
        grad = np.empty(n + 1)
        grad[:n] = K @ coef + 2.0 * l2 * Ka
        grad[n] = coef.sum()
        return obj, grad

    res = _run_lbfgs(fun, np.zeros(n + 1), gtol, maxiter, "fit_kernel_logreg")
    return KernelLogReg(X.copy(), res.x[:n].copy(), float(res.x[n]), float(bandwidth), l2)


def select_l2_logreg(data, grid=(1e-6, 1e-4, 1e-2, 1e-1, 1.0), folds: int = 5) -> float:
    """Pick the classifier l2 by k-fold CV on held-out log-likelihood."""
    n = len(data)
    folds = min(folds, n)
    assign = np.arange(n) % folds
    best = None
    for l2 in grid:
        score = 0.0
        for f in range(folds):
            train, val = data.subset(assign != f), data.subset(assign == f)
            model = fit_logreg(train, l2=l2)
            p_plus = model.predict_proba(val.features)
            p = np.where(val.labels == 1, p_plus, 1.0 - p_plus)
            score += float(np.log(_clip_proba(p)).sum())
        if best is None or score > best[0] or (score == best[0] and l2 > best[1]):
            best = (score, l2)
    return best[1]
