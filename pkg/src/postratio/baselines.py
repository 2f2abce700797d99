"""Joint parameter-decomposition baseline.

Instead of a separate ratio model, the baseline writes the target
logistic parameter as beta_p = theta + beta_q and fits both jointly:

    min  NLL_target(theta + beta_q) + gamma * NLL_source(beta_q)
         + l2 (||theta||^2 + ||beta_q||^2)

The balancing weight gamma couples the two likelihoods and has to be
tuned; the symmetric l2 term restores identifiability (without it any
constant can be moved between theta and beta_q).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .classifiers import _clip_proba, _softplus
from .data import LabeledDataset


@dataclass
class JointModel:
    """Shared-space parameters over augmented features [x, 1]."""

    beta_q: np.ndarray
    theta: np.ndarray
    gamma: float
    l2: float = 0.0

    @property
    def dim(self) -> int:
        return self.beta_q.shape[0] - 1

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Target posterior P(y=+1 | x), the logistic model at theta + beta_q."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected feature dimension {self.dim}, got {X.shape[1]}")
        w = self.theta + self.beta_q
        return _clip_proba(expit(X @ w[:-1] + w[-1]))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.predict_proba(X) >= 0.5, 1, -1)

    def source_proba(self, X: np.ndarray) -> np.ndarray:
        """Source posterior P(y=+1 | x), the logistic model at beta_q alone."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _clip_proba(expit(X @ self.beta_q[:-1] + self.beta_q[-1]))


def predict_joint(model: JointModel, x: np.ndarray) -> tuple[float, float]:
    p_plus = float(model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0])
    return p_plus, 1.0 - p_plus


def fit_joint(
    target: LabeledDataset,
    sources: LabeledDataset,
    gamma: float,
    l2: float = 1e-4,
    gtol: float = 1e-8,
    maxiter: int = 2000,
) -> JointModel:
    """Fit the joint baseline; convex in (theta, beta_q)."""
    if len(target) == 0 or len(sources) == 0:
        raise ValueError("datasets must be non-empty")
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if target.dim != sources.dim:
        raise ValueError("target and source dimensions differ")
    if l2 == 0:
        warnings.warn(
            "l2=0 leaves the joint decomposition under-determined "
            "(theta and beta_q are only identified up to a shared offset)",
            stacklevel=2,
        )
    d1 = target.dim + 1
    Ap = np.hstack([target.features, np.ones((len(target), 1))])
    Aq = np.hstack([sources.features, np.ones((len(sources), 1))])
    yp = target.labels.astype(np.float64)
    yq = sources.labels.astype(np.float64)

    def fun(w):
        theta, beta = w[:d1], w[d1:]
        mp = yp * (Ap @ (theta + beta))
        mq = yq * (Aq @ beta)
        obj = (
            _softplus(-mp).mean()
            + gamma * _softplus(-mq).mean()
            + l2 * (theta @ theta + beta @ beta)
        )
        cp = -yp * expit(-mp) / len(yp)
        cq = -yq * expit(-mq) / len(yq)
        g_shared = Ap.T @ cp
        grad = np.empty(2 * d1)
        grad[:d1] = g_shared + 2.0 * l2 * theta
        grad[d1:] = g_shared + gamma * (Aq.T @ cq) + 2.0 * l2 * beta
        return obj, grad

    res = minimize(
        fun,
        np.zeros(2 * d1),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-18, "maxiter": maxiter, "maxfun": 10 * maxiter},
    )
    return JointModel(res.x[d1:].copy(), res.x[:d1].copy(), gamma, l2)
