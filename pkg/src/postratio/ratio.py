"""Posterior-ratio estimation: the k-NN-normalized negative likelihood,
its analytic gradient, the regularized convex fit, and the tuning
procedures for k and the regularization strength.

The model is r(y, x; theta) = exp(theta . f(y, x)) / N(x; theta).  During
training the normalization N is approximated at each target input by an
average of exp(theta . f) over its k nearest source samples.  The
resulting objective

    l(theta) = -mean_i theta . f(y_p_i, x_p_i)
               + mean_i log( (1/k) sum_{j in knn(x_p_i)} exp(theta . f_j) )

is convex; l(0) = 0 exactly, and its negated minimum estimates the
conditional KL divergence between target and source posteriors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .data import FeatureMap, LabeledDataset
from .knn import KnnIndex

MODEL_JSON_VERSION = 1

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def default_k_grid(n_sources: int) -> tuple[int, ...]:
    """Powers of two from 4 up to min(512, n_sources / 2)."""
    top = min(512, max(4, n_sources // 2))
    grid = []
    k = 4
    while k <= top:
        grid.append(k)
        k *= 2
    return tuple(grid) or (min(4, n_sources),)


def schedule_k(n_sources: int) -> int:
    """ceil((log n')^2): satisfies k/log n' -> inf, k/n' -> 0."""
    return min(n_sources, max(1, int(np.ceil(np.log(n_sources) ** 2))))


@dataclass
class FitReport:
    final_objective: float
    regularized_objective: float
    grad_norm: float
    iterations: int
    converged: bool
    k_trace: list = field(default_factory=list)


@dataclass
class RatioModel:
    """Fitted ratio parameters plus the feature map that defines them."""

    theta: np.ndarray
    feature_map: FeatureMap
    fitted_k: int
    lam: float

    @property
    def dim(self) -> int:
        return self.feature_map.dim_in

    def log_ratio_margin(self, X: np.ndarray) -> np.ndarray:
        """theta . f(+1, x) per row; the y=-1 value is its negation."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        ones = np.ones(X.shape[0], dtype=np.int64)
        return self.feature_map.eval_many(ones, X) @ self.theta

    def to_json(self) -> dict:
        return {
            "version": MODEL_JSON_VERSION,
            "kind": "ratio",
            "theta": self.theta.tolist(),
            "feature_map": self.feature_map.to_json(),
            "k": self.fitted_k,
            "lambda": self.lam,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RatioModel":
        if obj.get("version") != MODEL_JSON_VERSION or obj.get("kind") != "ratio":
            raise ValueError("not a ratio model envelope")
        return cls(
            np.asarray(obj["theta"], dtype=np.float64),
            FeatureMap.from_json(obj["feature_map"]),
            int(obj["k"]),
            float(obj["lambda"]),
        )


class NeighborCache:
    """Per-target-sample neighbor features, precomputed once per (data, k).

    Holds f(y_p, x_p) for every target sample and f(y_q, x_q) for each of
    its k nearest source samples.
    """

    def __init__(self, target: LabeledDataset, index: KnnIndex, k: int, feature_map: FeatureMap):
        if len(target) == 0:
            raise ValueError("target dataset is empty")
        if index.labels is None:
            raise ValueError("index must retain source labels")
        if target.dim != index.dim:
            raise ValueError("target and source dimensions differ")
        idx, _, truncated = index.query_many(target.features, k)
        self.k = idx.shape[1]
        self.requested_k = k
        self.truncated = truncated
        self.feature_map = feature_map
        self.target_feats = feature_map.eval_many(target.labels, target.features)
        neigh_labels = np.asarray(index.labels)[idx]
        flat_feats = feature_map.eval_many(
            neigh_labels.ravel(), index.points[idx.ravel()]
        )
        self.neigh_feats = flat_feats.reshape(len(target), self.k, feature_map.dim_out)
        self.neigh_indices = idx

    def __len__(self) -> int:
        return self.target_feats.shape[0]

    @property
    def dim_out(self) -> int:
        return self.feature_map.dim_out

    def subset(self, rows) -> "NeighborCache":
        out = object.__new__(NeighborCache)
        out.k = self.k
        out.requested_k = self.requested_k
        out.truncated = self.truncated
        out.feature_map = self.feature_map
        out.target_feats = self.target_feats[rows]
        out.neigh_feats = self.neigh_feats[rows]
        out.neigh_indices = self.neigh_indices[rows]
        return out


def build_cache(
    target: LabeledDataset,
    sources: LabeledDataset,
    k: int,
    feature_map: FeatureMap | None = None,
    index: KnnIndex | None = None,
) -> NeighborCache:
    if feature_map is None:
        feature_map = FeatureMap(target.dim)
    if index is None:
        index = KnnIndex.from_dataset(sources)
    return NeighborCache(target, index, k, feature_map)


def _check_theta(theta: np.ndarray, cache: NeighborCache) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (cache.dim_out,):
        raise ValueError(f"theta must have length {cache.dim_out}, got {theta.shape}")
    if not np.isfinite(theta).all():
        raise ValueError("theta must be finite")
    return theta


def objective(theta: np.ndarray, cache: NeighborCache) -> float:
    """Negative likelihood l(theta); exactly 0 at theta = 0."""
    return _objective_gradient(theta, cache, want_grad=False)[0]


def gradient(theta: np.ndarray, cache: NeighborCache) -> np.ndarray:
    return _objective_gradient(theta, cache, want_grad=True)[1]


def objective_gradient(theta: np.ndarray, cache: NeighborCache) -> tuple[float, np.ndarray]:
    return _objective_gradient(theta, cache, want_grad=True)


def _objective_gradient(theta, cache, want_grad):
    theta = _check_theta(theta, cache)
    scores = cache.neigh_feats @ theta          # (n, k)
    lse = logsumexp(scores, axis=1)             # max-subtracted internally
    linear = cache.target_feats @ theta
    # subtracting log k per row keeps the identity l(0) = 0 exact
    obj = float(-linear.mean() + (lse - np.log(cache.k)).mean())
    if not want_grad:
        return obj, None
    softmax = np.exp(scores - lse[:, None])
    grad = (
        -cache.target_feats.mean(axis=0)
        + np.einsum("nk,nkm->m", softmax, cache.neigh_feats) / len(cache)
    )
    return obj, grad


def fit(
    target: LabeledDataset,
    sources: LabeledDataset,
    k: int,
    lam: float = 1e-3,
    feature_map: FeatureMap | None = None,
    reg_power: int = 2,
    gtol: float = 1e-8,
    maxiter: int = 5000,
    index: KnnIndex | None = None,
    cache: NeighborCache | None = None,
) -> tuple[RatioModel, FitReport]:
    """Minimize l(theta) + lam * ||theta||^reg_power from theta = 0.

    reg_power=2 (default) keeps the problem smooth and strictly convex;
    reg_power=1 matches the unsquared-norm formulation.  On hitting the
    iteration cap the best iterate is returned with converged=False.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if reg_power not in (1, 2):
        raise ValueError("reg_power must be 1 or 2")
    if cache is None:
        cache = build_cache(target, sources, k, feature_map, index)
    feature_map = cache.feature_map

    def fun(theta):
        obj, grad = _objective_gradient(theta, cache, want_grad=True)
        if reg_power == 2:
            obj += lam * theta @ theta
            grad = grad + 2.0 * lam * theta
        else:
            norm = np.linalg.norm(theta)
            obj += lam * norm
            if norm > 0:
                grad = grad + lam * theta / norm
        return obj, grad

    res = minimize(
        fun,
        np.zeros(cache.dim_out),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-18, "maxiter": maxiter, "maxfun": 10 * maxiter},
    )
    theta_hat = res.x.copy()
    grad_norm = float(np.max(np.abs(res.jac)))
    report = FitReport(
        final_objective=objective(theta_hat, cache),
        regularized_objective=float(res.fun),
        grad_norm=grad_norm,
        iterations=int(res.nit),
        converged=grad_norm <= gtol * 100,
    )
    model = RatioModel(theta_hat, feature_map, cache.k, lam)
    return model, report


def holdout_mse(
    sources: LabeledDataset,
    theta: np.ndarray,
    k_grid,
    feature_map: FeatureMap,
    folds: int = 5,
    seed: int = 0,
) -> dict[int, float]:
    """Cross-validated squared error of the k-NN conditional-mean estimate
    of Z = exp(theta . f) over the source inputs, for each candidate k.

    Neighbor search for held-out points runs over the remaining folds
    only, so a point never predicts itself.
    """
    n = len(sources)
    folds = min(folds, n)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    assign = np.empty(n, dtype=np.int64)
    assign[rng.permutation(n)] = np.arange(n) % folds
    z = np.exp(feature_map.eval_many(sources.labels, sources.features) @ theta)
    k_grid = sorted(set(int(k) for k in k_grid))
    sq_err = {k: 0.0 for k in k_grid}
    for f in range(folds):
        held = assign == f
        rest = ~held
        if not rest.any() or not held.any():
            continue
        rest_idx = np.flatnonzero(rest)
        index = KnnIndex(sources.features[rest_idx])
        kmax = min(max(k_grid), len(rest_idx))
        idx, _, _ = index.query_many(sources.features[held], kmax)
        z_sorted = z[rest_idx[idx]]                      # (m, kmax), nearest first
        prefix_means = np.cumsum(z_sorted, axis=1) / np.arange(1, kmax + 1)
        z_held = z[held]
        for k in k_grid:
            kk = min(k, kmax)
            sq_err[k] += float(((z_held - prefix_means[:, kk - 1]) ** 2).sum())
    return {k: v / n for k, v in sq_err.items()}


def select_k(
    target: LabeledDataset,
    sources: LabeledDataset,
    k_grid=None,
    lam: float = 1e-3,
    feature_map: FeatureMap | None = None,
    seed: int = 0,
    max_rounds: int = 10,
    **fit_kwargs,
) -> tuple[RatioModel, FitReport]:
    """Alternating heuristic: fit theta at the current k, then re-pick the
    k minimizing the holdout MSE of the conditional-mean estimate; stop
    when k stabilizes or after max_rounds rounds.  MSE ties go to the
    smaller k.
    """
    if feature_map is None:
        feature_map = FeatureMap(target.dim)
    if k_grid is None:
        k_grid = default_k_grid(len(sources))
    k_grid = sorted(set(min(int(k), len(sources)) for k in k_grid))
    if not k_grid:
        raise ValueError("k_grid is empty")
    index = KnnIndex.from_dataset(sources)
    current_k = k_grid[0]
    trace = []
    model = report = None
    for _ in range(max_rounds):
        model, report = fit(
            target, sources, current_k, lam, feature_map, index=index, **fit_kwargs
        )
        mse = holdout_mse(sources, model.theta, k_grid, feature_map, seed=seed)
        best_k = min(k_grid, key=lambda k: (mse[k], k))
        trace.append((best_k, mse[best_k]))
        if best_k == current_k:
            break
        current_k = best_k
    else:
        warnings.warn("select_k hit the round cap without stabilizing", stacklevel=2)
        model, report = fit(
            target, sources, current_k, lam, feature_map, index=index, **fit_kwargs
        )
    report.k_trace = trace
    return model, report


def select_lambda(
    target: LabeledDataset,
    sources: LabeledDataset,
    k: int,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    feature_map: FeatureMap | None = None,
    folds: int = 5,
    **fit_kwargs,
) -> float:
    """Likelihood cross-validation for the regularization strength.

    Folds split the target samples; the neighbor cache always uses the
    full source dataset.  Returns the grid value maximizing the mean
    held-out log-likelihood; ties go to the larger lambda.
    """
    lambda_grid = sorted(set(float(l) for l in lambda_grid))
    if not lambda_grid:
        raise ValueError("lambda_grid is empty")
    n = len(target)
    folds = min(folds, n) if n >= 5 else n  # leave-one-out below 5 samples
    cache = build_cache(target, sources, k, feature_map)
    assign = np.arange(n) % folds
    best = None
    for lam in lambda_grid:
        score = 0.0
        for f in range(folds):
            train = cache.subset(assign != f)
            val = cache.subset(assign == f)
            model, _ = fit(target, sources, k, lam, cache=train, **fit_kwargs)
            score -= objective(model.theta, val) * len(val)
        score /= n
        if best is None or score > best[0] or (score == best[0] and lam > best[1]):
            best = (score, lam)
    return best[1]
