"""Adapted classifier: fitted posterior ratio times the source classifier,
plus KL estimation and evaluation metrics.

At prediction time the ratio is normalized analytically with the source
classifier's own probabilities, which guarantees a valid posterior:

    p(+1 | x) = q(+1|x) e^{a} / (q(+1|x) e^{a} + q(-1|x) e^{-a}),
    a = theta . f(+1, x).

The k-NN normalization used during training is available behind a flag;
it rescales both labels by the same factor, so it can only matter when
the raw unnormalized scores are wanted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .classifiers import EPS_CLIP, classifier_from_json, _clip_proba
from .data import LabeledDataset
from .knn import KnnIndex
from .ratio import RatioModel

COMPOSITE_JSON_VERSION = 1


@dataclass
class CompositeModel:
    ratio: RatioModel
    source: object  # any classifier with predict_proba(X) -> P(y=+1 | x)

    def __post_init__(self):
        src_dim = getattr(self.source, "dim", None)
        if src_dim is not None and src_dim != self.ratio.dim:
            raise ValueError("ratio and source classifier disagree on input dimension")

    @property
    def dim(self) -> int:
        return self.ratio.dim

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """P(y=+1 | x) per row of X; the two labels sum to 1 exactly."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        q_plus = self.source.predict_proba(X)
        a = self.ratio.log_ratio_margin(X)
        # q+ e^a / (q+ e^a + q- e^-a) = sigmoid(logit(q+) + 2a)
        logit = np.log(q_plus) - np.log1p(-q_plus)
        return _clip_proba(expit(logit + 2.0 * a))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.predict_proba(X) >= 0.5, 1, -1)

    def unnormalized_scores(
        self, X: np.ndarray, index: KnnIndex | None = None, k: int | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Raw (score_plus, score_minus) = q(y|x) exp(theta.f(y,x)) / N(x).

        With an index and k, N is the training-style k-NN average over
        source neighbors; otherwise N is the analytic normalizer and the
        scores coincide with the normalized posterior.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        q_plus = self.source.predict_proba(X)
        a = self.ratio.log_ratio_margin(X)
        up = q_plus * np.exp(a)
        um = (1.0 - q_plus) * np.exp(-a)
        if index is None:
            norm = up + um
        else:
            if k is None:
                k = self.ratio.fitted_k
            idx, _, _ = index.query_many(X, k)
            neigh_labels = np.asarray(index.labels)[idx]
            flat = self.ratio.feature_map.eval_many(
                neigh_labels.ravel(), index.points[idx.ravel()]
            )
            scores = (flat @ self.ratio.theta).reshape(idx.shape)
            norm = np.exp(scores).mean(axis=1)
        return up / norm, um / norm

    def to_json(self) -> dict:
        return {
            "version": COMPOSITE_JSON_VERSION,
            "kind": "composite",
            "ratio": self.ratio.to_json(),
            "source": self.source.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CompositeModel":
        if obj.get("version") != COMPOSITE_JSON_VERSION or obj.get("kind") != "composite":
            raise ValueError("not a composite model envelope")
        return cls(RatioModel.from_json(obj["ratio"]), classifier_from_json(obj["source"]))


def predict_posterior(model: CompositeModel, x: np.ndarray) -> tuple[float, float]:
    """(P(+1|x), P(-1|x)) for a single input."""
    p_plus = float(model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0])
    return p_plus, 1.0 - p_plus


def classify(model, x: np.ndarray) -> int:
    """argmax label; probability exactly 0.5 resolves to +1."""
    p_plus = float(model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0])
    return 1 if p_plus >= 0.5 else -1


def estimate_kl(ratio_fit_objective: float) -> float:
    """Conditional-KL estimate from a completed fit.

    The fitted unregularized objective is the negated maximized
    likelihood, so its negation estimates KL[p||q].  The value can be
    negative at finite sample sizes.
    """
    return -float(ratio_fit_objective)


def evaluate(model, test: LabeledDataset) -> dict:
    """Miss-rate and mean negative log-likelihood of a classifier on test data."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    p_plus = model.predict_proba(test.features)
    predicted = np.where(p_plus >= 0.5, 1, -1)
    p_true = np.where(test.labels == 1, p_plus, 1.0 - p_plus)
    p_true = np.clip(p_true, EPS_CLIP, 1.0)
    return {
        "miss_rate": float((predicted != test.labels).mean()),
        "neg_holdout_loglik": float(-np.log(p_true).mean()),
    }
