"""scikit-learn compatible wrappers around the library functions.

These let the zero-shot classifier, the subnet selector and the super-class
remapper sit inside pipelines, grid searches and ``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import embedding_engine as ee
from .exceptions import ValidationError
from .selector import AccuracyProfile, CostCache, SelectionRequest, select_subnet
from .taxonomy import TaxonomyGraph, group_superclasses, remap_labels


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha


def check_embeddings(X, dim: int | None = None) -> np.ndarray:
    """2-D finite float array with no all-zero rows and, optionally, a fixed width."""
    X = check_array(X, dtype=np.float64)
    if dim is not None and X.shape[1] != dim:
        raise ValidationError(f"expected embeddings of width {dim}, got {X.shape[1]}")
    if np.any(np.linalg.norm(X, axis=1) == 0.0):
        raise ValidationError("embeddings contain an all-zero row")
    return X


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Nearest text embedding by cosine similarity.

    ``fit(X, y)`` takes one text embedding per row of ``X`` with its class
    name in ``y``; ``predict`` returns the best-matching name for each
    vision embedding.
    """

    def __init__(self, top_k: int = 5):
        self.top_k = top_k

    def fit(self, X, y):
        X = check_embeddings(X)
        labels = [str(v) for v in y]
        if len(labels) != X.shape[0]:
            raise ValidationError(f"{len(labels)} labels for {X.shape[0]} embeddings")
        self.bank_ = ee.EmbeddingBank(tuple(labels), X.astype(np.float32))
        self.classes_ = np.asarray(labels, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "bank_")
        X = check_embeddings(X, self.n_features_in_)
        return ee.similarity_matrix(X, self.bank_)

    def predict(self, X) -> np.ndarray:
        sims = self.decision_function(X)
        return self.classes_[np.argmax(sims, axis=1)]

    def rank(self, x) -> list[tuple[str, float]]:
        check_is_fitted(self, "bank_")
        return ee.classify(x, self.bank_, self.top_k)


class SceneSubnetSelector(BaseEstimator):
    """Cheapest subnet meeting ``alpha`` times the scene's best accuracy."""

    def __init__(self, alpha: float = 0.95, cost_metric: str = "flops", candidates=None,
                 space=None, calibration=None):
        self.alpha = alpha
        self.cost_metric = cost_metric
        self.candidates = candidates
        self.space = space
        self.calibration = calibration

    def fit(self, profile: AccuracyProfile, y=None):
        if not isinstance(profile, AccuracyProfile):
            profile = AccuracyProfile.from_rows(profile)
        check_alpha(self.alpha)
        self.profile_ = profile
        self.costs_ = CostCache(self.space, self.calibration)
        return self

    def select(self, scene: str):
        check_is_fitted(self, "profile_")
        req = SelectionRequest(scene, self.alpha, self.cost_metric, tuple(self.candidates or ()))
        return select_subnet(self.profile_, req, self.costs_)

    def predict(self, scenes) -> np.ndarray:
        return np.asarray([self.select(s).chosen.id for s in scenes], dtype=object)


class SuperClassRemapper(TransformerMixin, BaseEstimator):
    """Learns a super-class grouping from a class list, then remaps labels."""

    def __init__(self, taxonomy: TaxonomyGraph | None = None, p_min: float = 0.05, p_max: float = 0.40):
        self.taxonomy = taxonomy
        self.p_min = p_min
        self.p_max = p_max

    def fit(self, classes, y=None):
        if self.taxonomy is None:
            raise ValidationError("SuperClassRemapper needs a taxonomy")
        self.classes_ = list(classes)
        self.grouping_ = group_superclasses(self.taxonomy, self.classes_, self.p_min, self.p_max)
        return self

    def transform(self, labels):
        check_is_fitted(self, "grouping_")
        return remap_labels(self.grouping_, labels)
