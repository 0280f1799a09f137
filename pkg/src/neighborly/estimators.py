"""The four rating predictors as sklearn-style estimators, plus top-N
recommendation.

All estimators follow the fit/predict convention: `fit` takes either a live
RatingsMatrix (stored by reference, so server-side mutations are visible) or
array-like (user, profile, value) triples; `predict` maps an (n, 2) array of
(user, profile) pairs to float predictions with NaN marking skips. The richer
`predict_pair` returns the full outcome including the skip reason.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import UnknownEntityError
from .matrix import MatrixReader, RatingsMatrix
from .similarity import (
    ITEM_ITEM,
    USER_USER,
    SimilarityCache,
    SimilarityParams,
    neighbor_set,
)
from .validation import as_ratings_matrix, check_pairs, check_scale

SKIP_NO_DATA = "no_data"
SKIP_NO_NEIGHBORS = "no_neighbors"
SKIP_UNKNOWN_ENTITY = "unknown_entity"
SKIP_REASONS = (SKIP_NO_DATA, SKIP_NO_NEIGHBORS, SKIP_UNKNOWN_ENTITY)


@dataclass(frozen=True)
class Prediction:
    """Either a real-valued predicted rating (clamped to scale) or an
    explicit skip with a reason."""

    value: Optional[float] = None
    skip_reason: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.value is None) == (self.skip_reason is None):
            raise ValueError("prediction is either a value or a skip, not both")
        if self.skip_reason is not None and self.skip_reason not in SKIP_REASONS:
            raise ValueError(f"unknown skip reason {self.skip_reason!r}")

    @property
    def is_skipped(self) -> bool:
        return self.skip_reason is not None

    @classmethod
    def of(cls, value: float) -> "Prediction":
        return cls(value=float(value))

    @classmethod
    def skipped(cls, reason: str) -> "Prediction":
        return cls(skip_reason=reason)


@dataclass
class RecommendationList:
    for_user: int
    entries: list[tuple[int, float]]  # (profile, score), score descending

    def profiles(self) -> list[int]:
        return [p for p, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class RatingPredictor(BaseEstimator):
    """Common fit/predict machinery; subclasses implement _predict_pair."""

    def fit(self, X, y=None):
        del y
        self.matrix_ = as_ratings_matrix(X, check_scale(self.scale) if self.scale else None)
        self.scale_ = self.matrix_.scale
        self._post_fit()
        return self

    def _post_fit(self) -> None:
        pass

    def _fitted_matrix(self) -> RatingsMatrix:
        matrix = getattr(self, "matrix_", None)
        if matrix is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit() first")
        return matrix

    def predict_pair(self, user: int, profile: int, *, matrix: Optional[MatrixReader] = None) -> Prediction:
        m = matrix if matrix is not None else self._fitted_matrix()
        return self._predict_pair(m, int(user), int(profile))

    def _predict_pair(self, m: MatrixReader, user: int, profile: int) -> Prediction:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        m = self._fitted_matrix()
        pairs = check_pairs(X)
        out = np.full(len(pairs), np.nan)
        for i, (user, profile) in enumerate(pairs):
            p = self._predict_pair(m, int(user), int(profile))
            if not p.is_skipped:
                out[i] = p.value
        return out

    def recommend(
        self,
        user: int,
        n: int = 10,
        *,
        profile_filter: Optional[Callable[[int], bool]] = None,
        matrix: Optional[MatrixReader] = None,
    ) -> RecommendationList:
        """Top-n unrated profiles for `user`, highest predicted score first.

        Skipped predictions are dropped; ties break toward the lower profile
        id. Raises UnknownEntityError for a user with no ratings.
        """
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        m = matrix if matrix is not None else self._fitted_matrix()
        if not m.has_user(user):
            raise UnknownEntityError(f"user {user} has no ratings")
        rated = m.user_ratings(user)
        scored: list[tuple[float, int]] = []
        for profile in m.profiles():
            if profile in rated:
                continue
            if profile_filter is not None and not profile_filter(profile):
                continue
            p = self._predict_pair(m, user, profile)
            if not p.is_skipped:
                scored.append((-p.value, profile))
        scored.sort()
        return RecommendationList(
            for_user=user, entries=[(prof, -neg) for neg, prof in scored[:n]]
        )

    @property
    def display_name(self) -> str:
        raise NotImplementedError


class RandomRating(RatingPredictor):
    """Uniform random integer prediction, stable per (seed, user, profile).

    The value is drawn by keyed hashing rather than from generator state, so
    the same pair always predicts the same rating across calls, threads,
    restarts, and hosts. Never skips.
    """

    def __init__(self, seed: int = 0, scale=None):
        self.seed = seed
        self.scale = scale

    def _predict_pair(self, m: MatrixReader, user: int, profile: int) -> Prediction:
        scale = m.scale
        digest = hashlib.blake2b(
            struct.pack(">qq", user, profile),
            digest_size=8,
            key=struct.pack(">q", self.seed),
        ).digest()
        span = scale.r_max - scale.r_min + 1
        value = scale.r_min + int.from_bytes(digest, "big") % span
        return Prediction.of(float(value))

    @property
    def display_name(self) -> str:
        return "Random"


class ItemMean(RatingPredictor):
    """Global popularity baseline: the mean of a profile's existing ratings.

    Ignores the active user entirely. Skips (no_data) when the profile has no
    visible ratings — under a benchmark's leave-one-out view, "visible"
    already excludes the held-out target.
    """

    def __init__(self, scale=None):
        self.scale = scale

    def _predict_pair(self, m: MatrixReader, user: int, profile: int) -> Prediction:
        del user
        mean = m.profile_mean(profile)
        if mean is None:
            return Prediction.skipped(SKIP_NO_DATA)
        return Prediction.of(m.scale.clamp(mean))

    @property
    def display_name(self) -> str:
        return "Mean"


def _weighted_deviation_sum(neighbors, deviations) -> float:
    denom = sum(abs(n.weight) for n in neighbors)
    if denom <= 0.0:
        # all-zero weights carry no deviation information
        return 0.0
    return sum(n.weight * d for n, d in zip(neighbors, deviations)) / denom


class UserUser(RatingPredictor):
    """k-nearest-neighbor prediction over similar users.

    The predicted rating is the active user's mean plus the normalized,
    similarity-weighted deviation of the neighbors' ratings of the target
    profile from their own means. Neighbors are the top max_neighbors users,
    by Pearson weight, among those who rated the target profile with at least
    min_overlap co-ratings with the active user; negative-weight neighbors
    participate unless positive_only is set.
    """

    def __init__(
        self,
        min_overlap: int = 5,
        max_neighbors: int = 50,
        positive_only: bool = False,
        scale=None,
    ):
        self.min_overlap = min_overlap
        self.max_neighbors = max_neighbors
        self.positive_only = positive_only
        self.scale = scale

    def _post_fit(self) -> None:
        self.cache_ = SimilarityCache(USER_USER)

    @property
    def params(self) -> SimilarityParams:
        return SimilarityParams(self.min_overlap, self.max_neighbors)

    def _cache_for(self, m: MatrixReader) -> Optional[SimilarityCache]:
        if isinstance(m, RatingsMatrix) and m is getattr(self, "matrix_", None):
            return getattr(self, "cache_", None)
        return None

    def _predict_pair(self, m: MatrixReader, user: int, profile: int) -> Prediction:
        mean_user = m.user_mean(user)
        if mean_user is None:
            return Prediction.skipped(SKIP_UNKNOWN_ENTITY)
        raters = m.profile_ratings(profile)
        if not raters or (len(raters) == 1 and user in raters):
            return Prediction.skipped(SKIP_NO_NEIGHBORS)
        nset = neighbor_set(
            m,
            user,
            self.params,
            mode=USER_USER,
            candidate_filter=raters.__contains__,
            cache=self._cache_for(m),
            positive_only=self.positive_only,
        )
        if not nset.neighbors:
            return Prediction.skipped(SKIP_NO_NEIGHBORS)
        deviations = [raters[n.id] - m.user_mean(n.id) for n in nset.neighbors]
        value = mean_user + _weighted_deviation_sum(nset.neighbors, deviations)
        return Prediction.of(m.scale.clamp(value))

    @property
    def display_name(self) -> str:
        return f"User-User ({self.min_overlap},{self.max_neighbors})"


class ItemItem(RatingPredictor):
    """k-nearest-neighbor prediction over similar profiles.

    The predicted rating is the target profile's mean plus the normalized,
    weighted deviation of the active user's ratings of the most similar
    profiles (among those the user rated) from those profiles' means.
    """

    def __init__(
        self,
        min_overlap: int = 5,
        max_neighbors: int = 50,
        positive_only: bool = False,
        scale=None,
    ):
        self.min_overlap = min_overlap
        self.max_neighbors = max_neighbors
        self.positive_only = positive_only
        self.scale = scale

    def _post_fit(self) -> None:
        self.cache_ = SimilarityCache(ITEM_ITEM)

    @property
    def params(self) -> SimilarityParams:
        return SimilarityParams(self.min_overlap, self.max_neighbors)

    def _cache_for(self, m: MatrixReader) -> Optional[SimilarityCache]:
        if isinstance(m, RatingsMatrix) and m is getattr(self, "matrix_", None):
            return getattr(self, "cache_", None)
        return None

    def _predict_pair(self, m: MatrixReader, user: int, profile: int) -> Prediction:
        mean_profile = m.profile_mean(profile)
        if mean_profile is None:
            return Prediction.skipped(SKIP_NO_DATA)
        rated = m.user_ratings(user)
        if not rated or (len(rated) == 1 and profile in rated):
            return Prediction.skipped(SKIP_NO_NEIGHBORS)
        nset = neighbor_set(
            m,
            profile,
            self.params,
            mode=ITEM_ITEM,
            candidate_filter=rated.__contains__,
            cache=self._cache_for(m),
            positive_only=self.positive_only,
        )
        if not nset.neighbors:
            return Prediction.skipped(SKIP_NO_NEIGHBORS)
        deviations = [rated[n.id] - m.profile_mean(n.id) for n in nset.neighbors]
        value = mean_profile + _weighted_deviation_sum(nset.neighbors, deviations)
        return Prediction.of(m.scale.clamp(value))

    @property
    def display_name(self) -> str:
        return f"Item-Item ({self.min_overlap},{self.max_neighbors})"


# -- algorithm naming --------------------------------------------------------

_NAME_RE = re.compile(
    r"^\s*(random|mean|user-user|item-item)\s*(?:\(\s*(\d+)\s*,\s*(\d+)\s*\))?\s*$",
    re.IGNORECASE,
)


def parse_algorithm(label: str, *, seed: int = 0) -> RatingPredictor:
    """Build an unfitted predictor from a display label.

    Accepts the benchmark-style labels: "Random", "Mean",
    "User-User (5,50)", "Item-Item (10,50)". The CF kinds require the
    (min_overlap,max_neighbors) suffix; seed applies to Random only.
    """
    match = _NAME_RE.match(label)
    if not match:
        raise ValueError(f"unrecognized algorithm label {label!r}")
    kind = match.group(1).lower()
    pair = (match.group(2), match.group(3))
    if kind in ("random", "mean"):
        if pair[0] is not None:
            raise ValueError(f"{kind} takes no (MinO,MaxN) parameters: {label!r}")
        return RandomRating(seed=seed) if kind == "random" else ItemMean()
    if pair[0] is None:
        raise ValueError(f"{kind} requires (MinO,MaxN) parameters, e.g. {label}(5,50)")
    min_overlap, max_neighbors = int(pair[0]), int(pair[1])
    cls = UserUser if kind == "user-user" else ItemItem
    return cls(min_overlap=min_overlap, max_neighbors=max_neighbors)
