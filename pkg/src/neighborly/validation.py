"""Input-validation helpers for the estimator API."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .matrix import DEFAULT_SCALE, RatingScale, RatingsMatrix


def check_rating_triples(X) -> np.ndarray:
    """Coerce array-like rating data to an integer (n, 3) array of
    (user, profile, value) rows."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected rating triples of shape (n, 3), got {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("rating triples must be integer-valued")
    return arr.astype(np.int64, copy=False)


def check_pairs(X) -> np.ndarray:
    """Coerce array-like query data to an integer (n, 2) array of
    (user, profile) rows."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (user, profile) pairs of shape (n, 2), got {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("(user, profile) pairs must be integer-valued")
    return arr.astype(np.int64, copy=False)


def as_ratings_matrix(
    X: Union[RatingsMatrix, object], scale: Optional[RatingScale] = None
) -> RatingsMatrix:
    """Accept a RatingsMatrix as-is (live reference, no copy) or build one
    from (user, profile, value) triples."""
    if isinstance(X, RatingsMatrix):
        if scale is not None and scale != X.scale:
            raise ValueError(
                f"fit scale {scale} conflicts with the matrix's own scale {X.scale}"
            )
        return X
    triples = check_rating_triples(X)
    matrix = RatingsMatrix(scale or DEFAULT_SCALE)
    for user, profile, value in triples:
        matrix.insert(int(user), int(profile), int(value))
    return matrix


def check_scale(scale) -> RatingScale:
    if isinstance(scale, RatingScale):
        return scale
    if scale is None:
        return DEFAULT_SCALE
    r_min, r_max = scale
    return RatingScale(int(r_min), int(r_max))
