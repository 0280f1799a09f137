"""The single data-manager instance behind all services.

Owns the matrix, gender attributes, the registered algorithm roster, and the
similarity caches, and enforces the concurrency contract: any number of
parallel readers OR one writer. Every read runs against a consistent matrix
epoch; every successful mutation bumps the epoch (via the matrix) and
invalidates the caches.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Optional

from .errors import OutOfScaleError, UnknownEntityError
from .estimators import Prediction, RatingPredictor, RecommendationList
from .matrix import GENDERS, DatasetStats, RatingsMatrix, compute_stats
from .storage import InsertionLog

OPPOSITE = {"M": "F", "F": "M"}


class ReadWriteLock:
    """Writer-preference readers-writer lock."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self) -> None:
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self) -> None:
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self) -> None:
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    @contextmanager
    def read(self):
        self.acquire_read()
        try:
            yield
        finally:
            self.release_read()

    @contextmanager
    def write(self):
        self.acquire_write()
        try:
            yield
        finally:
            self.release_write()


class DataManager:
    """Exactly one instance per server; all services share it."""

    def __init__(
        self,
        matrix: RatingsMatrix,
        attributes: Optional[dict[int, str]] = None,
        algorithms: Optional[dict[int, RatingPredictor]] = None,
        log: Optional[InsertionLog] = None,
    ):
        self.matrix = matrix
        self.attributes = dict(attributes or {})
        self.algorithms: dict[int, RatingPredictor] = {}
        self.lock = ReadWriteLock()
        self._log = log
        self._commit_seq = 0
        for algo_id, algo in (algorithms or {}).items():
            self.register_algorithm(algo_id, algo)

    # -- roster -------------------------------------------------------------

    def register_algorithm(self, algo_id: int, algo: RatingPredictor) -> None:
        if not 0 <= algo_id <= 255:
            raise ValueError(f"algorithm id must fit a byte, got {algo_id}")
        if getattr(algo, "matrix_", None) is not self.matrix:
            algo.fit(self.matrix)
        self.algorithms[algo_id] = algo

    def algorithm(self, algo_id: int) -> RatingPredictor:
        try:
            return self.algorithms[algo_id]
        except KeyError:
            raise UnknownEntityError(f"no algorithm registered under id {algo_id}") from None

    @property
    def epoch(self) -> int:
        return self.matrix.epoch

    # -- reads ----------------------------------------------------------------

    def predict(self, algo_id: int, user: int, profile: int) -> Prediction:
        algo = self.algorithm(algo_id)
        with self.lock.read():
            return algo.predict_pair(user, profile)

    def recommend(
        self, algo_id: int, user: int, n: int, opposite_sex_only: bool = False
    ) -> RecommendationList:
        algo = self.algorithm(algo_id)
        profile_filter = None
        if opposite_sex_only:
            wanted = OPPOSITE.get(self.gender_of(user))
            if wanted is None:
                raise ValueError(f"user {user} has no declared gender; cannot filter by sex")
            attrs = self.attributes
            profile_filter = lambda p: attrs.get(p) == wanted  # noqa: E731
        with self.lock.read():
            return algo.recommend(user, n, profile_filter=profile_filter)

    def stats(self) -> DatasetStats:
        with self.lock.read():
            return compute_stats(self.matrix, extra_user_ids=self.attributes)

    def gender_of(self, user: int) -> str:
        return self.attributes.get(user, "U")

    # -- writes ---------------------------------------------------------------

    def set_gender(self, user: int, gender: str) -> None:
        if gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {gender!r}")
        with self.lock.write():
            self.attributes[user] = gender

    def insert(self, user: int, profile: int, value: int) -> tuple[Optional[int], int]:
        """Insert one rating; returns (previous value, commit sequence)."""
        with self.lock.write():
            return self._insert_locked(user, profile, value)

    def predict_insert(
        self, algo_id: int, user: int, profile: int, value: int
    ) -> tuple[Prediction, Optional[int], int]:
        """Predict the rating about to be inserted, then insert it, atomically.

        The prediction runs against the pre-insert matrix under the same
        exclusive lock, so the target is provably invisible to it and the
        (prediction, commit) pair is serializable in commit order.
        """
        algo = self.algorithm(algo_id)
        with self.lock.write():
            prediction = algo.predict_pair(user, profile)
            previous, seq = self._insert_locked(user, profile, value)
            return prediction, previous, seq

    def _insert_locked(self, user: int, profile: int, value: int) -> tuple[Optional[int], int]:
        if not self.matrix.scale.contains(value):
            raise OutOfScaleError(
                f"rating {value} outside scale "
                f"{self.matrix.scale.r_min}..{self.matrix.scale.r_max}"
            )
        previous = self.matrix.insert(user, profile, value)
        self._commit_seq += 1
        for algo in self.algorithms.values():
            cache = getattr(algo, "cache_", None)
            if cache is not None:
                cache.invalidate(user, profile)
        if self._log is not None:
            self._log.append(user, profile, value)
        return previous, self._commit_seq

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
