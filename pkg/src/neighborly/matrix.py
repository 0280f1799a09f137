"""Sparse rating-matrix storage, dataset ingestion, and descriptive statistics.

The matrix is row- and column-addressable: every stored rating is reachable
both through its user row and through its profile column, and the two index
structures are kept as exact transposes at all times.
"""

from __future__ import annotations

import statistics
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import IO, Optional, Union

from .errors import IngestError, OutOfScaleError

GENDERS = ("M", "F", "U")


@dataclass(frozen=True)
class RatingScale:
    """Closed integer interval of admissible rating values."""

    r_min: int = 1
    r_max: int = 10

    def __post_init__(self) -> None:
        if self.r_min >= self.r_max:
            raise ValueError(f"rating scale requires r_min < r_max, got {self.r_min}..{self.r_max}")

    @property
    def width(self) -> int:
        return self.r_max - self.r_min

    def contains(self, value: int) -> bool:
        return self.r_min <= value <= self.r_max

    def clamp(self, value: float) -> float:
        return min(max(value, self.r_min), self.r_max)

    def normalize(self, value: float) -> float:
        """Map a rating onto the 0-1 scale."""
        return (value - self.r_min) / self.width


DEFAULT_SCALE = RatingScale(1, 10)


@dataclass(frozen=True)
class Rating:
    user: int
    profile: int
    value: int


class RatingsMatrix:
    """In-memory sparse user x profile rating store.

    Rows (per-user) and columns (per-profile) are plain dicts kept in perfect
    transposition. Per-row and per-column value sums are maintained
    incrementally so means are O(1). Not thread-safe: many concurrent readers
    OR one writer (the server layers locking and epochs on top via `epoch`).
    """

    def __init__(self, scale: RatingScale = DEFAULT_SCALE):
        self.scale = scale
        self._rows: dict[int, dict[int, int]] = {}
        self._cols: dict[int, dict[int, int]] = {}
        self._row_sums: dict[int, int] = {}
        self._col_sums: dict[int, int] = {}
        self.rating_count = 0
        self.epoch = 0  # bumped on every successful mutation

    # -- mutation ---------------------------------------------------------

    def insert(self, user: int, profile: int, value: int) -> Optional[int]:
        """Store one rating, overwriting any previous one for the same pair.

        Returns the replaced value, or None if the pair was new.
        """
        if not isinstance(value, int) or isinstance(value, bool):
            raise OutOfScaleError(f"rating value must be an integer, got {value!r}")
        if not self.scale.contains(value):
            raise OutOfScaleError(
                f"rating {value} outside scale {self.scale.r_min}..{self.scale.r_max}"
            )
        row = self._rows.setdefault(user, {})
        col = self._cols.setdefault(profile, {})
        previous = row.get(profile)
        row[profile] = value
        col[user] = value
        if previous is None:
            self.rating_count += 1
            self._row_sums[user] = self._row_sums.get(user, 0) + value
            self._col_sums[profile] = self._col_sums.get(profile, 0) + value
        else:
            self._row_sums[user] += value - previous
            self._col_sums[profile] += value - previous
        self.epoch += 1
        return previous

    def insert_rating(self, rating: Rating) -> Optional[int]:
        return self.insert(rating.user, rating.profile, rating.value)

    # -- reads ------------------------------------------------------------

    def value(self, user: int, profile: int) -> Optional[int]:
        row = self._rows.get(user)
        return None if row is None else row.get(profile)

    def user_ratings(self, user: int) -> Mapping[int, int]:
        """Profile -> value mapping for one user (empty if unknown)."""
        return self._rows.get(user, _EMPTY)

    def profile_ratings(self, profile: int) -> Mapping[int, int]:
        """User -> value mapping for one profile (empty if unknown)."""
        return self._cols.get(profile, _EMPTY)

    def user_mean(self, user: int) -> Optional[float]:
        row = self._rows.get(user)
        if not row:
            return None
        return self._row_sums[user] / len(row)

    def profile_mean(self, profile: int) -> Optional[float]:
        col = self._cols.get(profile)
        if not col:
            return None
        return self._col_sums[profile] / len(col)

    def has_user(self, user: int) -> bool:
        return bool(self._rows.get(user))

    def has_profile(self, profile: int) -> bool:
        return bool(self._cols.get(profile))

    def users(self) -> Iterator[int]:
        return iter(self._rows)

    def profiles(self) -> Iterator[int]:
        return iter(self._cols)

    @property
    def user_count(self) -> int:
        return len(self._rows)

    @property
    def profile_count(self) -> int:
        return len(self._cols)

    def iter_ratings(self) -> Iterator[tuple[int, int, int]]:
        for user, row in self._rows.items():
            for profile, value in row.items():
                yield user, profile, value

    def iter_ratings_by_profile(self) -> Iterator[tuple[int, int, int]]:
        """Column-order iteration; multiset-equal to iter_ratings."""
        for profile, col in self._cols.items():
            for user, value in col.items():
                yield user, profile, value

    def copy(self) -> "RatingsMatrix":
        clone = RatingsMatrix(self.scale)
        clone._rows = {u: dict(r) for u, r in self._rows.items()}
        clone._cols = {p: dict(c) for p, c in self._cols.items()}
        clone._row_sums = dict(self._row_sums)
        clone._col_sums = dict(self._col_sums)
        clone.rating_count = self.rating_count
        return clone

    def __len__(self) -> int:
        return self.rating_count

    def __repr__(self) -> str:
        return (
            f"RatingsMatrix({self.user_count} users x {self.profile_count} profiles, "
            f"{self.rating_count} ratings, scale {self.scale.r_min}..{self.scale.r_max})"
        )


_EMPTY: Mapping[int, int] = {}


class _MaskedMapping(Mapping[int, int]):
    """Read-only view of a mapping with a set of keys hidden."""

    __slots__ = ("_base", "_hidden")

    def __init__(self, base: Mapping[int, int], hidden: frozenset[int]):
        self._base = base
        self._hidden = hidden

    def __getitem__(self, key: int) -> int:
        if key in self._hidden:
            raise KeyError(key)
        return self._base[key]

    def __contains__(self, key: object) -> bool:
        return key not in self._hidden and key in self._base

    def __iter__(self) -> Iterator[int]:
        return (k for k in self._base if k not in self._hidden)

    def __len__(self) -> int:
        return len(self._base) - sum(1 for k in self._hidden if k in self._base)


class MaskedUserView:
    """Matrix view with part of ONE user's row hidden.

    Backbone of hold-out hygiene: benchmark predictions run against a view in
    which the held-out cells simply do not exist, so no code path can observe
    a target rating. `hidden_profiles=None` hides the user's entire row except
    `visible_profiles`; passing a single-element hidden set realizes the
    leave-one-out mask.
    """

    def __init__(
        self,
        base: RatingsMatrix,
        user: int,
        hidden_profiles: Optional[Iterable[int]] = None,
        visible_profiles: Optional[Iterable[int]] = None,
    ):
        if (hidden_profiles is None) == (visible_profiles is None):
            raise ValueError("exactly one of hidden_profiles/visible_profiles required")
        row = base.user_ratings(user)
        if hidden_profiles is not None:
            hidden = frozenset(p for p in hidden_profiles if p in row)
        else:
            visible = frozenset(visible_profiles)  # type: ignore[arg-type]
            hidden = frozenset(p for p in row if p not in visible)
        self.base = base
        self.scale = base.scale
        self.masked_user = user
        self.hidden = hidden
        self._hidden_sum = sum(row[p] for p in hidden)

    def value(self, user: int, profile: int) -> Optional[int]:
        if user == self.masked_user and profile in self.hidden:
            return None
        return self.base.value(user, profile)

    def user_ratings(self, user: int) -> Mapping[int, int]:
        base = self.base.user_ratings(user)
        if user != self.masked_user or not self.hidden:
            return base
        return _MaskedMapping(base, self.hidden)

    def profile_ratings(self, profile: int) -> Mapping[int, int]:
        base = self.base.profile_ratings(profile)
        if profile in self.hidden and self.masked_user in base:
            return _MaskedMapping(base, frozenset((self.masked_user,)))
        return base

    def user_mean(self, user: int) -> Optional[float]:
        if user != self.masked_user or not self.hidden:
            return self.base.user_mean(user)
        row = self.base.user_ratings(user)
        remaining = len(row) - len(self.hidden)
        if remaining <= 0:
            return None
        total = self.base._row_sums[user] - self._hidden_sum
        return total / remaining

    def profile_mean(self, profile: int) -> Optional[float]:
        base_col = self.base.profile_ratings(profile)
        if profile not in self.hidden or self.masked_user not in base_col:
            return self.base.profile_mean(profile)
        remaining = len(base_col) - 1
        if remaining <= 0:
            return None
        total = self.base._col_sums[profile] - base_col[self.masked_user]
        return total / remaining

    def has_user(self, user: int) -> bool:
        if user == self.masked_user:
            return len(self.base.user_ratings(user)) > len(self.hidden)
        return self.base.has_user(user)

    def has_profile(self, profile: int) -> bool:
        col = self.base.profile_ratings(profile)
        if profile in self.hidden and self.masked_user in col:
            return len(col) > 1
        return bool(col)

    def users(self) -> Iterator[int]:
        for u in self.base.users():
            if self.has_user(u):
                yield u

    def profiles(self) -> Iterator[int]:
        for p in self.base.profiles():
            if self.has_profile(p):
                yield p


def mask_cell(base: RatingsMatrix, user: int, profile: int) -> MaskedUserView:
    """Leave-one-out view hiding exactly the (user, profile) cell."""
    return MaskedUserView(base, user, hidden_profiles=(profile,))


MatrixReader = Union[RatingsMatrix, MaskedUserView]
"""Anything exposing the read interface predictors rely on."""


# -- ingestion -------------------------------------------------------------


@dataclass
class IngestResult:
    matrix: RatingsMatrix
    line_count: int = 0
    skipped_lines: int = 0
    errors: list[str] = field(default_factory=list)


def ingest_ratings(
    source: Union[IO[str], Iterable[str]],
    scale: RatingScale = DEFAULT_SCALE,
    *,
    on_error: str = "abort",
    header: bool = False,
) -> IngestResult:
    """Load `user_id,profile_id,value` CSV lines into a fresh matrix.

    Duplicate (user, profile) pairs keep the last value seen. Malformed lines
    and out-of-scale values either abort with an IngestError carrying the line
    number, or are counted and skipped (`on_error="skip"`).
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    result = IngestResult(RatingsMatrix(scale))
    matrix = result.matrix
    for line_no, raw in enumerate(source, start=1):
        if header and line_no == 1:
            continue
        line = raw.strip()
        if not line:
            continue
        result.line_count += 1
        try:
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"expected 3 comma-separated fields, got {len(parts)}")
            user, profile, value = (int(p.strip()) for p in parts)
            matrix.insert(user, profile, value)
        except (ValueError, OutOfScaleError) as exc:
            err = IngestError(line_no, line, str(exc))
            if on_error == "abort":
                raise err from exc
            result.skipped_lines += 1
            result.errors.append(str(err))
    return result


def ingest_genders(
    source: Union[IO[str], Iterable[str]],
    *,
    on_error: str = "abort",
    header: bool = False,
) -> dict[int, str]:
    """Load `user_id,{M|F|U}` CSV lines into an attribute map."""
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    attrs: dict[int, str] = {}
    for line_no, raw in enumerate(source, start=1):
        if header and line_no == 1:
            continue
        line = raw.strip()
        if not line:
            continue
        try:
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"expected 2 comma-separated fields, got {len(parts)}")
            user = int(parts[0].strip())
            gender = parts[1].strip().upper()
            if gender not in GENDERS:
                raise ValueError(f"gender must be one of {GENDERS}, got {gender!r}")
            attrs[user] = gender
        except ValueError as exc:
            if on_error == "abort":
                raise IngestError(line_no, line, str(exc)) from exc
    return attrs


# -- statistics ------------------------------------------------------------


@dataclass
class DatasetStats:
    """Headline dataset figures, normalized moments on the 0-1 scale.

    `density_permille` is the rating count over the full potential matrix of
    total_users x total_users, per mille: in this domain every known user is
    also a rateable profile, so the potential matrix is square over everyone.
    """

    total_users: int
    users_with_ratings: int
    items_with_ratings: int
    rating_count: int
    density_permille: Optional[float]
    max_ratings_one_user: int
    max_ratings_one_profile: int
    mean: Optional[float]
    median: Optional[float]
    sd: Optional[float]

    @property
    def moments_defined(self) -> bool:
        return self.mean is not None


def compute_stats(
    matrix: RatingsMatrix, extra_user_ids: Optional[Iterable[int]] = None
) -> DatasetStats:
    """Single pass over the matrix; `extra_user_ids` widens the known-user set
    (e.g. ids that appear only in the gender file)."""
    known: set[int] = set(matrix._rows)
    known.update(matrix._cols)
    if extra_user_ids is not None:
        known.update(extra_user_ids)

    count = matrix.rating_count
    if count == 0:
        return DatasetStats(
            total_users=len(known),
            users_with_ratings=0,
            items_with_ratings=0,
            rating_count=0,
            density_permille=None,
            max_ratings_one_user=0,
            max_ratings_one_profile=0,
            mean=None,
            median=None,
            sd=None,
        )

    # integer ratings: exact moments via a value histogram
    histogram: dict[int, int] = {}
    for row in matrix._rows.values():
        for value in row.values():
            histogram[value] = histogram.get(value, 0) + 1
    total = sum(v * n for v, n in histogram.items())
    mean = total / count
    sq = sum((v - mean) ** 2 * n for v, n in histogram.items())
    sd = (sq / count) ** 0.5
    median = _histogram_median(histogram, count)

    scale = matrix.scale
    total_users = len(known)
    return DatasetStats(
        total_users=total_users,
        users_with_ratings=matrix.user_count,
        items_with_ratings=matrix.profile_count,
        rating_count=count,
        density_permille=1000.0 * count / (total_users * total_users),
        max_ratings_one_user=max(len(r) for r in matrix._rows.values()),
        max_ratings_one_profile=max(len(c) for c in matrix._cols.values()),
        mean=scale.normalize(mean),
        median=scale.normalize(median),
        sd=sd / scale.width,
    )


def _histogram_median(histogram: dict[int, int], count: int) -> float:
    """Median of the multiset described by value -> occurrences."""
    lo_rank = (count - 1) // 2
    hi_rank = count // 2
    lo = hi = None
    seen = 0
    for value in sorted(histogram):
        seen += histogram[value]
        if lo is None and seen > lo_rank:
            lo = value
        if seen > hi_rank:
            hi = value
            break
    assert lo is not None and hi is not None
    return (lo + hi) / 2


def naive_stats(
    ratings: Iterable[tuple[int, int, int]],
    scale: RatingScale,
    extra_user_ids: Optional[Iterable[int]] = None,
) -> DatasetStats:
    """Independent full-scan oracle for compute_stats (test reference)."""
    triples = list(ratings)
    users: dict[int, int] = {}
    profiles: dict[int, int] = {}
    for u, p, _ in triples:
        users[u] = users.get(u, 0) + 1
        profiles[p] = profiles.get(p, 0) + 1
    known = set(users) | set(profiles) | set(extra_user_ids or ())
    if not triples:
        return DatasetStats(len(known), 0, 0, 0, None, 0, 0, None, None, None)
    values = sorted(v for _, _, v in triples)
    n = len(values)
    mean = sum(values) / n
    sd = (sum((v - mean) ** 2 for v in values) / n) ** 0.5
    median = statistics.median(values)
    return DatasetStats(
        total_users=len(known),
        users_with_ratings=len(users),
        items_with_ratings=len(profiles),
        rating_count=n,
        density_permille=1000.0 * n / (len(known) ** 2),
        max_ratings_one_user=max(users.values()),
        max_ratings_one_profile=max(profiles.values()),
        mean=scale.normalize(mean),
        median=scale.normalize(median),
        sd=sd / scale.width,
    )
