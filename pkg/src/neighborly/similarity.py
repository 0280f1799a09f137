"""Pearson and adjusted-Pearson similarity, neighbor ranking, lazy caching.

User-user similarity is the Pearson correlation over the profiles two users
co-rated, with each user centered by the mean of ALL their ratings (not just
the overlap). Item-item similarity is the user-mean-adjusted Pearson over the
users who co-rated two profiles. Both are undefined (None) when the overlap
is empty or either centered sum of squares is zero; an undefined similarity
can never occupy a neighbor slot.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

from .errors import UnknownEntityError
from .matrix import MatrixReader, RatingsMatrix

USER_USER = "user_user"
ITEM_ITEM = "item_item"


@dataclass(frozen=True)
class SimilarityParams:
    """Neighborhood controls: minimum co-rating overlap and neighborhood cap."""

    min_overlap: int = 5
    max_neighbors: int = 50

    def __post_init__(self) -> None:
        if self.min_overlap < 1:
            raise ValueError(f"min_overlap must be >= 1, got {self.min_overlap}")
        if self.max_neighbors < 1:
            raise ValueError(f"max_neighbors must be >= 1, got {self.max_neighbors}")


class Neighbor(NamedTuple):
    id: int
    weight: float
    overlap: int


@dataclass
class NeighborSet:
    """Ranked neighbors of one anchor: weight descending, ties by ascending id."""

    anchor: int
    neighbors: list[Neighbor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.neighbors)

    def __iter__(self):
        return iter(self.neighbors)

    def ids(self) -> list[int]:
        return [n.id for n in self.neighbors]


def _clamp_weight(w: float) -> float:
    return -1.0 if w < -1.0 else (1.0 if w > 1.0 else w)


def pearson_user(m: MatrixReader, a: int, j: int) -> Optional[tuple[float, int]]:
    """Pearson weight between users a and j over their co-rated profiles.

    Each user is centered by the mean of all their ratings. Returns
    (weight, overlap), or None when there is no overlap or either user has
    zero squared deviation over the overlap.
    """
    if a == j:
        raise ValueError("pearson_user requires two distinct users")
    row_a = m.user_ratings(a)
    row_j = m.user_ratings(j)
    if not row_a or not row_j:
        return None
    if len(row_j) < len(row_a):
        row_a, row_j = row_j, row_a
        mean_a, mean_j = m.user_mean(j), m.user_mean(a)
    else:
        mean_a, mean_j = m.user_mean(a), m.user_mean(j)
    num = da = dj = 0.0
    overlap = 0
    for p, va in row_a.items():
        vj = row_j.get(p)
        if vj is None:
            continue
        overlap += 1
        xa = va - mean_a
        xj = vj - mean_j
        num += xa * xj
        da += xa * xa
        dj += xj * xj
    if overlap == 0 or da <= 0.0 or dj <= 0.0:
        return None
    return _clamp_weight(num / math.sqrt(da * dj)), overlap


def pearson_item_adjusted(m: MatrixReader, j: int, l: int) -> Optional[tuple[float, int]]:
    """Adjusted Pearson weight between profiles j and l.

    Sums run over users who rated both profiles; every co-rating pair is
    centered by that user's own mean rating, which removes per-user scale
    offsets. Returns (weight, overlap) or None as for pearson_user.
    """
    if j == l:
        raise ValueError("pearson_item_adjusted requires two distinct profiles")
    col_j = m.profile_ratings(j)
    col_l = m.profile_ratings(l)
    if not col_j or not col_l:
        return None
    if len(col_l) < len(col_j):
        col_j, col_l = col_l, col_j  # iterate the smaller; formula is symmetric
    num = dj = dl = 0.0
    overlap = 0
    for u, vj in col_j.items():
        vl = col_l.get(u)
        if vl is None:
            continue
        overlap += 1
        mean_u = m.user_mean(u)
        xj = vj - mean_u
        xl = vl - mean_u
        num += xj * xl
        dj += xj * xj
        dl += xl * xl
    if overlap == 0 or dj <= 0.0 or dl <= 0.0:
        return None
    return _clamp_weight(num / math.sqrt(dj * dl)), overlap


def _rank(entries: list[Neighbor]) -> list[Neighbor]:
    entries.sort(key=lambda n: (-n.weight, n.id))
    return entries


def user_similarity_row(m: MatrixReader, a: int) -> list[Neighbor]:
    """All users with defined similarity to a (any overlap >= 1), ranked.

    One pass over the raters of a's profiles accumulates, per candidate, the
    sufficient statistics of the overlap; the final per-candidate arithmetic
    is algebraically identical to pearson_user.
    """
    row_a = m.user_ratings(a)
    if not row_a:
        raise UnknownEntityError(f"user {a} has no ratings")
    # per candidate: [n, Sa, Su, Saa, Suu, Sau]
    stats: dict[int, list[float]] = {}
    for p, va in row_a.items():
        for u, vu in m.profile_ratings(p).items():
            if u == a:
                continue
            s = stats.get(u)
            if s is None:
                s = stats[u] = [0, 0.0, 0.0, 0.0, 0.0, 0.0]
            s[0] += 1
            s[1] += va
            s[2] += vu
            s[3] += va * va
            s[4] += vu * vu
            s[5] += va * vu
    mean_a = m.user_mean(a)
    out: list[Neighbor] = []
    for u, (n, sa, su, saa, suu, sau) in stats.items():
        mean_u = m.user_mean(u)
        da = saa - 2.0 * mean_a * sa + n * mean_a * mean_a
        du = suu - 2.0 * mean_u * su + n * mean_u * mean_u
        if da <= 0.0 or du <= 0.0:
            continue
        num = sau - mean_u * sa - mean_a * su + n * mean_a * mean_u
        out.append(Neighbor(u, _clamp_weight(num / math.sqrt(da * du)), int(n)))
    return _rank(out)


def item_similarity_row(m: MatrixReader, j: int) -> list[Neighbor]:
    """All profiles with defined adjusted similarity to j, ranked."""
    col_j = m.profile_ratings(j)
    if not col_j:
        raise UnknownEntityError(f"profile {j} has no ratings")
    # per candidate: [n, Sjj, Sll, Sjl] of user-mean-centered co-ratings
    stats: dict[int, list[float]] = {}
    for u, vj in col_j.items():
        mean_u = m.user_mean(u)
        xj = vj - mean_u
        for l, vl in m.user_ratings(u).items():
            if l == j:
                continue
            xl = vl - mean_u
            s = stats.get(l)
            if s is None:
                s = stats[l] = [0, 0.0, 0.0, 0.0]
            s[0] += 1
            s[1] += xj * xj
            s[2] += xl * xl
            s[3] += xj * xl
    out: list[Neighbor] = []
    for l, (n, sjj, sll, sjl) in stats.items():
        if sjj <= 0.0 or sll <= 0.0:
            continue
        out.append(Neighbor(l, _clamp_weight(sjl / math.sqrt(sjj * sll)), int(n)))
    return _rank(out)


class SimilarityCache:
    """Lazy per-anchor similarity rows, invalidated by matrix epoch.

    A row holds every candidate with a defined similarity at overlap >= 1;
    neighbor_set() filters and truncates at query time, so one cached row
    serves any (min_overlap, max_neighbors, candidate filter) combination.
    Entries older than the matrix epoch are recomputed on next use — a coarse
    but safe invalidation scheme. Thread-safe; optionally LRU-bounded.
    """

    def __init__(self, mode: str, max_entries: Optional[int] = None):
        if mode not in (USER_USER, ITEM_ITEM):
            raise ValueError(f"mode must be {USER_USER!r} or {ITEM_ITEM!r}")
        self.mode = mode
        self.max_entries = max_entries
        self._entries: "OrderedDict[int, tuple[int, list[Neighbor], dict[int, Neighbor]]]" = (
            OrderedDict()
        )
        self._lock = threading.Lock()
        self.computations = 0  # rows computed; observable laziness

    def row(self, m: RatingsMatrix, anchor: int) -> tuple[list[Neighbor], dict[int, Neighbor]]:
        """Ranked row + by-id lookup for anchor, fresh at m.epoch."""
        epoch = m.epoch
        with self._lock:
            entry = self._entries.get(anchor)
            if entry is not None and entry[0] == epoch:
                self._entries.move_to_end(anchor)
                return entry[1], entry[2]
        if self.mode == USER_USER:
            ranked = user_similarity_row(m, anchor)
        else:
            ranked = item_similarity_row(m, anchor)
        by_id = {n.id: n for n in ranked}
        with self._lock:
            self.computations += 1
            self._entries[anchor] = (epoch, ranked, by_id)
            self._entries.move_to_end(anchor)
            if self.max_entries is not None:
                while len(self._entries) > self.max_entries:
                    self._entries.popitem(last=False)
        return ranked, by_id

    def invalidate(self, user: Optional[int] = None, profile: Optional[int] = None) -> None:
        """Drop cached rows eagerly.

        Freshness never depends on this being called (the epoch guard already
        rejects stale rows); dropping just reclaims memory promptly. Entry-level
        precision would be an optimization, so the whole map is cleared.
        """
        del user, profile
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def neighbor_set(
    m: MatrixReader,
    anchor: int,
    params: SimilarityParams,
    *,
    mode: str = USER_USER,
    candidate_filter: Optional[Callable[[int], bool]] = None,
    cache: Optional[SimilarityCache] = None,
    positive_only: bool = False,
) -> NeighborSet:
    """Ranked neighbors of anchor under params and an optional candidate filter.

    Raises UnknownEntityError for an anchor with no ratings (distinct from an
    empty result). Cached rows are used only when m is the cache's live
    matrix type; masked benchmark views always compute directly.
    """
    if cache is not None and cache.mode != mode:
        raise ValueError(f"cache mode {cache.mode!r} does not match {mode!r}")
    if mode == USER_USER:
        known = m.has_user(anchor)
    else:
        known = m.has_profile(anchor)
    if not known:
        kind = "user" if mode == USER_USER else "profile"
        raise UnknownEntityError(f"{kind} {anchor} has no ratings")
    if cache is not None and isinstance(m, RatingsMatrix):
        ranked, _ = cache.row(m, anchor)
    elif mode == USER_USER:
        ranked = user_similarity_row(m, anchor)
    else:
        ranked = item_similarity_row(m, anchor)
    picked: list[Neighbor] = []
    for n in ranked:
        if n.overlap < params.min_overlap:
            continue
        if positive_only and n.weight <= 0.0:
            continue
        if candidate_filter is not None and not candidate_filter(n.id):
            continue
        picked.append(n)
        if len(picked) == params.max_neighbors:
            break
    return NeighborSet(anchor=anchor, neighbors=picked)


# -- diagnostics -------------------------------------------------------------

HISTOGRAM_BUCKET_WIDTH = 0.02


def similarity_histogram(
    m: MatrixReader,
    *,
    mode: str = USER_USER,
    min_overlap: int = 1,
    anchors: Optional[Iterable[int]] = None,
) -> list[int]:
    """Histogram of pairwise similarity weights in 0.02-wide buckets on [-1, 1].

    Each unordered pair with overlap >= min_overlap counts once. Quadratic in
    the number of anchors; pass `anchors` to sample on large matrices.
    """
    buckets = [0] * round(2.0 / HISTOGRAM_BUCKET_WIDTH)
    top = len(buckets) - 1
    if anchors is None:
        anchors = m.users() if mode == USER_USER else m.profiles()
        restricted = False
    else:
        restricted = True
    row_fn = user_similarity_row if mode == USER_USER else item_similarity_row
    for a in anchors:
        for n in row_fn(m, a):
            # each unordered pair once, unless sampling anchors
            if not restricted and n.id <= a:
                continue
            if n.overlap < min_overlap:
                continue
            idx = int((n.weight + 1.0) / HISTOGRAM_BUCKET_WIDTH)
            buckets[idx if idx <= top else top] += 1
    return buckets


def render_histogram(buckets: list[int]) -> str:
    """One line per bucket: `low<TAB>high<TAB>count`."""
    lines = []
    for i, count in enumerate(buckets):
        low = -1.0 + i * HISTOGRAM_BUCKET_WIDTH
        lines.append(f"{low:.2f}\t{low + HISTOGRAM_BUCKET_WIDTH:.2f}\t{count}")
    return "\n".join(lines) + "\n"
