"""Independent reference implementations used as test oracles.

Everything here is written as a direct, naive transcription of the target
formulas over a plain dict-of-dicts rating table: no shared code, caching,
sufficient statistics, or vectorization from the package. Deliberately slow
and obvious.
"""

from __future__ import annotations

import math
import statistics

VALUE = "value"
SKIPPED = "skipped"


def table(triples):
    """{user: {profile: value}} from (user, profile, value) triples."""
    R = {}
    for u, p, v in triples:
        R.setdefault(u, {})[p] = v
    return R


def without(R, a, j):
    """Deep copy of the table with the (a, j) cell removed."""
    out = {u: dict(row) for u, row in R.items()}
    if a in out and j in out[a]:
        del out[a][j]
        if not out[a]:
            del out[a]
    return out


def user_mean(R, u):
    row = R.get(u)
    return sum(row.values()) / len(row) if row else None


def profile_mean(R, j):
    col = [row[j] for row in R.values() if j in row]
    return sum(col) / len(col) if col else None


def raters_of(R, j):
    return [u for u, row in R.items() if j in row]


def pearson_user_oracle(R, a, j):
    """Pearson weight of users a and j over co-rated profiles; each user is
    centered by the mean over all their ratings. None when undefined."""
    row_a, row_j = R.get(a, {}), R.get(j, {})
    common = [p for p in row_a if p in row_j]
    if not common:
        return None
    ma, mj = user_mean(R, a), user_mean(R, j)
    num = sum((row_a[p] - ma) * (row_j[p] - mj) for p in common)
    da = sum((row_a[p] - ma) ** 2 for p in common)
    dj = sum((row_j[p] - mj) ** 2 for p in common)
    if da <= 0 or dj <= 0:
        return None
    return max(-1.0, min(1.0, num / math.sqrt(da * dj))), len(common)


def pearson_item_oracle(R, j, l):
    """Adjusted Pearson weight of profiles j and l over their co-raters,
    with each co-rating pair centered by that user's mean."""
    co = [u for u, row in R.items() if j in row and l in row]
    if not co:
        return None
    num = dj = dl = 0.0
    for u in co:
        mu = user_mean(R, u)
        xj = R[u][j] - mu
        xl = R[u][l] - mu
        num += xj * xl
        dj += xj * xj
        dl += xl * xl
    if dj <= 0 or dl <= 0:
        return None
    return max(-1.0, min(1.0, num / math.sqrt(dj * dl))), len(co)


def _clamp(scale, v):
    return min(max(v, scale[0]), scale[1])


def predict_mean_oracle(R, scale, a, j):
    m = profile_mean(R, j)
    if m is None:
        return (SKIPPED, "no_data")
    return (VALUE, _clamp(scale, m))


def predict_user_user_oracle(R, scale, a, j, min_overlap, max_neighbors):
    """Active user's mean plus the normalized similarity-weighted deviations
    of the top neighbors, among users who rated j, overlap >= min_overlap."""
    ma = user_mean(R, a)
    if ma is None:
        return (SKIPPED, "unknown_entity")
    eligible = []
    for u in raters_of(R, j):
        if u == a:
            continue
        got = pearson_user_oracle(R, a, u)
        if got is None:
            continue
        w, overlap = got
        if overlap < min_overlap:
            continue
        eligible.append((u, w))
    if not eligible:
        return (SKIPPED, "no_neighbors")
    eligible.sort(key=lambda e: (-e[1], e[0]))
    chosen = eligible[:max_neighbors]
    denom = sum(abs(w) for _, w in chosen)
    if denom > 0:
        dev = sum(w * (R[u][j] - user_mean(R, u)) for u, w in chosen) / denom
    else:
        dev = 0.0
    return (VALUE, _clamp(scale, ma + dev))


def predict_item_item_oracle(R, scale, a, j, min_overlap, max_neighbors):
    """Target profile's mean plus the normalized weighted deviations of the
    active user's ratings of the most similar profiles the user rated."""
    mj = profile_mean(R, j)
    if mj is None:
        return (SKIPPED, "no_data")
    eligible = []
    for l in R.get(a, {}):
        if l == j:
            continue
        got = pearson_item_oracle(R, j, l)
        if got is None:
            continue
        w, overlap = got
        if overlap < min_overlap:
            continue
        eligible.append((l, w))
    if not eligible:
        return (SKIPPED, "no_neighbors")
    eligible.sort(key=lambda e: (-e[1], e[0]))
    chosen = eligible[:max_neighbors]
    denom = sum(abs(w) for _, w in chosen)
    if denom > 0:
        dev = sum(w * (R[a][l] - profile_mean(R, l)) for l, w in chosen) / denom
    else:
        dev = 0.0
    return (VALUE, _clamp(scale, mj + dev))


def stats_oracle(triples, scale):
    """Naive single-pass dataset statistics over raw triples."""
    users, profiles = {}, {}
    values = []
    for u, p, v in triples:
        users[u] = users.get(u, 0) + 1
        profiles[p] = profiles.get(p, 0) + 1
        values.append(v)
    known = set(users) | set(profiles)
    if not values:
        return {
            "total_users": len(known),
            "users_with_ratings": 0,
            "items_with_ratings": 0,
            "rating_count": 0,
            "density_permille": None,
            "max_ratings_one_user": 0,
            "max_ratings_one_profile": 0,
            "mean": None,
            "median": None,
            "sd": None,
        }
    width = scale[1] - scale[0]
    norm = [(v - scale[0]) / width for v in values]
    mean = sum(norm) / len(norm)
    return {
        "total_users": len(known),
        "users_with_ratings": len(users),
        "items_with_ratings": len(profiles),
        "rating_count": len(values),
        "density_permille": 1000.0 * len(values) / len(known) ** 2,
        "max_ratings_one_user": max(users.values()),
        "max_ratings_one_profile": max(profiles.values()),
        "mean": mean,
        "median": statistics.median(norm),
        "sd": math.sqrt(sum((x - mean) ** 2 for x in norm) / len(norm)),
    }


def nmae_oracle(pairs, scale):
    """Hand formula: mean absolute error over counted pairs divided by the
    scale width, as a percentage."""
    errors = [abs(p - t) for p, t in pairs]
    return 100.0 * (sum(errors) / len(errors)) / (scale[1] - scale[0])


def random_fixture(rng, n_users=12, n_profiles=12, density=0.4, scale=(1, 10)):
    """Random small rating table as triples; ids deliberately non-contiguous."""
    triples = []
    for u in range(n_users):
        for p in range(n_profiles):
            if rng.random() < density:
                triples.append(
                    (10 + u * 3, 500 + p * 7, rng.randint(scale[0], scale[1]))
                )
    return triples
