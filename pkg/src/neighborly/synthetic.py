"""Seeded synthetic rating generators for benchmarks and tests.

`planted_preferences` builds a matrix with a known structure: every profile
carries a global quality component (what a popularity baseline can learn) and
every user belongs to a taste cluster with its own per-profile preference
component (what neighborhood CF can learn on top). Profile exposure follows a
power-law popularity so that users overlap enough for similarity estimation,
as rating traffic does on a real site. A small fraction of heavy raters
exceeds the 100-rating threshold the cold-start protocol requires.

All randomness is drawn from numpy's default_rng on the given seed; equal
seeds reproduce equal datasets bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix import DEFAULT_SCALE, RatingScale, RatingsMatrix

PROFILE_ID_BASE = 1
USER_ID_BASE = 100_001


@dataclass(frozen=True)
class PlantedConfig:
    n_users: int = 2000
    n_profiles: int = 1000
    n_clusters: int = 3
    cluster_jitter: float = 0.35  # per-user spread around the cluster direction
    heavy_fraction: float = 0.02  # users rating enough for cold-start runs
    light_ratings: tuple[int, int] = (28, 56)
    heavy_ratings: tuple[int, int] = (110, 160)
    popularity_exponent: float = 1.4
    global_weight: float = 0.6  # profile-quality contribution (rating units)
    cluster_weight: float = 2.0  # taste contribution (rating units)
    noise_sd: float = 2.1
    scale: RatingScale = DEFAULT_SCALE


def planted_preferences(
    seed: int, config: PlantedConfig = PlantedConfig()
) -> tuple[RatingsMatrix, dict[int, str]]:
    """Generate (matrix, gender attributes) with planted preference structure.

    Rating model, in scale units before rounding and clipping:
        r(u, p) = mid + global_weight * quality[p]
                      + cluster_weight * (f_u . g_p)
                      + noise_sd * eps
    where g_p is a standard-normal profile vector and f_u is a unit taste
    vector drawn around one of n_clusters orthogonal cluster directions with
    per-user jitter. Users of one cluster are strongly but not identically
    aligned, so neighbor usefulness degrades gradually with similarity rank
    instead of falling off a cliff at the cluster boundary. Genders alternate
    M/F over both profiles and raters so sex-filtered recommendation is
    exercisable.
    """
    rng = np.random.default_rng(seed)
    cfg = config
    scale = cfg.scale
    mid = (scale.r_min + scale.r_max) / 2.0
    dim = cfg.n_clusters

    quality = rng.standard_normal(cfg.n_profiles)
    profile_vecs = rng.standard_normal((cfg.n_profiles, dim))
    centers, _ = np.linalg.qr(rng.standard_normal((dim, dim)))  # orthonormal rows
    clusters = rng.integers(0, cfg.n_clusters, size=cfg.n_users)
    user_vecs = centers[clusters] + cfg.cluster_jitter * rng.standard_normal(
        (cfg.n_users, dim)
    )
    user_vecs /= np.linalg.norm(user_vecs, axis=1, keepdims=True)

    ranks = rng.permutation(cfg.n_profiles)  # popularity uncorrelated with quality
    weights = 1.0 / np.power(ranks + 1.0, cfg.popularity_exponent)
    weights /= weights.sum()

    n_heavy = round(cfg.n_users * cfg.heavy_fraction)
    matrix = RatingsMatrix(scale)
    for u in range(cfg.n_users):
        lo, hi = cfg.heavy_ratings if u < n_heavy else cfg.light_ratings
        k = int(rng.integers(lo, hi + 1))
        profiles = rng.choice(cfg.n_profiles, size=k, replace=False, p=weights)
        taste = profile_vecs[profiles] @ user_vecs[u]
        base = (
            mid
            + cfg.global_weight * quality[profiles]
            + cfg.cluster_weight * taste
            + cfg.noise_sd * rng.standard_normal(k)
        )
        values = np.clip(np.rint(base), scale.r_min, scale.r_max).astype(int)
        user_id = USER_ID_BASE + u
        for p, v in zip(profiles, values):
            matrix.insert(user_id, PROFILE_ID_BASE + int(p), int(v))

    attributes = {PROFILE_ID_BASE + p: ("M" if p % 2 == 0 else "F") for p in range(cfg.n_profiles)}
    for u in range(cfg.n_users):
        attributes[USER_ID_BASE + u] = "M" if u % 2 == 0 else "F"
    return matrix, attributes


def uniform_ratings(
    seed: int,
    n_users: int = 400,
    n_profiles: int = 400,
    n_ratings: int = 40_000,
    scale: RatingScale = DEFAULT_SCALE,
) -> RatingsMatrix:
    """Uniform random integer ratings on distinct random (user, profile) pairs."""
    rng = np.random.default_rng(seed)
    if n_ratings > n_users * n_profiles:
        raise ValueError("more ratings requested than distinct pairs available")
    cells = rng.choice(n_users * n_profiles, size=n_ratings, replace=False)
    values = rng.integers(scale.r_min, scale.r_max + 1, size=n_ratings)
    matrix = RatingsMatrix(scale)
    for cell, value in zip(cells, values):
        user, profile = divmod(int(cell), n_profiles)
        matrix.insert(USER_ID_BASE + user, PROFILE_ID_BASE + profile, int(value))
    return matrix
