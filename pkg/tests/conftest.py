import random

import pytest

from neighborly.matrix import RatingsMatrix
from neighborly.synthetic import PlantedConfig, planted_preferences

from oracles import random_fixture, table


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


def build_matrix(triples, scale=(1, 10)) -> RatingsMatrix:
    from neighborly.matrix import RatingScale

    m = RatingsMatrix(RatingScale(*scale))
    for u, p, v in triples:
        m.insert(u, p, v)
    return m


@pytest.fixture
def small_fixture(rng):
    triples = random_fixture(rng, n_users=10, n_profiles=10, density=0.5)
    return build_matrix(triples), table(triples)


SMALL_PLANTED = PlantedConfig(
    n_users=150,
    n_profiles=90,
    light_ratings=(12, 24),
    heavy_fraction=0.0,
    popularity_exponent=0.9,
)


@pytest.fixture(scope="session")
def planted_small():
    """Compact planted dataset shared by server/duel/protocol tests."""
    return planted_preferences(42, SMALL_PLANTED)
