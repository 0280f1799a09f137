"""Neighborhood collaborative filtering for dating-style rating data.

Library surface: a sparse rating matrix, Pearson-similarity neighborhoods,
four sklearn-style rating predictors, three cross-validation protocols, a
binary-RPC TCP server, and a blind algorithm-duel experiment.
"""

from .errors import (
    HygieneViolationError,
    IngestError,
    NeighborlyError,
    OutOfScaleError,
    ProtocolError,
    RemoteError,
    SessionError,
    UndefinedMetricError,
    UnknownEntityError,
)
from .estimators import (
    ItemItem,
    ItemMean,
    Prediction,
    RandomRating,
    RatingPredictor,
    RecommendationList,
    UserUser,
    parse_algorithm,
)
from .evaluation import (
    NmaeAccumulator,
    ProductionConfig,
    ValidationReport,
    nmae,
    run_all_but_one,
    run_given_random_x,
    run_production,
)
from .matrix import (
    DatasetStats,
    Rating,
    RatingScale,
    RatingsMatrix,
    compute_stats,
    ingest_genders,
    ingest_ratings,
)
from .similarity import (
    NeighborSet,
    SimilarityCache,
    SimilarityParams,
    neighbor_set,
    pearson_item_adjusted,
    pearson_user,
)

__version__ = "0.1.0"

__all__ = [
    "HygieneViolationError",
    "IngestError",
    "ItemItem",
    "ItemMean",
    "NeighborSet",
    "NeighborlyError",
    "NmaeAccumulator",
    "OutOfScaleError",
    "Prediction",
    "ProductionConfig",
    "ProtocolError",
    "RandomRating",
    "Rating",
    "RatingPredictor",
    "RatingScale",
    "RatingsMatrix",
    "RecommendationList",
    "RemoteError",
    "SessionError",
    "SimilarityCache",
    "SimilarityParams",
    "UndefinedMetricError",
    "UnknownEntityError",
    "UserUser",
    "ValidationReport",
    "DatasetStats",
    "compute_stats",
    "ingest_genders",
    "ingest_ratings",
    "neighbor_set",
    "nmae",
    "parse_algorithm",
    "pearson_item_adjusted",
    "pearson_user",
    "run_all_but_one",
    "run_given_random_x",
    "run_production",
]
