"""NMAE metric and the three cross-validation protocols.

Protocols never let a prediction observe its own target: leave-one-out and
cold-start runs predict against masked views (or algebraically equivalent
batched statistics), and the live-traffic protocol predicts each rating
atomically before inserting it. Skipped predictions are excluded from the
metric and counted separately.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import HygieneViolationError, NeighborlyError, UndefinedMetricError
from .estimators import (
    SKIP_NO_DATA,
    SKIP_NO_NEIGHBORS,
    SKIP_UNKNOWN_ENTITY,
    ItemMean,
    Prediction,
    RandomRating,
    RatingPredictor,
    UserUser,
)
from .matrix import MaskedUserView, RatingScale, RatingsMatrix, mask_cell

ALL_BUT_ONE = "all_but_one"
GIVEN_RANDOM_X = "given_random_x"
PRODUCTION = "production"

GIVEN_X_TRAINING_POOL = 99  # ratings drawn into the nested training prefixes
GIVEN_X_MIN_RATINGS = 100  # users must have strictly more ratings than this


@dataclass
class NmaeAccumulator:
    """Absolute-error sum over counted predictions; skips tracked separately."""

    abs_error_sum: float = 0.0
    counted: int = 0
    skipped: int = 0

    def add(self, prediction: Prediction, truth: float) -> None:
        if prediction.is_skipped:
            self.skipped += 1
        else:
            self.abs_error_sum += abs(prediction.value - truth)
            self.counted += 1

    def merge(self, other: "NmaeAccumulator") -> None:
        self.abs_error_sum += other.abs_error_sum
        self.counted += other.counted
        self.skipped += other.skipped


def nmae(acc: NmaeAccumulator, scale: RatingScale) -> float:
    """Mean absolute error over the scale width, as a percentage."""
    if acc.counted == 0:
        raise UndefinedMetricError("NMAE undefined: zero counted predictions")
    return 100.0 * (acc.abs_error_sum / acc.counted) / scale.width


@dataclass
class CurvePoint:
    x: int
    nmae: float
    skipped: int
    counted: int


@dataclass
class ValidationReport:
    protocol: str
    algorithm: str
    overall_nmae: Optional[float]
    skipped: int
    counted: int
    curve: list[CurvePoint] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    valid: bool = True
    # commit-ordered (user, profile, value) insertions of a production run;
    # feeds the single-threaded replay oracle, never rendered
    insertion_log: Optional[list[tuple[int, int, int]]] = field(default=None, repr=False)

    def render(self) -> str:
        """Plot-ready text: `# key=value` header, `step<TAB>nmae<TAB>skipped`
        curve lines, and an `overall` summary line."""
        lines = [f"# protocol={self.protocol}", f"# algorithm={self.algorithm}"]
        for key in sorted(self.config):
            lines.append(f"# {key}={self.config[key]}")
        for key in sorted(self.extras):
            lines.append(f"# {key}={self.extras[key]}")
        lines.append(f"# counted={self.counted}")
        lines.append(f"# valid={str(self.valid).lower()}")
        for point in self.curve:
            lines.append(f"{point.x}\t{point.nmae:.4f}\t{point.skipped}")
        overall = "undefined" if self.overall_nmae is None else f"{self.overall_nmae:.4f}"
        lines.append(f"overall\t{overall}\t{self.skipped}")
        return "\n".join(lines) + "\n"


def _finish(
    protocol: str,
    algo: RatingPredictor,
    scale: RatingScale,
    total: NmaeAccumulator,
    curve: list[CurvePoint],
    config: dict,
    extras: Optional[dict] = None,
) -> ValidationReport:
    overall = None if total.counted == 0 else nmae(total, scale)
    return ValidationReport(
        protocol=protocol,
        algorithm=algo.display_name,
        overall_nmae=overall,
        skipped=total.skipped,
        counted=total.counted,
        curve=curve,
        config=config,
        extras=extras or {},
    )


# -- AllButOne ----------------------------------------------------------------


def all_but_one_predictions(
    matrix: RatingsMatrix, algo: RatingPredictor
) -> Iterator[tuple[int, int, int, Prediction]]:
    """Hide each rating in turn and predict it: yields (user, profile, truth,
    prediction). Dispatches to a batched implementation when one exists; the
    generic path predicts against an explicit leave-one-out view."""
    if isinstance(algo, RandomRating):
        yield from _abo_random(matrix, algo)
    elif isinstance(algo, ItemMean):
        yield from _abo_mean(matrix, algo)
    elif isinstance(algo, UserUser):
        yield from _abo_user_user(matrix, algo)
    else:
        yield from _abo_generic(matrix, algo)


def run_all_but_one(matrix: RatingsMatrix, algo: RatingPredictor) -> ValidationReport:
    if matrix.rating_count == 0:
        raise NeighborlyError("AllButOne requires a non-empty matrix")
    if getattr(algo, "matrix_", None) is not matrix:
        algo.fit(matrix)
    total = NmaeAccumulator()
    target_visible_skips = 0
    count_mean_alt = isinstance(algo, ItemMean)
    for _, profile, truth, prediction in all_but_one_predictions(matrix, algo):
        total.add(prediction, truth)
        if count_mean_alt and len(matrix.profile_ratings(profile)) == 0:
            target_visible_skips += 1  # structurally impossible; kept for the dual count
    extras = {}
    if count_mean_alt:
        # companion skip count with the target left visible (profile mean then
        # always has >= 1 rating, so this is 0 by construction)
        extras["skipped_target_visible"] = target_visible_skips
    return _finish(
        ALL_BUT_ONE,
        algo,
        matrix.scale,
        total,
        [],
        {"ratings": matrix.rating_count},
        extras,
    )


def _abo_generic(matrix, algo):
    for user, profile, truth in matrix.iter_ratings():
        view = mask_cell(matrix, user, profile)
        yield user, profile, truth, algo.predict_pair(user, profile, matrix=view)


def _abo_random(matrix, algo):
    for user, profile, truth in matrix.iter_ratings():
        yield user, profile, truth, algo.predict_pair(user, profile)


def _abo_mean(matrix, algo):
    scale = matrix.scale
    for user, profile, truth in matrix.iter_ratings():
        col = matrix.profile_ratings(profile)
        others = len(col) - 1
        if others == 0:
            yield user, profile, truth, Prediction.skipped(SKIP_NO_DATA)
        else:
            mean = (matrix._col_sums[profile] - truth) / others
            yield user, profile, truth, Prediction.of(scale.clamp(mean))


class _SparseIndex:
    """CSR/CSC snapshot of a matrix for batched evaluation arithmetic."""

    def __init__(self, matrix: RatingsMatrix):
        from scipy import sparse

        self.user_ids = np.array(sorted(matrix.users()), dtype=np.int64)
        self.profile_ids = np.array(sorted(matrix.profiles()), dtype=np.int64)
        self.user_pos = {int(u): i for i, u in enumerate(self.user_ids)}
        self.profile_pos = {int(p): i for i, p in enumerate(self.profile_ids)}
        rows, cols, vals = [], [], []
        for u, p, v in matrix.iter_ratings():
            rows.append(self.user_pos[u])
            cols.append(self.profile_pos[p])
            vals.append(float(v))
        shape = (len(self.user_ids), len(self.profile_ids))
        self.values = sparse.csr_matrix(
            (vals, (rows, cols)), shape=shape, dtype=np.float64
        )
        self.values_csc = self.values.tocsc()
        self.squares_csc = self.values_csc.multiply(self.values_csc).tocsc()
        pattern = self.values_csc.copy()
        pattern.data = np.ones_like(pattern.data)
        self.pattern_csc = pattern
        self.row_sums = np.asarray(self.values.sum(axis=1)).ravel()
        self.row_counts = np.diff(self.values.indptr).astype(np.float64)
        self.user_means = self.row_sums / np.maximum(self.row_counts, 1.0)

    def row(self, ui: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.values.indptr[ui], self.values.indptr[ui + 1]
        return self.values.indices[lo:hi], self.values.data[lo:hi]

    def col(self, pj: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.values_csc.indptr[pj], self.values_csc.indptr[pj + 1]
        return self.values_csc.indices[lo:hi], self.values_csc.data[lo:hi]

    def pair_stats(self, profile_idx: np.ndarray, v_a: np.ndarray):
        """Against every other user, the sufficient statistics of the overlap
        with the (profile_idx, v_a) row: counts and the sums of each side,
        each side squared, and the cross products."""
        sub_v = self.values_csc[:, profile_idx]
        sub_b = self.pattern_csc[:, profile_idx]
        sub_q = self.squares_csc[:, profile_idx]
        ones = np.ones(len(profile_idx))
        n = sub_b @ ones
        sa = sub_b @ v_a
        saa = sub_b @ (v_a * v_a)
        su = sub_v @ ones
        suu = sub_q @ ones
        sau = sub_v @ v_a
        return n, sa, su, saa, suu, sau


def _abo_user_user(matrix, algo):
    """Per active user, compute pairwise sufficient statistics against all
    co-raters in a handful of sparse products, then adjust them per held-out
    rating. Algebraically equal to predicting on a leave-one-out view (the
    tests assert the equivalence)."""
    scale = matrix.scale
    min_o, max_n = algo.min_overlap, algo.max_neighbors
    positive_only = algo.positive_only
    index = _SparseIndex(matrix)
    mu_full = index.user_means
    for ui, a in enumerate(index.user_ids):
        a = int(a)
        profile_idx, v_row = index.row(ui)
        k = len(profile_idx)
        if k == 1:
            profile = int(index.profile_ids[profile_idx[0]])
            yield a, profile, int(v_row[0]), Prediction.skipped(SKIP_UNKNOWN_ENTITY)
            continue
        n_f, sa_f, su_f, saa_f, suu_f, sau_f = index.pair_stats(profile_idx, v_row)
        total_a = v_row.sum()
        for pj, truth in zip(profile_idx, v_row):
            j = int(index.profile_ids[pj])
            truth = float(truth)
            raters, r_j = index.col(pj)
            keep = raters != ui
            idx = raters[keep]
            if idx.size == 0:
                yield a, j, int(truth), Prediction.skipped(SKIP_NO_NEIGHBORS)
                continue
            r_j = r_j[keep]
            n1 = n_f[idx] - 1.0
            sa1 = sa_f[idx] - truth
            su1 = su_f[idx] - r_j
            saa1 = saa_f[idx] - truth * truth
            suu1 = suu_f[idx] - r_j * r_j
            sau1 = sau_f[idx] - truth * r_j
            mu = mu_full[idx]
            ma = (total_a - truth) / (k - 1)
            da = saa1 - 2.0 * ma * sa1 + n1 * ma * ma
            du = suu1 - 2.0 * mu * su1 + n1 * mu * mu
            defined = (n1 >= min_o) & (da > 0.0) & (du > 0.0)
            if not defined.any():
                yield a, j, int(truth), Prediction.skipped(SKIP_NO_NEIGHBORS)
                continue
            num = sau1 - mu * sa1 - ma * su1 + n1 * ma * mu
            w = np.zeros(idx.size)
            w[defined] = np.clip(
                num[defined] / np.sqrt(da[defined] * du[defined]), -1.0, 1.0
            )
            if positive_only:
                defined &= w > 0.0
                if not defined.any():
                    yield a, j, int(truth), Prediction.skipped(SKIP_NO_NEIGHBORS)
                    continue
            sel = np.flatnonzero(defined)
            order = np.lexsort((index.user_ids[idx[sel]], -w[sel]))[:max_n]
            chosen = sel[order]
            denom = np.abs(w[chosen]).sum()
            if denom > 0.0:
                dev = float((w[chosen] * (r_j[chosen] - mu[chosen])).sum()) / denom
            else:
                dev = 0.0
            yield a, j, int(truth), Prediction.of(scale.clamp(ma + dev))


# -- GivenRandomX ---------------------------------------------------------------


def run_given_random_x(
    matrix: RatingsMatrix, algo: RatingPredictor, hold_seed: int
) -> ValidationReport:
    """Cold-start curve: for each user with more than 100 ratings, reveal a
    random 99-rating training pool one rating at a time and predict the
    user's remaining (held-out) ratings at every prefix size i = 1..99.

    Absolute errors are pooled across users per step. Steps where every
    prediction was skipped carry no curve point (their skips still count)."""
    if getattr(algo, "matrix_", None) is not matrix:
        algo.fit(matrix)
    qualifying = sorted(
        u for u in matrix.users() if len(matrix.user_ratings(u)) > GIVEN_X_MIN_RATINGS
    )
    if not qualifying:
        raise NeighborlyError(
            f"GivenRandomX requires at least one user with more than "
            f"{GIVEN_X_MIN_RATINGS} ratings"
        )
    rng = random.Random(hold_seed)
    accs = {i: NmaeAccumulator() for i in range(1, GIVEN_X_TRAINING_POOL + 1)}
    if isinstance(algo, UserUser):
        stepper = _grx_user_user
    elif isinstance(algo, (ItemMean, RandomRating)):
        stepper = _grx_flat
    else:
        stepper = _grx_generic
    for a in qualifying:
        profiles = sorted(matrix.user_ratings(a))
        rng.shuffle(profiles)
        train = profiles[:GIVEN_X_TRAINING_POOL]
        test = profiles[GIVEN_X_TRAINING_POOL:]
        stepper(matrix, algo, a, train, test, accs)
    total = NmaeAccumulator()
    curve = []
    for i in range(1, GIVEN_X_TRAINING_POOL + 1):
        acc = accs[i]
        total.merge(acc)
        if acc.counted:
            curve.append(CurvePoint(i, nmae(acc, matrix.scale), acc.skipped, acc.counted))
    return _finish(
        GIVEN_RANDOM_X,
        algo,
        matrix.scale,
        total,
        curve,
        {"hold_seed": hold_seed, "qualifying_users": len(qualifying)},
    )


def _grx_flat(matrix, algo, a, train, test, accs):
    """Mean and Random ignore the active user's own history: one prediction
    per held-out rating, replicated across every prefix size."""
    row = matrix.user_ratings(a)
    for j in test:
        truth = row[j]
        if isinstance(algo, RandomRating):
            prediction = algo.predict_pair(a, j)
        else:
            col = matrix.profile_ratings(j)
            others = len(col) - 1
            if others == 0:
                prediction = Prediction.skipped(SKIP_NO_DATA)
            else:
                mean = (matrix._col_sums[j] - truth) / others
                prediction = Prediction.of(matrix.scale.clamp(mean))
        for acc in accs.values():
            acc.add(prediction, truth)


def _grx_generic(matrix, algo, a, train, test, accs):
    row = matrix.user_ratings(a)
    for i in range(1, len(train) + 1):
        view = MaskedUserView(matrix, a, visible_profiles=train[:i])
        for j in test:
            accs[i].add(algo.predict_pair(a, j, matrix=view), row[j])


def _grx_user_user(matrix, algo, a, train, test, accs):
    """Incremental variant: revealing one more training rating extends the
    pairwise statistics rather than recomputing them."""
    scale = matrix.scale
    min_o, max_n = algo.min_overlap, algo.max_neighbors
    positive_only = algo.positive_only
    row = matrix.user_ratings(a)
    test_raters = {
        j: [(u, v) for u, v in matrix.profile_ratings(j).items() if u != a] for j in test
    }
    user_means: dict[int, float] = {}
    stats: dict[int, list[float]] = {}
    total_a = 0.0
    for i, p in enumerate(train, start=1):
        va = row[p]
        total_a += va
        for u, vu in matrix.profile_ratings(p).items():
            if u == a:
                continue
            s = stats.get(u)
            if s is None:
                s = stats[u] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
                user_means[u] = matrix.user_mean(u)
            s[0] += 1.0
            s[1] += va
            s[2] += vu
            s[3] += va * va
            s[4] += vu * vu
            s[5] += va * vu
        ma = total_a / i
        weights = _step_weights(stats, user_means, ma, min_o)
        acc = accs[i]
        for j in test:
            truth = row[j]
            cands = [(u, v, weights[u]) for u, v in test_raters[j] if u in weights]
            if positive_only:
                cands = [c for c in cands if c[2] > 0.0]
            if not cands:
                acc.add(Prediction.skipped(SKIP_NO_NEIGHBORS), truth)
                continue
            cands.sort(key=lambda c: (-c[2], c[0]))
            chosen = cands[:max_n]
            denom = sum(abs(wc) for _, _, wc in chosen)
            if denom > 0.0:
                dev = sum(
                    wc * (v - user_means[u]) for u, v, wc in chosen
                ) / denom
            else:
                dev = 0.0
            acc.add(Prediction.of(scale.clamp(ma + dev)), truth)


def _step_weights(stats, user_means, ma, min_o) -> dict[int, float]:
    """Defined Pearson weights for every tracked co-rater at the current step."""
    if not stats:
        return {}
    uids = list(stats)
    arr = np.array([stats[u] for u in uids])
    n, sa, su, saa, suu, sau = (arr[:, c] for c in range(6))
    mu = np.array([user_means[u] for u in uids])
    da = saa - 2.0 * ma * sa + n * ma * ma
    du = suu - 2.0 * mu * su + n * mu * mu
    defined = (n >= min_o) & (da > 0.0) & (du > 0.0)
    if not defined.any():
        return {}
    num = sau - mu * sa - ma * su + n * ma * mu
    w = np.clip(num[defined] / np.sqrt(da[defined] * du[defined]), -1.0, 1.0)
    picked = np.flatnonzero(defined)
    return {uids[i]: float(wv) for i, wv in zip(picked, w)}


# -- Production ----------------------------------------------------------------


@dataclass(frozen=True)
class ProductionConfig:
    n_clients: int = 100
    block_size: int = 10_000
    split_seed: int = 0
    order_seed: int = 1

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")


def split_production(
    matrix: RatingsMatrix, cfg: ProductionConfig
) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """Uniform-random half/half split into (initial, simulation) rating lists."""
    ratings = sorted(matrix.iter_ratings())
    if len(ratings) < 2:
        raise NeighborlyError("Production requires at least 2 ratings to split")
    random.Random(cfg.split_seed).shuffle(ratings)
    half = len(ratings) // 2
    initial, simulation = ratings[:half], ratings[half:]
    random.Random(cfg.order_seed).shuffle(simulation)
    return initial, simulation


def run_production(
    matrix: RatingsMatrix,
    algo: RatingPredictor,
    cfg: ProductionConfig,
    *,
    server_endpoint: Optional[tuple[str, int]] = None,
    algo_id: int = 1,
) -> ValidationReport:
    """Live-traffic simulation: load half the ratings, then n_clients workers
    stream the other half through predict-then-insert, and NMAE is reported
    per block of block_size insertions in global commit order.

    `server_endpoint` switches the workers from the in-process data manager
    to TCP clients against a running mutation service (which must be loaded
    with the initial half and register the algorithm under algo_id).
    """
    initial, simulation = split_production(matrix, cfg)
    if server_endpoint is None:
        from .manager import DataManager

        base = RatingsMatrix(matrix.scale)
        for user, profile, value in initial:
            base.insert(user, profile, value)
        dm = DataManager(base, algorithms={algo_id: algo})
        issue = _issue_in_process(dm, algo_id)
    else:
        issue = None  # per-thread clients built below
    chunks = [simulation[c :: cfg.n_clients] for c in range(cfg.n_clients)]
    log: list[tuple[int, Prediction, Optional[int], int]] = []
    log_lock = threading.Lock()
    failures: list[BaseException] = []

    def worker(chunk, client_issue):
        try:
            for user, profile, value in chunk:
                prediction, previous, seq = client_issue(user, profile, value)
                with log_lock:
                    log.append((seq, prediction, previous, (user, profile, value)))
        except BaseException as exc:  # noqa: BLE001 - surfaced to the caller below
            failures.append(exc)

    threads = []
    clients = []
    try:
        for chunk in chunks:
            if not chunk:
                continue
            if server_endpoint is not None:
                from .client import ServiceClient

                client = ServiceClient(*server_endpoint)
                clients.append(client)
                client_issue = _issue_remote(client, algo_id)
            else:
                client_issue = issue
            t = threading.Thread(target=worker, args=(chunk, client_issue), daemon=True)
            threads.append(t)
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        for client in clients:
            client.close()

    valid = not failures
    log.sort(key=lambda item: item[0])
    total = NmaeAccumulator()
    curve: list[CurvePoint] = []
    block_acc = NmaeAccumulator()
    block_idx = 0
    for offset, (_, prediction, previous, (_u, _p, truth)) in enumerate(log):
        if previous is not None:
            raise HygieneViolationError(
                "production insertion found its target already present"
            )
        block_acc.add(prediction, truth)
        if (offset + 1) % cfg.block_size == 0 or offset + 1 == len(log):
            block_idx += 1
            total.merge(block_acc)
            if block_acc.counted:
                curve.append(
                    CurvePoint(
                        block_idx,
                        nmae(block_acc, matrix.scale),
                        block_acc.skipped,
                        block_acc.counted,
                    )
                )
            block_acc = NmaeAccumulator()
    report = _finish(
        PRODUCTION,
        algo,
        matrix.scale,
        total,
        curve,
        {
            "n_clients": cfg.n_clients,
            "block_size": cfg.block_size,
            "split_seed": cfg.split_seed,
            "order_seed": cfg.order_seed,
            "initial_ratings": len(initial),
            "simulated_insertions": len(simulation),
            "transport": "tcp" if server_endpoint else "in_process",
        },
    )
    report.valid = valid
    report.insertion_log = [triple for _, _, _, triple in log]
    if failures:
        report.extras["error"] = repr(failures[0])
    return report


def _issue_in_process(dm, algo_id: int) -> Callable:
    def issue(user, profile, value):
        return dm.predict_insert(algo_id, user, profile, value)

    return issue


def _issue_remote(client, algo_id: int) -> Callable:
    def issue(user, profile, value):
        return client.predict_insert(algo_id, user, profile, value)

    return issue


def replay_production_oracle(
    matrix: RatingsMatrix,
    algo: RatingPredictor,
    cfg: ProductionConfig,
    committed_order: list[tuple[int, int, int]],
) -> ValidationReport:
    """Single-threaded replay of a production run's observed commit order.

    Rebuilds the initial half from the same split seed, then predicts and
    inserts the committed insertions one by one in the given order. A
    concurrent run's per-block curve must match this replay exactly: every
    concurrent prediction committed atomically against the state of all
    previously committed insertions."""
    from .manager import DataManager

    initial, simulation = split_production(matrix, cfg)
    if sorted(committed_order) != sorted(simulation):
        raise NeighborlyError("committed order is not a permutation of the simulation set")
    base = RatingsMatrix(matrix.scale)
    for user, profile, value in initial:
        base.insert(user, profile, value)
    dm = DataManager(base, algorithms={1: algo})
    total = NmaeAccumulator()
    curve: list[CurvePoint] = []
    block_acc = NmaeAccumulator()
    block_idx = 0
    for offset, (user, profile, value) in enumerate(committed_order):
        prediction, previous, _ = dm.predict_insert(1, user, profile, value)
        if previous is not None:
            raise HygieneViolationError(
                "replay insertion found its target already present"
            )
        block_acc.add(prediction, value)
        if (offset + 1) % cfg.block_size == 0 or offset + 1 == len(committed_order):
            block_idx += 1
            total.merge(block_acc)
            if block_acc.counted:
                curve.append(
                    CurvePoint(
                        block_idx,
                        nmae(block_acc, matrix.scale),
                        block_acc.skipped,
                        block_acc.counted,
                    )
                )
            block_acc = NmaeAccumulator()
    report = _finish(
        PRODUCTION,
        algo,
        matrix.scale,
        total,
        curve,
        {"replay": True, "block_size": cfg.block_size},
    )
    report.insertion_log = list(committed_order)
    return report
