import io
import math
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neighborly.errors import IngestError, OutOfScaleError
from neighborly.matrix import (
    DatasetStats,
    MaskedUserView,
    RatingScale,
    RatingsMatrix,
    compute_stats,
    ingest_genders,
    ingest_ratings,
    mask_cell,
    naive_stats,
)

from conftest import build_matrix
from oracles import stats_oracle


class TestRatingScale:
    def test_requires_increasing_bounds(self):
        with pytest.raises(ValueError):
            RatingScale(5, 5)

    def test_normalize_endpoints(self):
        scale = RatingScale(1, 10)
        assert scale.normalize(1) == 0.0
        assert scale.normalize(10) == 1.0

    def test_clamp(self):
        scale = RatingScale(1, 10)
        assert scale.clamp(0.3) == 1
        assert scale.clamp(11.2) == 10
        assert scale.clamp(4.7) == 4.7


class TestInsert:
    def test_insert_into_empty(self):
        m = RatingsMatrix()
        assert m.insert(1, 2, 5) is None
        assert m.rating_count == 1
        assert m.value(1, 2) == 5

    def test_reinsert_overwrites(self):
        m = RatingsMatrix()
        m.insert(1, 2, 4)
        assert m.insert(1, 2, 7) == 4
        assert m.rating_count == 1
        assert m.value(1, 2) == 7
        assert m.profile_ratings(2)[1] == 7

    def test_idempotent_overwrite(self):
        m = RatingsMatrix()
        m.insert(3, 4, 6)
        before = (m.rating_count, dict(m.user_ratings(3)), dict(m.profile_ratings(4)))
        m.insert(3, 4, 6)
        after = (m.rating_count, dict(m.user_ratings(3)), dict(m.profile_ratings(4)))
        assert before == after

    def test_out_of_scale_rejected(self):
        m = RatingsMatrix(RatingScale(1, 5))
        with pytest.raises(OutOfScaleError):
            m.insert(1, 1, 6)
        with pytest.raises(OutOfScaleError):
            m.insert(1, 1, 0)
        assert m.rating_count == 0

    def test_non_integer_rejected(self):
        m = RatingsMatrix()
        with pytest.raises(OutOfScaleError):
            m.insert(1, 1, 4.5)

    def test_epoch_bumps_on_every_mutation(self):
        m = RatingsMatrix()
        assert m.epoch == 0
        m.insert(1, 1, 3)
        m.insert(1, 1, 4)
        assert m.epoch == 2

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 15), st.integers(0, 15), st.integers(1, 10)
            ),
            max_size=200,
        )
    )
    def test_transpose_duality_against_rebuild(self, triples):
        m = RatingsMatrix()
        mirror = {}
        for u, p, v in triples:
            m.insert(u, p, v)
            mirror[(u, p)] = v
        by_rows = sorted(m.iter_ratings())
        by_cols = sorted(m.iter_ratings_by_profile())
        expected = sorted((u, p, v) for (u, p), v in mirror.items())
        assert by_rows == by_cols == expected
        assert m.rating_count == len(mirror)

    def test_thousand_random_inserts_transpose(self, rng):
        m = RatingsMatrix()
        mirror = {}
        for _ in range(1000):
            u, p, v = rng.randrange(40), rng.randrange(40), rng.randint(1, 10)
            m.insert(u, p, v)
            mirror[(u, p)] = v
        assert sorted(m.iter_ratings()) == sorted(m.iter_ratings_by_profile())
        assert sorted(m.iter_ratings()) == sorted(
            (u, p, v) for (u, p), v in mirror.items()
        )
        for u in m.users():
            row = m.user_ratings(u)
            assert math.isclose(
                m.user_mean(u), sum(row.values()) / len(row), abs_tol=1e-9
            )


class TestIngest:
    def test_three_lines(self):
        result = ingest_ratings(io.StringIO("1,10,3\n2,11,7\n3,12,9\n"))
        assert result.matrix.rating_count == 3
        assert result.line_count == 3

    def test_duplicate_keeps_last(self):
        result = ingest_ratings(io.StringIO("1,10,4\n1,10,7\n"))
        assert result.matrix.rating_count == 1
        assert result.matrix.value(1, 10) == 7

    def test_per_user_means_match_hand_computation(self):
        text = "1,10,2\n1,11,4\n1,12,9\n2,10,6\n2,11,6\n2,12,3\n"
        m = ingest_ratings(io.StringIO(text)).matrix
        assert math.isclose(m.user_mean(1), (2 + 4 + 9) / 3, abs_tol=1e-9)
        assert math.isclose(m.user_mean(2), (6 + 6 + 3) / 3, abs_tol=1e-9)
        assert math.isclose(m.profile_mean(10), 4.0, abs_tol=1e-9)

    def test_malformed_line_aborts_with_line_number(self):
        with pytest.raises(IngestError) as err:
            ingest_ratings(io.StringIO("1,10,3\nbogus\n"))
        assert err.value.line_no == 2

    def test_skip_mode_counts_bad_lines(self):
        stream = io.StringIO("1,10,3\nbogus\n2,11,99\n3,12,5\n")
        result = ingest_ratings(stream, on_error="skip")
        assert result.matrix.rating_count == 2
        assert result.skipped_lines == 2
        assert len(result.errors) == 2

    def test_out_of_scale_value_respects_on_error(self):
        with pytest.raises(IngestError):
            ingest_ratings(io.StringIO("1,10,11\n"))

    def test_header_and_crlf(self):
        stream = io.StringIO("user,profile,value\r\n1,10,3\r\n2,11,4\r\n")
        result = ingest_ratings(stream, header=True)
        assert result.matrix.rating_count == 2

    def test_blank_lines_ignored(self):
        result = ingest_ratings(io.StringIO("\n1,10,3\n\n"))
        assert result.matrix.rating_count == 1

    def test_gender_file(self):
        attrs = ingest_genders(io.StringIO("1,M\n2,f\n3,U\n"))
        assert attrs == {1: "M", 2: "F", 3: "U"}

    def test_gender_rejects_unknown(self):
        with pytest.raises(IngestError):
            ingest_genders(io.StringIO("1,X\n"))


class TestStats:
    def test_single_rating_at_max(self):
        m = build_matrix([(1, 2, 10)])
        s = compute_stats(m)
        assert s.mean == 1.0
        assert s.rating_count == 1

    def test_empty_matrix_flags_undefined_moments(self):
        s = compute_stats(RatingsMatrix())
        assert s.rating_count == 0
        assert s.mean is None and s.median is None and s.sd is None
        assert s.density_permille is None
        assert not s.moments_defined

    def test_ten_rating_fixture_matches_oracle(self, rng):
        triples = [
            (rng.randrange(5), 100 + rng.randrange(5), rng.randint(1, 10))
            for _ in range(20)
        ]
        dedup = {(u, p): v for u, p, v in triples}
        triples = [(u, p, v) for (u, p), v in dedup.items()][:10]
        m = build_matrix(triples)
        s = compute_stats(m)
        o = stats_oracle(triples, (1, 10))
        for key, expected in o.items():
            got = getattr(s, key)
            if isinstance(expected, float):
                assert math.isclose(got, expected, abs_tol=1e-9), key
            else:
                assert got == expected, key

    def test_large_random_matrix_matches_naive_scan(self):
        rng = random.Random(7)
        seen = {}
        for _ in range(100_000):
            seen[(rng.randrange(600), rng.randrange(600))] = rng.randint(1, 10)
        triples = [(u, p, v) for (u, p), v in seen.items()]
        m = build_matrix(triples)
        s = compute_stats(m)
        o = naive_stats(triples, m.scale)
        assert s.rating_count == o.rating_count == len(triples)
        assert s.total_users == o.total_users
        assert s.max_ratings_one_user == o.max_ratings_one_user
        assert s.max_ratings_one_profile == o.max_ratings_one_profile
        assert math.isclose(s.mean, o.mean, abs_tol=1e-9)
        assert math.isclose(s.median, o.median, abs_tol=1e-9)
        assert math.isclose(s.sd, o.sd, abs_tol=1e-9)
        assert math.isclose(s.density_permille, o.density_permille, abs_tol=1e-9)

    def test_extra_user_ids_widen_total(self):
        m = build_matrix([(1, 2, 5)])
        s = compute_stats(m, extra_user_ids=[77, 78])
        assert s.total_users == 4  # {1, 2, 77, 78}

    @pytest.mark.skipif(
        "NEIGHBORLY_LIBIMSETI" not in os.environ,
        reason="full dating-site snapshot not available; set NEIGHBORLY_LIBIMSETI to its ratings CSV",
    )
    def test_full_snapshot_reference_figures(self):
        path = os.environ["NEIGHBORLY_LIBIMSETI"]
        with open(path, encoding="utf-8", newline="") as fh:
            matrix = ingest_ratings(fh, on_error="skip").matrix
        s = compute_stats(matrix)
        assert s.rating_count == 11_767_448
        assert s.total_users == 194_439
        assert round(s.density_permille, 4) == pytest.approx(0.3113, abs=5e-4)
        assert s.mean == pytest.approx(0.50, abs=5e-3)
        assert s.median == pytest.approx(0.44, abs=5e-3)
        assert s.sd == pytest.approx(0.36, abs=5e-3)


class TestMaskedViews:
    def test_mask_cell_hides_everywhere(self):
        m = build_matrix([(1, 10, 4), (1, 11, 8), (2, 10, 6)])
        view = mask_cell(m, 1, 10)
        assert view.value(1, 10) is None
        assert 10 not in view.user_ratings(1)
        assert 1 not in view.profile_ratings(10)
        assert sorted(view.user_ratings(1)) == [11]
        assert view.value(2, 10) == 6

    def test_masked_means_adjust(self):
        m = build_matrix([(1, 10, 4), (1, 11, 8), (2, 10, 6)])
        view = mask_cell(m, 1, 10)
        assert view.user_mean(1) == 8.0
        assert view.profile_mean(10) == 6.0
        assert view.user_mean(2) == m.user_mean(2)

    def test_mask_last_rating_removes_user(self):
        m = build_matrix([(1, 10, 4), (2, 10, 6)])
        view = mask_cell(m, 1, 10)
        assert not view.has_user(1)
        assert view.user_mean(1) is None
        assert list(view.users()) == [2]

    def test_mask_only_rater_removes_profile(self):
        m = build_matrix([(1, 10, 4), (1, 11, 8)])
        view = mask_cell(m, 1, 10)
        assert not view.has_profile(10)
        assert view.profile_mean(10) is None
        assert list(view.profiles()) == [11]

    def test_visible_subset_view(self):
        m = build_matrix([(1, 10, 4), (1, 11, 8), (1, 12, 2), (2, 10, 6)])
        view = MaskedUserView(m, 1, visible_profiles=[10, 12])
        assert sorted(view.user_ratings(1)) == [10, 12]
        assert view.user_mean(1) == 3.0
        assert 1 not in view.profile_ratings(11)

    def test_view_requires_exactly_one_mode(self):
        m = build_matrix([(1, 10, 4)])
        with pytest.raises(ValueError):
            MaskedUserView(m, 1)
        with pytest.raises(ValueError):
            MaskedUserView(m, 1, hidden_profiles=[10], visible_profiles=[10])

    def test_copy_is_independent(self):
        m = build_matrix([(1, 10, 4)])
        clone = m.copy()
        clone.insert(2, 11, 9)
        assert m.rating_count == 1
        assert clone.rating_count == 2


def test_stats_dataclass_roundtrip_fields():
    s = DatasetStats(5, 3, 4, 10, 400.0, 6, 4, 0.5, 0.44, 0.3)
    assert s.moments_defined
