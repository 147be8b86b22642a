import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from layman_eval.embedkit import LocalHashProvider, cosine, embed
from layman_eval.statkit import (
    Histogram,
    PairedSeries,
    cohens_kappa,
    discretize,
    diversity,
    pearson,
    rank,
    similarity_histogram,
    spearman,
)


def series(x, y):
    return PairedSeries.from_lists(range(len(x)), x, y)


class TestPearson:
    def test_perfect_linear(self):
        assert pearson(series([1, 2, 3], [2, 4, 6])) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_inverse(self):
        assert pearson(series([1, 2, 3], [-1, -2, -3])) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_covariance(self):
        assert pearson(series([1, 2, 3], [1, 3, 2])) == pytest.approx(0.5, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ValueError, match="degenerate series"):
            pearson(series([1, 1, 1], [1, 2, 3]))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            pearson(series([1, 2], [1, 2]))

    @given(
        st.lists(
            st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
            min_size=3,
            max_size=15,
            unique_by=lambda p: p[0],
        ).filter(lambda ps: len({p[1] for p in ps}) > 1),
        st.sampled_from([0.5, 2.0, 3.75, 10.0]),
        st.integers(-50, 50),
    )
    def test_affine_invariance(self, points, scale, shift):
        x = [float(a) for a, _ in points]
        y = [float(b) for _, b in points]
        base = pearson(series(x, y))
        scaled_x = pearson(series([scale * v + shift for v in x], y))
        scaled_y = pearson(series(x, [scale * v + shift for v in y]))
        assert scaled_x == pytest.approx(base, abs=1e-12)
        assert scaled_y == pytest.approx(base, abs=1e-12)
        assert spearman(series([scale * v + shift for v in x], y)) == pytest.approx(
            spearman(series(x, y)), abs=1e-12
        )


class TestSpearman:
    def test_monotone_is_one(self):
        assert spearman(series([1, 2, 3, 4], [10, 100, 1000, 10000])) == pytest.approx(
            1.0, abs=1e-12
        )

    def test_hand_value(self):
        # 1 - 6 * sum(d^2) / (n (n^2 - 1)) with sum(d^2) = 2.
        assert spearman(series([1, 2, 3], [1, 3, 2])) == pytest.approx(0.5, abs=1e-12)

    def test_reversed_is_minus_one(self):
        assert spearman(series([1, 2, 3], [3, 2, 1])) == pytest.approx(-1.0, abs=1e-12)

    def test_ties_get_average_ranks(self):
        assert rank([10, 10, 20]) == [1.5, 1.5, 3.0]

    def test_all_equal_degenerate(self):
        with pytest.raises(ValueError, match="degenerate series"):
            spearman(series([1, 2, 3], [5, 5, 5]))

    @given(
        st.lists(st.floats(-50, 50), min_size=3, max_size=15, unique=True),
        st.lists(st.floats(-50, 50), min_size=3, max_size=15, unique=True),
    )
    def test_equals_pearson_of_ranks_on_tie_free_data(self, x, y):
        n = min(len(x), len(y))
        x, y = x[:n], y[:n]
        expected = pearson(series(rank(x), rank(y)))
        assert spearman(series(x, y)) == expected


class TestCohensKappa:
    def test_perfect_agreement(self):
        assert cohens_kappa(["a", "b", "a"], ["a", "b", "a"]) == 1.0

    def test_hand_marginals_zero(self):
        assert cohens_kappa([1, 1, 0, 0], [1, 0, 0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_negative_when_observed_below_chance(self):
        a = [0, 0, 1, 1]
        b = [1, 1, 0, 0]
        assert cohens_kappa(a, b) < 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            cohens_kappa([1], [1, 2])

    def test_degenerate_marginals(self):
        with pytest.raises(ValueError, match="degenerate"):
            cohens_kappa([1, 1], [1, 1])

    def test_discretize_deciles(self):
        assert discretize([0.0, 0.05, 0.55, 0.8, 1.0]) == [0, 0, 5, 8, 9]


class TestSimilarityHistogram:
    def test_all_ones_fill_final_bin(self):
        hist = similarity_histogram([1.0] * 7, bins=10)
        assert hist.counts == (0,) * 9 + (7,)
        assert hist.high_proportion == 1.0

    def test_two_bin_hand_case(self):
        hist = similarity_histogram([0.05, 0.85], bins=2)
        assert hist.counts == (1, 1)
        assert hist.high_proportion == 0.5

    def test_empty_is_error(self):
        with pytest.raises(ValueError, match="empty"):
            similarity_histogram([], bins=4)

    def test_counts_sum_to_observations(self):
        values = [0.1, 0.2, 0.3, 0.79, 0.8, 0.81]
        hist = similarity_histogram(values, bins=5)
        assert hist.total == len(values)
        assert hist.high_proportion == pytest.approx(2 / 6)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_permutation_invariance(self, values):
        rng = random.Random(7)
        shuffled = list(values)
        rng.shuffle(shuffled)
        a = similarity_histogram(values, bins=7)
        b = similarity_histogram(shuffled, bins=7)
        assert a.counts == b.counts
        assert a.high_proportion == b.high_proportion

    def test_range_validation(self):
        with pytest.raises(ValueError, match="outside range"):
            similarity_histogram([-0.5], bins=4, value_range=(0.0, 1.0))


class TestDiversity:
    def test_identical_reports(self, local_provider):
        mean, variance = diversity(["no change seen"] * 4, local_provider)
        assert mean == pytest.approx(1.0, abs=1e-9)
        assert variance == pytest.approx(0.0, abs=1e-12)

    def test_token_disjoint_pair(self, local_provider):
        mean, variance = diversity(["alpha beta gamma", "delta epsilon zeta"], local_provider)
        assert mean == pytest.approx(0.0, abs=1e-9)

    def test_needs_two_reports(self, local_provider):
        with pytest.raises(ValueError):
            diversity(["only one"], local_provider)

    def test_matches_bruteforce_pairwise_oracle(self, local_provider):
        rng = random.Random(13)
        vocab = [f"tok{i}" for i in range(30)]
        for _ in range(20):
            reports = [
                " ".join(rng.choices(vocab, k=rng.randint(3, 10)))
                for _ in range(rng.randint(2, 6))
            ]
            mean, variance = diversity(reports, local_provider)
            vectors = embed(reports, local_provider)
            sims = []
            for i in range(len(vectors)):
                for j in range(i + 1, len(vectors)):
                    sims.append(cosine(vectors[i], vectors[j]))
            assert mean == pytest.approx(float(np.mean(sims)), abs=1e-12)
            assert variance == pytest.approx(float(np.var(sims)), abs=1e-12)
