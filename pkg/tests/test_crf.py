import itertools
import math

import numpy as np
import pytest

from entrel import crf
from entrel.corpus import LabelSpace

from conftest import finite_difference


def random_instance(rng, n=11, scale=2.0):
    d = rng.normal(size=(3, n)) * scale
    q = rng.normal(size=(n + 2, n + 2)) * scale
    return d, q


def itertools_logz(d, q):
    """Second, fully independent enumeration: python loops + math only."""
    n = d.shape[1]
    begin, end = n, n + 1
    scores = []
    for y in itertools.product(range(n), repeat=3):
        s = q[begin, y[0]] + q[y[0], y[1]] + q[y[1], y[2]] + q[y[2], end]
        s += d[0, y[0]] + d[1, y[1]] + d[2, y[2]]
        scores.append(s)
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


class TestSequenceScore:
    def test_toy_direct_sum(self):
        d = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
        q = np.full((4, 4), 0.5)
        assert crf.sequence_score(d, (0, 1, 0), q) == pytest.approx(8.0)

    def test_all_zero(self):
        d = np.zeros((3, 4))
        q = np.zeros((6, 6))
        for y in itertools.product(range(4), repeat=3):
            assert crf.sequence_score(d, y, q) == 0.0

    def test_term_by_term_oracle(self):
        rng = np.random.default_rng(0)
        d, q = random_instance(rng, n=5)
        y = (3, 1, 4)
        expected = 0.0
        expected += q[5, 3] + d[0, 3]
        expected += q[3, 1] + d[1, 1]
        expected += q[1, 4] + d[2, 4]
        expected += q[4, 6]
        assert crf.sequence_score(d, y, q) == pytest.approx(expected, abs=1e-15)

    def test_out_of_range_label(self):
        d = np.zeros((3, 4))
        q = np.zeros((6, 6))
        with pytest.raises(ValueError):
            crf.sequence_score(d, (0, 4, 0), q)  # 4 is the begin tag


class TestForwardLogZ:
    def test_uniform_case(self):
        d = np.zeros((3, 3))
        q = np.zeros((5, 5))
        assert crf.forward_logZ(d, q) == pytest.approx(math.log(27), abs=1e-12)

    def test_row_shift_law(self):
        rng = np.random.default_rng(1)
        d, q = random_instance(rng, n=6)
        base = crf.forward_logZ(d, q)
        shifted = d.copy()
        shifted[1] += 3.75
        assert crf.forward_logZ(shifted, q) == pytest.approx(base + 3.75, abs=1e-9)

    def test_matches_brute_force_over_full_space(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            d, q = random_instance(rng)
            assert crf.forward_logZ(d, q) == pytest.approx(
                crf.brute_force_logZ(d, q), abs=1e-9
            )

    def test_brute_force_matches_independent_itertools_sum(self):
        rng = np.random.default_rng(3)
        for n in (2, 5, 11):
            d, q = random_instance(rng, n=n)
            assert crf.brute_force_logZ(d, q) == pytest.approx(
                itertools_logz(d, q), abs=1e-9
            )


class TestBruteForce:
    def test_uniform_logz(self):
        for n in (2, 4, 11):
            d = np.zeros((3, n))
            q = np.zeros((n + 2, n + 2))
            assert crf.brute_force_logZ(d, q) == pytest.approx(3 * math.log(n), abs=1e-12)

    def test_dominant_sequence_limit(self):
        d = np.zeros((3, 4))
        d[0, 1] = d[1, 2] = d[2, 3] = 1e6
        q = np.zeros((6, 6))
        score = crf.sequence_score(d, (1, 2, 3), q)
        assert crf.brute_force_logZ(d, q) == pytest.approx(score, abs=1e-9)

    def test_refuses_large_spaces(self):
        n = 40
        with pytest.raises(ValueError):
            crf.brute_force_logZ(np.zeros((3, n)), np.zeros((n + 2, n + 2)))


class TestViterbi:
    def test_per_position_argmax_when_q_zero(self):
        d = np.zeros((3, 5))
        d[0, 2] = d[1, 4] = d[2, 0] = 3.0
        q = np.zeros((7, 7))
        best, score = crf.viterbi(d, q)
        assert best == (2, 4, 0)
        assert score == pytest.approx(9.0)

    def test_matches_brute_force_argmax(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            d, q = random_instance(rng)
            best, score = crf.viterbi(d, q)
            oracle_best, oracle_score = crf.brute_force_best(d, q)
            assert best == oracle_best
            assert score == pytest.approx(oracle_score, abs=1e-9)

    def test_row_shift_leaves_argmax(self):
        rng = np.random.default_rng(5)
        d, q = random_instance(rng)
        best, _ = crf.viterbi(d, q)
        shifted = d.copy()
        shifted[1] += 123.0
        assert crf.viterbi(shifted, q)[0] == best

    def test_q_shift_leaves_argmax(self):
        rng = np.random.default_rng(6)
        d, q = random_instance(rng)
        best, _ = crf.viterbi(d, q)
        assert crf.viterbi(d, q + 7.5)[0] == best

    def test_tie_break_lowest_earliest(self):
        # all sequences tie; lexicographically smallest must win
        d = np.zeros((3, 3))
        q = np.zeros((5, 5))
        assert crf.viterbi(d, q)[0] == (0, 0, 0)
        assert crf.brute_force_best(d, q)[0] == (0, 0, 0)

    def test_tie_break_constructed_paths(self):
        # exactly two optimal paths, (0,1,2) and (1,0,0), both scoring 3;
        # the earliest differing position must take the lower class
        n = 3
        begin, end = n, n + 1
        d = np.zeros((3, n))
        q = np.full((n + 2, n + 2), -10.0)
        q[begin, 0] = 0.0
        q[begin, 1] = 2.0
        q[0, 1] = 2.0
        q[1, 0] = 0.0
        q[1, 2] = 1.0
        q[0, 0] = 1.0
        q[2, end] = 0.0
        q[0, end] = 0.0
        assert crf.sequence_score(d, (0, 1, 2), q) == pytest.approx(3.0)
        assert crf.sequence_score(d, (1, 0, 0), q) == pytest.approx(3.0)
        best, score = crf.viterbi(d, q)
        assert best == crf.brute_force_best(d, q)[0] == (0, 1, 2)
        assert score == pytest.approx(3.0)

    def test_masked_decode_respects_positions(self):
        ls = LabelSpace()
        rng = np.random.default_rng(7)
        allowed = ls.position_mask()
        for _ in range(25):
            d, q = random_instance(rng)
            best, _ = crf.viterbi(d, q, allowed)
            assert ls.is_ec_index(best[0])
            assert ls.is_re_index(best[1])
            assert ls.is_ec_index(best[2])


class TestMarginals:
    def test_uniform_scores_uniform_rows(self):
        d = np.zeros((3, 5))
        q = np.zeros((7, 7))
        assert np.allclose(crf.marginals(d, q), 0.2, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            d, q = random_instance(rng)
            assert np.allclose(crf.marginals(d, q).sum(axis=1), 1.0, atol=1e-9)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            d, q = random_instance(rng, n=7)
            assert np.allclose(
                crf.marginals(d, q), crf.brute_force_marginals(d, q), atol=1e-9
            )


class TestNllAndGradients:
    def test_dominant_gold_path_saturates(self):
        d = np.zeros((3, 4))
        gold = (1, 2, 0)
        for i, c in enumerate(gold):
            d[i, c] = 1e6
        q = np.zeros((6, 6))
        loss, grad_d, grad_q = crf.nll_and_gradients(d, q, gold)
        assert loss == pytest.approx(0.0, abs=1e-9)
        assert np.abs(grad_d).max() < 1e-9
        assert np.abs(grad_q).max() < 1e-9

    def test_uniform_case(self):
        n = 5
        d = np.zeros((3, n))
        q = np.zeros((n + 2, n + 2))
        gold = (0, 3, 2)
        loss, grad_d, _ = crf.nll_and_gradients(d, q, gold)
        assert loss == pytest.approx(3 * math.log(n), abs=1e-12)
        expected = np.full((3, n), 1.0 / n)
        for i, c in enumerate(gold):
            expected[i, c] -= 1.0
        assert np.allclose(grad_d, expected, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        d, q = random_instance(rng, n=6)
        gold = (2, 5, 1)
        _, grad_d, grad_q = crf.nll_and_gradients(d, q, gold)

        def objective():
            return crf.forward_logZ(d, q) - crf.sequence_score(d, gold, q)

        num_d = finite_difference(objective, d)
        num_q = finite_difference(objective, q)
        assert np.abs(grad_d - num_d).max() < 1e-6
        assert np.abs(grad_q - num_q).max() < 1e-6

    def test_grad_of_logz_equals_marginals_identity(self):
        rng = np.random.default_rng(11)
        d, q = random_instance(rng)
        gold = (0, 6, 4)
        _, grad_d, _ = crf.nll_and_gradients(d, q, gold)
        onehot = np.zeros_like(d)
        for i, c in enumerate(gold):
            onehot[i, c] = 1.0
        assert np.allclose(grad_d + onehot, crf.marginals(d, q), atol=1e-12)

    def test_loss_nonnegative_and_log_domination(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            d, q = random_instance(rng, n=4)
            logz = crf.forward_logZ(d, q)
            for y in itertools.product(range(4), repeat=3):
                assert crf.sequence_score(d, y, q) <= logz + 1e-12

    def test_path_probabilities_sum_to_one(self):
        rng = np.random.default_rng(13)
        d, q = random_instance(rng)
        logz = crf.forward_logZ(d, q)
        total = sum(
            math.exp(crf.sequence_score(d, y, q) - logz)
            for y in itertools.product(range(11), repeat=3)
        )
        assert total == pytest.approx(1.0, abs=1e-9)
