import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vcc.errors import ArgumentError, DegenerateColumnError
from vcc.loss import (CLAMP_EPS, ClusterState, assignment_q, clamp_similarity, combined_loss, kl_rows, loss_bps,
                      loss_clu, loss_contraction, loss_expansion, similarity, target_p)

from oracles import central_difference, naive_target, relative_error

PAIR = np.array([[0, 1]])


def _at_distance(r, d=2):
    H = np.zeros((2, d))
    H[1, 0] = r
    return H


def test_similarity_values():
    assert similarity([0, 0], [3, 4]) == pytest.approx(math.exp(-5), rel=1e-15)
    assert similarity([1.0], [1.0]) == 1.0


def test_bps_at_half_similarity():
    value, _ = loss_bps(_at_distance(math.log(2)), PAIR)
    assert value == pytest.approx(2 * math.log(2), abs=1e-12)


def test_contraction_at_distance_three():
    value, _ = loss_contraction(_at_distance(3.0), PAIR)
    assert value == pytest.approx(3.0, abs=1e-12)


def test_expansion_at_half_similarity():
    value, _ = loss_expansion(_at_distance(math.log(2)), PAIR)
    assert value == pytest.approx(math.log(2), abs=1e-12)


def test_coincident_points_are_clamped():
    H = np.ones((2, 3))
    value, g = loss_expansion(H, PAIR)
    assert value == pytest.approx(-math.log(CLAMP_EPS), rel=1e-9)
    assert np.all(np.isfinite(g)) and np.all(g == 0)
    value, g = loss_contraction(_at_distance(50.0), PAIR)
    assert value == pytest.approx(-math.log(CLAMP_EPS), rel=1e-9)
    assert np.all(g == 0)


def test_clamp_range():
    np.testing.assert_array_equal(clamp_similarity(np.array([0.0, 0.5, 1.0])), [1e-4, 0.5, 1 - 1e-4])


def test_empty_pairs_contribute_nothing():
    value, g = loss_bps(np.ones((3, 2)), np.empty((0, 2), dtype=int))
    assert value == 0.0 and np.all(g == 0)


def test_mean_reduction():
    H = np.random.default_rng(0).normal(size=(6, 2))
    pairs = np.array([[0, 1], [2, 3], [4, 5]])
    total = sum(loss_bps(H, pairs[k:k + 1])[0] for k in range(3))
    assert loss_bps(H, pairs)[0] == pytest.approx(total / 3, rel=1e-14)


def test_q_two_centers():
    Q = assignment_q(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(Q, [[2 / 3, 1 / 3]], rtol=1e-15)


def test_q_requires_two_centers():
    with pytest.raises(ArgumentError):
        assignment_q(np.zeros((3, 2)), np.zeros((1, 2)))


def test_target_fixed_points():
    np.testing.assert_allclose(target_p(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(target_p(np.full((4, 2), 0.5)), np.full((4, 2), 0.5), rtol=1e-15)


def test_target_matches_naive_loop():
    rng = np.random.default_rng(1)
    Q = rng.dirichlet(np.ones(4), size=25)
    np.testing.assert_allclose(target_p(Q), naive_target(Q), rtol=0, atol=1e-12)


def test_target_dead_column():
    with pytest.raises(DegenerateColumnError):
        target_p(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_kl_closed_form():
    np.testing.assert_allclose(kl_rows([[1.0, 0.0]], [[0.5, 0.5]]), [math.log(2)], rtol=1e-15)
    np.testing.assert_allclose(kl_rows([[0.3, 0.7]], [[0.3, 0.7]]), [0.0], atol=1e-16)


def test_cluster_state_schedule():
    cs = ClusterState(np.array([[0.0, 0.0], [5.0, 0.0]]), gamma=0.01)
    assert [(cs.__setattr__("epoch", e), cs.beta)[1] for e in (0, 1, 3, 7)] == pytest.approx([0, 0.01, 0.03, 0.07])
    P = cs.refresh_targets(np.array([[0.1, 0.0], [4.9, 0.0]]))
    np.testing.assert_allclose(P.sum(axis=1), 1)
    assert P[0, 0] > cs.Q[0, 0]


def _problem(seed=0, n=32, d=2, k=3, n_pairs=10):
    rng = np.random.default_rng(seed)
    H = rng.normal(scale=1.5, size=(n, d))
    C = rng.normal(scale=1.5, size=(k, d))
    pools = [rng.choice(n, size=(n_pairs, 2), replace=True) for _ in range(3)]
    pools = [p[p[:, 0] != p[:, 1]] for p in pools]
    P = target_p(assignment_q(H + rng.normal(scale=0.3, size=H.shape), C))
    return H, C, pools, P


@pytest.mark.parametrize("fn", [loss_bps, loss_contraction, loss_expansion])
def test_pair_gradients_fd(fn):
    H, _, pools, _ = _problem()
    _, g = fn(H, pools[0])
    num = central_difference(lambda: fn(H, pools[0])[0], H)
    assert np.max(relative_error(g, num)) < 1e-6


def test_clu_gradients_fd():
    H, C, _, P = _problem(1)
    _, gh, gc = loss_clu(H, C, P)
    assert np.max(relative_error(gh, central_difference(lambda: loss_clu(H, C, P)[0], H))) < 1e-6
    assert np.max(relative_error(gc, central_difference(lambda: loss_clu(H, C, P)[0], C))) < 1e-6


def test_combined_gradients_fd():
    H, C, (neg, pos, disc), P = _problem(2)

    def total():
        return combined_loss(H, C, neg, pos, disc, P, beta=0.3)[0].total

    br, gh, gc = combined_loss(H, C, neg, pos, disc, P, beta=0.3)
    assert np.max(relative_error(gh, central_difference(total, H))) < 1e-6
    assert np.max(relative_error(gc, central_difference(total, C))) < 1e-6


def test_combined_is_sum_of_parts():
    H, C, (neg, pos, disc), P = _problem(3)
    br, gh, gc = combined_loss(H, C, neg, pos, disc, P, beta=0.05)
    parts = [loss_bps(H, neg), loss_contraction(H, pos), loss_expansion(H, disc)]
    clu, gh_clu, gc_clu = loss_clu(H, C, P)
    assert br.total == pytest.approx(sum(p[0] for p in parts) + 0.05 * clu, rel=1e-13)
    np.testing.assert_allclose(gh, sum(p[1] for p in parts) + 0.05 * gh_clu, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(gc, 0.05 * gc_clu, rtol=1e-12)


def test_combined_without_centers():
    H, _, (neg, pos, disc), _ = _problem(4)
    br, _, dC = combined_loss(H, None, neg, pos, disc)
    assert dC is None and br.l_clu == 0.0 and br.beta == 0.0


def test_translation_invariance():
    H, C, (neg, pos, disc), P = _problem(5)
    shift = np.array([3.0, -7.0])
    a = combined_loss(H, C, neg, pos, disc, P, 0.1)
    b = combined_loss(H + shift, C + shift, neg, pos, disc, P, 0.1)
    assert a[0].total == pytest.approx(b[0].total, rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-20, 20, allow_nan=False)),
       st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda t: t[0] != t[1]),
                min_size=1, max_size=8))
def test_losses_nonnegative_and_finite(H, pairs):
    pairs = np.array(pairs)
    for fn in (loss_bps, loss_contraction, loss_expansion):
        value, g = fn(H, pairs)
        assert value >= 0 and np.all(np.isfinite(g))
    C = np.array([[0.0, 0.0], [1.0, 1.0]])
    P = target_p(assignment_q(H, C) * 0.5 + 0.25)
    value, gh, gc = loss_clu(H, C, P)
    assert value >= -1e-12 and np.all(np.isfinite(gh)) and np.all(np.isfinite(gc))
