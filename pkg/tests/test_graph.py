import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capemine import oracles
from capemine.errors import ContractViolation, NoLinkFallback
from capemine.graph import (KeypointSet, PaddingRecord, all_ones_links, bfs_order, bfs_reference_points,
                            check_links, edge_list, identity_links, links_from_pairs, mixup_pad, mixup_pad_pair,
                            pad_with_record, reference_indices, uniform_pad, zero_pad)
from capemine.losses import loss_full
from capemine.model import ForwardTrace
from capemine.tensor import Tensor


def kps(coords, weight=None):
    coords = np.asarray(coords, dtype=np.float64)
    return KeypointSet(coords, np.ones(len(coords)) if weight is None else np.asarray(weight, dtype=np.float64))


@st.composite
def graphs(draw, max_k=10):
    k = draw(st.integers(2, max_k))
    pairs = draw(st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=2 * k))
    pairs = [(min(a, b), max(a, b)) for a, b in pairs if a != b] or [(0, 1)]
    seed = draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    raw = KeypointSet(rng.uniform(size=(k, 2)), (rng.random(k) < 0.8).astype(np.float64))
    return raw, links_from_pairs(pairs, k), rng


# keypoint sets and links

def test_keypoint_set_rejects_out_of_range_coords():
    with pytest.raises(ContractViolation):
        KeypointSet(np.array([[1.2, 0.5]]), np.ones(1))


def test_keypoint_set_raw_count_defaults_to_length():
    assert kps([[0.1, 0.2], [0.3, 0.4]]).raw_count == 2


def test_check_links_rejects_asymmetric_and_self_links():
    with pytest.raises(ContractViolation):
        check_links(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ContractViolation):
        check_links(np.array([[1, 0], [0, 0]]))


def test_link_helpers():
    adj = links_from_pairs([(0, 2), (1, 2)], 3)
    assert edge_list(adj) == [(0, 2), (1, 2)]
    assert edge_list(all_ones_links(3)) == [(0, 1), (0, 2), (1, 2)]
    assert not identity_links(3).any()


# mixup padding

def test_mixup_pad_without_padding_is_identity():
    raw = kps([[0.1, 0.1], [0.9, 0.9]])
    links = links_from_pairs([(0, 1)], 2)
    out, new_links, record = mixup_pad(raw, links, 2, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out.coords, raw.coords)
    np.testing.assert_array_equal(new_links, links)
    assert len(record) == 0


def test_mixup_pad_forced_lambda_example():
    raw = kps([[0.0, 0.0], [1.0, 1.0]])
    links = links_from_pairs([(0, 1)], 2)
    out, new_links, record = mixup_pad(raw, links, 3, rng=np.random.default_rng(0), lambdas=0.25)
    np.testing.assert_allclose(out.coords[2], [0.75, 0.75])
    assert edge_list(new_links) == [(0, 2), (1, 2)]
    assert new_links[0, 1] == 0
    assert out.weight[2] == 1.0
    assert out.raw_count == 2


def test_mixup_chain_is_ordered_by_lambda_descending():
    raw = kps([[0.0, 0.0], [1.0, 0.0]])
    links = links_from_pairs([(0, 1)], 2)
    out, new_links, record = mixup_pad(raw, links, 5, rng=np.random.default_rng(0), lambdas=[0.2, 0.9, 0.5])
    # lambda 0.9 is closest to P[i]=P[0], so the chain is 0 - 3 - 4 - 2 - 1
    assert edge_list(new_links) == [(0, 3), (1, 2), (2, 4), (3, 4)]
    np.testing.assert_array_equal(record.ordinal, [2, 0, 1])


def test_mixup_pad_rejects_shrinking():
    raw = kps([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
    with pytest.raises(ContractViolation):
        mixup_pad(raw, links_from_pairs([(0, 1)], 3), 2)


def test_mixup_pad_rejects_bad_alpha():
    raw = kps([[0.1, 0.1], [0.2, 0.2]])
    with pytest.raises(ContractViolation):
        mixup_pad(raw, links_from_pairs([(0, 1)], 2), 4, alpha=0.0)


def test_no_links_falls_back_to_zero_padding():
    raw = kps([[0.1, 0.1], [0.2, 0.2]])
    with pytest.warns(NoLinkFallback):
        out, new_links, record = mixup_pad(raw, np.zeros((2, 2), dtype=np.int8), 4, rng=np.random.default_rng(0))
    assert record.fallback
    np.testing.assert_array_equal(out.weight, [1, 1, 0, 0])
    assert not new_links.any()


@given(graphs())
@settings(max_examples=60, deadline=None)
def test_padding_record_replays_exactly(g):
    raw, links, rng = g
    k = len(raw) + int(rng.integers(0, 8))
    out, new_links, record = mixup_pad(raw, links, k, rng=rng)
    np.testing.assert_array_equal(record.apply(raw.coords), out.coords)
    for i, j in record.pairs:
        assert links[i, j] == 1
    replay, replay_links = pad_with_record(raw, links, record, k)
    np.testing.assert_array_equal(replay.coords, out.coords)
    np.testing.assert_array_equal(replay_links, new_links)


@given(graphs())
@settings(max_examples=60, deadline=None)
def test_padding_properties(g):
    raw, links, rng = g
    kc = len(raw)
    k = kc + int(rng.integers(0, 10))
    for out, new_links, record in (mixup_pad(raw, links, k, rng=rng), uniform_pad(raw, links, k)):
        np.testing.assert_array_equal(out.coords[:kc], raw.coords)
        lam = record.lam[:, None]
        expect = lam * raw.coords[record.pairs[:, 0]] + (1 - lam) * raw.coords[record.pairs[:, 1]]
        assert np.abs(out.coords[kc:] - expect).max(initial=0.0) < 1e-12
        assert np.array_equal(new_links, new_links.T)
        assert set(np.unique(new_links)) <= {0, 1}
        assert not np.diag(new_links).any()
        np.testing.assert_array_equal(oracles.reachability(links), oracles.reachability(new_links)[:kc, :kc])


def test_pair_padding_shares_the_record():
    rng = np.random.default_rng(4)
    links = links_from_pairs([(0, 1), (1, 2)], 3)
    s = kps(rng.uniform(size=(3, 2)))
    q = kps(rng.uniform(size=(3, 2)))
    sp, qp, _, record = mixup_pad_pair(s, q, links, 8, rng=rng)
    lam_s = [np.linalg.norm(sp.coords[3 + n] - s.coords[j]) / np.linalg.norm(s.coords[i] - s.coords[j])
             for n, (i, j) in enumerate(record.pairs)]
    lam_q = [np.linalg.norm(qp.coords[3 + n] - q.coords[j]) / np.linalg.norm(q.coords[i] - q.coords[j])
             for n, (i, j) in enumerate(record.pairs)]
    np.testing.assert_allclose(lam_s, record.lam, atol=1e-12)
    np.testing.assert_allclose(lam_q, record.lam, atol=1e-12)


def test_pair_padding_of_identical_sets_is_identical():
    links = links_from_pairs([(0, 1), (1, 2)], 3)
    s = kps([[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])
    sp, qp, _, _ = mixup_pad_pair(s, s, links, 7, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(sp.coords, qp.coords)


@pytest.mark.parametrize("wi,wj", list(itertools.product([0.0, 1.0], repeat=2)))
def test_padded_query_weight_is_min_of_sources(wi, wj):
    links = links_from_pairs([(0, 1)], 2)
    s = kps([[0.1, 0.1], [0.9, 0.9]])
    q = kps([[0.2, 0.1], [0.8, 0.7]], [wi, wj])
    sp, qp, _, _ = mixup_pad_pair(s, q, links, 4, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(qp.weight[2:], [min(wi, wj)] * 2)
    np.testing.assert_array_equal(sp.weight[2:], [1.0, 1.0])


def test_pair_padding_rejects_mismatched_sets():
    links = links_from_pairs([(0, 1)], 2)
    with pytest.raises(ContractViolation):
        mixup_pad_pair(kps([[0.1, 0.1], [0.2, 0.2]]), kps([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]), links, 4)


# uniform padding

def test_uniform_single_midpoint():
    out, _, _ = uniform_pad(kps([[0.0, 0.0], [1.0, 1.0]]), links_from_pairs([(0, 1)], 2), 3)
    np.testing.assert_allclose(out.coords[2], [0.5, 0.5])


def test_uniform_equal_division():
    out, new_links, record = uniform_pad(kps([[0.0, 0.0], [1.0, 1.0]]), links_from_pairs([(0, 1)], 2), 5)
    np.testing.assert_allclose(sorted(out.coords[2:, 0]), [0.25, 0.5, 0.75])
    np.testing.assert_allclose(record.lam, [0.75, 0.5, 0.25])
    # chain runs from P[0] outwards: 0 - 4 - 3 - 2 - 1 by lambda descending
    assert edge_list(new_links) == [(0, 2), (1, 4), (2, 3), (3, 4)]


def test_uniform_round_robin_counts():
    links = links_from_pairs([(0, 1), (1, 2)], 3)
    _, _, record = uniform_pad(kps([[0.1, 0.1], [0.5, 0.5], [0.9, 0.1]]), links, 6)
    pairs = [tuple(p) for p in record.pairs]
    assert pairs.count((0, 1)) == 2 and pairs.count((1, 2)) == 1
    np.testing.assert_allclose(sorted(record.lam[[0, 2]]), [1 / 3, 2 / 3])
    assert record.lam[1] == 0.5


@given(graphs())
@settings(max_examples=30, deadline=None)
def test_uniform_pad_is_pure(g):
    raw, links, rng = g
    k = len(raw) + int(rng.integers(0, 8))
    a = uniform_pad(raw, links, k)
    b = uniform_pad(raw, links, k)
    assert a[0].coords.tobytes() == b[0].coords.tobytes()
    assert a[1].tobytes() == b[1].tobytes()


# zero padding

def test_zero_pad_identity_and_weights():
    raw = kps([[0.2, 0.3], [0.4, 0.5]])
    assert zero_pad(raw, 2).coords.tolist() == raw.coords.tolist()
    out = zero_pad(raw, 4)
    np.testing.assert_array_equal(out.weight, [1, 1, 0, 0])
    np.testing.assert_array_equal(out.coords[2:], [[0.5, 0.5], [0.5, 0.5]])


def test_zero_padded_points_do_not_change_losses():
    raw = kps([[0.2, 0.3], [0.4, 0.5]])
    pred = [Tensor([[0.25, 0.1], [0.3, 0.9]])]
    padded = zero_pad(raw, 4)
    pred_padded = [Tensor(np.concatenate([pred[0].data, [[0.9, 0.9], [0.1, 0.2]]]))]
    a = loss_full(ForwardTrace(P_q=[None] + pred), raw).full.item()
    b = loss_full(ForwardTrace(P_q=[None] + pred_padded), padded).full.item()
    assert a == b


# BFS reference points

def test_bfs_single_reference_is_self():
    p = kps([[0.1, 0.1], [0.2, 0.2]])
    np.testing.assert_array_equal(bfs_reference_points(p, links_from_pairs([(0, 1)], 2), 1, 1), [[0.2, 0.2]])


def test_bfs_isolated_keypoint_repeats():
    p = kps([[0.1, 0.1], [0.2, 0.2], [0.7, 0.3]])
    out = bfs_reference_points(p, links_from_pairs([(0, 1)], 3), 2, 4)
    np.testing.assert_array_equal(out, [[0.7, 0.3]] * 4)


def test_bfs_chain_example():
    links = links_from_pairs([(0, 1), (1, 2), (2, 3)], 4)
    assert bfs_order(links, 1, 4) == [1, 0, 2, 3]


def test_bfs_cycles_when_short():
    links = links_from_pairs([(0, 1), (1, 2)], 3)
    assert bfs_order(links, 0, 7) == [0, 1, 2, 0, 1, 2, 0]


def test_bfs_rejects_bad_arguments():
    links = links_from_pairs([(0, 1)], 2)
    with pytest.raises(ContractViolation):
        bfs_order(links, 0, 0)
    with pytest.raises(ContractViolation):
        bfs_order(links, 2, 1)


@given(graphs(), st.integers(1, 9))
@settings(max_examples=60, deadline=None)
def test_bfs_matches_queue_oracle(g, m):
    _, links, rng = g
    start = int(rng.integers(len(links)))
    order = bfs_order(links, start, m)
    assert order == oracles.bfs_queue(links, start, m)
    assert order[0] == start


def test_reference_table_identical_mode():
    links = links_from_pairs([(0, 1), (1, 2)], 3)
    np.testing.assert_array_equal(reference_indices(links, 3, identical=True), [[0, 0, 0], [1, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(reference_indices(identity_links(3), 2), [[0, 0], [1, 1], [2, 2]])
    np.testing.assert_array_equal(reference_indices(links, 3), [[0, 1, 2], [1, 0, 2], [2, 1, 0]])


def test_lambda_sampling_is_uniform_for_alpha_one():
    from scipy import stats
    from capemine.graph import sample_mixup_record

    lam = sample_mixup_record(links_from_pairs([(0, 1)], 2), 10000, 1.0, np.random.default_rng(11)).lam
    assert stats.kstest(lam, "uniform").pvalue > 0.01


def test_empty_record_applies_to_nothing():
    raw = kps([[0.1, 0.2]])
    np.testing.assert_array_equal(PaddingRecord().apply(raw.coords), raw.coords)


def test_fallback_warning_is_a_user_warning():
    assert issubclass(NoLinkFallback, UserWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(NoLinkFallback):
            uniform_pad(kps([[0.1, 0.1], [0.2, 0.2]]), np.zeros((2, 2), dtype=np.int8), 3)
