import math

import numpy as np
import pytest

from pdifmp import DriverStream, fork_for_path


def test_next_proposal_rejects_bad_rate():
    s = fork_for_path(1, 0)
    with pytest.raises(ValueError):
        s.next_proposal(0.0)
    with pytest.raises(ValueError):
        s.next_proposal(-1.0)


def test_next_proposal_rate_is_frozen_per_stream():
    s = fork_for_path(1, 0)
    s.next_proposal(2.0)
    with pytest.raises(ValueError):
        s.next_proposal(3.0)


def test_exponential_increment_mean():
    # law of large numbers: mean of 1e5 exp(2) draws is 0.5 +- 3 se
    s = fork_for_path(42, 0)
    n = 100_000
    total = sum(s.next_proposal(2.0) for _ in range(n))
    se = 0.5 / math.sqrt(n)
    assert abs(total / n - 0.5) < 3 * se


def test_proposal_times_strictly_increase():
    s = fork_for_path(3, 5)
    times = [s.proposal_time(k, 1.0) for k in range(1, 200)]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_replay_determinism():
    a = fork_for_path(9, 4)
    b = fork_for_path(9, 4)
    seq_a = [a.next_proposal(1.5) for _ in range(50)]
    seq_b = [b.next_proposal(1.5) for _ in range(50)]
    assert seq_a == seq_b
    assert a.wiener_block(10, 0.1) == b.wiener_block(10, 0.1)
    assert [a.next_uniform("thinning") for _ in range(10)] == [
        b.next_uniform("thinning") for _ in range(10)
    ]


def test_reset_matches_fresh_construction():
    fresh = fork_for_path(77, 3)
    reused = fork_for_path(5, 0)
    # consume in a scrambled order first, then re-key
    reused.next_proposal(1.0)
    reused.wiener_block(7, 0.2)
    reused.next_uniform("kernel")
    reused.reset(77, 3)
    assert fresh.next_proposal(2.5) == reused.next_proposal(2.5)
    assert fresh.wiener_block(5, 0.3) == reused.wiener_block(5, 0.3)
    assert fresh.thinning_uniform(4) == reused.thinning_uniform(4)
    assert fresh.kernel_uniform(2) == reused.kernel_uniform(2)


def test_wiener_increment_edge_cases():
    s = fork_for_path(2, 0)
    assert s.wiener_increment(0.0) == 0.0
    with pytest.raises(ValueError):
        s.wiener_increment(-0.1)


def test_wiener_variance():
    # sample variance of 1e5 N(0, 0.25) draws; chi-square spread gives
    # se ~ var * sqrt(2/n)
    s = fork_for_path(11, 0)
    n = 100_000
    draws = np.array(s.wiener_block(n, 0.25))
    assert abs(draws.mean()) < 3 * 0.5 / math.sqrt(n)
    assert abs(draws.var() - 0.25) < 3 * 0.25 * math.sqrt(2.0 / n)


def test_wiener_partition_additivity():
    # summing increments over any partition of [0,1] gives a N(0,1) total;
    # sample variance over many paths ~ 1 regardless of the partitions
    rng = np.random.default_rng(0)
    totals = []
    for pid in range(2000):
        s = fork_for_path(123, pid)
        cuts = np.sort(rng.uniform(0.0, 1.0, size=rng.integers(1, 12)))
        widths = np.diff(np.concatenate(([0.0], cuts, [1.0])))
        totals.append(sum(s.wiener_increment(float(w)) for w in widths))
    var = np.var(totals)
    assert abs(var - 1.0) < 3 * math.sqrt(2.0 / len(totals))


def test_wiener_block_equals_scalars():
    a = fork_for_path(6, 1)
    b = fork_for_path(6, 1)
    block = a.wiener_block(16, 0.5)
    singles = [b.wiener_increment(0.5) for _ in range(16)]
    assert block == singles


def test_thinning_uniforms_pass_ks():
    from pdifmp import ks_statistic

    s = fork_for_path(101, 0)
    n = 10_000
    samples = [s.next_uniform("thinning") for _ in range(n)]
    assert ks_statistic(samples, lambda x: min(max(x, 0.0), 1.0)) < 1.36 / math.sqrt(n)


def test_substream_isolation():
    # interleaving kernel draws must not perturb the thinning sequence
    plain = fork_for_path(8, 2)
    baseline = [plain.next_uniform("thinning") for _ in range(20)]
    mixed = fork_for_path(8, 2)
    got = []
    for i in range(20):
        mixed.next_uniform("kernel")
        got.append(mixed.next_uniform("thinning"))
        mixed.wiener_increment(0.1)
        mixed.next_proposal(1.0)
    assert got == baseline


def test_indexed_views_match_sequential():
    seq = fork_for_path(19, 7)
    idx = fork_for_path(19, 7)
    sequential = [seq.next_uniform("thinning") for _ in range(10)]
    indexed = [idx.thinning_uniform(k) for k in range(1, 11)]
    assert sequential == indexed
    # memoisation: re-reading an index gives the identical value
    assert idx.thinning_uniform(3) == sequential[2]


def test_fork_is_pure_and_paths_differ():
    a1 = fork_for_path(55, 0)
    a2 = fork_for_path(55, 0)
    b = fork_for_path(55, 1)
    assert a1.wiener_increment(1.0) == a2.wiener_increment(1.0)
    assert fork_for_path(55, 0).wiener_increment(1.0) != b.wiener_increment(1.0)


def test_cross_path_correlation_near_zero():
    n = 10_000
    xs = np.empty(n)
    ys = np.empty(n)
    stream = DriverStream(31, 0)
    for i in range(n):
        stream.reset(31, 2 * i)
        xs[i] = stream.wiener_increment(1.0)
        stream.reset(31, 2 * i + 1)
        ys[i] = stream.wiener_increment(1.0)
    r = np.corrcoef(xs, ys)[0, 1]
    assert abs(r) < 3.0 / math.sqrt(n)


def test_path_id_range_checked():
    with pytest.raises(ValueError):
        fork_for_path(1, -1)
    with pytest.raises(ValueError):
        fork_for_path(1, 1 << 61)


def test_kernel_slots_layout():
    s = fork_for_path(12, 0)
    flat = [s.kernel_uniform(i) for i in range(6)]
    s2 = fork_for_path(12, 0)
    assert s2.kernel_slots(1) == (flat[0], flat[1])
    assert s2.kernel_slots(3) == (flat[4], flat[5])
    assert s2.kernel_slots(2) == (flat[2], flat[3])
