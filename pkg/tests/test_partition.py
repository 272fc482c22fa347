import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iqfed.partition import (
    NONIID_LABELED,
    NONIID_UNLABELED,
    DirichletSpec,
    dirichlet_fractions,
    dirichlet_partition,
    fixed_partition,
    integerize,
    make_test_split,
    noniid_tables,
    partition_manifest,
)
from iqfed.signal import FrameSet


def fake_pool(label: int, count: int, length: int = 4) -> FrameSet:
    """Frames whose first sample encodes (label, index) so assignments can be traced."""
    samples = np.zeros((count, length), complex)
    samples[:, 0] = label * 1_000_000 + np.arange(count)
    return FrameSet(samples, np.full(count, label))


def ids(fs: FrameSet) -> set:
    return set(fs.samples[:, 0].real.astype(np.int64).tolist())


def test_full_size_client1_counts():
    pools = {k: fake_pool(k, int(NONIID_UNLABELED[:, k].sum() + NONIID_LABELED[:, k].sum())) for k in range(4)}
    clients = fixed_partition(pools, NONIID_UNLABELED, NONIID_LABELED)
    assert clients[0].unlabeled_counts.tolist() == [6000, 6000, 1000, 1000]
    assert clients[0].labeled.class_counts(4).tolist() == [1200, 1200, 200, 200]
    seen = set()
    for c in clients:
        for pool in (c.unlabeled, c.labeled):
            assert not (ids(pool) & seen)
            seen |= ids(pool)
    assert len(seen) == NONIID_UNLABELED.sum() + NONIID_LABELED.sum()
    assert np.all(clients[1].unlabeled.labels == -1)


def test_noniid_scaled():
    u, l = noniid_tables(10)
    assert u[0].tolist() == [600, 600, 100, 100]
    assert l[0].tolist() == [120, 120, 20, 20]


def test_zero_table_gives_empty_clients():
    pools = {0: fake_pool(0, 3), 1: fake_pool(1, 3)}
    clients = fixed_partition(pools, np.zeros((2, 2), int), np.zeros((2, 2), int))
    assert all(len(c.unlabeled) == 0 and len(c.labeled) == 0 for c in clients)


def test_insufficient_frames_names_class():
    with pytest.raises(ValueError, match="class 1"):
        fixed_partition({0: fake_pool(0, 5), 1: fake_pool(1, 1)}, [[1, 1]], [[1, 1]])


@given(st.lists(st.lists(st.integers(0, 6), min_size=3, max_size=3), min_size=1, max_size=4), st.integers(0, 3))
def test_fixed_partition_conservation(rows, extra):
    u = np.array(rows)
    l = u // 2
    pools = {k: fake_pool(k, int(u[:, k].sum() + l[:, k].sum()) + extra) for k in range(3)}
    clients = fixed_partition(pools, u, l)
    assert sum(len(c.unlabeled) + len(c.labeled) for c in clients) == u.sum() + l.sum()
    for c, (ur, lr) in zip(clients, zip(u, l)):
        assert c.unlabeled_counts.tolist() == ur.tolist()
        assert c.labeled.class_counts(3).tolist() == lr.tolist()
        assert len(c.unlabeled) == ur.sum()


@given(st.floats(0.01, 100), st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**32))
def test_dirichlet_fractions_simplex(alpha, clients, classes, seed):
    frac = dirichlet_fractions(DirichletSpec(alpha, clients, classes), np.random.default_rng(seed))
    assert np.all(frac >= 0)
    np.testing.assert_allclose(frac.sum(axis=1), 1.0, atol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.integers(0, 5000))
def test_integerize_conserves(weights, count):
    w = np.array(weights)
    if w.sum() == 0:
        w = np.ones_like(w)
    frac = w / w.sum()
    out = integerize(frac, count)
    assert out.sum() == count
    assert np.all(np.abs(out - frac * count) < 1 + 1e-9)


def test_integerize_ties_favour_low_ids():
    assert integerize(np.array([0.5, 0.5]), 1).tolist() == [1, 0]
    assert integerize(np.array([1 / 3] * 3), 2).tolist() == [1, 1, 0]


def test_dirichlet_large_concentration_is_uniform():
    rng = np.random.default_rng(1)
    shares = np.array([dirichlet_fractions(DirichletSpec(1e6, 4, 4), rng) for _ in range(100)])
    assert np.max(np.abs(shares.mean(axis=0) - 0.25)) < 0.01 * 0.25 * 4  # within 1 percentage point


def test_dirichlet_single_client_gets_everything():
    pools = {k: fake_pool(k, 12) for k in range(4)}
    (client,) = dirichlet_partition(pools, DirichletSpec(0.5, 1, 4), np.random.default_rng(0))
    assert len(client.unlabeled) + len(client.labeled) == 48


def _entropy(frac):
    p = np.clip(frac, 1e-300, 1)
    return float(np.mean(-(p * np.log(p)).sum(axis=1)))


def test_lower_concentration_lowers_entropy():
    rng = np.random.default_rng(2)
    low = np.mean([_entropy(dirichlet_fractions(DirichletSpec(0.1, 4, 4), rng)) for _ in range(100)])
    high = np.mean([_entropy(dirichlet_fractions(DirichletSpec(1.0, 4, 4), rng)) for _ in range(100)])
    assert low < high


def test_dirichlet_partition_conserves_and_is_deterministic():
    pools = {k: fake_pool(k, 60 + 7 * k) for k in range(4)}
    spec = DirichletSpec(0.5, 3, 4)
    a = dirichlet_partition(pools, spec, np.random.default_rng(5))
    b = dirichlet_partition(pools, spec, np.random.default_rng(5))
    assert sum(len(c.unlabeled) + len(c.labeled) for c in a) == sum(len(p) for p in pools.values())
    for x, y in zip(a, b):
        assert x.counts() == y.counts()
    with pytest.raises(ValueError):
        DirichletSpec(0.0, 3)


def test_make_test_split_counts_and_disjoint():
    labeled = FrameSet.concat([fake_pool(0, 1200), fake_pool(1, 1200), fake_pool(2, 200), fake_pool(3, 9)])

    def gen(k, n, rng):
        pool = fake_pool(k, n)
        pool.samples[:, 0] += 500_000  # fresh frames, distinct ids
        return pool

    train, test = make_test_split(labeled, gen, np.random.default_rng(0))
    assert test.class_counts(4).tolist() == [120, 120, 20, 0]
    assert train is labeled
    assert not (ids(train) & ids(test))
    with pytest.raises(ValueError):
        make_test_split(FrameSet.empty(4), gen, np.random.default_rng(0))


def test_manifest_lists_counts():
    pools = {0: fake_pool(0, 10), 1: fake_pool(1, 10)}
    clients = fixed_partition(pools, [[2, 3]], [[1, 1]])
    man = partition_manifest(clients, {"seed": 4})
    assert man["seeds"] == {"seed": 4}
    assert man["clients"][0]["unlabeled"] == [2, 3]
    assert man["clients"][0]["labeled"] == [1, 1]
