import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from sparsegibbs import DyadicWord
from sparsegibbs.capacity_sampler import coverage_fraction, max_multiplicity
from sparsegibbs.survival_field import (FieldConfig, ResourceError, SurvivalField, count_sd,
                                        expected_count, make_field, node_hash, survival_threshold,
                                        survives_many, write_survivor_csv)
from sparsegibbs import GibbsModel


def test_config_validation():
    with pytest.raises(ValueError):
        FieldConfig(0, 1.0)
    with pytest.raises(ValueError):
        FieldConfig(0, 0.5, backend="tree")
    with pytest.raises(ValueError):
        FieldConfig(0, 0.5, d=2, max_depth=40)
    with pytest.raises(ValueError):
        FieldConfig(-1, 0.5)


def test_root_always_survives():
    for seed in range(20):
        for backend in ("hash", "index"):
            f = make_field(seed, 0.1, backend=backend)
            assert f.survives(DyadicWord.root())
            assert f.level(0).tolist() == [0]


def test_depth_overflow_is_rejected():
    f = make_field(0, 0.5, max_depth=10)
    with pytest.raises(ValueError):
        f.survives(DyadicWord((0,) * 11))


def test_threshold_matches_probability():
    cfg = FieldConfig(0, 0.5)
    assert survival_threshold(cfg, 0) is None
    assert survival_threshold(cfg, 10) == 2 ** 59
    # d * max_depth <= 64 keeps the smallest probability above 2^-64, so t >= 1
    assert survival_threshold(FieldConfig(0, 1e-9, max_depth=64), 64) >= 1
    assert survival_threshold(FieldConfig(0, 1e-9, d=4, max_depth=16), 16) >= 1


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 40), st.integers(0, 2 ** 40 - 1))
def test_survival_is_pure(seed, j, code):
    f = make_field(seed, 0.5)
    c = np.array([code % (1 << j) if j else 0], dtype=np.uint64)
    assert f.survives_codes(c, j)[0] == make_field(seed, 0.5).survives_codes(c, j)[0]
    assert node_hash(seed, j, c)[0] == node_hash(seed, j, c)[0]


def test_hash_count_depth_20():
    counts = [make_field(s, 0.5).count_at(20) for s in range(8)]
    assert abs(np.mean(counts) - 1024) <= 3 * 32


def test_index_count_depth_24():
    counts = [make_field(s, 0.5, backend="index").count_at(24) for s in range(8)]
    assert abs(np.mean(counts) - 4096) <= 3 * 64


def test_index_and_hash_count_distributions_agree():
    h = np.array([make_field(s, 0.5).count_at(14) for s in range(200)])
    i = np.array([make_field(s, 0.5, backend="index").count_at(14) for s in range(200)])
    cfg = FieldConfig(0, 0.5)
    mean, sd = expected_count(cfg, 14), count_sd(cfg, 14)
    edges = [-np.inf, mean - sd, mean - 0.3 * sd, mean + 0.3 * sd, mean + sd, np.inf]
    table = np.array([np.histogram(h, edges)[0], np.histogram(i, edges)[0]])
    assert stats.chi2_contingency(table).pvalue > 0.01


@pytest.mark.parametrize("j", range(1, 23))
def test_marginal_frequency(j):
    # at least 2^{22-j} * 64 independent (seed, word) draws
    n_words = 1 << min(j, 12)
    seeds_needed = math.ceil((1 << (22 - j)) * 64 / n_words)
    codes = np.arange(n_words, dtype=np.uint64) << np.uint64(j - min(j, 12))
    hits, n = 0, 0
    for lo in range(0, seeds_needed, 1 << 14):
        seeds = np.arange(lo, min(seeds_needed, lo + (1 << 14)), dtype=np.uint64)
        hits += int(survives_many(seeds[:, None], codes[None, :], j, 0.5).sum())
        n += seeds.size * n_words
    p = 2.0 ** (-0.5 * j)
    assert abs(hits - n * p) <= 4 * math.sqrt(n * p * (1 - p))


def test_sibling_independence_proxy():
    seeds = np.arange(10_000, dtype=np.uint64)
    left = survives_many(seeds, np.uint64(0b101100101100), 12, 0.9)
    right = survives_many(seeds, np.uint64(0b101100101101), 12, 0.9)
    assert 0.05 < left.mean() < 0.95
    assert abs(np.corrcoef(left, right)[0, 1]) < 0.02


def test_coverage_depth_24():
    gen = math.floor(24 * (0.5 - 0.15))
    for s in range(3):
        assert coverage_fraction(make_field(s, 0.5, backend="index"), 24, gen) >= 0.999


@pytest.mark.parametrize("j", [16, 20, 24])
def test_multiplicity_bound(j):
    for s in range(10):
        assert max_multiplicity(make_field(s, 0.5, backend="index"), j, math.floor(0.5 * j)) <= j


@pytest.mark.parametrize("backend", ["hash", "index"])
def test_prefix_enumeration(backend):
    f = make_field(3, 0.6, backend=backend)
    j = 14
    full = f.level(j)
    pre = DyadicWord.from_string("1011")
    sub = f.survivor_codes(j, pre)
    assert np.array_equal(sub, full[(full >> np.uint64(10)) == np.uint64(pre.code)])
    assert [w.code for w in f.survivors_at(j, pre)] == sub.tolist()
    w = DyadicWord.from_string("10110")
    assert f.survivor_codes(5, w).tolist() == ([w.code] if f.survives(w) else [])


def test_hash_prefix_scan_agrees_without_cache():
    a, b = make_field(9, 0.5), make_field(9, 0.5)
    pre = DyadicWord.from_string("0110")
    scanned = a.survivor_codes(16, pre)
    b.level(16)
    assert np.array_equal(scanned, b.survivor_codes(16, pre))


def test_index_survival_queries_agree_with_level():
    f = make_field(4, 0.5, backend="index")
    codes = np.arange(1 << 12, dtype=np.uint64)
    assert np.array_equal(codes[f.survives_codes(codes, 12)], f.level(12))


def test_index_backend_is_reproducible_and_distinct():
    a = make_field(5, 0.5, backend="index").level(30)
    b = make_field(5, 0.5, backend="index").level(30)
    assert np.array_equal(a, b)
    assert np.unique(a).size == a.size
    assert np.all(a < np.uint64(1 << 30))


def test_work_cap():
    f = SurvivalField(FieldConfig(0, 0.5, work_cap=1 << 10))
    with pytest.raises(ResourceError, match="index backend"):
        f.level(12)


def test_survivor_cap():
    f = SurvivalField(FieldConfig(0, 0.9, d=2, backend="index", max_depth=32, survivor_cap=1 << 12))
    with pytest.raises(ResourceError):
        f.level(20)


def test_concurrent_level_builds_once():
    f = make_field(1, 0.5, backend="index")
    out = []
    threads = [threading.Thread(target=lambda: out.append(f.level(26))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(o is out[0] for o in out)


def test_survivor_csv(tmp_path):
    f = make_field(2, 0.5, d=2)
    model = GibbsModel.bernoulli([0.1, 0.2, 0.3, 0.4])
    rows = write_survivor_csv(tmp_path / "s.csv", model, f, [3, 4])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "depth,index_0,index_1,log2_mu"
    assert len(lines) == rows + 1 == 1 + f.count_at(3) + f.count_at(4)
