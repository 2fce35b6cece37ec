import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_evo.errors import ConfigError, LineageExhausted
from sparse_evo.net import NetworkSpec, param_layout
from sparse_evo.pruning import (baseline_mask, dense_mask, density, layer_counts, permute_init,
                                prune_step, score_weights, survivor_schedule, survivors_after)

LAYOUT = param_layout(NetworkSpec(layer_dims=(6, 5, 4)))


RATIONAL = {0.2: (1, 5), 0.5: (1, 2), 0.1: (1, 10), 0.35: (7, 20)}


def brute_force(scores, mask, p):
    """Reference selection: full sort of (score, index) pairs among survivors."""
    alive = [(scores[i], i) for i in range(len(mask)) if mask[i]]
    alive.sort()
    num, den = RATIONAL[p]
    keep = len(alive) * (den - num) // den
    drop = {i for _, i in alive[: len(alive) - keep]}
    out = np.array([bool(mask[i]) and i not in drop for i in range(len(mask))])
    return out


def test_snr_example():
    np.testing.assert_array_equal(score_weights("snr", np.zeros(2), np.array([2.0, -1.0]), np.array([1.0, 0.1])),
                                  [2.0, 10.0])


def test_movement_example():
    np.testing.assert_array_equal(score_weights("movement", np.array([1.0, 1.0]), np.array([1.0, 3.0])), [0, 2])


def test_magnitude_increase_negative():
    s = score_weights("magnitude_increase", np.array([2.0]), np.array([1.0]))
    assert s[0] == -1.0


def test_other_heuristics():
    t0, tf = np.array([-3.0, 1.0]), np.array([0.5, -2.0])
    np.testing.assert_array_equal(score_weights("final_magnitude", t0, tf), [0.5, 2.0])
    np.testing.assert_array_equal(score_weights("init_magnitude", t0, tf), [3.0, 1.0])
    with pytest.raises(ConfigError):
        score_weights("snr", t0, tf)
    with pytest.raises(ConfigError):
        score_weights("hessian", t0, tf)


def test_snr_zero_sigma_uses_floor(caplog):
    s = score_weights("snr", np.zeros(2), np.array([1.0, 1.0]), np.array([0.0, 1.0]), np.array([1, 1]))
    assert s[0] == 1e8
    assert "sigma floor" in caplog.text


def test_masked_scores_sentinel():
    s = score_weights("final_magnitude", np.zeros(3), np.ones(3), mask=np.array([1, 0, 1]))
    assert s[1] == -np.inf


def test_prune_step_example():
    mask, thr = prune_step(np.array([5.0, 1, 4, 2, 3]), np.ones(5, bool), 0.2)
    np.testing.assert_array_equal(mask, [1, 0, 1, 1, 1])
    assert 1 < thr < 2


def test_prune_step_ties_lowest_index_first():
    scores = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    mask, _ = prune_step(scores, np.ones(5, bool), 0.4)
    np.testing.assert_array_equal(mask, [0, 0, 1, 1, 1])


def test_schedule_800_640():
    mask = dense_mask(1000)
    scores = np.random.default_rng(0).random(1000)
    mask, _ = prune_step(scores, mask, 0.2)
    assert mask.sum() == 800
    mask, _ = prune_step(np.where(mask, scores, -np.inf), mask, 0.2)
    assert mask.sum() == 640
    assert survivor_schedule(1000, 0.2, 2) == [1000, 800, 640]


def test_survivors_exact_arithmetic():
    # 0.7 * 10 is 6.999... in floating point; exact arithmetic keeps 7
    assert survivors_after(10, 0.3) == 7
    assert survivors_after(5, 0.2) == 4


def test_schedule_drift_bound():
    # each floor loses < 1 count, so after t steps the count is within sum(0.8^k) < 5 of D * 0.8^t
    for d in (10, 123, 1000, 50890, 99991):
        counts = survivor_schedule(d, 0.2, 20)
        for t, c in enumerate(counts):
            assert 0 <= d * 0.8 ** t - c < 5


def test_lineage_exhausted():
    with pytest.raises(LineageExhausted):
        prune_step(np.array([1.0, 2.0]), np.array([True, False]), 0.2)
    with pytest.raises(ConfigError):
        prune_step(np.ones(3), np.ones(3, bool), 1.0)


def test_unprunable_coordinates_kept():
    prunable = np.array([0, 1, 1, 1, 1, 1], bool)
    mask, _ = prune_step(np.array([0.0, 5, 4, 3, 2, 1]), np.ones(6, bool), 0.2, prunable)
    np.testing.assert_array_equal(mask, [1, 1, 1, 1, 1, 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**32 - 1), st.sampled_from([0.2, 0.5, 0.1, 0.35]), st.booleans())
def test_prune_step_matches_oracle(d, seed, p, ties):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, d).astype(float) if ties else rng.normal(size=d)
    mask = rng.random(d) < 0.8
    if mask.sum() < 2:
        return
    scores = np.where(mask, scores, -np.inf)
    new, thr = prune_step(scores, mask, p)
    np.testing.assert_array_equal(new, brute_force(scores, mask, p))
    assert not np.any(new & ~mask)  # nested
    dropped = mask & ~new
    if dropped.any():
        assert scores[dropped].max() <= thr <= scores[new].min()


def test_baselines_density_matched():
    rng = np.random.default_rng(0)
    ref = rng.random(LAYOUT.size) < 0.3
    for kind in ("random_global", "layerwise_matched", "permuted_mask"):
        m = baseline_mask(kind, ref, LAYOUT, np.random.default_rng(1))
        assert m.sum() == ref.sum()
        assert density(m) == density(ref)
        if kind != "random_global":
            np.testing.assert_array_equal(layer_counts(m, LAYOUT), layer_counts(ref, LAYOUT))
    with pytest.raises(ConfigError):
        baseline_mask("structured", ref, LAYOUT, rng)


def test_permuted_mask_constant_layer_unchanged():
    ref = np.random.default_rng(0).random(LAYOUT.size) < 0.5
    ref[LAYOUT[0].slice] = True
    m = baseline_mask("permuted_mask", ref, LAYOUT, np.random.default_rng(3))
    assert m[LAYOUT[0].slice].all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permute_init_multiset(seed):
    rng = np.random.default_rng(seed)
    init = rng.normal(size=LAYOUT.size)
    mask = rng.random(LAYOUT.size) < 0.5
    out = permute_init(init, mask, LAYOUT, np.random.default_rng(seed + 1))
    assert np.all(out[~mask] == 0)
    for e in LAYOUT:
        keep = mask[e.slice]
        np.testing.assert_array_equal(np.sort(out[e.slice][keep]), np.sort(init[e.slice][keep]))


def test_permute_init_single_survivor():
    init = np.arange(1.0, LAYOUT.size + 1)
    mask = np.zeros(LAYOUT.size, bool)
    for e in LAYOUT:
        mask[e.offset] = True
    out = permute_init(init, mask, LAYOUT, np.random.default_rng(0))
    np.testing.assert_array_equal(out, np.where(mask, init, 0))


def test_permute_init_fixed_point_rate():
    spec = NetworkSpec(layer_dims=(5, 1), output_transform="identity")
    layout = param_layout(spec)
    init = np.arange(1.0, layout.size + 1)
    mask = np.zeros(layout.size, bool)
    mask[layout[0].slice] = True  # 5 survivors in one layer
    rng = np.random.default_rng(0)
    fixed = [np.mean(permute_init(init, mask, layout, rng)[:5] == init[:5]) for _ in range(10_000)]
    assert abs(np.mean(fixed) - 1 / 5) < 0.01
