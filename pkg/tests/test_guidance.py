"""Guidance combiners: two-way CFG, orthogonalized three-way, replacement."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridar.errors import LengthMismatch
from gridar.guidance import (
    LOGIT_FLOOR,
    GuidanceConfig,
    GuidanceMode,
    cfg_combine,
    orthogonal_reject,
    replacement_combine,
    three_way_combine,
)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z[np.isfinite(z)])
    w = np.where(np.isfinite(z), np.exp(z - m), 0.0)
    return w / w.sum()


def test_scale_zero_is_identity():
    rng = np.random.default_rng(0)
    l_c = rng.normal(size=13)
    l_u = rng.normal(size=13)
    assert np.array_equal(cfg_combine(l_c, l_u, 0.0), l_c)


def test_cfg_hand_example():
    out = cfg_combine(np.array([2.0, 0.0]), np.array([1.0, 0.0]), 1.0)
    assert np.array_equal(out, np.array([3.0, 0.0]))


def test_cfg_matches_tilted_distribution():
    rng = np.random.default_rng(1)
    for s in (0.0, 1.0, 5.0, 7.5):
        l_c = rng.normal(size=13)
        l_u = rng.normal(size=13)
        p_c, p_u = softmax(l_c), softmax(l_u)
        tilted = p_c ** (1 + s) * p_u ** (-s)
        tilted /= tilted.sum()
        assert np.max(np.abs(softmax(cfg_combine(l_c, l_u, s)) - tilted)) <= 1e-9


def test_orthogonal_reject_textbook():
    out = orthogonal_reject(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    assert np.allclose(out, [0.0, 1.0], atol=1e-15)


def test_orthogonal_reject_parallel_gives_zero():
    out = orthogonal_reject(np.array([2.0, 0.0]), np.array([1.0, 0.0]))
    assert np.allclose(out, [0.0, 0.0], atol=1e-15)


def test_orthogonal_reject_zero_reference_passthrough():
    d_r = np.array([0.3, -0.7])
    out = orthogonal_reject(d_r, np.zeros(2))
    assert np.array_equal(out, d_r)
    # near-zero reference below eps behaves the same
    out = orthogonal_reject(d_r, np.full(2, 1e-8))
    assert np.array_equal(out, d_r)


def test_three_way_hand_example():
    cfg = GuidanceConfig(GuidanceMode.THREE_WAY, s_o=1.0, s_r=1.0)
    out = three_way_combine(
        np.array([0.0, 0.0, 0.0]),
        np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]),
        cfg,
    )
    assert np.array_equal(out, np.array([2.0, 1.0, 0.0]))


def test_replacement_is_cfg_on_reformulated():
    rng = np.random.default_rng(2)
    l_u = rng.normal(size=13)
    l_r = rng.normal(size=13)
    assert np.array_equal(replacement_combine(l_u, l_r, 0.0), l_r)
    assert np.array_equal(
        replacement_combine(l_u, l_r, 6.5), cfg_combine(l_r, l_u, 6.5)
    )
    out = replacement_combine(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 6.5)
    assert np.array_equal(out, np.array([7.5, 0.0]))


def test_reduction_s_r_zero_equals_two_way_bitwise():
    rng = np.random.default_rng(3)
    for _ in range(50):
        l_u, l_o, l_r = rng.normal(size=(3, 13))
        cfg = GuidanceConfig(GuidanceMode.THREE_WAY, s_o=5.0, s_r=0.0)
        a = three_way_combine(l_u, l_o, l_r, cfg)
        b = cfg_combine(l_o, l_u, 5.0)
        assert np.array_equal(a, b)


def test_reduction_reform_equals_original_bitwise():
    rng = np.random.default_rng(4)
    for _ in range(50):
        l_u, l_o = rng.normal(size=(2, 13))
        cfg = GuidanceConfig(GuidanceMode.THREE_WAY, s_o=5.0, s_r=3.0)
        a = three_way_combine(l_u, l_o, l_o.copy(), cfg)
        b = cfg_combine(l_o, l_u, 5.0)
        assert np.array_equal(a, b)


def test_neg_inf_clamped_before_offsets_restored_after():
    l_c = np.array([-np.inf, 0.0])
    l_u = np.array([0.0, 0.0])
    out = cfg_combine(l_c, l_u, 1.0)
    # clamped arithmetic would give -2e4, at or below the floor -> -inf
    assert out[0] == -np.inf and out[1] == 0.0


def test_floor_boundary_is_inclusive():
    # combined value lands exactly on the floor: treated as forbidden
    l_c = np.array([LOGIT_FLOOR, 0.0])
    l_u = np.array([LOGIT_FLOOR, 0.0])
    out = cfg_combine(l_c, l_u, 5.0)
    assert out[0] == -np.inf


def test_finite_results_never_produce_nan():
    l_c = np.array([-np.inf, 1.0])
    l_u = np.array([-np.inf, 0.0])
    for s in (0.0, 1.0, 7.5):
        out = cfg_combine(l_c, l_u, s)
        assert not np.isnan(out).any()


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        cfg_combine(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(LengthMismatch):
        orthogonal_reject(np.zeros(3), np.zeros(4))
    with pytest.raises(LengthMismatch):
        three_way_combine(
            np.zeros(3), np.zeros(3), np.zeros(5), GuidanceConfig(GuidanceMode.THREE_WAY)
        )


finite_logits = st.floats(min_value=-50, max_value=50, allow_nan=False)


@settings(max_examples=200)
@given(
    st.lists(finite_logits, min_size=13, max_size=13),
    st.lists(finite_logits, min_size=13, max_size=13),
)
def test_orthogonality_property(d_r, d_o):
    d_r, d_o = np.asarray(d_r), np.asarray(d_o)
    d_perp = orthogonal_reject(d_r, d_o)
    bound = 1e-8 * np.linalg.norm(d_r) * np.linalg.norm(d_o)
    if float(np.dot(d_o, d_o)) >= 1e-12:
        assert abs(float(np.dot(d_perp, d_o))) <= max(bound, 1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_scale_decoupling(seed, s_r_a, s_r_b):
    # varying s_r moves the output only orthogonally to the original direction
    rng = np.random.default_rng(seed)
    l_u, l_o, l_r = rng.normal(size=(3, 13))
    d_o = l_o - l_u
    cfg_a = GuidanceConfig(GuidanceMode.THREE_WAY, s_o=2.0, s_r=s_r_a)
    cfg_b = GuidanceConfig(GuidanceMode.THREE_WAY, s_o=2.0, s_r=s_r_b)
    delta = three_way_combine(l_u, l_o, l_r, cfg_b) - three_way_combine(l_u, l_o, l_r, cfg_a)
    assert abs(float(np.dot(delta, d_o))) <= 1e-7 * np.linalg.norm(d_o) ** 2
