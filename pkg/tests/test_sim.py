import numpy as np
import pytest

from rscorrect.image import psnr
from rscorrect.motion import block_match_flow
from rscorrect.sim import (
    SceneSpec,
    TimeOffsetMap,
    UnsupportedSceneError,
    gt_displacement,
    make_scene,
    make_sequence,
    render_gs,
    render_rs,
)
from rscorrect.warp import backward_warp


def translating_scene(velocity, size=32, margin=20, texture=None, seed=0):
    n = size + 2 * margin
    if texture is None:
        texture = np.random.default_rng(seed).random((n, n, 1))
    return SceneSpec(texture, (size, size), (float(margin), float(margin)), velocity)


def test_offsets_formula_and_antisymmetry():
    tm = TimeOffsetMap.create(65, 0.5)
    i = np.arange(65)
    np.testing.assert_allclose(tm.offsets, (i - 32) * 0.5 / 64, atol=0)
    assert tm.offsets[32] == 0.0
    np.testing.assert_array_equal(tm.offsets, -tm.offsets[::-1])
    assert np.all(np.diff(tm.offsets) > 0)


def test_offsets_even_height_and_bad_ratio():
    tm = TimeOffsetMap.create(64, 0.8)
    np.testing.assert_allclose(tm.offsets, -tm.offsets[::-1], atol=1e-15)
    assert tm.offsets[-1] - tm.offsets[0] == pytest.approx(0.8)
    with pytest.raises(ValueError):
        TimeOffsetMap.create(8, 1.5)


def test_static_scene_is_time_invariant():
    sc = make_scene(0, kind="static", size=32)
    g0 = render_gs(sc, 0.0)
    np.testing.assert_array_equal(g0, render_gs(sc, 2.5))
    np.testing.assert_array_equal(g0, render_rs(sc, 1.0, 0.8))


def test_identity_motion_is_texture_crop():
    sc = translating_scene((0.0, 0.0))
    np.testing.assert_array_equal(render_gs(sc, 1.0), sc.texture[20:52, 20:52])


def test_translation_shifts_columns():
    sc = translating_scene((2.0, 0.0))
    g0 = render_gs(sc, 0.0)
    g1 = render_gs(sc, 1.0)
    for x in range(2, 32):
        np.testing.assert_allclose(g1[:, x], g0[:, x - 2], atol=1e-12)


def test_times_outside_span_rejected():
    sc = translating_scene((1.0, 0.0))
    with pytest.raises(ValueError):
        render_gs(sc, 10.0)
    with pytest.raises(ValueError):
        render_rs(sc, sc.t_span[1], 0.8)


def test_zero_readout_is_global_shutter():
    sc = make_scene(3, kind="smooth", size=32)
    np.testing.assert_array_equal(render_rs(sc, 1.5, 0.0), render_gs(sc, 1.5))


def test_middle_row_matches_global_shutter():
    sc = make_scene(4, kind="smooth", size=33)
    rs = render_rs(sc, 2.0, 0.8)
    gs = render_gs(sc, 2.0)
    np.testing.assert_array_equal(rs[16], gs[16])


def test_vertical_line_becomes_slanted():
    size, margin, v, s, t_mid = 33, 30, 3.0, 0.8, 1.0
    n = size + 2 * margin
    cols = np.arange(n, dtype=np.float64)
    line_col = 46.0
    profile = np.exp(-0.5 * ((cols - line_col) / 1.5) ** 2)
    tex = np.broadcast_to(profile, (n, n))[..., None].copy()
    sc = translating_scene((v, 0.0), size=size, margin=margin, texture=tex)
    rs = render_rs(sc, t_mid, s)[..., 0]
    T = TimeOffsetMap.create(size, s).offsets
    x = np.arange(size, dtype=np.float64)
    for i in range(size):
        w = rs[i]
        centroid = np.sum(w * x) / np.sum(w)
        # viewport column showing texture column line_col at time t_mid + T(i)
        expect = line_col - margin + v * (t_mid + T[i])
        assert centroid == pytest.approx(expect, abs=0.02)


def test_gt_zero_motion_is_zero():
    sc = make_scene(0, kind="static", size=32)
    assert np.all(gt_displacement(sc, 1.0, 0.8).fields == 0)


def test_gt_constant_translation_row_formula():
    sc = translating_scene((4.0, 0.0), size=65, margin=20)
    b = gt_displacement(sc, 1.0, 0.5)
    T = TimeOffsetMap.create(65, 0.5).offsets
    assert b.m == 1 and np.all(b.weights == 1)
    np.testing.assert_allclose(b.fields[0, :, :, 0], np.broadcast_to((4.0 * T)[:, None], (65, 65)), atol=1e-12)
    np.testing.assert_array_equal(b.fields[0, 32], 0.0)
    assert b.fields[0, 0, 0, 0] == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", range(3))
def test_round_trip_smooth_scene(seed):
    sc = make_scene(seed, kind="smooth", size=64)
    rs = render_rs(sc, 2.0, 0.8)
    gs = render_gs(sc, 2.0)
    est = backward_warp(rs, gt_displacement(sc, 2.0, 0.8).fields[0])
    assert psnr(est[3:-3, 3:-3], gs[3:-3, 3:-3]) >= 40.0


def test_round_trip_two_layer_scene_away_from_edges():
    sc = make_scene(1, kind="two_layer", size=64)
    rs = render_rs(sc, 2.0, 0.8)
    gs = render_gs(sc, 2.0)
    est = backward_warp(rs, gt_displacement(sc, 2.0, 0.8).fields[0])
    assert psnr(est[3:-3, 3:-3], gs[3:-3, 3:-3]) > 25.0


def test_unsupported_vertical_speed():
    sc = translating_scene((0.0, 40.0), size=32, margin=20)
    sc.t_span = (-1.0, 1.0)
    with pytest.raises(UnsupportedSceneError):
        gt_displacement(sc, 0.3, 1.0)


def test_sequence_zero_motion_identical():
    sc = make_scene(0, kind="static", size=32)
    pairs = make_sequence(sc, 3, 0.8)
    assert len(pairs) == 3 and [p.t_mid for p in pairs] == [0.0, 1.0, 2.0]
    np.testing.assert_array_equal(pairs[0].rs, pairs[2].rs)


def test_sequence_constant_velocity_flow():
    sc = translating_scene((2.0, 1.0), size=48, margin=24, seed=5)
    pairs = make_sequence(sc, 3, 0.8)
    for a, b in zip(pairs[:-1], pairs[1:]):
        flow = block_match_flow(a.rs, b.rs, r=3, patch=2, stride=4)
        inner = flow[8:-8, 8:-8]
        np.testing.assert_allclose(inner[..., 0], 2.0, atol=1e-12)
        np.testing.assert_allclose(inner[..., 1], 1.0, atol=1e-12)


def test_sequence_single_and_empty():
    sc = make_scene(0, kind="translation", size=32)
    assert len(make_sequence(sc, 1, 0.8)) == 1
    with pytest.raises(ValueError):
        make_sequence(sc, 0, 0.8)


def test_make_scene_is_seeded():
    a = make_scene(7, kind="two_layer", size=32)
    b = make_scene(7, kind="two_layer", size=32)
    np.testing.assert_array_equal(render_rs(a, 1.0, 0.8), render_rs(b, 1.0, 0.8))
    with pytest.raises(ValueError):
        make_scene(0, kind="spiral")
