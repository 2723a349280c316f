import csv
import math

import numpy as np
import oracles
import pytest

from rscorrect.experiments import central_difference, relative_error
from rscorrect.opt import (
    LOSS_TRACE_HEADER,
    AdamState,
    LossConfig,
    adam_step,
    charbonnier,
    cosine_lr,
    tv_loss,
    write_loss_trace,
)


def test_loss_config_defaults():
    cfg = LossConfig()
    assert (cfg.eps_charbonnier, cfg.lambda_p, cfg.lambda_tv) == (1e-3, 0.01, 0.001)
    assert "perceptual" in cfg.note
    with pytest.raises(ValueError):
        LossConfig(lambda_tv=-1.0)


def test_charbonnier_equal_is_eps():
    a = np.random.default_rng(0).random((4, 4, 3))
    loss, grad = charbonnier(a, a, 1e-3)
    assert loss == pytest.approx(1e-3, rel=1e-12)
    assert np.all(grad == 0)


def test_charbonnier_unit_difference():
    a = np.zeros((3, 3, 1))
    loss, _ = charbonnier(a, a + 1.0, 1e-3)
    assert loss == pytest.approx(math.sqrt(1 + 1e-6), rel=1e-14)


def test_charbonnier_lower_bound():
    rng = np.random.default_rng(1)
    a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    assert charbonnier(a, b)[0] > 1e-3


def test_charbonnier_gradient():
    rng = np.random.default_rng(2)
    a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    _, g = charbonnier(a, b)
    assert relative_error(g, central_difference(lambda: charbonnier(a, b)[0], a)) < 1e-6


def test_charbonnier_shape_mismatch():
    with pytest.raises(ValueError):
        charbonnier(np.zeros((2, 2)), np.zeros((2, 3)))


def test_tv_constant_fields():
    f = np.full((3, 5, 6, 2), 1.7)
    assert tv_loss(f, eps=0.0)[0] == 0.0
    # eps floor: 2 directions x 2 channels x 3 fields
    assert tv_loss(f, eps=1e-3)[0] == pytest.approx(3 * 2 * 2 * 1e-3)


def test_tv_ramp():
    h, w = 5, 4
    f = np.zeros((1, h, w, 2))
    f[0, :, :, 0] = np.arange(h)[:, None]  # u(x, y) = y
    # every vertical pair of channel u differs by 1; nothing else varies
    assert tv_loss(f, eps=0.0)[0] == pytest.approx(1.0)
    g = np.zeros((1, h, w, 2))
    g[0, :, :, 0] = np.arange(w)[None, :]
    assert tv_loss(g, eps=0.0)[0] == pytest.approx(1.0)


def test_tv_matches_loop():
    f = np.random.default_rng(3).standard_normal((2, 5, 6, 2))
    assert tv_loss(f, 1e-3)[0] == pytest.approx(oracles.tv(f, 1e-3), abs=1e-12)
    assert tv_loss(f, 0.0)[0] == pytest.approx(oracles.tv(f, 0.0), abs=1e-12)


def test_tv_shift_invariant_and_gradient():
    f = np.random.default_rng(4).standard_normal((2, 4, 5, 2))
    assert tv_loss(f + 3.0)[0] == pytest.approx(tv_loss(f)[0], abs=1e-12)
    _, g = tv_loss(f)
    assert relative_error(g, central_difference(lambda: tv_loss(f)[0], f)) < 1e-6


def test_cosine_endpoints():
    assert cosine_lr(0, 100, 0.1, 0.001) == 0.1
    assert cosine_lr(100, 100, 0.1, 0.001) == 0.001
    assert cosine_lr(50, 100, 0.1, 0.0) == pytest.approx(0.05)


def test_adam_zero_gradient_noop():
    st = AdamState(base_lr=0.1, total_steps=10)
    p = {"x": np.array([1.0, -2.0])}
    new = adam_step(st, p, {"x": np.zeros(2)})
    np.testing.assert_array_equal(new["x"], p["x"])
    assert st.step == 1


def test_adam_first_step_by_hand():
    st = AdamState(base_lr=0.1, min_lr=0.0, total_steps=10)
    new = adam_step(st, {"x": np.array(0.0)}, {"x": np.array(1.0)})
    # m_hat = 1, v_hat = 1, lr(0) = base_lr
    assert float(new["x"]) == pytest.approx(-0.1 * 1.0 / (1.0 + 1e-8), rel=1e-15)


def test_adam_second_step_by_hand():
    st = AdamState(base_lr=0.1, min_lr=0.0, total_steps=4)
    p = adam_step(st, {"x": np.array(0.0)}, {"x": np.array(1.0)})
    p = adam_step(st, p, {"x": np.array(-2.0)})
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    lr1 = 0.5 * 0.1 * (1 + math.cos(math.pi / 4))
    want = -0.1 / (1 + 1e-8) - lr1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert float(p["x"]) == pytest.approx(want, rel=1e-13)


def test_adam_determinism_and_groups():
    def run():
        st = AdamState(base_lr=0.1, total_steps=5, lr_scale={"b": 0.1})
        p = {"a": np.ones(3), "b": np.ones(3)}
        for k in range(5):
            p = adam_step(st, p, {"a": np.full(3, k + 1.0), "b": np.full(3, k + 1.0)})
        return p

    p1, p2 = run(), run()
    np.testing.assert_array_equal(p1["a"], p2["a"])
    np.testing.assert_allclose(1 - p1["b"], 0.1 * (1 - p1["a"]), rtol=1e-12)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"x": np.zeros(2)}, {"x": np.zeros(3)})
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"x": np.zeros(2)}, {"y": np.zeros(2)})


def test_loss_trace_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_loss_trace(path, [(0, 0, 0.1, 1.0, 2.0, 1.002)])
    write_loss_trace(path, [(0, 1, 0.05, 0.5, 2.0, 0.502)], append=True)
    rows = list(csv.reader(open(path)))
    assert rows[0] == LOSS_TRACE_HEADER
    assert len(rows) == 3 and rows[2][0] == "loss_trace/v1"
