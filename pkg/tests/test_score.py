import numpy as np
import pytest

from texdistill import gradtape as gt
from texdistill.errors import ScorerError
from texdistill.score import (CosineSchedule, DegenerateModel, KeyedDegenerateModel,
                              TabulatedSchedule, ToySuperResModel, cfg_combine,
                              degenerate_eps, noise_image, predict_x0, toy_encode,
                              toy_encode_node, toy_encoder_matrix)
from texdistill.imageops import upsample_node_aligned

from oracles import rel_err


def test_alpha_bar_examples():
    sched = CosineSchedule()
    assert sched.alpha_bar(0.0) == pytest.approx(1.0)
    assert sched.alpha_bar(0.5) == pytest.approx(0.5)
    assert sched.alpha_bar(1.0) == pytest.approx(1e-4)
    with pytest.raises(ScorerError):
        sched.alpha_bar(1.5)


def test_tabulated_schedule():
    sched = TabulatedSchedule(CosineSchedule().table(100))
    assert sched.step_for(0.0) == 0
    assert sched.step_for(1.0) == 99
    assert sched.alpha_bar(0.0) == pytest.approx(1.0)
    with pytest.raises(ScorerError, match="non-increasing"):
        TabulatedSchedule([0.1, 0.5, 0.9])


def test_degenerate_eps_examples():
    # exact cancellation at x_t = sqrt(abar) * target
    a = 0.37
    target = np.full((4, 4, 3), 0.8)
    x_t = np.sqrt(a) * target
    np.testing.assert_allclose(degenerate_eps(x_t, a, target), 0.0, atol=1e-12)

    # zero target
    x_t = np.ones((2, 2, 3))
    np.testing.assert_allclose(degenerate_eps(x_t, 0.5, np.zeros_like(x_t)),
                               x_t / np.sqrt(0.5))

    # scalar substitution
    val = degenerate_eps(np.array([1.0]), 0.5, np.array([0.5]))
    assert val[0] == pytest.approx(0.91421, abs=1e-5)


def test_predict_x0_examples():
    sched = CosineSchedule()
    x_t = np.random.default_rng(0).normal(size=(3, 3, 3))
    np.testing.assert_allclose(predict_x0(x_t, 0.0, np.zeros_like(x_t), sched), x_t)

    class FixedSched:
        def alpha_bar(self, t):
            return 0.25

    got = predict_x0(np.array([1.0]), 0.5, np.array([1.0]), FixedSched())
    assert got[0] == pytest.approx(0.26795, abs=1e-5)


def test_degenerate_recovery_identity():
    # predict_x0(degenerate_eps(x_t)) returns the target for any draw
    sched = CosineSchedule()
    rng = np.random.default_rng(1)
    target = rng.uniform(0, 1, (8, 8, 3))
    model = DegenerateModel(target, sched)
    for _ in range(100):
        t = float(rng.uniform(0, 1))
        x_t = rng.normal(size=target.shape)
        x0_hat = predict_x0(x_t, t, model.eps(x_t, t), sched)
        assert rel_err(x0_hat, target) < 1e-6


def test_degenerate_affine_in_xt():
    sched = CosineSchedule()
    t = 0.63
    a = sched.alpha_bar(t)
    model = DegenerateModel(np.full((2, 2, 3), 0.4), sched)
    x1 = np.full((2, 2, 3), 0.2)
    x2 = np.full((2, 2, 3), 0.9)
    e1 = model.eps(x1, t)
    e2 = model.eps(x2, t)
    slope = (e2 - e1) / (x2 - x1)
    np.testing.assert_allclose(slope, 1.0 / np.sqrt(1 - a), rtol=1e-9)


def test_keyed_model_requires_known_key():
    model = KeyedDegenerateModel({0: np.zeros((2, 2, 3))})
    with pytest.raises(ScorerError, match="key"):
        model.eps(np.zeros((2, 2, 3)), 0.5, key=7)


def test_cfg_combine():
    c = np.full((2, 2), 2.0)
    u = np.full((2, 2), 0.5)
    np.testing.assert_allclose(cfg_combine(c, u, 1.0), c)
    np.testing.assert_allclose(cfg_combine(c, u, 0.0), u)
    np.testing.assert_allclose(cfg_combine(c, np.zeros_like(c), 2.0), 2 * c)


def test_noise_image_definition():
    rng = np.random.default_rng(2)
    x0 = rng.uniform(0, 1, (4, 4, 3))
    eps = rng.normal(size=x0.shape)
    a = 0.7
    np.testing.assert_allclose(noise_image(x0, a, eps),
                               np.sqrt(a) * x0 + np.sqrt(1 - a) * eps)


# -- toy encoder -----------------------------------------------------------

def test_toy_encode_linear():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(32, 32, 3))
    np.testing.assert_allclose(toy_encode(np.zeros_like(x)), 0.0)
    assert rel_err(toy_encode(3.0 * x), 3.0 * toy_encode(x)) < 1e-6
    with pytest.raises(ScorerError, match="divisible"):
        toy_encode(np.zeros((30, 30, 3)))


def test_toy_encode_shapes_and_determinism():
    x = np.random.default_rng(4).normal(size=(64, 64, 3))
    z1 = toy_encode(x)
    z2 = toy_encode(x)
    assert z1.shape == (16, 16, 4)
    np.testing.assert_array_equal(z1, z2)


def test_toy_encode_graph_twin_matches():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (32, 32, 3)).astype(np.float32)
    g = gt.Graph()
    xin = g.input("x", requires_grad=True)
    g.output("z", toy_encode_node(g, xin))
    z_graph = gt.forward(g, {"x": x})["z"]
    assert rel_err(z_graph, toy_encode(x)) < 1e-5


def test_toy_encode_null_space_via_svd():
    h = w = 32
    mat = toy_encoder_matrix(h, w)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(h, w, 3))
    # matrix agrees with the convolution
    np.testing.assert_allclose((mat @ x.reshape(-1)).reshape(8, 8, 4),
                               toy_encode(x), rtol=1e-10, atol=1e-10)
    # rank-deficiency: latent dimension strictly below input dimension
    _, s, vt = np.linalg.svd(mat, full_matrices=False)
    assert np.sum(s > 1e-10 * s[0]) < mat.shape[1]
    # null-space vector constructed from the row-space projector
    row_component = vt.T @ (vt @ x.reshape(-1))
    v_null = x.reshape(-1) - row_component
    v_null /= np.linalg.norm(v_null)
    assert np.linalg.norm(toy_encode(v_null.reshape(h, w, 3))) < 1e-4


# -- toy super-resolution model ---------------------------------------------

def test_toy_sr_constant_condition():
    model = ToySuperResModel(gain=1.0)
    cond = np.full((8, 8, 3), 0.35)
    target = model.target_for(cond)
    np.testing.assert_allclose(target, 0.35, atol=1e-12)


def test_toy_sr_zero_gain_is_upsample():
    rng = np.random.default_rng(7)
    cond = rng.uniform(0.2, 0.8, (8, 8, 3))
    model = ToySuperResModel(gain=0.0)
    np.testing.assert_allclose(model.target_for(cond), upsample_node_aligned(cond, 4))


def test_toy_sr_step_edge_overshoot():
    cond = np.full((8, 8, 3), 0.3)
    cond[:, 4:] = 0.7
    model = ToySuperResModel(gain=1.0)
    up = upsample_node_aligned(cond.astype(np.float64), 4)
    target = model.target_for(cond)
    # sharpening overshoots the plateau levels near the edge
    assert target.max() > up.max() + 0.01
    assert target.min() < up.min() - 0.01


def test_toy_sr_size_check():
    model = ToySuperResModel()
    with pytest.raises(ScorerError, match="4x"):
        model.eps(np.zeros((16, 16, 3)), 0.5, cond=np.zeros((8, 8, 3)))


def test_toy_sr_recovery_identity():
    sched = CosineSchedule()
    rng = np.random.default_rng(8)
    cond = rng.uniform(0, 1, (8, 8, 3))
    model = ToySuperResModel(gain=1.0, schedule=sched)
    x_t = rng.normal(size=(32, 32, 3))
    t = 0.44
    x0_hat = predict_x0(x_t, t, model.eps(x_t, t, cond=cond), sched)
    assert rel_err(x0_hat, model.target_for(cond)) < 1e-6
