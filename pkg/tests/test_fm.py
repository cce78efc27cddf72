import numpy as np
import pytest

from subflow.fm import FmConfig, cfm_loss, interpolate, load_model, save_model, source_index, train_fm
from subflow.network import VelocityField
from subflow.sourceopt import SourceParams


class Zero:
    def __call__(self, x, t, rows):
        return np.zeros_like(x)


def test_interpolate():
    x0, x1 = np.array([[0.0, 0.0]]), np.array([[2.0, 4.0]])
    np.testing.assert_allclose(interpolate(x0, x1, [0.0]), x0)
    np.testing.assert_allclose(interpolate(x0, x1, [1.0]), x1)
    np.testing.assert_allclose(interpolate(x0, x1, [0.25]), [[0.5, 1.0]])
    with pytest.raises(ValueError):
        interpolate(x0, x1, [1.5])


def test_cfm_loss_zero_field():
    x0, x1 = np.zeros((3, 2)), np.tile([2.0, 0.0], (3, 1))
    assert cfm_loss(Zero(), x0, x1, np.full(3, 0.3), np.zeros(3, int)) == 4.0


def test_cfm_loss_detects_nan():
    class Bad:
        def __call__(self, x, t, rows):
            return np.full_like(x, np.nan)

    with pytest.raises(FloatingPointError):
        cfm_loss(Bad(), np.zeros((1, 2)), np.ones((1, 2)), [0.5], [0])


def small_net():
    return VelocityField.init(2, [(0, 0), (0, 1), (1, 0)], [0, 1], hidden=(8, 8), emb_dim=4, seed=3,
                              dtype=np.float64)


def test_backprop_matches_finite_differences():
    net = small_net()
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(20):
        x = rng.normal(size=(6, 2))
        t = rng.random(6)
        rows = rng.integers(5, size=6)
        target = rng.normal(size=(6, 2))
        _, grads = net.loss_and_grad(x, t, rows, target)
        name = sorted(net.params)[trial % len(net.params)]
        arr = net.params[name]
        num = np.zeros_like(arr)
        h = 1e-6
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = net.loss_and_grad(x, t, rows, target)[0]
            arr[i] = old - h
            down = net.loss_and_grad(x, t, rows, target)[0]
            arr[i] = old
            num[i] = (up - down) / (2 * h)
        rel = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(num), 1e-12)
        worst = max(worst, rel)
    assert worst <= 1e-3


def test_cond_index_layout():
    net = small_net()
    np.testing.assert_array_equal(net.cond_index([0, 1], [1, 0]), [1, 2])
    np.testing.assert_array_equal(net.cond_index([0, 1]), [3, 4])


def test_single_point_converges():
    # one target, fixed source point: the optimal field is the constant displacement
    x = np.array([[1.5, -0.5]])
    y = np.zeros(1, int)
    src = SourceParams([(0, 0)], np.zeros((1, 2)), np.full((1, 2), -30.0), np.eye(2)[:1], np.ones(1))
    res = train_fm(x, y, None, FmConfig(steps=1500, batch_size=64, lr=3e-3, hidden=(32, 32), emb_dim=4),
                   sources=src)
    assert np.mean(res.trace[-100:]) < 1e-3


def test_training_deterministic_and_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 2))
    y = np.r_[np.zeros(25, int), np.ones(25, int)]
    cfg = FmConfig(steps=20, batch_size=16, source="standard", conditioning="coarse", hidden=(8,), emb_dim=4)
    a = train_fm(x, y, None, cfg)
    b = train_fm(x, y, None, cfg)
    assert a.trace == b.trace
    save_model(a, tmp_path)
    again = load_model(tmp_path)
    for name, arr in a.model.params.items():
        np.testing.assert_array_equal(again.model.params[name], arr)
    assert again.config == a.config
    q = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(again.model(q, 0.5, 2), a.model(q, 0.5, 2))


def test_config_and_source_errors():
    with pytest.raises(ValueError):
        FmConfig(conditioning="fine").validate()
    with pytest.raises(ValueError):
        train_fm(np.zeros((2, 2)), np.zeros(2, int), None, FmConfig(steps=1))
    src = SourceParams([(0, 0)], np.zeros((1, 2)), np.zeros((1, 2)), np.eye(2)[:1], np.ones(1))
    with pytest.raises(KeyError):
        source_index(src, np.array([1]), np.array([0]), "subclass")
