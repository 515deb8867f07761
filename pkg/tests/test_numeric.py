import math

import numpy as np
import pytest

from routeseq.numeric import (
    GradTape,
    NonFiniteGradient,
    ParamStore,
    adam_step,
    add,
    affine,
    clip_gradients,
    grad_check,
    hadamard,
    load_checkpoint,
    logistic,
    logsoftmax,
    matmul,
    rmsprop_step,
    save_checkpoint,
    tanh_,
)
from routeseq.rng import SplitMix64


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def rand(rng, *shape):
    return 2.0 * rng.uniform_array(shape) - 1.0


def test_matmul_identity():
    x = rand(SplitMix64(0), 4, 3)
    assert np.array_equal(matmul(np.eye(4), x), x)


def test_matmul_matches_triple_loop():
    rng = SplitMix64(1)
    a, b = rand(rng, 3, 4), rand(rng, 4, 2)
    assert np.allclose(matmul(a, b), triple_loop_matmul(a, b), atol=1e-14)


def test_shape_mismatch_fails_fast():
    with pytest.raises(ValueError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        add(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        hadamard(np.zeros(2), np.zeros(3))


def test_activation_fixed_points():
    assert logistic(np.array([0.0]))[0] == 0.5
    assert tanh_(np.array([0.0]))[0] == 0.0
    assert logistic(np.array([800.0]))[0] == 1.0  # no overflow
    assert logistic(np.array([-800.0]))[0] == 0.0


def test_affine():
    rng = SplitMix64(2)
    a, x, b = rand(rng, 3, 4), rand(rng, 4), rand(rng, 3)
    assert np.allclose(affine(a, x, b), a @ x + b)


def test_logsoftmax_uniform():
    y = logsoftmax(np.zeros(3))
    assert np.allclose(y, -math.log(3.0))


def test_logsoftmax_normalized_and_shift_invariant():
    rng = SplitMix64(3)
    for _ in range(20):
        z = 10.0 * rand(rng, 7)
        y = logsoftmax(z)
        assert abs(np.exp(y).sum() - 1.0) < 1e-12
        assert np.all(y <= 0.0)
        shifted = logsoftmax(z + 123.456)
        assert np.max(np.abs(shifted - y)) < 1e-12


def test_logsoftmax_extreme_inputs_stay_finite():
    y = logsoftmax(np.array([1e6, 0.0, -1e6]))
    assert np.isfinite(y).all()


def _scalar_store(value=0.0):
    ps = ParamStore()
    ps.alloc("theta", 1)
    ps.freeze()
    ps["theta"][0] = value
    return ps


def test_adam_zero_gradient_no_change():
    ps = _scalar_store(1.5)
    tape = ps.tape()
    adam_step(ps, tape, t=1)
    assert ps["theta"][0] == 1.5


def test_adam_first_step_hand_evaluated():
    # g=1: m=0.1, v=0.001, mhat=1, vhat=1 -> delta = lr * 1/(sqrt(1)+eps)
    lr, eps = 1e-3, 1e-8
    ps = _scalar_store(0.0)
    tape = ps.tape()
    tape["theta"][0] = 1.0
    adam_step(ps, tape, lr=lr, beta1=0.9, beta2=0.999, eps=eps, t=1)
    expected = -lr * 1.0 / (math.sqrt(1.0) + eps)
    assert ps["theta"][0] == pytest.approx(expected, rel=1e-12)


def test_adam_two_steps_match_scalar_reference():
    # spreadsheet-level scalar reference for constant g
    lr, b1, b2, eps, g = 1e-3, 0.9, 0.999, 1e-8, 0.7
    theta_ref, m, v = 0.2, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta_ref -= lr * mhat / (math.sqrt(vhat) + eps)
    ps = _scalar_store(0.2)
    for t in (1, 2):
        tape = ps.tape()
        tape["theta"][0] = g
        adam_step(ps, tape, lr=lr, beta1=b1, beta2=b2, eps=eps, t=t)
    assert ps["theta"][0] == pytest.approx(theta_ref, rel=1e-14)


def test_rmsprop_zero_gradient_no_change():
    ps = _scalar_store(2.0)
    rmsprop_step(ps, ps.tape())
    assert ps["theta"][0] == 2.0


def test_rmsprop_first_step_hand_evaluated():
    lr, eps = 1e-4, 1e-8
    ps = _scalar_store(0.0)
    tape = ps.tape()
    tape["theta"][0] = 1.0
    rmsprop_step(ps, tape, lr=lr, momentum=0.9, decay=0.9, eps=eps)
    expected = -lr * 1.0 / math.sqrt(0.1 + eps)
    assert ps["theta"][0] == pytest.approx(expected, rel=1e-12)


def test_rmsprop_zero_momentum_reduces_to_plain():
    lr, decay, eps, g = 1e-2, 0.5, 1e-8, 0.3
    ps = _scalar_store(1.0)
    r = 0.0
    theta_ref = 1.0
    for _ in range(3):
        tape = ps.tape()
        tape["theta"][0] = g
        rmsprop_step(ps, tape, lr=lr, momentum=0.0, decay=decay, eps=eps)
        r = decay * r + (1 - decay) * g * g
        theta_ref -= lr * g / math.sqrt(r + eps)
    assert ps["theta"][0] == pytest.approx(theta_ref, rel=1e-12)


def test_clip_gradients():
    ps = ParamStore()
    ps.alloc("w", 4)
    ps.freeze()
    tape = ps.tape()
    tape["w"][...] = [5.0, 25.0, -1e9, -3.0]
    clip_gradients(tape, -10.0, 10.0)
    assert tape["w"].tolist() == [5.0, 10.0, -10.0, -3.0]
    with pytest.raises(ValueError):
        clip_gradients(tape, 10.0, -10.0)


def test_nonfinite_gradient_reports_parameter_name():
    ps = ParamStore()
    ps.alloc("a", 2)
    ps.alloc("b", 2)
    ps.freeze()
    tape = ps.tape()
    tape["b"][1] = float("nan")
    with pytest.raises(NonFiniteGradient) as exc:
        adam_step(ps, tape, t=1)
    assert exc.value.name == "b"


def test_grad_check_quadratic():
    ps = ParamStore()
    ps.alloc("theta", 5)
    ps.freeze()
    ps["theta"][...] = rand(SplitMix64(4), 5)

    def f(params):
        tape = params.tape()
        tape["theta"][...] = 2.0 * params["theta"]
        return float(params["theta"] @ params["theta"]), tape

    assert grad_check(f, ps, eps=1e-5) < 1e-8


def test_param_store_fused_views_alias_flat_buffer():
    ps = ParamStore()
    ps.alloc("x.A", 2, 3)
    ps.alloc("y.A", 2, 3)
    ps.alloc("z", 4)
    ps.freeze()
    fused = ps.fused_view(["x.A", "y.A"])
    assert fused.shape == (4, 3)
    fused[0, 0] = 7.0
    assert ps["x.A"][0, 0] == 7.0
    with pytest.raises(ValueError):
        ps.fused_view(["x.A", "z"])  # not shape-compatible / not contiguous


def test_checkpoint_roundtrip(tmp_path):
    rng = SplitMix64(5)
    ps = ParamStore()
    ps.alloc("m", 3, 4)
    ps.alloc("v", 7)
    ps.freeze()
    ps["m"][...] = rand(rng, 3, 4)
    ps["v"][...] = rand(rng, 7)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ps, arch="test", config_hash="abc")
    back, manifest = load_checkpoint(path)
    assert manifest["arch"] == "test"
    assert manifest["config_hash"] == "abc"
    assert np.array_equal(back["m"], ps["m"])
    assert np.array_equal(back["v"], ps["v"])
    # byte-identical rewrite
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, back, arch="test", config_hash="abc")
    assert path.read_bytes() == path2.read_bytes()
