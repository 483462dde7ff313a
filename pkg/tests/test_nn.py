import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msrcomplete.nn import (
    DESK_CHANNELS,
    PAPER_KERNELS,
    AdamState,
    BatchNorm,
    Conv2D,
    Dense,
    Network,
    NetworkSpec,
    PReLU,
    TrainingError,
    adam_step,
    glorot_uniform,
    grad_check,
    loss_l1,
    loss_l2,
    make_loss,
    same_padding,
    train,
)
from msrcomplete.nn import checkpoint as ckpt
from msrcomplete.nn.losses import seam_penalty
from msrcomplete.rng import stream


def projection(target):
    return lambda out: (float(np.sum(out * target)), target.copy())


def direct_conv(x, w, b):
    """Loop oracle: same cross-correlation, extra padding after."""
    B, H, W, _ = x.shape
    kh, kw, _, co = w.shape
    (pt, _), (pl, _) = same_padding(kh), same_padding(kw)
    out = np.zeros((B, H, W, co))
    for n in range(B):
        for i in range(H):
            for j in range(W):
                for a in range(kh):
                    for c in range(kw):
                        ii, jj = i + a - pt, j + c - pl
                        if 0 <= ii < H and 0 <= jj < W:
                            out[n, i, j] += x[n, ii, jj] @ w[a, c]
    return out + b


# layers


def test_conv_identity_kernel():
    conv = Conv2D(1, 1, 1, 1)
    conv.params["w"][...] = 1.0
    x = stream(0).standard_normal((2, 3, 3, 1))
    assert np.array_equal(conv.forward(x), x)


def test_conv_hand_example():
    conv = Conv2D(2, 2, 1, 1)
    conv.params["w"][...] = 1.0
    x = np.arange(1.0, 10.0).reshape(1, 3, 3, 1)
    y = conv.forward(x)
    assert y[0, 0, 0, 0] == 12.0
    assert np.array_equal(y, direct_conv(x, conv.params["w"], conv.params["b"]))


@pytest.mark.parametrize("k", PAPER_KERNELS)
def test_conv_matches_loop_oracle_and_keeps_size(k):
    g = stream(1, k)
    conv = Conv2D(k, k, 2, 3, seed=k)
    conv.params["b"][...] = g.standard_normal(3)
    x = g.standard_normal((2, 5, 6, 2))
    y = conv.forward(x)
    assert y.shape == (2, 5, 6, 3)
    assert np.allclose(y, direct_conv(x, conv.params["w"], conv.params["b"]), atol=1e-12)


def test_same_padding_puts_extra_after():
    assert same_padding(2) == (0, 1)
    assert same_padding(3) == (1, 1)
    assert same_padding(4) == (1, 2)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_conv_gradients(k):
    g = stream(2, k)
    conv = Conv2D(k, k, 2, 3, seed=1)
    x = g.standard_normal((2, 4, 4, 2))
    loss = projection(g.standard_normal((2, 4, 4, 3)))
    assert grad_check(conv, x, loss) <= 1e-6
    assert grad_check(conv, x, loss, wrt_input=True) <= 1e-6


def test_batchnorm_constant_channel_gives_beta():
    bn = BatchNorm(2)
    bn.params["gamma"][...] = [2.0, 3.0]
    bn.params["beta"][...] = [0.5, -1.0]
    x = np.ones((4, 3, 3, 2)) * 7.0
    y = bn.forward(x)
    assert np.allclose(y[..., 0], 0.5, atol=1e-6)
    assert np.allclose(y[..., 1], -1.0, atol=1e-6)


def test_batchnorm_train_output_standardized():
    bn = BatchNorm(3)
    x = stream(3).standard_normal((8, 4, 4, 3)) * 5 + 2
    y = bn.forward(x)
    assert np.allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-8)
    var = x.var(axis=(0, 1, 2))
    assert np.allclose(y.var(axis=(0, 1, 2)), var / (var + 1e-5), atol=1e-8)


def test_batchnorm_running_stats_and_inference():
    bn = BatchNorm(1, momentum=0.9)
    x = stream(4).standard_normal((16, 2, 2, 1)) + 3.0
    bn.forward(x)
    assert np.allclose(bn.buffers["running_mean"], 0.1 * x.mean())
    assert np.allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var())
    y = bn.forward(x, train=False)
    expect = (x - bn.buffers["running_mean"]) / np.sqrt(bn.buffers["running_var"] + 1e-5)
    assert np.allclose(y, expect)


def test_batchnorm_needs_two_samples():
    with pytest.raises(ValueError):
        BatchNorm(1).forward(np.ones((1, 2, 2, 1)))


def test_batchnorm_gradients():
    g = stream(5)
    bn = BatchNorm(2)
    bn.params["gamma"][...] = [0.7, 1.3]
    bn.params["beta"][...] = [0.1, -0.2]
    x = g.standard_normal((4, 3, 3, 2))
    loss = projection(g.standard_normal(x.shape))
    assert grad_check(bn, x, loss) <= 1e-5
    assert grad_check(bn, x, loss, wrt_input=True) <= 1e-5


def test_prelu_values():
    act = PReLU(1, init=0.1)
    y = act.forward(np.array([[[[3.0]], [[-2.0]]]]).reshape(2, 1, 1, 1))
    assert y.ravel().tolist() == pytest.approx([3.0, -0.2])
    act.forward(np.full((1, 1, 1, 1), -2.0))
    act.backward(np.ones((1, 1, 1, 1)))
    assert act.grads["alpha"][0] == -2.0


def test_prelu_gradients():
    g = stream(6)
    act = PReLU(3)
    x = g.standard_normal((2, 3, 3, 3))
    loss = projection(g.standard_normal(x.shape))
    assert grad_check(act, x, loss) <= 1e-6
    assert grad_check(act, x, loss, wrt_input=True) <= 1e-6


def test_prelu_kink_is_skipped():
    act = PReLU(1)
    x = np.array([0.0, 1.0, -1.0, 0.5]).reshape(4, 1, 1, 1)
    # the zero entry flips sign under +-h and must be excluded
    assert grad_check(act, x, projection(np.ones_like(x)), n_coords=4, wrt_input=True) <= 1e-8


def test_dense_values():
    d = Dense(2, 2)
    d.params["w"][...] = np.eye(2)
    assert np.array_equal(d.forward(np.array([[1.5, -2.0]])), [[1.5, -2.0]])
    d.params["w"][...] = [[1.0, 2.0], [3.0, 4.0]]
    assert np.array_equal(d.forward(np.array([[1.0, 1.0]])), [[4.0, 6.0]])


def test_dense_gradients_with_l1():
    g = stream(7)
    d = Dense(6, 8, seed=2)
    x = g.standard_normal((3, 6))
    target = g.standard_normal((3, 1, 2, 4))

    def loss(out):
        val, gr = loss_l1(out.reshape(3, 1, 2, 4), target)
        return val, gr.reshape(out.shape)

    assert grad_check(d, x, loss) <= 1e-6
    assert grad_check(d, x, loss, wrt_input=True) <= 1e-6


def test_glorot_support_variance_and_seed():
    shape = (3, 3, 20, 30)
    w = glorot_uniform(shape, seed=1)
    fan_in, fan_out = 9 * 20, 9 * 30
    limit = np.sqrt(6 / (fan_in + fan_out))
    assert np.all(np.abs(w) <= limit)
    big = glorot_uniform((200, 500), seed=2)
    assert big.var() == pytest.approx(2 / 700, rel=0.05)
    assert np.array_equal(w, glorot_uniform(shape, seed=1))


# optimizer


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState()
    st_.m["w"] = np.array([0.5, 0.5])
    st_.v["w"] = np.array([0.0, 0.0])
    adam_step(p, {"w": np.zeros(2)}, st_)
    assert np.allclose(st_.m["w"], 0.45)
    # m/c1 != 0, so the parameter moves; with m = v = 0 it would not
    q = {"w": np.array([1.0])}
    adam_step(q, {"w": np.zeros(1)}, AdamState())
    assert q["w"][0] == 1.0


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([0.0, 0.0])}
    adam_step(p, {"w": np.array([3.0, -0.5])}, AdamState())
    assert np.allclose(p["w"], [-1e-3, 1e-3], rtol=1e-6)


def test_adam_two_steps_scalar_oracle():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    x, m, v = 0.3, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1)
        v = b2 * v + (1 - b2)
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    p = {"w": np.array([0.3])}
    s = AdamState()
    for _ in range(2):
        adam_step(p, {"w": np.array([1.0])}, s)
    assert abs(p["w"][0] - x) <= 1e-12


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step(p, {"w": np.array([1.0, np.nan])}, AdamState())
    assert np.array_equal(p["w"], [0.0, 0.0])


# losses


def test_l1_values():
    pred = np.zeros((1, 2, 2, 1))
    target = np.array([1.0, 2.0, 0.0, 2.0]).reshape(1, 2, 2, 1)
    assert loss_l1(pred, target)[0] == 9.0
    assert loss_l1(target, target)[0] == 0.0


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_l1_scales_quadratically(c, seed):
    g = stream(seed)
    p, t = g.standard_normal((2, 4, 4, 2)), g.standard_normal((2, 4, 4, 2))
    base = loss_l1(p, t)[0]
    assert loss_l1(t + c * (p - t), t)[0] == pytest.approx(c * c * base, rel=1e-10, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), m1=st.integers(1, 5))
def test_l2_with_zero_alpha_is_l1(seed, m1):
    g = stream(seed)
    p, t = g.standard_normal((2, 6, 6, 2)), g.standard_normal((2, 6, 6, 2))
    a, ga = loss_l2(p, t, m1, alpha=0.0)
    b, gb = loss_l1(p, t)
    assert a == b and np.array_equal(ga, gb)


def test_seam_penalty_constant_matrix():
    assert seam_penalty(np.full((1, 4, 4, 2), 3.0), 2)[0] == 0.0


def test_l2_seam_example():
    # F11c = 0, F12 (true) = 1, F21c = 2, F22c = 3
    pred = np.array([[0.0, 9.0], [2.0, 3.0]]).reshape(1, 2, 2, 1)
    target = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 2, 2, 1)
    l1 = loss_l1(pred, target)[0]
    assert loss_l2(pred, target, 1, alpha=0.5)[0] == pytest.approx(l1 + 0.5 * 10)


# network and training


def test_network_shapes():
    net = Network(NetworkSpec((8, 8, 2), 16, DESK_CHANNELS))
    y = net.forward(stream(0).standard_normal((3, 8, 8, 2)))
    assert y.shape == (3, 16, 16, 2)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 8, 7, 2)))


def test_desk_network_gradients():
    g = stream(8)
    net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS), seed=3)
    x = g.standard_normal((4, 4, 4, 2))
    t = g.standard_normal((4, 8, 8, 2))
    loss = make_loss("l2", 4, 1e-3)
    fn = lambda out: loss(out, t)  # noqa: E731
    assert grad_check(net, x, fn, n_coords=150) <= 1e-4
    assert grad_check(net, x, fn, n_coords=80, wrt_input=True) <= 1e-4


def _toy(n=8, seed=0):
    g = stream(seed)
    return g.standard_normal((n, 4, 4, 2)), g.standard_normal((n, 8, 8, 2))


def test_grad_check_detects_wrong_gradient():
    g = stream(9)
    d = Dense(5, 3, seed=1)
    x = g.standard_normal((4, 5))
    target = g.standard_normal((4, 3))
    honest = projection(target)
    assert grad_check(d, x, honest) <= 1e-6
    # report a gradient 0.1% too large: the loss is sum(out * t) but we claim 1.001 t
    skewed = lambda out: (float(np.sum(out * target)), 1.001 * target)  # noqa: E731
    assert grad_check(d, x, skewed) == pytest.approx(1e-3, rel=0.05)


def test_training_overfits_eight_msr_samples():
    from msrcomplete.retrieval import generate_dataset, make_pairs

    pairs = make_pairs(generate_dataset(8, 5.0, 32, master_seed=0), 16)
    net = Network(NetworkSpec(pairs.X.shape[1:], 32, DESK_CHANNELS), seed=0)
    res = train(net, pairs.X, pairs.Y, epochs=50, batch_size=2, loss=make_loss("l2", 16), seed=0)
    assert res.history[-1] < 0.1 * res.initial_loss


def test_training_is_reproducible():
    X, Y = _toy()
    runs = []
    for _ in range(2):
        net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS), seed=1)
        res = train(net, X, Y, epochs=3, batch_size=4, loss=make_loss("l1"), seed=2)
        runs.append((res.history, net.state_dict()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_zero_epochs_leaves_network_unchanged():
    X, Y = _toy()
    net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS))
    before = net.state_dict()
    train(net, X, Y, epochs=0, batch_size=4, loss=make_loss("l1"))
    after = net.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_failure_restores_state():
    X, Y = _toy()
    Y[3, 0, 0, 0] = np.inf
    net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS))
    before = net.state_dict()
    with pytest.raises(TrainingError) as info:
        train(net, X, Y, epochs=2, batch_size=8, loss=make_loss("l1"))
    after = net.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert info.value.last_good_state is not None


def test_checkpoint_round_trip(tmp_path):
    net = Network(NetworkSpec((4, 4, 2), 8, DESK_CHANNELS), seed=4)
    X, Y = _toy()
    train(net, X, Y, epochs=1, batch_size=4, loss=make_loss("l1"))
    c = ckpt.Checkpoint("subsampled", 8, 4, (0, 2), (1, 3), ckpt.network_tensors(net))
    path = tmp_path / "m.msrn"
    ckpt.save(c, path)
    back = ckpt.load(path)
    assert (back.mode, back.two_m, back.m1, back.rows, back.cols) == ("subsampled", 8, 4, (0, 2), (1, 3))
    net2 = ckpt.network_from_tensors(back.tensors, 8)
    assert np.array_equal(net.predict(X), net2.predict(X))
    assert path.read_bytes()[:4] == b"MSRN"


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ValueError):
        ckpt.from_bytes(b"NOPE" + bytes(40))
