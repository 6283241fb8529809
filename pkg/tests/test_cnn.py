import numpy as np
import pytest

from skelimg.cnn import (
    PARAM_ORDER,
    CheckpointError,
    CnnConfig,
    backward,
    forward,
    gradient_check,
    history_csv,
    init_model,
    load_checkpoint,
    load_model,
    plan_layers,
    predict_scores,
    save_model,
    sgd_step,
    softmax_cross_entropy,
    train,
)
from skelimg.cnn import _conv_forward
from skelimg.core import SkelimgError

TINY = CnnConfig(
    input_shape=(8, 10, 3),
    num_classes=3,
    conv_filters=(2, 2, 2),
    hidden_units=4,
    dropout_rate=0.5,
    seed=3,
)


def _randomize_biases(model, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    for name in PARAM_ORDER:
        if name.endswith("_b"):
            model.params[name] += rng.normal(0.0, scale, size=model.params[name].shape)
    return model


# --------------------------------------------------------------- shapes

def test_layer_plan_hand_traced_for_default_input():
    # 49x100 -> conv s1 (same) -> 49x100 -> pool -> 24x50 -> conv s1 ->
    # 24x50 -> pool -> 12x25 -> conv s2 (ceil) -> 6x13.
    cfg = CnnConfig(input_shape=(49, 100, 12), num_classes=60)
    plan = plan_layers(cfg)
    assert plan.conv_out == ((49, 100), (24, 50), (6, 13))
    assert plan.pool_out == ((24, 50), (12, 25))
    assert plan.flat_dim == 6 * 13 * 128
    model = init_model(cfg)
    assert model.flat_dim == 9984
    assert model.params["fc1_w"].shape == (9984, 256)


def test_init_spatial_collapse_is_an_error():
    with pytest.raises(SkelimgError, match="collapses"):
        init_model(CnnConfig(input_shape=(2, 2, 1), num_classes=2))


def test_init_same_seed_same_weights():
    a = init_model(TINY)
    b = init_model(TINY)
    for name in PARAM_ORDER:
        assert np.array_equal(a.params[name], b.params[name])


def test_init_biases_zero_weights_bounded():
    model = init_model(TINY)
    for name in PARAM_ORDER:
        if name.endswith("_b"):
            assert not model.params[name].any()
    bound = np.sqrt(6.0 / (3 * 3 * 3))
    w = model.params["conv1_w"]
    assert np.all(np.abs(w) <= bound) and w.std() > 0


# -------------------------------------------------------------- forward

def test_zero_weights_give_zero_logits():
    model = init_model(TINY)
    for name in PARAM_ORDER:
        model.params[name][...] = 0.0
    x = np.random.default_rng(0).normal(size=(2, 8, 10, 3))
    logits = forward(model, x)
    assert not logits.any()


def test_eval_forward_is_deterministic():
    model = init_model(TINY)
    x = np.random.default_rng(1).normal(size=(3, 8, 10, 3))
    assert np.array_equal(forward(model, x), forward(model, x))


def test_forward_shape_mismatch():
    model = init_model(TINY)
    with pytest.raises(SkelimgError, match="shape"):
        forward(model, np.zeros((2, 8, 10, 4)))


def _conv_oracle(x, w, b, stride, pads):
    """Scalar convolution: brute-force dot products over padded input."""
    (ph0, ph1), (pw0, pw1) = pads
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    n = x.shape[0]
    kh, kw, c_in, c_out = w.shape
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((n, oh, ow, c_out))
    for s in range(n):
        for i in range(oh):
            for j in range(ow):
                patch = xp[s, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
                for f in range(c_out):
                    out[s, i, j, f] = np.sum(patch * w[:, :, :, f]) + b[f]
    return out


def test_conv_forward_matches_brute_force():
    rng = np.random.default_rng(2)
    for stride, size in [(1, (5, 5)), (2, (5, 7)), (2, (6, 6))]:
        x = rng.normal(size=(2, size[0], size[1], 3))
        w = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        from skelimg.cnn import _same_pad

        _, ph0, ph1 = _same_pad(size[0], 3, stride)
        _, pw0, pw1 = _same_pad(size[1], 3, stride)
        pads = ((ph0, ph1), (pw0, pw1))
        got, _ = _conv_forward(x, w, b, stride, pads)
        want = _conv_oracle(x, w, b, stride, pads)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_constant_image_center_value():
    # 3x3 kernel over a 5x5 constant image: away from the border every
    # output is sum(w) * value + bias.
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 3, 1, 1))
    b = np.array([0.25])
    x = np.full((1, 5, 5, 1), 2.0)
    out, _ = _conv_forward(x, w, b, 1, ((1, 1), (1, 1)))
    expected_center = 2.0 * w.sum() + 0.25
    assert np.allclose(out[0, 1:4, 1:4, 0], expected_center)


# ----------------------------------------------------------------- loss

def test_uniform_logits_loss_is_log_k():
    logits = np.zeros((5, 4))
    loss, _ = softmax_cross_entropy(logits, [0, 1, 2, 3, 0])
    assert loss == pytest.approx(np.log(4.0), rel=1e-12)


def test_huge_margin_loss_goes_to_zero():
    logits = np.zeros((1, 3))
    logits[0, 1] = 50.0
    loss, _ = softmax_cross_entropy(logits, [1])
    assert loss < 1e-20


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    _, grad = softmax_cross_entropy(logits, labels)
    eps = 1e-6
    for i in range(6):
        for k in range(5):
            up = logits.copy()
            up[i, k] += eps
            down = logits.copy()
            down[i, k] -= eps
            num = (
                softmax_cross_entropy(up, labels)[0]
                - softmax_cross_entropy(down, labels)[0]
            ) / (2 * eps)
            assert abs(grad[i, k] - num) <= 1e-6 * max(1.0, abs(num))


# ------------------------------------------------------------- backward

def test_zero_upstream_gradient_gives_zero_param_gradients():
    model = init_model(TINY)
    x = np.random.default_rng(5).normal(size=(2, 8, 10, 3))
    _, cache = forward(model, x, training=True)
    grads = backward(model, cache, np.zeros((2, 3)))
    for name in PARAM_ORDER:
        assert not grads[name].any()


def test_backward_without_cache_raises():
    model = init_model(TINY)
    with pytest.raises(SkelimgError, match="cache"):
        backward(model, None, np.zeros((2, 3)))


def test_backward_deterministic_under_fixed_dropout_seed():
    def run():
        model = init_model(TINY)
        x = np.random.default_rng(6).normal(size=(2, 8, 10, 3))
        logits, cache = forward(model, x, training=True)
        _, dlogits = softmax_cross_entropy(logits, [0, 1])
        return backward(model, cache, dlogits)

    g1, g2 = run(), run()
    for name in PARAM_ORDER:
        assert np.array_equal(g1[name], g2[name])


# ------------------------------------------------------- gradient check

def test_gradient_check_tiny_model():
    model = _randomize_biases(init_model(TINY), seed=1)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 8, 10, 3))
    y = rng.integers(0, 3, size=4)
    assert gradient_check(model, x, y, epsilon=1e-5) < 1e-4


def test_gradient_check_zero_input_exercises_biases():
    model = _randomize_biases(init_model(TINY), seed=2)
    y = np.array([0, 1, 2, 1])
    assert gradient_check(model, np.zeros((4, 8, 10, 3)), y, epsilon=1e-5) < 1e-4


def test_gradient_check_deterministic():
    model = _randomize_biases(init_model(TINY), seed=3)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 8, 10, 3))
    y = np.array([0, 2])
    a = gradient_check(model, x, y, seed=5)
    b = gradient_check(model, x, y, seed=5)
    assert a == b


# ------------------------------------------------------------ optimizer

def test_sgd_zero_lr_is_identity():
    model = init_model(TINY)
    grads = {name: np.ones_like(model.params[name]) for name in PARAM_ORDER}
    out = sgd_step(model, grads, 0.0)
    for name in PARAM_ORDER:
        assert np.array_equal(out.params[name], model.params[name])


def test_sgd_single_parameter_update():
    model = init_model(TINY)
    model.params["fc2_b"][...] = 0.0
    model.params["fc2_b"][0] = 1.0
    grads = {name: np.zeros_like(model.params[name]) for name in PARAM_ORDER}
    grads["fc2_b"][0] = 2.0
    out = sgd_step(model, grads, 0.1)
    assert out.params["fc2_b"][0] == pytest.approx(0.8, rel=1e-15)


def test_sgd_two_half_steps_equal_one_step():
    model = init_model(TINY)
    rng = np.random.default_rng(9)
    grads = {
        name: rng.normal(size=model.params[name].shape) for name in PARAM_ORDER
    }
    one = sgd_step(model, grads, 0.2)
    two = sgd_step(sgd_step(model, grads, 0.1), grads, 0.1)
    for name in PARAM_ORDER:
        assert np.allclose(one.params[name], two.params[name], rtol=1e-12, atol=1e-15)


# ------------------------------------------------------------- training

def _separable_batch(n_per_class=4, shape=(8, 10, 3), seed=0):
    """Two classes distinguished by overall brightness; separable even
    through the aggressive spatial downsampling of the tiny net."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label in range(2):
        for _ in range(n_per_class):
            img = rng.uniform(0.0, 0.1, size=shape) + 0.9 * label
            xs.append(img)
            ys.append(label)
    return np.stack(xs), np.array(ys)


def test_train_overfits_eight_samples():
    x, y = _separable_batch(n_per_class=4)
    cfg = CnnConfig(
        input_shape=(8, 10, 3),
        num_classes=2,
        conv_filters=(2, 2, 2),
        hidden_units=4,
        dropout_rate=0.0,
        learning_rate=0.01,
        batch_size=8,
        epochs=200,
        seed=0,
    )
    model, history = train(cfg, (x, y))
    assert len(history) == 200
    assert history.train_acc[-1] == 1.0
    scores = predict_scores(model, x)
    assert np.array_equal(np.argmax(scores, axis=1), y)


def test_train_deterministic_given_seed():
    x, y = _separable_batch(n_per_class=2)
    cfg = CnnConfig(
        input_shape=(8, 10, 3),
        num_classes=2,
        conv_filters=(2, 2, 2),
        hidden_units=4,
        dropout_rate=0.5,
        learning_rate=0.01,
        batch_size=2,
        epochs=4,
        seed=11,
    )
    m1, h1 = train(cfg, (x, y))
    m2, h2 = train(cfg, (x, y))
    assert h1.loss == h2.loss and h1.train_acc == h2.train_acc
    for name in PARAM_ORDER:
        assert np.array_equal(m1.params[name], m2.params[name])


def test_train_zero_lr_keeps_loss_constant():
    x, y = _separable_batch(n_per_class=2)
    cfg = CnnConfig(
        input_shape=(8, 10, 3),
        num_classes=2,
        conv_filters=(2, 2, 2),
        hidden_units=4,
        dropout_rate=0.0,
        learning_rate=0.0,
        batch_size=3,
        epochs=5,
        seed=0,
    )
    _, history = train(cfg, (x, y))
    assert max(history.loss) - min(history.loss) < 1e-12


def test_train_loss_decreases_on_separable_data():
    x, y = _separable_batch(n_per_class=8, seed=1)
    cfg = CnnConfig(
        input_shape=(8, 10, 3),
        num_classes=2,
        conv_filters=(2, 2, 2),
        hidden_units=4,
        dropout_rate=0.0,
        learning_rate=0.001,
        batch_size=16,
        epochs=10,
        seed=2,
    )
    _, history = train(cfg, (x, y))
    drops = sum(1 for a, b in zip(history.loss, history.loss[1:]) if b <= a)
    assert drops >= 8


def test_train_rejects_empty_set():
    cfg = CnnConfig(input_shape=(8, 10, 3), num_classes=2, conv_filters=(2, 2, 2), hidden_units=4)
    with pytest.raises(SkelimgError, match="empty"):
        train(cfg, (np.zeros((0, 8, 10, 3)), np.zeros(0, dtype=int)))


def test_train_with_validation_history():
    x, y = _separable_batch(n_per_class=2)
    cfg = CnnConfig(
        input_shape=(8, 10, 3),
        num_classes=2,
        conv_filters=(2, 2, 2),
        hidden_units=4,
        dropout_rate=0.0,
        learning_rate=0.01,
        batch_size=4,
        epochs=3,
        seed=0,
    )
    _, history = train(cfg, (x, y), val_set=(x, y))
    assert all(v is not None for v in history.val_acc)
    text = history_csv(history)
    assert text.startswith("epoch,loss,train_acc,val_acc\n")
    assert len(text.strip().splitlines()) == 4


# ------------------------------------------------------------ inference

def test_predict_scores_rows_sum_to_one():
    model = init_model(TINY)
    x = np.random.default_rng(10).normal(size=(7, 8, 10, 3))
    scores = predict_scores(model, x, chunk=3)
    assert np.all(np.abs(scores.sum(axis=1) - 1.0) < 1e-6)
    assert np.all(scores >= 0.0)


def test_predict_scores_argmax_matches_logits():
    model = init_model(TINY)
    x = np.random.default_rng(11).normal(size=(5, 8, 10, 3))
    logits = forward(model, x)
    scores = predict_scores(model, x)
    assert np.array_equal(np.argmax(scores, axis=1), np.argmax(logits, axis=1))


def test_uniform_logits_give_uniform_probabilities():
    model = init_model(TINY)
    for name in PARAM_ORDER:
        model.params[name][...] = 0.0
    scores = predict_scores(model, np.zeros((2, 8, 10, 3)))
    assert np.allclose(scores, 1.0 / 3.0, atol=1e-12)


def test_dropout_only_active_in_training():
    model = init_model(TINY)
    # Push all hidden activations positive so every mask bit is visible.
    model.params["fc1_b"][...] = 5.0
    x = np.random.default_rng(12).normal(size=(2, 8, 10, 3))
    eval_logits = forward(model, x)
    draws = [forward(model, x, training=True)[0] for _ in range(5)]
    distinct = {arr.tobytes() for arr in draws}
    assert len(distinct) > 1  # fresh masks per training pass
    assert np.array_equal(eval_logits, forward(model, x))


# ---------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bitwise():
    model = init_model(TINY)
    rng = np.random.default_rng(13)
    for name in PARAM_ORDER:
        model.params[name] += rng.normal(size=model.params[name].shape)
    blob = save_model(model, extras={"repr": "tsrji_stacked"})
    back, extras = load_checkpoint(blob)
    assert extras == {"repr": "tsrji_stacked"}
    assert back.config == model.config
    for name in PARAM_ORDER:
        assert np.array_equal(back.params[name], model.params[name])


def test_checkpoint_truncated_payload():
    blob = save_model(init_model(TINY))
    with pytest.raises(CheckpointError, match="corrupt"):
        load_model(blob[:-16])


def test_checkpoint_bad_magic():
    blob = save_model(init_model(TINY))
    with pytest.raises(CheckpointError, match="corrupt"):
        load_model(b"nonsense" + blob)


def test_checkpoint_header_payload_mismatch():
    blob = save_model(init_model(TINY))
    # Double the payload: header no longer matches.
    marker = b"\npayload\n"
    cut = blob.find(marker) + len(marker)
    with pytest.raises(CheckpointError, match="corrupt"):
        load_model(blob + blob[cut : cut + 64])


def test_config_validation():
    with pytest.raises(SkelimgError):
        CnnConfig(input_shape=(8, 10, 3), num_classes=2, dropout_rate=1.0)
    with pytest.raises(SkelimgError):
        CnnConfig(input_shape=(8, 10, 3), num_classes=1)
