"""A small convolutional network implemented directly on numpy arrays.

Three 3x3 convolutions (strides 1, 1, 2; zero-padded "same" style with
ceil division for the strided layer), 2x2/2 max pooling after the first
two, ReLU everywhere, then two fully-connected layers with inverted
dropout on the hidden activation. Forward, backward, and the training
loop are written out explicitly so gradients can be verified against
finite differences; everything runs in float64.

Layout is NHWC. Parameters live in a dict keyed by PARAM_ORDER names;
convolution weights are (kh, kw, c_in, c_out), fully-connected weights
(in, out).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SkelimgError


class CheckpointError(SkelimgError):
    pass


PARAM_ORDER = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "conv3_w",
    "conv3_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
)


@dataclass(frozen=True)
class CnnConfig:
    input_shape: Tuple[int, int, int]  # (H, W, C)
    num_classes: int
    conv_filters: Tuple[int, int, int] = (32, 64, 128)
    kernel: int = 3
    conv_strides: Tuple[int, int, int] = (1, 1, 2)
    hidden_units: int = 256
    dropout_rate: float = 0.5
    learning_rate: float = 0.001
    batch_size: int = 1000
    epochs: int = 50
    seed: int = 0
    momentum: float = 0.0  # optional extension, off by default

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SkelimgError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.num_classes < 2:
            raise SkelimgError("num_classes must be >= 2")
        if min(self.conv_filters) < 1 or self.hidden_units < 1:
            raise SkelimgError("layer widths must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise SkelimgError("batch_size must be >= 1 and epochs >= 0")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _same_pad(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """(out_size, pad_before, pad_after) for same-style padding."""
    out = _ceil_div(size, stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


@dataclass(frozen=True)
class LayerPlan:
    """Spatial bookkeeping: per-stage (H, W) sizes and conv paddings."""

    conv_out: Tuple[Tuple[int, int], ...]  # after each conv
    pool_out: Tuple[Tuple[int, int], ...]  # after pool 1 and 2
    pads: Tuple[Tuple[Tuple[int, int], Tuple[int, int]], ...]  # ((ph0,ph1),(pw0,pw1))
    flat_dim: int


def plan_layers(cfg: CnnConfig) -> LayerPlan:
    h, w, _ = cfg.input_shape
    conv_out: List[Tuple[int, int]] = []
    pool_out: List[Tuple[int, int]] = []
    pads = []
    for stage in range(3):
        stride = cfg.conv_strides[stage]
        oh, ph0, ph1 = _same_pad(h, cfg.kernel, stride)
        ow, pw0, pw1 = _same_pad(w, cfg.kernel, stride)
        pads.append(((ph0, ph1), (pw0, pw1)))
        conv_out.append((oh, ow))
        h, w = oh, ow
        if stage < 2:
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise SkelimgError(
                    f"inconsistent config: spatial size collapses to {h}x{w} "
                    f"after pool {stage + 1}"
                )
            pool_out.append((h, w))
    flat = h * w * cfg.conv_filters[2]
    return LayerPlan(
        conv_out=tuple(conv_out),
        pool_out=tuple(pool_out),
        pads=tuple(pads),
        flat_dim=flat,
    )


@dataclass
class CnnModel:
    config: CnnConfig
    params: Dict[str, np.ndarray]
    plan: LayerPlan
    dropout_rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )

    @property
    def flat_dim(self) -> int:
        return self.plan.flat_dim

    def copy_with_params(self, params: Dict[str, np.ndarray]) -> "CnnModel":
        return CnnModel(
            config=self.config,
            params=params,
            plan=self.plan,
            dropout_rng=self.dropout_rng,
        )


def init_model(cfg: CnnConfig) -> CnnModel:
    """He-style init: uniform(-b, b) with b = sqrt(6 / fan_in); zero biases."""
    plan = plan_layers(cfg)
    rng = np.random.default_rng(cfg.seed)
    k = cfg.kernel
    channels = (cfg.input_shape[2],) + cfg.conv_filters[:2]
    params: Dict[str, np.ndarray] = {}
    for i in range(3):
        fan_in = k * k * channels[i]
        bound = np.sqrt(6.0 / fan_in)
        params[f"conv{i + 1}_w"] = rng.uniform(
            -bound, bound, size=(k, k, channels[i], cfg.conv_filters[i])
        )
        params[f"conv{i + 1}_b"] = np.zeros(cfg.conv_filters[i])
    fc_dims = ((plan.flat_dim, cfg.hidden_units), (cfg.hidden_units, cfg.num_classes))
    for i, (d_in, d_out) in enumerate(fc_dims):
        bound = np.sqrt(6.0 / d_in)
        params[f"fc{i + 1}_w"] = rng.uniform(-bound, bound, size=(d_in, d_out))
        params[f"fc{i + 1}_b"] = np.zeros(d_out)
    dropout_rng = np.random.default_rng([cfg.seed, 0xD0])
    return CnnModel(config=cfg, params=params, plan=plan, dropout_rng=dropout_rng)


def _conv_forward(x, w, b, stride, pads):
    (ph0, ph1), (pw0, pw1) = pads
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    kh, kw = w.shape[0], w.shape[1]
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (N, oh, ow, C, kh, kw) -> (N, oh, ow, kh, kw, C)
    windows = windows.transpose(0, 1, 2, 4, 5, 3)
    n, oh, ow = windows.shape[:3]
    cols = windows.reshape(n * oh * ow, -1)
    wmat = w.reshape(-1, w.shape[3])
    out = (cols @ wmat + b).reshape(n, oh, ow, w.shape[3])
    cache = (cols, x.shape, xp.shape, stride, pads, w.shape)
    return out, cache


def _conv_backward(dout, w, cache, need_dx=True):
    cols, x_shape, xp_shape, stride, pads, w_shape = cache
    kh, kw, c_in, c_out = w_shape
    n, oh, ow, _ = dout.shape
    dmat = dout.reshape(n * oh * ow, c_out)
    dw = (cols.T @ dmat).reshape(w_shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ w.reshape(-1, c_out).T).reshape(n, oh, ow, kh, kw, c_in)
    dxp = np.zeros(xp_shape)
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di : di + stride * oh : stride, dj : dj + stride * ow : stride, :] += (
                dcols[:, :, :, di, dj, :]
            )
    (ph0, _), (pw0, _) = pads
    dx = dxp[:, ph0 : ph0 + x_shape[1], pw0 : pw0 + x_shape[2], :]
    return dx, dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    xc = x[:, : oh * 2, : ow * 2, :]
    windows = (
        xc.reshape(n, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, oh, ow, c, 4)
    )
    idx = windows.argmax(axis=4)  # first-index tie break, deterministic
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
    return out, (x.shape, idx)


def _pool_backward(dout, cache):
    (n, h, w, c), idx = cache
    oh, ow = h // 2, w // 2
    dwin = np.zeros((n, oh, ow, c, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=4)
    dx = np.zeros((n, h, w, c))
    dx[:, : oh * 2, : ow * 2, :] = (
        dwin.reshape(n, oh, ow, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, oh * 2, ow * 2, c)
    )
    return dx


def _forward_full(model: CnnModel, batch, want_cache: bool, apply_dropout: bool):
    cfg = model.config
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise SkelimgError(
            f"batch shape {x.shape} does not match input shape {cfg.input_shape}"
        )
    p = model.params
    cache: Dict[str, object] = {}

    z1, c1 = _conv_forward(x, p["conv1_w"], p["conv1_b"], cfg.conv_strides[0], model.plan.pads[0])
    a1 = np.maximum(z1, 0.0)
    p1, pc1 = _pool_forward(a1)

    z2, c2 = _conv_forward(p1, p["conv2_w"], p["conv2_b"], cfg.conv_strides[1], model.plan.pads[1])
    a2 = np.maximum(z2, 0.0)
    p2, pc2 = _pool_forward(a2)

    z3, c3 = _conv_forward(p2, p["conv3_w"], p["conv3_b"], cfg.conv_strides[2], model.plan.pads[2])
    a3 = np.maximum(z3, 0.0)

    flat = a3.reshape(x.shape[0], -1)
    h = flat @ p["fc1_w"] + p["fc1_b"]
    hr = np.maximum(h, 0.0)

    mask = None
    if apply_dropout and cfg.dropout_rate > 0.0:
        keep = model.dropout_rng.random(hr.shape) >= cfg.dropout_rate
        mask = keep / (1.0 - cfg.dropout_rate)
        hd = hr * mask
    else:
        hd = hr
    logits = hd @ p["fc2_w"] + p["fc2_b"]

    if want_cache:
        cache.update(
            conv=(c1, c2, c3),
            pre_relu=(z1, z2, z3),
            pool=(pc1, pc2),
            flat=flat,
            h=h,
            hd=hd,
            mask=mask,
            a3_shape=a3.shape,
        )
        return logits, cache
    return logits, None


def forward(model: CnnModel, batch, training: bool = False):
    """Logits for a batch; in training mode also returns the activation
    cache needed by backward (dropout drawn from the model's rng)."""
    logits, cache = _forward_full(model, batch, want_cache=training, apply_dropout=training)
    if training:
        return logits, cache
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]):
    """Mean negative log-likelihood and its gradient wrt the logits."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.shape[0] != labels.shape[0]:
        raise SkelimgError("logits and labels disagree on batch size")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward(model: CnnModel, cache, dlogits) -> Dict[str, np.ndarray]:
    """Parameter gradients from a training-mode forward cache."""
    if cache is None:
        raise SkelimgError("missing cache: run forward in training mode first")
    p = model.params
    grads: Dict[str, np.ndarray] = {}

    grads["fc2_w"] = cache["hd"].T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    dhd = dlogits @ p["fc2_w"].T
    dhr = dhd * cache["mask"] if cache["mask"] is not None else dhd
    dh = dhr * (cache["h"] > 0.0)
    grads["fc1_w"] = cache["flat"].T @ dh
    grads["fc1_b"] = dh.sum(axis=0)
    dflat = dh @ p["fc1_w"].T

    da3 = dflat.reshape(cache["a3_shape"])
    z1, z2, z3 = cache["pre_relu"]
    c1, c2, c3 = cache["conv"]
    pc1, pc2 = cache["pool"]

    dz3 = da3 * (z3 > 0.0)
    dp2, grads["conv3_w"], grads["conv3_b"] = _conv_backward(dz3, p["conv3_w"], c3)
    da2 = _pool_backward(dp2, pc2)
    dz2 = da2 * (z2 > 0.0)
    dp1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(dz2, p["conv2_w"], c2)
    da1 = _pool_backward(dp1, pc1)
    dz1 = da1 * (z1 > 0.0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        dz1, p["conv1_w"], c1, need_dx=False
    )
    return grads


def gradient_check(
    model: CnnModel,
    batch,
    labels,
    epsilon: float = 1e-5,
    samples_per_tensor: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over randomly sampled parameters (dropout disabled).

    The relative error denominator is floored at 1e-6 so parameters with
    vanishing influence do not divide finite-difference noise by zero.
    """
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    rng = np.random.default_rng(seed)

    logits, cache = _forward_full(model, x, want_cache=True, apply_dropout=False)
    _, dlogits = softmax_cross_entropy(logits, labels)
    analytic = backward(model, cache, dlogits)

    def loss_at() -> float:
        out, _ = _forward_full(model, x, want_cache=False, apply_dropout=False)
        loss, _ = softmax_cross_entropy(out, labels)
        return loss

    worst = 0.0
    for name in PARAM_ORDER:
        tensor = model.params[name]
        count = min(samples_per_tensor, tensor.size)
        flat_idx = rng.choice(tensor.size, size=count, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, tensor.shape)
            original = tensor[idx]
            tensor[idx] = original + epsilon
            loss_plus = loss_at()
            tensor[idx] = original - epsilon
            loss_minus = loss_at()
            tensor[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def sgd_step(model: CnnModel, grads: Dict[str, np.ndarray], lr: float) -> CnnModel:
    """Plain gradient descent: w <- w - lr * g for every parameter."""
    new_params = {
        name: model.params[name] - lr * grads[name] for name in PARAM_ORDER
    }
    return model.copy_with_params(new_params)


@dataclass
class TrainHistory:
    loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[Optional[float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)


def history_csv(history: TrainHistory) -> str:
    lines = ["epoch,loss,train_acc,val_acc"]
    for i, (loss, acc, val) in enumerate(
        zip(history.loss, history.train_acc, history.val_acc), start=1
    ):
        val_text = "" if val is None else f"{val:.6f}"
        lines.append(f"{i},{loss:.6f},{acc:.6f},{val_text}")
    return "\n".join(lines) + "\n"


def train(
    cfg: CnnConfig,
    train_set: Tuple[np.ndarray, np.ndarray],
    val_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[CnnModel, TrainHistory]:
    """Mini-batch SGD with seed-deterministic shuffling and dropout.

    The effective batch size is capped at the dataset size. Epoch loss is
    the sample-weighted mean so it is invariant to the batch partition.
    """
    x, y = train_set
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    n = x.shape[0]
    if n == 0:
        raise SkelimgError("empty training set")

    model = init_model(cfg)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5F])
    batch = min(cfg.batch_size, n)
    velocity = None
    if cfg.momentum > 0.0:
        velocity = {name: np.zeros_like(model.params[name]) for name in PARAM_ORDER}

    history = TrainHistory()
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, batch):
            take = order[start : start + batch]
            xb, yb = x[take], y[take]
            logits, cache = forward(model, xb, training=True)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            grads = backward(model, cache, dlogits)
            if velocity is not None:
                for name in PARAM_ORDER:
                    velocity[name] = cfg.momentum * velocity[name] + grads[name]
                grads = velocity
            model = sgd_step(model, grads, cfg.learning_rate)
            total_loss += loss * len(take)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        history.loss.append(total_loss / n)
        history.train_acc.append(correct / n)
        if val_set is not None:
            scores = predict_scores(model, val_set[0])
            val_acc = float(np.mean(np.argmax(scores, axis=1) == val_set[1]))
            history.val_acc.append(val_acc)
        else:
            history.val_acc.append(None)
    return model, history


def predict_scores(model: CnnModel, batch, chunk: int = 32) -> np.ndarray:
    """Softmax probabilities with dropout disabled; rows sum to 1."""
    x = np.asarray(batch, dtype=np.float64)
    outputs = []
    for start in range(0, x.shape[0], chunk):
        logits = forward(model, x[start : start + chunk], training=False)
        outputs.append(softmax(logits))
    return np.concatenate(outputs, axis=0)


CHECKPOINT_MAGIC = "skelcnn"
CHECKPOINT_VERSION = "v1"


def save_model(model: CnnModel, extras: Optional[Dict[str, str]] = None) -> bytes:
    """ASCII key-value header, then float64 little-endian parameter
    payloads in PARAM_ORDER."""
    cfg = model.config
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        "input_shape " + " ".join(str(v) for v in cfg.input_shape),
        f"num_classes {cfg.num_classes}",
        "conv_filters " + " ".join(str(v) for v in cfg.conv_filters),
        f"kernel {cfg.kernel}",
        "conv_strides " + " ".join(str(v) for v in cfg.conv_strides),
        f"hidden_units {cfg.hidden_units}",
        f"dropout_rate {cfg.dropout_rate!r}",
        f"learning_rate {cfg.learning_rate!r}",
        f"batch_size {cfg.batch_size}",
        f"epochs {cfg.epochs}",
        f"seed {cfg.seed}",
        f"momentum {cfg.momentum!r}",
    ]
    for key, value in (extras or {}).items():
        if any(ch.isspace() for ch in key):
            raise CheckpointError(f"extras key may not contain whitespace: {key!r}")
        lines.append(f"extra.{key} {value}")
    lines.append("payload")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(
        model.params[name].astype("<f8").tobytes(order="C") for name in PARAM_ORDER
    )
    return header + payload


def load_checkpoint(data: bytes) -> Tuple[CnnModel, Dict[str, str]]:
    marker = b"\npayload\n"
    cut = data.find(marker)
    if cut < 0:
        raise CheckpointError("corrupt checkpoint: missing payload marker")
    try:
        header_lines = data[:cut].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt checkpoint: non-ASCII header") from exc
    if not header_lines or header_lines[0] != f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}":
        raise CheckpointError("corrupt checkpoint: bad magic line")
    fields: Dict[str, str] = {}
    for line in header_lines[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    extras = {
        key[len("extra.") :]: value
        for key, value in fields.items()
        if key.startswith("extra.")
    }
    try:
        cfg = CnnConfig(
            input_shape=tuple(int(v) for v in fields["input_shape"].split()),
            num_classes=int(fields["num_classes"]),
            conv_filters=tuple(int(v) for v in fields["conv_filters"].split()),
            kernel=int(fields["kernel"]),
            conv_strides=tuple(int(v) for v in fields["conv_strides"].split()),
            hidden_units=int(fields["hidden_units"]),
            dropout_rate=float(fields["dropout_rate"]),
            learning_rate=float(fields["learning_rate"]),
            batch_size=int(fields["batch_size"]),
            epochs=int(fields["epochs"]),
            seed=int(fields["seed"]),
            momentum=float(fields.get("momentum", "0.0")),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: bad header field ({exc})") from None

    model = init_model(cfg)
    payload = data[cut + len(marker) :]
    expected = sum(model.params[name].size for name in PARAM_ORDER) * 8
    if len(payload) != expected:
        raise CheckpointError(
            f"corrupt checkpoint: payload {len(payload)} bytes, expected {expected}"
        )
    offset = 0
    params: Dict[str, np.ndarray] = {}
    for name in PARAM_ORDER:
        shape = model.params[name].shape
        size = model.params[name].size
        chunk = payload[offset : offset + size * 8]
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += size * 8
    return model.copy_with_params(params), extras


def load_model(data: bytes) -> CnnModel:
    return load_checkpoint(data)[0]
