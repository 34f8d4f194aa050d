"""A tiny convolutional autoencoder written directly in numpy.

Layers are ``conv3x3 (same, zero padding) -> activation -> resample`` with
resample one of ``none``, ``maxpool2`` or ``upsample2`` (nearest neighbour).
All arithmetic is float64 so gradients can be checked against central
differences. The public functions take and return (batch, channels, height,
width) tensors, or (batch, height, width) for single-channel images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "EndToEndModel",
    "NeuralPairModel",
    "ConvNetSpec",
    "Layer",
    "TrainConfig",
    "adam_init",
    "adam_step",
    "count_params",
    "decode_batch",
    "encode_batch",
    "forward",
    "init_params",
    "is_collapsed",
    "loss_and_grad",
    "pair_autoencoder_spec",
    "predict",
    "scaled_schedule",
    "train_autoencoder",
    "train_end_to_end",
]

ACTIVATIONS = ("relu", "sigmoid")
RESAMPLES = ("none", "maxpool2", "upsample2")


class Layer(NamedTuple):
    c_in: int
    c_out: int
    activation: str = "relu"
    resample: str = "none"


@dataclass(frozen=True)
class ConvNetSpec:
    """Layer list plus input shape ``(height, width, channels)``.

    The first ``n_encoder`` layers form the encoder, the rest the decoder.
    """

    layers: tuple
    input_shape: tuple = (28, 28, 1)
    n_encoder: int = 2

    def __post_init__(self):
        layers = tuple(Layer(*l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        c = self.input_shape[2]
        for i, l in enumerate(layers):
            if l.c_in != c:
                raise ValueError(f"layer {i} expects {l.c_in} channels, receives {c}")
            if l.activation not in ACTIVATIONS or l.resample not in RESAMPLES:
                raise ValueError(f"layer {i}: unsupported {l.activation}/{l.resample}")
            c = l.c_out
        if not 0 <= self.n_encoder <= len(layers):
            raise ValueError("n_encoder out of range")

    def shapes(self):
        """(channels, height, width) after every layer."""
        h, w, c = self.input_shape
        out = []
        for l in self.layers:
            c = l.c_out
            if l.resample == "maxpool2":
                if h % 2 or w % 2:
                    raise ValueError(f"maxpool2 needs even spatial size, got {h}x{w}")
                h, w = h // 2, w // 2
            elif l.resample == "upsample2":
                h, w = 2 * h, 2 * w
            out.append((c, h, w))
        return out

    @property
    def latent_shape(self):
        if self.n_encoder == 0:
            h, w, c = self.input_shape
            return (c, h, w)
        return self.shapes()[self.n_encoder - 1]

    @property
    def latent_dim(self):
        c, h, w = self.latent_shape
        return c * h * w

    @property
    def encoder(self):
        return self.layers[: self.n_encoder]

    @property
    def decoder(self):
        return self.layers[self.n_encoder :]

    def to_dict(self):
        return {
            "layers": [list(l) for l in self.layers],
            "input_shape": list(self.input_shape),
            "n_encoder": self.n_encoder,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(l) for l in d["layers"]), tuple(d["input_shape"]), d["n_encoder"])


def pair_autoencoder_spec(height=28, width=28, widths=(2, 3, 3, 2)):
    """Five-layer hourglass: 2 encoder convs with max pooling, 3 decoder
    convs with upsampling, sigmoid output."""
    c1, c2, c3, c4 = widths
    layers = (
        Layer(1, c1, "relu", "maxpool2"),
        Layer(c1, c2, "relu", "maxpool2"),
        Layer(c2, c3, "relu", "upsample2"),
        Layer(c3, c4, "relu", "upsample2"),
        Layer(c4, 1, "sigmoid", "none"),
    )
    return ConvNetSpec(layers, (height, width, 1), n_encoder=2)


def count_params(layers):
    return sum(l.c_out * l.c_in * 9 + l.c_out for l in layers)


def init_params(spec: ConvNetSpec, rng=None):
    """Glorot-uniform kernels, zero biases. Returns a list of ``(W, b)``."""
    rng = np.random.default_rng(rng)
    params = []
    for l in spec.layers:
        fan_in, fan_out = 9 * l.c_in, 9 * l.c_out
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(l.c_out, l.c_in, 3, 3))
        params.append((W, np.zeros(l.c_out)))
    return params


def zeros_like_params(params):
    return [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]


# -- primitives ---------------------------------------------------------------
# Internally activations are stored channel-major, (C, B, H, W): each 3x3 patch
# matrix is then built from contiguous image rows and every convolution is a
# single wide matrix product.


def _kernel_matrix(W):
    # (O, C, 3, 3) -> (O, 9C), column index (3*i + j)*C + c
    return W.transpose(0, 2, 3, 1).reshape(W.shape[0], -1)


def _patches(x):
    C, B, H, Wd = x.shape
    xp = np.zeros((C, B, H + 2, Wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    P = np.empty((9, C, B, H, Wd))
    for k in range(9):
        i, j = divmod(k, 3)
        P[k] = xp[:, :, i : i + H, j : j + Wd]
    return P.reshape(9 * C, B * H * Wd)


def _conv(x, W, b):
    _, B, H, Wd = x.shape
    P = _patches(x)
    y = _kernel_matrix(W) @ P + b[:, None]
    return y.reshape(-1, B, H, Wd), P


def _conv_backward(dy, P, W, x_shape):
    C, B, H, Wd = x_shape
    O = W.shape[0]
    dy2 = dy.reshape(O, -1)
    dW = (dy2 @ P.T).reshape(O, 3, 3, C).transpose(0, 3, 1, 2)
    db = dy2.sum(axis=1)
    dP = (_kernel_matrix(W).T @ dy2).reshape(9, C, B, H, Wd)
    dxp = np.zeros((C, B, H + 2, Wd + 2))
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, :, i : i + H, j : j + Wd] += dP[k]
    return dxp[:, :, 1:-1, 1:-1], dW, db


def _pool(x):
    C, B, H, W = x.shape
    win = x.reshape(C, B, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        C, B, H // 2, W // 2, 4
    )
    # argmax picks the first row-major maximum on ties
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(dy, idx):
    C, B, h, w = dy.shape
    dwin = np.zeros((C, B, h, w, 4))
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return dwin.reshape(C, B, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(C, B, 2 * h, 2 * w)


def _upsample(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample_backward(dy):
    C, B, H, W = dy.shape
    return dy.reshape(C, B, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


def _as_batch(batch, shape):
    """Accept (B, H, W) or (B, C, H, W); return channel-major (C, B, H, W)."""
    h, w, c = shape
    x = np.asarray(getattr(batch, "pixels", batch), dtype=np.float64)
    if x.ndim == 3 and c == 1:
        return x[None].copy()
    if x.ndim != 4 or x.shape[1:] != (c, h, w):
        raise ValueError(f"batch shape {x.shape} does not match input {(c, h, w)}")
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _to_nchw(x):
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _run(layers, params, x):
    caches = []
    for l, (W, b) in zip(layers, params):
        z, P = _conv(x, W, b)
        a = np.maximum(z, 0.0) if l.activation == "relu" else expit(z)
        idx = None
        if l.resample == "maxpool2":
            out, idx = _pool(a)
        elif l.resample == "upsample2":
            out = _upsample(a)
        else:
            out = a
        caches.append((P, x.shape, z, a, idx))
        x = out
    return x, caches


def _backprop(layers, params, caches, dout):
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        l, (W, _), (P, x_shape, z, a, idx) = layers[i], params[i], caches[i]
        if l.resample == "maxpool2":
            da = _pool_backward(dout, idx)
        elif l.resample == "upsample2":
            da = _upsample_backward(dout)
        else:
            da = dout
        dz = da * (z > 0.0) if l.activation == "relu" else da * a * (1.0 - a)
        dout, dW, db = _conv_backward(dz, P, W, x_shape)
        grads[i] = (dW, db)
    return grads, dout


def _output_shape(spec):
    c, h, w = spec.shapes()[-1]
    return (h, w, c)


def forward(spec: ConvNetSpec, params, batch):
    """Run the whole network. Returns ``(output, caches)`` with the output in
    (B, C, H, W) layout."""
    x = _as_batch(batch, spec.input_shape)
    y, caches = _run(spec.layers, params, x)
    return _to_nchw(y), caches


def predict(spec, params, batch, chunk=1024):
    """Network output for many images, returned as (B, H, W) when the output
    has a single channel."""
    x = _as_batch(batch, spec.input_shape)
    y = np.concatenate(
        [_run(spec.layers, params, x[:, i : i + chunk])[0] for i in range(0, x.shape[1], chunk)],
        axis=1,
    )
    y = _to_nchw(y)
    return y[:, 0] if y.shape[1] == 1 else y


def loss_and_grad(spec: ConvNetSpec, params, inputs, targets):
    """Mean squared error over batch and pixels, and its parameter gradient."""
    x = _as_batch(inputs, spec.input_shape)
    y, caches = _run(spec.layers, params, x)
    t = _as_batch(targets, _output_shape(spec))
    diff = y - t
    mse = float(np.mean(diff * diff))
    grads, _ = _backprop(spec.layers, params, caches, 2.0 * diff / diff.size)
    return mse, grads


def encode_batch(spec: ConvNetSpec, params, stack, chunk=1024):
    """Encoder outputs as columns, shape (latent_dim, count); each column is
    the (C, H, W) latent tensor flattened row-major."""
    x = _as_batch(stack, spec.input_shape)
    p = params[: spec.n_encoder]
    out = []
    for i in range(0, x.shape[1], chunk):
        z = _to_nchw(_run(spec.encoder, p, x[:, i : i + chunk])[0])
        out.append(z.reshape(len(z), -1))
    return np.concatenate(out).T.copy()


def decode_batch(spec: ConvNetSpec, params, Z, chunk=1024):
    """Decode latent columns (latent_dim, count) into images (count, H, W)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != spec.latent_dim:
        raise ValueError(f"latent dim {Z.shape[0]} != {spec.latent_dim}")
    z = Z.T.reshape((-1,) + tuple(spec.latent_shape))
    z = np.ascontiguousarray(z.transpose(1, 0, 2, 3))
    p = params[spec.n_encoder :]
    y = np.concatenate(
        [_run(spec.decoder, p, z[:, i : i + chunk])[0] for i in range(0, z.shape[1], chunk)],
        axis=1,
    )
    y = _to_nchw(y)
    return y[:, 0] if y.shape[1] == 1 else y


# -- optimisation ---------------------------------------------------------------


def scaled_schedule(epochs, rates=(1e-3, 1e-4, 1e-3, 1e-4)):
    """Split ``epochs`` into ``len(rates)`` near-equal constant-rate phases."""
    k = len(rates)
    bounds = [round(epochs * i / k) for i in range(k + 1)]
    return tuple((bounds[i], bounds[i + 1], rates[i]) for i in range(k) if bounds[i + 1] > bounds[i])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    lr_schedule: tuple = field(default=None)
    batch_size: int = 256
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    # fresh initializations allowed when a run collapses to a constant output
    max_restarts: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        sched = self.lr_schedule
        if sched is None:
            sched = scaled_schedule(self.epochs)
        sched = tuple((int(a), int(b), float(lr)) for a, b, lr in sched)
        pos = 0
        for a, b, _ in sched:
            if a != pos or b <= a:
                raise ValueError(f"learning-rate spans {sched} do not partition [0, {self.epochs})")
            pos = b
        if pos != self.epochs:
            raise ValueError(f"learning-rate spans {sched} do not partition [0, {self.epochs})")
        object.__setattr__(self, "lr_schedule", sched)

    def lr_at(self, epoch):
        for a, b, lr in self.lr_schedule:
            if a <= epoch < b:
                return lr
        raise IndexError(epoch)

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "lr_schedule": [list(s) for s in self.lr_schedule],
            "batch_size": self.batch_size,
            "seed": self.seed,
            "betas": list(self.betas),
            "eps": self.eps,
            "max_restarts": self.max_restarts,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("lr_schedule") is not None:
            d["lr_schedule"] = tuple(tuple(s) for s in d["lr_schedule"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def adam_init(params) -> AdamState:
    return AdamState(zeros_like_params(params), zeros_like_params(params), 0)


def adam_step(params, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected ADAM update. Returns new ``(params, state)``."""
    b1, b2 = betas
    t = state.step + 1
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for (W, b), (gW, gb), (mW, mb), (vW, vb) in zip(params, grads, state.m, state.v):
        layer_p, layer_m, layer_v = [], [], []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
            layer_p.append(p)
            layer_m.append(m)
            layer_v.append(v)
        new_p.append(tuple(layer_p))
        new_m.append(tuple(layer_m))
        new_v.append(tuple(layer_v))
    return new_p, AdamState(new_m, new_v, t)


def _seeds(seed):
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


# collapse is checked at the first epoch end after this many optimizer steps
# (or at the last epoch)
COLLAPSE_CHECK_STEPS = 1000
_COLLAPSE_FRACTION = 0.05
_CONSTANT_FRACTION = 1e-2


def is_collapsed(prediction, target):
    """True when the network output has saturated to (nearly) all zeros or
    all ones, or no longer depends on the input, while the targets do not."""
    y = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    low = y.mean() < _COLLAPSE_FRACTION * t.mean()
    high = (1.0 - y).mean() < _COLLAPSE_FRACTION * (1.0 - t).mean()
    constant = y.std(axis=0).mean() < _CONSTANT_FRACTION * t.std(axis=0).mean()
    return bool(low or high or constant)


def _fit(spec, inputs, targets, cfg: TrainConfig, params=None, callback=None):
    x = np.asarray(getattr(inputs, "pixels", inputs), dtype=np.float64)
    t = np.asarray(getattr(targets, "pixels", targets), dtype=np.float64)
    if len(x) == 0:
        raise ValueError("no training data")
    if len(t) != len(x):
        raise ValueError(f"{len(x)} inputs but {len(t)} targets")
    _as_batch(x[:1], spec.input_shape)
    init_rng, shuffle_rng = _seeds(cfg.seed)
    fresh = params is None
    start_params = params
    probe = slice(0, min(len(x), 256))
    for attempt in range(cfg.max_restarts + 1):
        params = init_params(spec, init_rng) if fresh else start_params
        params, curve = _epochs(spec, x, t, cfg, params, shuffle_rng, callback,
                                check=fresh and attempt < cfg.max_restarts, probe=probe)
        if curve is not None:
            return params, curve
        logger.info("training collapsed to a constant output; reinitializing (attempt %d)",
                    attempt + 2)
    raise AssertionError("unreachable")


def _epochs(spec, x, t, cfg, params, shuffle_rng, callback, check, probe):
    state = adam_init(params)
    curve = []
    N = len(x)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = shuffle_rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = loss_and_grad(spec, params, x[idx], t[idx])
            params, state = adam_step(params, grads, state, lr, cfg.betas, cfg.eps)
            total += loss * len(idx)
        curve.append(total / N)
        if check and (state.step >= COLLAPSE_CHECK_STEPS or epoch + 1 == cfg.epochs):
            check = False
            if is_collapsed(predict(spec, params, x[probe]), t[probe]):
                return params, None
        if callback is not None:
            callback(epoch, curve[-1])
    return params, np.array(curve)


def train_autoencoder(spec: ConvNetSpec, data, cfg: TrainConfig, callback=None):
    """Self-supervised training ``x -> x``. Returns ``(params, loss_curve)``
    where ``loss_curve[e]`` is the mean training loss during epoch ``e``."""
    return _fit(spec, data, data, cfg, callback=callback)


def train_end_to_end(spec: ConvNetSpec, inputs, targets, cfg: TrainConfig, warm_start=None,
                     callback=None):
    """Supervised training ``b -> x``; ``warm_start`` continues from given
    parameters (with a fresh optimizer state)."""
    if warm_start is not None and cfg.epochs == 0:
        return [(W.copy(), b.copy()) for W, b in warm_start], np.zeros(0)
    return _fit(spec, inputs, targets, cfg, params=warm_start, callback=callback)


# -- composed models ------------------------------------------------------------


def _images(cols, spec):
    h, w, c = spec.input_shape
    cols = np.asarray(cols, dtype=np.float64)
    if cols.ndim == 1:
        cols = cols[:, None]
    return cols.T.reshape((-1, h, w) if c == 1 else (-1, c, h, w))


def _columns(images):
    return np.asarray(images).reshape(len(images), -1).T.copy()


@dataclass(frozen=True)
class NeuralPairModel:
    """Two convolutional autoencoders joined by linear latent maps.

    All callables act on column matrices (pixels x count), like the linear
    models, so the same metrics and experiment code serve both.
    """

    spec: ConvNetSpec
    params_x: list
    params_b: list
    maps: object  # LatentMap

    def encode_x(self, X):
        return encode_batch(self.spec, self.params_x, _images(X, self.spec))

    def decode_x(self, Z):
        return _columns(decode_batch(self.spec, self.params_x, Z))

    def encode_b(self, B):
        return encode_batch(self.spec, self.params_b, _images(B, self.spec))

    def decode_b(self, Z):
        return _columns(decode_batch(self.spec, self.params_b, Z))

    def inverse(self, B):
        return self.decode_x(self.maps.M_dag @ self.encode_b(B))

    def forward(self, X):
        return self.decode_b(self.maps.M @ self.encode_x(X))


@dataclass(frozen=True)
class EndToEndModel:
    """A single network mapping observations directly to parameters."""

    spec: ConvNetSpec
    params: list

    def inverse(self, B):
        return _columns(predict(self.spec, self.params, _images(B, self.spec)))
