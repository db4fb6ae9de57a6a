"""A small numpy layer engine: forward, exact backward, weighted BCE and Adam.

Tensors are plain ``numpy.ndarray`` objects in ``[batch, channels, freq, time]``
layout for convolutional stages and ``[batch, features]`` after flattening.
Training runs in float32; passing ``dtype=np.float64`` to :class:`Network`
gives a verification mode suitable for finite-difference gradient checks.

Parameters live in a flat ``dict`` keyed ``"<layer name>.<tensor>"``:

* conv2d: ``kernel [out, in, kh, kw]``, ``bias [out]``
* dense: ``weight [in, out]``, ``bias [out]``
* batchnorm: ``gamma``, ``beta`` (trainable), ``running_mean``, ``running_var``
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, UsageError

LAYER_KINDS = ("conv2d", "maxpool2d", "dense", "flatten", "dropout", "batchnorm",
               "relu", "sigmoid", "concat_parallel")

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``branches`` is only used by ``concat_parallel``: a tuple of layer
    pipelines whose outputs are concatenated along axis 1. A ``frozen``
    concat branch always runs in inference mode and is never updated.
    """

    kind: str
    name: str = ""
    filters: int = 0
    kernel: tuple = (1, 1)
    padding: str = "valid"
    pool: tuple = (1, 1)
    units: int = 0
    rate: float = 0.0
    branches: tuple = ()
    frozen: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractViolation(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if min(self.kernel) < 1 or self.filters < 1:
                raise ContractViolation(f"{self.name}: bad conv parameters")
            if self.padding not in ("valid", "same"):
                raise ContractViolation(f"{self.name}: padding must be valid or same")
        if self.kind == "maxpool2d" and min(self.pool) < 1:
            raise ContractViolation(f"{self.name}: pool extents must be >= 1")
        if self.kind == "dense" and self.units < 1:
            raise ContractViolation(f"{self.name}: dense needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ContractViolation(f"{self.name}: dropout rate must lie in [0, 1)")
        if self.kind == "concat_parallel":
            frozen = tuple(self.frozen) or (False,) * len(self.branches)
            if len(frozen) != len(self.branches) or not self.branches:
                raise ContractViolation(f"{self.name}: one frozen flag per branch required")
            object.__setattr__(self, "frozen", tuple(bool(f) for f in frozen))
            object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))

    def to_dict(self):
        d = {"kind": self.kind, "name": self.name}
        if self.kind == "conv2d":
            d.update(filters=self.filters, kernel=list(self.kernel), padding=self.padding)
        elif self.kind == "maxpool2d":
            d.update(pool=list(self.pool))
        elif self.kind == "dense":
            d.update(units=self.units)
        elif self.kind == "dropout":
            d.update(rate=self.rate)
        elif self.kind == "concat_parallel":
            d.update(branches=[[l.to_dict() for l in b] for b in self.branches],
                     frozen=list(self.frozen))
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {"kind": d["kind"], "name": d.get("name", "")}
        for key in ("filters", "units", "padding", "rate"):
            if key in d:
                kw[key] = d[key]
        for key in ("kernel", "pool"):
            if key in d:
                kw[key] = tuple(d[key])
        if "branches" in d:
            kw["branches"] = tuple(tuple(cls.from_dict(l) for l in b) for b in d["branches"])
            kw["frozen"] = tuple(d.get("frozen", ()))
        return cls(**kw)


# ---------------------------------------------------------------------------
# Shape and parameter bookkeeping

def _same_pads(k):
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def output_shape(spec, in_shape):
    """Per-sample output shape of ``spec`` applied to ``in_shape``."""
    k = spec.kind
    if k == "conv2d":
        if len(in_shape) != 3:
            raise ContractViolation(f"{spec.name}: conv2d needs a [c, h, w] input, got {in_shape}")
        _, h, w = in_shape
        kh, kw = spec.kernel
        if spec.padding == "same":
            return (spec.filters, h, w)
        if h < kh or w < kw:
            raise ContractViolation(f"{spec.name}: input {h}x{w} smaller than kernel {kh}x{kw}")
        return (spec.filters, h - kh + 1, w - kw + 1)
    if k == "maxpool2d":
        if len(in_shape) != 3:
            raise ContractViolation(f"{spec.name}: maxpool2d needs a [c, h, w] input")
        c, h, w = in_shape
        ph, pw = spec.pool
        if h < ph or w < pw:
            raise ContractViolation(f"{spec.name}: input {h}x{w} smaller than pool {ph}x{pw}")
        return (c, h // ph, w // pw)
    if k == "dense":
        if len(in_shape) != 1:
            raise ContractViolation(f"{spec.name}: dense needs a flat input, got {in_shape}")
        return (spec.units,)
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    if k == "concat_parallel":
        outs = [pipeline_shapes(b, in_shape)[-1] for b in spec.branches]
        rest = {o[1:] for o in outs}
        if len(rest) != 1:
            raise ContractViolation(f"{spec.name}: branch outputs {outs} cannot be concatenated")
        return (sum(o[0] for o in outs),) + outs[0][1:]
    return tuple(in_shape)


def pipeline_shapes(layers, in_shape):
    """Shapes after each layer; element 0 is the input shape."""
    shapes = [tuple(in_shape)]
    for spec in layers:
        shapes.append(output_shape(spec, shapes[-1]))
    return shapes


def param_shapes(spec, in_shape, prefix=""):
    """``(trainable, state)`` dicts of tensor name -> shape for one layer."""
    k = spec.kind
    name = prefix + spec.name
    trainable, state = {}, {}
    if k == "conv2d":
        kh, kw = spec.kernel
        trainable[f"{name}.kernel"] = (spec.filters, in_shape[0], kh, kw)
        trainable[f"{name}.bias"] = (spec.filters,)
    elif k == "dense":
        trainable[f"{name}.weight"] = (in_shape[0], spec.units)
        trainable[f"{name}.bias"] = (spec.units,)
    elif k == "batchnorm":
        c = in_shape[0]
        trainable[f"{name}.gamma"] = (c,)
        trainable[f"{name}.beta"] = (c,)
        state[f"{name}.running_mean"] = (c,)
        state[f"{name}.running_var"] = (c,)
    elif k == "concat_parallel":
        for branch, frozen in zip(spec.branches, spec.frozen):
            t, s = pipeline_param_shapes(branch, in_shape)
            if frozen:
                state.update(t)
            else:
                trainable.update(t)
            state.update(s)
    return trainable, state


def pipeline_param_shapes(layers, in_shape):
    trainable, state = {}, {}
    shape = tuple(in_shape)
    for spec in layers:
        t, s = param_shapes(spec, shape)
        trainable.update(t)
        state.update(s)
        shape = output_shape(spec, shape)
    return trainable, state


def init_weights(layers, in_shape, seed=0):
    """Glorot-uniform kernels, zero biases, unit/zero batchnorm parameters."""
    rng = np.random.default_rng(seed)
    trainable, state = pipeline_param_shapes(layers, in_shape)
    weights = {}
    for name, shape in {**trainable, **state}.items():
        tensor = name.rsplit(".", 1)[1]
        if tensor == "kernel":
            rf = shape[2] * shape[3]
            limit = np.sqrt(6.0 / (shape[1] * rf + shape[0] * rf))
            weights[name] = rng.uniform(-limit, limit, size=shape)
        elif tensor == "weight":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-limit, limit, size=shape)
        elif tensor in ("gamma", "running_var"):
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    return {k: v.astype(np.float32) for k, v in weights.items()}


def trainable_names(layers, in_shape):
    return list(pipeline_param_shapes(layers, in_shape)[0])


# ---------------------------------------------------------------------------
# Layer implementations
#
# Internally activations are channels-last ([n, h, w, c]); Network converts
# the [n, c, h, w] input once and Flatten restores channel-major ordering.

class _Layer:
    def __init__(self, spec, in_shape, prefix):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.out_shape = output_shape(spec, in_shape)
        self.key = prefix + spec.name
        self.cache = None

    def p(self, weights, tensor):
        return weights[f"{self.key}.{tensor}"]

    def _cached(self):
        if self.cache is None:
            raise UsageError(f"backward through {self.key or self.spec.kind} without a recorded forward")
        return self.cache


class Conv2D(_Layer):
    def __init__(self, spec, in_shape, prefix):
        super().__init__(spec, in_shape, prefix)
        kh, kw = spec.kernel
        if spec.padding == "same":
            self.pads = (_same_pads(kh), _same_pads(kw))
        else:
            self.pads = ((0, 0), (0, 0))

    def _matrix(self, kernel):
        # columns ordered (kh, kw, c) to match the im2col layout below
        return kernel.transpose(0, 2, 3, 1).reshape(kernel.shape[0], -1)

    def forward(self, x, weights, training, rng):
        kernel = self.p(weights, "kernel")
        n, h, w, c = x.shape
        if c != kernel.shape[1]:
            raise ContractViolation(f"{self.key}: expected {kernel.shape[1]} channels, got {c}")
        f, _, kh, kw = kernel.shape
        (pt, pb), (pl, pr) = self.pads
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
        ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [n, ho, wo, c, kh, kw]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
        out = cols @ self._matrix(kernel).T
        out += self.p(weights, "bias")
        self.cache = (cols, xp.shape)
        return out.reshape(n, ho, wo, f)

    def backward(self, dy, weights, grads, need_dx=True):
        cols, xp_shape = self._cached()
        kernel = self.p(weights, "kernel")
        f, c, kh, kw = kernel.shape
        n, ho, wo, _ = dy.shape
        dym = dy.reshape(-1, f)
        if grads is not None:
            dk = (cols.T @ dym).T.reshape(f, kh, kw, c)
            grads[f"{self.key}.kernel"] = dk.transpose(0, 3, 1, 2)
            grads[f"{self.key}.bias"] = dym.sum(axis=0)
        if not need_dx:
            return None
        dcols = (dym @ self._matrix(kernel)).reshape(n, ho, wo, kh, kw, c)
        _, h, w = self.in_shape
        (pt, _), (pl, _) = self.pads
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        for i in range(kh):
            y0, y1 = max(0, pt - i), min(ho, h + pt - i)
            for j in range(kw):
                x0, x1 = max(0, pl - j), min(wo, w + pl - j)
                if y0 < y1 and x0 < x1:
                    dx[:, y0 + i - pt:y1 + i - pt, x0 + j - pl:x1 + j - pl, :] += \
                        dcols[:, y0:y1, x0:x1, i, j, :]
        return dx


class MaxPool2D(_Layer):
    """Non-overlapping max-pooling; ties route to the lowest index in the window."""

    def _blocks(self, x):
        n, h, w, c = x.shape
        ph, pw = self.spec.pool
        hc, wc = h // ph, w // pw
        blocks = x[:, :hc * ph, :wc * pw, :].reshape(n, hc, ph, wc, pw, c)
        return [blocks[:, :, a, :, b, :] for a in range(ph) for b in range(pw)]

    def forward(self, x, weights, training, rng):
        cands = self._blocks(x)
        out = cands[0].copy()
        for cand in cands[1:]:
            np.maximum(out, cand, out=out)
        idx = np.full(out.shape, len(cands) - 1, dtype=np.int16)
        for k in range(len(cands) - 2, -1, -1):
            idx[cands[k] == out] = k
        self.cache = (idx, x.shape)
        return out

    def backward(self, dy, weights, grads, need_dx=True):
        idx, x_shape = self._cached()
        if not need_dx:
            return None
        n, h, w, c = x_shape
        ph, pw = self.spec.pool
        hc, wc = h // ph, w // pw
        dx = np.zeros(x_shape, dtype=dy.dtype)
        blocks = dx[:, :hc * ph, :wc * pw, :].reshape(n, hc, ph, wc, pw, c)
        k = 0
        for a in range(ph):
            for b in range(pw):
                blocks[:, :, a, :, b, :] = dy * (idx == k)
                k += 1
        dx[:, :hc * ph, :wc * pw, :] = blocks.reshape(n, hc * ph, wc * pw, c)
        return dx


class Dense(_Layer):
    def forward(self, x, weights, training, rng):
        weight = self.p(weights, "weight")
        if x.ndim != 2 or x.shape[1] != weight.shape[0]:
            raise ContractViolation(f"{self.key}: expected [n, {weight.shape[0]}] input, got {x.shape}")
        self.cache = x
        return x @ weight + self.p(weights, "bias")

    def backward(self, dy, weights, grads, need_dx=True):
        x = self._cached()
        if grads is not None:
            grads[f"{self.key}.weight"] = x.T @ dy
            grads[f"{self.key}.bias"] = dy.sum(axis=0)
        return dy @ self.p(weights, "weight").T if need_dx else None


class Flatten(_Layer):
    def forward(self, x, weights, training, rng):
        self.cache = x.shape
        if x.ndim == 4:
            x = x.transpose(0, 3, 1, 2)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, weights, grads, need_dx=True):
        shape = self._cached()
        if not need_dx:
            return None
        if len(shape) == 4:
            n, h, w, c = shape
            return dy.reshape(n, c, h, w).transpose(0, 2, 3, 1)
        return dy.reshape(shape)


class Dropout(_Layer):
    """Inverted dropout: scaled by ``1 / (1 - rate)`` while training, identity otherwise."""

    def forward(self, x, weights, training, rng):
        rate = self.spec.rate
        if not training or rate == 0.0:
            self.cache = (None,)
            return x
        mask = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype)
        mask *= x.dtype.type(1.0 / (1.0 - rate))
        self.cache = (mask,)
        return x * mask

    def backward(self, dy, weights, grads, need_dx=True):
        (mask,) = self._cached()
        if not need_dx:
            return None
        return dy if mask is None else dy * mask


class BatchNorm(_Layer):
    def forward(self, x, weights, training, rng, update_stats=True):
        axes = tuple(range(x.ndim - 1))
        gamma = self.p(weights, "gamma")
        beta = self.p(weights, "beta")
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                rm = weights[f"{self.key}.running_mean"]
                rv = weights[f"{self.key}.running_var"]
                rm *= BN_MOMENTUM
                rm += (1.0 - BN_MOMENTUM) * mean.astype(rm.dtype)
                rv *= BN_MOMENTUM
                rv += (1.0 - BN_MOMENTUM) * var.astype(rv.dtype)
        else:
            mean = weights[f"{self.key}.running_mean"]
            var = weights[f"{self.key}.running_var"]
        inv_std = (1.0 / np.sqrt(var + BN_EPSILON)).astype(x.dtype)
        xhat = (x - mean.astype(x.dtype)) * inv_std
        self.cache = (xhat, inv_std, training)
        return gamma * xhat + beta

    def backward(self, dy, weights, grads, need_dx=True):
        xhat, inv_std, training = self._cached()
        axes = tuple(range(dy.ndim - 1))
        if grads is not None:
            grads[f"{self.key}.gamma"] = (dy * xhat).sum(axis=axes)
            grads[f"{self.key}.beta"] = dy.sum(axis=axes)
        if not need_dx:
            return None
        dxhat = dy * self.p(weights, "gamma")
        if not training:
            return dxhat * inv_std
        m = dy.size // dy.shape[-1]
        s1 = dxhat.sum(axis=axes)
        s2 = (dxhat * xhat).sum(axis=axes)
        return (inv_std / m) * (m * dxhat - s1 - xhat * s2)


class ReLU(_Layer):
    def forward(self, x, weights, training, rng):
        out = np.maximum(x, 0)
        self.cache = out
        return out

    def backward(self, dy, weights, grads, need_dx=True):
        out = self._cached()
        return dy * (out > 0) if need_dx else None


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(_Layer):
    def forward(self, x, weights, training, rng):
        y = sigmoid(x)
        self.cache = y
        return y

    def backward(self, dy, weights, grads, need_dx=True):
        y = self._cached()
        return dy * y * (1.0 - y) if need_dx else None


class ConcatParallel(_Layer):
    """Runs branches on the same input and concatenates on the channel axis."""

    def __init__(self, spec, in_shape, prefix):
        super().__init__(spec, in_shape, prefix)
        self.branches = [Sequential(b, in_shape, prefix) for b in spec.branches]
        self.frozen = spec.frozen
        self.sizes = [b.out_shape[0] for b in self.branches]

    def forward(self, x, weights, training, rng):
        outs = [b.forward(x, weights, training and not fz, rng, update_stats=not fz)
                for b, fz in zip(self.branches, self.frozen)]
        self.cache = True
        return np.concatenate(outs, axis=-1)

    def backward(self, dy, weights, grads, need_dx=True):
        self._cached()
        parts = np.split(dy, np.cumsum(self.sizes)[:-1], axis=-1)
        dx = None
        for branch, frozen, part in zip(self.branches, self.frozen, parts):
            if frozen and not need_dx:
                continue
            d = branch.backward(part, weights, None if frozen else grads, need_dx)
            if need_dx:
                dx = d if dx is None else dx + d
        return dx


_IMPLEMENTATIONS = {
    "conv2d": Conv2D, "maxpool2d": MaxPool2D, "dense": Dense, "flatten": Flatten,
    "dropout": Dropout, "batchnorm": BatchNorm, "relu": ReLU, "sigmoid": Sigmoid,
    "concat_parallel": ConcatParallel,
}


def make_layer(spec, in_shape, prefix=""):
    return _IMPLEMENTATIONS[spec.kind](spec, in_shape, prefix)


def to_channels_last(x):
    return np.ascontiguousarray(np.moveaxis(x, 1, -1)) if x.ndim == 4 else x


def to_channels_first(x):
    return np.moveaxis(x, -1, 1) if x.ndim == 4 else x


class Sequential:
    def __init__(self, layers, in_shape, prefix=""):
        self.layers = []
        shape = tuple(in_shape)
        for spec in layers:
            layer = make_layer(spec, shape, prefix)
            self.layers.append(layer)
            shape = layer.out_shape
        self.in_shape = tuple(in_shape)
        self.out_shape = shape

    def forward(self, x, weights, training, rng, update_stats=True):
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                x = layer.forward(x, weights, training, rng, update_stats=update_stats)
            else:
                x = layer.forward(x, weights, training, rng)
        return x

    def backward(self, dy, weights, grads, need_dx=True):
        for i in range(len(self.layers) - 1, -1, -1):
            dy = self.layers[i].backward(dy, weights, grads, need_dx=need_dx or i > 0)
        return dy


class Network:
    """A layer pipeline bound to a weight dict.

    Inputs are ``[n, c, h, w]`` (or ``[n, d]``). ``weights`` is copied once
    into the working dtype and then updated in place by the optimizer and by
    batchnorm running statistics. Dropout masks are drawn from a generator
    owned by the network; :meth:`reseed` restarts that stream.
    """

    def __init__(self, layers, in_shape, weights, dtype=np.float32, seed=0):
        self.layers = tuple(layers)
        self.in_shape = tuple(in_shape)
        self.dtype = np.dtype(dtype)
        self.body = Sequential(self.layers, self.in_shape)
        self.out_shape = self.body.out_shape
        trainable, state = pipeline_param_shapes(self.layers, self.in_shape)
        for name, shape in {**trainable, **state}.items():
            if name not in weights:
                raise ContractViolation(f"missing weight tensor {name}")
            if tuple(weights[name].shape) != tuple(shape):
                raise ContractViolation(
                    f"weight {name} has shape {weights[name].shape}, expected {shape}")
        self.weights = {k: np.array(v, dtype=self.dtype) for k, v in weights.items()}
        self.trainable = list(trainable)
        self.rng = np.random.default_rng(seed)
        self._recorded = False

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ContractViolation(f"input shape {x.shape[1:]} != {self.in_shape}")
        out = self.body.forward(to_channels_last(x), self.weights, training, self.rng)
        self._recorded = True
        return to_channels_first(out)

    def backward(self, upstream, need_input_grad=False):
        """Gradients for every trainable tensor, plus the input gradient if asked."""
        if not self._recorded:
            raise UsageError("backward called before forward")
        grads = {}
        dy = to_channels_last(np.asarray(upstream, dtype=self.dtype))
        dx = self.body.backward(dy, self.weights, grads, need_dx=need_input_grad)
        if need_input_grad:
            return grads, to_channels_first(dx)
        return grads

    def predict(self, x, batch_size=1024):
        outs = [self.forward(x[i:i + batch_size], training=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# Single-layer helpers on [c, h, w] tensors

def layer_forward(spec, x, weights, training=False, rng=None):
    """Apply one layer to a single ``[c, h, w]`` (or ``[d]``) tensor."""
    x = np.asarray(x)
    layer = make_layer(spec, x.shape)
    out = layer.forward(to_channels_last(x[None]), weights, training,
                        rng if rng is not None else np.random.default_rng(0))
    return to_channels_first(out)[0]


def conv2d_forward(x, spec, weights):
    return layer_forward(spec, x, weights)


def maxpool2d_forward(x, spec):
    return layer_forward(spec, x, {})

# ---------------------------------------------------------------------------
# Loss and optimizer

def weighted_bce(pred, target, weight):
    """Mean sample-weighted binary cross-entropy and its gradient w.r.t. ``pred``.

    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero
    where the clamp is active.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    weight = np.asarray(weight, dtype=pred.dtype)
    if not pred.shape == target.shape == weight.shape:
        raise ContractViolation(
            f"length mismatch: pred {pred.shape}, target {target.shape}, weight {weight.shape}")
    n = pred.size
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = float(np.sum(weight * -(target * np.log(p) + (1.0 - target) * np.log1p(-p))) / n)
    grad = weight * (-target / p + (1.0 - target) / (1.0 - p)) / n
    grad = np.where((pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP), grad, 0.0).astype(pred.dtype)
    return loss, grad


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(weights, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``weights`` in place; returns ``state``."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        w = weights[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        w -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(w.dtype)
    return state


def copy_weights(weights):
    return {k: np.array(v, copy=True) for k, v in weights.items()}
