"""Shared oracles for the test suite."""

import numpy as np

from onsetlab.nn_core import Network

FD_STEP = 1e-5
# two step sizes disagreeing means a ReLU or max-pool kink lies inside the step
KINK_TOL = 1e-6
REL_FLOOR = 1e-6


def rel_error(a, b, floor=REL_FLOOR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(layers, in_shape, weights, batch=2, seed=0, per_tensor=6, training=True,
                   return_kinks=False):
    """Max relative error between analytic and central-difference gradients.

    The scalar objective is ``sum(u * net(x))`` for a fixed random ``u``;
    dropout masks are replayed by reseeding before every forward pass.
    Checks a sample of coordinates of every trainable tensor and of the input;
    coordinates sitting on a kink are replaced by fresh ones.
    """
    rng = np.random.default_rng(seed)
    net = Network(layers, in_shape, weights, dtype=np.float64)
    x = rng.standard_normal((batch,) + tuple(in_shape))
    u = rng.standard_normal((batch,) + tuple(net.out_shape))

    def objective(inp):
        net.reseed(1234)
        return float(np.sum(u * net.forward(inp, training=training)))

    objective(x)
    grads, dx = net.backward(u, need_input_grad=True)
    worst = 0.0
    kinks = 0
    targets = [(name, net.weights[name], grads[name]) for name in net.trainable]
    targets.append(("input", x, dx))
    for name, tensor, grad in targets:
        flat = tensor.reshape(-1)
        order = rng.permutation(flat.size)
        checked = 0
        for k in order:
            if checked == per_tensor:
                break
            coarse = _central(objective, x, flat, k, FD_STEP)
            fine = _central(objective, x, flat, k, FD_STEP / 10)
            if rel_error(coarse, fine) > KINK_TOL:
                kinks += 1
                continue
            checked += 1
            worst = max(worst, float(rel_error(grad.reshape(-1)[k], coarse)))
    return worst if not return_kinks else (worst, kinks)


def _central(objective, x, flat, k, h):
    old = flat[k]
    flat[k] = old + h
    up = objective(x)
    flat[k] = old - h
    down = objective(x)
    flat[k] = old
    return (up - down) / (2 * h)
