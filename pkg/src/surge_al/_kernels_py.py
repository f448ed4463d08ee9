"""Pure-numpy training kernels.

Reference implementation of the hot loop; the compiled ``_kernels`` module
exposes the same functions with the same signatures.

Parameters live in one flat float64 vector.  For every layer (the hidden
ReLU layers followed by the two-unit output layer) the vector holds the
transposed weight matrix ``Wt`` of shape ``(fan_in, fan_out)`` in row-major
order, followed by the bias of length ``fan_out``.  Output unit 0 is the mean
pre-activation, unit 1 the variance pre-activation.
"""

import numpy as np
from scipy.special import expit

BACKEND = "python"


def param_count(sizes):
    return int(sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1)))


def _check(theta, sizes, X):
    if theta.shape[0] != param_count(sizes):
        raise ValueError("parameter vector does not match layer sizes")
    if X.shape[1] != int(sizes[0]):
        raise ValueError("input width does not match layer sizes")


def _unpack(theta, sizes):
    layers = []
    off = 0
    for i in range(len(sizes) - 1):
        n_in, n_out = int(sizes[i]), int(sizes[i + 1])
        wt = theta[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = theta[off:off + n_out]
        off += n_out
        layers.append((wt, b))
    return layers


def _heads(z_out, tanh_scale, floor):
    u = np.tanh(z_out[:, 0] / tanh_scale)
    mean = tanh_scale * u
    var = np.logaddexp(0.0, z_out[:, 1]) + floor
    return u, mean, var


def predict(theta, sizes, X, tanh_scale, floor):
    _check(theta, sizes, X)
    layers = _unpack(theta, sizes)
    h = X
    for wt, b in layers[:-1]:
        h = np.maximum(h @ wt + b, 0.0)
    wt, b = layers[-1]
    _, mean, var = _heads(h @ wt + b, tanh_scale, floor)
    return mean, var


def loss_grad(theta, sizes, X, y, tanh_scale, floor, grad):
    """Mean Gaussian NLL over the batch; writes its gradient into ``grad``."""
    _check(theta, sizes, X)
    layers = _unpack(theta, sizes)
    glayers = _unpack(grad, sizes)
    n = X.shape[0]

    acts = [X]
    pre = []
    h = X
    for wt, b in layers[:-1]:
        z = h @ wt + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    wt, b = layers[-1]
    z_out = h @ wt + b
    u, mean, var = _heads(z_out, tanh_scale, floor)

    r = mean - y
    r2 = r * r
    loss = float(np.mean(0.5 * np.log(var) + r2 / (2.0 * var)))

    dz = np.empty_like(z_out)
    dz[:, 0] = (r / var) * (1.0 - u * u) / n
    dz[:, 1] = (0.5 / var - r2 / (2.0 * var * var)) * expit(z_out[:, 1]) / n

    for li in range(len(layers) - 1, -1, -1):
        wt, _ = layers[li]
        gwt, gb = glayers[li]
        a = acts[li]
        gwt[...] = a.T @ dz
        gb[...] = dz.sum(axis=0)
        if li > 0:
            dz = (dz @ wt.T) * (pre[li - 1] > 0.0)
    return loss


def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam update; ``t`` is the (already incremented) step count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train_epoch(theta, m, v, t, sizes, X, y, order, batch_size, lr,
                beta1, beta2, eps, tanh_scale, floor):
    """Run one pass over ``order`` in mini-batches, updating in place.

    Returns ``(mean_loss, t)`` where ``mean_loss`` averages the per-sample
    loss seen during the pass and ``t`` is the updated Adam step count.
    """
    _check(theta, sizes, X)
    n = order.shape[0]
    grad = np.empty_like(theta)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        loss = loss_grad(theta, sizes, X[idx], y[idx], tanh_scale, floor, grad)
        total += loss * idx.shape[0]
        t += 1
        adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps)
    return total / n, t
