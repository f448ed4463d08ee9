"""Slow, loop-based reference computations used as test oracles.

Nothing here calls the training kernels: the forward pass walks the
``layers``/``head`` views one sample at a time.
"""

import math

import numpy as np


def softplus(z):
    return math.log1p(math.exp(-abs(z))) + max(z, 0.0)


def forward_one(params, x, floor=1e-6):
    h = np.asarray(x, dtype=float)
    for layer in params.layers:
        h = np.array([max(float(np.dot(w_row, h)) + b, 0.0)
                      for w_row, b in zip(layer.weights, layer.biases)])
    head = params.head
    z_mean = float(np.dot(head["mean_weights"], h)) + float(head["mean_bias"][0])
    z_var = float(np.dot(head["var_weights"], h)) + float(head["var_bias"][0])
    s = params.arch.tanh_scale
    return s * math.tanh(z_mean / s), softplus(z_var) + floor


def nll(mean, var, y):
    return 0.5 * math.log(var) + (y - mean) ** 2 / (2.0 * var)


def batch_loss(params, X, y, floor=1e-6):
    total = 0.0
    for xi, yi in zip(X, y):
        total += nll(*forward_one(params, xi, floor), yi)
    return total / len(y)


def finite_difference_grad(params, X, y, h=1e-5, floor=1e-6):
    p = params.copy()
    g = np.empty_like(p.theta)
    for i in range(p.theta.size):
        orig = p.theta[i]
        p.theta[i] = orig + h
        up = batch_loss(p, X, y, floor)
        p.theta[i] = orig - h
        down = batch_loss(p, X, y, floor)
        p.theta[i] = orig
        g[i] = (up - down) / (2.0 * h)
    return g


def relative_error(a, b, tiny=1e-8):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), tiny)


def adam_trace(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, theta=0.0):
    """Scalar Adam recurrence, written out term by term."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def mixture_moments(means, variances):
    """Uniform Gaussian-mixture moments via E[X^2] - E[X]^2."""
    M = len(means)
    mu = sum(means) / M
    second = sum(v + m * m for m, v in zip(means, variances)) / M
    return mu, second - mu * mu
