"""Hot loops of the Q-network: forward, backprop and Adam on a flat parameter vector.

All parameters of a network live in one float64 vector ``theta``. A layer
stack is described by an int64 ``layout`` array with one row per dense layer:
``(weight_offset, bias_offset, n_in, n_out)``. Weights are stored row-major
as ``(n_in, n_out)`` so a layer is ``x @ W + b``.

``mode`` selects the head: 0 plain, 1 dueling with mean-subtracted
advantages, 2 dueling with max-subtracted advantages.

Every function here must stay within the numpy subset numba supports; see
``_accel``.
"""
import numpy as np

from ._accel import kernel

PLAIN, DUELING_MEAN, DUELING_MAX = 0, 1, 2


@kernel
def stack_forward(theta, layout, x, relu_out):
    """Activations of every layer, input first. Hidden layers use ReLU."""
    acts = [x]
    h = x
    n_layers = layout.shape[0]
    for layer in range(n_layers):
        wo, bo, ni, no = layout[layer, 0], layout[layer, 1], layout[layer, 2], layout[layer, 3]
        w = theta[wo : wo + ni * no].reshape((ni, no))
        z = np.dot(h, w) + theta[bo : bo + no]
        if layer < n_layers - 1 or relu_out:
            z = np.maximum(z, 0.0)
        acts.append(z)
        h = z
    return acts


@kernel
def stack_backward(theta, grad, layout, acts, g, relu_out):
    """Accumulate parameter gradients into ``grad``; return dL/d(input)."""
    n_layers = layout.shape[0]
    for layer in range(n_layers - 1, -1, -1):
        wo, bo, ni, no = layout[layer, 0], layout[layer, 1], layout[layer, 2], layout[layer, 3]
        if layer < n_layers - 1 or relu_out:
            g = g * (acts[layer + 1] > 0.0)
        gw = np.dot(acts[layer].T, g)
        grad[wo : wo + ni * no] += gw.ravel()
        grad[bo : bo + no] += g.sum(axis=0)
        w = theta[wo : wo + ni * no].reshape((ni, no))
        g = np.dot(g, w.T)
    return g


@kernel
def _onehot(idx, width):
    n = idx.shape[0]
    return (np.arange(width).reshape((1, width)) == idx.reshape((n, 1))).astype(np.float64)


@kernel
def combine(v, a, mode):
    """Merge value ``(n, 1)`` and advantage ``(n, k)`` streams into Q-values."""
    n, k = a.shape
    if mode == DUELING_MEAN:
        ref = a.sum(axis=1) / k
    else:
        ref = (a * _onehot(np.argmax(a, axis=1), k)).sum(axis=1)
    return v + a - ref.reshape((n, 1))


@kernel
def q_values(theta, trunk, vstream, astream, mode, x):
    h = stack_forward(theta, trunk, x, mode != PLAIN)[-1]
    if mode == PLAIN:
        return h
    v = stack_forward(theta, vstream, h, False)[-1]
    a = stack_forward(theta, astream, h, False)[-1]
    return combine(v, a, mode)


@kernel
def loss_and_grad(theta, grad, trunk, vstream, astream, mode, x, actions, targets):
    """Mean squared TD error over the batch; gradient written into ``grad``.

    Only the Q-value of the taken action enters the loss.
    """
    n = x.shape[0]
    grad[:] = 0.0
    t_acts = stack_forward(theta, trunk, x, mode != PLAIN)
    h = t_acts[-1]
    if mode == PLAIN:
        q = h
    else:
        v_acts = stack_forward(theta, vstream, h, False)
        a_acts = stack_forward(theta, astream, h, False)
        a = a_acts[-1]
        q = combine(v_acts[-1], a, mode)
    k = q.shape[1]
    mask = _onehot(actions, k)
    err = (q * mask).sum(axis=1) - targets
    loss = (err * err).sum() / n
    gq = mask * (2.0 / n * err).reshape((n, 1))
    if mode == PLAIN:
        stack_backward(theta, grad, trunk, t_acts, gq, False)
    else:
        gsum = gq.sum(axis=1).reshape((n, 1))
        if mode == DUELING_MEAN:
            ga = gq - gsum / k
        else:
            ga = gq - _onehot(np.argmax(a, axis=1), k) * gsum
        gh = stack_backward(theta, grad, vstream, v_acts, gsum, False)
        gh = gh + stack_backward(theta, grad, astream, a_acts, ga, False)
        stack_backward(theta, grad, trunk, t_acts, gh, True)
    return loss


@kernel
def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


@kernel
def train_step(theta, grad, m, v, t, lr, beta1, beta2, eps, trunk, vstream, astream, mode, x, actions, targets):
    loss = loss_and_grad(theta, grad, trunk, vstream, astream, mode, x, actions, targets)
    if np.isfinite(loss):
        adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps)
    return loss


@kernel
def td_targets(q_next, rewards, terminal, gamma):
    """``r`` on terminal transitions, else ``r + gamma * max_a' Q'(s', a')``."""
    n, k = q_next.shape
    best = (q_next * _onehot(np.argmax(q_next, axis=1), k)).sum(axis=1)
    return rewards + gamma * best * (1.0 - terminal)
