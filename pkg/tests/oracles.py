"""Independent reference computations used by the tests.

Nothing here calls into fedpews' backprop or mask expansion.
"""
import math

import numpy as np

from fedpews.nncore import ModelSpec, cross_entropy, forward


def softmax_ce_bruteforce(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        denom = sum(math.exp(v) for v in row)
        total += -math.log(math.exp(row[y]) / denom)
    return total / len(labels)


def loss_at(spec, params, mask, x, y):
    return cross_entropy(forward(spec, params, mask, x).logits, y)


def fd_grad_params(spec, params, mask, x, y, step=1e-5):
    g = np.zeros_like(params)
    for i in range(len(params)):
        p = params.copy()
        p[i] += step
        up = loss_at(spec, p, mask, x, y)
        p[i] -= 2 * step
        down = loss_at(spec, p, mask, x, y)
        g[i] = (up - down) / (2 * step)
    return g


def fd_grad_mask(spec, params, mask, x, y, step=1e-5):
    mask = np.asarray(mask, dtype=float)
    g = np.zeros_like(mask)
    for i in range(len(mask)):
        m = mask.copy()
        m[i] += step
        up = loss_at(spec, params, m, x, y)
        m[i] -= 2 * step
        down = loss_at(spec, params, m, x, y)
        g[i] = (up - down) / (2 * step)
    return g


def max_rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def bruteforce_param_mask(spec: ModelSpec, neuron_mask):
    """Walk every parameter; a weight j->k is kept iff both neurons are active."""
    dims = [spec.input_dim] + [l.out_dim for l in spec.layers]
    active = [[1] * dims[0]]
    pos = 0
    for width in dims[1:-1]:
        active.append([int(v) for v in neuron_mask[pos:pos + width]])
        pos += width
    active.append([1] * dims[-1])
    out = []
    for layer in range(len(spec.layers)):
        for k in range(dims[layer + 1]):
            for j in range(dims[layer]):
                out.append(1 if active[layer][j] and active[layer + 1][k] else 0)
        for k in range(dims[layer + 1]):
            out.append(active[layer + 1][k])
    return np.array(out, dtype=float)


def random_tiny_net(rng, max_layers=3, max_width=8):
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [int(v) for v in rng.integers(1, max_width + 1, size=n_layers + 1)]
    dims[-1] = max(dims[-1], 2)
    return ModelSpec.from_dims(dims)


def kink_free_batch(spec, params, mask, rng, n, margin=1e-3):
    """Random batch whose pre-activations all sit away from the ReLU kink.

    Central differences straddling a kink do not approximate the one-sided derivative.
    """
    for _ in range(1000):
        x = rng.normal(size=(n, spec.input_dim))
        trace = forward(spec, params, mask, x)
        if all(np.min(np.abs(z)) > margin for z in trace.pre[:-1]):
            return x
    raise RuntimeError("could not find a kink-free batch")
