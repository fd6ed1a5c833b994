"""Neuron mask pipeline: scores -> sigmoid probabilities -> Bernoulli masks -> parameter masks."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from fedpews.nncore import ModelSpec


def sigmoid_probs(scores: np.ndarray) -> np.ndarray:
    return expit(np.asarray(scores, dtype=np.float64))


def sample_neuron_mask(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(theta[l]) draw per neuron, as float64 0/1."""
    theta = np.asarray(theta, dtype=np.float64)
    return (rng.random(theta.shape) < theta).astype(np.float64)


def expand_to_param_mask(neuron_mask, spec: ModelSpec) -> np.ndarray:
    """Parameter-level mask: a weight survives iff both of its endpoint neurons are active.

    Inputs and logits are always active, so output-layer biases are always kept.
    """
    m = np.asarray(neuron_mask, dtype=np.float64)
    if m.shape != (spec.h,):
        raise ValueError(f"neuron mask must have length {spec.h}, got shape {m.shape}")
    active = [np.ones(spec.input_dim)]
    active += [m[sl] for sl in spec.hidden_slices]
    active.append(np.ones(spec.n_classes))
    out = np.empty(spec.d)
    for i, (W, b) in enumerate(spec.unpack(out)):
        W[...] = np.outer(active[i + 1], active[i])
        b[...] = active[i + 1]
    return out


def diversity_penalty(theta_i: np.ndarray, theta_excl: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared distance to the other participants' mask probabilities, and its gradient in theta_i.

    Bounded above by h since both arguments live in [0, 1]^h.
    """
    diff = np.asarray(theta_i, dtype=np.float64) - np.asarray(theta_excl, dtype=np.float64)
    return float(diff @ diff), 2.0 * diff


def score_gradient(grad_mask, theta_i, theta_excl, lam: float) -> np.ndarray:
    """Gradient of ``loss - lam * ||theta_i - theta_excl||^2`` w.r.t. the scores.

    The Bernoulli draw is passed straight through (d mask / d theta = 1);
    the sigmoid is differentiated exactly.
    """
    _, div_grad = diversity_penalty(theta_i, theta_excl)
    return (np.asarray(grad_mask) - lam * div_grad) * theta_i * (1.0 - theta_i)


def ste_score_update(scores, grad_mask, theta_i, theta_excl, lam: float, lr_mask: float) -> np.ndarray:
    return scores - lr_mask * score_gradient(grad_mask, theta_i, theta_excl, lam)


def _largest_remainder(n: int, fractions: np.ndarray) -> np.ndarray:
    quotas = fractions * n
    counts = np.floor(quotas).astype(np.int64)
    left = n - counts.sum()
    # stable sort on -remainder keeps the lower index first on ties
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:left]] += 1
    return counts


def fixed_partition_masks(spec: ModelSpec, n_parts: int, fractions=None) -> list[np.ndarray]:
    """Split every hidden layer into contiguous, disjoint neuron blocks, one per participant.

    Block sizes follow ``fractions`` (equal by default) using largest-remainder
    rounding. Raises if some participant would get no neuron in some layer.
    """
    if n_parts < 1:
        raise ValueError("need at least one participant")
    if fractions is None:
        fractions = np.full(n_parts, 1.0 / n_parts)
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (n_parts,) or np.any(fractions <= 0):
        raise ValueError("fractions must be n_parts positive numbers")
    if not np.isclose(fractions.sum(), 1.0):
        raise ValueError(f"fractions must sum to 1, got {fractions.sum()}")
    masks = [np.zeros(spec.h) for _ in range(n_parts)]
    for sl in spec.hidden_slices:
        width = sl.stop - sl.start
        counts = _largest_remainder(width, fractions)
        if np.any(counts == 0):
            raise ValueError(f"a layer of {width} neurons cannot give every participant a neuron "
                             f"with fractions {fractions.tolist()}")
        pos = sl.start
        for mask, c in zip(masks, counts):
            mask[pos:pos + c] = 1.0
            pos += c
    return masks
