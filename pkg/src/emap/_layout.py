"""Numba kernel for the sampled cross-entropy layout optimization.

Positive edges are visited once every (v_max / v) epochs, which realizes
sampling proportional to membership strength; each visit applies the
attractive update to both endpoints and draws repulsive updates against
uniformly random nodes other than the edge's endpoints. All randomness
comes from an explicit taus88 state, so a fixed seed gives bitwise
reproducible layouts.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _tau_rand_int(state):
    """taus88 generator; returns a value in [0, 2^32). state is int64[3]."""
    state[0] = (((state[0] & 4294967294) << 12) & 0xFFFFFFFF) ^ (
        (((state[0] << 13) & 0xFFFFFFFF) ^ state[0]) >> 19
    )
    state[1] = (((state[1] & 4294967288) << 4) & 0xFFFFFFFF) ^ (
        (((state[1] << 2) & 0xFFFFFFFF) ^ state[1]) >> 25
    )
    state[2] = (((state[2] & 4294967280) << 17) & 0xFFFFFFFF) ^ (
        (((state[2] << 3) & 0xFFFFFFFF) ^ state[2]) >> 11
    )
    return state[0] ^ state[1] ^ state[2]


@njit(cache=True)
def _clip(val):
    if val > 4.0:
        return 4.0
    if val < -4.0:
        return -4.0
    return val


@njit(cache=True)
def optimize_layout(
    embedding,
    head,
    tail,
    epochs_per_sample,
    n_epochs,
    initial_lr,
    negative_sample_rate,
    a,
    b,
    rng_state,
):
    """Run the edge-sampled attract/repel schedule in place."""
    n = embedding.shape[0]
    dim = embedding.shape[1]
    n_edges = head.size
    use_negatives = negative_sample_rate > 0

    next_sample = epochs_per_sample.copy()
    if use_negatives:
        epochs_per_negative = epochs_per_sample / negative_sample_rate
    else:
        epochs_per_negative = epochs_per_sample
    next_negative = epochs_per_negative.copy()

    for epoch in range(n_epochs):
        alpha = initial_lr * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if next_sample[e] > epoch:
                continue
            i = head[e]
            k = tail[e]

            d2 = 0.0
            for c in range(dim):
                diff = embedding[i, c] - embedding[k, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0)
                for c in range(dim):
                    g = _clip(coeff * (embedding[i, c] - embedding[k, c]))
                    embedding[i, c] += alpha * g
                    embedding[k, c] -= alpha * g
            next_sample[e] += epochs_per_sample[e]

            if not use_negatives:
                continue
            n_neg = int((epoch - next_negative[e]) / epochs_per_negative[e])
            for _ in range(n_neg):
                cand = _tau_rand_int(rng_state) % n
                if cand == i or cand == k:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = embedding[i, c] - embedding[cand, c]
                    d2 += diff * diff
                # embedding distance floored at 1e-3 in the denominator
                if d2 < 1e-6:
                    d2 = 1e-6
                coeff = (2.0 * b) / (d2 * (a * d2**b + 1.0))
                for c in range(dim):
                    g = _clip(coeff * (embedding[i, c] - embedding[cand, c]))
                    embedding[i, c] += alpha * g
            next_negative[e] += n_neg * epochs_per_negative[e]
    return embedding


def make_rng_state(seed):
    """Derive a taus88 state from a 64-bit seed; components kept above 16."""
    words = np.random.SeedSequence(seed).generate_state(3).astype(np.int64)
    return words | 128
