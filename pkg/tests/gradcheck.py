"""Kink-aware central finite differences for the encoder.

Leaky ReLU and max-pooling are piecewise linear. A coordinate whose +-h
perturbation flips any pre-activation sign or any pooled position is
skipped, since the finite difference there straddles a kink.
"""
import numpy as np

from iqfed.encoder import EncoderParams, activations


def pattern(params: EncoderParams, x) -> tuple:
    acts = activations(params, x)
    signs = tuple((a["z"] > 0).tobytes() for a in acts)
    return signs, np.argmax(acts[-1]["h"], axis=2).tobytes()


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def fd_check(params: EncoderParams, x, objective, analytic, h: float = 1e-5):
    """Return ``(max_rel_err, checked, skipped)`` over every flat coordinate."""
    base = pattern(params, x)
    worst, checked, skipped = 0.0, 0, 0
    for i in range(params.flat.size):
        plus, minus = params.copy(), params.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        if pattern(plus, x) != base or pattern(minus, x) != base:
            skipped += 1
            continue
        num = (objective(plus) - objective(minus)) / (2 * h)
        worst = max(worst, float(rel_err(analytic[i], num)))
        checked += 1
    return worst, checked, skipped


def window_arrays(pool, triplets):
    return [pool[w.frame][None, :, w.start : w.stop] for tr in triplets for w in tr.windows()]


def fd_check_many(params: EncoderParams, inputs, objective, analytic, h: float = 1e-5):
    """As :func:`fd_check` with the kink pattern taken over several inputs."""
    def pat(p):
        return tuple(pattern(p, x) for x in inputs)

    base = pat(params)
    worst, checked, skipped = 0.0, 0, 0
    for i in range(params.flat.size):
        plus, minus = params.copy(), params.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        if pat(plus) != base or pat(minus) != base:
            skipped += 1
            continue
        num = (objective(plus) - objective(minus)) / (2 * h)
        worst = max(worst, float(rel_err(analytic[i], num)))
        checked += 1
    return worst, checked, skipped
