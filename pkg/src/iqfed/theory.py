"""Numerical checks for the linear-encoder convergence and separability results.

The linear model maps ``r`` in R^m to ``Theta r`` with loss
``f(Theta; r) = -1/2 r^T Theta^T Theta r + lam/2 ||Theta||_F^2``. Its inputs
are ``r = x + w'`` where ``x`` has i.i.d. truncated-Gaussian entries with
``E[x_i^2] = P`` and ``w' ~ N(0, sigma^2 I)``, ``sigma^2 = P / gamma``.
"""
from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats

TRUNCATION = 3.0


# ------------------------------------------------------------------ signal model


@functools.lru_cache(maxsize=None)
def _standard_truncated_moments(c: float, order: int) -> tuple:
    dist = stats.truncnorm(-c, c)
    z = [1.0] + [float(dist.moment(k)) for k in range(1, order + 1)]
    return tuple(0.0 if k % 2 else v for k, v in enumerate(z))  # odd moments vanish by symmetry


def truncated_moments(c: float = TRUNCATION, power: float = 1.0, order: int = 4) -> np.ndarray:
    """Raw moments ``E[x^k]``, k = 0..order, of ``x = s z`` with ``z`` standard
    normal truncated to [-c, c] and ``s`` chosen so that ``E[x^2] = power``."""
    z = np.array(_standard_truncated_moments(float(c), int(order)))
    s2 = power / z[2]
    return z * s2 ** (np.arange(order + 1) / 2.0)


def moment_bound(c: float = TRUNCATION, power: float = 1.0) -> float:
    """Smallest B with ``|E[x_i^q x_j^s x_l^v]| <= B`` over distinct indices and q, s, v in 0..4.

    The entries are independent, so the mixed moment factorizes and the
    maximum is the cube of the largest single-entry moment.
    """
    return float(np.max(np.abs(truncated_moments(c, power))) ** 3)


@dataclass(frozen=True)
class LinearModelSpec:
    m: int
    m_out: int
    R: float
    lam: float
    P: float
    B: float
    gamma: float
    truncation: float = TRUNCATION

    def __post_init__(self):
        if self.m < 1 or self.m_out < 1:
            raise ValueError("dimensions must be positive")
        if not (self.R > 0 and self.P > 0 and self.B > 0 and self.gamma > 0):
            raise ValueError("R, P, B and gamma must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @classmethod
    def truncated(cls, m: int, R: float, lam: float, gamma: float, P: float = 1.0, m_out: Optional[int] = None, c: float = TRUNCATION):
        """Spec whose ``B`` is derived from the truncated-Gaussian signal law."""
        return cls(m, m if m_out is None else m_out, R, lam, P, moment_bound(c, P), gamma, c)

    @property
    def sigma2(self) -> float:
        return self.P / self.gamma

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("m", "m_out", "R", "lam", "P", "B", "gamma", "truncation")}


def sample_signal(spec: LinearModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, m) i.i.d. truncated-Gaussian signal entries with ``E[x^2] = P``."""
    c = spec.truncation
    lo, hi = special.ndtr(-c), special.ndtr(c)
    z = special.ndtri(lo + (hi - lo) * rng.random((n, spec.m)))
    return z * math.sqrt(spec.P / _standard_truncated_moments(float(c), 4)[2])


def sample_inputs(spec: LinearModelSpec, n: int, rng: np.random.Generator, constant_signal: bool = False) -> np.ndarray:
    if constant_signal:
        x = np.full((n, spec.m), math.sqrt(spec.P))
    else:
        x = sample_signal(spec, n, rng)
    if spec.sigma2 > 0:
        x = x + rng.normal(0.0, math.sqrt(spec.sigma2), size=x.shape)
    return x


# ------------------------------------------------------------------ loss, gradient, projection


def linear_loss(theta: np.ndarray, r: np.ndarray, lam: float) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    z = theta @ np.asarray(r, dtype=np.float64)
    return float(-0.5 * z @ z + 0.5 * lam * np.sum(theta * theta))


def linear_grad(theta: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return -np.outer(theta @ r, r) + lam * theta


def project_grad(g: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    """Project onto the Frobenius ball of ``radius``; returns ``(g', ||g|| - radius)``."""
    if not radius > 0:
        raise ValueError("projection radius must be positive")
    norm = float(np.linalg.norm(g))
    if norm <= radius:
        return g, 0.0
    return g * (radius / norm), norm - radius


# ------------------------------------------------------------------ time-smoothed SGD


class StateError(RuntimeError):
    pass


def smoothing_weights(window: int, kappa: float) -> np.ndarray:
    return kappa ** np.arange(window, dtype=np.float64)


def normalizer(window: int, kappa: float) -> float:
    """``W = sum_{j<window} kappa^j`` by exactly rounded summation."""
    return math.fsum(smoothing_weights(window, kappa))


@dataclass
class _Entry:
    theta: np.ndarray
    inputs: np.ndarray  # (C, m)
    losses: np.ndarray  # (C,)
    grads: np.ndarray  # (C, m_out, m)
    proj: np.ndarray  # (C, m_out, m)


@dataclass
class SmoothedSgdState:
    theta: np.ndarray
    eta: float
    window: int
    kappa: float
    radius: float
    R: float
    lam: float
    history: deque = field(default_factory=deque)
    eps: float = 0.0
    clamp_error: float = 0.0
    step: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        self.theta = np.clip(np.asarray(self.theta, dtype=np.float64), -self.R, self.R)
        self.history = deque(self.history, maxlen=self.window)

    @property
    def W(self) -> float:
        return normalizer(self.window, self.kappa)

    def effective_normalizer(self) -> float:
        """Normalizer over the iterates actually buffered (equals ``W`` once full)."""
        return normalizer(len(self.history), self.kappa)


def _observe(state: SmoothedSgdState, inputs: np.ndarray) -> None:
    """Evaluate every client's loss and gradient at the current iterate and buffer them."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    losses = np.array([linear_loss(state.theta, r, state.lam) for r in inputs])
    grads = np.stack([linear_grad(state.theta, r, state.lam) for r in inputs])
    proj = np.empty_like(grads)
    for c, g in enumerate(grads):
        proj[c], err = project_grad(g, state.radius)
        state.eps = max(state.eps, err * err)
    state.history.appendleft(_Entry(state.theta.copy(), inputs, losses, grads, proj))


def smoothed_step(state: SmoothedSgdState, inputs: np.ndarray, rng: Optional[np.random.Generator] = None) -> SmoothedSgdState:
    """Advance one iteration in place and return ``state``.

    ``inputs`` holds one sampled ``r_t`` per client. Each client moves from the
    shared iterate along the kappa-weighted sum of its buffered projected
    gradients, the server averages the client iterates, and the result is
    clamped entrywise to [-R, R]. ``rng`` is accepted for interface symmetry;
    the step itself is deterministic given ``inputs``.
    """
    if state.theta is None:
        raise StateError("smoothed SGD state has no current iterate")
    _observe(state, inputs)
    weights = smoothing_weights(len(state.history), state.kappa)
    scale = state.eta / state.effective_normalizer()
    stacked = np.stack([e.proj for e in state.history])  # (h, C, m_out, m)
    clients = stacked.shape[1]
    # mean of the client iterates theta - scale * G_c, written as one shared offset
    mean = state.theta - scale * (np.tensordot(weights, stacked, axes=1).sum(axis=0) / clients)
    clamped = np.clip(mean, -state.R, state.R)
    state.clamp_error = max(state.clamp_error, float(np.linalg.norm(mean - clamped)))
    state.theta = clamped
    state.step += 1
    return state


@dataclass
class RegretRecord:
    client_regret: np.ndarray
    regret: float
    grad_norm_sq: float


def regret_track(state: SmoothedSgdState) -> RegretRecord:
    """Smoothed regrets and ``||grad S||^2`` over the buffered iterates (newest first)."""
    if not state.history:
        raise StateError("no buffered iterates; call smoothed_step first")
    weights = smoothing_weights(len(state.history), state.kappa)
    norm = state.effective_normalizer()
    losses = np.stack([e.losses for e in state.history])  # (h, C)
    client = weights @ losses / norm
    grad = np.tensordot(weights, np.stack([e.grads for e in state.history]), axes=1).mean(axis=0) / norm
    return RegretRecord(client, float(client.mean()), float(np.sum(grad * grad)))


def smoothness(spec: LinearModelSpec) -> float:
    """Smoothness constant of the expected loss: its Hessian is ``(lam - P - sigma^2) I``."""
    return abs(spec.lam - spec.P - spec.sigma2)


@dataclass
class SmoothedRun:
    window: int
    W: float
    mean_grad_norm_sq: float
    M: float
    beta: float
    eps: float
    clamp_error: float
    bound: dict
    trace: np.ndarray


def run_smoothed_sgd(
    spec: LinearModelSpec,
    steps: int,
    window: int,
    rng: np.random.Generator,
    clients: int = 4,
    kappa: float = 1 - 1e-6,
    radius: float = 1e3,
    theta0: Optional[np.ndarray] = None,
) -> SmoothedRun:
    """Run ``steps`` iterations with ``eta = 1 / beta`` and compare against the convergence bound."""
    beta = smoothness(spec)
    if theta0 is None:
        theta0 = rng.uniform(-spec.R, spec.R, size=(spec.m_out, spec.m))
    state = SmoothedSgdState(theta0, 1.0 / beta, window, kappa, radius, spec.R, spec.lam)
    trace = np.empty(steps)
    M = 0.0
    for t in range(steps):
        smoothed_step(state, sample_inputs(spec, clients, rng))
        M = max(M, float(np.max(np.abs(state.history[0].losses))))
        trace[t] = regret_track(state).grad_norm_sq
    bound = theorem1_bound(beta, M, state.W, spec, state.eps)
    return SmoothedRun(window, state.W, float(trace.mean()), M, beta, state.eps, state.clamp_error, bound, trace)


# ------------------------------------------------------------------ variance and convergence bounds


def lemma1_bracket(spec: LinearModelSpec) -> float:
    m, R2, B, P, lam = spec.m, spec.R**2, spec.B, spec.P, spec.lam
    gi = 1.0 / spec.gamma
    return (
        (m - 1) * R2 * (3 * B + 2 * gi * B * P + gi * P**2 + gi**2 * P**2)
        + R2 * (B + 6 * gi * P**2 + 3 * gi**2 * P**2)
        + (m - 1) * (m - 2) * R2 * B * (1 + gi * P)
        + 2 * lam * R2 * ((m - 1) * B + P + gi * P)
        + lam**2 * R2
    )


def lemma1_bound(spec: LinearModelSpec) -> float:
    """Per-entry variance bound of the stochastic gradient."""
    return lemma1_bracket(spec)


def lemma1_limit(spec: LinearModelSpec) -> float:
    """High-SNR, zero-regularization form ``m^2 R^2 B``."""
    return spec.m**2 * spec.R**2 * spec.B


def theorem1_bound(beta: float, M: float, W: float, spec: LinearModelSpec, eps: float) -> dict:
    if not (beta > 0 and M >= 0 and W > 0):
        raise ValueError("need beta > 0, M >= 0 and W > 0")
    tail = 0.625 * eps**2
    return {
        "full": 64 * beta * M / W + 2.0 / W * lemma1_bracket(spec) + tail,
        "simplified": (64 * beta * M + 2 * lemma1_limit(spec)) / W + tail,
    }


@dataclass
class VarianceEstimate:
    variance: np.ndarray
    se: np.ndarray


def mc_gradient_variance(
    spec: LinearModelSpec,
    theta: np.ndarray,
    samples: int,
    rng: np.random.Generator,
    constant_signal: bool = False,
) -> VarianceEstimate:
    """Sample variance of each gradient entry and its standard error.

    The standard error of a sample variance is estimated as
    ``sqrt((m4 - s^4) / n)`` from the centred fourth moment ``m4``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.m_out, spec.m):
        raise ValueError(f"theta must have shape {(spec.m_out, spec.m)}")
    if np.any(np.abs(theta) > spec.R):
        raise ValueError("theta entries must lie within [-R, R]")
    r = sample_inputs(spec, samples, rng, constant_signal)
    g = -np.einsum("ik,nk,nj->nij", theta, r, r, optimize=True) + spec.lam * theta
    dev = g - g.mean(axis=0)
    var = np.mean(dev**2, axis=0) * samples / max(samples - 1, 1)
    m4 = np.mean(dev**4, axis=0)
    se = np.sqrt(np.maximum(m4 - np.mean(dev**2, axis=0) ** 2, 0.0) / samples)
    return VarianceEstimate(var, se)


# ------------------------------------------------------------------ separability under encoder noise


def q_function(x):
    """Gaussian upper tail ``Q(x) = erfc(x / sqrt 2) / 2``."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def _standardized(slack: np.ndarray, sigma: float) -> np.ndarray:
    if sigma > 0:
        return slack / sigma
    return np.where(slack > 0, np.inf, np.where(slack < 0, -np.inf, 0.0))


def theorem2_prob_bound(margins, mu: float, rho: float, gamma_enc: float, L: Optional[int] = None) -> tuple[float, float]:
    """Lower bounds on the probability that noisy features keep margin ``mu``.

    ``margins`` are the clean functional margins ``y_l (theta . phi_l + b)``;
    the slack of point ``l`` is ``margins_l - mu``. Each point survives with
    probability ``1 - Q(slack_l / sqrt(rho / gamma_enc))``. Returns
    ``(worst_slack_form, product_form)`` where the first uses the smallest
    slack for all ``L`` points and is never larger than the second.
    """
    if not (gamma_enc > 0 and rho > 0):
        raise ValueError("gamma_enc and rho must be positive")
    slack = np.asarray(margins, dtype=np.float64).reshape(-1) - mu
    L = slack.size if L is None else int(L)
    sigma = math.sqrt(rho / gamma_enc) if math.isfinite(gamma_enc) else 0.0
    per_point = 1.0 - q_function(_standardized(slack, sigma))
    product = float(np.prod(per_point))
    worst = float((1.0 - q_function(_standardized(np.array([slack.min()]), sigma))[0]) ** L)
    return max(worst, 0.0), max(product, 0.0)


def mc_separability(
    features,
    labels,
    theta: np.ndarray,
    bias: float,
    mu: float,
    rho: float,
    gamma_enc: float,
    trials: int,
    rng: np.random.Generator,
    chunk: int = 2000,
) -> tuple[float, float]:
    """Fraction of noisy draws in which every point keeps margin ``mu`` under the fixed ``(theta, bias)``.

    Returns ``(frequency, binomial standard error)``.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    theta = np.asarray(theta, dtype=np.float64)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-9:
        raise ValueError("theta must have unit norm")
    if np.any(np.linalg.norm(x, axis=1) > rho * (1 + 1e-12)):
        raise ValueError("clean features exceed the radius rho")
    slack = y * (x @ theta + bias) - mu
    if np.any(slack < -1e-12):
        raise ValueError("clean set is not (mu, rho)-separable under the given hyperplane")
    sigma = math.sqrt(rho / gamma_enc) if math.isfinite(gamma_enc) else 0.0
    hits = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        noise = rng.normal(0.0, 1.0, size=(n,) + x.shape) * sigma
        projected = noise @ theta  # (n, L)
        hits += int(np.sum(np.all(-y * projected <= slack, axis=1)))
        done += n
    p = hits / trials
    return p, math.sqrt(p * (1 - p) / trials)


def random_separable_instance(rng: np.random.Generator, L: int, d: int, mu: float = 0.5, spread: float = 2.0):
    """Random points with labels ``+-1`` and a unit hyperplane that separates them with margin ``mu``.

    Returns ``(features, labels, theta, bias, rho)``.
    """
    theta = rng.normal(size=d)
    theta /= np.linalg.norm(theta)
    bias = float(rng.uniform(-0.5, 0.5))
    y = np.where(rng.random(L) < 0.5, 1.0, -1.0)
    y[0], y[-1] = 1.0, -1.0
    margin = mu + rng.exponential(0.5, size=L)
    x = rng.normal(0.0, spread, size=(L, d))
    # move every point along theta so its functional margin is exactly ``margin``
    x += ((y * margin - bias) - x @ theta)[:, None] * theta[None, :]
    rho = float(np.max(np.linalg.norm(x, axis=1)))
    return x, y, theta, bias, rho
