"""DP-SGD steps and a Renyi-DP accountant for the Poisson-subsampled Gaussian."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import model as mc

DEFAULT_CLIP = 4.7
# 1.25, 1.5, ..., 64 followed by the integers 65..256
DEFAULT_ORDERS = tuple(np.concatenate([np.arange(5, 257) / 4.0, np.arange(65, 257)]).tolist())


@dataclass(frozen=True)
class DpParams:
    sigma: float
    clip: float = DEFAULT_CLIP
    sample_rate: float = 1.0
    delta: float | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise multiplier must be non-negative")
        if not self.clip > 0:
            raise ValueError("clipping norm must be positive")
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sampling rate must lie in (0, 1]")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class BudgetReport:
    epsilon: float
    delta: float
    steps: int
    sigma: float
    sample_rate: float
    order: float | None = None


def clip(g: np.ndarray, c: float) -> np.ndarray:
    """Scale ``g`` onto the L2 ball of radius ``c`` (rows independently for 2-D input)."""
    if not c > 0:
        raise ValueError("clipping norm must be positive")
    g = np.asarray(g, dtype=np.float64)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        factor = np.minimum(1.0, c / norms)
    out = g * factor
    # rounding can leave a scaled row an ulp or two above c; shrink those until the bound holds
    for _ in range(8):
        over = np.linalg.norm(out, axis=-1, keepdims=True) > c
        if not over.any():
            break
        factor = np.where(over, np.nextafter(factor, 0.0) * (1 - 2 ** -52), factor)
        out = g * factor
    return out


def noisy_clipped_mean(per_sample: np.ndarray, dp: DpParams, rng: np.random.Generator) -> np.ndarray:
    """(sum of clipped rows + N(0, (sigma*C)^2 I)) / B."""
    total = clip(per_sample, dp.clip).sum(axis=0)
    if dp.sigma > 0:
        total = total + rng.normal(0.0, dp.sigma * dp.clip, size=total.shape)
    return total / len(per_sample)


def dp_sgd_step(arch: mc.ModelArch, params: np.ndarray, batch: mc.Batch, dp: DpParams,
                lr: float, rng: np.random.Generator) -> np.ndarray:
    _, per_sample = mc.loss_and_per_sample_gradients(arch, params, batch)
    return mc.apply_step(params, noisy_clipped_mean(per_sample, dp, rng), lr)


# --- RDP accounting --------------------------------------------------------------

def _log_add(a: float, b: float) -> float:
    lo, hi = min(a, b), max(a, b)
    if lo == -np.inf:
        return hi
    return math.log1p(math.exp(lo - hi)) + hi


def _log_sub(a: float, b: float) -> float:
    if b == -np.inf:
        return a
    if a <= b:
        return -np.inf
    return a + math.log1p(-math.exp(b - a))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    log_a = -np.inf
    for i in range(alpha + 1):
        term = (math.log(special.binom(alpha, i)) + i * math.log(q)
                + (alpha - i) * math.log1p(-q) + (i * i - i) / (2 * sigma ** 2))
        log_a = _log_add(log_a, term)
    return log_a


def _log_erfc(x: float) -> float:
    return float(special.log_ndtr(-x * 2 ** 0.5) + math.log(2))


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # two-sided series in i, split at z0 where the two Gaussians' densities meet
    log_a0, log_a1 = -np.inf, -np.inf
    z0 = sigma ** 2 * math.log(1 / q - 1) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (2 ** 0.5 * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (2 ** 0.5 * sigma))
        log_s0 = log_t0 + (i * i - i) / (2 * sigma ** 2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2 * sigma ** 2) + log_e1
        if coef > 0:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30:
            break
    return _log_add(log_a0, log_a1)


def rdp_subsampled_gaussian(q: float, sigma: float, order: float) -> float:
    """RDP at ``order`` of one Poisson-subsampled Gaussian step (sensitivity 1)."""
    if q == 0:
        return 0.0
    if sigma == 0:
        return np.inf
    if q == 1.0:
        return order / (2 * sigma ** 2)
    if float(order).is_integer():
        log_a = _log_a_int(q, sigma, int(order))
    else:
        log_a = _log_a_frac(q, sigma, order)
    return log_a / (order - 1)


def rdp_curve(q: float, sigma: float, steps: int, orders=DEFAULT_ORDERS) -> np.ndarray:
    return np.array([steps * rdp_subsampled_gaussian(q, sigma, a) for a in orders])


def rdp_to_epsilon(rdp: np.ndarray, delta: float, orders=DEFAULT_ORDERS) -> tuple[float, float]:
    """Smallest rdp(a) + log(1/delta)/(a-1) over the grid, with its order."""
    orders = np.asarray(orders, dtype=float)
    eps = np.asarray(rdp) + math.log(1 / delta) / (orders - 1)
    k = int(np.nanargmin(eps))
    return float(eps[k]), float(orders[k])


def rdp_epsilon(dp: DpParams, steps: int, delta: float | None = None,
                orders=DEFAULT_ORDERS) -> BudgetReport:
    """Cumulative (epsilon, delta) after ``steps`` DP-SGD steps."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    delta = delta if delta is not None else dp.delta
    if delta is None:
        raise ValueError("delta is required (conventionally 1/dataset size)")
    if steps == 0:
        return BudgetReport(0.0, delta, 0, dp.sigma, dp.sample_rate)
    if dp.sigma == 0:
        return BudgetReport(math.inf, delta, steps, dp.sigma, dp.sample_rate)
    eps, order = rdp_to_epsilon(rdp_curve(dp.sample_rate, dp.sigma, steps, orders), delta, orders)
    return BudgetReport(eps, delta, steps, dp.sigma, dp.sample_rate, order)
