"""Analytic attacks by a malicious server: trap weights (CAH) and imprint bins (RTF).

Both read an input back from a fully-connected layer's gradient: for a row
whose pre-activation fired for exactly one sample, weight-row gradient divided
by bias gradient equals that sample.
"""

from __future__ import annotations

import numpy as np

from .. import model as mc
from .common import ObservedGradient


def first_dense(arch: mc.ModelArch) -> int:
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, mc.Dense):
            return i
    raise ValueError("architecture has no fully-connected layer")


def install_trap_weights(arch: mc.ModelArch, params: np.ndarray, prior: np.ndarray,
                         batch_size: int, rng: np.random.Generator, layer: int | None = None) -> np.ndarray:
    """Replace the first dense layer by trap rows.

    Each row gets random magnitudes, half of them negated; the negative half is
    scaled so that the row fires for about 1/batch_size of the prior samples.
    Biases are zeroed.
    """
    layer = first_dense(arch) if layer is None else layer
    params = params.copy()
    w, b = arch.unpack(params)[layer]
    rows, d = w.shape
    prior = prior.reshape(len(prior), -1)
    target_rate = 1.0 / max(batch_size, 2)
    for r in range(rows):
        mag = np.abs(rng.normal(size=d)) / np.sqrt(d)
        neg = rng.permutation(d)[: d // 2]
        pos_part = np.delete(mag, neg)
        pos_idx = np.delete(np.arange(d), neg)
        num = prior[:, pos_idx] @ pos_part
        den = prior[:, neg] @ mag[neg]
        ratio = num / np.maximum(den, 1e-12)
        scale = np.quantile(ratio, 1.0 - target_rate)
        row = mag.copy()
        row[neg] *= -scale
        w[r] = row
    b[:] = 0.0
    return params


def brightness(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1).mean(axis=1)


def imprint_model(arch: mc.ModelArch, params: np.ndarray, prior: np.ndarray, bins: int,
                  rng: np.random.Generator):
    """Prepend an imprint block (d -> bins -> d) in front of ``arch``.

    Row i of the imprint layer measures mean brightness minus threshold t_i,
    with t_0 below every prior sample and t_1..t_{k-1} at prior quantiles.
    The following layer has identical columns, so every active bin of a sample
    receives the same error signal.
    Returns (arch, params, thresholds).
    """
    d = arch.input_size
    meas = brightness(prior)
    thresholds = np.concatenate([[meas.min() - 1.0], np.quantile(meas, np.arange(1, bins) / bins)])
    layers = (mc.Dense(d, bins, "relu"), mc.Dense(bins, d, "none")) + arch.layers
    new = mc.ModelArch(arch.input_shape, layers, arch.num_classes)
    w1 = np.full((bins, d), 1.0 / d)
    b1 = -thresholds
    cols = rng.normal(size=d) / bins
    w2 = np.repeat(cols[:, None], bins, axis=1)
    b2 = np.zeros(d)
    head = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
    return new, np.concatenate([head, params]), thresholds


def _row_arrays(obs: ObservedGradient, arch: mc.ModelArch, layer: int):
    sw, sb = arch.offsets()[layer]
    rows = arch.layers[layer].out_features
    gw = obs.values[sw].reshape(rows, -1)
    vw = obs.visible[sw].reshape(rows, -1)
    return gw, vw, obs.values[sb], obs.visible[sb]


def _floor(db: np.ndarray, noise_floor: float) -> float:
    finite = np.abs(db[np.isfinite(db)])
    scale = finite.max() if finite.size else 0.0
    return max(noise_floor, 1e-9 * scale, 1e-300)


def recover_rows(obs: ObservedGradient, arch: mc.ModelArch, fill: np.ndarray,
                 noise_floor: float = 0.0, layer: int | None = None):
    """Candidates grad(W_i) / grad(b_i) for every row with a usable bias gradient.

    Hidden weight entries are replaced by ``fill``. Returns (candidates, row ids).
    """
    layer = first_dense(arch) if layer is None else layer
    gw, vw, gb, vb = _row_arrays(obs, arch, layer)
    floor = _floor(np.where(vb, gb, 0.0), noise_floor)
    recs, ids = [], []
    for i in range(len(gb)):
        if not vb[i] or abs(gb[i]) <= floor or not vw[i].any():
            continue
        recs.append(np.where(vw[i], gw[i] / gb[i], fill))
        ids.append(i)
    return np.array(recs).reshape(len(recs), gw.shape[1]), np.array(ids, dtype=int)


def recover_bins(obs: ObservedGradient, arch: mc.ModelArch, fill: np.ndarray,
                 noise_floor: float = 0.0, layer: int = 0):
    """Candidates from adjacent-row differences of an imprint layer. Returns (candidates, bin ids)."""
    gw, vw, gb, vb = _row_arrays(obs, arch, layer)
    k = len(gb)
    gw = np.vstack([gw, np.zeros((1, gw.shape[1]))])
    vw = np.vstack([vw, np.ones((1, vw.shape[1]), dtype=bool)])
    gb = np.append(gb, 0.0)
    vb = np.append(vb, True)
    db = gb[:-1] - gb[1:]
    usable = vb[:-1] & vb[1:]
    floor = _floor(np.where(usable, db, 0.0), noise_floor)
    recs, ids = [], []
    for i in range(k):
        if not usable[i] or abs(db[i]) <= floor:
            continue
        vis = vw[i] & vw[i + 1]
        if not vis.any():
            continue
        recs.append(np.where(vis, (gw[i] - gw[i + 1]) / db[i], fill))
        ids.append(i)
    return np.array(recs).reshape(len(recs), gw.shape[1]), np.array(ids, dtype=int)


def row_sources(bias_contrib: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Ground-truth source of each candidate: the sample contributing most to its bias gradient.

    ``bias_contrib`` is (batch, rows) of per-sample (clipped) bias gradients or
    their adjacent differences; -1 marks rows no sample touched.
    """
    out = np.full(len(ids), -1, dtype=int)
    for k, i in enumerate(ids):
        c = np.abs(bias_contrib[:, i])
        if c.max() > 0:
            out[k] = int(c.argmax())
    return out
