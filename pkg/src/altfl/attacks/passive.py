"""Gradient-matching reconstruction (DLG and Inverting Gradients).

For dense ReLU stacks the derivative of the matching loss with respect to the
dummy input and dummy label is computed in closed form: the weight gradient is
bilinear in the layer errors and activations, and ReLU gates are piecewise
constant. Other architectures fall back to central finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from .. import model as mc
from .common import AttackConfig, AttackOutcome, ObservedGradient, failed_outcome


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _dense_only(arch: mc.ModelArch) -> bool:
    return all(isinstance(l, mc.Dense) for l in arch.layers)


class GradientModel:
    """Per-sample parameter gradient g(x, y) of one model state, and its pullback."""

    def __init__(self, arch: mc.ModelArch, params: np.ndarray):
        self.arch = arch
        self.params = params
        self.analytic = _dense_only(arch)
        if self.analytic:
            views = arch.unpack(params)
            self.weights = [views[i] for i in range(len(arch.layers))]
            self.relu = [l.activation == "relu" for l in arch.layers]
            self.offsets = [arch.offsets()[i] for i in range(len(arch.layers))]

    def grad(self, x: np.ndarray, soft_label: np.ndarray) -> np.ndarray:
        return self._forward(x, soft_label)[0]

    def _forward(self, x, y):
        acts = [x]
        masks = []
        a = x
        for (w, b), relu in zip(self.weights, self.relu):
            z = w @ a + b
            m = (z > 0).astype(float) if relu else np.ones_like(z)
            a = z * m
            masks.append(m)
            acts.append(a)
        p = _softmax(a)
        deltas = [None] * len(self.weights)
        d = masks[-1] * (p - y)
        g = np.empty(self.arch.num_params)
        for l in range(len(self.weights) - 1, -1, -1):
            deltas[l] = d
            sw, sb = self.offsets[l]
            g[sw] = np.outer(d, acts[l]).ravel()
            g[sb] = d
            if l:
                d = masks[l - 1] * (self.weights[l][0].T @ d)
        return g, (acts, masks, deltas, p)

    def grad_and_pullback(self, x, y, cot):
        """g(x, y) and the cotangent pulled back to (x, y) for upstream ``cot`` = dL/dg."""
        g, (acts, masks, deltas, p) = self._forward(x, y)
        n = len(self.weights)
        bar_a = [np.zeros_like(a) for a in acts]
        bar_d = [np.zeros_like(d) for d in deltas]
        for l in range(n):
            sw, sb = self.offsets[l]
            gw = cot[sw].reshape(self.weights[l][0].shape)
            bar_d[l] += gw @ acts[l] + cot[sb]
            bar_a[l] += gw.T @ deltas[l]
            if l + 1 < n:
                bar_d[l + 1] += self.weights[l + 1][0] @ (masks[l] * bar_d[l])
        bar_p = masks[-1] * bar_d[-1]
        bar_y = -bar_p
        bar_a[n] += p * (bar_p - p @ bar_p)
        bar_u = y * (bar_y - y @ bar_y)
        for l in range(n - 1, -1, -1):
            bar_z = masks[l] * bar_a[l + 1]
            bar_a[l] += self.weights[l][0].T @ bar_z
        return g, bar_a[0], bar_u


def _generic_grad(arch, params, x, y):
    """Per-sample gradient for soft labels on any architecture (finite-difference fallback path)."""
    k = arch.num_classes
    # soft-label cross-entropy is linear in the label: sum_c y_c * grad(CE with label c)
    _, per = mc.loss_and_per_sample_gradients(arch, params, mc.Batch(np.repeat(x[None], k, 0), np.arange(k)))
    return y @ per


class MatchingObjective:
    """Loss over visible coordinates as a function of z = (x, label logits)."""

    def __init__(self, arch, params, obs: ObservedGradient, kind: str, tv_weight: float = 0.0,
                 label: int | None = None):
        self.gm = GradientModel(arch, params)
        self.arch, self.params = arch, params
        self.vis = obs.visible
        self.target = np.where(obs.visible, obs.values, 0.0)
        self.kind = kind
        self.tv_weight = tv_weight
        self.d = arch.input_size
        self.k = arch.num_classes
        self.label = label
        self.tnorm = np.linalg.norm(self.target)

    def split(self, z):
        x = z[:self.d]
        if self.label is not None:
            y = np.zeros(self.k)
            y[self.label] = 1.0
            return x, y, None
        u = z[self.d:]
        return x, _softmax(u), u

    def _loss_and_cot(self, g):
        diff = np.where(self.vis, g - self.target, 0.0)
        if self.kind == "l2":
            return float(diff @ diff), 2 * diff
        gv = np.where(self.vis, g, 0.0)
        gn = np.linalg.norm(gv)
        if gn == 0 or self.tnorm == 0:
            return 1.0, np.zeros_like(g)
        cos = float(gv @ self.target) / (gn * self.tnorm)
        cot = -(self.target / (gn * self.tnorm) - cos * gv / gn ** 2)
        return 1.0 - cos, cot

    def _tv(self, x):
        c, h, w = self.arch.input_shape
        img = x.reshape(c, h, w)
        dh = np.diff(img, axis=1)
        dw = np.diff(img, axis=2)
        val = np.abs(dh).mean() + np.abs(dw).mean()
        g = np.zeros_like(img)
        sh = np.sign(dh) / dh.size
        sw = np.sign(dw) / dw.size
        g[:, 1:, :] += sh
        g[:, :-1, :] -= sh
        g[:, :, 1:] += sw
        g[:, :, :-1] -= sw
        return val, g.ravel()

    def __call__(self, z):
        x, y, u = self.split(z)
        if self.gm.analytic:
            g = self.gm.grad(x, y)
            val, cot = self._loss_and_cot(g)
            _, gx, gu = self.gm.grad_and_pullback(x, y, cot)
        else:
            val, grad = self._numeric(z)
            gx, gu = grad[:self.d], grad[self.d:]
        if self.tv_weight:
            tv, tvg = self._tv(x)
            val += self.tv_weight * tv
            gx = gx + self.tv_weight * tvg
        grad = gx if u is None else np.concatenate([gx, gu])
        return val, grad

    def value(self, z):
        x, y, _ = self.split(z)
        g = _generic_grad(self.arch, self.params, x, y)
        return self._loss_and_cot(g)[0]

    def _numeric(self, z, h=1e-5):
        base = self.value(z)
        grad = np.zeros_like(z)
        for i in range(len(z)):
            e = np.zeros_like(z)
            e[i] = h
            grad[i] = (self.value(z + e) - self.value(z - e)) / (2 * h)
        return base, grad


def infer_label(arch: mc.ModelArch, obs: ObservedGradient) -> int | None:
    """The unique negative entry of the output-bias gradient marks the label."""
    last = len(arch.layers) - 1
    _, sb = arch.offsets()[last]
    vals, vis = obs.values[sb], obs.visible[sb]
    if not vis.any():
        return None
    cand = np.where(vis, vals, np.inf)
    return int(np.argmin(cand))


def _init(rng, d, k, joint):
    x = rng.uniform(0, 1, size=d)
    return np.concatenate([x, rng.normal(size=k)]) if joint else x


def dlg_attack(obs: ObservedGradient, arch: mc.ModelArch, params: np.ndarray, cfg: AttackConfig,
               rng: np.random.Generator, target_ids=(0,)) -> AttackOutcome:
    """L-BFGS over a dummy image and soft label minimising squared gradient distance."""
    if obs.n_visible == 0:
        return failed_outcome(target_ids)
    obj = MatchingObjective(arch, params, obs, "l2")
    d, k = arch.input_size, arch.num_classes
    bounds = [(0.0, 1.0)] * d + [(None, None)] * k
    best = None
    for _ in range(max(1, cfg.restarts)):
        z0 = _init(rng, d, k, True)
        with np.errstate(all="ignore"):
            res = minimize(obj, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": cfg.budget, "maxfun": 2 * cfg.budget,
                                    "ftol": 1e-16, "gtol": 1e-12})
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        return failed_outcome(target_ids)
    x = best.x[:d]
    return AttackOutcome(x[None], np.asarray(target_ids[:1]), np.zeros(1, dtype=bool),
                         np.asarray(target_ids), loss=float(best.fun))


def inverting_attack(obs: ObservedGradient, arch: mc.ModelArch, params: np.ndarray, cfg: AttackConfig,
                     rng: np.random.Generator, target_ids=(0,)) -> AttackOutcome:
    """Cosine gradient matching plus total variation, Adam on signed gradients."""
    if obs.n_visible == 0:
        return failed_outcome(target_ids)
    label = infer_label(arch, obs)
    obj = MatchingObjective(arch, params, obs, "cos", cfg.tv_weight, label)
    d, k = arch.input_size, arch.num_classes
    n = cfg.budget
    milestones = (int(n * 3 / 8), int(n * 5 / 8), int(n * 7 / 8))
    best_val, best_x = np.inf, None
    for _ in range(max(1, cfg.restarts)):
        z = _init(rng, d, k, label is None)
        m = np.zeros_like(z)
        v = np.zeros_like(z)
        lr = cfg.lr
        b1, b2 = 0.9, 0.999
        for it in range(1, n + 1):
            if it - 1 in milestones:
                lr *= 0.1
            val, g = obj(z)
            g = np.sign(g)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            step = lr * (m / (1 - b1 ** it)) / (np.sqrt(v / (1 - b2 ** it)) + 1e-8)
            z = z - step
            z[:d] = np.clip(z[:d], 0.0, 1.0)
        val, _ = obj(z)
        if np.isfinite(val) and val < best_val:
            best_val, best_x = val, z[:d].copy()
    if best_x is None:
        return failed_outcome(target_ids)
    return AttackOutcome(best_x[None], np.asarray(target_ids[:1]), np.zeros(1, dtype=bool),
                         np.asarray(target_ids), loss=float(best_val))
