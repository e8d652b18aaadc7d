"""Attack-success matrices over (sigma, eta) and the privacy levels read off them.

A level maps every encryption ratio eta to the smallest noise multiplier sigma
that pushes an attack below a near-zero success threshold. Attack-specific
levels come from one matrix each; Infimum and Supremum are their column-wise
min and max; Std-X levels use a fixed sigma = X with full encryption for the
HE part.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks.common import ATTACKS, AttackConfig

THRESHOLD = 0.005
SIGMA_GRID = (0.0, 0.00005, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0)
ETA_GRID = (0.0, 0.05, 0.2, 0.4, 0.6, 0.7, 0.8, 1.0)
STD_SIGMAS = (1.0, 0.75, 0.5, 0.25, 0.1)
LEVEL_ORDER = tuple(f"Std-{s}" for s in STD_SIGMAS) + ("Supremum", "DLG", "Inverting", "RTF", "CAH", "Infimum")


class LevelError(ValueError):
    pass


@dataclass
class SuccessMatrix:
    attack: str
    sigmas: tuple
    etas: tuple
    rates: np.ndarray                      # (len(sigmas), len(etas))
    trials: int = 0

    def __post_init__(self):
        self.sigmas = tuple(float(s) for s in self.sigmas)
        self.etas = tuple(float(e) for e in self.etas)
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.shape != (len(self.sigmas), len(self.etas)):
            raise LevelError(f"rates shape {self.rates.shape} does not match the grids")
        if list(self.sigmas) != sorted(set(self.sigmas)) or list(self.etas) != sorted(set(self.etas)):
            raise LevelError("grids must be strictly ascending")
        if np.any(self.rates < 0) or np.any(self.rates > 1):
            raise LevelError("success rates must lie in [0, 1]")

    def column(self, eta: float) -> np.ndarray:
        if eta not in self.etas:
            raise LevelError(f"eta={eta} not in grid {self.etas}")
        return self.rates[:, self.etas.index(eta)]

    def row(self, sigma: float) -> np.ndarray:
        if sigma not in self.sigmas:
            raise LevelError(f"sigma={sigma} not in grid {self.sigmas}")
        return self.rates[self.sigmas.index(sigma)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"sigma\\eta ({self.attack}, trials={self.trials})"] + [repr(e) for e in self.etas])
        for s, row in zip(self.sigmas, self.rates):
            w.writerow([repr(s)] + [repr(float(r)) for r in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, attack: str | None = None) -> "SuccessMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        head = rows[0]
        name, trials = attack, 0
        if "(" in head[0]:
            inner = head[0][head[0].index("(") + 1:head[0].rindex(")")]
            parts = dict(p.strip().split("=") for p in inner.split(",")[1:] if "=" in p)
            name = name or inner.split(",")[0].strip()
            trials = int(parts.get("trials", 0))
        etas = [float(x) for x in head[1:]]
        sigmas = [float(r[0]) for r in rows[1:]]
        rates = [[float(x) for x in r[1:]] for r in rows[1:]]
        return cls(name or "unknown", sigmas, etas, np.array(rates), trials)


def build_matrix(env, attack: str | AttackConfig, sigmas=SIGMA_GRID, etas=ETA_GRID, trials: int = 200,
                 seed: int = 0, workers: int = 1) -> SuccessMatrix:
    """Every cell runs ``trials`` trials with DP (sigma) and S-HE (eta) active together.

    All cells share the same trial seeds so that neighbouring cells differ only
    in the protection applied.
    """
    from .attacks.trials import trial_rates
    if not sigmas or not etas:
        raise LevelError("grids must be non-empty")
    if trials < 1:
        raise LevelError("need at least one trial per cell")
    cfg = attack if isinstance(attack, AttackConfig) else AttackConfig(attack)
    plan = [(s, e) for s in sigmas for e in etas for _ in range(trials)]
    seeds = [seed + i for _ in range(len(sigmas) * len(etas)) for i in range(trials)]
    rates = trial_rates(env, cfg, plan, seeds=seeds, workers=workers)
    rates = rates.reshape(len(sigmas), len(etas), trials).mean(axis=2)
    return SuccessMatrix(cfg.kind, tuple(sigmas), tuple(etas), rates, trials)


def _first_below(grid, rates, threshold):
    for g, r in zip(grid, rates):
        if r < threshold:
            return g
    return None


def extract_dp_sigma(m: SuccessMatrix, threshold: float = THRESHOLD) -> float | None:
    """Smallest sigma in the eta = 0 column with success below ``threshold``; None if none."""
    return _first_below(m.sigmas, m.column(0.0), threshold)


def extract_he_eta(m: SuccessMatrix, threshold: float = THRESHOLD) -> float | None:
    """Smallest eta in the sigma = 0 row with success below ``threshold``; None if none."""
    return _first_below(m.etas, m.row(0.0), threshold)


def extract_mp_sigma(m: SuccessMatrix, eta: float, threshold: float = THRESHOLD) -> float | None:
    return _first_below(m.sigmas, m.column(eta), threshold)


@dataclass
class PrivacyLevel:
    name: str
    sigma: dict = field(default_factory=dict)      # eta -> sigma, None where unattainable
    min_eta: float | None = None                   # smallest eta needing no noise
    fixed: float | None = None                     # Std-X levels: constant sigma

    def sigma_at(self, eta: float) -> float | None:
        if self.fixed is not None:
            return self.fixed
        if eta not in self.sigma:
            raise LevelError(f"level {self.name} has no entry for eta={eta}")
        return self.sigma[eta]

    @property
    def he_eta(self) -> float | None:
        """Encryption ratio used by HE-based methods at this level."""
        return 1.0 if self.fixed is not None else self.min_eta

    def to_json(self) -> dict:
        return {repr(float(e)): s for e, s in sorted(self.sigma.items())}


def _min_zero_eta(sigma: dict):
    for e in sorted(sigma):
        if sigma[e] == 0:
            return e
    return None


def attack_level(m: SuccessMatrix, threshold: float = THRESHOLD) -> PrivacyLevel:
    """Attack-specific level: sigma per eta column, and zero from the first sufficient eta on."""
    eta_min = extract_he_eta(m, threshold)
    sigma = {}
    for e in m.etas:
        if eta_min is not None and e >= eta_min:
            sigma[e] = 0.0
        else:
            sigma[e] = extract_mp_sigma(m, e, threshold)
    return PrivacyLevel(m.attack, sigma, eta_min)


def std_level(x: float, etas=ETA_GRID) -> PrivacyLevel:
    return PrivacyLevel(f"Std-{x}", {float(e): float(x) for e in etas}, 1.0, float(x))


def derive_levels(inputs: dict, threshold: float = THRESHOLD, std=STD_SIGMAS) -> list[PrivacyLevel]:
    """Std, attack-specific, Infimum and Supremum levels.

    ``inputs`` maps each attack to a SuccessMatrix, or directly to its
    PrivacyLevel (or a plain {eta: sigma} row).
    """
    missing = [a for a in ATTACKS if a not in inputs]
    if missing:
        raise LevelError(f"missing attacks: {missing}")
    per = {}
    for a in ATTACKS:
        v = inputs[a]
        if isinstance(v, SuccessMatrix):
            per[a] = attack_level(v, threshold)
        elif isinstance(v, PrivacyLevel):
            per[a] = v
        else:
            row = {float(e): (None if s is None else float(s)) for e, s in v.items()}
            per[a] = PrivacyLevel(a, row, _min_zero_eta(row))
    etas = sorted(set.intersection(*(set(p.sigma) for p in per.values())))
    inf, sup = {}, {}
    for e in etas:
        vals = [per[a].sigma[e] for a in ATTACKS]
        if any(v is None for v in vals):
            inf[e] = sup[e] = None
        else:
            inf[e], sup[e] = min(vals), max(vals)
    found = {a: per[a] for a in ATTACKS}
    found["Infimum"] = PrivacyLevel("Infimum", inf, _min_zero_eta(inf))
    found["Supremum"] = PrivacyLevel("Supremum", sup, _min_zero_eta(sup))
    for x in std:
        lv = std_level(x, etas)
        found[lv.name] = lv
    order = [n for n in LEVEL_ORDER if n in found] + [n for n in found if n not in LEVEL_ORDER]
    return [found[n] for n in order]


def levels_to_json(levels: list[PrivacyLevel]) -> str:
    return json.dumps({lv.name: lv.to_json() for lv in levels}, indent=2) + "\n"


def levels_from_json(text: str) -> list[PrivacyLevel]:
    out = []
    for name, row in json.loads(text).items():
        sigma = {float(e): (None if s is None else float(s)) for e, s in row.items()}
        if name.startswith("Std-"):
            out.append(std_level(float(name[4:]), sigma))
        else:
            out.append(PrivacyLevel(name, sigma, _min_zero_eta(sigma)))
    return out


def read_levels(path) -> list[PrivacyLevel]:
    return levels_from_json(Path(path).read_text())


def format_levels(levels: list[PrivacyLevel]) -> str:
    """Plain-text table, levels as rows and eta as columns; [0] marks each level's minimal eta."""
    etas = sorted(set().union(*(lv.sigma for lv in levels)))
    lines = ["level      " + "".join(f"{e:>10g}" for e in etas)]
    for lv in levels:
        cells = []
        for e in etas:
            s = lv.sigma.get(e)
            if lv.fixed is not None:
                txt = f"{lv.fixed:g}"
            elif s is None:
                txt = "-"
            elif s == 0 and e == lv.min_eta:
                txt = "[0]"
            else:
                txt = f"{s:g}"
            cells.append(f"{txt:>10}")
        lines.append(f"{lv.name:<11}" + "".join(cells))
    return "\n".join(lines) + "\n"
