"""Threshold-based method selection and the objective-oriented recommendation.

Candidates are filtered in stages: attack success (absolute slack over the
group minimum), accuracy (absolute slack under the group maximum) and system
cost (relative slack over the minimum, applied to communication, computation
and convergence time in turn). Each stage only sees the previous survivors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import groupby

RQ2_ORDER = ("asr", "acc", "sc")
RQ3_ORDER = ("acc", "asr", "sc")
COST_METRICS = ("comm_bytes", "compute_seconds", "convergence_round")
METHOD_ORDER = ("FedAvg", "DP-only", "HE-only", "SI/DP", "SI/HE", "PI", "MP")


@dataclass(frozen=True)
class Candidate:
    method: str
    param: str = ""              # "eta" for MP, "rho" for interleaved methods, "" otherwise
    value: str = ""              # configuration value as written, e.g. "0.2" or "3/5"
    level: str = ""
    alpha: float = 0.0
    asr: float = 0.0
    accuracy: float = 0.0
    comm_bytes: float = 0.0
    compute_seconds: float = 0.0
    convergence_round: float = math.inf   # inf when the run never converged

    @property
    def label(self) -> str:
        return f"{self.method}({self.param}={self.value})" if self.param else self.method

    def metric(self, name: str) -> float:
        return float(getattr(self, name))


@dataclass(frozen=True)
class ThresholdSet:
    t_asr: float = 0.005
    t_acc: float = 0.04
    t_sc: float = 0.5
    order: tuple = RQ2_ORDER

    def __post_init__(self):
        if min(self.t_asr, self.t_acc, self.t_sc) < 0:
            raise ValueError("thresholds must be non-negative")
        if sorted(self.order) != sorted(RQ2_ORDER):
            raise ValueError(f"order must be a permutation of {RQ2_ORDER}")

    @classmethod
    def rq2(cls, t_asr=0.005, t_acc=0.04, t_sc=0.5):
        return cls(t_asr, t_acc, t_sc, RQ2_ORDER)

    @classmethod
    def rq3(cls, t_asr=0.005, t_acc=0.1, t_sc=0.5):
        return cls(t_asr, t_acc, t_sc, RQ3_ORDER)


def filter_asr(group, t_asr: float) -> list:
    if not group:
        return []
    lo = min(c.asr for c in group)
    return [c for c in group if c.asr <= lo + t_asr]


def filter_acc(group, t_acc: float) -> list:
    if not group:
        return []
    hi = max(c.accuracy for c in group)
    return [c for c in group if c.accuracy >= hi - t_acc]


def _within(values, t):
    lo = min(values)
    return [v <= (1 + t) * lo if math.isfinite(lo) else True for v in values]


def filter_sc(group, t_sc: float, metrics=COST_METRICS) -> list:
    """Each cost metric in turn keeps records within (1 + t_sc) times the current minimum."""
    out = list(group)
    for m in metrics:
        if not out:
            break
        keep = _within([c.metric(m) for c in out], t_sc)
        out = [c for c, k in zip(out, keep) if k]
    return out


@dataclass
class SelectionGroup:
    key: tuple
    candidates: list
    stages: list = field(default_factory=list)   # (stage name, survivors)

    @property
    def survivors(self) -> list:
        return self.stages[-1][1] if self.stages else list(self.candidates)


def run_pipeline(group, thresholds: ThresholdSet) -> list:
    stages, cur = [], list(group)
    for name in thresholds.order:
        if name == "asr":
            cur = filter_asr(cur, thresholds.t_asr)
        elif name == "acc":
            cur = filter_acc(cur, thresholds.t_acc)
        else:
            cur = filter_sc(cur, thresholds.t_sc)
        stages.append((name, cur))
    return stages


def select(records, thresholds: ThresholdSet = ThresholdSet(), grouping=("level", "alpha")) -> list[SelectionGroup]:
    """Group records and run the nested filters in each group."""
    def key(c):
        return tuple(getattr(c, g) for g in grouping)
    groups = {}
    for c in records:
        groups.setdefault(key(c), []).append(c)
    out = []
    for k in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        g = SelectionGroup(k, groups[k])
        g.stages = run_pipeline(g.candidates, thresholds)
        out.append(g)
    return out


# --- rendering -----------------------------------------------------------------

_SYMBOL = {"eta": "η", "rho": "ρ"}


def _sort_value(v: str):
    try:
        return float(Fraction(v))
    except (ValueError, ZeroDivisionError):
        return math.inf


def _set_text(param, values):
    vals = sorted(values, key=_sort_value)
    sym = _SYMBOL.get(param, param)
    if len(vals) == 1:
        return f"{sym}={vals[0]}"
    return f"{sym} ∈ {{{', '.join(vals)}}}"


def describe_method(method: str, chosen, available) -> str:
    """Collapsed text for one method: bare when every configuration survives."""
    chosen = {c.value for c in chosen}
    avail = {c.value for c in available}
    param = next((c.param for c in available if c.param), "")
    if not param or chosen == avail:
        return method
    excluded = avail - chosen
    if len(excluded) < len(chosen):
        return f"{method} (excl. {_set_text(param, excluded)})"
    return f"{method}: {_set_text(param, chosen)}"


def describe_group(group: SelectionGroup) -> str:
    if not group.candidates:
        return "no candidate"
    surv = group.survivors
    if not surv:
        return "no candidate"
    parts = []
    methods = sorted({c.method for c in surv}, key=lambda m: (METHOD_ORDER.index(m) if m in METHOD_ORDER else 99, m))
    for m in methods:
        parts.append(describe_method(m, [c for c in surv if c.method == m],
                                     [c for c in group.candidates if c.method == m]))
    return ", ".join(parts)


def render_table(groups: list[SelectionGroup], row_key: int = 0, col_key: int = 1, row_order=None,
                 merge_rows: bool = True) -> str:
    """Rows are privacy levels (or another key), columns alpha; identical consecutive rows merge."""
    cells = {(g.key[row_key], g.key[col_key]): describe_group(g) for g in groups}
    rows = list(dict.fromkeys(g.key[row_key] for g in groups))
    if row_order:
        rows = [r for r in row_order if r in rows] + [r for r in rows if r not in row_order]
    cols = sorted({g.key[col_key] for g in groups}, key=lambda x: (str(type(x)), x))
    body = [(r, [cells.get((r, c), "no candidate") for c in cols]) for r in rows]
    if merge_rows:
        merged = []
        for _, run in groupby(body, key=lambda rc: tuple(rc[1])):
            run = list(run)
            name = run[0][0] if len(run) == 1 else f"{run[0][0]} to {run[-1][0]}"
            merged.append((name, run[0][1]))
        body = merged
    header = ["level"] + [f"alpha={c}" for c in cols]
    table = [header] + [[str(n)] + list(v) for n, v in body]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = [" | ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# --- recommendation ---------------------------------------------------------------

@dataclass(frozen=True)
class Recommendation:
    methods: tuple
    note: str = ""


def recommend(privacy_requirement: str, priority: str) -> Recommendation:
    """Objective-oriented choice between the interleaving methods."""
    if privacy_requirement not in ("strong", "moderate"):
        raise ValueError("privacy_requirement must be 'strong' or 'moderate'")
    if priority not in ("accuracy", "low_communication"):
        raise ValueError("priority must be 'accuracy' or 'low_communication'")
    if privacy_requirement == "strong" and priority == "accuracy":
        return Recommendation(("PI",), "only method that mitigates the accuracy loss of strong DP")
    if priority == "low_communication":
        note = "lowest communication cost"
        if privacy_requirement == "moderate":
            note += "; adequate only up to the DLG level, use HE-based methods against stronger attacks"
        return Recommendation(("SI/DP", "DP-only"), note)
    return Recommendation(("MP", "SI/HE"), "choose by accuracy and cost at the required level")
