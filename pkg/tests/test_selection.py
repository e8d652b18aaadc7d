import math

import pytest
from hypothesis import given, settings, strategies as st

from altfl import selection as sel
from altfl.selection import Candidate, ThresholdSet


def brute_force(cands, th):
    """Reference filter: membership tests written directly from the definitions, on index sets."""
    alive = set(range(len(cands)))
    for stage in th.order:
        if not alive:
            break
        if stage == "asr":
            m = min(cands[i].asr for i in alive)
            alive = {i for i in alive if cands[i].asr <= m + th.t_asr}
        elif stage == "acc":
            m = max(cands[i].accuracy for i in alive)
            alive = {i for i in alive if cands[i].accuracy >= m - th.t_acc}
        else:
            for metric in ("comm_bytes", "compute_seconds", "convergence_round"):
                m = min(getattr(cands[i], metric) for i in alive)
                if m != math.inf:
                    alive = {i for i in alive if getattr(cands[i], metric) <= (1 + th.t_sc) * m}
    return sorted(alive)


def _c(i, **kw):
    return Candidate("MP", "eta", str(i), **kw)


def test_filter_examples():
    g = [_c(0, asr=0.0), _c(1, asr=0.002), _c(2, asr=0.008)]
    assert [c.value for c in sel.filter_asr(g, 0.005)] == ["0", "1"]
    g = [_c(0, accuracy=0.56), _c(1, accuracy=0.54), _c(2, accuracy=0.50)]
    assert [c.value for c in sel.filter_acc(g, 0.04)] == ["0", "1"]
    g = [_c(0, comm_bytes=100), _c(1, comm_bytes=140), _c(2, comm_bytes=200)]
    assert [c.value for c in sel.filter_sc(g, 0.5)] == ["0", "1"]
    assert sel.filter_asr([], 0.1) == [] and sel.filter_sc([], 0.1) == []


def test_never_converged_does_not_filter():
    g = [_c(0, comm_bytes=1), _c(1, comm_bytes=1)]
    assert len(sel.filter_sc(g, 0.0)) == 2
    g = [_c(0, convergence_round=10), _c(1, convergence_round=30)]
    assert [c.value for c in sel.filter_sc(g, 0.5)] == ["0"]


cand = st.builds(
    Candidate,
    method=st.sampled_from(sel.METHOD_ORDER),
    asr=st.sampled_from([0.0, 0.001, 0.004, 0.005, 0.01, 0.2, 1.0]) | st.floats(0, 1),
    accuracy=st.floats(0, 1),
    comm_bytes=st.floats(1, 1e6),
    compute_seconds=st.floats(0.01, 100),
    convergence_round=st.sampled_from([math.inf, 20.0, 25.0, 40.0]) | st.integers(10, 200).map(float),
)
thresh = st.builds(ThresholdSet, st.sampled_from([0, 0.005, 0.05]), st.sampled_from([0, 0.04, 0.1]),
                   st.sampled_from([0, 0.5, 1.0]), st.sampled_from([sel.RQ2_ORDER, sel.RQ3_ORDER]))


@settings(max_examples=300, deadline=None)
@given(st.lists(cand, min_size=1, max_size=12), thresh)
def test_pipeline_matches_brute_force(cands, th):
    out = sel.run_pipeline(cands, th)[-1][1]
    expect = [cands[i] for i in brute_force(cands, th)]
    assert sorted(map(id, out)) == sorted(map(id, expect))
    assert out  # the minimiser / maximiser of each stage always survives


@settings(max_examples=200, deadline=None)
@given(st.lists(cand, min_size=1, max_size=10), thresh)
def test_nesting_idempotence_monotonicity(cands, th):
    stages = sel.run_pipeline(cands, th)
    prev = set(map(id, cands))
    for _, surv in stages:
        assert set(map(id, surv)) <= prev
        prev = set(map(id, surv))
    assert sel.filter_asr(sel.filter_asr(cands, th.t_asr), th.t_asr) == sel.filter_asr(cands, th.t_asr)
    assert sel.filter_acc(sel.filter_acc(cands, th.t_acc), th.t_acc) == sel.filter_acc(cands, th.t_acc)
    loose = ThresholdSet(th.t_asr * 2 + 0.01, th.t_acc, th.t_sc, th.order)
    assert set(map(id, sel.filter_asr(cands, th.t_asr))) <= set(map(id, sel.filter_asr(cands, loose.t_asr)))


def test_select_groups_and_orders():
    recs = [Candidate("DP-only", level="DLG", alpha=0.5, asr=0.0, accuracy=0.4),
            Candidate("MP", "eta", "0.2", level="DLG", alpha=0.5, asr=0.0, accuracy=0.6),
            Candidate("MP", "eta", "0.2", level="CAH", alpha=0.5, asr=0.3, accuracy=0.6),
            Candidate("PI", "rho", "1/2", level="CAH", alpha=0.5, asr=0.0, accuracy=0.45)]
    rq2 = {g.key: g for g in sel.select(recs, ThresholdSet.rq2())}
    assert [c.method for c in rq2[("CAH", 0.5)].survivors] == ["PI"]
    assert [c.method for c in rq2[("DLG", 0.5)].survivors] == ["MP"]
    rq3 = {g.key: g for g in sel.select(recs, ThresholdSet.rq3())}
    assert [c.method for c in rq3[("CAH", 0.5)].survivors] == ["MP"]


def test_describe_method():
    avail = [Candidate("MP", "eta", v) for v in ("0.05", "0.2", "0.4", "0.6", "0.8")]
    assert sel.describe_method("MP", avail, avail) == "MP"
    assert sel.describe_method("MP", avail[:4], avail) == "MP (excl. η=0.8)"
    assert sel.describe_method("MP", avail[1:3], avail) == "MP: η ∈ {0.2, 0.4}"
    assert sel.describe_method("DP-only", [Candidate("DP-only")], [Candidate("DP-only")]) == "DP-only"


def test_render_table_merges_rows():
    mk = lambda lv, a, m: sel.SelectionGroup((lv, a), [Candidate(m, level=lv, alpha=a)])
    groups = [mk("Std-1.0", 0.5, "PI"), mk("Std-0.75", 0.5, "PI"), mk("DLG", 0.5, "MP")]
    for g in groups:
        g.stages = sel.run_pipeline(g.candidates, ThresholdSet())
    text = sel.render_table(groups)
    assert "Std-1.0 to Std-0.75 | PI" in text and "DLG" in text
    assert sel.describe_group(sel.SelectionGroup(("x", 1), [])) == "no candidate"


def test_recommend():
    assert sel.recommend("strong", "accuracy").methods == ("PI",)
    low = sel.recommend("moderate", "low_communication")
    assert low.methods == ("SI/DP", "DP-only") and "DLG" in low.note
    assert sel.recommend("strong", "low_communication").methods == ("SI/DP", "DP-only")
    assert sel.recommend("moderate", "accuracy").methods == ("MP", "SI/HE")
    with pytest.raises(ValueError):
        sel.recommend("weak", "accuracy")
    with pytest.raises(ValueError):
        ThresholdSet(t_asr=-1)
