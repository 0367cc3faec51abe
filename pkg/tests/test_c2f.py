import numpy as np
import pytest

from lhvi.c2f import c2f_step, default_threshold, init_c2f, run_c2f, transfer
from lhvi.fit import random_theta
from lhvi.graph import Continuous, FactorDecl, VariableDecl, build_graph
from lhvi.models import gen_rgm, random_evidence
from lhvi.optimizer import OptimConfig
from lhvi.potentials import LinearGaussianPotential
from lhvi.variational import ObjectiveSpec, expand

SPEC = ObjectiveSpec("bethe")
CFG = OptimConfig(max_iters=200, lr=0.1)


def rgm_case(frac=0.4):
    g = gen_rgm(6, 2)
    return g, random_evidence(g, frac, seed=3)


def test_no_split_when_threshold_is_large():
    g, ev = rgm_case()
    st = init_c2f(g, ev, SPEC, 1, random_theta, threshold=1e9)
    nxt = c2f_step(st, 10, CFG)
    assert nxt.converged
    assert len(nxt.clustering.clusters) == 1
    assert len(nxt.stages) == 1


def test_single_split_adds_one_cluster():
    g, ev = rgm_case()
    st = init_c2f(g, ev, SPEC, 1, random_theta, threshold=1e-6)
    assert len(st.clustering.clusters) == 1
    nxt = c2f_step(st, 10, CFG)
    assert not nxt.converged
    assert len(nxt.clustering.clusters) == 2
    assert nxt.stages[-1].event == "split:2"
    assert nxt.stages[-1].start_iteration == 11  # initial record + 10 steps
    assert len(nxt.cg.super_variables) >= len(st.cg.super_variables)


def test_every_over_threshold_cluster_splits():
    g, ev = rgm_case()
    st = init_c2f(g, ev, SPEC, 1, random_theta, threshold=1e-6)
    st = c2f_step(st, 5, CFG)
    n_big = sum(c.variance > 1e-6 and c.n_distinct >= 2 for c in st.clustering.clusters)
    nxt = c2f_step(st, 5, CFG)
    assert len(nxt.clustering.clusters) == len(st.clustering.clusters) + n_big


def test_transfer_keeps_ground_parameters():
    g, ev = rgm_case()
    st = init_c2f(g, ev, SPEC, 2, random_theta, threshold=1e-6, seed=4)
    # a negligible step size leaves theta where the split finds it
    nxt = c2f_step(st, 1, OptimConfig(max_iters=1, lr=1e-300))
    old_q = expand(st.objective.mixture(st.theta), st.cg)
    new_q = expand(nxt.objective.mixture(nxt.theta), nxt.cg)
    np.testing.assert_allclose(new_q.weight_logits, old_q.weight_logits, atol=1e-9)
    for vid, m in new_q.marginals.items():
        np.testing.assert_allclose(m.mean, old_q.marginals[vid].mean, atol=1e-9)
        np.testing.assert_allclose(m.log_std, old_q.marginals[vid].log_std, atol=1e-9)


def test_transfer_maps_adam_moments():
    g, ev = rgm_case()
    st = init_c2f(g, ev, SPEC, 1, random_theta, threshold=1e-6)
    nxt = c2f_step(st, 3, CFG)
    parent = {s: st.cg.var_index[sv.members[0]] for s, sv in enumerate(nxt.cg.super_variables)
              if s in nxt.objective.layout.slot and nxt.objective.layout.slot[s][0] != "cl"}
    assert nxt.adam.m.shape == nxt.theta.shape
    assert nxt.adam.t == 3
    # zero vectors map to zero vectors
    z = transfer(np.zeros(st.theta.size), st.objective.layout, nxt.objective.layout, parent)
    assert not z.any()


def test_run_c2f_trace_has_split_and_absorb_events():
    g, ev = rgm_case()
    res = run_c2f(g, ev, SPEC, 1, random_theta, CFG, iters_per_stage=10, threshold=1e-6)
    events = [r.event for r in res.trace.events()]
    assert any(e.startswith("split:") for e in events)
    assert "absorb" in events
    clusters = [s.n_clusters for s in res.stages]
    assert clusters == sorted(clusters)
    assert np.isfinite(res.value)
    its = [r.iteration for r in res.trace.records]
    assert its == list(range(len(its)))


def test_default_threshold():
    g = build_graph([VariableDecl("a", Continuous(0.0, 10.0)), VariableDecl("b", Continuous(0.0, 10.0))],
                    [FactorDecl("f", ("a", "b"), LinearGaussianPotential())])
    assert default_threshold(g, {"a": 1.0}) == pytest.approx(0.05 * 100)
    r = gen_rgm(2, 1)
    assert default_threshold(r, {"Market(S0)": -2.0, "Market(S1)": 2.0}) == pytest.approx(0.05 * 16)
    assert default_threshold(r, {}) == 1.0
