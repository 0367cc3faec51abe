"""Coarse-to-fine lifted optimization with evidence clustering.

Continuous evidence starts as one cluster whose members are clamped to the
cluster's Gaussian N(mean, var). Each stage runs a fixed number of Adam steps
on the compressed graph, splits every cluster whose variance exceeds the
threshold, recolors the split members and resumes color passing. When no
cluster splits, the exact evidence is absorbed and the final compressed graph
is optimized to convergence. Parameters and Adam moments of every new super
variable are copied from the super variable that held its first member.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import Unsplittable
from .graph import FactorGraph, condition
from .lifting import (
    CompressedGraph,
    Coloring,
    EvidenceClustering,
    color_passing,
    init_colors,
    resume_color_passing,
    split_cluster,
)
from .objective import Objective, ParamLayout
from .optimizer import AdamState, OptimConfig, RunTrace, minimize
from .variational import ObjectiveSpec


def default_threshold(graph: FactorGraph, evidence: dict, scale: float = 0.05) -> float:
    """``scale * range^2``: the domain range when finite, else the evidence range."""
    ranges = []
    for vid in evidence:
        dom = graph.variable(vid).domain
        if math.isfinite(dom.lower) and math.isfinite(dom.upper):
            ranges.append(dom.upper - dom.lower)
    if ranges:
        r = max(ranges)
    else:
        vals = np.array(list(evidence.values()), dtype=float)
        r = float(vals.max() - vals.min()) if vals.size else 0.0
    return scale * r * r if r > 0 else 1.0


def transfer(theta, old: ParamLayout, new: ParamLayout, parent: dict) -> np.ndarray:
    """Copy per-super-variable blocks of ``theta`` into a new layout.

    ``parent`` maps new super-variable indices to old ones. Global weight
    logits carry over unchanged.
    """
    w, mu, rho, cats = old.split(theta)
    K = new.K
    nmu = np.zeros((len(new.cont), K))
    nrho = np.zeros((len(new.cont), K))
    for i, s in enumerate(new.cont):
        j = old.slot[parent[s]][1]
        nmu[i], nrho[i] = mu[j], rho[j]
    ncats = []
    for C in new.cards:
        arr = np.zeros((len(new.cat[C]), K, C))
        src = cats[old.cards.index(C)]
        for i, s in enumerate(new.cat[C]):
            arr[i] = src[old.slot[parent[s]][2]]
        ncats.append(arr)
    return new.join(w, nmu, nrho, ncats)


def _transfer_state(state: AdamState, old, new, parent) -> AdamState:
    return replace(state, m=transfer(state.m, old, new, parent), v=transfer(state.v, old, new, parent))


@dataclass
class StageInfo:
    start_iteration: int
    n_clusters: int
    n_super_variables: int
    n_super_factors: int
    event: str


@dataclass
class C2FState:
    graph: FactorGraph  # discrete evidence absorbed, continuous evidence kept
    evidence: dict  # continuous evidence
    clustering: EvidenceClustering
    coloring: Coloring
    cg: CompressedGraph
    objective: Objective
    theta: np.ndarray
    adam: AdamState
    trace: RunTrace
    spec: ObjectiveSpec
    K: int
    stages: list = field(default_factory=list)
    converged: bool = False
    seed: int = 0
    clock: float = 0.0

    @property
    def next_iteration(self) -> int:
        return self.trace.records[-1].iteration + 1 if self.trace.records else 0


def _clamped(cg: CompressedGraph, clustering: EvidenceClustering) -> dict:
    cl = clustering.cluster_of()
    out = {}
    for s, sv in enumerate(cg.super_variables):
        if sv.members[0] in cl:
            c = clustering.clusters[cl[sv.members[0]]]
            out[s] = (c.mean, math.sqrt(c.variance))
    return out


def init_c2f(graph: FactorGraph, evidence: dict, spec: ObjectiveSpec, K: int, theta_init,
             threshold: float | None = None, seed: int = 0) -> C2FState:
    """Absorb discrete evidence, start one cluster, run color passing.

    ``theta_init(layout, rng)`` draws the starting parameter vector.
    """
    disc = {k: v for k, v in evidence.items() if graph.variable(k).is_discrete}
    cont = {k: float(v) for k, v in evidence.items() if k not in disc}
    g = condition(graph, disc)
    eps = default_threshold(g, cont) if threshold is None else threshold
    clustering = EvidenceClustering.single(cont, eps) if cont else EvidenceClustering((), eps)
    coloring, cg = color_passing(g, init_colors(g, cont, clustering if cont else None))
    obj = Objective(cg, spec, K, _clamped(cg, clustering))
    obj.warmup()
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta_init(obj.layout, rng), dtype=float)
    state = C2FState(g, cont, clustering, coloring, cg, obj, theta, AdamState.zeros(theta.size),
                     RunTrace(), spec, K, seed=seed, clock=time.perf_counter())
    state.stages.append(StageInfo(0, len(clustering.clusters), len(cg.super_variables),
                                  len(cg.super_factors), "start"))
    return state


def _split_all(state: C2FState):
    """Split every over-threshold cluster; returns (new clustering, recolor map)."""
    clusters, recolor = [], {}
    old_colors = state.coloring.variable_colors
    fresh = max(old_colors.values(), default=-1) + 1
    fresh_of = {}
    n_split = 0
    for c in state.clustering.clusters:
        if c.variance > state.clustering.threshold and c.n_distinct >= 2:
            try:
                children = split_cluster(c, seed=state.seed)
            except Unsplittable:
                clusters.append(c)
                continue
            n_split += 1
            for ci, child in enumerate(children):
                clusters.append(child)
                for m in child.members:
                    key = (old_colors[m], len(clusters), ci)
                    recolor[m] = fresh_of.setdefault(key, fresh + len(fresh_of))
        else:
            clusters.append(c)
    return EvidenceClustering(tuple(clusters), state.clustering.threshold), recolor, n_split


def c2f_step(state: C2FState, iters: int = 50, config: OptimConfig = OptimConfig()) -> C2FState:
    """Optimize the current level for ``iters`` steps, then refine the evidence clusters."""
    stage_cfg = replace(config, max_iters=iters)
    event = state.stages[-1].event if state.stages[-1].start_iteration == state.next_iteration else ""
    res = minimize(state.objective, state.theta, stage_cfg, state=state.adam, trace=state.trace,
                   start_iteration=state.next_iteration, clock_start=state.clock, first_event=event)
    theta, adam = res.last_params, res.state
    clustering, recolor, n_split = _split_all(state)
    if not n_split:
        return replace(state, theta=theta, adam=adam, converged=True)
    coloring, cg = resume_color_passing(state.graph, state.coloring, recolor)
    obj = Objective(cg, state.spec, state.K, _clamped(cg, clustering))
    clock = state.clock + obj.warmup()  # compilation is not optimization time
    parent = {s: state.cg.var_index[sv.members[0]] for s, sv in enumerate(cg.super_variables)
              if s in obj.layout.slot and obj.layout.slot[s][0] != "cl"}
    theta = transfer(theta, state.objective.layout, obj.layout, parent)
    adam = _transfer_state(adam, state.objective.layout, obj.layout, parent)
    nxt = replace(state, clustering=clustering, coloring=coloring, cg=cg, objective=obj, theta=theta, adam=adam,
                  clock=clock)
    nxt.stages = state.stages + [StageInfo(nxt.next_iteration, len(clustering.clusters), len(cg.super_variables),
                                           len(cg.super_factors), f"split:{len(clustering.clusters)}")]
    return nxt


@dataclass
class C2FResult:
    theta: np.ndarray
    value: float
    objective: Objective
    cg: CompressedGraph
    graph: FactorGraph  # fully conditioned
    trace: RunTrace
    stages: list
    reason: str


def absorb_and_finish(state: C2FState, config: OptimConfig = OptimConfig()) -> C2FResult:
    """Condition on the exact evidence, re-lift and optimize to convergence."""
    g = condition(state.graph, state.evidence)
    coloring, cg = color_passing(g, init_colors(g))
    obj = Objective(cg, state.spec, state.K)
    state.clock += obj.warmup()
    parent = {s: state.cg.var_index[sv.members[0]] for s, sv in enumerate(cg.super_variables)}
    theta = transfer(state.theta, state.objective.layout, obj.layout, parent)
    adam = _transfer_state(state.adam, state.objective.layout, obj.layout, parent)
    start = state.next_iteration
    state.stages.append(StageInfo(start, len(state.clustering.clusters), len(cg.super_variables),
                                  len(cg.super_factors), "absorb"))
    res = minimize(obj, theta, config, state=adam, trace=state.trace, start_iteration=start,
                   clock_start=state.clock, first_event="absorb")
    return C2FResult(res.params, res.value, obj, cg, g, state.trace, state.stages, res.reason)


def run_c2f(graph: FactorGraph, evidence: dict, spec: ObjectiveSpec, K: int, theta_init,
            config: OptimConfig = OptimConfig(), iters_per_stage: int = 50,
            threshold: float | None = None, max_stages: int = 100, seed: int = 0) -> C2FResult:
    state = init_c2f(graph, evidence, spec, K, theta_init, threshold, seed)
    for _ in range(max_stages):
        state = c2f_step(state, iters_per_stage, config)
        if state.converged:
            break
    return absorb_and_finish(state, config)
