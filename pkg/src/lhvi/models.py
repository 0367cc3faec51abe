"""Seeded generators for the benchmark model families.

Each generator grounds a small relational template into a FactorGraph with
string variable ids such as ``"pos(A0)"`` or ``"Loss(S3,B1)"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Continuous, Discrete, FactorDecl, FactorGraph, VariableDecl, build_graph
from .potentials import (
    HybridFormulaPotential,
    LinearGaussianPotential,
    QuadraticPotential,
    atom,
    conj,
    const,
    eq,
    fsum,
    implies,
    neg,
    scalar_mul,
    var,
)

REAL = Continuous(-math.inf, math.inf)
BOOL = Discrete(2)
FAMILIES = ("toy-hmln", "paper-popularity", "rgm", "rkf")


def _prior(weight: float, center: float = 0.0) -> HybridFormulaPotential:
    return HybridFormulaPotential(weight, eq(var(0), const(center)))


# --------------------------------------------------------------------------
# Toy hybrid MLN


def gen_toy_hmln(nA: int, nB: int, nBox: int, seed: int = 0, pos_prior: float = 0.05,
                 max_brute_force_configs: int = 2 ** 20, max_brute_force_dims: int = 4):
    """Ground the two-formula attraction model.

    0.1: in(A,Box) & in(B,Box) -> attractedTo(A,B)
    0.2: !attractedTo(A,B) * [pos(A) = p1] + attractedTo(A,B) * [pos(B) = p2]

    p1, p2 ~ U(-1, 1) are drawn once per model so all groundings share them.
    Every pos variable also gets a weak prior ``pos_prior * [pos = 0]``; without
    it a pos(B) with attractedTo = 0 is unconstrained and Z diverges.

    Returns (graph, whether brute-force enumeration is within budget).
    """
    if min(nA, nB, nBox) < 1:
        raise ValueError("instance counts must be >= 1")
    rng = np.random.default_rng(seed)
    p1, p2 = rng.uniform(-1.0, 1.0, size=2)
    A = [f"A{i}" for i in range(nA)]
    B = [f"B{i}" for i in range(nB)]
    boxes = [f"Box{i}" for i in range(nBox)]
    variables = [VariableDecl(f"in({o},{x})", BOOL) for o in A + B for x in boxes]
    variables += [VariableDecl(f"attractedTo({a},{b})", BOOL) for a in A for b in B]
    variables += [VariableDecl(f"pos({o})", REAL) for o in A + B]

    rule1 = HybridFormulaPotential(0.1, implies(conj(atom(0), atom(1)), atom(2)))
    rule2 = HybridFormulaPotential(0.2, fsum(scalar_mul(neg(atom(0)), eq(var(1), const(p1))),
                                             scalar_mul(atom(0), eq(var(2), const(p2)))))
    factors = []
    for a in A:
        for b in B:
            for x in boxes:
                factors.append(FactorDecl(f"rule1({a},{b},{x})",
                                          (f"in({a},{x})", f"in({b},{x})", f"attractedTo({a},{b})"), rule1))
            factors.append(FactorDecl(f"rule2({a},{b})", (f"attractedTo({a},{b})", f"pos({a})", f"pos({b})"),
                                      rule2))
    if pos_prior > 0:
        prior = _prior(pos_prior)
        factors += [FactorDecl(f"prior({o})", (f"pos({o})",), prior) for o in A + B]
    graph = build_graph(variables, factors)
    n_disc = sum(v.is_discrete for v in graph.variables)
    tractable = n_disc <= math.log2(max_brute_force_configs) and nA + nB <= max_brute_force_dims
    return graph, tractable


# --------------------------------------------------------------------------
# Paper popularity


def gen_paper_popularity(nPapers: int, nTopics: int, seed: int = 0, evidence_fraction: float = 0.7,
                         domain: tuple = (0.0, 10.0)):
    """Ground the paper/topic popularity model and draw evidence.

    0.3: PaperPopularity(p) = 1
    0.5: SameSession(t1,t2) * [TopicPopularity(t1) = TopicPopularity(t2)]   (t1 != t2)
    0.5: In(p,t) * [PaperPopularity(p) = TopicPopularity(t)]

    Each paper and topic is observed with probability ``evidence_fraction``
    (value ~ U(domain)). In(p, .) is observed ~ Bernoulli(0.5) for papers
    selected with the same probability; every SameSession is observed.
    """
    if min(nPapers, nTopics) < 1:
        raise ValueError("instance counts must be >= 1")
    if not 0.0 <= evidence_fraction <= 1.0:
        raise ValueError("evidence fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    dom = Continuous(*domain)
    P = [f"P{i}" for i in range(nPapers)]
    T = [f"T{i}" for i in range(nTopics)]
    pp = {p: f"PaperPopularity({p})" for p in P}
    tp = {t: f"TopicPopularity({t})" for t in T}
    pairs = [(t1, t2) for t1 in T for t2 in T if t1 != t2]
    variables = [VariableDecl(pp[p], dom) for p in P] + [VariableDecl(tp[t], dom) for t in T]
    variables += [VariableDecl(f"In({p},{t})", BOOL) for p in P for t in T]
    variables += [VariableDecl(f"SameSession({a},{b})", BOOL) for a, b in pairs]

    prior = _prior(0.3, 1.0)
    tie = HybridFormulaPotential(0.5, scalar_mul(atom(0), eq(var(1), var(2))))
    factors = [FactorDecl(f"prior({p})", (pp[p],), prior) for p in P]
    factors += [FactorDecl(f"session({a},{b})", (f"SameSession({a},{b})", tp[a], tp[b]), tie) for a, b in pairs]
    factors += [FactorDecl(f"in({p},{t})", (f"In({p},{t})", pp[p], tp[t]), tie) for p in P for t in T]
    graph = build_graph(variables, factors)

    lo, hi = domain
    evidence = {}
    for p in P:
        if rng.random() < evidence_fraction:
            evidence[pp[p]] = float(rng.uniform(lo, hi))
    for t in T:
        if rng.random() < evidence_fraction:
            evidence[tp[t]] = float(rng.uniform(lo, hi))
    for p in P:
        if rng.random() < evidence_fraction:
            for t in T:
                evidence[f"In({p},{t})"] = int(rng.random() < 0.5)
    for a, b in pairs:
        evidence[f"SameSession({a},{b})"] = int(rng.random() < 0.5)
    return graph, evidence


# --------------------------------------------------------------------------
# Relational Gaussian model


def gen_rgm(nMarkets: int, nBanks: int, seed: int = 0, var_range: tuple = (1.0, 5.0),
            recession_prior_var: float = 1.0) -> FactorGraph:
    """Recession -> Market(S) -> Loss(S,B) -> Revenue(B) Gaussian MRF.

    Every edge is a LinearGaussian(a=1, m=0, var) whose variance is drawn once
    per edge type from U(var_range). A unary prior N(0, recession_prior_var) on
    Recession pins the otherwise translation-invariant model.
    """
    if min(nMarkets, nBanks) < 1:
        raise ValueError("instance counts must be >= 1")
    rng = np.random.default_rng(seed)
    v_rm, v_ml, v_lr = rng.uniform(*var_range, size=3)
    S = [f"S{i}" for i in range(nMarkets)]
    B = [f"B{i}" for i in range(nBanks)]
    variables = [VariableDecl("Recession", REAL)]
    variables += [VariableDecl(f"Market({s})", REAL) for s in S]
    variables += [VariableDecl(f"Loss({s},{b})", REAL) for s in S for b in B]
    variables += [VariableDecl(f"Revenue({b})", REAL) for b in B]
    f_rm = LinearGaussianPotential(1.0, 0.0, v_rm)
    f_ml = LinearGaussianPotential(1.0, 0.0, v_ml)
    f_lr = LinearGaussianPotential(1.0, 0.0, v_lr)
    factors = [FactorDecl("prior(Recession)", ("Recession",),
                          QuadraticPotential([[0.5 / recession_prior_var]], [0.0]))]
    factors += [FactorDecl(f"rm({s})", (f"Market({s})", "Recession"), f_rm) for s in S]
    factors += [FactorDecl(f"ml({s},{b})", (f"Loss({s},{b})", f"Market({s})"), f_ml) for s in S for b in B]
    factors += [FactorDecl(f"lr({s},{b})", (f"Revenue({b})", f"Loss({s},{b})"), f_lr) for s in S for b in B]
    return build_graph(variables, factors)


def random_evidence(graph: FactorGraph, fraction: float, seed: int = 0, low: float = -30.0,
                    high: float = 30.0) -> dict:
    """Observe round(fraction * n) continuous variables at U(low, high) values."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("evidence fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    ids = [v.id for v in graph.variables if not v.is_discrete]
    n = int(round(fraction * len(ids)))
    chosen = sorted(rng.choice(len(ids), size=n, replace=False).tolist())
    return {ids[i]: float(rng.uniform(low, high)) for i in chosen}


# --------------------------------------------------------------------------
# Relational Kalman filter


def gen_rkf(nWells: int, nSteps: int = 20, structure: str = "tree", seed: int = 0,
            obs_fraction: float = 0.8):
    """Linear-Gaussian state-space model over wells x time, as pairwise factors.

    A = alpha*I (tree) or alpha*I + 0.01 (cycle), C = I, Q = beta*I, R = gamma*I,
    alpha ~ U(0.5,1), beta ~ U(5,10), gamma ~ U(1,5) shared by all wells.
    The tree variant links each well to its own past; the cycle variant links
    every state to every well's previous state with coefficient A[w, w'].
    x(w,0) gets the prior N(0, beta). Synthetic states are simulated from the
    model (the cycle variant uses the rank-one noise beta*J) and each
    observation o(w,t) is kept with probability ``obs_fraction``.

    Returns (graph including observation variables, observation evidence).
    """
    if nWells < 1 or nSteps < 2:
        raise ValueError("need nWells >= 1 and nSteps >= 2")
    if structure not in ("tree", "cycle"):
        raise ValueError(f"unknown structure {structure!r}")
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.5, 1.0)
    beta = rng.uniform(5.0, 10.0)
    gamma = rng.uniform(1.0, 5.0)
    A = alpha * np.eye(nWells) + (0.01 if structure == "cycle" else 0.0)

    x = np.zeros((nSteps, nWells))
    x[0] = math.sqrt(beta) * rng.standard_normal(nWells)
    for t in range(1, nSteps):
        if structure == "tree":
            noise = math.sqrt(beta) * rng.standard_normal(nWells)
        else:
            noise = math.sqrt(beta) * rng.standard_normal() * np.ones(nWells)
        x[t] = A @ x[t - 1] + noise
    obs = x + math.sqrt(gamma) * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) < obs_fraction

    W = [f"W{i}" for i in range(nWells)]
    sid = lambda w, t: f"x({w},{t})"  # noqa: E731
    oid = lambda w, t: f"o({w},{t})"  # noqa: E731
    variables = [VariableDecl(sid(w, t), REAL) for t in range(nSteps) for w in W]
    variables += [VariableDecl(oid(W[i], t), REAL) for t in range(nSteps) for i in range(nWells) if keep[t, i]]
    init = QuadraticPotential([[0.5 / beta]], [0.0])
    emit = LinearGaussianPotential(1.0, 0.0, 2.0 * gamma)
    factors = [FactorDecl(f"init({w})", (sid(w, 0),), init) for w in W]
    for t in range(1, nSteps):
        for i, w in enumerate(W):
            for j, u in enumerate(W):
                if A[i, j] == 0.0:
                    continue
                factors.append(FactorDecl(f"trans({w},{u},{t})", (sid(w, t), sid(u, t - 1)),
                                          LinearGaussianPotential(A[i, j], 0.0, 2.0 * beta)))
    evidence = {}
    for t in range(nSteps):
        for i, w in enumerate(W):
            if keep[t, i]:
                factors.append(FactorDecl(f"emit({w},{t})", (oid(w, t), sid(w, t)), emit))
                evidence[oid(w, t)] = float(obs[t, i])
    return build_graph(variables, factors), evidence


def has_cycle(graph: FactorGraph) -> bool:
    """Whether the bipartite variable-factor graph contains a cycle."""
    parent = {}

    def find(u):
        while parent.setdefault(u, u) != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for f in graph.factors:
        for v in f.scope:
            a, b = find(("v", v)), find(("f", f.id))
            if a == b:
                return True
            parent[a] = b
    return False


# --------------------------------------------------------------------------
# Config-driven entry point


@dataclass
class GeneratorConfig:
    family: str
    sizes: dict = field(default_factory=dict)
    evidence_fraction: float | None = None
    seed: int = 0
    structure: str = "tree"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        for k, v in self.sizes.items():
            if int(v) < 1:
                raise ValueError(f"size {k} must be positive")
        if self.evidence_fraction is not None and not 0.0 <= self.evidence_fraction <= 1.0:
            raise ValueError("evidence fraction must lie in [0, 1]")


def generate(cfg: GeneratorConfig):
    """Returns (graph, evidence) for any family."""
    s = cfg.sizes
    if cfg.family == "toy-hmln":
        graph, _ = gen_toy_hmln(s.get("nA", 2), s.get("nB", 3), s.get("nBox", 2), cfg.seed)
        return graph, {}
    if cfg.family == "paper-popularity":
        frac = 0.7 if cfg.evidence_fraction is None else cfg.evidence_fraction
        return gen_paper_popularity(s.get("nPapers", 300), s.get("nTopics", 10), cfg.seed, frac)
    if cfg.family == "rgm":
        graph = gen_rgm(s.get("nMarkets", 100), s.get("nBanks", 5), cfg.seed)
        frac = cfg.evidence_fraction or 0.0
        seq = np.random.SeedSequence(cfg.seed).spawn(1)[0]
        return graph, random_evidence(graph, frac, int(seq.generate_state(1)[0])) if frac else {}
    frac = 0.8 if cfg.evidence_fraction is None else cfg.evidence_fraction
    return gen_rkf(s.get("nWells", 10), s.get("nSteps", 20), cfg.structure, cfg.seed, frac)
