"""End-to-end fitting: condition, lift, optimize, expand back to ground ids."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .c2f import run_c2f
from .graph import FactorGraph, condition
from .lifting import CompressedGraph, lift, trivial_compression
from .objective import Objective, ParamLayout
from .optimizer import OptimConfig, RunTrace, minimize
from .variational import (
    CategoricalMarginal,
    GaussianMarginal,
    MixtureMeanField,
    ObjectiveSpec,
    expand,
)


@dataclass
class FitConfig:
    entropy: str = "bethe"
    mode: str = "ground"
    K: int = 1
    order: int = 8
    delta: float = 1e-300
    seed: int = 0
    n_starts: int = 1
    optim: OptimConfig = field(default_factory=OptimConfig)
    iters_per_stage: int = 50
    threshold: float | None = None
    init_noise: float = 0.1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if isinstance(self.optim, dict):
            self.optim = OptimConfig(**self.optim)
        self.spec  # validates entropy / mode / delta

    @property
    def spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.entropy, self.order, self.mode, self.delta)

    def to_json(self) -> dict:
        return asdict(self)


def seed_streams(seed: int) -> dict:
    """Independent named sub-seeds derived from one master seed."""
    names = ("generation", "evidence", "init", "optimizer")
    return dict(zip(names, (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def random_theta(layout: ParamLayout, rng: np.random.Generator, noise: float = 0.1):
    """Means uniform over bounded domains (else [-1, 1]), log-std 0, jittered logits, uniform weights."""
    K = layout.K
    svs = layout.cg.super_variables
    mu = np.zeros((len(layout.cont), K))
    for i, s in enumerate(layout.cont):
        dom = svs[s].domain
        lo, hi = (dom.lower, dom.upper) if dom.bounded else (-1.0, 1.0)
        mu[i] = rng.uniform(lo, hi, size=K)
    cats = [noise * rng.standard_normal((len(layout.cat[C]), K, C)) for C in layout.cards]
    return layout.join(np.zeros(K), mu, np.zeros_like(mu), cats)


@dataclass
class FitResult:
    q: MixtureMeanField  # keyed by ground ids of ``graph``
    graph: FactorGraph  # conditioned graph the objective was defined on
    cg: CompressedGraph
    objective_value: float
    trace: RunTrace
    n_params: int
    reason: str
    stages: list = field(default_factory=list)
    config: FitConfig | None = None

    def report(self) -> dict:
        rep = self.cg.report()
        rep["n_params"] = self.n_params
        rep["stages"] = [asdict(s) for s in self.stages]
        return rep


def fit(graph: FactorGraph, evidence: dict | None, cfg: FitConfig) -> FitResult:
    """Fit q to ``graph`` conditioned on ``evidence`` in the configured mode.

    Ground and lifted modes absorb all evidence first; c2f keeps continuous
    evidence as clustered distributions until the structure stops changing.
    """
    evidence = dict(evidence or {})
    init_seed = seed_streams(cfg.seed)["init"]
    spec = cfg.spec

    def theta_init(layout, rng):
        return random_theta(layout, rng, cfg.init_noise)

    if cfg.mode == "c2f":
        res = run_c2f(graph, evidence, spec, cfg.K, theta_init, cfg.optim, cfg.iters_per_stage,
                      cfg.threshold, seed=init_seed)
        q = expand(res.objective.mixture(res.theta), res.cg)
        return FitResult(q, res.graph, res.cg, res.value, res.trace, res.objective.n_params, res.reason,
                         res.stages, cfg)

    g = condition(graph, evidence)
    cg = lift(g) if cfg.mode == "lifted" else trivial_compression(g)
    obj = Objective(cg, spec, cfg.K)
    obj.warmup()
    best = None
    for ss in np.random.SeedSequence(init_seed).spawn(cfg.n_starts):
        res = minimize(obj, theta_init(obj.layout, np.random.default_rng(ss)), cfg.optim)
        if best is None or res.value < best.value:
            best = res
    q = expand(obj.mixture(best.params), cg)
    return FitResult(q, g, cg, best.value, best.trace, obj.n_params, best.reason, [], cfg)


# --------------------------------------------------------------------------
# Snapshots


def _jsonable(v):
    return "inf" if v == math.inf else "-inf" if v == -math.inf else v


def q_to_json(q: MixtureMeanField) -> dict:
    """Weight logits plus per-variable, per-component parameter arrays."""
    out = {"weight_logits": q.weight_logits.tolist(), "variables": {}}
    for vid, m in q.marginals.items():
        if isinstance(m, GaussianMarginal):
            out["variables"][str(vid)] = {"kind": "gaussian", "mean": m.mean.tolist(), "log_std": m.log_std.tolist()}
        else:
            out["variables"][str(vid)] = {"kind": "categorical", "logits": m.logits.tolist()}
    return out


def q_from_json(d: dict, graph: FactorGraph | None = None) -> MixtureMeanField:
    by_str = {str(v): v for v in graph.variable_ids} if graph is not None else {}
    marg = {}
    for k, p in d["variables"].items():
        vid = by_str.get(k, k)
        if p["kind"] == "gaussian":
            marg[vid] = GaussianMarginal(np.array(p["mean"], dtype=float), np.array(p["log_std"], dtype=float))
        else:
            marg[vid] = CategoricalMarginal(np.array(p["logits"], dtype=float))
    return MixtureMeanField(np.array(d["weight_logits"], dtype=float), marg)


def fit_to_json(res: FitResult) -> dict:
    return {
        "q": q_to_json(res.q),
        "objective": res.objective_value,
        "n_params": res.n_params,
        "stop_reason": res.reason,
        "iterations": len(res.trace),
        "config": res.config.to_json() if res.config else None,
    }


def dumps_fit(res: FitResult) -> str:
    return json.dumps(fit_to_json(res), indent=1, sort_keys=True, default=_jsonable)
