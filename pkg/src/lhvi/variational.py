"""Mixture-of-mean-field family, quadrature and the free-energy approximations.

The functions here (``energy``, ``bethe_entropy``, ``jensen_entropy``) are a
direct, loop-based route through :func:`clique_expectation`. The optimizer uses
the batched, differentiable route in :mod:`lhvi.objective`; ``free_energy``,
``lifted_free_energy`` and ``gradient`` are thin wrappers around it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DomainMismatch, NonFiniteIntegrand, UnknownVariable
from .graph import Continuous, FactorGraph
from .potentials import batched_log

LOG_STD_MIN, LOG_STD_MAX = math.log(1e-4), math.log(1e4)
DEFAULT_DELTA = 1e-300


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the weight exp(-t^2)."""

    order: int = 8
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")
        t, w = np.polynomial.hermite.hermgauss(self.order)
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "weights", w)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / math.sqrt(math.pi)

    def gaussian_nodes(self, mean, std):
        """Nodes for N(mean, std^2) with trailing quadrature axis."""
        return np.asarray(mean)[..., None] + math.sqrt(2.0) * np.asarray(std)[..., None] * self.nodes


@dataclass(frozen=True)
class ObjectiveSpec:
    entropy: str = "bethe"  # "bethe" | "jensen"
    order: int = 8
    mode: str = "ground"  # "ground" | "lifted" | "c2f"
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.entropy not in ("bethe", "jensen"):
            raise ValueError(f"unknown entropy {self.entropy!r}")
        if self.mode not in ("ground", "lifted", "c2f"):
            raise ValueError(f"unknown lifting mode {self.mode!r}")
        if not self.delta > 0:
            raise ValueError("density floor must be positive")

    @property
    def rule(self) -> QuadratureRule:
        return QuadratureRule(self.order)


@dataclass
class GaussianMarginal:
    mean: np.ndarray  # (K,)
    log_std: np.ndarray  # (K,)

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def copy(self):
        return GaussianMarginal(np.array(self.mean, dtype=float), np.array(self.log_std, dtype=float))


@dataclass
class CategoricalMarginal:
    logits: np.ndarray  # (K, C)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)

    @property
    def cardinality(self) -> int:
        return self.logits.shape[-1]

    def copy(self):
        return CategoricalMarginal(np.array(self.logits, dtype=float))


@dataclass
class MixtureMeanField:
    """q(x) = sum_k w_k prod_i q_i^k(x_i), weights as softmax(weight_logits).

    ``clamped`` maps ids to fixed (mean, std) Gaussians shared by all
    components; they are never optimized.
    """

    weight_logits: np.ndarray
    marginals: dict
    clamped: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.weight_logits)

    @property
    def weights(self) -> np.ndarray:
        return softmax(self.weight_logits)

    def copy(self):
        return MixtureMeanField(np.array(self.weight_logits, dtype=float),
                                {k: m.copy() for k, m in self.marginals.items()}, dict(self.clamped))

    def is_continuous(self, i) -> bool:
        if i in self.clamped:
            return True
        try:
            return isinstance(self.marginals[i], GaussianMarginal)
        except KeyError:
            raise UnknownVariable(i) from None

    def component_log_density(self, i, x):
        """log q_i^k(x) for every k; result has a trailing K axis."""
        x = np.asarray(x, dtype=float)
        if i in self.clamped:
            mu, sd = self.clamped[i]
            lp = _normal_logpdf(x, mu, sd)
            return np.repeat(lp[..., None], self.K, axis=-1)
        m = self.marginals.get(i)
        if m is None:
            raise UnknownVariable(i)
        if isinstance(m, GaussianMarginal):
            return _normal_logpdf(x[..., None], m.mean, m.std)
        xi = x.astype(int)
        if np.any(xi != x) or np.any(xi < 0) or np.any(xi >= m.cardinality):
            raise DomainMismatch(f"state {x!r} outside [0, {m.cardinality})")
        logp = m.logits - logsumexp(m.logits, axis=-1, keepdims=True)
        return np.moveaxis(logp[:, xi], 0, -1)


def _normal_logpdf(x, mu, sd):
    return -0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * math.log(2 * math.pi)


def expand(q: MixtureMeanField, cg) -> MixtureMeanField:
    """Copy super-variable marginals onto every member (tied parameters)."""
    marg, clamped = {}, {}
    for s, sv in enumerate(cg.super_variables):
        for vid in sv.members:
            if s in q.clamped:
                clamped[vid] = q.clamped[s]
            else:
                marg[vid] = q.marginals[s].copy()
    return MixtureMeanField(np.array(q.weight_logits, dtype=float), marg, clamped)


def init_mixture(variables, K: int, rng: np.random.Generator, clamped: Mapping | None = None,
                 noise: float = 0.1) -> MixtureMeanField:
    """Random starting point.

    ``variables`` is a sequence of (key, domain). Means are uniform over the
    domain when it is bounded, else over [-1, 1]; log-stds start at 0;
    categorical logits get N(0, noise^2) jitter; weights start uniform.
    """
    clamped = dict(clamped or {})
    marg = {}
    for key, dom in variables:
        if key in clamped:
            continue
        if isinstance(dom, Continuous):
            lo, hi = (dom.lower, dom.upper) if dom.bounded else (-1.0, 1.0)
            marg[key] = GaussianMarginal(rng.uniform(lo, hi, size=K), np.zeros(K))
        else:
            marg[key] = CategoricalMarginal(noise * rng.standard_normal((K, dom.cardinality)))
    return MixtureMeanField(np.zeros(K), marg, clamped)


# --------------------------------------------------------------------------
# Densities and expectations


def marginal_density(q: MixtureMeanField, i, x) -> float:
    """q_i(x) = sum_k w_k q_i^k(x)."""
    if not q.is_continuous(i):
        card = q.marginals[i].cardinality
        if int(x) != x or not 0 <= int(x) < card:
            raise DomainMismatch(f"state {x!r} outside [0, {card})")
    lp = q.component_log_density(i, x)
    return float(np.exp(logsumexp(lp + np.log(q.weights))))


def _slot_grid(q: MixtureMeanField, k: int, scope, rule: QuadratureRule):
    """Per-slot (values, weights) for component ``k`` on a tensor grid."""
    P = len(scope)
    xs, ws = [], []
    for p, vid in enumerate(scope):
        shape = [1] * P
        if q.is_continuous(vid):
            if vid in q.clamped:
                mu, sd = q.clamped[vid]
            else:
                m = q.marginals[vid]
                mu, sd = m.mean[k], m.std[k]
            vals = rule.gaussian_nodes(mu, sd)
            w = rule.normalized_weights
        else:
            m = q.marginals[vid]
            vals = np.arange(m.cardinality)
            w = m.probs[k]
        shape[p] = vals.size
        xs.append(vals.reshape(shape))
        ws.append(w.reshape(shape))
    return xs, ws


def clique_expectation(q: MixtureMeanField, k: int, scope, f: Callable, rule: QuadratureRule) -> float:
    """E_{q^k}[f(x_scope)] by tensor-product Gauss-Hermite / state enumeration.

    ``f`` receives one broadcastable array per scope slot.
    """
    xs, ws = _slot_grid(q, k, scope, rule)
    vals = np.asarray(f(*xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at a quadrature node")
    W = 1.0
    for w in ws:
        W = W * w
    return float(np.sum(np.broadcast_to(W, np.broadcast_shapes(np.shape(W), vals.shape)) * vals))


def _mixture_log_density(q: MixtureMeanField, scope, xs) -> np.ndarray:
    """log sum_j w_j prod_{i in scope} q_i^j(x_i), broadcast over xs."""
    total = np.log(q.weights)
    for vid, x in zip(scope, xs):
        total = total + q.component_log_density(vid, x)
    return logsumexp(total, axis=-1)


def _clip_to_domain(graph: FactorGraph, vid, x):
    dom = graph.variable(vid).domain
    if isinstance(dom, Continuous) and (math.isfinite(dom.lower) or math.isfinite(dom.upper)):
        return np.clip(x, dom.lower, dom.upper)
    return x


def energy(q: MixtureMeanField, graph: FactorGraph, rule: QuadratureRule, delta: float = DEFAULT_DELTA) -> float:
    """-sum_c E_q[log psi_c] minus the recorded conditioning constant.

    Zero table entries are floored at ``log(delta)``.
    """
    log_delta = math.log(delta)
    w = q.weights
    total = -graph.log_constant
    for f in graph.factors:
        def integrand(*xs, f=f):
            xs = [_clip_to_domain(graph, v, x) for v, x in zip(f.scope, xs)]
            shape = np.broadcast_shapes(*(np.shape(x) for x in xs))
            args = [np.broadcast_to(x, shape).reshape(1, -1) for x in xs]
            out = batched_log(f.potential.structure_key(), f.potential.param_vector()[None, :], args, np)
            out = np.where(np.isneginf(out), log_delta, out)
            return out.reshape(shape)
        total -= sum(w[k] * clique_expectation(q, k, f.scope, integrand, rule) for k in range(q.K))
    return float(total)


def _entropy_of(q: MixtureMeanField, scope, rule: QuadratureRule, log_delta: float) -> float:
    scope = [v for v in scope if v not in q.clamped]
    if not scope:
        return 0.0
    w = q.weights
    h = 0.0
    for k in range(q.K):
        h -= w[k] * clique_expectation(
            q, k, scope, lambda *xs: np.maximum(_mixture_log_density(q, scope, xs), log_delta), rule)
    return h


def bethe_entropy(q: MixtureMeanField, graph: FactorGraph, rule: QuadratureRule,
                  delta: float = DEFAULT_DELTA) -> float:
    """sum_c H[q_c] + sum_i (1 - |nb(i)|) H[q_i] over unclamped variables."""
    log_delta = math.log(delta)
    h = sum(_entropy_of(q, f.scope, rule, log_delta) for f in graph.factors)
    for v in graph.variables:
        if v.id in q.clamped:
            continue
        coef = 1 - graph.degree(v.id)
        if coef:
            h += coef * _entropy_of(q, [v.id], rule, log_delta)
    return float(h)


def log_overlap(q: MixtureMeanField, i, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """(K, K) matrix of log <q_i^k, q_i^j>."""
    m = q.marginals[i]
    if isinstance(m, GaussianMarginal):
        s2 = m.std[:, None] ** 2 + m.std[None, :] ** 2
        d = m.mean[:, None] - m.mean[None, :]
        return -0.5 * d * d / s2 - 0.5 * np.log(2 * math.pi * s2)
    p = m.probs
    return np.log(np.maximum(p @ p.T, delta))


def jensen_entropy(q: MixtureMeanField, counts: Mapping | None = None, delta: float = DEFAULT_DELTA) -> float:
    """-sum_k w_k log sum_j w_j prod_i <q_i^k, q_i^j>^{count_i} (unclamped i)."""
    K = q.K
    L = np.zeros((K, K))
    for i in q.marginals:
        L += (1 if counts is None else counts[i]) * log_overlap(q, i, delta)
    w = q.weights
    return float(-np.sum(w * logsumexp(np.log(w)[None, :] + L, axis=1)))


# --------------------------------------------------------------------------
# Compiled objective wrappers


def _ground_objective(graph: FactorGraph, q: MixtureMeanField, spec: ObjectiveSpec):
    from .lifting import trivial_compression
    from .objective import Objective

    cg = trivial_compression(graph)
    clamped = {cg.var_index[v]: ms for v, ms in q.clamped.items()}
    obj = Objective(cg, spec, q.K, clamped)
    qs = MixtureMeanField(q.weight_logits, {cg.var_index[v]: m for v, m in q.marginals.items()}, clamped)
    return obj, obj.layout.pack(qs)


def free_energy(q: MixtureMeanField, graph: FactorGraph, spec: ObjectiveSpec) -> float:
    """Energy minus the selected entropy approximation on the ground graph."""
    obj, theta = _ground_objective(graph, q, spec)
    return obj.value(theta)


def lifted_free_energy(q: MixtureMeanField, cg, spec: ObjectiveSpec) -> float:
    """Counted free energy over super variables/factors (q keyed by super index)."""
    from .objective import Objective

    obj = Objective(cg, spec, q.K, q.clamped)
    return obj.value(obj.layout.pack(q))


def gradient(q: MixtureMeanField, model, spec: ObjectiveSpec) -> np.ndarray:
    """Flat gradient in the objective's parameter layout.

    ``model`` is a FactorGraph (q keyed by variable id) or a CompressedGraph
    (q keyed by super-variable index).
    """
    from .objective import Objective

    if isinstance(model, FactorGraph):
        obj, theta = _ground_objective(model, q, spec)
    else:
        obj = Objective(model, spec, q.K, q.clamped)
        theta = obj.layout.pack(q)
    return obj.value_and_grad(theta)[1]
