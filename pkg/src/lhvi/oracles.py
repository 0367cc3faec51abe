"""Exact reference answers for small models.

``gaussian_exact`` solves a Gaussian MRF by dense linear algebra;
``brute_force_hybrid`` enumerates discrete states and integrates continuous
ones on a tensor grid, entirely in log space.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .densities import DiscreteMarginal, GaussianMixture1D, GridDensity
from .errors import NonIntegrable, NotGaussian, NotPositiveDefinite, TooLarge
from .graph import Continuous, FactorGraph
from .potentials import LinearGaussianPotential, QuadraticPotential, TablePotential, batched_log


@dataclass(frozen=True)
class GaussianGroundTruth:
    ids: tuple
    mean: np.ndarray
    cov: np.ndarray
    log_z: float

    def index(self, vid) -> int:
        return self.ids.index(vid)

    def marginal(self, vid) -> GaussianMixture1D:
        i = self.index(vid)
        return GaussianMixture1D.normal(self.mean[i], math.sqrt(self.cov[i, i]))

    def marginals(self) -> dict:
        return {vid: self.marginal(vid) for vid in self.ids}

    def means(self) -> dict:
        return dict(zip(self.ids, self.mean.tolist()))

    def to_json(self) -> dict:
        return {"ids": list(self.ids), "mean": self.mean.tolist(),
                "variance": np.diag(self.cov).tolist(), "log_z": self.log_z}


def gaussian_exact(graph: FactorGraph) -> GaussianGroundTruth:
    """Mean, covariance and log partition function of a Gaussian MRF.

    With log p = -1/2 x^T J x + h^T x + const, J collects 2A and h collects b
    over all quadratic factors.
    """
    ids = tuple(graph.variable_ids)
    d = len(ids)
    J = np.zeros((d, d))
    h = np.zeros(d)
    const = graph.log_constant
    for v in graph.variables:
        dom = v.domain
        if not isinstance(dom, Continuous) or dom.bounded:
            raise NotGaussian(f"variable {v.id!r} is not an unbounded continuous variable")
    for f in graph.factors:
        p = f.potential
        if isinstance(p, LinearGaussianPotential):
            p = p.as_quadratic()
        if isinstance(p, TablePotential) and not p.cardinalities:
            const += float(p.log_values.reshape(-1)[0])
            continue
        if not isinstance(p, QuadraticPotential):
            raise NotGaussian(f"factor {f.id!r} is not quadratic")
        ix = [graph.var_position(v) for v in f.scope]
        J[np.ix_(ix, ix)] += 2.0 * p.A
        h[ix] += p.b
        const += p.c
    try:
        L = np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("precision matrix is not positive definite") from None
    cov = np.linalg.inv(J)
    cov = 0.5 * (cov + cov.T)
    mean = np.linalg.solve(J, h)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    log_z = 0.5 * (d * math.log(2 * math.pi) - logdet + h @ mean) + const
    return GaussianGroundTruth(ids, mean, cov, float(log_z))


@dataclass(frozen=True)
class GridSpec:
    points: int = 2001
    bound: float = 30.0
    max_configs: int = 2 ** 20
    max_cont_dims: int = 4
    max_block: int = 2 ** 22
    check_integrable: bool = True
    tolerance: float = 1e-3


@dataclass(frozen=True)
class HybridGroundTruth:
    log_z: float
    marginals: dict  # id -> GridDensity | DiscreteMarginal
    grids: dict  # continuous id -> grid
    integrability_change: float = 0.0

    def means(self) -> dict:
        return {k: m.mean for k, m in self.marginals.items()}

    def to_json(self) -> dict:
        out = {"log_z": self.log_z, "marginals": {}}
        for k, m in self.marginals.items():
            if isinstance(m, DiscreteMarginal):
                out["marginals"][str(k)] = {"probs": m.probs.tolist()}
            else:
                out["marginals"][str(k)] = {"x": m.x.tolist(), "density": m.density.tolist()}
        return out


def _trapezoid_log_weights(x):
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return np.log(w)


def _grid_for(dom: Continuous, spec: GridSpec, bound: float):
    lo = dom.lower if math.isfinite(dom.lower) else -bound
    hi = dom.upper if math.isfinite(dom.upper) else bound
    if not lo < hi:
        raise NonIntegrable(f"grid bound {bound} does not overlap the domain [{dom.lower}, {dom.upper}]")
    return np.linspace(lo, hi, spec.points)


def _enumerate(graph: FactorGraph, spec: GridSpec, bound: float):
    disc = [v for v in graph.variables if v.is_discrete]
    cont = [v for v in graph.variables if not v.is_discrete]
    axes = [v.id for v in disc] + [v.id for v in cont]
    grids = {v.id: _grid_for(v.domain, spec, bound) for v in cont}
    sizes = [v.domain.cardinality for v in disc] + [spec.points] * len(cont)
    logw = [np.zeros(v.domain.cardinality) for v in disc] + [_trapezoid_log_weights(grids[v.id]) for v in cont]
    values = [np.arange(v.domain.cardinality) for v in disc] + [grids[v.id] for v in cont]

    # Outer axes are looped over in Python; inner axes form a vectorized block.
    split = len(axes)
    while split > 0 and math.prod(sizes[split - 1:]) <= spec.max_block:
        split -= 1
    if math.prod(sizes[split:]) > spec.max_block:
        raise TooLarge("continuous grid block exceeds the configured budget")
    pos = {vid: a for a, vid in enumerate(axes)}
    inner = list(range(split, len(axes)))
    n_in = len(inner)
    wsum = 0.0
    for a in inner:
        wsum = wsum + logw[a].reshape([-1 if b == a else 1 for b in inner])

    acc = [np.full(s, -np.inf) for s in sizes]
    log_terms = []
    for outer in itertools.product(*(range(s) for s in sizes[:split])):
        block = np.zeros([sizes[a] for a in inner]) if n_in else np.zeros(())
        for f in graph.factors:
            slot_axes = [pos[v] for v in f.scope]
            arrs = []
            for a in slot_axes:
                if a < split:
                    arrs.append(np.asarray(values[a][outer[a]]))
                else:
                    arrs.append(values[a].reshape([-1 if b == a else 1 for b in inner]))
            shape = np.broadcast_shapes(*(x.shape for x in arrs))
            flat = [np.broadcast_to(x, shape).reshape(1, -1) for x in arrs]
            val = batched_log(f.potential.structure_key(), f.potential.param_vector()[None, :], flat, np)
            val = np.asarray(val).reshape(shape)
            if np.any(np.isnan(val)):
                raise NonIntegrable(f"factor {f.id!r} is NaN on the grid")
            block = block + val
        block = block + wsum + sum(logw[a][outer[a]] for a in range(split))
        total = logsumexp(block)
        log_terms.append(total)
        for a in range(split):
            acc[a][outer[a]] = np.logaddexp(acc[a][outer[a]], total - logw[a][outer[a]])
        for j, a in enumerate(inner):
            other = tuple(b for b in range(n_in) if b != j)
            lm = logsumexp(block, axis=other) if other else block
            lm = lm - logw[a]  # density, not weighted mass, along its own axis
            acc[a] = np.logaddexp(acc[a], lm)
    log_z = float(logsumexp(log_terms)) + graph.log_constant
    return axes, acc, grids, log_z


def brute_force_hybrid(graph: FactorGraph, spec: GridSpec = GridSpec()) -> HybridGroundTruth:
    """Exact (to grid resolution) log Z and univariate marginals.

    Continuous variables use ``spec.points`` points over the domain, with
    infinite ends replaced by +-``spec.bound``. When any end is unbounded the
    computation is repeated with bound ``2 * spec.bound``; a relative change of
    the partition function above ``spec.tolerance`` raises NonIntegrable.
    """
    disc = [v for v in graph.variables if v.is_discrete]
    cont = [v for v in graph.variables if not v.is_discrete]
    if math.prod(v.domain.cardinality for v in disc) > spec.max_configs:
        raise TooLarge(f"{len(disc)} discrete variables exceed the enumeration budget")
    if len(cont) > spec.max_cont_dims:
        raise TooLarge(f"{len(cont)} continuous dimensions exceed the grid budget")
    axes, acc, grids, log_z = _enumerate(graph, spec, spec.bound)
    if not math.isfinite(log_z):
        raise NonIntegrable("partition function is not finite on the grid")
    change = 0.0
    unbounded = any(not (math.isfinite(v.domain.lower) and math.isfinite(v.domain.upper)) for v in cont)
    if spec.check_integrable and unbounded:
        _, _, _, log_z2 = _enumerate(graph, spec, 2 * spec.bound)
        change = abs(math.expm1(log_z2 - log_z)) if math.isfinite(log_z2) else math.inf
        if not change < spec.tolerance:
            raise NonIntegrable(f"mass changed by {change:.3g} when doubling the grid bound")
    marg = {}
    for vid, la in zip(axes, acc):
        p = np.exp(la - np.max(la))
        marg[vid] = GridDensity(grids[vid], p) if vid in grids else DiscreteMarginal(p)
    return HybridGroundTruth(log_z, marg, grids, change)
