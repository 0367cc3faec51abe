"""Marginal and MAP queries on a fitted mixture, plus evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .densities import DiscreteMarginal, GaussianMixture1D, GridDensity
from .errors import DomainMismatch, SupportMismatch, UnknownVariable
from .graph import FactorGraph
from .variational import DEFAULT_DELTA, GaussianMarginal, MixtureMeanField

KL_GRID_POINTS = 4096


@dataclass(frozen=True)
class MixtureMarginal:
    """q(x_U) = sum_k w_k prod_{i in U} q_i^k(x_i).

    ``params[i]`` is ("c", means (K,), stds (K,)) or ("d", probs (K, C)).
    """

    weights: np.ndarray
    variables: tuple
    params: dict

    @property
    def K(self) -> int:
        return self.weights.size

    def _component_logs(self, i, x):
        p = self.params[i]
        if p[0] == "c":
            z = (x - p[1]) / p[2]
            return -0.5 * z * z - np.log(p[2]) - 0.5 * math.log(2 * math.pi)
        C = p[1].shape[1]
        if int(x) != x or not 0 <= int(x) < C:
            raise DomainMismatch(f"state {x!r} outside [0, {C})")
        with np.errstate(divide="ignore"):
            return np.log(p[1][:, int(x)])

    def log_density(self, x) -> float:
        """``x`` maps each queried variable to a value (or is a sequence in order)."""
        if not isinstance(x, Mapping):
            x = dict(zip(self.variables, x))
        with np.errstate(divide="ignore"):
            total = np.log(self.weights)
        for i in self.variables:
            total = total + self._component_logs(i, x[i])
        return float(logsumexp(total))

    def density(self, x) -> float:
        return math.exp(self.log_density(x))

    def sample(self, n: int, rng: np.random.Generator) -> list[dict]:
        ks = rng.choice(self.K, size=n, p=self.weights)
        out = []
        for k in ks:
            row = {}
            for i in self.variables:
                p = self.params[i]
                if p[0] == "c":
                    row[i] = float(p[1][k] + p[2][k] * rng.standard_normal())
                else:
                    row[i] = int(rng.choice(p[1].shape[1], p=p[1][k]))
            out.append(row)
        return out

    def marginalize(self, keep) -> "MixtureMarginal":
        keep = tuple(keep)
        for i in keep:
            if i not in self.params:
                raise UnknownVariable(i)
        return MixtureMarginal(self.weights, keep, {i: self.params[i] for i in keep})

    def univariate(self, i):
        p = self.params[i]
        if p[0] == "c":
            return GaussianMixture1D(self.weights, p[1], p[2])
        return DiscreteMarginal(self.weights @ p[1])

    def to_json(self) -> dict:
        out = {"weights": self.weights.tolist(), "variables": {}}
        for i in self.variables:
            p = self.params[i]
            if p[0] == "c":
                out["variables"][str(i)] = {"kind": "continuous", "means": p[1].tolist(), "stds": p[2].tolist()}
            else:
                out["variables"][str(i)] = {"kind": "discrete", "probs": p[1].tolist()}
        return out


def query_marginal(q: MixtureMeanField, U: Sequence) -> MixtureMarginal:
    """Restrict the fitted product-form mixture to the query variables ``U``."""
    params = {}
    for i in U:
        m = q.marginals.get(i)
        if m is None:
            raise UnknownVariable(i)
        if isinstance(m, GaussianMarginal):
            params[i] = ("c", np.asarray(m.mean, dtype=float), m.std)
        else:
            params[i] = ("d", m.probs)
    return MixtureMarginal(q.weights, tuple(U), params)


def univariate_marginal(q: MixtureMeanField, i):
    return query_marginal(q, [i]).univariate(i)


# --------------------------------------------------------------------------
# MAP


def _coordinate_ascent(mm: MixtureMarginal, x: dict, max_sweeps: int, tol: float, bounds: Mapping | None = None):
    bounds = bounds or {}
    for i, (lo, hi) in bounds.items():
        x[i] = min(max(float(x[i]), lo), hi)
    logw = np.log(np.maximum(mm.weights, 1e-300))
    comp = {i: mm._component_logs(i, x[i]) for i in mm.variables}
    S = logw + sum(comp.values())
    for _ in range(max_sweeps):
        moved = 0.0
        for i in mm.variables:
            a = S - comp[i]
            p = mm.params[i]
            if p[0] == "d":
                with np.errstate(divide="ignore"):
                    scores = logsumexp(a[:, None] + np.log(p[1]), axis=0)
                new = int(np.argmax(scores))
                moved = max(moved, float(new != x[i]))
                x[i] = new
            else:
                mu, sd = p[1], p[2]

                def f(v):
                    z = (v - mu) / sd
                    return logsumexp(a - 0.5 * z * z - np.log(sd))

                def grad(v):
                    z = (v - mu) / sd
                    lt = a - 0.5 * z * z - np.log(sd)
                    r = np.exp(lt - logsumexp(lt))
                    return float(np.sum(r * (mu - v) / sd ** 2)), r

                lo, hi = bounds.get(i, (-math.inf, math.inf))
                v = float(x[i])
                fv = f(v)
                g, r = grad(v)
                step = 0.5 * float(r @ sd)
                while step >= tol and g != 0.0:
                    cand = min(max(v + step * math.copysign(1.0, g), lo), hi)
                    if cand == v:  # pinned at a bound
                        break
                    fc = f(cand)
                    if fc > fv:
                        v, fv = cand, fc
                        g, _ = grad(v)
                    else:
                        step *= 0.5
                moved = max(moved, abs(v - x[i]))
                x[i] = v
            comp[i] = mm._component_logs(i, x[i])
            S = a + comp[i]
        if moved < tol:
            break
    return x, float(logsumexp(S))


def _domain_bounds(domains, U) -> dict:
    if domains is None:
        return {}
    if isinstance(domains, FactorGraph):
        out = {}
        for i in U:
            v = domains.variable(i)
            if not v.is_discrete and v.domain.bounded:
                out[i] = (v.domain.lower, v.domain.upper)
        return out
    return {i: tuple(map(float, domains[i])) for i in U if i in domains}


def map_estimate(q: MixtureMeanField, U: Sequence | None = None, max_sweeps: int = 100,
                 tol: float = 1e-8, domains=None) -> dict:
    """argmax of the fitted mixture over ``U`` by coordinate ascent.

    Discrete coordinates take the exact conditional argmax; continuous ones
    climb the univariate mixture log-density with step halving from half a
    (responsibility-weighted) component std. One start per component (its
    means / modes); the best local maximum is returned.

    ``domains`` (a FactorGraph, or a map id -> (lo, hi)) confines continuous
    coordinates to bounded domains; the marginals themselves are untruncated.
    """
    U = list(q.marginals) if U is None else list(U)
    mm = query_marginal(q, U)
    bounds = _domain_bounds(domains, U)
    best, best_f = None, -math.inf
    for k in range(mm.K):
        x0 = {}
        for i in U:
            p = mm.params[i]
            x0[i] = float(p[1][k]) if p[0] == "c" else int(np.argmax(p[1][k]))
        x, fx = _coordinate_ascent(mm, x0, max_sweeps, tol, bounds)
        if fx > best_f:
            best, best_f = x, fx
    return best


def energy_of_assignment(graph: FactorGraph, x: Mapping) -> float:
    """-log prod_c psi_c(x_c), including conditioning constants; +inf on zeros."""
    for v in graph.variables:
        if v.id not in x:
            raise DomainMismatch(f"assignment misses variable {v.id!r}")
        if not v.domain.contains(x[v.id]):
            raise DomainMismatch(f"{v.id!r} = {x[v.id]!r} outside its domain")
    with np.errstate(divide="ignore"):
        lp = graph.log_density(x)
    return math.inf if lp == -math.inf else -float(lp)


# --------------------------------------------------------------------------
# Metrics


def kl_divergence(p, q, delta: float = DEFAULT_DELTA, n_grid: int = KL_GRID_POINTS) -> float:
    """D_KL(p || q) for univariate marginals; q is floored at ``delta``."""
    if isinstance(p, DiscreteMarginal) != isinstance(q, DiscreteMarginal):
        raise SupportMismatch("cannot compare a discrete and a continuous marginal")
    if isinstance(p, DiscreteMarginal):
        if p.cardinality != q.cardinality:
            raise SupportMismatch("cardinalities differ")
        pp = p.probs
        nz = pp > 0
        return float(np.sum(pp[nz] * (np.log(pp[nz]) - np.log(np.maximum(q.probs[nz], delta)))))
    lo, hi = p.support()
    x = np.linspace(lo, hi, n_grid)
    px = p.pdf(x)
    with np.errstate(divide="ignore"):
        lq = np.maximum(q.logpdf(x), math.log(delta))
        lp = np.where(px > 0, np.log(np.where(px > 0, px, 1.0)), 0.0)
    return float(np.trapezoid(np.where(px > 0, px * (lp - lq), 0.0), x))


def avg_univariate_kl(exact: Mapping, q, variables: Sequence | None = None,
                      delta: float = DEFAULT_DELTA, n_grid: int = KL_GRID_POINTS) -> float:
    """Mean of D_KL(p_i || q_i) over ``variables`` (default: all exact marginals).

    ``q`` is a MixtureMeanField keyed by variable id or a mapping id -> marginal.
    Continuous marginals are compared on ``n_grid`` points spanning mean +- 8 std
    of every component of the exact marginal.
    """
    variables = list(exact) if variables is None else list(variables)
    if not variables:
        raise ValueError("no variables to average over")
    total = 0.0
    for i in variables:
        qi = univariate_marginal(q, i) if isinstance(q, MixtureMeanField) else q[i]
        total += kl_divergence(exact[i], qi, delta, n_grid)
    return total / len(variables)


def avg_l1_error(reference, estimate, discrete: Sequence = ()) -> float:
    """Mean |a - b| over continuous entries; entries in ``discrete`` add 0/1 mismatch.

    Accepts two equal-length sequences or two mappings with the same keys.
    """
    if isinstance(reference, Mapping):
        if set(reference) != set(estimate):
            raise ValueError("reference and estimate cover different variables")
        keys = list(reference)
        a = [reference[k] for k in keys]
        b = [estimate[k] for k in keys]
    else:
        keys = list(range(len(reference)))
        a, b = list(reference), list(estimate)
        if len(a) != len(b):
            raise ValueError("reference and estimate differ in length")
    if not keys:
        return 0.0
    disc = set(discrete)
    err = [float(int(x) != int(y)) if k in disc else abs(float(x) - float(y)) for k, x, y in zip(keys, a, b)]
    return float(np.mean(err))


@dataclass
class QueryResult:
    marginals: dict = field(default_factory=dict)  # id -> MixtureMarginal over one variable
    map_assignment: dict | None = None
    map_energy: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"marginals": {str(k): m.to_json() for k, m in self.marginals.items()},
               "diagnostics": self.diagnostics}
        if self.map_assignment is not None:
            out["map"] = {str(k): v for k, v in self.map_assignment.items()}
            out["map_energy"] = self.map_energy
        return out


def marginal_curve(m, n: int = KL_GRID_POINTS, n_std: float = 8.0):
    """(x, density) rows spanning mean +- ``n_std`` std of each component."""
    if isinstance(m, GridDensity):
        lo, hi = m.x[0], m.x[-1]
    else:
        lo, hi = m.support(n_std)
    x = np.linspace(lo, hi, n)
    return np.column_stack([x, m.pdf(x)])
