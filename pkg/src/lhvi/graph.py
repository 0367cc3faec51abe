"""Hybrid factor graphs, evidence and conditioning."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .errors import ArityMismatch, DuplicateId, InvalidEvidenceValue, UnknownVariable
from .potentials import Potential, potential_from_json


@dataclass(frozen=True)
class Discrete:
    cardinality: int

    def __post_init__(self):
        if int(self.cardinality) != self.cardinality or self.cardinality < 2:
            raise ValueError("discrete cardinality must be an integer >= 2")

    @property
    def key(self):
        return ("d", int(self.cardinality))

    def contains(self, v) -> bool:
        try:
            return int(v) == v and 0 <= int(v) < self.cardinality
        except (TypeError, ValueError):
            return False


@dataclass(frozen=True)
class Continuous:
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if not self.lower < self.upper:
            raise ValueError("continuous domain needs lower < upper")

    @property
    def key(self):
        return ("c",)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, v) -> bool:
        try:
            v = float(v)
        except (TypeError, ValueError):
            return False
        return math.isfinite(v) and self.lower <= v <= self.upper


Domain = Discrete | Continuous


@dataclass(frozen=True)
class VariableDecl:
    id: Hashable
    domain: Domain
    label: str | None = None

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.domain, Discrete)


@dataclass(frozen=True)
class FactorDecl:
    id: Hashable
    scope: tuple
    potential: Potential

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Validated, immutable factor graph.

    ``log_constant`` accumulates the log-potentials of factors whose whole scope
    was observed during conditioning.
    """

    variables: tuple
    factors: tuple
    adjacency: Mapping = field(repr=False)
    log_constant: float = 0.0
    _var_index: Mapping = field(default=None, repr=False)
    _factor_index: Mapping = field(default=None, repr=False)

    def variable(self, vid) -> VariableDecl:
        try:
            return self.variables[self._var_index[vid]]
        except KeyError:
            raise UnknownVariable(vid) from None

    def factor(self, fid) -> FactorDecl:
        return self.factors[self._factor_index[fid]]

    def var_position(self, vid) -> int:
        return self._var_index[vid]

    def has_variable(self, vid) -> bool:
        return vid in self._var_index

    def degree(self, vid) -> int:
        return len(self.adjacency[vid])

    @property
    def variable_ids(self) -> list:
        return [v.id for v in self.variables]

    def __len__(self):
        return len(self.variables)

    def log_density(self, assignment: Mapping) -> float:
        """Unnormalized log p at a full assignment (including the log-constant)."""
        total = self.log_constant
        for f in self.factors:
            total += f.potential.log_value([assignment[v] for v in f.scope])
        return total

    def to_json(self) -> dict:
        return {
            "variables": [_var_to_json(v) for v in self.variables],
            "factors": [{"id": f.id, "scope": list(f.scope), "potential": f.potential.to_json()}
                        for f in self.factors],
            "log_constant": self.log_constant,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def build_graph(variables, factors, log_constant: float = 0.0) -> FactorGraph:
    variables = tuple(variables)
    factors = tuple(factors)
    var_index = {}
    for i, v in enumerate(variables):
        if v.id in var_index:
            raise DuplicateId(f"duplicate variable id {v.id!r}")
        var_index[v.id] = i
    factor_index = {}
    adjacency = {v.id: [] for v in variables}
    for i, f in enumerate(factors):
        if f.id in factor_index:
            raise DuplicateId(f"duplicate factor id {f.id!r}")
        factor_index[f.id] = i
        if not f.scope:
            raise ArityMismatch(f"factor {f.id!r} has an empty scope")
        if len(set(f.scope)) != len(f.scope):
            raise ArityMismatch(f"factor {f.id!r} repeats a variable in its scope")
        kinds = f.potential.position_kinds()
        if len(kinds) != len(f.scope):
            raise ArityMismatch(f"factor {f.id!r}: potential arity {len(kinds)} vs scope {len(f.scope)}")
        for pos, (vid, kind) in enumerate(zip(f.scope, kinds)):
            if vid not in var_index:
                raise UnknownVariable(vid)
            if variables[var_index[vid]].domain.key != kind:
                raise ArityMismatch(f"factor {f.id!r} slot {pos}: {kind} vs domain of {vid!r}")
            adjacency[vid].append((f.id, pos))
    adjacency = {k: tuple(v) for k, v in adjacency.items()}
    return FactorGraph(variables, factors, adjacency, float(log_constant), var_index, factor_index)


# --------------------------------------------------------------------------
# Evidence and conditioning


def validate_evidence(graph: FactorGraph, evidence: Mapping):
    for vid, value in evidence.items():
        if not graph.has_variable(vid):
            raise UnknownVariable(vid)
        if not graph.variable(vid).domain.contains(value):
            raise InvalidEvidenceValue(f"{vid!r} = {value!r} outside its domain")


def condition(graph: FactorGraph, evidence: Mapping) -> FactorGraph:
    """Absorb evidence by restricting every factor that touches it."""
    if not evidence:
        return graph
    validate_evidence(graph, evidence)
    const = graph.log_constant
    factors = []
    for f in graph.factors:
        fixed = {p: evidence[v] for p, v in enumerate(f.scope) if v in evidence}
        if not fixed:
            factors.append(f)
            continue
        if len(fixed) == len(f.scope):
            const += f.potential.log_value([evidence[v] for v in f.scope])
            continue
        scope = tuple(v for v in f.scope if v not in evidence)
        factors.append(FactorDecl(f.id, scope, f.potential.restrict(fixed)))
    variables = [v for v in graph.variables if v.id not in evidence]
    return build_graph(variables, factors, const)


# --------------------------------------------------------------------------
# JSON


def _bound(v: float):
    return "inf" if v == math.inf else "-inf" if v == -math.inf else v


def _var_to_json(v: VariableDecl) -> dict:
    if isinstance(v.domain, Discrete):
        dom = {"kind": "discrete", "k": v.domain.cardinality}
    else:
        dom = {"kind": "continuous", "lo": _bound(v.domain.lower), "hi": _bound(v.domain.upper)}
    out = {"id": v.id, "domain": dom}
    if v.label is not None:
        out["label"] = v.label
    return out


def graph_from_json(d: dict) -> FactorGraph:
    variables = []
    for v in d["variables"]:
        dom = v["domain"]
        if dom["kind"] == "discrete":
            domain = Discrete(int(dom["k"]))
        else:
            domain = Continuous(float(dom.get("lo", "-inf")), float(dom.get("hi", "inf")))
        variables.append(VariableDecl(v["id"], domain, v.get("label")))
    factors = [FactorDecl(f["id"], tuple(f["scope"]), potential_from_json(f["potential"]))
               for f in d["factors"]]
    return build_graph(variables, factors, d.get("log_constant", 0.0))


def loads_graph(text: str) -> FactorGraph:
    return graph_from_json(json.loads(text))


def evidence_to_json(evidence: Mapping) -> dict:
    return {str(k): (int(v) if isinstance(v, (int, np.integer)) else float(v)) for k, v in evidence.items()}


def evidence_from_json(d: Mapping, graph: FactorGraph | None = None) -> dict:
    """Decode an id->value map; string keys are matched back to graph ids."""
    if graph is None:
        return dict(d)
    by_str = {str(vid): vid for vid in graph.variable_ids}
    out = {}
    for k, v in d.items():
        if k not in by_str:
            raise UnknownVariable(k)
        vid = by_str[k]
        out[vid] = int(v) if graph.variable(vid).is_discrete else float(v)
    return out
