"""Symmetry detection by color passing, compressed graphs and evidence clustering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ClusterCoverageError, NonRefinementError, Unsplittable
from .graph import FactorGraph
from .potentials import DEFAULT_QUANTUM


@dataclass(frozen=True)
class Coloring:
    variable_colors: Mapping
    factor_colors: Mapping
    round: int = 0
    history: tuple = ()  # (variable classes, factor classes) after each round

    @property
    def n_variable_colors(self) -> int:
        return len(set(self.variable_colors.values()))

    @property
    def n_factor_colors(self) -> int:
        return len(set(self.factor_colors.values()))


@dataclass(frozen=True)
class SuperVariable:
    members: tuple
    domain: object
    ground_degree: int

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class SuperFactor:
    members: tuple
    potential: object
    signature: bytes
    scope: tuple  # super-variable index per slot

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class CompressedGraph:
    super_variables: tuple
    super_factors: tuple
    provenance: Coloring
    graph: FactorGraph = field(repr=False)
    var_index: Mapping = field(default=None, repr=False)  # ground id -> super index

    @property
    def log_constant(self) -> float:
        return self.graph.log_constant

    def report(self) -> dict:
        g = self.graph
        nv, nf = len(self.super_variables), len(self.super_factors)
        return {
            "ground_variables": len(g.variables),
            "ground_factors": len(g.factors),
            "super_variables": nv,
            "super_factors": nf,
            "compression_ratio": (len(g.variables) + len(g.factors)) / max(nv + nf, 1),
            "rounds": self.provenance.round,
            "class_counts_per_round": [list(h) for h in self.provenance.history],
        }


def _dense(keys: list) -> list:
    """Map hashable keys to dense integers in first-seen order."""
    table = {}
    return [table.setdefault(k, len(table)) for k in keys]


# --------------------------------------------------------------------------
# Evidence clusters


@dataclass(frozen=True)
class EvidenceCluster:
    members: tuple
    values: tuple

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        return float(np.var(self.values))

    @property
    def n_distinct(self) -> int:
        return len(set(self.values))


@dataclass(frozen=True)
class EvidenceClustering:
    clusters: tuple
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("splitting threshold must be positive")

    def cluster_of(self) -> dict:
        return {m: i for i, c in enumerate(self.clusters) for m in c.members}

    @classmethod
    def single(cls, evidence: Mapping, threshold: float):
        ids = list(evidence)
        return cls((EvidenceCluster(tuple(ids), tuple(float(evidence[i]) for i in ids)),), threshold)


@dataclass(frozen=True)
class Cluster1D:
    indices: tuple
    mean: float
    variance: float


def lloyd_1d(values, centers, max_iter: int = 300):
    """Lloyd iterations on scalars. Returns (labels, centers, sse history)."""
    x = np.asarray(values, dtype=float)
    c = np.sort(np.asarray(centers, dtype=float))
    history = []
    labels = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(x[:, None] - c[None, :]), axis=1)
        history.append(float(np.sum((x - c[new]) ** 2)))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(c.size):
            sel = x[labels == j]
            if sel.size:
                c[j] = sel.mean()
        history.append(float(np.sum((x - c[labels]) ** 2)))
    return labels, c, history


def _kmeanspp_1d(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            break
        centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.array(centers)


def kmeans_1d(values, k: int, seed: int = 0, n_init: int = 10) -> list[Cluster1D]:
    """Seeded k-means++ + Lloyd on scalars; best of ``n_init`` restarts.

    Clusters come back sorted by mean, empty clusters dropped.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if k < 1 or x.size == 0:
        raise ValueError("kmeans_1d needs k >= 1 and at least one value")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init if k > 1 else 1):
        labels, centers, hist = lloyd_1d(x, _kmeanspp_1d(x, k, rng))
        if best is None or hist[-1] < best[0] - 1e-12:
            best = (hist[-1], labels)
    labels = best[1]
    out = []
    for j in np.unique(labels):
        idx = np.flatnonzero(labels == j)
        out.append(Cluster1D(tuple(int(i) for i in idx), float(x[idx].mean()), float(x[idx].var())))
    out.sort(key=lambda c: c.mean)
    return out


def split_cluster(c: EvidenceCluster, seed: int = 0) -> tuple[EvidenceCluster, EvidenceCluster]:
    if c.n_distinct < 2:
        raise Unsplittable("cluster has a single distinct value")
    parts = kmeans_1d(c.values, 2, seed=seed)
    assert len(parts) == 2
    return tuple(
        EvidenceCluster(tuple(c.members[i] for i in p.indices), tuple(c.values[i] for i in p.indices))
        for p in parts
    )


# --------------------------------------------------------------------------
# Color passing


def init_colors(graph: FactorGraph, evidence: Mapping | None = None,
                clustering: EvidenceClustering | None = None,
                quantum: float = DEFAULT_QUANTUM) -> Coloring:
    evidence = evidence or {}
    cont_obs = {v for v in evidence if not graph.variable(v).is_discrete}
    cluster_of = {}
    if clustering is not None:
        cluster_of = clustering.cluster_of()
        if set(cluster_of) != cont_obs:
            raise ClusterCoverageError("clustering must cover exactly the continuous-evidence variables")
    keys = []
    for v in graph.variables:
        dom = v.domain
        if v.is_discrete:
            base = ("d", dom.cardinality)
        else:
            base = ("c", dom.lower, dom.upper)
        if v.id not in evidence:
            keys.append(base)
        elif v.id in cluster_of:
            keys.append(base + ("cluster", cluster_of[v.id]))
        else:
            keys.append(base + ("value", float(evidence[v.id])))
    vcol = dict(zip(graph.variable_ids, _dense(keys)))
    fcol = dict(zip((f.id for f in graph.factors),
                    _dense([f.potential.signature(quantum) for f in graph.factors])))
    return Coloring(vcol, fcol, 0, ((len(set(vcol.values())), len(set(fcol.values()))),))


def _refine(graph: FactorGraph, vcol: dict, fcol: dict, max_rounds: int, start_round: int, history):
    history = list(history)
    rounds = start_round
    nv, nf = len(set(vcol.values())), len(set(fcol.values()))
    for _ in range(max_rounds):
        fkeys = [(fcol[f.id], tuple(vcol[v] for v in f.scope)) for f in graph.factors]
        fcol = dict(zip((f.id for f in graph.factors), _dense(fkeys)))
        vkeys = [(vcol[v.id], tuple(sorted((fcol[fid], pos) for fid, pos in graph.adjacency[v.id])))
                 for v in graph.variables]
        vcol = dict(zip(graph.variable_ids, _dense(vkeys)))
        rounds += 1
        nv2, nf2 = len(set(vcol.values())), len(set(fcol.values()))
        history.append((nv2, nf2))
        if (nv2, nf2) == (nv, nf):
            break
        nv, nf = nv2, nf2
    return Coloring(vcol, fcol, rounds, tuple(history))


def color_passing(graph: FactorGraph, init: Coloring, max_rounds: int = 1000):
    """Refine ``init`` until no color class splits; returns (coloring, compressed graph).

    Factors hash their own color with the ordered colors of their scope;
    variables hash their own color with the sorted multiset of
    (incident factor color, slot) pairs.
    """
    coloring = _refine(graph, dict(init.variable_colors), dict(init.factor_colors),
                       max_rounds, init.round, init.history)
    return coloring, compress(graph, coloring)


def resume_color_passing(graph: FactorGraph, previous: Coloring, recolored: Mapping,
                         max_rounds: int = 1000):
    """Continue color passing after assigning new colors to some variables.

    ``recolored`` maps variable ids to new colors; the result must refine the
    previous partition.
    """
    if not recolored:
        return previous, compress(graph, previous)
    for vid in recolored:
        graph.variable(vid)
    keys = [(previous.variable_colors[v], recolored.get(v, previous.variable_colors[v]))
            for v in graph.variable_ids]
    proposed = {}
    for (old, new) in keys:
        proposed.setdefault(new, set()).add(old)
    if any(len(olds) > 1 for olds in proposed.values()):
        raise NonRefinementError("recoloring would merge existing color classes")
    vcol = dict(zip(graph.variable_ids, _dense(keys)))
    coloring = _refine(graph, vcol, dict(previous.factor_colors), max_rounds,
                       previous.round, previous.history)
    return coloring, compress(graph, coloring)


def compress(graph: FactorGraph, coloring: Coloring) -> CompressedGraph:
    vcol, fcol = coloring.variable_colors, coloring.factor_colors
    order = {}
    for vid in graph.variable_ids:
        order.setdefault(vcol[vid], []).append(vid)
    classes = list(order.values())
    var_index = {vid: i for i, members in enumerate(classes) for vid in members}
    svars = tuple(SuperVariable(tuple(m), graph.variable(m[0]).domain, graph.degree(m[0])) for m in classes)
    forder = {}
    for f in graph.factors:
        forder.setdefault(fcol[f.id], []).append(f)
    sfactors = []
    for fs in forder.values():
        rep = fs[0]
        sfactors.append(SuperFactor(tuple(f.id for f in fs), rep.potential, rep.potential.signature(),
                                    tuple(var_index[v] for v in rep.scope)))
    return CompressedGraph(svars, tuple(sfactors), coloring, graph, var_index)


def trivial_compression(graph: FactorGraph) -> CompressedGraph:
    """Every variable and factor in its own class (the ground objective)."""
    vcol = {vid: i for i, vid in enumerate(graph.variable_ids)}
    fcol = {f.id: i for i, f in enumerate(graph.factors)}
    return compress(graph, Coloring(vcol, fcol, 0, ((len(vcol), len(fcol)),)))


def lift(graph: FactorGraph, max_rounds: int = 1000) -> CompressedGraph:
    return color_passing(graph, init_colors(graph), max_rounds)[1]


def same_partition(a: Mapping, b: Mapping) -> bool:
    """True when two colorings induce the same partition of their keys."""
    if set(a) != set(b):
        return False
    fwd, bwd = {}, {}
    for k in a:
        if fwd.setdefault(a[k], b[k]) != b[k] or bwd.setdefault(b[k], a[k]) != a[k]:
            return False
    return True
