"""Potential functions over factor scopes.

Every potential knows its log-value, how to restrict some of its slots to
fixed values, and a canonical signature used by color passing. Evaluation is
written against an array namespace ``xp`` (``numpy`` or ``jax.numpy``) so the
same code serves scalar queries, the brute-force oracle and the compiled
variational objective. Batched evaluation takes a ``(B, P)`` parameter matrix
(one row per factor sharing a :meth:`Potential.structure_key`) and a list of
per-slot value arrays whose leading axis is ``B``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityMismatch, DomainMismatch

DEFAULT_QUANTUM = 1e-12

CONT = ("c",)


def disc(card: int) -> tuple:
    return ("d", int(card))


def _expand(a, ndim):
    """Reshape a length-B vector so it broadcasts against ``ndim``-d arrays."""
    return a.reshape(a.shape[:1] + (1,) * (ndim - 1))


def _ndim(xs):
    return max((x.ndim for x in xs), default=1)


class Potential:
    kind: str = ""

    @property
    def arity(self) -> int:
        return len(self.position_kinds())

    def position_kinds(self) -> tuple:
        raise NotImplementedError

    def structure_key(self) -> tuple:
        """Hashable key; potentials with equal keys can be evaluated as one batch."""
        raise NotImplementedError

    def param_vector(self) -> np.ndarray:
        raise NotImplementedError

    def restrict(self, fixed: dict) -> "Potential":
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def log_value(self, x) -> float:
        x = list(x)
        if len(x) != self.arity:
            raise DomainMismatch(f"{self.kind}: expected {self.arity} values, got {len(x)}")
        xs = []
        for v, k in zip(x, self.position_kinds()):
            if k[0] == "d":
                iv = int(v)
                if iv != v or not 0 <= iv < k[1]:
                    raise DomainMismatch(f"discrete value {v!r} outside [0, {k[1]})")
                xs.append(np.array([iv]))
            else:
                xs.append(np.array([float(v)]))
        out = batched_log(self.structure_key(), self.param_vector()[None, :], xs, np)
        return float(np.reshape(out, -1)[0])

    def signature(self, quantum: float = DEFAULT_QUANTUM) -> bytes:
        return signature(self, quantum)

    def _check_fixed(self, fixed):
        kinds = self.position_kinds()
        for p, v in fixed.items():
            if not 0 <= p < len(kinds):
                raise DomainMismatch(f"position {p} outside arity {len(kinds)}")
            if kinds[p][0] == "d" and not (int(v) == v and 0 <= int(v) < kinds[p][1]):
                raise DomainMismatch(f"discrete value {v!r} outside [0, {kinds[p][1]})")


# --------------------------------------------------------------------------
# Table


@dataclass(frozen=True, eq=False)
class TablePotential(Potential):
    cardinalities: tuple
    log_values: np.ndarray
    kind = "table"

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        lv = np.asarray(self.log_values, dtype=float).reshape(-1)
        if any(c < 1 for c in cards):
            raise ArityMismatch("cardinalities must be positive")
        if lv.size != int(np.prod(cards, dtype=int)):
            raise ArityMismatch(f"table needs {int(np.prod(cards))} entries, got {lv.size}")
        if np.any(np.isnan(lv)) or np.any(lv == np.inf):
            raise ValueError("table log-values must be finite or -inf")
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "log_values", lv)

    def position_kinds(self):
        return tuple(disc(c) for c in self.cardinalities)

    def structure_key(self):
        return ("table", self.cardinalities)

    def param_vector(self):
        return self.log_values

    def restrict(self, fixed):
        self._check_fixed(fixed)
        table = self.log_values.reshape(self.cardinalities)
        index = tuple(int(fixed[p]) if p in fixed else slice(None) for p in range(self.arity))
        cards = tuple(c for p, c in enumerate(self.cardinalities) if p not in fixed)
        return TablePotential(cards, np.asarray(table[index]).reshape(-1))

    def to_json(self):
        return {"kind": "table", "cardinalities": list(self.cardinalities),
                "log_values": [_enc(v) for v in self.log_values]}


def constant_potential(log_value: float) -> TablePotential:
    """Arity-0 potential, the result of restricting every slot."""
    return TablePotential((), np.array([log_value]))


# --------------------------------------------------------------------------
# Gaussian families


@dataclass(frozen=True, eq=False)
class QuadraticPotential(Potential):
    """log psi(x) = -x^T A x + b^T x + c; A is stored symmetrized."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0
    kind = "quadratic"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, b.size):
            raise ArityMismatch(f"A has shape {A.shape} but b has length {b.size}")
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    def position_kinds(self):
        return (CONT,) * self.b.size

    def structure_key(self):
        return ("quadratic", self.b.size)

    def param_vector(self):
        return np.concatenate([self.A.reshape(-1), self.b, [self.c]])

    def restrict(self, fixed):
        self._check_fixed(fixed)
        d = self.b.size
        f = sorted(fixed)
        u = [p for p in range(d) if p not in fixed]
        v = np.array([float(fixed[p]) for p in f])
        A, b = self.A, self.b
        c = self.c - v @ A[np.ix_(f, f)] @ v + b[f] @ v
        if not u:
            return constant_potential(c)
        b_new = b[u] - 2.0 * A[np.ix_(u, f)] @ v
        return QuadraticPotential(A[np.ix_(u, u)], b_new, c)

    def to_json(self):
        return {"kind": "quadratic", "A": self.A.tolist(), "b": self.b.tolist(), "c": self.c}

    def as_quadratic(self):
        return self


@dataclass(frozen=True, eq=False)
class LinearGaussianPotential(Potential):
    """log psi(x1, x2) = -(x1 - a*x2 - m)^2 / var."""

    a: float = 1.0
    m: float = 0.0
    var: float = 1.0
    kind = "linear_gaussian"

    def __post_init__(self):
        for name in ("a", "m", "var"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.var > 0:
            raise ValueError("linear Gaussian variance must be positive")

    def position_kinds(self):
        return (CONT, CONT)

    def structure_key(self):
        return ("linear_gaussian",)

    def param_vector(self):
        return np.array([self.a, self.m, self.var])

    def as_quadratic(self) -> QuadraticPotential:
        a, m, s = self.a, self.m, self.var
        A = np.array([[1.0, -a], [-a, a * a]]) / s
        return QuadraticPotential(A, np.array([2 * m, -2 * a * m]) / s, -m * m / s)

    def restrict(self, fixed):
        self._check_fixed(fixed)
        if not fixed:
            return self
        return self.as_quadratic().restrict(fixed)

    def to_json(self):
        return {"kind": "linear_gaussian", "a": self.a, "m": self.m, "var": self.var}


# --------------------------------------------------------------------------
# Hybrid formulas
#
# Trees are nested tuples so they hash and can key a compiled kernel:
#   ("atom", p) ("lit", 0|1) ("not", f) ("and", f, ...) ("or", f, ...)
#   ("implies", f, g)  -- discrete-valued
#   ("var", p) ("const", v)  -- continuous operands
#   ("eq", l, r) = -(l - r)^2   ("mul", d, f)   ("sum", f, ...)  -- features


def atom(p):
    return ("atom", int(p))


def lit(v):
    return ("lit", int(bool(v)))


def neg(f):
    return ("not", f)


def conj(*fs):
    return ("and",) + tuple(fs)


def disj(*fs):
    return ("or",) + tuple(fs)


def implies(f, g):
    return ("implies", f, g)


def var(p):
    return ("var", int(p))


def const(v):
    return ("const", float(v))


def eq(lhs, rhs):
    return ("eq", lhs, rhs)


def scalar_mul(d, f):
    return ("mul", d, f)


def fsum(*fs):
    return ("sum",) + tuple(fs)


_BOOL_OPS = {"atom", "lit", "not", "and", "or", "implies"}
_OPERANDS = {"var", "const"}


def _node_type(node) -> str:
    op = node[0]
    if op in ("atom", "lit"):
        return "bool"
    if op in _OPERANDS:
        return "operand"
    if op in ("not", "and", "or", "implies"):
        for child in node[1:]:
            if _node_type(child) != "bool":
                raise ValueError(f"{op!r} needs discrete-valued children")
        if op == "implies" and len(node) != 3:
            raise ValueError("implies takes two arguments")
        return "bool"
    if op == "eq":
        if len(node) != 3 or any(_node_type(c) != "operand" for c in node[1:]):
            raise ValueError("eq takes two var/const operands")
        return "real"
    if op == "mul":
        if len(node) != 3 or _node_type(node[1]) != "bool" or _node_type(node[2]) == "operand":
            raise ValueError("mul takes a discrete subtree and a feature subtree")
        return "real"
    if op == "sum":
        if any(_node_type(c) == "operand" for c in node[1:]):
            raise ValueError("sum children must be features or discrete subtrees")
        return "real"
    raise ValueError(f"unknown formula node {op!r}")


def _collect_positions(node, acc):
    op = node[0]
    if op == "atom":
        acc.setdefault(node[1], set()).add("d")
    elif op == "var":
        acc.setdefault(node[1], set()).add("c")
    elif op not in ("lit", "const"):
        for child in node[1:]:
            _collect_positions(child, acc)
    return acc


def _shape(node, consts):
    """Replace constants by slots; returns the tree shape and fills ``consts``."""
    op = node[0]
    if op == "const":
        consts.append(node[1])
        return ("const", len(consts) - 1)
    if op in ("atom", "lit", "var"):
        return node
    return (op,) + tuple(_shape(c, consts) for c in node[1:])


def _substitute(node, fixed, remap):
    op = node[0]
    if op == "atom":
        p = node[1]
        return lit(fixed[p]) if p in fixed else ("atom", remap[p])
    if op == "var":
        p = node[1]
        return const(fixed[p]) if p in fixed else ("var", remap[p])
    if op in ("lit", "const"):
        return node
    return (op,) + tuple(_substitute(c, fixed, remap) for c in node[1:])


def _eval_shape(node, xs, consts, xp, nd):
    op = node[0]
    if op == "atom":
        return xs[node[1]] * 1.0
    if op == "lit":
        return float(node[1])
    if op == "var":
        return xs[node[1]]
    if op == "const":
        return _expand(consts[:, node[1]], nd)
    args = [_eval_shape(c, xs, consts, xp, nd) for c in node[1:]]
    if op == "not":
        return 1.0 - args[0]
    if op == "and":
        out = args[0]
        for a in args[1:]:
            out = out * a
        return out
    if op == "or":
        out = 1.0 - args[0]
        for a in args[1:]:
            out = out * (1.0 - a)
        return 1.0 - out
    if op == "implies":
        return 1.0 - args[0] + args[0] * args[1]
    if op == "eq":
        return -((args[0] - args[1]) ** 2)
    if op == "mul":
        return args[0] * args[1]
    if op == "sum":
        out = args[0]
        for a in args[1:]:
            out = out + a
        return out
    raise ValueError(op)


@dataclass(frozen=True, eq=False)
class HybridFormulaPotential(Potential):
    """log psi(x) = weight * f(x) for a weighted hybrid formula ``f``.

    Discrete atoms index Boolean slots; ``eq`` is the feature -(a - b)^2.
    """

    weight: float
    formula: tuple
    _kinds: tuple = field(init=False, repr=False)
    kind = "hybrid_formula"

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        _node_type(self.formula)
        used = _collect_positions(self.formula, {})
        arity = max(used) + 1 if used else 0
        kinds = []
        for p in range(arity):
            if p not in used:
                raise ArityMismatch(f"formula position {p} is never referenced")
            if len(used[p]) > 1:
                raise ArityMismatch(f"formula position {p} used as both atom and var")
            kinds.append(disc(2) if "d" in used[p] else CONT)
        object.__setattr__(self, "_kinds", tuple(kinds))

    def position_kinds(self):
        return self._kinds

    def structure_key(self):
        return ("hybrid_formula", _shape(self.formula, []), self._kinds)

    def param_vector(self):
        consts = []
        _shape(self.formula, consts)
        return np.array([self.weight] + consts)

    def restrict(self, fixed):
        self._check_fixed(fixed)
        if not fixed:
            return self
        free = [p for p in range(self.arity) if p not in fixed]
        remap = {p: i for i, p in enumerate(free)}
        tree = _substitute(self.formula, fixed, remap)
        if not free:
            consts = []
            shape = _shape(tree, consts)
            value = _eval_shape(shape, [], np.array([consts], dtype=float).reshape(1, -1), np, 1)
            return constant_potential(self.weight * float(np.reshape(value, -1)[0]))
        return HybridFormulaPotential(self.weight, tree)

    def to_json(self):
        return {"kind": "hybrid_formula", "weight": self.weight, "formula": formula_to_json(self.formula)}


def formula_to_json(node):
    op = node[0]
    if op in ("atom", "var"):
        return {"op": op, "pos": node[1]}
    if op in ("lit", "const"):
        return {"op": op, "value": node[1]}
    return {"op": op, "args": [formula_to_json(c) for c in node[1:]]}


def formula_from_json(d):
    op = d["op"]
    if op == "atom":
        return atom(d["pos"])
    if op == "var":
        return var(d["pos"])
    if op == "lit":
        return lit(d["value"])
    if op == "const":
        return const(d["value"])
    return (op,) + tuple(formula_from_json(c) for c in d["args"])


# --------------------------------------------------------------------------
# Batched evaluation


def batched_log(key: tuple, params, xs: list, xp=np):
    """Evaluate ``log psi`` for a batch of same-structure potentials.

    ``params`` is ``(B, P)``; ``xs[p]`` holds values for slot ``p`` with leading
    axis ``B`` (integer states for discrete slots). Result broadcasts over the
    trailing axes of ``xs``.
    """
    kind = key[0]
    nd = _ndim(xs)
    B = params.shape[0]
    if kind == "table":
        cards = key[1]
        if not cards:
            return _expand(params[:, 0], nd)
        shape = np.broadcast_shapes((B,) + (1,) * (nd - 1), *(x.shape for x in xs))
        idx = 0
        stride = 1
        for x, c in zip(reversed(xs), reversed(cards)):
            idx = idx + x * stride
            stride *= c
        idx = xp.broadcast_to(idx, shape).reshape(B, -1)
        return xp.take_along_axis(params, idx, axis=1).reshape(shape)
    if kind == "quadratic":
        d = key[1]
        A = params[:, : d * d]
        b = params[:, d * d: d * d + d]
        out = _expand(params[:, -1], nd)
        for i in range(d):
            out = out + _expand(b[:, i], nd) * xs[i]
            out = out - _expand(A[:, i * d + i], nd) * xs[i] * xs[i]
            for j in range(i + 1, d):
                out = out - 2.0 * _expand(A[:, i * d + j], nd) * xs[i] * xs[j]
        return out
    if kind == "linear_gaussian":
        a, m, s = (_expand(params[:, i], nd) for i in range(3))
        r = xs[0] - a * xs[1] - m
        return -(r * r) / s
    if kind == "hybrid_formula":
        f = _eval_shape(key[1], xs, params[:, 1:], xp, nd)
        return _expand(params[:, 0], nd) * f
    raise ValueError(f"unknown potential kind {kind!r}")


def log_potential(p: Potential, x) -> float:
    return p.log_value(x)


def restrict(p: Potential, fixed: dict) -> Potential:
    return p.restrict(fixed)


# --------------------------------------------------------------------------
# Signatures and JSON


def _quantize(v: float, quantum: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    scaled = v / quantum
    if math.isinf(scaled):  # far beyond any quantum; the float itself is the class
        return repr(v)
    q = round(scaled)
    return str(q if q != 0 else 0)


def signature(p: Potential, quantum: float = DEFAULT_QUANTUM) -> bytes:
    """Canonical digest of (kind, structure, quantized parameters)."""
    params = ",".join(_quantize(float(v), quantum) for v in p.param_vector())
    text = f"{p.kind}|{p.structure_key()!r}|{params}"
    return hashlib.sha256(text.encode()).digest()


def _enc(v: float):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return float(v)


def _dec(v) -> float:
    return float(v)  # float("inf") / float("-inf") parse the sentinels


def potential_from_json(d: dict) -> Potential:
    kind = d["kind"]
    if kind == "table":
        return TablePotential(tuple(d["cardinalities"]), np.array([_dec(v) for v in d["log_values"]]))
    if kind == "quadratic":
        return QuadraticPotential(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float), d.get("c", 0.0))
    if kind == "linear_gaussian":
        return LinearGaussianPotential(d.get("a", 1.0), d.get("m", 0.0), d["var"])
    if kind == "hybrid_formula":
        return HybridFormulaPotential(d["weight"], formula_from_json(d["formula"]))
    raise ValueError(f"unknown potential kind {kind!r}")
