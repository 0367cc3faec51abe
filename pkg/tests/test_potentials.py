import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_hybrid, spd
from lhvi.errors import ArityMismatch, DomainMismatch
from lhvi.potentials import (
    HybridFormulaPotential,
    LinearGaussianPotential,
    QuadraticPotential,
    TablePotential,
    atom,
    conj,
    const,
    disj,
    eq,
    fsum,
    implies,
    lit,
    neg,
    potential_from_json,
    scalar_mul,
    var,
)


def test_equal_parameters_equal_signatures():
    assert LinearGaussianPotential(1, 0, 1).signature() == LinearGaussianPotential(1, 0, 1).signature()
    assert LinearGaussianPotential(1, 0, 1).signature() != LinearGaussianPotential(1, 0, 2).signature()


def test_signature_quantum_absorbs_float_noise():
    a = QuadraticPotential([[0.5]], [0.3])
    b = QuadraticPotential([[0.5 + 1e-15]], [0.3 - 1e-15])
    assert a.signature() == b.signature()
    assert a.signature() != QuadraticPotential([[0.5 + 1e-9]], [0.3]).signature()


def test_signature_distinguishes_kinds():
    lg = LinearGaussianPotential(1.0, 0.0, 1.0)
    assert lg.signature() != lg.as_quadratic().signature()


def test_linear_gaussian_value():
    p = LinearGaussianPotential(2.0, 1.0, 4.0)
    assert p.log_value([3.0, 0.5]) == pytest.approx(-((3.0 - 1.0 - 1.0) ** 2) / 4.0)
    q = p.as_quadratic()
    for x in ([0.3, -2.0], [5.0, 1.0]):
        assert q.log_value(x) == pytest.approx(p.log_value(x), abs=1e-12)


def test_linear_gaussian_rejects_bad_variance():
    with pytest.raises(ValueError):
        LinearGaussianPotential(1.0, 0.0, 0.0)


def test_table_indexing_and_zero():
    t = TablePotential((2, 3), [-math.inf] + [math.log(i) for i in range(1, 6)])
    assert t.log_value([0, 0]) == -math.inf
    assert t.log_value([1, 2]) == pytest.approx(math.log(5))
    with pytest.raises(DomainMismatch):
        t.log_value([2, 0])
    with pytest.raises(ArityMismatch):
        TablePotential((2, 2), [0.0, 1.0])


def test_implication_is_indicator():
    f = implies(conj(atom(0), atom(1)), atom(2))
    p = HybridFormulaPotential(1.0, f)
    for a, b, c in itertools.product((0, 1), repeat=3):
        expect = 0.0 if (a and b and not c) else 1.0
        assert p.log_value([a, b, c]) == expect


def test_boolean_connectives_in_zero_one():
    f = disj(neg(atom(0)), conj(atom(1), lit(1)))
    p = HybridFormulaPotential(1.0, f)
    for a, b in itertools.product((0, 1), repeat=2):
        assert p.log_value([a, b]) == float((not a) or b)


def test_feature_values():
    p = HybridFormulaPotential(0.2, fsum(scalar_mul(neg(atom(0)), eq(var(1), const(0.5))),
                                         scalar_mul(atom(0), eq(var(2), const(-1.0)))))
    assert p.log_value([0, 1.5, 7.0]) == pytest.approx(-0.2)
    assert p.log_value([1, 7.0, 0.0]) == pytest.approx(-0.2)
    with pytest.raises(ArityMismatch):
        HybridFormulaPotential(1.0, eq(var(0), var(2)))
    with pytest.raises(ValueError):
        HybridFormulaPotential(1.0, ("mul", var(0), eq(var(0), const(0))))


def _restrict_check(p, x, fixed_positions):
    fixed = {i: x[i] for i in fixed_positions}
    rest = [x[i] for i in range(len(x)) if i not in fixed]
    r = p.restrict(fixed)
    got = r.log_value(rest) if rest else r.log_value([])
    assert got == pytest.approx(p.log_value(x), abs=1e-12, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_restrict_then_evaluate(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    pots = [
        (QuadraticPotential(rng.normal(size=(d, d)), rng.normal(size=d), rng.normal()),
         list(rng.normal(size=d))),
        (LinearGaussianPotential(rng.normal(), rng.normal(), rng.uniform(0.1, 3)), list(rng.normal(size=2))),
        (TablePotential((2, 3, 2), rng.normal(size=12)),
         [int(rng.integers(2)), int(rng.integers(3)), int(rng.integers(2))]),
        (HybridFormulaPotential(rng.normal(), fsum(scalar_mul(implies(atom(0), atom(1)), eq(var(2), var(3))),
                                                   eq(var(3), const(float(rng.normal()))))),
         [int(rng.integers(2)), int(rng.integers(2))] + list(rng.normal(size=2))),
    ]
    for p, x in pots:
        k = int(rng.integers(0, len(x) + 1))
        _restrict_check(p, x, sorted(rng.choice(len(x), size=k, replace=False).tolist()))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quadratic_depends_on_symmetric_part(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    A = rng.normal(size=(d, d))
    b, x = rng.normal(size=d), rng.normal(size=d)
    direct = -x @ A @ x + b @ x
    p = QuadraticPotential(A, b)
    sym = QuadraticPotential(0.5 * (A + A.T), b)
    assert p.log_value(x) == pytest.approx(direct, abs=1e-10)
    assert sym.log_value(x) == pytest.approx(direct, abs=1e-10)
    assert p.signature() == sym.signature()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_discrete_formula_matches_enumerated_table(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    atoms = [atom(i) for i in range(n)]
    ops = [lambda a, b: conj(a, b), lambda a, b: disj(a, b), lambda a, b: implies(a, b)]
    f = atoms[0]
    for a in atoms[1:]:
        f = ops[int(rng.integers(3))](f, a if rng.random() < 0.7 else neg(a))
    w = float(rng.normal())
    p = HybridFormulaPotential(w, f)
    table = [p.log_value(list(x)) for x in itertools.product((0, 1), repeat=n)]
    t = TablePotential((2,) * n, table)
    for x in itertools.product((0, 1), repeat=n):
        assert t.log_value(list(x)) == p.log_value(list(x))
        assert p.log_value(list(x)) in (0.0, w)


def test_json_round_trip_all_kinds():
    rng = np.random.default_rng(2)
    pots = [
        TablePotential((2, 2), [0.0, -math.inf, 1.0, 2.0]),
        QuadraticPotential(spd(rng, 2), rng.normal(size=2), 0.5),
        LinearGaussianPotential(0.7, -0.1, 2.5),
        HybridFormulaPotential(0.2, fsum(scalar_mul(neg(atom(0)), eq(var(1), const(0.25))))),
    ]
    for p in pots:
        r = potential_from_json(p.to_json())
        assert r.signature() == p.signature()


def test_graph_potentials_batched_equals_scalar():
    from lhvi.potentials import batched_log

    g = random_hybrid(np.random.default_rng(11))
    for f in g.factors:
        p = f.potential
        pts = []
        for kind in p.position_kinds():
            pts.append(np.array([0, 1]) if kind[0] == "d" else np.array([-0.4, 1.2]))
        out = batched_log(p.structure_key(), p.param_vector()[None, :], [x[None, :] for x in pts])
        for j in range(2):
            assert out[0, j] == pytest.approx(p.log_value([x[j] for x in pts]), abs=1e-12)


def test_signature_of_huge_parameters():
    a = QuadraticPotential([[-1e305]], [0.0])
    assert a.signature() == QuadraticPotential([[-1e305]], [0.0]).signature()
    assert a.signature() != QuadraticPotential([[-2e305]], [0.0]).signature()
