import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import REAL, q_for_compressed, q_for_graph, random_hybrid, random_symmetric
from lhvi.errors import NonFiniteIntegrand
from lhvi.graph import Discrete, FactorDecl, VariableDecl, build_graph
from lhvi.lifting import lift, trivial_compression
from lhvi.objective import Objective
from lhvi.potentials import LinearGaussianPotential, QuadraticPotential, TablePotential
from lhvi.variational import (
    CategoricalMarginal,
    GaussianMarginal,
    MixtureMeanField,
    ObjectiveSpec,
    QuadratureRule,
    bethe_entropy,
    clique_expectation,
    energy,
    expand,
    free_energy,
    gradient,
    init_mixture,
    jensen_entropy,
    lifted_free_energy,
    marginal_density,
)

H_GAUSS = 0.5 * math.log(2 * math.pi * math.e)
H_JENSEN_STD = -math.log(1 / (2 * math.sqrt(math.pi)))
RULE = QuadratureRule(8)


def gauss_q(means, log_stds=None, logits=None, key="x"):
    means = np.atleast_1d(np.asarray(means, dtype=float))
    log_stds = np.zeros_like(means) if log_stds is None else np.asarray(log_stds, dtype=float)
    logits = np.zeros(means.size) if logits is None else np.asarray(logits, dtype=float)
    return MixtureMeanField(logits, {key: GaussianMarginal(means, log_stds)})


def unary_graph(A=0.5, b=0.0):
    return build_graph([VariableDecl("x", REAL)], [FactorDecl("f", ("x",), QuadraticPotential([[A]], [b]))])


@pytest.mark.parametrize("n", [1, 2, 5, 8, 12])
def test_quadrature_rule_invariants(n):
    r = QuadratureRule(n)
    assert r.weights.sum() == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    # moments of N(0, 1/2) up to degree 2n - 1
    for deg in range(2 * n):
        exact = 0.0 if deg % 2 else math.sqrt(math.pi) * math.prod(range(deg - 1, 0, -2)) / 2 ** (deg // 2)
        scale = np.sum(np.abs(r.weights * r.nodes ** deg))
        assert np.sum(r.weights * r.nodes ** deg) == pytest.approx(exact, abs=1e-13 * max(1.0, scale))


def test_marginal_density_examples():
    assert marginal_density(gauss_q([0.0]), "x", 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    q = MixtureMeanField(np.zeros(2), {"d": CategoricalMarginal(np.array([[50.0, -50.0], [-50.0, 50.0]]))})
    assert marginal_density(q, "d", 0) == pytest.approx(0.5)
    assert marginal_density(q, "d", 1) == pytest.approx(0.5)
    phi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
    assert marginal_density(gauss_q([0.0, 2.0]), "x", 1.0) == pytest.approx(phi1, rel=1e-12)


def test_clique_expectation_examples():
    q = gauss_q([0.0])
    assert clique_expectation(q, 0, ["x"], lambda x: x ** 2, QuadratureRule(2)) == pytest.approx(1.0, abs=1e-14)
    assert clique_expectation(q, 0, ["x"], lambda x: np.ones_like(x), QuadratureRule(1)) == pytest.approx(1.0)
    q2 = MixtureMeanField(np.zeros(1), {"a": GaussianMarginal(np.zeros(1), np.zeros(1)),
                                        "b": GaussianMarginal(np.zeros(1), np.zeros(1))})
    assert clique_expectation(q2, 0, ["a", "b"], lambda a, b: -(a - b) ** 2, RULE) == pytest.approx(-2.0, abs=1e-12)
    rng = np.random.default_rng(0)
    s = rng.standard_normal((2, 10**6))
    mc = -((s[0] - s[1]) ** 2)
    assert abs(mc.mean() + 2.0) < 3 * mc.std() / 1e3


def test_clique_expectation_nonfinite():
    with pytest.raises(NonFiniteIntegrand):
        clique_expectation(gauss_q([0.0]), 0, ["x"], lambda x: np.where(x > 0, np.inf, 0.0), RULE)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quadrature_exact_for_polynomials(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    mu, sd = rng.normal(), math.exp(rng.uniform(-1, 1))
    coef = rng.normal(size=2 * n)
    q = gauss_q([mu], [math.log(sd)])
    got = clique_expectation(q, 0, ["x"], lambda x: np.polyval(coef, x), QuadratureRule(n))
    # exact Gaussian moments via the binomial expansion of (mu + sd z)^k
    moments = [1.0]
    for k in range(1, 2 * n):
        m = sum(math.comb(k, j) * mu ** (k - j) * sd ** j * (math.prod(range(j - 1, 0, -2)) if j % 2 == 0 else 0)
                for j in range(k + 1))
        moments.append(m)
    exact = sum(c * moments[len(coef) - 1 - i] for i, c in enumerate(coef))
    assert got == pytest.approx(exact, abs=1e-12 * max(1.0, sum(abs(c) * abs(m) for c, m in zip(coef[::-1], moments))))


def test_energy_examples():
    g = build_graph([VariableDecl("x", REAL)], [FactorDecl("f", ("x",), QuadraticPotential([[1.0]], [0.0]))])
    assert energy(gauss_q([0.0]), g, RULE) == pytest.approx(1.0, abs=1e-14)
    empty = build_graph([VariableDecl("x", REAL)], [])
    assert energy(gauss_q([0.0]), empty, RULE) == 0.0
    chain = build_graph([VariableDecl("a", REAL), VariableDecl("b", REAL)],
                        [FactorDecl("f", ("a", "b"), LinearGaussianPotential(1.0, 0.0, 1.0))])
    q = MixtureMeanField(np.zeros(1), {"a": GaussianMarginal(np.zeros(1), np.zeros(1)),
                                       "b": GaussianMarginal(np.zeros(1), np.zeros(1))})
    assert energy(q, chain, RULE) == pytest.approx(2.0, abs=1e-12)


def test_bethe_entropy_examples():
    assert bethe_entropy(gauss_q([0.0]), unary_graph(), RULE) == pytest.approx(H_GAUSS, abs=1e-4)
    g = build_graph([VariableDecl("d", Discrete(2))], [FactorDecl("t", ("d",), TablePotential((2,), [0.0, 0.0]))])
    q = MixtureMeanField(np.zeros(1), {"d": CategoricalMarginal(np.zeros((1, 2)))})
    assert bethe_entropy(q, g, RULE) == pytest.approx(math.log(2), abs=1e-14)


def test_bethe_entropy_two_variable_tree_matches_monte_carlo():
    chain = build_graph([VariableDecl("a", REAL), VariableDecl("b", REAL)],
                        [FactorDecl("f", ("a", "b"), LinearGaussianPotential(1.0, 0.0, 1.0))])
    q = MixtureMeanField(np.zeros(1), {"a": GaussianMarginal(np.array([0.3]), np.array([0.2])),
                                       "b": GaussianMarginal(np.array([-1.0]), np.array([-0.4]))})
    rng = np.random.default_rng(1)
    n = 10**6
    a = 0.3 + math.exp(0.2) * rng.standard_normal(n)
    b = -1.0 + math.exp(-0.4) * rng.standard_normal(n)
    logq = (-0.5 * ((a - 0.3) / math.exp(0.2)) ** 2 - 0.2 - 0.5 * ((b + 1) / math.exp(-0.4)) ** 2 + 0.4
            - math.log(2 * math.pi))
    mc, se = -logq.mean(), logq.std() / math.sqrt(n)
    h = bethe_entropy(q, chain, RULE)
    assert abs(h - mc) < 4 * se
    assert h == pytest.approx(2 * H_GAUSS + 0.2 - 0.4, abs=2e-3)


def test_jensen_entropy_examples():
    assert jensen_entropy(gauss_q([0.0])) == pytest.approx(H_JENSEN_STD, abs=1e-12)
    q = MixtureMeanField(np.zeros(1), {"d": CategoricalMarginal(np.zeros((1, 2)))})
    assert jensen_entropy(q) == pytest.approx(math.log(2), abs=1e-14)
    far = jensen_entropy(gauss_q([0.0, 100.0]))
    assert far == pytest.approx(math.log(2) + H_JENSEN_STD, abs=1e-10)
    # numerical integral of the overlap for a closer pair
    q = gauss_q([0.0, 1.5], [0.1, -0.3], [0.2, -0.1])
    x = np.linspace(-15, 15, 200001)
    w = q.weights
    pdfs = [np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
            for m, s in zip([0.0, 1.5], np.exp([0.1, -0.3]))]
    ov = np.array([[np.trapezoid(p * r, x) for r in pdfs] for p in pdfs])
    expect = -sum(w[k] * math.log(sum(w[j] * ov[k, j] for j in range(2))) for k in range(2))
    assert jensen_entropy(q) == pytest.approx(expect, abs=1e-9)


def test_free_energy_examples():
    empty = build_graph([VariableDecl("x", REAL)], [])
    assert free_energy(gauss_q([0.0]), empty, ObjectiveSpec("bethe")) == pytest.approx(-H_GAUSS, abs=1e-4)
    g = unary_graph(0.5)
    log_z = 0.5 * math.log(2 * math.pi)
    fj = free_energy(gauss_q([0.0]), g, ObjectiveSpec("jensen"))
    assert -fj == pytest.approx(-0.5 + H_JENSEN_STD, abs=1e-12)
    assert -fj <= log_z
    fb = free_energy(gauss_q([0.0]), g, ObjectiveSpec("bethe"))
    assert fb == pytest.approx(-log_z, abs=1e-12)


@pytest.mark.parametrize("entropy", ["bethe", "jensen"])
@pytest.mark.parametrize("seed", range(6))
def test_compiled_matches_reference(entropy, seed):
    rng = np.random.default_rng(seed)
    g = random_hybrid(rng)
    q = q_for_graph(g, int(rng.integers(1, 4)), rng)
    ref = energy(q, g, RULE)
    ref -= bethe_entropy(q, g, RULE) if entropy == "bethe" else jensen_entropy(q)
    assert free_energy(q, g, ObjectiveSpec(entropy)) == pytest.approx(ref, abs=1e-9, rel=1e-10)


def test_bounded_domain_nodes_are_clipped():
    from lhvi.graph import Continuous

    g = build_graph([VariableDecl("x", Continuous(0.0, 10.0))],
                    [FactorDecl("f", ("x",), QuadraticPotential([[1.0]], [0.0]))])
    q = gauss_q([0.0], [0.5])
    ref = energy(q, g, RULE)
    assert ref < energy(q, unary_graph(1.0), RULE)
    assert free_energy(q, g, ObjectiveSpec("jensen")) == pytest.approx(ref - jensen_entropy(q), abs=1e-10)


def test_lifted_equals_ground_for_trivial_compression():
    rng = np.random.default_rng(3)
    g = random_hybrid(rng)
    cg = trivial_compression(g)
    q = q_for_compressed(cg, 2, rng)
    for e in ("bethe", "jensen"):
        assert lifted_free_energy(q, cg, ObjectiveSpec(e)) == pytest.approx(
            free_energy(expand(q, cg), g, ObjectiveSpec(e)), abs=1e-10)


def test_star_lifted_equals_ground():
    from test_lifting import star

    g = star(5)
    cg = lift(g)
    rng = np.random.default_rng(8)
    q = q_for_compressed(cg, 2, rng)
    for e in ("bethe", "jensen"):
        assert lifted_free_energy(q, cg, ObjectiveSpec(e)) == pytest.approx(
            free_energy(expand(q, cg), g, ObjectiveSpec(e)), abs=1e-10)


def test_super_factor_count_scales_factor_term():
    from test_lifting import star

    rng = np.random.default_rng(2)
    vals = []
    for n in (1, 3):
        g = star(n, with_hub_prior=False)
        cg = lift(g)
        q = MixtureMeanField(np.zeros(1), {s: GaussianMarginal(np.array([0.4 * s - 0.2]), np.array([0.1]))
                                           for s in range(len(cg.super_variables))})
        vals.append(energy(expand(q, cg), g, RULE))
    assert vals[1] == pytest.approx(3 * vals[0], abs=1e-12)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lifting_consistency_property(seed):
    rng = np.random.default_rng(seed)
    g = random_symmetric(rng)
    cg = lift(g)
    q = q_for_compressed(cg, int(rng.integers(1, 4)), rng)
    e = "bethe" if rng.random() < 0.5 else "jensen"
    lifted = lifted_free_energy(q, cg, ObjectiveSpec(e))
    ground = free_energy(expand(q, cg), g, ObjectiveSpec(e))
    assert lifted == pytest.approx(ground, abs=1e-10, rel=1e-12)


def test_gradient_examples():
    g = build_graph([VariableDecl("x", REAL)], [FactorDecl("f", ("x",), QuadraticPotential([[-1.0]], [0.0]))])
    # energy = -E[x^2]; d/dmu E[x^2] = 2 mu; entropy does not depend on mu
    for mu, expect in ((0.0, 0.0), (1.0, 2.0)):
        grad = gradient(gauss_q([mu]), g, ObjectiveSpec("jensen"))
        obj = Objective(trivial_compression(g), ObjectiveSpec("jensen"), 1)
        _, mus, _, _ = obj.layout.split(grad)
        assert -mus[0, 0] == pytest.approx(expect, abs=1e-12)


def fd_check(obj, theta, h=1e-5):
    _, g = obj(theta)
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (obj(theta + e)[0] - obj(theta - e)[0]) / (2 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = random_hybrid(rng, max_vars=5)
    K = int(rng.integers(1, 4))
    for e in ("bethe", "jensen"):
        obj = Objective(trivial_compression(g), ObjectiveSpec(e), K)
        theta = obj.pack(q_for_graph_index(g, K, rng))
        assert fd_check(obj, theta) < 1e-4


def q_for_graph_index(g, K, rng):
    cg = trivial_compression(g)
    return q_for_compressed(cg, K, rng)


def test_lifted_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    g = random_symmetric(rng)
    cg = lift(g)
    obj = Objective(cg, ObjectiveSpec("bethe"), 2)
    assert fd_check(obj, obj.pack(q_for_compressed(cg, 2, rng))) < 1e-4


def test_clamped_marginals_not_in_parameters():
    g = build_graph([VariableDecl("a", REAL), VariableDecl("b", REAL)],
                    [FactorDecl("f", ("a", "b"), LinearGaussianPotential())])
    cg = trivial_compression(g)
    free = Objective(cg, ObjectiveSpec(), 2)
    clamped = Objective(cg, ObjectiveSpec(), 2, {cg.var_index["b"]: (1.0, 0.5)})
    assert clamped.n_params == free.n_params - 2 * 2
    q = clamped.mixture(np.zeros(clamped.n_params))
    assert set(q.marginals) == {cg.var_index["a"]}


def test_weights_and_categoricals_normalized():
    rng = np.random.default_rng(0)
    g = random_hybrid(rng, p_disc=0.9)
    q = q_for_graph(g, 3, rng)
    assert q.weights.sum() == pytest.approx(1.0) and np.all(q.weights >= 0)
    for m in q.marginals.values():
        if isinstance(m, CategoricalMarginal):
            assert np.allclose(m.probs.sum(-1), 1.0)


def test_init_mixture_respects_domains():
    from lhvi.graph import Continuous

    rng = np.random.default_rng(0)
    q = init_mixture([("p", Continuous(0.0, 10.0)), ("r", REAL), ("d", Discrete(3))], 4, rng)
    assert np.all((q.marginals["p"].mean >= 0) & (q.marginals["p"].mean <= 10))
    assert np.all(np.abs(q.marginals["r"].mean) <= 1)
    assert np.all(q.marginals["r"].log_std == 0)
    assert np.all(q.weights == 0.25)
    assert q.marginals["d"].logits.shape == (4, 3)


def test_objective_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec(delta=0.0)
    with pytest.raises(ValueError):
        ObjectiveSpec(entropy="exact")
    with pytest.raises(ValueError):
        QuadratureRule(0)
