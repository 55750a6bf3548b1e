import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sgfa.analysis import (
    ChainFactorSummary,
    covariance_explained,
    factor_contributions,
    match_factors,
    project_to_data,
    recovery_score,
    subgroup_tests,
    summarize_chains,
)
from sgfa.errors import DegenerateTestError, InvalidArgumentError
from sgfa.model import ModelSpec, build_layout
from sgfa.synthgen import SyntheticScenario, generate

D = (12, 8, 6)
K = 4
N = 30


def _base(seed=0):
    rng = np.random.default_rng(seed)
    W = np.zeros((sum(D), K))
    for k in range(K):          # disjoint supports keep the factors far apart
        W[k * 6:(k + 1) * 6 + 2, k] = rng.normal(0, 2, 8)
    return W, rng.standard_normal((K, N))


def _scramble(W, Z, rng):
    perm = rng.permutation(W.shape[1])
    sign = rng.choice([-1.0, 1.0], W.shape[1])
    return W[:, perm] * sign, Z[perm] * sign[:, None]


def _noise(rng):
    return rng.standard_normal((sum(D), K)), rng.standard_normal((K, N))


def _summary(chains):
    return ChainFactorSummary([c[0] for c in chains], [c[1] for c in chains], D)


def _canonical(W, Z):
    """Columns of W (and rows of Z) with the sign fixed by the largest |loading|."""
    s = np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(W.shape[1])])
    return W * s, Z * s[:, None]


# -- per-chain summaries ---------------------------------------------------------

def test_summarize_chains():
    layout = build_layout(ModelSpec("gfa", D, N, K))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(layout.size)
    s = summarize_chains([x[None]], layout, D)
    np.testing.assert_array_equal(s.W[0], x[layout["W"]].reshape(sum(D), K))
    np.testing.assert_array_equal(s.Z[0], x[layout["Z"]].reshape(K, N))
    a, b = rng.standard_normal((2, 50, layout.size))
    sym = np.concatenate([a, -a])
    assert np.abs(summarize_chains([sym], layout, D).W[0]).max() < 1e-15
    joint = summarize_chains([np.concatenate([a, b])], layout, D).W[0]
    sep = summarize_chains([a, b], layout, D)
    np.testing.assert_allclose(joint, (sep.W[0] + sep.W[1]) / 2, atol=1e-14)
    with pytest.raises(InvalidArgumentError):
        summarize_chains([np.zeros((0, layout.size))], layout, D)


# -- matching --------------------------------------------------------------------

def test_permutation_and_sign_case():
    rng = np.random.default_rng(1)
    W, Z = _base()
    chains = [(W, Z)] + [_scramble(W, Z, rng) for _ in range(3)]
    robust = match_factors(_summary(chains))
    assert len(robust) == K
    for f in robust.factors:
        assert f.support == 4 and abs(f.similarity - 1) < 1e-10
    Wc, Zc = _canonical(W, Z)
    for f in robust.factors:
        j = int(np.argmax(np.abs(Wc.T @ f.loadings)))
        np.testing.assert_allclose(f.loadings, Wc[:, j], atol=1e-12)
        np.testing.assert_allclose(f.latent, Zc[j], atol=1e-12)


def test_three_of_four_case():
    rng = np.random.default_rng(2)
    W, Z = _base()
    chains = [(W, Z), _scramble(W, Z, rng), _noise(rng), _scramble(W, Z, rng)]
    robust = match_factors(_summary(chains))
    assert len(robust) == K and all(f.support == 3 and 2 not in f.members for f in robust.factors)


def test_two_of_four_case():
    rng = np.random.default_rng(3)
    W, Z = _base()
    chains = [(W, Z), _noise(rng), _scramble(W, Z, rng), _noise(rng)]
    robust = match_factors(_summary(chains))
    assert len(robust) == 0 and robust.is_empty
    assert robust.to_json()["empty"] is True


def test_noisy_chains_still_match():
    rng = np.random.default_rng(4)
    W, Z = _base()
    chains = [(W + 0.05 * rng.standard_normal(W.shape), Z)] + \
        [_scramble(W + 0.05 * rng.standard_normal(W.shape), Z, rng) for _ in range(3)]
    robust = match_factors(_summary(chains))
    assert len(robust) == K and all(0.99 < f.similarity < 1 for f in robust.factors)
    assert len(match_factors(_summary(chains), threshold=0.99999)) == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), chain=st.integers(0, 3), noisy=st.integers(1, 3))
def test_match_invariant_to_chain_relabelling(seed, chain, noisy):
    rng = np.random.default_rng(seed)
    W, Z = _base(seed % 7)
    chains = [(W + 0.1 * rng.standard_normal(W.shape), Z + 0.1 * rng.standard_normal(Z.shape)) for _ in range(4)]
    chains[noisy] = _noise(rng)
    ref = match_factors(_summary(chains))
    chains[chain] = _scramble(*chains[chain], rng)
    out = match_factors(_summary(chains))
    assert len(out) == len(ref)
    for a, b in zip(ref.factors, out.factors):
        np.testing.assert_allclose(a.loadings, b.loadings, atol=1e-12)
        np.testing.assert_allclose(a.latent, b.latent, atol=1e-12)
        assert a.support == b.support
        assert a.similarity == pytest.approx(b.similarity, abs=1e-12)


def test_threshold_validation():
    W, Z = _base()
    with pytest.raises(InvalidArgumentError):
        match_factors(_summary([(W, Z)] * 2), threshold=0)


# -- contributions ----------------------------------------------------------------

def test_contributions_examples():
    labels = np.array([1, 1, 2, 2, 3, 3])
    np.testing.assert_allclose(factor_contributions([1, -1, 1, 1, -1, 1], labels), [1 / 3] * 3)
    np.testing.assert_allclose(factor_contributions([3, -3, 1, -1, 0, 0], labels), [0.75, 0.25, 0.0])
    with pytest.raises(InvalidArgumentError):
        factor_contributions([1, 2, 3, 4, 5, 6], labels, groups=[1, 2, 3, 4])


@settings(max_examples=100, deadline=None)
@given(z=st.lists(st.floats(-1e3, 1e3), min_size=9, max_size=9).filter(lambda v: np.abs(v).sum() > 1e-3),
       kappa=st.floats(1e-3, 1e3))
def test_contributions_normalised_and_scale_free(z, kappa):
    labels = np.repeat([1, 2, 3], 3)
    c = factor_contributions(z, labels)
    assert abs(c.sum() - 1) < 1e-12 and np.all(c >= 0)
    np.testing.assert_allclose(factor_contributions(kappa * np.asarray(z), labels), c, atol=1e-12)


# -- subgroup tests -----------------------------------------------------------------

def test_tests_match_textbook_formulas():
    rng = np.random.default_rng(5)
    for _ in range(50):
        G = int(rng.integers(2, 5))
        sizes = rng.integers(2, 15, G)
        labels = np.repeat(np.arange(G), sizes)
        x = np.abs(rng.standard_normal(labels.size) * rng.uniform(0.5, 2) + rng.uniform(0, 1, G)[labels])
        groups = [list(x[labels == g]) for g in range(G)]
        F, d1, d2 = oracles.anova_F(groups)
        for welch in (False, True):
            res = subgroup_tests(x, labels, welch=welch)
            assert res.F == pytest.approx(F, abs=1e-8, rel=1e-8)
            assert res.p == pytest.approx(oracles.f_sf(F, d1, d2), abs=1e-8)
            i = 0
            for a in range(G):
                for b in range(a + 1, G):
                    T, df = (oracles.welch_t if welch else oracles.pooled_t)(groups[a], groups[b])
                    t = res.pairwise[i]
                    assert (t.a, t.b) == (a, b)
                    assert t.T == pytest.approx(T, abs=1e-8, rel=1e-8)
                    assert t.p == pytest.approx(oracles.t_two_sided(T, df), abs=1e-8)
                    i += 1


def test_tests_trivial_cases():
    res = subgroup_tests([0, 1, 2] * 3, np.repeat([1, 2, 3], 3))
    assert res.F == pytest.approx(0, abs=1e-12) and res.p == pytest.approx(1)
    res = subgroup_tests([0, 1, 2, 0, 1, 2], [1, 1, 1, 2, 2, 2])
    assert res.pairwise[0].T == pytest.approx(0, abs=1e-12) and res.pairwise[0].p == pytest.approx(1)


def test_tests_degenerate_inputs():
    with pytest.raises(DegenerateTestError):
        subgroup_tests([1, 1, 2, 2], [1, 1, 2, 2])
    with pytest.raises(DegenerateTestError):
        subgroup_tests([1, 1, 2, 3], [1, 1, 2, 2], welch=True)
    with pytest.raises(InvalidArgumentError):
        subgroup_tests([1, 2, 3], [1, 1, 2])
    with pytest.raises(InvalidArgumentError):
        subgroup_tests([1, 2, 3], [1, 1, 1])


# -- data-space quantities -----------------------------------------------------------

def test_covariance_explained():
    rng = np.random.default_rng(6)
    w, z = rng.standard_normal((5, 1)), rng.standard_normal((1, 7))
    assert covariance_explained(w, z, w @ z) == [(0, pytest.approx(1.0, abs=1e-14))]
    W = np.eye(4)[:, :2] * 3
    Z = np.vstack([np.r_[1.0, 0, 0], np.r_[0, 1.0, 0]])
    fr = covariance_explained(W, Z, W @ Z)
    assert [f for _, f in fr] == pytest.approx([0.5, 0.5])
    W2 = np.column_stack([W[:, 0], 2 * W[:, 1]])
    assert [k for k, _ in covariance_explained(W2, Z, W2 @ Z)] == [1, 0]
    with pytest.raises(InvalidArgumentError):
        covariance_explained(W, Z, np.zeros((4, 3)))


def test_covariance_explained_not_clamped():
    w = np.ones((3, 2))
    z = np.vstack([np.ones(4), -np.ones(4) * 0.5])
    total = sum(f for _, f in covariance_explained(w, z, w @ z))
    assert total > 1


def test_project_to_data():
    X = project_to_data(np.eye(3)[:, :1], np.ones((1, 4)), 0)
    np.testing.assert_array_equal(X, np.vstack([np.ones(4), np.zeros((2, 4))]))
    rng = np.random.default_rng(7)
    W, Z = rng.standard_normal((5, 3)), rng.standard_normal((3, 6))
    np.testing.assert_allclose(sum(project_to_data(W, Z, k) for k in range(3)), W @ Z, atol=1e-14)
    np.testing.assert_array_equal(project_to_data(-W, -Z, 1), project_to_data(W, Z, 1))
    with pytest.raises(InvalidArgumentError):
        project_to_data(W, Z, 3)


# -- recovery --------------------------------------------------------------------

@pytest.fixture(scope="module")
def truth():
    return generate(SyntheticScenario(seed=0))[1]


def _robust_from(W, Z, Dv):
    return match_factors(ChainFactorSummary([W] * 4, [Z] * 4, Dv))


def test_recovery_exact(truth):
    rng = np.random.default_rng(8)
    W, Z = _scramble(truth.W, truth.Z, rng)
    rep = recovery_score(_robust_from(W, Z, truth.D), truth, threshold=0.8)
    assert rep.similarity == pytest.approx([1, 1, 1], abs=1e-12)
    assert rep.n_spurious == 0 and rep.n_unmatched_true == 0 and rep.all_matched
    assert rep.max_contribution_error < 1e-12


def test_recovery_empty(truth):
    empty = match_factors(ChainFactorSummary([np.zeros((120, 2))] * 4, [np.zeros((2, 150))] * 4, truth.D))
    rep = recovery_score(empty, truth)
    assert rep.n_unmatched_true == 3 and rep.max_contribution_error is None


def test_recovery_small_noise(truth):
    rng = np.random.default_rng(9)
    noise = rng.standard_normal(truth.W.shape)
    for k in range(3):
        noise[:, k] *= np.linalg.norm(truth.W[:, k]) / np.linalg.norm(noise[:, k]) / 100
    rep = recovery_score(_robust_from(truth.W + noise, truth.Z, truth.D), truth)
    assert min(rep.similarity) > 0.99


def test_recovery_counts_spurious(truth):
    rng = np.random.default_rng(10)
    extra = np.zeros((120, 1))
    extra[5:9] = 1.0     # overlaps a true factor only weakly
    W = np.column_stack([truth.W, extra])
    Z = np.vstack([truth.Z, rng.standard_normal((1, 150))])
    rep = recovery_score(_robust_from(W, Z, truth.D), truth, threshold=0.8)
    assert rep.n_spurious == 1 and rep.n_unmatched_true == 0
