import numpy as np
import pytest

from sgfa.errors import InvalidArgumentError
from sgfa.model import tau0
from sgfa.synthgen import GroundTruth, SyntheticScenario, generate, masks, true_contributions

SEEDS = range(5)


@pytest.fixture(scope="module")
def replicates():
    return {s: generate(SyntheticScenario(seed=s)) for s in SEEDS}


def test_default_shapes(replicates):
    data, truth = replicates[0]
    assert [v.shape for v in data.views] == [(60, 150), (40, 150), (20, 150)]
    assert truth.Z.shape == (3, 150) and truth.W.shape == (120, 3)
    assert np.bincount(truth.labels)[1:].tolist() == [50, 50, 50]
    assert np.array_equal(data.labels, truth.labels)


def test_deterministic():
    a, ta = generate(SyntheticScenario(seed=3))
    b, tb = generate(SyntheticScenario(seed=3))
    assert np.array_equal(a.stacked(), b.stacked()) and np.array_equal(ta.Z, tb.Z)
    c, _ = generate(SyntheticScenario(seed=4))
    assert not np.array_equal(a.stacked(), c.stacked())


def test_masks_pattern():
    feat, samp, labels = masks(SyntheticScenario())
    for m, (lo, d) in enumerate(((0, 60), (60, 40), (100, 20))):
        p = -(-d // 3)
        block = feat[lo:lo + d]
        for k in range(3):
            expected = np.zeros(d, dtype=bool)
            expected[k * p:(k + 1) * p] = True
            assert np.array_equal(block[:, k], expected)
    assert np.array_equal(samp[0], labels == 1) and np.array_equal(samp[1], labels == 2) and samp[2].all()


def test_factor_one_expressed_by_subgroup_one(replicates):
    for _, truth in replicates.values():
        z = np.abs(truth.Z[0])
        assert z[truth.labels == 1].mean() >= 10 * z[truth.labels != 1].mean()
        z = np.abs(truth.Z[1])
        assert z[truth.labels == 2].mean() >= 10 * z[truth.labels != 2].mean()


def test_true_contributions(replicates):
    for _, truth in replicates.values():
        C = true_contributions(truth)
        np.testing.assert_allclose(C.sum(axis=1), 1.0, atol=1e-12)
        assert C[0, 0] > 0.6 and C[1, 1] > 0.6
        assert np.max(np.abs(C[2] - 1 / 3)) < 0.1


def test_true_contributions_examples():
    labels = np.repeat([1, 2, 3], 2)
    flat = GroundTruth(W=np.ones((3, 2)), Z=np.vstack([np.ones(6), [3, 3, 1, 1, 0, 0]]), labels=labels,
                       feature_masks=None, sample_masks=None, D=(3,), rho=None, c2_w=None, c2_z=None, tau_w=None)
    C = true_contributions(flat)
    np.testing.assert_allclose(C[0], [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(C[1], [0.75, 0.25, 0.0], atol=1e-15)


def test_residual_noise_matches_sd(replicates):
    for data, truth in replicates.values():
        R = data.stacked() - truth.W @ truth.Z
        b = np.cumsum([0, 60, 40, 20])
        for m, sd in enumerate((3.0, 6.0, 4.0)):
            assert R[b[m]:b[m + 1]].std() == pytest.approx(sd, rel=0.05)


def test_global_scales(replicates):
    _, truth = replicates[0]
    np.testing.assert_allclose(truth.rho, 1 / np.array([9.0, 36.0, 16.0]))
    np.testing.assert_allclose(truth.tau_w, [tau0(d / 3, d, 150, r) for d, r in zip((60, 40, 20), truth.rho)])


def test_truth_round_trip(tmp_path, replicates):
    _, truth = replicates[1]
    truth.save(tmp_path / "truth.json")
    back = GroundTruth.load(tmp_path / "truth.json")
    assert np.array_equal(back.W, truth.W) and np.array_equal(back.labels, truth.labels)
    assert np.array_equal(back.feature_masks, truth.feature_masks)


def test_scenario_validation():
    with pytest.raises(InvalidArgumentError):
        SyntheticScenario(noise_sd=(1.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        SyntheticScenario(K_true=4)
    with pytest.raises(InvalidArgumentError):
        SyntheticScenario(group_sizes=(0, 50, 50))
    assert SyntheticScenario().with_seed(7).seed == 7
