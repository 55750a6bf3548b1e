import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgfa.errors import (
    AlignmentError,
    CollinearityError,
    ConfigError,
    DataError,
    DegenerateDataError,
    ImputeError,
    ParseError,
)
from sgfa.pipeline import (
    MultiViewDataset,
    PreprocessReport,
    drop_high_missing,
    drop_high_missing_samples,
    load_views,
    median_impute,
    preprocess,
    regress_confounds,
    replay,
    standardize,
    write_views,
)


def _csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def _raw(seed=0, N=60, D=(8, 5), C=2, missing=0.05):
    rng = np.random.default_rng(seed)
    conf = rng.standard_normal((C, N))
    views = []
    for d in D:
        v = rng.standard_normal((d, N)) * rng.uniform(0.5, 3, (d, 1)) + rng.uniform(-5, 5, (d, 1))
        v += rng.standard_normal((d, C)) @ conf
        v[rng.random(v.shape) < missing] = np.nan
        views.append(v)
    return MultiViewDataset(views, confounds=conf, labels=rng.integers(1, 4, N))


# -- loading -----------------------------------------------------------------

def test_load_two_views(tmp_path):
    a = _csv(tmp_path / "a.csv", ["id", "x", "y", "group"], [["s1", 1, 2, "A"], ["s2", 3, "", "B"], ["s3", 5, 6, "A"]])
    b = _csv(tmp_path / "b.csv", ["id", "z"], [["s3", 9], ["s1", 7], ["s2", "NA"]])
    data = load_views([a, b], label_column="group")
    assert data.M == 2 and data.N == 3 and data.D == (2, 1)
    assert data.sample_ids == ["s1", "s2", "s3"]
    np.testing.assert_array_equal(data.views[1], [[7, np.nan, 9]])
    assert np.isnan(data.views[0][1, 1])
    assert data.labels.tolist() == ["A", "B", "A"]
    assert data.view_names == ["a", "b"] and data.feature_names[0] == ["x", "y"]


def test_load_labels_and_confounds_from_files(tmp_path):
    a = _csv(tmp_path / "a.csv", ["id", "x"], [["s1", 1], ["s2", 2], ["s3", 3]])
    lab = _csv(tmp_path / "labels.csv", ["id", "subgroup"], [["s2", 2], ["s1", 1], ["s3", 3]])
    conf = _csv(tmp_path / "conf.csv", ["id", "age", "sex"], [["s1", 50, 0], ["s2", 60, 1], ["s3", 70, 0]])
    data = load_views([a], label_column="subgroup", labels_path=lab, confounds_path=conf)
    assert data.labels.tolist() == [1, 2, 3]
    np.testing.assert_array_equal(data.confounds, [[50, 60, 70], [0, 1, 0]])
    assert data.confound_names == ["age", "sex"]


def test_unparseable_cell_names_row_and_column(tmp_path):
    a = _csv(tmp_path / "a.csv", ["id", "x", "y"], [["s1", 1, 2], ["s2", 3, "abc"]])
    with pytest.raises(ParseError, match=r"line 3.*'y'"):
        load_views([a])


def test_ragged_row_names_line(tmp_path):
    a = _csv(tmp_path / "a.csv", ["id", "x", "y"], [["s1", 1, 2], ["s2", 3]])
    with pytest.raises(ParseError, match="line 3"):
        load_views([a])


def test_alignment_errors(tmp_path):
    a = _csv(tmp_path / "a.csv", ["id", "x"], [["s1", 1], ["s2", 2]])
    b = _csv(tmp_path / "b.csv", ["id", "x"], [["t1", 1], ["t2", 2]])
    c = _csv(tmp_path / "c.csv", ["id", "x"], [["s1", 1], ["s9", 2]])
    with pytest.raises(AlignmentError, match="no sample IDs in common"):
        load_views([a, b])
    with pytest.raises(AlignmentError, match="s9"):
        load_views([a, c])


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_views([tmp_path / "nope.csv"])


def test_csv_round_trip(tmp_path):
    data = _raw(1)
    paths = write_views(data, tmp_path)
    back = load_views(paths)
    for v, w in zip(data.views, back.views):
        np.testing.assert_array_equal(v, w)


# -- missingness -------------------------------------------------------------

def _with_missing(n_missing, N=100):
    v = np.arange(2 * N, dtype=float).reshape(2, N)
    v[0, :n_missing] = np.nan
    return MultiViewDataset([v])


def test_drop_boundary():
    out, rep = drop_high_missing(_with_missing(11), 0.10)
    assert out.D == (1,) and rep.step("drop_features")["dropped"][0]["missing_fraction"] == 0.11
    out, _ = drop_high_missing(_with_missing(10), 0.10)
    assert out.D == (2,)


def test_drop_identity_without_missing():
    data = _raw(missing=0)
    out, rep = drop_high_missing(data)
    assert all(np.array_equal(a, b) for a, b in zip(out.views, data.views))
    assert rep.step("drop_features")["dropped"] == []


def test_drop_whole_view_is_error():
    v = np.full((2, 10), np.nan)
    with pytest.raises(DegenerateDataError):
        drop_high_missing(MultiViewDataset([v, np.ones((1, 10))]))


def test_drop_samples():
    v = np.ones((3, 4))
    v[:2, 1] = np.nan            # 2/3 missing
    v[0, 2] = np.nan             # 1/3 missing: kept (strict)
    out, rep = drop_high_missing_samples(MultiViewDataset([v], labels=np.arange(4)))
    assert out.N == 3 and out.labels.tolist() == [0, 2, 3]
    assert list(rep.step("drop_samples")["dropped"]) == ["s1"]


# -- imputation ---------------------------------------------------------------

def test_median_impute_examples():
    v = np.array([[1, 2, 100, np.nan], [1, 3, np.nan, 7.0]])
    out, rep = median_impute(MultiViewDataset([v]))
    assert out.views[0][0, 3] == 2 and out.views[0][1, 2] == 3
    v = np.array([[1, 3, np.nan]])
    assert median_impute(MultiViewDataset([v]))[0].views[0][0, 2] == 2
    data = _raw(missing=0)
    assert np.array_equal(median_impute(data)[0].views[0], data.views[0])


def test_impute_all_missing_feature():
    with pytest.raises(ImputeError):
        median_impute(MultiViewDataset([np.array([[np.nan, np.nan], [1, 2]])]))


# -- confound regression -------------------------------------------------------

def test_exact_fit_has_zero_residual():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((1, 30))
    out, _ = regress_confounds(MultiViewDataset([2 * c], confounds=c))
    assert np.linalg.norm(out.views[0]) < 1e-10


def test_orthogonal_confound_only_removes_mean():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(40) + 3
    c = rng.standard_normal(40)
    # make c empirically orthogonal to x after centring both
    xc = x - x.mean()
    c = c - c.mean()
    c -= (c @ xc) / (xc @ xc) * xc
    out, _ = regress_confounds(MultiViewDataset([x[None]], confounds=c[None]))
    np.testing.assert_allclose(out.views[0][0], xc, atol=1e-12)


def test_residuals_uncorrelated_with_confounds():
    data, _ = median_impute(_raw(2))
    out, rep = regress_confounds(data)
    X = out.stacked()
    for c in data.confounds:
        for x in X:
            assert abs(np.corrcoef(x, c)[0, 1]) < 1e-10
    assert rep.step("regress")["confound_names"] == ["intercept", "c0", "c1"]


def test_collinear_confounds_named():
    rng = np.random.default_rng(3)
    c = rng.standard_normal((2, 20))
    c = np.vstack([c, c[0] + 2 * c[1]])
    data = MultiViewDataset([rng.standard_normal((2, 20))], confounds=c, confound_names=["age", "sex", "combo"])
    with pytest.raises(CollinearityError, match="combo"):
        regress_confounds(data)
    const = MultiViewDataset([rng.standard_normal((2, 20))], confounds=np.ones((1, 20)), confound_names=["site"])
    with pytest.raises(CollinearityError, match="site"):
        regress_confounds(const)


# -- standardisation ---------------------------------------------------------

def test_standardize_examples():
    out, rep = standardize(MultiViewDataset([np.array([[0.0, 2.0]])]))
    np.testing.assert_array_equal(out.views[0], [[-1, 1]])
    assert rep.step("standardize")["ddof"] == 0
    again, _ = standardize(out)
    np.testing.assert_allclose(again.views[0], out.views[0], atol=1e-12)
    with pytest.raises(DegenerateDataError, match="v0_f1"):
        standardize(MultiViewDataset([np.array([[0.0, 2.0], [5.0, 5.0]])]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), ddof=st.sampled_from([0, 1]))
def test_standardize_moments(seed, ddof):
    data, _ = median_impute(_raw(seed))
    out, _ = standardize(data, ddof=ddof)
    X = out.stacked()
    np.testing.assert_allclose(X.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(X.std(axis=1, ddof=ddof), 1, atol=1e-12)


# -- whole chain -----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_chain_idempotent_and_replayable(seed):
    raw = _raw(seed)
    out, rep = preprocess(raw)
    assert not out.has_missing()
    again, _ = preprocess(out)
    np.testing.assert_allclose(again.stacked(), out.stacked(), atol=1e-10)
    replayed = replay(PreprocessReport.from_json(rep.to_json()), raw)
    assert np.array_equal(replayed.stacked(), out.stacked())


def test_report_file_round_trip(tmp_path):
    raw = _raw(5, missing=0.12)
    out, rep = preprocess(raw, sample_threshold=1 / 3)
    rep.save(tmp_path / "report.json")
    back = PreprocessReport.load(tmp_path / "report.json")
    assert [s["step"] for s in back.steps] == ["drop_samples", "drop_features", "impute", "regress", "standardize"]
    assert np.array_equal(replay(back, raw).stacked(), out.stacked())


def test_order_enforced():
    rep = PreprocessReport()
    data, _ = median_impute(_raw(0), report=rep)
    data, _ = standardize(data, report=rep)
    with pytest.raises(ConfigError):
        regress_confounds(data, report=rep)
    with pytest.raises(ConfigError):
        drop_high_missing(data, report=PreprocessReport([{"step": "impute"}]))
