import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from fedfusion.clustering import FeatureSubset
from fedfusion.data.augment import rotate, rotation_pretext_batch, strong_aug, weak_aug
from fedfusion.data.csvio import CsvError, load_csv
from fedfusion.data.dataset import ClientDataset, ClientStatus, FullDataset, ImageBatchMeta
from fedfusion.data.partition import (
    assign_statuses,
    draw_feature_subsets,
    partition_features,
    train_test_split,
)
from fedfusion.data.synth import synth_digits, synth_tabular, tabular_generator
from fedfusion.errors import ConfigError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- csv


def test_csv_two_rows_scaled_exactly(tmp_path):
    p = write(tmp_path, "a,b,label\n1,10,x\n3,30,y\n")
    ds = load_csv(p, {"target": "label"})
    assert ds.X.tolist() == [[0.0, 0.0], [1.0, 1.0]]
    assert ds.y.tolist() == [0, 1]
    assert ds.info["classes"] == ["x", "y"]


def test_csv_constant_column_becomes_zero(tmp_path):
    p = write(tmp_path, "a,b,label\n5,1,0\n5,2,1\n5,4,0\n")
    ds = load_csv(p, {"target": "label"})
    assert ds.X[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert ds.X[:, 1].tolist() == pytest.approx([0.0, 1 / 3, 1.0], abs=1e-15)
    assert ds.info["constant_columns"] == [0]


def test_csv_scaling_uses_training_rows_only(tmp_path, rng):
    rows = rng.normal(size=(40, 3))
    lines = ["a,b,c,label"] + [f"{r[0]},{r[1]},{r[2]},{i % 2}" for i, r in enumerate(rows)]
    ds = load_csv(write(tmp_path, "\n".join(lines) + "\n"), {"target": "label"},
                  test_fraction=0.25, seed=4)
    train = rows[~ds.is_test]
    lo, hi = train.min(axis=0), train.max(axis=0)
    np.testing.assert_allclose(ds.X, (rows - lo) / (hi - lo), rtol=0, atol=1e-12)
    assert ds.X[~ds.is_test].min() == 0.0 and ds.X[~ds.is_test].max() == 1.0


def test_csv_errors_name_row_and_column(tmp_path):
    p = write(tmp_path, "a,b,label\n1,2,0\n1,oops,1\n")
    with pytest.raises(CsvError, match=r"row 3, column 'b'"):
        load_csv(p, {"target": "label"})
    p = write(tmp_path, "a,label\n1,0\n1\n")
    with pytest.raises(CsvError, match="row 3"):
        load_csv(p, {"target": "label"})
    with pytest.raises(CsvError, match="target column"):
        load_csv(write(tmp_path, "a,b\n1,2\n"), {"target": "label"})


def test_csv_missing_target_rows_dropped(tmp_path):
    p = write(tmp_path, "a,label\n1,0\n2,\n3,1\n")
    ds = load_csv(p, {"target": "label"})
    assert len(ds.X) == 2
    assert ds.info["dropped_missing_target"] == 1


def test_csv_categorical_encodings(tmp_path):
    p = write(tmp_path, "colour,label\nred,0\nblue,1\nred,1\n")
    ordinal = load_csv(p, {"target": "label", "columns": {"colour": "categorical"}})
    assert ordinal.X[:, 0].tolist() == [1.0, 0.0, 1.0]
    onehot = load_csv(p, {"target": "label", "columns": {"colour": "categorical"},
                          "categorical_encoding": "onehot"})
    assert onehot.feature_names == ["colour=blue", "colour=red"]
    assert onehot.X.tolist() == [[0, 1], [1, 0], [0, 1]]


def test_csv_regression_target(tmp_path):
    p = write(tmp_path, "a,t\n0,1.5\n1,2.5\n")
    ds = load_csv(p, {"target": "t", "task": "regression"})
    assert ds.y.tolist() == [1.5, 2.5] and ds.n_classes is None


# ---------------------------------------------------------------- partition


def test_feature_partition_sets():
    ds = synth_tabular(n_clusters=3, features=16, samples=600, seed=1, test_fraction=0.5)
    clients = partition_features(ds, 10, 8, seed=1)
    subsets = [c.feature_subset for c in clients]
    core = set.intersection(*(set(s.indices) for s in subsets))
    assert len(core) >= 2
    assert all(len(s.indices) == 8 and set(s.indices) <= set(range(16)) for s in subsets)
    train_total = sum(c.n for c in clients)
    assert train_total == int((~ds.is_test).sum())
    # rows are disjoint: reconstruct each client's rows on its columns
    seen = set()
    for c in clients:
        for row in c.X:
            seen.add(row.tobytes())
    assert len(seen) == train_total
    # projections hold the original values
    c0 = clients[0]
    cols = list(c0.feature_subset.indices)
    train_X = ds.X[~ds.is_test][:, cols]
    assert all(any(np.array_equal(r, t) for t in train_X) for r in c0.X[:5])


def test_grouped_subsets_share_within_group():
    subsets = draw_feature_subsets(16, 10, 8, seed=3, core_size=2, n_groups=2)
    assert all(subsets[i] == subsets[i % 2] for i in range(10))


def test_feature_partition_config_errors():
    with pytest.raises(ConfigError):
        draw_feature_subsets(8, 4, 9, seed=0)
    with pytest.raises(ConfigError):
        draw_feature_subsets(8, 4, 4, seed=0, core_size=5)


def two_class_client(n=100):
    y = np.arange(n) % 2
    return ClientDataset(np.zeros((n, 1)), y, FeatureSubset((0,), 1), np.ones(n, bool))


def test_status_half_labelled_is_stratified():
    (c,) = assign_statuses([two_class_client()], [0.5], seed=0)
    assert c.labelled_mask.sum() == 50
    assert np.bincount(c.y[c.labelled_mask]).tolist() == [25, 25]
    assert c.status == ClientStatus.PARTIALLY_LABELLED


def test_status_extremes_and_dict_plan():
    a, b = assign_statuses([two_class_client(), two_class_client()],
                           [{"status": "fully_labelled"}, {"status": 3}], seed=0)
    assert a.status == ClientStatus.FULLY_LABELLED
    assert b.status == ClientStatus.FULLY_UNLABELLED and len(b.X_unlab) == 100


@pytest.mark.parametrize("plan", [
    [0.5, 0.5],
    [1.5],
    [{"status": "fully_labelled", "fraction": 0.5}],
    [{"status": "fully_unlabelled", "fraction": 0.2}],
    [{"status": "partially_labelled", "fraction": 1.0}],
])
def test_status_plan_errors(plan):
    with pytest.raises(ConfigError):
        assign_statuses([two_class_client()], plan, seed=0)


def test_train_test_split_stratified():
    ds = FullDataset(np.zeros((40, 1)), np.arange(40) % 4, ["a"])
    out = train_test_split(ds, 0.25, seed=0)
    assert np.bincount(out.y[out.is_test]).tolist() == [2, 2, 2, 2]
    with pytest.raises(ConfigError):
        train_test_split(ds, 1.0, seed=0)


# ---------------------------------------------------------------- synth


def nearest_mean_accuracy(ds):
    means = ds.info["generator"]["means"]
    d = ((ds.X[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == ds.y))


def test_tabular_noise_zero_is_separable():
    ds = synth_tabular(n_clusters=4, features=16, samples=400, noise=0.0, seed=2)
    assert nearest_mean_accuracy(ds) == 1.0


def test_tabular_mirrored_antipodal():
    gen = tabular_generator(2, 8, 1.0, seed=5, mirrored=True)
    np.testing.assert_array_equal(gen["means"][1], -gen["means"][0])
    with pytest.raises(ConfigError):
        tabular_generator(3, 8, 1.0, seed=5, mirrored=True)


def test_bayes_accuracy_matches_density_oracle():
    """Posterior argmax with scipy densities agrees with the reported Bayes accuracy."""
    ds = synth_tabular(n_clusters=3, features=6, samples=3000, noise=1.5, seed=7)
    gen = ds.info["generator"]
    cov = gen["noise"] ** 2 * np.eye(6)
    logp = np.stack([multivariate_normal(m, cov).logpdf(ds.X) for m in gen["means"]], axis=1)
    oracle = 100.0 * np.mean(logp.argmax(axis=1) == ds.y)
    se = 100.0 * np.sqrt(0.25 / 3000) + 100.0 * np.sqrt(0.25 / 20000)
    assert abs(oracle - ds.info["bayes_accuracy"]) < 3 * se


def test_tabular_seeded():
    a = synth_tabular(seed=3, samples=50)
    b = synth_tabular(seed=3, samples=50)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, synth_tabular(seed=4, samples=50).X)


def test_digits_balanced_and_shaped():
    doms = synth_digits(domains=3, side=12, samples=300, seed=0, k=10, test_fraction=0.2)
    assert len(doms) == 3
    for d in doms:
        assert d.X.shape == (300, 144)
        assert np.bincount(d.y).tolist() == [30] * 10
        assert np.bincount(d.y[d.is_test]).tolist() == [6] * 10
        assert d.X.min() >= 0.0 and d.X.max() <= 1.0


def test_digits_inversion_mean():
    base, inv = synth_digits(domains=2, samples=500, seed=1, transforms=["base", "invert"])
    assert abs(inv.X.mean() - (1.0 - base.X.mean())) < 0.02


def test_digits_config_errors():
    with pytest.raises(ConfigError):
        synth_digits(side=6)
    with pytest.raises(ConfigError):
        synth_digits(domains=2, transforms=["base"])
    with pytest.raises(ConfigError):
        synth_digits(domains=1, transforms=["sepia"])


# ---------------------------------------------------------------- augment

META = ImageBatchMeta(6)


def test_zero_images_stay_zero():
    X = np.zeros((5, 36))
    assert not weak_aug(X, META, seed=0).any()
    assert not strong_aug(X, META, seed=0, noise=0.0).any()


def test_strong_without_dropout_or_noise_equals_weak():
    X = np.random.default_rng(0).random((8, 36))
    np.testing.assert_array_equal(strong_aug(X, META, seed=3, dropout=0, noise=0),
                                  weak_aug(X, META, seed=3))


def test_dropout_rate():
    X = np.ones((200, 36))
    out = strong_aug(X, META, seed=1, dropout=0.2, noise=0.0)
    n = out.size
    rate = float(np.mean(out == 0))
    assert abs(rate - 0.2) < 3 * np.sqrt(0.2 * 0.8 / n)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_augment_shape_and_range(n, seed):
    X = np.random.default_rng(seed).random((n, 36))
    for out in (weak_aug(X, META, seed), strong_aug(X, META, seed)):
        assert out.shape == X.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_tabular_views():
    X = np.full((4, 3), 0.5)
    np.testing.assert_array_equal(weak_aug(X, None), X)
    np.testing.assert_array_equal(strong_aug(X, None, seed=0, tabular_sigma=0.0), X)
    assert not np.array_equal(strong_aug(X, None, seed=0), X)


def test_rotation_counter_clockwise():
    meta = ImageBatchMeta(2)
    X = np.array([[1.0, 2.0, 3.0, 4.0]])  # [[a, b], [c, d]]
    assert rotate(X, meta, 1).tolist() == [[2.0, 4.0, 1.0, 3.0]]  # [[b, d], [a, c]]
    assert rotate(X, meta, 2).tolist() == [[4.0, 3.0, 2.0, 1.0]]
    np.testing.assert_array_equal(rotate(X, meta, 4), X)


def test_rotation_pretext_labels_match_rotation():
    X = np.random.default_rng(0).random((20, 36))
    out, labels = rotation_pretext_batch(X, META, 4, seed=2)
    for i in range(20):
        np.testing.assert_array_equal(out[i:i + 1], rotate(X[i:i + 1], META, int(labels[i])))
    with pytest.raises(ValueError):
        rotation_pretext_batch(X, META, 3)
    with pytest.raises(ValueError):
        META.check(np.zeros((1, 35)))
