import json

import numpy as np
import pytest

from vnngp.baselines import SVGP, SWSGP, exact_gp_posterior
from vnngp.data import Dataset, Standardizer, load_csv, sample_gp, split, split_sizes
from vnngp.errors import ArgumentError, IngestionError
from vnngp.experiments import RunReport
from vnngp.kernel import KernelParams
from vnngp.likelihood import LikelihoodParams
from vnngp.model import VNNGP, VariationalState
from vnngp.state import FORMAT, load_model, model_from_dict, model_to_dict, save_model


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_rows(tmp_path):
    ds = load_csv(write(tmp_path, "a,b,y\n1,2,0.5\n3,4,-1.25\n"), "y")
    np.testing.assert_array_equal(ds.X, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(ds.y, [0.5, -1.25])
    assert ds.feature_names == ["a", "b"] and ds.dropped == 0


def test_missing_values_dropped(tmp_path):
    ds = load_csv(write(tmp_path, "a,y\n1,2\nnan,3\n4,\n5,6\n"), "y")
    assert len(ds) == 2 and ds.dropped == 2


def test_classification_labels(tmp_path):
    ds = load_csv(write(tmp_path, "a,y\n1,0\n2,1\n3,1\n"), "y", task="classification")
    np.testing.assert_array_equal(ds.y, [-1, 1, 1])
    with pytest.raises(IngestionError):
        load_csv(write(tmp_path, "a,y\n1,0\n2,3\n"), "y", task="classification")


def test_ingestion_errors(tmp_path):
    with pytest.raises(IngestionError, match="target"):
        load_csv(write(tmp_path, "a,b\n1,2\n"), "y")
    with pytest.raises(IngestionError, match=r"row 3, column 'b'"):
        load_csv(write(tmp_path, "a,b\n1,2\n3,abc\n"), "b")
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "missing.csv", "y")
    ds = load_csv(write(tmp_path, "a,b\n1,2\n"), "y", require_target=False)
    assert ds.X.shape == (1, 2) and np.isnan(ds.y).all()


def test_split_sizes():
    assert split_sizes(5) == (3, 1, 1)
    assert split_sizes(100) == (64, 16, 20)
    with pytest.raises(ArgumentError):
        split_sizes(4)


def test_split_is_seeded_disjoint_and_standardized(rng):
    X = rng.normal(3.0, 2.0, (100, 3))
    X[:, 2] = 7.0
    ds = Dataset(X, np.arange(100.0))
    tr, va, te = split(ds, seed=4)
    tr2 = split(ds, seed=4)[0]
    np.testing.assert_array_equal(tr.X, tr2.X)
    st = tr.standardizer
    ids = [np.round(st.inverse_y(p.y)).astype(int) for p in (tr, va, te)]
    assert sorted(np.concatenate(ids).tolist()) == list(range(100))
    assert np.all(np.abs(tr.X[:, :2].mean(axis=0)) < 1e-10)
    np.testing.assert_allclose(tr.X[:, :2].std(axis=0), 1.0, rtol=1e-12)
    # constant column: centered, unit sentinel
    assert st.x_std[2] == 1.0 and np.all(te.X[:, 2] == 0.0)
    assert abs(np.mean(tr.y)) < 1e-10


def test_standardizer_round_trip(rng):
    X = rng.normal(size=(20, 2))
    y = rng.normal(5, 3, 20)
    st = Standardizer.fit(X, y)
    np.testing.assert_allclose(st.inverse_y(st.transform_y(y)), y, atol=1e-10)
    back = Standardizer.from_dict(json.loads(json.dumps(st.to_dict())))
    np.testing.assert_array_equal(back.x_mean, st.x_mean)
    assert back.y_std == st.y_std


def test_sample_gp_marginal_std():
    kp = KernelParams.from_constrained("se", [1.0], 2.0)
    X = np.array([[0.0], [0.5]])
    draws = np.array([sample_gp(kp, 0.5, X, s) for s in range(10000)])
    np.testing.assert_allclose(draws.std(axis=0), np.sqrt(2.5), rtol=0.05)
    y, f = sample_gp(None, 0.3, np.zeros((4, 1)), 1, return_f=True)
    assert np.all(f == 0.0)
    np.testing.assert_array_equal(sample_gp(kp, 0.5, X, 7), sample_gp(kp, 0.5, X, 7))


def toy(rng):
    X = rng.uniform(0, 3, (12, 1))
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=12)
    kp = KernelParams.from_constrained("matern52", [0.7], 1.1)
    return X, y, kp, LikelihoodParams.gaussian(0.05)


@pytest.mark.parametrize("method", ["vnngp", "vnngp_fullrank", "svgp", "swsgp", "exact"])
def test_model_state_round_trip(method, tmp_path, rng):
    X, y, kp, lik = toy(rng)
    Z = X[::2]
    if method == "exact":
        model = exact_gp_posterior(kp, lik, X, y)
    else:
        if method.startswith("vnngp"):
            model = VNNGP(kp, lik, Z, 3, seed=2, fullrank=method.endswith("fullrank"))
        elif method == "svgp":
            model = SVGP(kp, lik, Z)
        else:
            model = SWSGP(kp, lik, Z, 3, seed=2)
        if method.endswith("fullrank"):
            model.state = VariationalState.from_chol(rng.normal(size=6), np.tril(rng.uniform(0.2, 1, (6, 6))))
        else:
            model.fit_gaussian_optimum(X, y)
    st = Standardizer.fit(X, y)
    path = tmp_path / "m.json"
    save_model(path, model, st)
    back, st2 = load_model(path)
    Xs = rng.uniform(0, 3, (5, 1))
    for a, b in zip(model.predict_f(Xs), back.predict_f(Xs)):
        np.testing.assert_array_equal(a, b)
    assert st2.y_std == st.y_std
    d = json.loads(path.read_text())
    assert d["format"] == FORMAT and d["schema_version"] == 1
    key = "alpha" if method == "exact" else "m"
    assert all(isinstance(v, str) for v in d[key])
    assert all(float(v) == x for v, x in zip(d[key], model.alpha if method == "exact" else model.state.m))


def test_model_state_rejects_bad_files(tmp_path, rng):
    X, y, kp, lik = toy(rng)
    d = model_to_dict(VNNGP(kp, lik, X, 2))
    with pytest.raises(IngestionError):
        model_from_dict({**d, "format": "other"})
    with pytest.raises(IngestionError):
        model_from_dict({**d, "schema_version": 99})
    bad = dict(d)
    del bad["m"]
    with pytest.raises(IngestionError):
        model_from_dict(bad)
    p = write(tmp_path, "{not json", "bad.json")
    with pytest.raises(IngestionError):
        load_model(p)


def test_seventeen_digit_strings(rng):
    kp = KernelParams.from_constrained("se", [1.0], 1.0)
    vs = VariationalState.from_moments([0.1 + 0.2], [1 / 3])
    d = model_to_dict(VNNGP(kp, LikelihoodParams.gaussian(0.1), [[0.0]], 1, state=vs))
    assert d["m"] == ["0.30000000000000004"]
    st = VariationalState.from_moments([0.1 + 0.2], [1 / 3])
    assert float(d["s"][0]) == st.s[0] and float(d["raw_s"][0]) == st.raw_s[0]


def test_run_report_json():
    r = RunReport(config={"method": "vnngp"}, metrics={"rmse": 0.1 + 0.2}, hyperparameters={},
                  wall_clock=1.5, seed=3)
    back = RunReport.from_dict(json.loads(r.to_json()))
    assert back == r
