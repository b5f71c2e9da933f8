import numpy as np
import pytest
from scipy import optimize, stats

from perfdrift.drift import (
    CREDIT_FEATURES,
    CREDIT_TARGET,
    Dataset,
    DriftModelParams,
    DriftRegime,
    IzzoParams,
    calibrate_epsilon,
    fit_logreg,
    izzo_class1_mean,
    izzo_mean_shift,
    izzo_sample,
    load_credit_csv,
    perdomo_step,
    synth_credit_surrogate,
    top_k_mask,
)
from perfdrift.errors import DegenerateDataError, FormatError, ShapeError
from perfdrift.nn import l1_loss


def _toy(n=6, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(size=(n, d)), rng.integers(0, 2, n), np.zeros(n, dtype=int))


# -- Dataset --------------------------------------------------------------------

def test_dataset_rejects_mismatched_rows():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((3, 2)), np.zeros(2), np.zeros(3))
    with pytest.raises(ShapeError):
        Dataset(np.zeros(3), np.zeros(3), np.zeros(3))


def test_dataset_csv_round_trip(tmp_path):
    data = _toy()
    data.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv")
    np.testing.assert_allclose(back.features, data.features, rtol=1e-9)
    assert (back.class_labels == data.class_labels).all()
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "f0,f1,f2,class,domain"


# -- credit-scoring drift ---------------------------------------------------------

def test_perdomo_step_matches_elementwise_loop():
    data = _toy(5, 4)
    theta = np.array([0.5, -1.0, 2.0, 0.1])
    mask = np.array([True, False, True, True])
    out = perdomo_step(data, DriftModelParams(theta, mask, 0.3))
    for i in range(5):
        for j in range(4):
            want = data.features[i, j] - (0.3 * theta[j] if mask[j] else 0.0)
            assert out.features[i, j] == pytest.approx(want, abs=1e-15)
    assert (out.domain_labels == 1).all()
    assert (out.class_labels == data.class_labels).all()


def test_perdomo_zero_epsilon_is_identity():
    data = _toy()
    out = perdomo_step(data, DriftModelParams(np.ones(3), np.ones(3, bool), 0.0))
    assert out.features.tobytes() == data.features.tobytes()


def test_perdomo_distance_grows_linearly():
    data = _toy(50, 6, seed=3)
    theta = np.random.default_rng(1).normal(size=6)
    mask = top_k_mask(theta, 3)
    params = DriftModelParams(theta, mask, calibrate_epsilon(theta, mask, 0.107))
    cur = data
    for i in range(1, 11):
        cur = perdomo_step(cur, params)
        assert l1_loss(data.features, cur.features)[0] == pytest.approx(0.107 * i, abs=1e-9)


def test_perdomo_shape_mismatch():
    with pytest.raises(ShapeError):
        perdomo_step(_toy(d=3), DriftModelParams(np.ones(4), np.ones(4, bool), 1.0))


def test_drift_params_validation():
    with pytest.raises(ShapeError):
        DriftModelParams(np.ones(3), np.ones(2, bool), 1.0)
    with pytest.raises(ValueError):
        DriftModelParams(np.ones(2), np.ones(2, bool), -0.1)


def test_calibrate_epsilon_hand_value():
    # mean displacement = eps * (|2| + |-3|) / 4 = 0.5 -> eps = 0.4
    assert calibrate_epsilon([2.0, -3.0, 7.0, 1.0], [True, True, False, False], 0.5) == pytest.approx(0.4)
    with pytest.raises(DegenerateDataError):
        calibrate_epsilon([1.0, 2.0], [False, False], 0.1)


def test_top_k_mask_picks_largest_and_breaks_ties_by_position():
    assert top_k_mask([0.1, -5.0, 3.0, 0.2], 2).tolist() == [False, True, True, False]
    assert top_k_mask([1.0, -1.0, 1.0], 2).tolist() == [True, True, False]


def test_regime_retraining_schedule():
    assert not DriftRegime("monotonous", 1).retrains_after(3)
    dyn = DriftRegime("dynamic", 3)
    assert [i for i in range(1, 10) if dyn.retrains_after(i)] == [3, 6, 9]
    with pytest.raises(ValueError):
        DriftRegime("cyclic")
    with pytest.raises(ValueError):
        DriftRegime("dynamic", 0)


# -- Gaussian spam generator ---------------------------------------------------------

def test_izzo_mean_shift_hand_value():
    assert izzo_mean_shift(2.0, 4.5, 1.0, True) == pytest.approx(-2.5)
    assert izzo_mean_shift(2.0, 4.5, 1.0, False) == 2.0


def test_izzo_class0_is_untouched_gaussian():
    params = IzzoParams()
    drift = DriftModelParams([4.0, 5.0], [True, True], 1.0)
    plain = izzo_sample(params, None, 4000, 7)
    moved = izzo_sample(params, drift, 4000, 7)
    c0 = plain.class_labels == 0
    assert moved.features[c0].tobytes() == plain.features[c0].tobytes()
    for j in range(2):
        assert stats.kstest(plain.features[c0, j], "norm", args=(0.0, 0.5)).pvalue > 1e-3


def test_izzo_class1_mean_monte_carlo():
    params = IzzoParams()
    drift = DriftModelParams([4.0, -1.0], [True, False], 1.0)
    data = izzo_sample(params, drift, 20000, 11)
    got = data.features[data.class_labels == 1].mean(axis=0)
    want = izzo_class1_mean(params, drift)
    np.testing.assert_allclose(want, [-2.0, 2.0])
    se = 0.5 / np.sqrt(10000)
    assert np.all(np.abs(got - want) < 4 * se)


def test_izzo_rows_are_class_sorted_and_balanced():
    data = izzo_sample(IzzoParams(), None, 101, 0, domain=4)
    assert (np.diff(data.class_labels) >= 0).all()
    assert data.class_labels.sum() == IzzoParams().class_counts(101)[1]
    assert (data.domain_labels == 4).all()


def test_izzo_params_validation():
    with pytest.raises(ShapeError):
        IzzoParams(mu0=[0.0], mu1=[1.0, 2.0])
    with pytest.raises(ValueError):
        IzzoParams(sigma0=0.0)
    with pytest.raises(ValueError):
        izzo_sample(IzzoParams(), None, 0, 0)


# -- credit CSV loader ---------------------------------------------------------------

def _write_credit(path, rows, header=None):
    header = header or ["", CREDIT_TARGET, *CREDIT_FEATURES]
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_credit_drops_incomplete_rows_and_scales(tmp_path):
    rows = [[1, 0, *range(10)], [2, 1, *range(5, 15)], [3, 1, *(["NA"] + list(range(9)))],
            [4, 0, *range(2, 12)]]
    _write_credit(tmp_path / "c.csv", rows)
    data = load_credit_csv(tmp_path / "c.csv")
    assert data.n == 3 and data.d == 10
    assert data.class_labels.tolist() == [0, 1, 0]
    assert data.features.min() == 0.0 and data.features.max() == 1.0
    np.testing.assert_allclose(data.features[2], 0.4)


def test_load_credit_unknown_column_is_named(tmp_path):
    _write_credit(tmp_path / "c.csv", [], ["", CREDIT_TARGET, *CREDIT_FEATURES, "Bogus"])
    with pytest.raises(FormatError, match="Bogus"):
        load_credit_csv(tmp_path / "c.csv")


def test_load_credit_missing_column_is_named(tmp_path):
    _write_credit(tmp_path / "c.csv", [], ["", CREDIT_TARGET, *CREDIT_FEATURES[1:]])
    with pytest.raises(FormatError, match="RevolvingUtilization"):
        load_credit_csv(tmp_path / "c.csv")


def test_load_credit_no_complete_rows(tmp_path):
    _write_credit(tmp_path / "c.csv", [[1, "", *range(10)]])
    with pytest.raises(DegenerateDataError):
        load_credit_csv(tmp_path / "c.csv")


# -- surrogate and regressor -----------------------------------------------------------

def test_surrogate_is_deterministic_and_bounded():
    a = synth_credit_surrogate(500, 3)
    b = synth_credit_surrogate(500, 3)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.d == 10 and a.features.min() >= 0.0 and a.features.max() <= 1.0
    assert set(np.unique(a.class_labels)) == {0, 1}


def test_surrogate_regressor_accuracy_band():
    train, test = synth_credit_surrogate(10000, 0), synth_credit_surrogate(10000, 1)
    model = fit_logreg(train)
    acc = np.mean(model(test.features).argmax(1) == test.class_labels)
    assert 0.65 <= acc <= 0.85


def test_fit_logreg_reaches_the_optimum():
    data = synth_credit_surrogate(3000, 5)
    x, y = data.features, data.class_labels

    def nll(w):
        z = x @ w[:-1] + w[-1]
        return np.mean(np.logaddexp(0.0, z) - y * z)

    best = optimize.minimize(nll, np.zeros(11), method="BFGS", options={"gtol": 1e-9})
    model = fit_logreg(data)
    ours = nll(np.append(model.theta, model.intercept))
    assert ours - best.fun < 1e-3


def test_fit_logreg_separable_and_degenerate():
    data = izzo_sample(IzzoParams(), None, 400, 0)
    model = fit_logreg(data)
    assert np.mean(model(data.features).argmax(1) == data.class_labels) == 1.0
    with pytest.raises(DegenerateDataError):
        fit_logreg(Dataset(np.ones((4, 2)), np.zeros(4), np.zeros(4)))
