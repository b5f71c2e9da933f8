import numpy as np
import pytest

from perfdrift.drift import Dataset, DriftRegime, IzzoParams, izzo_sample
from perfdrift.errors import DegenerateDataError, ShapeError
from perfdrift.gdan import GdanHyperParams
from perfdrift.simulate import (
    CSV_HEADER,
    METRICS,
    IterationMetrics,
    SimulationConfig,
    aggregate,
    emit_metrics_csv,
    emit_raw_csv,
    evaluate_accuracy,
    export_datasets,
    read_metrics_csv,
    retrain_model,
    run_repetitions,
    run_simulation,
    select_mask,
)

FAST_GDAN = GdanHyperParams(iterations=40, warmup_steps=20)


def _cfg(**kw):
    base = dict(n_points=400, n_iterations=4, n_repetitions=2, gdan=FAST_GDAN)
    base.update(kw)
    return SimulationConfig(**base)


def _labels(n, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 2)), rng.integers(0, 3, n), np.zeros(n, dtype=int))


# -- evaluate_accuracy ------------------------------------------------------------------

def test_accuracy_perfect_predictor():
    data = _labels(50)
    onehot = lambda x: np.eye(3)[data.class_labels]
    assert evaluate_accuracy(onehot, data) == 1.0


def test_accuracy_constant_predictor_on_balanced_data():
    data = izzo_sample(IzzoParams(), None, 1000, 0)
    assert evaluate_accuracy(lambda x: np.tile([1.0, 0.0], (len(x), 1)), data) == 0.5


@pytest.mark.parametrize("seed", range(10))
def test_accuracy_matches_loop_oracle(seed):
    data = _labels(40, seed)
    scores = np.random.default_rng(seed + 1).integers(0, 3, size=(40, 3)).astype(float)
    hits = 0
    for row, label in zip(scores, data.class_labels):
        best = 0
        for k in range(1, 3):
            if row[k] > row[best]:
                best = k
        hits += best == label
    assert evaluate_accuracy(lambda x: scores, data) == hits / 40


def test_accuracy_ties_go_to_lower_class():
    data = Dataset(np.zeros((2, 1)), [0, 1], [0, 0])
    assert evaluate_accuracy(lambda x: np.full((2, 2), 0.5), data) == 0.5


def test_accuracy_errors():
    with pytest.raises(DegenerateDataError):
        evaluate_accuracy(lambda x: x, _labels(0))
    with pytest.raises(ShapeError):
        evaluate_accuracy(lambda x: np.zeros((3, 2)), _labels(5))


# -- retrain_model -----------------------------------------------------------------------

def test_retrain_separable_toy_is_perfect():
    data = izzo_sample(IzzoParams(mu1=[5.0, 5.0]), None, 600, 1)
    model, acc = retrain_model(data, 0.7, seed=0)
    assert acc == 1.0
    assert model.theta.shape == (2,)


def test_retrain_is_deterministic():
    data = izzo_sample(IzzoParams(mu1=[1.0, 1.0]), None, 600, 1)
    a = retrain_model(data, 0.7, seed=3)
    b = retrain_model(data, 0.7, seed=3)
    assert a[1] == b[1] and a[0].theta.tobytes() == b[0].theta.tobytes()


def test_retrain_single_class_split():
    data = Dataset(np.random.default_rng(0).normal(size=(10, 2)), [0] * 9 + [1], np.zeros(10))
    with pytest.raises(DegenerateDataError):
        retrain_model(data, 0.1, seed=0)


# -- CSV output ------------------------------------------------------------------------------

def _metrics(n):
    rng = np.random.default_rng(n)
    return [IterationMetrics(i + 1, dict(zip(METRICS, rng.uniform(size=6))), dict(zip(METRICS, rng.uniform(size=6))))
            for i in range(n)]


def test_emit_empty_metrics_is_header_only(tmp_path):
    emit_metrics_csv([], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == ",".join(CSV_HEADER) + "\n"


def test_emit_metrics_round_trip(tmp_path):
    rows = _metrics(5)
    emit_metrics_csv(rows, tmp_path / "m.csv")
    back = read_metrics_csv(tmp_path / "m.csv")
    assert len(back) == 5
    for a, b in zip(rows, back):
        assert a.iteration == b.iteration
        for name in METRICS:
            assert b.mean[name] == round(a.mean[name], 6)
            assert b.std[name] == round(a.std[name], 6)
    assert all(len(line.split(",")[1].split(".")[1]) == 6
               for line in (tmp_path / "m.csv").read_text().splitlines()[1:])


def test_emit_to_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_metrics_csv(_metrics(1), tmp_path / "missing" / "m.csv")


# -- configuration -----------------------------------------------------------------------------

def test_config_invariants():
    with pytest.raises(ValueError):
        SimulationConfig(n_points=99)
    with pytest.raises(ValueError):
        SimulationConfig(n_iterations=0)
    with pytest.raises(ValueError):
        SimulationConfig(n_repetitions=0)
    with pytest.raises(ValueError):
        SimulationConfig(generator="mnist")


def test_mask_rules():
    theta = np.array([0.1, -5.0, 3.0, 0.2, -0.05])
    assert select_mask(theta, SimulationConfig(n_performative=2)).tolist() == [True, False, False, False, True]
    assert select_mask(theta, SimulationConfig(n_performative=2, mask_rule="largest")).tolist() == \
        [False, True, True, False, False]
    assert select_mask(theta, SimulationConfig(generator="izzo")).all()
    explicit = SimulationConfig(mask=[True, False, True, False, False])
    assert select_mask(theta, explicit).tolist() == explicit.mask
    with pytest.raises(ShapeError):
        select_mask(theta, SimulationConfig(mask=[True]))


# -- simulation runs -------------------------------------------------------------------------

def test_single_iteration_gives_one_row():
    assert len(run_simulation(_cfg(n_iterations=1, n_repetitions=1))) == 1


def test_metrics_are_in_range_and_deterministic():
    cfg = _cfg()
    a = run_repetitions(cfg)
    b = run_repetitions(cfg)
    assert all(x.values.tobytes() == y.values.tobytes() for x, y in zip(a, b))
    for m in aggregate(a):
        for name in METRICS:
            assert m.std[name] >= 0
            if name.startswith("acc"):
                assert 0.0 <= m.mean[name] <= 1.0
            else:
                assert m.mean[name] >= 0


def test_parallel_repetitions_match_serial():
    cfg = _cfg(generator="izzo")
    serial = run_repetitions(cfg, jobs=1)
    parallel = run_repetitions(cfg, jobs=2)
    assert [r.repetition for r in parallel] == [0, 1]
    assert all(x.values.tobytes() == y.values.tobytes() for x, y in zip(serial, parallel))


def test_monotonous_distance_is_linear():
    metrics = run_simulation(_cfg(n_iterations=6))
    for m in metrics:
        assert m.mean["l1_orig"] == pytest.approx(0.107 * m.iteration, abs=1e-9)
        assert m.std["l1_orig"] < 1e-9


def test_monotonous_accuracy_never_jumps_up():
    res = run_repetitions(_cfg(n_points=3000, n_iterations=6, n_repetitions=1))
    acc = res[0].values[:, 0]
    assert np.all(np.diff(acc) <= 0.015)


def test_baseline_keeps_distance_constant():
    res = run_repetitions(_cfg(baseline=True))
    for r in res:
        np.testing.assert_allclose(r.values[:, 4], 0.107, atol=1e-12)


def test_dynamic_regime_changes_the_drift():
    mono = run_repetitions(_cfg(n_repetitions=1, n_iterations=3))
    dyn = run_repetitions(_cfg(n_repetitions=1, n_iterations=3, regime=DriftRegime("dynamic", 1)))
    assert mono[0].values[0].tobytes() == dyn[0].values[0].tobytes()
    assert mono[0].values[2, 4] != dyn[0].values[2, 4]


def test_failed_repetition_aborts(tmp_path):
    with pytest.raises(OSError):
        run_simulation(_cfg(data_source=str(tmp_path / "absent.csv")))


def test_raw_dump_has_repetition_column(tmp_path):
    res = run_repetitions(_cfg(n_iterations=2))
    emit_raw_csv(res, tmp_path / "raw.csv")
    lines = (tmp_path / "raw.csv").read_text().splitlines()
    assert lines[0] == "repetition,iteration," + ",".join(METRICS)
    assert [l.split(",")[:2] for l in lines[1:]] == [["0", "1"], ["0", "2"], ["1", "1"], ["1", "2"]]


def test_export_writes_origin_once_and_pairs_per_iteration(tmp_path):
    paths = export_datasets(_cfg(n_iterations=9), [0, 9], tmp_path)
    assert sorted(p.name for p in paths) == ["proj_0.csv", "proj_9.csv", "x_0.csv", "x_9.csv"]
    drifted = Dataset.from_csv(tmp_path / "x_9.csv")
    projected = Dataset.from_csv(tmp_path / "proj_9.csv")
    assert drifted.features.shape == projected.features.shape == (400, 10)
    assert (drifted.domain_labels == 9).all()
