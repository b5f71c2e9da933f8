"""Repeated drift experiments: train once on (X0, X1), then track four models over drift.

Each repetition draws an undrifted training set, fits the deployed
regressor ``M0`` on it, applies one drift step and trains a GDAN on the
pair.  A freshly drawn evaluation set is then drifted for
``n_iterations`` steps, and at every step we record

* ``acc_m0``   M0 on the drifted rows,
* ``acc_mret`` a regressor refitted on a 70/30 split of the drifted rows,
* ``acc_mg``   M0 on the rows projected back by the generator,
* ``acc_mlc``  the GDAN label classifier,
* ``l1_orig``  / ``l1_gen``: mean absolute distance from the undrifted
  evaluation rows to the drifted and projected rows.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .drift import (Dataset, DriftModelParams, DriftRegime, IzzoParams, LogisticModel,
                    calibrate_epsilon, fit_logreg, izzo_sample, load_credit_csv,
                    perdomo_step, synth_credit_surrogate, top_k_mask)
from .errors import DegenerateDataError, ShapeError
from .gdan import GdanHyperParams, GdanModel, converged, train_gdan
from .nn import l1_loss

METRICS = ("acc_m0", "acc_mret", "acc_mg", "acc_mlc", "l1_orig", "l1_gen")
CSV_HEADER = ["iteration"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
IZZO_DEFAULT_EPSILON = 1.0


@dataclass
class SimulationConfig:
    generator: str = "perdomo"
    regime: DriftRegime = field(default_factory=DriftRegime)
    n_iterations: int = 10
    n_points: int = 10000
    n_repetitions: int = 10
    gdan: GdanHyperParams = field(default_factory=GdanHyperParams)
    seed: int = 0
    data_source: str = "surrogate"
    # drift strength; None calibrates to target_l1 (credit) or uses 1.0 (spam)
    epsilon: float | None = None
    target_l1: float = 0.107
    # performative columns: explicit mask wins, else a rule over |theta| of M0
    mask: list | None = None
    mask_rule: str | None = None
    n_performative: int = 5
    izzo: IzzoParams = field(default_factory=IzzoParams)
    logreg_epochs: int = 300
    logreg_lr: float = 1.0
    retrain_split: float = 0.7
    # drift once, then resample the first drifted set every iteration
    baseline: bool = False

    def __post_init__(self):
        if self.generator not in ("perdomo", "izzo"):
            raise ValueError(f"generator must be 'perdomo' or 'izzo', got {self.generator!r}")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.n_repetitions < 1:
            raise ValueError("n_repetitions must be >= 1")
        if self.n_points < 100:
            raise ValueError(f"n_points must be >= 100, got {self.n_points}")
        if self.mask_rule not in (None, "largest", "smallest", "all"):
            raise ValueError(f"mask_rule must be 'largest', 'smallest' or 'all', got {self.mask_rule!r}")
        if not 0.0 < self.retrain_split < 1.0:
            raise ValueError("retrain_split must lie in (0, 1)")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.target_l1 <= 0:
            raise ValueError("target_l1 must be positive")

    @property
    def resolved_mask_rule(self) -> str:
        if self.mask_rule is not None:
            return self.mask_rule
        return "smallest" if self.generator == "perdomo" else "all"


@dataclass
class IterationMetrics:
    iteration: int
    mean: dict
    std: dict

    def __post_init__(self):
        for name in METRICS:
            if self.std[name] < 0:
                raise ValueError(f"negative standard deviation for {name}")


@dataclass
class RepetitionResult:
    """Per-iteration metric table of one repetition, rows in iteration order."""

    repetition: int
    values: np.ndarray
    converged: bool


# -- evaluation helpers ----------------------------------------------------------

def evaluate_accuracy(predictor: Callable, data: Dataset) -> float:
    """Share of rows whose highest-scoring class is the label; ties go to the lower index."""
    if data.n == 0:
        raise DegenerateDataError("cannot evaluate accuracy on an empty dataset")
    scores = np.asarray(predictor(data.features))
    if scores.ndim != 2 or scores.shape[0] != data.n:
        raise ShapeError(f"predictor returned shape {scores.shape} for {data.n} rows")
    return float(np.mean(np.argmax(scores, axis=1) == data.class_labels))


def retrain_model(data: Dataset, split: float = 0.7, seed=0, epochs: int = 300,
                  learning_rate: float = 1.0) -> tuple[LogisticModel, float]:
    """Fit a fresh regressor on a seeded ``split`` share of rows; score it on the rest."""
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(data.n)
    n_train = int(round(split * data.n))
    if n_train == 0 or n_train == data.n:
        raise DegenerateDataError(f"a {split} split of {data.n} rows leaves one side empty")
    train, test = data.take(order[:n_train]), data.take(order[n_train:])
    if np.unique(train.class_labels).size < 2:
        raise DegenerateDataError("training split holds a single class")
    model = fit_logreg(train, epochs, learning_rate)
    return model, evaluate_accuracy(model, test)


def select_mask(theta: np.ndarray, config: SimulationConfig) -> np.ndarray:
    if config.mask is not None:
        mask = np.asarray(config.mask, dtype=bool)
        if mask.size != theta.size:
            raise ShapeError(f"mask has {mask.size} entries, data has {theta.size} features")
        return mask
    rule = config.resolved_mask_rule
    if rule == "all":
        return np.ones(theta.size, dtype=bool)
    if not 0 < config.n_performative <= theta.size:
        raise ValueError(f"n_performative must be in [1, {theta.size}]")
    if rule == "largest":
        return top_k_mask(theta, config.n_performative)
    return ~top_k_mask(theta, theta.size - config.n_performative)


# -- data sources ----------------------------------------------------------------

class _Source:
    """Draws undrifted credit rows, either synthetic or resampled from a CSV."""

    def __init__(self, config: SimulationConfig):
        self.config = config
        self.table = None
        if config.generator == "perdomo" and config.data_source != "surrogate":
            self.table = load_credit_csv(config.data_source)

    def draw(self, n: int, seed) -> Dataset:
        if self.config.generator == "izzo":
            return izzo_sample(self.config.izzo, None, n, seed)
        if self.table is None:
            return synth_credit_surrogate(n, seed)
        rng = np.random.default_rng(seed)
        replace = n > self.table.n
        return self.table.take(rng.choice(self.table.n, size=n, replace=replace))


def _izzo_drifted(config: SimulationConfig, params: DriftModelParams, n: int, seed,
                  domain: int) -> Dataset:
    return izzo_sample(config.izzo, params, n, seed, domain=domain)


# -- one repetition --------------------------------------------------------------

def run_repetition(config: SimulationConfig, repetition: int,
                   on_step: Callable | None = None) -> RepetitionResult:
    """Run one seeded repetition; ``on_step(i, X_i, projected, x0_eval)`` sees every evaluated set.

    ``on_step`` is also called once with ``i = 0`` on the undrifted evaluation set.
    """
    ss = np.random.SeedSequence(config.seed + repetition)
    data_ss, eval_ss, gdan_ss, iter_ss = ss.spawn(4)
    source = _Source(config)
    n = config.n_points
    fit = lambda d: fit_logreg(d, config.logreg_epochs, config.logreg_lr)

    X0 = source.draw(n, data_ss)
    m0 = fit(X0)
    theta0 = m0.theta
    mask = select_mask(theta0, config)
    if config.epsilon is not None:
        eps = float(config.epsilon)
    elif config.generator == "perdomo":
        eps = calibrate_epsilon(theta0, mask, config.target_l1)
    else:
        eps = IZZO_DEFAULT_EPSILON
    drift0 = DriftModelParams(theta0, mask, eps)
    first_ss, *step_ss = iter_ss.spawn(config.n_iterations + 1)
    if config.generator == "perdomo":
        X1 = perdomo_step(X0, drift0)
    else:
        X1 = _izzo_drifted(config, drift0, n, first_ss, 1)
    model, reports = train_gdan(X0, X1, config.gdan, int(gdan_ss.generate_state(1)[0]))

    E0 = source.draw(n, eval_ss)
    if on_step is not None:
        on_step(0, E0, model.project(E0.features), E0)
    theta = theta0
    current = E0
    rows = []
    for i in range(1, config.n_iterations + 1):
        sample_ss, split_ss = step_ss[i - 1].spawn(2)
        params = DriftModelParams(theta, mask, eps)
        origin = E0
        if config.baseline:
            if config.generator == "perdomo":
                origin = source.draw(n, sample_ss)
                current = perdomo_step(origin, drift0)
            else:
                current = _izzo_drifted(config, drift0, n, sample_ss, 1)
        elif config.generator == "perdomo":
            current = perdomo_step(current, params)
        else:
            current = _izzo_drifted(config, params, n, sample_ss, i)
        projected = model.project(current.features)
        mret, acc_mret = retrain_model(current, config.retrain_split, split_ss,
                                       config.logreg_epochs, config.logreg_lr)
        rows.append([
            evaluate_accuracy(m0, current),
            acc_mret,
            evaluate_accuracy(m0, current.with_features(projected)),
            evaluate_accuracy(model.classify, current),
            l1_loss(origin.features, current.features)[0],
            l1_loss(origin.features, projected)[0],
        ])
        if on_step is not None:
            on_step(i, current, projected, origin)
        if config.regime.retrains_after(i) and not config.baseline:
            theta = mret.theta
    return RepetitionResult(repetition, np.array(rows, dtype=np.float64),
                            converged(reports, config.gdan))


def _run_one(args):
    config, repetition = args
    return run_repetition(config, repetition)


def run_repetitions(config: SimulationConfig, jobs: int = 1) -> list[RepetitionResult]:
    """All repetitions, ordered by index; ``jobs`` only changes wall time."""
    tasks = [(config, r) for r in range(config.n_repetitions)]
    if jobs <= 1 or len(tasks) == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_run_one, tasks))


def aggregate(results: Sequence[RepetitionResult]) -> list[IterationMetrics]:
    if not results:
        return []
    stack = np.stack([r.values for r in sorted(results, key=lambda r: r.repetition)])
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.zeros_like(mean)
    return [IterationMetrics(i + 1, dict(zip(METRICS, mean[i])), dict(zip(METRICS, std[i])))
            for i in range(mean.shape[0])]


def run_simulation(config: SimulationConfig, jobs: int = 1) -> list[IterationMetrics]:
    return aggregate(run_repetitions(config, jobs))


# -- output --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def emit_metrics_csv(metrics: Sequence[IterationMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for m in metrics:
            row = [str(m.iteration)]
            for name in METRICS:
                row += [_fmt(m.mean[name]), _fmt(m.std[name])]
            writer.writerow(row)


def emit_raw_csv(results: Sequence[RepetitionResult], path) -> None:
    """Per-repetition values, one row per (repetition, iteration)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["repetition", "iteration", *METRICS])
        for res in sorted(results, key=lambda r: r.repetition):
            for i, row in enumerate(res.values, start=1):
                writer.writerow([res.repetition, i, *(_fmt(v) for v in row)])


def read_metrics_csv(path) -> list[IterationMetrics]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path} does not carry the metrics header")
        out = []
        for row in reader:
            vals = [float(v) for v in row[1:]]
            out.append(IterationMetrics(int(row[0]), dict(zip(METRICS, vals[0::2])),
                                        dict(zip(METRICS, vals[1::2]))))
    return out


def export_datasets(config: SimulationConfig, iterations: Sequence[int], out_dir) -> list[Path]:
    """Write ``x_0.csv`` once plus ``x_i.csv`` (i > 0) and ``proj_i.csv`` for each requested i.

    Data come from repetition 0 of ``config``.
    """
    wanted = sorted(set(int(i) for i in iterations))
    if not wanted:
        raise ValueError("no iterations requested")
    if wanted[0] < 0 or wanted[-1] > config.n_iterations:
        raise ValueError(f"iterations must lie in [0, {config.n_iterations}]")
    out_dir = Path(out_dir)
    written = []

    def on_step(i, current, projected, origin):
        if i == 0:
            path = out_dir / "x_0.csv"
            current.to_csv(path)
            written.append(path)
        if i not in wanted:
            return
        if i > 0:
            path = out_dir / f"x_{i}.csv"
            current.to_csv(path)
            written.append(path)
        path = out_dir / f"proj_{i}.csv"
        current.with_features(projected).to_csv(path)
        written.append(path)

    short = SimulationConfig(**{**config.__dict__, "n_iterations": max(wanted[-1], 1)})
    run_repetition(short, 0, on_step)
    return written
