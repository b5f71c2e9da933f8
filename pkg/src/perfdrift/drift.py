"""Performative data generators and the logistic regressor that drives them.

Two generators are provided:

* the credit-scoring generator, which shifts performative feature columns
  against the deployed regressor's coefficients, ``x' = x - eps * B * theta``;
* the Gaussian spam generator, where class 0 is fixed and only the class-1
  mean moves, ``mu_n = mu1 - eps * theta_n * B_n``.

Row order matters: metrics compare datasets row by row, so the spam
generator always emits class-0 rows first and the credit generator keeps
the row order of its input.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError, FormatError, ShapeError
from .nn import Adam, Dense, Mlp, bce_loss

CREDIT_TARGET = "SeriousDlqin2yrs"
CREDIT_FEATURES = (
    "RevolvingUtilizationOfUnsecuredLines",
    "age",
    "NumberOfTime30-59DaysPastDueNotWorse",
    "DebtRatio",
    "MonthlyIncome",
    "NumberOfOpenCreditLinesAndLoans",
    "NumberOfTimes90DaysLate",
    "NumberRealEstateLoansOrLines",
    "NumberOfTime60-89DaysPastDueNotWorse",
    "NumberOfDependents",
)


@dataclass
class Dataset:
    features: np.ndarray
    class_labels: np.ndarray
    domain_labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.domain_labels = np.asarray(self.domain_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.class_labels.shape != (n,) or self.domain_labels.shape != (n,):
            raise ShapeError(
                f"row counts differ: features {n}, classes {self.class_labels.shape}, "
                f"domains {self.domain_labels.shape}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.class_labels[idx], self.domain_labels[idx])

    def with_domain(self, domain: int) -> "Dataset":
        return Dataset(self.features, self.class_labels, np.full(self.n, domain))

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.class_labels, self.domain_labels)

    def to_csv(self, path) -> None:
        header = [f"f{j}" for j in range(self.d)] + ["class", "domain"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row, c, dom in zip(self.features, self.class_labels, self.domain_labels):
                writer.writerow([f"{v:.10g}" for v in row] + [int(c), int(dom)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(raw[:, :-2], raw[:, -2].astype(np.int64), raw[:, -1].astype(np.int64))


@dataclass
class DriftModelParams:
    """Coefficients, performative mask and strength of one drift step."""

    theta: np.ndarray
    mask: np.ndarray
    epsilon: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.theta.shape != self.mask.shape:
            raise ShapeError(f"theta has {self.theta.size} entries but mask has {self.mask.size}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def shift(self) -> np.ndarray:
        """Per-feature displacement subtracted by one drift step."""
        return self.epsilon * self.theta * self.mask


@dataclass
class IzzoParams:
    mu0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mu1: np.ndarray = field(default_factory=lambda: np.full(2, 2.0))
    sigma0: float = 0.5
    sigma1: float = 0.5
    class_balance: float = 0.5

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(-1)
        self.mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
        if self.mu0.shape != self.mu1.shape:
            raise ShapeError(f"mu0 has {self.mu0.size} dims but mu1 has {self.mu1.size}")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ValueError("sigma0 and sigma1 must be positive")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError(f"class_balance must lie in (0, 1), got {self.class_balance}")

    @property
    def dims(self) -> int:
        return self.mu0.size

    def class_counts(self, n: int) -> tuple[int, int]:
        n1 = int(round(n * self.class_balance))
        return n - n1, n1


@dataclass
class DriftRegime:
    kind: str = "monotonous"
    retrain_period: int = 1

    def __post_init__(self):
        if self.kind not in ("monotonous", "dynamic"):
            raise ValueError(f"regime kind must be 'monotonous' or 'dynamic', got {self.kind!r}")
        if self.retrain_period < 1:
            raise ValueError("retrain_period must be a positive count")

    def retrains_after(self, iteration: int) -> bool:
        """Whether the drift coefficients are refreshed from the regressor fitted at ``iteration``."""
        return self.kind == "dynamic" and iteration % self.retrain_period == 0


# -- credit-scoring generator --------------------------------------------------

def perdomo_step(current: Dataset, params: DriftModelParams) -> Dataset:
    if params.theta.size != current.d:
        raise ShapeError(f"drift parameters have {params.theta.size} features, data has {current.d}")
    return Dataset(current.features - params.shift, current.class_labels, current.domain_labels + 1)


def calibrate_epsilon(theta, mask, target_l1: float) -> float:
    """Strength giving a per-element mean L1 displacement of ``target_l1`` per step."""
    theta = np.asarray(theta, dtype=np.float64)
    mass = np.abs(theta * np.asarray(mask, dtype=bool)).sum()
    if mass == 0:
        raise DegenerateDataError("no performative coefficient is non-zero; cannot calibrate")
    return float(target_l1 * theta.size / mass)


def top_k_mask(theta, k: int) -> np.ndarray:
    """Mask of the ``k`` largest-magnitude coefficients (stable ordering on ties)."""
    theta = np.asarray(theta)
    order = np.argsort(-np.abs(theta), kind="stable")
    mask = np.zeros(theta.size, dtype=bool)
    mask[order[:k]] = True
    return mask


# -- Gaussian spam generator -------------------------------------------------

def izzo_mean_shift(mu1_n: float, theta_n: float, epsilon: float, mask_n: bool) -> float:
    return mu1_n - epsilon * theta_n * float(bool(mask_n))


def izzo_class1_mean(params: IzzoParams, drift: DriftModelParams | None) -> np.ndarray:
    if drift is None:
        return params.mu1.copy()
    if drift.theta.size != params.dims:
        raise ShapeError(f"drift parameters have {drift.theta.size} features, generator has {params.dims}")
    return np.array([izzo_mean_shift(m, t, drift.epsilon, b)
                     for m, t, b in zip(params.mu1, drift.theta, drift.mask)])


def izzo_sample(params: IzzoParams, drift: DriftModelParams | None, n: int, seed,
                domain: int = 0) -> Dataset:
    """Draw ``n`` rows; class 0 from N(mu0, s0^2 I), class 1 around the shifted mean."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    n0, n1 = params.class_counts(n)
    mean1 = izzo_class1_mean(params, drift)
    x0 = params.mu0 + params.sigma0 * rng.standard_normal((n0, params.dims))
    x1 = mean1 + params.sigma1 * rng.standard_normal((n1, params.dims))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return Dataset(np.vstack([x0, x1]), labels, np.full(n, domain))


# -- credit data -------------------------------------------------------------

def load_credit_csv(path) -> Dataset:
    """Read a GiveMeSomeCredit-layout CSV, drop incomplete rows, min-max scale features."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path} is empty") from None
        known = {CREDIT_TARGET, *CREDIT_FEATURES}
        for pos, name in enumerate(header):
            # the Kaggle file carries an unnamed row-index column first
            if name == "" and pos == 0:
                continue
            if name not in known:
                raise FormatError(f"unknown column {name!r} in {path}")
        for name in (CREDIT_TARGET, *CREDIT_FEATURES):
            if name not in header:
                raise FormatError(f"missing column {name!r} in {path}")
        cols = [header.index(name) for name in (*CREDIT_FEATURES, CREDIT_TARGET)]
        rows = []
        for record in reader:
            if not record:
                continue
            values = [record[c].strip() if c < len(record) else "" for c in cols]
            if any(v == "" or v.upper() == "NA" for v in values):
                continue
            rows.append([float(v) for v in values])
    if not rows:
        raise DegenerateDataError(f"no complete rows in {path}")
    table = np.array(rows)
    x = table[:, :-1]
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    scaled = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    y = table[:, -1].astype(np.int64)
    return Dataset(scaled, y, np.zeros(len(y), dtype=np.int64))


# Beta shapes of the ten surrogate columns (skewed like credit ratios/counts)
SURROGATE_SHAPES = np.array([
    (1.2, 4.0), (4.0, 4.0), (0.8, 6.0), (1.5, 5.0), (2.0, 6.0),
    (3.0, 4.0), (0.7, 8.0), (1.5, 3.5), (0.9, 7.0), (1.2, 3.0),
])
# planted logistic coefficients on the centred columns: five strong, five weak
SURROGATE_COEF = np.array([5.0, -4.5, 6.0, 0.2, -0.24, 0.16, 4.5, 0.12, -4.0, 0.2])


def synth_credit_surrogate(n: int, seed) -> Dataset:
    """Ten-column tabular stand-in for the credit data, features in [0, 1].

    Labels follow ``P(y=1|x) = sigmoid(SURROGATE_COEF . (x - E[x]))``, which
    puts a fitted logistic regression in the low seventies of accuracy.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    a, b = SURROGATE_SHAPES[:, 0], SURROGATE_SHAPES[:, 1]
    x = rng.beta(a, b, size=(n, a.size))
    logits = (x - a / (a + b)) @ SURROGATE_COEF
    p = 1.0 / (1.0 + np.exp(-logits))
    y = (rng.uniform(size=n) < p).astype(np.int64)
    return Dataset(x, y, np.zeros(n, dtype=np.int64))


# -- logistic regression ---------------------------------------------------------

class LogisticModel:
    """Single sigmoid unit fitted by full-batch Adam on mean cross-entropy."""

    def __init__(self, d: int):
        self.net = Mlp([Dense(d, 1, "sigmoid", np.random.default_rng(0))])
        self.net.layers[0].weights[:] = 0.0

    @property
    def theta(self) -> np.ndarray:
        return self.net.layers[0].weights[0].copy()

    @property
    def intercept(self) -> float:
        return float(self.net.layers[0].bias[0])

    def drift_params(self, mask, epsilon: float) -> DriftModelParams:
        return DriftModelParams(self.theta, mask, epsilon)

    def predict_proba(self, x) -> np.ndarray:
        p = self.net.forward(x)[:, 0]
        return np.column_stack([1.0 - p, p])

    __call__ = predict_proba


def fit_logreg(data: Dataset, epochs: int = 300, learning_rate: float = 1.0) -> LogisticModel:
    labels = np.unique(data.class_labels)
    if labels.size < 2:
        raise DegenerateDataError("logistic regression needs both classes present")
    model = LogisticModel(data.d)
    opt = Adam(learning_rate)
    target = data.class_labels[:, None].astype(np.float64)
    for _ in range(epochs):
        p = model.net.forward(data.features)
        _, grad = bce_loss(p, target)
        model.net.backward(grad)
        opt.step(model.net.params(), model.net.grads())
    return model
