"""Generative domain-adversarial network.

Four networks cooperate:

* ``F`` maps a data row to a drift-invariant representation,
* ``LC`` classifies that representation,
* ``G`` maps the representation back into the coordinates of the
  undrifted data, and
* ``D`` sees a data row concatenated with a representation and answers
  two questions: real or generated (source head) and which distribution
  the representation came from (domain head).

``F`` descends the classification loss while ascending ``D``'s domain
loss, which is what makes the representation drift-invariant; ``G`` plays
a conditional GAN game against ``D`` with an L1 anchor to undrifted rows.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .drift import Dataset
from .errors import DegenerateDataError, ShapeError
from .nn import Dense, Mlp, as_matrix, bce_loss, ce_loss, grad_check, l1_loss, make_optimizer


@dataclass
class GdanHyperParams:
    iterations: int = 6000
    batch_size: int = 128
    warmup_steps: int = 4000
    lambda1: float = 2.0
    lambda2: float = 10.0
    lr_f: float = 1e-3
    lr_lc: float = 1e-3
    lr_d: float = 1e-3
    lr_g: float = 1e-3
    optimizer: str = "adam"
    feature_dim: int = 16
    f_hidden: list = field(default_factory=lambda: [64])
    lc_hidden: list = field(default_factory=lambda: [16])
    g_hidden: list = field(default_factory=lambda: [64])
    d_hidden: list = field(default_factory=lambda: [64, 32])
    n_domains: int = 2
    pairing: str = "aligned"
    # convergence gate: mean LC loss over the last ``gate_window`` steps
    converge_lc: float = 0.65
    gate_window: int = 200

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be an even count >= 2, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.iterations > 0 and not 0 <= self.warmup_steps < self.iterations:
            raise ValueError(
                f"warmup_steps must be in [0, iterations); got {self.warmup_steps} >= {self.iterations}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.pairing not in ("aligned", "random"):
            raise ValueError(f"pairing must be 'aligned' or 'random', got {self.pairing!r}")
        if self.n_domains < 2:
            raise ValueError("n_domains must be at least 2")


class Discriminator:
    """Shared leaky-relu trunk with a sigmoid source head and a softmax domain head."""

    def __init__(self, trunk: Mlp, source: Dense, domain: Dense):
        if trunk.n_out != source.n_in or trunk.n_out != domain.n_in:
            raise ShapeError("discriminator heads do not match trunk width")
        self.trunk = trunk
        self.source = source
        self.domain = domain

    @classmethod
    def build(cls, n_in: int, hidden: Sequence[int], n_domains: int, rng) -> "Discriminator":
        trunk = Mlp.build([n_in, *hidden], "leaky_relu", "leaky_relu", rng)
        return cls(trunk, Dense(trunk.n_out, 1, "sigmoid", rng), Dense(trunk.n_out, n_domains, "softmax", rng))

    @property
    def n_in(self) -> int:
        return self.trunk.n_in

    def forward(self, x) -> tuple[np.ndarray, np.ndarray]:
        h = self.trunk.forward(x)
        return self.source.forward(h)[:, 0], self.domain.forward(h)

    def backward(self, grad_source: np.ndarray | None, grad_domain_logits: np.ndarray | None) -> np.ndarray:
        """Gradients: source w.r.t. its probability, domain w.r.t. its logits."""
        n = self.trunk.layers[-1]._cache[2].shape[0]
        if grad_source is None:
            grad_source = np.zeros(n)
        if grad_domain_logits is None:
            grad_domain_logits = np.zeros((n, self.domain.n_out))
        gh = self.source.backward(np.asarray(grad_source).reshape(n, 1))
        gh = gh + self.domain.backward(grad_domain_logits, pre_activation=True)
        return self.trunk.backward(gh)

    def params(self) -> list[np.ndarray]:
        return self.trunk.params() + self.source.params() + self.domain.params()

    def grads(self) -> list[np.ndarray]:
        return self.trunk.grads() + self.source.grads() + self.domain.grads()

    def state(self) -> dict:
        return {"trunk": self.trunk.state(), "source": Mlp([self.source]).state(),
                "domain": Mlp([self.domain]).state()}

    @classmethod
    def from_state(cls, state: dict) -> "Discriminator":
        return cls(Mlp.from_state(state["trunk"]), Mlp.from_state(state["source"]).layers[0],
                   Mlp.from_state(state["domain"]).layers[0])


@dataclass
class GdanModel:
    F: Mlp
    LC: Mlp
    G: Mlp
    D: Discriminator
    hp: GdanHyperParams

    @property
    def data_dim(self) -> int:
        return self.F.n_in

    @property
    def feature_dim(self) -> int:
        return self.F.n_out

    @classmethod
    def build(cls, data_dim: int, hp: GdanHyperParams, rng: np.random.Generator,
              n_classes: int = 2) -> "GdanModel":
        fd = hp.feature_dim
        F = Mlp.build([data_dim, *hp.f_hidden, fd], "leaky_relu", "leaky_relu", rng)
        LC = Mlp.build([fd, *hp.lc_hidden, n_classes], "leaky_relu", "softmax", rng)
        G = Mlp.build([fd, *hp.g_hidden, data_dim], "leaky_relu", "identity", rng)
        D = Discriminator.build(data_dim + fd, hp.d_hidden, hp.n_domains, rng)
        return cls(F, LC, G, D, hp)

    def _check(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.data_dim:
            raise ShapeError(f"model expects {self.data_dim} columns, got {X.shape[1]}")
        return X

    def project(self, X) -> np.ndarray:
        """Map rows back towards the undrifted distribution, ``G(F(X))``."""
        return self.G.forward(self.F.forward(self._check(X)))

    def classify(self, X) -> np.ndarray:
        return self.LC.forward(self.F.forward(self._check(X)))

    __call__ = classify

    def all_params(self) -> list[np.ndarray]:
        return self.F.params() + self.LC.params() + self.G.params() + self.D.params()

    def save(self, path) -> None:
        state = {"F": self.F.state(), "LC": self.LC.state(), "G": self.G.state(), "D": self.D.state()}
        arrays = {}
        layout = {}
        for net, entry in state.items():
            layout[net] = _flatten_state(net, entry, arrays)
        meta = {"format": "perfdrift-gdan/1", "hp": asdict(self.hp), "layout": layout}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "GdanModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != "perfdrift-gdan/1":
                raise ValueError(f"{path} is not a GDAN checkpoint")
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
        layout = meta["layout"]
        nets = {name: _unflatten_state(layout[name], arrays) for name in ("F", "LC", "G", "D")}
        return cls(Mlp.from_state(nets["F"]), Mlp.from_state(nets["LC"]), Mlp.from_state(nets["G"]),
                   Discriminator.from_state(nets["D"]), GdanHyperParams(**meta["hp"]))


def _flatten_state(prefix, entry, arrays):
    if isinstance(entry, dict):
        return {k: _flatten_state(f"{prefix}.{k}", v, arrays) for k, v in entry.items()}
    out = []
    for i, layer in enumerate(entry):
        arrays[f"{prefix}.{i}.weights"] = layer["weights"]
        arrays[f"{prefix}.{i}.bias"] = layer["bias"]
        out.append({"key": f"{prefix}.{i}", "activation": layer["activation"]})
    return out


def _unflatten_state(layout, arrays):
    if isinstance(layout, dict):
        return {k: _unflatten_state(v, arrays) for k, v in layout.items()}
    return [{"weights": arrays[e["key"] + ".weights"], "bias": arrays[e["key"] + ".bias"],
             "activation": e["activation"]} for e in layout]


@dataclass
class LossReport:
    step: int
    loss_lc: float
    loss_source: float
    loss_domain: float
    loss_l1: float
    loss_f: float
    loss_d: float
    loss_g: float


@dataclass
class DiscriminatorLosses:
    source: float
    domain: float
    grads: list


def discriminator_losses(D: Discriminator, real_pairs, fake_pairs, domain_labels) -> DiscriminatorLosses:
    """Source and domain negative log-likelihoods of ``D`` and their parameter gradients.

    ``real_pairs = (x0_rows, representations)`` are labelled real,
    ``fake_pairs = (generated_rows, representations)`` generated.  Both
    halves carry ``domain_labels``.  Losses are means over all rows, so an
    uninformative source head scores ln 2.
    """
    real = np.hstack([as_matrix(real_pairs[0]), as_matrix(real_pairs[1])])
    fake = np.hstack([as_matrix(fake_pairs[0]), as_matrix(fake_pairs[1])])
    if real.shape != fake.shape:
        raise ShapeError(f"real half {real.shape} and generated half {fake.shape} differ")
    half = real.shape[0]
    domains = np.asarray(domain_labels)
    if domains.shape != (half,):
        raise ShapeError(f"expected {half} domain labels, got {domains.shape}")
    p_s, p_d = D.forward(np.vstack([real, fake]))
    target = np.concatenate([np.ones(half), np.zeros(half)])
    loss_s, g_s = bce_loss(p_s, target)
    loss_d, g_d = ce_loss(p_d, np.concatenate([domains, domains]))
    D.backward(g_s, g_d)
    return DiscriminatorLosses(loss_s, loss_d, [g.copy() for g in D.grads()])


def generator_loss(G: Mlp, D: Discriminator, F: Mlp, x_t, x0_pair, lambda2: float,
                   domain_labels) -> tuple[float, list, dict]:
    """Composite generator objective and its gradient w.r.t. ``G``'s parameters.

    The adversarial part asks ``D`` to call ``(G(F(x_t)), F(x_t))`` real and
    to attribute it to ``x_t``'s domain; ``lambda2`` weighs the L1 distance
    to the paired undrifted rows.
    """
    x_t = as_matrix(x_t)
    x0_pair = as_matrix(x0_pair)
    if x_t.shape != x0_pair.shape:
        raise ShapeError(f"x_t {x_t.shape} and its pairing {x0_pair.shape} differ")
    f = F.forward(x_t)
    gen = G.forward(f)
    p_s, p_d = D.forward(np.hstack([gen, f]))
    adv_s, g_s = bce_loss(p_s, np.ones(len(p_s)))
    adv_d, g_d = ce_loss(p_d, np.asarray(domain_labels))
    rec, g_rec = l1_loss(gen, x0_pair)
    g_in = D.backward(g_s, g_d)
    G.backward(g_in[:, :gen.shape[1]] + lambda2 * g_rec)
    total = adv_s + adv_d + lambda2 * rec
    parts = {"source": adv_s, "domain": adv_d, "l1": rec, "features": f, "generated": gen}
    return total, [g.copy() for g in G.grads()], parts


def feature_extractor_grads(F: Mlp, LC: Mlp, D: Discriminator, x_t, x0_pair, class_labels,
                            domain_labels, lambda1: float) -> tuple[float, float, list, list]:
    """Gradients of ``L_LC - lambda1 * L_domain(real half)`` w.r.t. ``F``, plus ``LC``'s gradients.

    Returns ``(loss_lc, loss_domain, grads_F, grads_LC)``.  The domain term
    is backpropagated with its sign flipped, i.e. a gradient-reversal path.
    """
    x_t = as_matrix(x_t)
    f = F.forward(x_t)
    probs = LC.forward(f)
    loss_lc, g_lc = ce_loss(probs, np.asarray(class_labels))
    g_f = LC.backward(g_lc, pre_activation=True)
    grads_lc = [g.copy() for g in LC.grads()]
    _, p_d = D.forward(np.hstack([as_matrix(x0_pair), f]))
    loss_dom, g_d = ce_loss(p_d, np.asarray(domain_labels))
    g_in = D.backward(None, g_d)
    g_f = g_f - lambda1 * g_in[:, x_t.shape[1]:]
    F.backward(g_f)
    return loss_lc, loss_dom, [g.copy() for g in F.grads()], grads_lc


def feature_extractor_update(F: Mlp, LC: Mlp, D: Discriminator, batch, lambda1: float, opt) -> Mlp:
    """One adversarial step of ``F``; ``batch = (x_t, x0_pair, classes, domains)``."""
    x_t, x0_pair, classes, domains = batch
    _, _, grads, _ = feature_extractor_grads(F, LC, D, x_t, x0_pair, classes, domains, lambda1)
    opt.step(F.params(), grads)
    return F


def _pair_indices(n_z: int, n0: int, hp: GdanHyperParams, idx: np.ndarray, rng) -> np.ndarray:
    if hp.pairing == "random":
        return rng.integers(0, n0, size=idx.size)
    return idx % n0


def train_gdan(X0: Dataset, X1: Dataset, hp: GdanHyperParams | None = None,
               seed=0) -> tuple[GdanModel, list[LossReport]]:
    """Train all four networks on the undrifted set ``X0`` and first drifted set ``X1``.

    F is trained for the first ``warmup_steps`` steps and frozen afterwards;
    G starts training once F is frozen.  LC and D train throughout.  All
    gradients of a step are taken at the same parameter values.
    """
    hp = GdanHyperParams() if hp is None else hp
    if X0.n == 0 or X1.n == 0:
        raise DegenerateDataError("training needs non-empty X0 and X1")
    if X0.d != X1.d:
        raise ShapeError(f"X0 has {X0.d} features but X1 has {X1.d}")
    init_rng, batch_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    n_classes = max(2, int(max(X0.class_labels.max(), X1.class_labels.max())) + 1)
    model = GdanModel.build(X0.d, hp, init_rng, n_classes)

    Z = np.vstack([X0.features, X1.features])
    Zc = np.concatenate([X0.class_labels, X1.class_labels])
    Zd = np.concatenate([np.zeros(X0.n, dtype=np.int64), np.ones(X1.n, dtype=np.int64)])
    opts = {name: make_optimizer(hp.optimizer, lr) for name, lr in
            (("F", hp.lr_f), ("LC", hp.lr_lc), ("D", hp.lr_d), ("G", hp.lr_g))}
    half = hp.batch_size // 2
    reports = []
    F, LC, G, D = model.F, model.LC, model.G, model.D
    for step in range(hp.iterations):
        idx = batch_rng.integers(0, Z.shape[0], size=half)
        pair = _pair_indices(Z.shape[0], X0.n, hp, idx, batch_rng)
        x_t, classes, domains = Z[idx], Zc[idx], Zd[idx]
        x0 = X0.features[pair]
        train_f = step < hp.warmup_steps

        loss_lc, loss_dom_real, grads_f, grads_lc = feature_extractor_grads(
            F, LC, D, x_t, x0, classes, domains, hp.lambda1)
        loss_g, grads_g, parts = generator_loss(G, D, F, x_t, x0, hp.lambda2, domains)
        f, gen = parts["features"], parts["generated"]
        dl = discriminator_losses(D, (x0, f), (gen, f), domains)

        opts["LC"].step(LC.params(), grads_lc)
        opts["D"].step(D.params(), dl.grads)
        if train_f:
            opts["F"].step(F.params(), grads_f)
        else:
            opts["G"].step(G.params(), grads_g)

        reports.append(LossReport(step, loss_lc, dl.source, dl.domain, parts["l1"],
                                  loss_lc - hp.lambda1 * loss_dom_real, dl.source + dl.domain, loss_g))
    return model, reports


def converged(reports: Sequence[LossReport], hp: GdanHyperParams) -> bool:
    """Convergence gate: recent LC loss below ``hp.converge_lc`` and every loss finite."""
    if not reports:
        return False
    tail = reports[-hp.gate_window:]
    finite = all(np.isfinite([r.loss_lc, r.loss_source, r.loss_domain, r.loss_l1, r.loss_g]).all()
                 for r in reports)
    return finite and float(np.mean([r.loss_lc for r in tail])) < hp.converge_lc


# -- gradient verification -------------------------------------------------------

def _zoo(hp: GdanHyperParams, data_dim: int, n_classes: int):
    fd = hp.feature_dim
    d_in = data_dim + fd
    # name, layer sizes, hidden activation, output activation, loss kind
    return [
        ("F leaky_relu/l1", [data_dim, *hp.f_hidden, fd], "leaky_relu", "leaky_relu", "l1"),
        ("LC softmax/ce", [fd, *hp.lc_hidden, n_classes], "leaky_relu", "softmax", "ce"),
        ("G identity/l1", [fd, *hp.g_hidden, data_dim], "leaky_relu", "identity", "l1"),
        ("D source sigmoid/bce", [d_in, *hp.d_hidden, 1], "leaky_relu", "sigmoid", "bce"),
        ("D domain softmax/ce", [d_in, *hp.d_hidden, hp.n_domains], "leaky_relu", "softmax", "ce"),
        ("relu/l1", [data_dim, 16, data_dim], "relu", "identity", "l1"),
        ("tanh/bce", [data_dim, 16, 1], "tanh", "sigmoid", "bce"),
        ("sigmoid/ce", [data_dim, 16, n_classes], "sigmoid", "softmax", "ce"),
    ]


def gradient_report(hp: GdanHyperParams | None = None, data_dim: int = 10, n_classes: int = 2,
                    seeds: int = 20, batch: int = 4, corrupt: float = 1.0) -> list[tuple[str, float]]:
    """Worst backprop-vs-finite-difference error per layer/loss combination over ``seeds`` draws.

    ``corrupt`` scales every analytic loss gradient; anything but 1.0 should fail.
    """
    hp = GdanHyperParams() if hp is None else hp
    out = []
    for name, sizes, hidden, output, loss in _zoo(hp, data_dim, n_classes):
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng(s)
            net = Mlp.build(sizes, hidden, output, rng)
            x = rng.normal(size=(batch, sizes[0]))
            if loss == "l1":
                target = rng.normal(size=(batch, sizes[-1]))
                fn = lambda o, t=target: l1_loss(o, t)
            elif loss == "bce":
                target = rng.integers(0, 2, size=(batch, 1)).astype(np.float64)
                fn = lambda o, t=target: bce_loss(o, t)
            else:
                target = rng.integers(0, sizes[-1], size=batch)
                fn = lambda o, t=target: ce_loss(o, t)
            scaled = lambda o, f=fn: (lambda r: (r[0], corrupt * r[1]))(f(o))
            worst = max(worst, grad_check(net, x, scaled, pre_activation=(loss == "ce"), rng=rng))
        out.append((name, worst))
    return out
