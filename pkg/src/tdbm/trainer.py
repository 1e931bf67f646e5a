"""Mini-batch CD-k / PCD-k training of a tempered RBM."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from tdbm.errors import ConfigError, DimensionError, InsufficientDataError, InvalidArgumentError, NumericalError
from tdbm.numerics import as_batch, make_rng, sample_bernoulli, sigmoid_unchecked
from tdbm.rbm import (
    Gradients,
    LayerParams,
    RbmModel,
    check_temperature,
    hidden_conditional,
    reconstruction_mse,
    visible_conditional,
)

ALGORITHMS = ("CD", "PCD")

# stream tags for make_rng
_INIT_STREAM, _SAMPLE_STREAM, _SHUFFLE_STREAM = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one RBM layer.

    Defaults: learning rate 0.1, weight decay 0.1,
    momentum 1e-5, one Gibbs step, 30 epochs, mini-batches of 20.
    """

    eta: float = 0.1
    weight_decay: float = 0.1
    momentum: float = 1e-5
    k: int = 1
    algorithm: str = "CD"
    epochs: int = 30
    batch_size: int = 20
    temperature: float = 1.0
    bias_tempered: bool = True
    decay_scaled_by_eta: bool = False
    init_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("k", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not self.init_std >= 0:
            raise ConfigError(f"init_std must be >= 0, got {self.init_std}")
        try:
            check_temperature(self.temperature)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_(self, **changes) -> TrainConfig:
        return replace(self, **changes)


@dataclass
class UpdateState:
    """Previous-step deltas used by the momentum terms."""

    dW: np.ndarray
    da: np.ndarray
    db: np.ndarray

    @classmethod
    def zeros_like(cls, params: LayerParams) -> UpdateState:
        return cls(np.zeros_like(params.W), np.zeros_like(params.a), np.zeros_like(params.b))


@dataclass
class PersistentChains:
    """Fantasy particles of PCD, one row per chain."""

    particles: np.ndarray

    def __len__(self):
        return len(self.particles)


@dataclass
class EpochMetrics:
    epoch: int
    train_mse: float
    mean_weight: float
    mean_hidden_activation: float


@dataclass
class TrainResult:
    model: RbmModel
    metrics: list[EpochMetrics] = field(default_factory=list)


def gibbs_step(model: RbmModel, v, rng: np.random.Generator):
    """One v -> h -> v sweep.

    Returns the sampled visible state together with the hidden and visible
    probabilities computed along the way.
    """
    h_probs = hidden_conditional(model, v)
    h = sample_bernoulli(h_probs, rng)
    v_probs = visible_conditional(model, h)
    return sample_bernoulli(v_probs, rng), h_probs, v_probs


def _phase_difference(v_pos, ph_pos, v_neg, ph_neg) -> Gradients:
    n = len(v_pos)
    return Gradients(
        (v_pos.T @ ph_pos - v_neg.T @ ph_neg) / n,
        (v_pos - v_neg).mean(axis=0),
        (ph_pos - ph_neg).mean(axis=0),
    )


def _negative_phase(model, start, k, rng):
    # Same draws as k calls of gibbs_step, minus the per-step validation.
    p, T = model.params, model.temperature
    W, WT, a, b = p.W, p.W.T, p.a, p.b
    v = start
    for _ in range(k):
        pre = (v @ W + b) / T if model.bias_tempered else v @ W / T + b
        h_probs = sigmoid_unchecked(pre)
        h = (rng.random(h_probs.shape) < h_probs).astype(np.float64)
        v_probs = sigmoid_unchecked(h @ WT + a)
        v = (rng.random(v_probs.shape) < v_probs).astype(np.float64)
    return v, hidden_conditional(model, v)


def _check_batch(model, batch):
    batch, _ = as_batch(batch, model.n_visible, "batch")
    if len(batch) == 0:
        raise InsufficientDataError("empty batch")
    return batch


def cd_gradient(model: RbmModel, batch, k: int, rng: np.random.Generator) -> Gradients:
    """Batch-averaged CD-k estimate, chains started at the data."""
    batch = _check_batch(model, batch)
    ph = hidden_conditional(model, batch)
    v_neg, ph_neg = _negative_phase(model, batch, k, rng)
    return _phase_difference(batch, ph, v_neg, ph_neg)


def pcd_gradient(model: RbmModel, batch, chains: PersistentChains, k: int, rng: np.random.Generator):
    """PCD-k estimate; returns the gradient and the advanced chains."""
    batch = _check_batch(model, batch)
    if len(chains) != len(batch):
        raise DimensionError(f"{len(chains)} persistent chains for a batch of {len(batch)}")
    ph = hidden_conditional(model, batch)
    v_neg, ph_neg = _negative_phase(model, chains.particles, k, rng)
    return _phase_difference(batch, ph, v_neg, ph_neg), PersistentChains(v_neg)


def apply_update(params: LayerParams, grads: Gradients, state: UpdateState, cfg: TrainConfig):
    """Gradient step with weight decay and momentum.

    The weight decay term acts on ``W`` only; biases see just the learning
    rate and momentum.
    """
    if grads.W.shape != params.W.shape or grads.a.shape != params.a.shape or grads.b.shape != params.b.shape:
        raise DimensionError(
            f"gradient shapes W{grads.W.shape} a{grads.a.shape} b{grads.b.shape} "
            f"do not match parameters W{params.W.shape}"
        )
    decay = cfg.weight_decay * cfg.eta if cfg.decay_scaled_by_eta else cfg.weight_decay
    dW = cfg.eta * grads.W - decay * params.W + cfg.momentum * state.dW
    da = cfg.eta * grads.a + cfg.momentum * state.da
    db = cfg.eta * grads.b + cfg.momentum * state.db
    new = LayerParams(params.W + dW, params.a + da, params.b + db)
    return new, UpdateState(dW, da, db)


def _epoch_order(cfg: TrainConfig, epoch: int, n: int) -> np.ndarray:
    return make_rng(cfg.seed ^ epoch, _SHUFFLE_STREAM).permutation(n)


def train_rbm(data, n_visible: int, n_hidden: int, cfg: TrainConfig) -> TrainResult:
    """Train one tempered RBM and record per-epoch metrics.

    ``data`` rows may be binary or probabilities in [0, 1] (upper layers of a
    stack train on propagated probabilities).
    """
    data, _ = as_batch(data, n_visible, "data")
    if len(data) == 0:
        raise InsufficientDataError("cannot train on an empty dataset")
    if n_hidden < 1:
        raise ConfigError(f"n_hidden must be >= 1, got {n_hidden}")

    params = LayerParams.random(n_visible, n_hidden, make_rng(cfg.seed, _INIT_STREAM), cfg.init_std)
    state = UpdateState.zeros_like(params)
    rng = make_rng(cfg.seed, _SAMPLE_STREAM)
    bs = cfg.batch_size
    chains = None
    if cfg.algorithm == "PCD":
        # Chains start from the first (shuffled) mini-batch and are never reset.
        first = data[_epoch_order(cfg, 0, len(data))[:bs]]
        chains = PersistentChains(sample_bernoulli(first, make_rng(cfg.seed, _INIT_STREAM, 1)))

    metrics = []
    for epoch in range(cfg.epochs):
        order = _epoch_order(cfg, epoch, len(data))
        for start in range(0, len(data), bs):
            batch = data[order[start:start + bs]]
            model = RbmModel(params, cfg.temperature, cfg.bias_tempered)
            # Overflow surfaces as non-finite sigmoid input or parameters.
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    if chains is None:
                        grads = cd_gradient(model, batch, cfg.k, rng)
                    else:
                        # A short final batch advances only the leading chains.
                        used = PersistentChains(chains.particles[: len(batch)])
                        grads, used = pcd_gradient(model, batch, used, cfg.k, rng)
                        chains.particles[: len(batch)] = used.particles
                    params, state = apply_update(params, grads, state, cfg)
            except InvalidArgumentError as exc:
                raise NumericalError(f"training diverged in epoch {epoch + 1}: {exc}") from exc
        model = RbmModel(params, cfg.temperature, cfg.bias_tempered)
        metrics.append(EpochMetrics(
            epoch=epoch + 1,
            train_mse=reconstruction_mse(model, data),
            mean_weight=float(params.W.mean()),
            mean_hidden_activation=float(hidden_conditional(model, data).mean()),
        ))
    return TrainResult(RbmModel(params, cfg.temperature, cfg.bias_tempered), metrics)


def write_metrics_csv(path, metrics: list[EpochMetrics], layer: int | None = None) -> None:
    fields = ["epoch", "train_mse", "mean_weight", "mean_hidden_activation"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow((["layer"] if layer is not None else []) + fields)
        for m in metrics:
            row = [m.epoch, repr(m.train_mse), repr(m.mean_weight), repr(m.mean_hidden_activation)]
            w.writerow(([layer] if layer is not None else []) + row)
