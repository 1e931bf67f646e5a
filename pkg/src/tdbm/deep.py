"""Greedy layer-wise DBN and DBM stacks with tempered conditionals.

Both kinds are trained identically, one RBM at a time.  They differ in how a
hidden layer is inferred at reconstruction time: a DBN layer listens to one
neighbour, a DBM middle layer combines its bottom-up and top-down inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from tdbm.errors import ConfigError, DataError, DimensionError, InsufficientDataError
from tdbm.numerics import as_batch, derive_seed, make_rng, sample_bernoulli, sigmoid
from tdbm.rbm import LayerParams, RbmModel, check_temperature, hidden_conditional, read_rbm, write_rbm
from tdbm.trainer import EpochMetrics, TrainConfig, train_rbm

KINDS = ("DBN", "DBM")
TEMPERING_MODES = ("literal", "uniform")
STACK_MAGIC = b"TDBM1"


@dataclass
class StackedModel:
    """Ordered RBM layers; ``layers[0]`` connects the visible units.

    ``tempering`` selects how a DBM middle layer is tempered: ``"literal"``
    divides only the bottom-up input by T, ``"uniform"`` divides both the
    bottom-up and the top-down input.
    """

    layers: list[LayerParams]
    kind: str
    temperature: float = 1.0
    bias_tempered: bool = True
    tempering: str = "literal"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.tempering not in TEMPERING_MODES:
            raise ConfigError(f"tempering must be one of {TEMPERING_MODES}, got {self.tempering!r}")
        if not self.layers:
            raise ConfigError("a stack needs at least one layer")
        self.temperature = check_temperature(self.temperature)
        for i, (lo, hi) in enumerate(zip(self.layers, self.layers[1:])):
            if lo.n_hidden != hi.n_visible:
                raise DimensionError(
                    f"layer {i} has {lo.n_hidden} hidden units but layer {i + 1} "
                    f"expects {hi.n_visible} inputs"
                )

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_visible] + [p.n_hidden for p in self.layers]

    def rbm(self, index: int) -> RbmModel:
        return RbmModel(self.layers[index], self.temperature, self.bias_tempered)


# -- DBM conditionals --------------------------------------------------------

def _require_dbm(model: StackedModel, depth: int = 2) -> None:
    if model.kind != "DBM":
        raise ConfigError(f"operation needs a DBM, got {model.kind}")
    if len(model.layers) < depth:
        raise ConfigError(f"operation needs a DBM with >= {depth} layers, got {len(model.layers)}")


def dbm_energy(model: StackedModel, v, *hidden) -> float:
    """Bias-free DBM energy ``-sum_l h_{l-1}^T W_l h_l`` with ``h_0 = v``."""
    _require_dbm(model, 1)
    if len(hidden) != len(model.layers):
        raise DimensionError(f"expected {len(model.layers)} hidden states, got {len(hidden)}")
    states = [np.asarray(x, dtype=np.float64) for x in (v, *hidden)]
    for s, n in zip(states, model.sizes):
        if s.shape != (n,):
            raise DimensionError(f"state of shape {s.shape} where ({n},) was expected")
    return float(-sum(lo @ p.W @ hi for lo, p, hi in zip(states, model.layers, states[1:])))


def dbm_hidden_conditional(model: StackedModel, index: int, below, above=None) -> np.ndarray:
    """``P(h_index = 1 | h_below, h_above)`` for hidden layer ``index`` (1-based).

    ``above`` is ignored for the top layer and may be None elsewhere, in which
    case the top-down input is zero.
    """
    _require_dbm(model, 1)
    if not 1 <= index <= len(model.layers):
        raise DimensionError(f"hidden layer index {index} outside 1..{len(model.layers)}")
    p, T = model.layers[index - 1], model.temperature
    below, single = as_batch(below, p.n_visible, "below")
    up = below @ p.W
    bias = p.b
    if index < len(model.layers) and above is not None:
        above, _ = as_batch(above, model.layers[index].n_hidden, "above")
        if len(above) != len(below):
            raise DimensionError(f"batch sizes differ: below {len(below)}, above {len(above)}")
        down = above @ model.layers[index].W.T
    else:
        down = np.zeros_like(up)
    if model.tempering == "uniform":
        pre = (up + down + bias) / T if model.bias_tempered else (up + down) / T + bias
    else:
        pre = (up + bias) / T + down if model.bias_tempered else up / T + bias + down
    out = sigmoid(pre)
    return out[0] if single else out


def dbm_hidden1_conditional(model: StackedModel, v, h2) -> np.ndarray:
    _require_dbm(model)
    return dbm_hidden_conditional(model, 1, v, h2)


def dbm_hidden2_conditional(model: StackedModel, h1, h3=None) -> np.ndarray:
    _require_dbm(model)
    return dbm_hidden_conditional(model, 2, h1, h3)


def dbm_visible_conditional(model: StackedModel, h1) -> np.ndarray:
    """Untempered ``P(v_i = 1 | h1)``."""
    _require_dbm(model, 1)
    p = model.layers[0]
    h1, single = as_batch(h1, p.n_hidden, "h1")
    out = sigmoid(h1 @ p.W.T + p.a)
    return out[0] if single else out


# -- training ----------------------------------------------------------------

@dataclass
class StackResult:
    model: StackedModel
    metrics: list[list[EpochMetrics]] = field(default_factory=list)


def layer_seed(seed: int, index: int) -> int:
    """Seed for layer ``index``; layer 0 keeps the configured seed."""
    return seed if index == 0 else derive_seed(seed, 0x5EED, index)


def train_stack(
    data,
    sizes: list[int],
    cfg: TrainConfig,
    kind: str,
    propagate_samples: bool = False,
    tempering: str = "literal",
) -> StackResult:
    """Greedy layer-wise training.

    Each layer is a tempered RBM trained on the hidden probabilities (or, with
    ``propagate_samples``, sampled bits) of the layer below.
    """
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ConfigError(f"sizes need an input and at least one hidden layer, got {sizes}")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    x, _ = as_batch(data, sizes[0], "data")
    if len(x) == 0:
        raise InsufficientDataError("cannot train on an empty dataset")

    layers, metrics = [], []
    for i, (m, n) in enumerate(zip(sizes, sizes[1:])):
        layer_cfg = cfg.with_(seed=layer_seed(cfg.seed, i))
        result = train_rbm(x, m, n, layer_cfg)
        layers.append(result.model.params)
        metrics.append(result.metrics)
        if i + 2 < len(sizes):
            x = hidden_conditional(result.model, x)
            if propagate_samples:
                x = sample_bernoulli(x, make_rng(layer_cfg.seed, 0xBEEF))
    model = StackedModel(layers, kind, cfg.temperature, cfg.bias_tempered, tempering)
    return StackResult(model, metrics)


# -- reconstruction ----------------------------------------------------------

def reconstruct(model: StackedModel, v, rng=None, fixed_point_iters: int = 0) -> np.ndarray:
    """Mean-field reconstruction: one up-pass, then one down-pass.

    The up-pass applies each layer's tempered hidden conditional in turn.  For
    a DBM, ``fixed_point_iters`` rounds of bidirectional updates of the hidden
    layers may follow.  The down-pass then runs from the top: a DBN layer is
    inferred from the layer above through the untempered visible
    conditional, a DBM middle layer from both the up-pass value below and the
    fresh value above.  No sampling takes place, so ``rng`` is unused.
    """
    del rng
    x, single = as_batch(v, model.sizes[0], "v")
    L = len(model.layers)
    up = [x]
    for i in range(L):
        up.append(hidden_conditional(model.rbm(i), up[-1]))

    if model.kind == "DBM":
        for _ in range(int(fixed_point_iters)):
            for i in range(1, L + 1):
                up[i] = dbm_hidden_conditional(model, i, up[i - 1], up[i + 1] if i < L else None)

    h = up[L]
    for i in range(L - 1, 0, -1):
        if model.kind == "DBM":
            h = dbm_hidden_conditional(model, i, up[i - 1], h)
        else:
            p = model.layers[i]
            h = sigmoid(h @ p.W.T + p.a)
    p = model.layers[0]
    out = sigmoid(h @ p.W.T + p.a)
    return out[0] if single else out


# -- serialization -----------------------------------------------------------

def write_stack(f: BinaryIO, model: StackedModel) -> None:
    f.write(STACK_MAGIC)
    f.write(struct.pack("<BQ", KINDS.index(model.kind), len(model.layers)))
    for i in range(len(model.layers)):
        write_rbm(f, model.rbm(i))


def read_stack(f: BinaryIO, bias_tempered: bool = True, tempering: str = "literal") -> StackedModel:
    head = f.read(len(STACK_MAGIC) + 9)
    if len(head) != len(STACK_MAGIC) + 9 or head[: len(STACK_MAGIC)] != STACK_MAGIC:
        raise DataError("not a TDBM1 stack file (bad magic or truncated header)")
    kind_id, count = struct.unpack("<BQ", head[len(STACK_MAGIC):])
    if kind_id >= len(KINDS) or not 1 <= count <= 64:
        raise DataError(f"corrupt stack header: kind={kind_id} layers={count}")
    rbms = [read_rbm(f, bias_tempered) for _ in range(count)]
    temps = {r.temperature for r in rbms}
    if len(temps) != 1:
        raise DataError(f"layers disagree on temperature: {sorted(temps)}")
    try:
        return StackedModel([r.params for r in rbms], KINDS[kind_id], temps.pop(), bias_tempered, tempering)
    except DimensionError as exc:
        raise DataError(f"corrupt stack: {exc}") from exc


def save_stack(path, model: StackedModel) -> None:
    with open(path, "wb") as f:
        write_stack(f, model)


def load_stack(path, bias_tempered: bool = True, tempering: str = "literal") -> StackedModel:
    with open(path, "rb") as f:
        model = read_stack(f, bias_tempered, tempering)
        if f.read(1):
            raise DataError("trailing bytes after TDBM1 stack")
    return model
