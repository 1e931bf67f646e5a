"""Tempered binary-binary restricted Boltzmann machine.

The joint distribution is ``P(v, h) = exp(-E(v, h) / T) / Z``.  Temperature
sharpens or flattens the hidden conditionals only; the visible conditional is
always evaluated at T = 1.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from typing import BinaryIO, NamedTuple

import numpy as np
from scipy.special import logsumexp

from tdbm.errors import CapacityError, DataError, DimensionError, InvalidArgumentError
from tdbm.numerics import affine_forward, as_batch, sigmoid

MAX_ENUMERATION_UNITS = 24
RBM_MAGIC = b"TRBM1"


@dataclass
class LayerParams:
    """Weights ``W`` (m x n), visible bias ``a`` (m) and hidden bias ``b`` (n)."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.a.shape != (self.W.shape[0],) or self.b.shape != (self.W.shape[1],):
            raise DimensionError(
                f"inconsistent layer shapes W{self.W.shape} a{self.a.shape} b{self.b.shape}"
            )
        if not all(np.all(np.isfinite(x)) for x in (self.W, self.a, self.b)):
            raise InvalidArgumentError("layer parameters must be finite")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, m: int, n: int) -> LayerParams:
        return cls(np.zeros((m, n)), np.zeros(m), np.zeros(n))

    @classmethod
    def random(cls, m: int, n: int, rng: np.random.Generator, std: float = 0.01) -> LayerParams:
        """Gaussian weights with standard deviation ``std``; zero biases."""
        return cls(rng.normal(0.0, std, size=(m, n)), np.zeros(m), np.zeros(n))

    def copy(self) -> LayerParams:
        return LayerParams(self.W.copy(), self.a.copy(), self.b.copy())


class Gradients(NamedTuple):
    """Parameter-shaped quantities: gradients, deltas or momentum buffers."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray


def check_temperature(T: float) -> float:
    T = float(T)
    if not np.isfinite(T) or T <= 0.0:
        raise InvalidArgumentError(f"temperature must be a positive finite real, got {T}")
    return T


@dataclass
class RbmModel:
    params: LayerParams
    temperature: float = 1.0
    bias_tempered: bool = True

    def __post_init__(self):
        self.temperature = check_temperature(self.temperature)

    @property
    def n_visible(self) -> int:
        return self.params.n_visible

    @property
    def n_hidden(self) -> int:
        return self.params.n_hidden


def hidden_preactivation(model: RbmModel, v) -> np.ndarray:
    """Tempered argument of the hidden sigmoid."""
    p, T = model.params, model.temperature
    if model.bias_tempered:
        return affine_forward(p.W, v, p.b) / T
    return affine_forward(p.W, v, np.zeros_like(p.b)) / T + p.b


def hidden_conditional(model: RbmModel, v) -> np.ndarray:
    """``P(h_j = 1 | v)`` for a vector or a batch of visible states.

    With ``bias_tempered`` the whole pre-activation ``W^T v + b`` is divided
    by T, as implied by dividing the energy by T.  Otherwise only the weight
    term is tempered and ``b`` is added afterwards.
    """
    v, single = as_batch(v, model.n_visible, "v")
    out = sigmoid(hidden_preactivation(model, v))
    return out[0] if single else out


def visible_conditional(model: RbmModel, h) -> np.ndarray:
    """``P(v_i = 1 | h)``; independent of the temperature."""
    h, single = as_batch(h, model.n_hidden, "h")
    p = model.params
    out = sigmoid(affine_forward(p.W.T, h, p.a))
    return out[0] if single else out


def energy(model: RbmModel, v, h):
    """``E(v, h) = -a.v - b.h - v^T W h``.  Accepts vectors or row batches."""
    p = model.params
    v, single_v = as_batch(v, model.n_visible, "v")
    h, single_h = as_batch(h, model.n_hidden, "h")
    if v.shape[0] != h.shape[0]:
        raise DimensionError(f"batch sizes differ: v{v.shape} h{h.shape}")
    e = -(v @ p.a) - (h @ p.b) - np.einsum("bi,ij,bj->b", v, p.W, h)
    return float(e[0]) if single_v and single_h else e


def all_states(n: int) -> np.ndarray:
    """All ``2**n`` binary vectors of length ``n`` in lexicographic order."""
    if n == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def _guard(model: RbmModel) -> None:
    if model.n_visible + model.n_hidden > MAX_ENUMERATION_UNITS:
        raise CapacityError(
            f"exact enumeration needs m + n <= {MAX_ENUMERATION_UNITS}, "
            f"got {model.n_visible} + {model.n_hidden}"
        )


def log_unnormalized_marginal(model: RbmModel, v) -> np.ndarray:
    """``log sum_h exp(-E(v, h) / T)`` with the hidden sum done in closed form."""
    p, T = model.params, model.temperature
    v, single = as_batch(v, model.n_visible, "v")
    act = (v @ p.W + p.b) / T
    out = v @ p.a / T + np.logaddexp(0.0, act).sum(axis=1)
    return out[0] if single else out


def log_partition(model: RbmModel) -> float:
    _guard(model)
    m, n = model.n_visible, model.n_hidden
    # Marginalize analytically over the larger layer, enumerate the smaller.
    if m <= n:
        return float(logsumexp(log_unnormalized_marginal(model, all_states(m))))
    p, T = model.params, model.temperature
    h = all_states(n)
    act = (h @ p.W.T + p.a) / T
    return float(logsumexp(h @ p.b / T + np.logaddexp(0.0, act).sum(axis=1)))


def exact_partition(model: RbmModel) -> float:
    """``Z = sum_{v,h} exp(-E(v, h) / T)``."""
    return float(np.exp(log_partition(model)))


def exact_marginal(model: RbmModel, v):
    """``P(v)`` under the tempered joint distribution."""
    logp = log_unnormalized_marginal(model, v) - log_partition(model)
    return np.exp(logp)


def free_energy_gradient_exact(model: RbmModel, data) -> Gradients:
    """Exact gradient of the mean log-likelihood ``mean_v log P(v)``.

    Positive phase uses the data, negative phase the exact model expectation
    over all ``2**m`` visible states.  Both carry the ``1/T`` factor
    of the tempered energy.
    """
    _guard(model)
    data, _ = as_batch(data, model.n_visible, "data")
    p, T = model.params, model.temperature

    def moments(v, weights):
        ph = sigmoid((v @ p.W + p.b) / T)
        return (
            np.einsum("k,ki,kj->ij", weights, v, ph),
            weights @ v,
            weights @ ph,
        )

    pos = moments(data, np.full(len(data), 1.0 / len(data)))
    states = all_states(model.n_visible)
    logw = log_unnormalized_marginal(model, states)
    neg = moments(states, np.exp(logw - logsumexp(logw)))
    return Gradients(*((x - y) / T for x, y in zip(pos, neg)))


def reconstruction_mse(model: RbmModel, data) -> float:
    """Mean squared error of one mean-field up-down pass."""
    data, _ = as_batch(data, model.n_visible, "data")
    rec = visible_conditional(model, hidden_conditional(model, data))
    return float(np.mean((data - rec) ** 2))


# -- serialization -----------------------------------------------------------

def write_rbm(f: BinaryIO, model: RbmModel) -> None:
    p = model.params
    f.write(RBM_MAGIC)
    f.write(struct.pack("<QQ", p.n_visible, p.n_hidden))
    for arr in (p.W, p.a, p.b):
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    f.write(struct.pack("<d", model.temperature))


def _read_exact(f: BinaryIO, size: int) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise DataError(f"truncated model file: wanted {size} bytes, got {len(buf)}")
    return buf


def read_rbm(f: BinaryIO, bias_tempered: bool = True) -> RbmModel:
    if _read_exact(f, len(RBM_MAGIC)) != RBM_MAGIC:
        raise DataError("bad magic: not a TRBM1 layer")
    m, n = struct.unpack("<QQ", _read_exact(f, 16))
    if m * n > 2**31:
        raise DataError(f"implausible layer size {m} x {n}")

    def floats(count):
        return np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64)

    W = floats(m * n).reshape(m, n)
    a, b = floats(m), floats(n)
    (T,) = struct.unpack("<d", _read_exact(f, 8))
    try:
        return RbmModel(LayerParams(W, a, b), T, bias_tempered)
    except (InvalidArgumentError, DimensionError) as exc:
        raise DataError(f"corrupt layer: {exc}") from exc


def save_rbm(path, model: RbmModel) -> None:
    with open(path, "wb") as f:
        write_rbm(f, model)


def load_rbm(path, bias_tempered: bool = True) -> RbmModel:
    with open(path, "rb") as f:
        model = read_rbm(f, bias_tempered)
        if f.read(1):
            raise DataError("trailing bytes after TRBM1 layer")
    return model
