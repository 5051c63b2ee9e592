"""
Dense neural networks with LayerNorm and hand-derived backward passes.
Plain numpy, float64 throughout. Inputs are a single vector or a batch of rows.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation, InvalidArgumentError, NonFiniteInputError

Activation = Literal["leaky_relu", "relu", "tanh", "identity"]
ACTIVATIONS = ("leaky_relu", "relu", "tanh", "identity")

LEAKY_SLOPE = 0.01
LAYERNORM_EPS = 1e-5
HIDDEN_WIDTH = 128
DEFAULT_SPARSITY = 0.9

LayoutEntry = Tuple[slice, Tuple[int, ...]]


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer, optionally followed by LayerNorm, then an activation."""

    in_dim: int
    out_dim: int
    layernorm: bool = False
    activation: Activation = "identity"
    ln_affine: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidArgumentError(
                f"Layer dimensions must be positive, got {self.in_dim}x{self.out_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"Unknown activation '{self.activation}', expected one of {ACTIVATIONS}"
            )
        if self.ln_affine and not self.layernorm:
            raise InvalidArgumentError("ln_affine requires layernorm")

    @property
    def num_params(self) -> int:
        n = self.in_dim * self.out_dim + self.out_dim
        if self.layernorm and self.ln_affine:
            n += 2 * self.out_dim
        return n


@dataclass
class ParamVector:
    """Flat parameter vector plus the (layer, role) -> index range layout."""

    values: np.ndarray
    layout: Dict[Tuple[int, str], LayoutEntry]

    def view(self, layer: int, role: str) -> np.ndarray:
        sl, shape = self.layout[(layer, role)]
        return self.values[sl].reshape(shape)

    def index(self, layer: int, role: str) -> slice:
        return self.layout[(layer, role)][0]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def __len__(self) -> int:
        return int(self.values.shape[0])


class LayerCache(NamedTuple):
    x: np.ndarray
    xhat: Optional[np.ndarray]
    std_inv: Optional[np.ndarray]
    h: np.ndarray
    out: np.ndarray


@dataclass
class Tape:
    """Activation record of one forward call, consumed by backward()."""

    net_id: int
    version: int
    batched: bool
    caches: List[LayerCache]

    @property
    def output(self) -> np.ndarray:
        out = self.caches[-1].out
        return out if self.batched else out[0]


class Gradients(NamedTuple):
    params: np.ndarray
    inputs: np.ndarray


def _build_layout(layers: Sequence[LayerSpec]) -> Tuple[Dict[Tuple[int, str], LayoutEntry], int]:
    layout: Dict[Tuple[int, str], LayoutEntry] = {}
    offset = 0

    def put(layer: int, role: str, shape: Tuple[int, ...]) -> None:
        nonlocal offset
        size = int(np.prod(shape))
        layout[(layer, role)] = (slice(offset, offset + size), shape)
        offset += size

    for i, spec in enumerate(layers):
        put(i, "weight", (spec.out_dim, spec.in_dim))
        put(i, "bias", (spec.out_dim,))
        if spec.layernorm and spec.ln_affine:
            put(i, "ln_gain", (spec.out_dim,))
            put(i, "ln_bias", (spec.out_dim,))
    return layout, offset


class DenseNet:
    """
    Feed-forward network over a fixed canonical parameter layout.

    Per layer: weights (row-major, out x in), biases, then LayerNorm gain/bias
    when the affine transform is enabled. Layers are stored in forward order.
    """

    def __init__(self, layers: Sequence[LayerSpec]):
        if not layers:
            raise InvalidArgumentError("A network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidArgumentError(
                    f"Layer chain mismatch: {prev.out_dim} outputs feed {nxt.in_dim} inputs"
                )
        self.layers: Tuple[LayerSpec, ...] = tuple(layers)
        layout, size = _build_layout(self.layers)
        self.params = ParamVector(np.zeros(size, dtype=np.float64), layout)
        self._version = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_params(self) -> int:
        return len(self.params)

    @property
    def values(self) -> np.ndarray:
        return self.params.values

    def set_values(self, values: np.ndarray) -> None:
        """Replace the parameter vector; invalidates every outstanding tape."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.values.shape:
            raise ContractViolation(
                f"Parameter length {values.shape} does not match layout {self.params.values.shape}"
            )
        self.params = ParamVector(values.copy(), self.params.layout)
        self._version += 1

    def copy(self) -> "DenseNet":
        clone = DenseNet(self.layers)
        clone.set_values(self.values)
        return clone

    def signature(self) -> List[Tuple[int, int, bool, str, bool]]:
        return [(s.in_dim, s.out_dim, s.layernorm, s.activation, s.ln_affine) for s in self.layers]


def mlp_layers(in_dim: int, out_dim: int, hidden_width: int = HIDDEN_WIDTH,
               layernorm: bool = True, activation: Activation = "leaky_relu",
               ln_affine: bool = False) -> List[LayerSpec]:
    """
    Two hidden layers plus a linear output layer, the shape every agent uses.

    Args:
        in_dim: Input size (state_dim, or state_dim + action_dim for Q networks)
        out_dim: Output size
        hidden_width: Width of both hidden layers
        layernorm: Apply LayerNorm to hidden pre-activations
        activation: Hidden activation
        ln_affine: Learnable LayerNorm gain/bias

    Returns:
        Layer specs in forward order
    """
    return [
        LayerSpec(in_dim, hidden_width, layernorm, activation, ln_affine and layernorm),
        LayerSpec(hidden_width, hidden_width, layernorm, activation, ln_affine and layernorm),
        LayerSpec(hidden_width, out_dim, False, "identity"),
    ]


def _fill_layernorm(net: DenseNet, values: np.ndarray) -> None:
    for i, spec in enumerate(net.layers):
        if spec.layernorm and spec.ln_affine:
            values[net.params.index(i, "ln_gain")] = 1.0
            values[net.params.index(i, "ln_bias")] = 0.0


def init_sparse(net: DenseNet, sparsity: float = DEFAULT_SPARSITY,
                rng: Optional[np.random.Generator] = None) -> DenseNet:
    """
    Sparse initialization.

    Each output unit gets exactly floor(sparsity * in_dim) incoming weights set to
    zero, chosen uniformly without replacement; the rest are drawn from
    U(-1/sqrt(in_dim), 1/sqrt(in_dim)). Biases start at zero.

    Args:
        net: Network to initialize in place
        sparsity: Fraction of zeroed incoming weights per unit, in [0, 1)
        rng: Random generator

    Returns:
        The same network, for chaining
    """
    if not 0.0 <= sparsity < 1.0:
        raise InvalidArgumentError(f"sparsity must be in [0, 1), got {sparsity}")
    rng = rng if rng is not None else np.random.default_rng()

    values = np.zeros(net.num_params, dtype=np.float64)
    for i, spec in enumerate(net.layers):
        bound = 1.0 / math.sqrt(spec.in_dim)
        weights = rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim))
        n_zero = math.floor(sparsity * spec.in_dim)
        if n_zero > 0:
            zero_idx = np.argsort(rng.random((spec.out_dim, spec.in_dim)), axis=1)[:, :n_zero]
            np.put_along_axis(weights, zero_idx, 0.0, axis=1)
        values[net.params.index(i, "weight")] = weights.ravel()
    _fill_layernorm(net, values)
    net.set_values(values)
    return net


def init_uniform(net: DenseNet, rng: Optional[np.random.Generator] = None) -> DenseNet:
    """Dense U(-1/sqrt(in_dim), 1/sqrt(in_dim)) init for weights and biases."""
    rng = rng if rng is not None else np.random.default_rng()

    values = np.zeros(net.num_params, dtype=np.float64)
    for i, spec in enumerate(net.layers):
        bound = 1.0 / math.sqrt(spec.in_dim)
        values[net.params.index(i, "weight")] = rng.uniform(
            -bound, bound, size=spec.out_dim * spec.in_dim)
        values[net.params.index(i, "bias")] = rng.uniform(-bound, bound, size=spec.out_dim)
    _fill_layernorm(net, values)
    net.set_values(values)
    return net


def _activate(h: np.ndarray, activation: str) -> np.ndarray:
    if activation == "leaky_relu":
        return np.where(h > 0.0, h, LEAKY_SLOPE * h)
    if activation == "relu":
        return np.maximum(h, 0.0)
    if activation == "tanh":
        return np.tanh(h)
    return h


def _activation_grad(h: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    # subgradient at exactly 0 takes the negative-side slope
    if activation == "leaky_relu":
        return np.where(h > 0.0, 1.0, LEAKY_SLOPE)
    if activation == "relu":
        return np.where(h > 0.0, 1.0, 0.0)
    if activation == "tanh":
        return 1.0 - out * out
    return np.ones_like(h)


def forward(net: DenseNet, inputs: Union[np.ndarray, Sequence[float]]) -> Tuple[np.ndarray, Tape]:
    """
    Forward pass: affine -> optional LayerNorm -> activation, layer by layer.

    Args:
        net: Network
        inputs: Vector of length in_dim, or a (batch, in_dim) array

    Returns:
        (output, tape) where output has the same batching as inputs
    """
    x = np.asarray(inputs, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim != 2:
        raise InvalidArgumentError(f"Expected a vector or a batch, got shape {x.shape}")
    if x.shape[1] != net.in_dim:
        raise InvalidArgumentError(f"Input has {x.shape[1]} features, network expects {net.in_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("Network input contains NaN or infinite values")

    caches: List[LayerCache] = []
    for i, spec in enumerate(net.layers):
        y = x @ net.params.view(i, "weight").T + net.params.view(i, "bias")
        xhat = std_inv = None
        if spec.layernorm:
            centered = y - y.mean(axis=1, keepdims=True)
            var = np.mean(centered * centered, axis=1, keepdims=True)
            std_inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
            xhat = centered * std_inv
            if spec.ln_affine:
                h = xhat * net.params.view(i, "ln_gain") + net.params.view(i, "ln_bias")
            else:
                h = xhat
        else:
            h = y
        out = _activate(h, spec.activation)
        caches.append(LayerCache(x, xhat, std_inv, h, out))
        x = out

    tape = Tape(id(net), net._version, batched, caches)
    return tape.output, tape


def backward(net: DenseNet, tape: Tape, output_grad: Union[np.ndarray, Sequence[float]]) -> Gradients:
    """
    Exact gradient of sum(output_grad * output) w.r.t. parameters and inputs.

    Batched tapes sum the parameter gradient over the batch.

    Args:
        net: Network that produced the tape
        tape: Record from the matching forward() call
        output_grad: Same shape as the forward output

    Returns:
        Gradients(params=flat vector in canonical layout, inputs=input gradient)
    """
    if tape.net_id != id(net) or tape.version != net._version:
        raise ContractViolation("Stale tape: parameters changed since the forward pass")

    g = np.asarray(output_grad, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    batch = tape.caches[0].x.shape[0]
    if g.shape != (batch, net.out_dim):
        raise ContractViolation(f"Output gradient shape {g.shape} does not match {(batch, net.out_dim)}")

    grad = np.zeros(net.num_params, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        spec, cache = net.layers[i], tape.caches[i]
        dh = g * _activation_grad(cache.h, cache.out, spec.activation)
        if spec.layernorm:
            if spec.ln_affine:
                grad[net.params.index(i, "ln_gain")] = np.sum(dh * cache.xhat, axis=0)
                grad[net.params.index(i, "ln_bias")] = np.sum(dh, axis=0)
                dxhat = dh * net.params.view(i, "ln_gain")
            else:
                dxhat = dh
            n = spec.out_dim
            dy = (cache.std_inv / n) * (
                n * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - cache.xhat * np.sum(dxhat * cache.xhat, axis=1, keepdims=True)
            )
        else:
            dy = dh
        grad[net.params.index(i, "weight")] = (dy.T @ cache.x).ravel()
        grad[net.params.index(i, "bias")] = dy.sum(axis=0)
        g = dy @ net.params.view(i, "weight")

    return Gradients(grad, g if tape.batched else g[0])


def l2_norm(params: Union[ParamVector, np.ndarray]) -> float:
    """Euclidean norm of the full flat parameter vector."""
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    return math.sqrt(math.fsum((values * values).tolist()))
