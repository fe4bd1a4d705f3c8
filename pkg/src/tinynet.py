"""
Minimal dense network kernel for the MADDPG xApp: explicit forward/backward passes, Adam,
soft target updates, model files, and finite-difference gradient checks. float64 throughout.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, GRADCHECK_FLOOR, MODEL_FILE_VERSION
from src.errors import (
    ArchitectureMismatchError,
    ModelFileError,
    NonFiniteGradientError,
    ScenarioValidationError,
    SchemaVersionError,
    ShapeMismatchError,
    StaleCacheError,
)
from src.utils import make_rng, setup_logging

setup_logging()
logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "linear")


class DenseNet:
    """
    Stack of affine layers, each followed by its activation. weights[l] has shape
    (fan_out, fan_in) so a layer computes W x + b.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activations: Sequence[str],
        weights: List[np.ndarray],
        biases: List[np.ndarray],
    ) -> None:
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.activations = tuple(activations)
        self.weights = weights
        self.biases = biases
        # Bumped on every parameter change; forward caches remember the version they saw.
        self.version = 0
        self._validate()

    def _validate(self) -> None:
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise ShapeMismatchError("a network needs at least 2 layer sizes")
        if len(self.activations) != n_layers:
            raise ShapeMismatchError(f"{len(self.activations)} activations for {n_layers} layers")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ShapeMismatchError(f"unknown activation '{name}'")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeMismatchError("one weight matrix and bias vector per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeMismatchError(f"layer {l} parameters do not match sizes {expected}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ShapeMismatchError(f"layer {l} parameters are not finite")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved: [W0, b0, W1, b1, ...]."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def same_architecture(self, other: "DenseNet") -> bool:
        return self.layer_sizes == other.layer_sizes and self.activations == other.activations


def block_name(index: int) -> str:
    """Human-readable name of parameter block `index` in parameters() order."""
    return f"layer {index // 2} {'weights' if index % 2 == 0 else 'biases'}"


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    outputs: List[np.ndarray]
    version: int
    net_id: int
    batched: bool


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


def init(layer_sizes: Sequence[int], activations: Sequence[str], seed: int) -> DenseNet:
    """
    Glorot-uniform weights, zero biases. Same seed, same parameters.

    Args:
        layer_sizes: [input, hidden..., output]; at least two entries.
        activations: One per layer transition.
        seed: Initialization seed.

    Returns:
        DenseNet: A fresh network.
    """
    if len(layer_sizes) < 2:
        raise ShapeMismatchError("a network needs at least 2 layer sizes")
    rng = make_rng(seed, 0x6E6E)
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return DenseNet(layer_sizes, activations, weights, biases)


def clone(net: DenseNet) -> DenseNet:
    return DenseNet(
        net.layer_sizes,
        net.activations,
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
    )


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward(net: DenseNet, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Runs the network on one input vector (dim,) or a batch (batch, dim).

    Returns:
        (y, cache): the output with the same leading shape as x, and the cache backward needs.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != net.input_size:
        raise ShapeMismatchError(f"input has shape {x.shape}, network expects {net.input_size} features")
    inputs: List[np.ndarray] = []
    pre: List[np.ndarray] = []
    outs: List[np.ndarray] = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w.T + b
        h = _activate(act, z)
        pre.append(z)
        outs.append(h)
    cache = ForwardCache(inputs, pre, outs, net.version, id(net), batched)
    return (h if batched else h[0]), cache


def backward(net: DenseNet, cache: ForwardCache, dl_dy: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of the cached forward pass. Parameter gradients are summed over the
    batch.

    Args:
        net: The network that produced the cache, unchanged since.
        cache: From forward().
        dl_dy: Gradient of the loss with respect to the output, same shape as y.

    Returns:
        (param_grads, dl_dx): gradients in parameters() order, and the input gradient.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache does not belong to the current network parameters")
    g = np.asarray(dl_dy, dtype=np.float64)
    g = g if cache.batched else g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ShapeMismatchError(f"dL/dy has shape {g.shape}, output is {cache.outputs[-1].shape}")
    grads: List[np.ndarray] = [np.empty(0)] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        dz = g * _activation_grad(net.activations[l], cache.pre_activations[l], cache.outputs[l])
        grads[2 * l] = dz.T @ cache.inputs[l]
        grads[2 * l + 1] = dz.sum(axis=0)
        g = dz @ net.weights[l]
    return grads, (g if cache.batched else g[0])


def adam_state(net: DenseNet) -> AdamState:
    params = net.parameters()
    return AdamState(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(net: DenseNet, grads: Sequence[np.ndarray], state: AdamState, lr: float) -> Tuple[DenseNet, AdamState]:
    """
    One bias-corrected Adam step, in place. A non-finite gradient aborts before any parameter
    is touched.
    """
    params = net.parameters()
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ShapeMismatchError("gradient/optimizer blocks do not match the network")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeMismatchError(f"{block_name(i)} gradient has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            logger.error(f"Non-finite gradient in {block_name(i)}; halting the update.")
            raise NonFiniteGradientError(f"non-finite gradient in {block_name(i)}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    net.version += 1
    return net, state


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> DenseNet:
    """theta_target <- tau * theta_online + (1 - tau) * theta_target for every parameter."""
    if not target.same_architecture(online):
        raise ArchitectureMismatchError(
            f"target {target.layer_sizes}/{target.activations} vs online {online.layer_sizes}/{online.activations}"
        )
    if not 0.0 <= tau <= 1.0:
        raise ScenarioValidationError(f"tau in [0, 1], got {tau}")
    for t, o in zip(target.parameters(), online.parameters()):
        if tau == 1.0:
            t[...] = o
        elif tau != 0.0:
            t *= 1.0 - tau
            t += tau * o
    target.version += 1
    return target


# -----------------------------------------------------------------------------
# Model files
# -----------------------------------------------------------------------------


def net_to_dict(net: DenseNet) -> Dict[str, Any]:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(payload: Dict[str, Any]) -> DenseNet:
    """Rebuilds a network; shapes are validated by the DenseNet constructor."""
    try:
        weights = [np.array(w, dtype=np.float64) for w in payload["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in payload["biases"]]
        return DenseNet(payload["layer_sizes"], payload["activations"], weights, biases)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"malformed network record: {e}") from e
    except ShapeMismatchError as e:
        raise ModelFileError(f"inconsistent network record: {e}") from e


def save_net(net: DenseNet, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"version": MODEL_FILE_VERSION, "kind": "dense_net", "net": net_to_dict(net)}
    out.write_text(json.dumps(payload), encoding="utf-8")
    logger.info(f"Network {net.layer_sizes} saved to {out}.")
    return out


def load_net(path: str | Path) -> DenseNet:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFileError(f"cannot read network file {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("kind") != "dense_net":
        raise ModelFileError(f"{path} is not a network file")
    if payload.get("version") != MODEL_FILE_VERSION:
        raise SchemaVersionError(f"network file version {payload.get('version')!r}, expected {MODEL_FILE_VERSION}")
    return net_from_dict(payload["net"])


# -----------------------------------------------------------------------------
# Finite-difference verification
# -----------------------------------------------------------------------------


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRADCHECK_FLOOR) -> float:
    """
    Worst elementwise relative error max_k |a_k - b_k| / max(|a_k| + |b_k|, floor). The floor
    keeps near-zero gradients, where finite differences only resolve absolute error, from
    dominating.
    """
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare gradients of sizes {a.size} and {b.size}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(net: DenseNet, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> float:
    """
    Compares backward() with central finite differences on the scalar loss L = sum(w * y) for a
    fixed random w. Returns the maximum elementwise relative error over every parameter
    gradient and the input gradient.
    """
    x = np.array(x, dtype=np.float64)
    w = make_rng(seed, 0x6763).standard_normal(net.output_size)

    def loss() -> float:
        y, _ = forward(net, x)
        return float(np.sum(w * y))

    y, cache = forward(net, x)
    grads, dl_dx = backward(net, cache, np.broadcast_to(w, y.shape).copy())
    numerics: List[np.ndarray] = []
    for p in net.parameters():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss()
            flat[k] = orig - eps
            down = loss()
            flat[k] = orig
            num_flat[k] = (up - down) / (2.0 * eps)
        numerics.append(numeric)
    numeric_x = np.zeros_like(x)
    for k in np.ndindex(x.shape):
        orig = x[k]
        x[k] = orig + eps
        up = loss()
        x[k] = orig - eps
        down = loss()
        x[k] = orig
        numeric_x[k] = (up - down) / (2.0 * eps)
    analytic = np.concatenate([g.ravel() for g in grads] + [np.ravel(dl_dx)])
    numeric_all = np.concatenate([n.ravel() for n in numerics] + [numeric_x.ravel()])
    return relative_error(analytic, numeric_all)


def _relu_margin(net: DenseNet, x: np.ndarray) -> float:
    # Distance of the closest ReLU pre-activation to its kink; finite differences are only
    # meaningful when no perturbation can cross it.
    _, cache = forward(net, x)
    margins = [np.abs(z).min() for z, act in zip(cache.pre_activations, net.activations) if act == "relu"]
    return float(min(margins)) if margins else math.inf


@dataclass
class GradcheckReport:
    n_nets: int
    max_error: float
    max_error_tanh: float
    tolerance: float
    tolerance_tanh: float
    errors: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance and self.max_error_tanh < self.tolerance_tanh


def gradcheck_suite(
    n_nets: int = 100,
    seed: int = 0,
    max_layers: int = 3,
    max_units: int = 64,
    tolerance: float = 1e-4,
    tolerance_tanh: float = 1e-6,
    eps: float = 1e-5,
) -> GradcheckReport:
    """
    Gradient check over random architectures (1..max_layers layers, 1..max_units units, mixed
    activations); every third net is tanh-only and held to the tighter tolerance.
    """
    rng = make_rng(seed, 0x7375)
    errors: List[float] = []
    worst = 0.0
    worst_tanh = 0.0
    for n in range(n_nets):
        depth = int(rng.integers(1, max_layers + 1))
        sizes = [int(rng.integers(1, max_units + 1)) for _ in range(depth + 1)]
        tanh_only = n % 3 == 0
        acts: List[str] = ["tanh"] * depth if tanh_only else [str(a) for a in rng.choice(ACTIVATIONS, size=depth)]
        net = init(sizes, acts, seed=int(rng.integers(0, 2**31)))
        for b in net.biases:
            b[...] = rng.normal(0.0, 0.1, size=b.shape)
        x = rng.normal(0.0, 1.0, size=sizes[0])
        for _ in range(50):
            if _relu_margin(net, x) > 1e-3:
                break
            x = rng.normal(0.0, 1.0, size=sizes[0])
        err = gradcheck(net, x, eps=eps, seed=n)
        errors.append(err)
        if tanh_only:
            worst_tanh = max(worst_tanh, err)
        else:
            worst = max(worst, err)
    report = GradcheckReport(
        n_nets=n_nets,
        max_error=worst,
        max_error_tanh=worst_tanh,
        tolerance=tolerance,
        tolerance_tanh=tolerance_tanh,
        errors=errors,
    )
    logger.info(f"Gradient check over {n_nets} nets: max error {worst:.3e}, tanh-only {worst_tanh:.3e}.")
    return report
