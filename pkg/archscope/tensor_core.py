"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Tensor Core
=======================
Minimal dense numeric kernel for the predictor: a rectifier MLP with
hand-written backpropagation, MSE loss, AdamW and a cosine-annealed
learning rate. Everything is float64; networks are tiny and
reproducibility matters more than speed.

Weight layout is (fan_in, fan_out) and layers compute h @ W + b, so a
batch of row vectors flows through without transposes.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, NumericError, RangeError, ShapeError

# Dense matrices are float64 numpy arrays in row-major order
DenseMatrix = np.ndarray


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


# ============================================================================
# MLP PARAMETERS
# ============================================================================

@dataclass(frozen=True)
class MlpParams:
    """
    Layers of (weight, bias). Hidden layers use a rectifier, the output
    layer is the identity and produces a single value.
    """
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(_as_matrix(w, f"weight[{i}]") for i, w in enumerate(self.weights))
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ShapeError("MLP needs one bias per weight and at least one layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if b.shape[0] != w.shape[1]:
                raise ShapeError(f"layer {i}: bias length {b.shape[0]} != fan_out {w.shape[1]}")
            if not np.all(np.isfinite(b)):
                raise NumericError(f"bias[{i}] contains non-finite entries", index=i)
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: fan_in {w.shape[0]} != previous fan_out {weights[i - 1].shape[1]}")
        if weights[-1].shape[1] != 1:
            raise ShapeError(f"output layer must have one unit, got {weights[-1].shape[1]}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def flat(self) -> List[np.ndarray]:
        """[W0, b0, W1, b1, ...] - the order the optimizer sees."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    @classmethod
    def from_flat(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) % 2:
            raise ShapeError("flat parameter list must alternate weight/bias")
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def decay_mask(self, decay_biases: bool = False) -> List[bool]:
        return [flag for _ in self.weights for flag in (True, decay_biases)]


def init_mlp(input_dim: int, hidden_width: int, depth: int, rng: np.random.Generator) -> MlpParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    if input_dim < 1 or hidden_width < 1 or depth < 1:
        raise ArgumentError(f"bad MLP shape: input={input_dim} width={hidden_width} depth={depth}")
    dims = [input_dim] + [hidden_width] * (depth - 1) + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


@dataclass(frozen=True)
class MlpGrads:
    """Loss gradients for every parameter plus the network input."""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    inputs: np.ndarray

    def flat(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


# ============================================================================
# FORWARD / BACKWARD
# ============================================================================

def _check_batch(params: MlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"input shape {X.shape} does not match network input dim {params.input_dim}")
    return X


def _forward_cache(params: MlpParams, X: np.ndarray):
    activations = [X]
    pre_activations = []
    h = X
    last = params.depth - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)
    return activations, pre_activations


def mlp_forward_batch(params: MlpParams, X) -> np.ndarray:
    X = _check_batch(params, X)
    activations, _ = _forward_cache(params, X)
    return activations[-1][:, 0].copy()


def mlp_forward(params: MlpParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"single input must be 1-D, got shape {x.shape}")
    return float(mlp_forward_batch(params, x[None, :])[0])


def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.size == 0:
        raise ArgumentError("mse_loss needs at least one value")
    if preds.shape != targets.shape:
        raise ShapeError(f"preds {preds.shape} and targets {targets.shape} differ")
    return float(np.mean((preds - targets) ** 2))


def mlp_backward_batch(params: MlpParams, X, y) -> Tuple[float, MlpGrads]:
    """MSE over the batch and its gradients (averaged over rows)."""
    X = _check_batch(params, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    n = X.shape[0]

    activations, pre_activations = _forward_cache(params, X)
    preds = activations[-1][:, 0]
    loss = float(np.mean((preds - y) ** 2))

    delta = (2.0 / n) * (preds - y)[:, None]
    grad_w: List[np.ndarray] = [None] * params.depth
    grad_b: List[np.ndarray] = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * (pre_activations[i - 1] > 0)

    return loss, MlpGrads(tuple(grad_w), tuple(grad_b), delta)


def mlp_backward(params: MlpParams, x, target: float) -> MlpGrads:
    """Single-sample gradient of (f(x) - target)^2, including d/dx."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"single input must be 1-D, got shape {x.shape}")
    _, grads = mlp_backward_batch(params, x[None, :], [target])
    return MlpGrads(grads.weights, grads.biases, grads.inputs[0])


# ============================================================================
# ADAMW
# ============================================================================

@dataclass
class OptimizerState:
    step: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8, weight_decay: float = 0.0) -> "OptimizerState":
        return cls(
            step=0,
            first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        )


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], opt: OptimizerState,
               lr: float, decay_mask: Optional[Sequence[bool]] = None
               ) -> Tuple[List[np.ndarray], OptimizerState]:
    """
    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)

    Returns fresh arrays and a fresh state; the inputs are left untouched.
    """
    if lr < 0:
        raise ArgumentError(f"learning rate must be >= 0, got {lr}")
    if not (len(params) == len(grads) == len(opt.first_moment) == len(opt.second_moment)):
        raise ShapeError("params, grads and optimizer moments must have equal length")
    if decay_mask is None:
        decay_mask = [True] * len(params)

    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g) or np.shape(p) != opt.first_moment[i].shape:
            raise ShapeError(f"parameter {i}: shape {np.shape(p)} vs grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(np.asarray(g)).reshape(-1))[0])
            raise NumericError(f"non-finite gradient in parameter {i} at element {bad}", index=i)

    step = opt.step + 1
    bias1 = 1.0 - opt.beta1 ** step
    bias2 = 1.0 - opt.beta2 ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v, decay in zip(params, grads, opt.first_moment, opt.second_moment, decay_mask):
        g = np.asarray(g, dtype=np.float64)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + opt.eps)
        if decay and opt.weight_decay:
            update = update + opt.weight_decay * p
        new_params.append(p - lr * update)
        new_m.append(m)
        new_v.append(v)

    state = OptimizerState(step, new_m, new_v, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
    return new_params, state


# ============================================================================
# LEARNING RATE SCHEDULE
# ============================================================================

@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    min_lr: float = 0.0
    total_epochs: int = 1

    def __post_init__(self):
        if not 0 <= self.min_lr <= self.base_lr:
            raise RangeError(f"need 0 <= min_lr <= base_lr, got {self.min_lr}, {self.base_lr}")
        if self.total_epochs < 1:
            raise RangeError(f"total_epochs must be >= 1, got {self.total_epochs}")


def cosine_lr(schedule: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch <= schedule.total_epochs:
        raise RangeError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    cos = math.cos(math.pi * epoch / schedule.total_epochs)
    return schedule.min_lr + (schedule.base_lr - schedule.min_lr) * (1.0 + cos) / 2.0
