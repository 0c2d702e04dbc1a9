"""Small feed-forward network engine in numpy (float64).

Parameters live in one flat vector. Layer ``l`` contributes its weight matrix of
shape ``(out, in)`` in row-major order followed by its bias of length ``out``.
Hidden layers use ReLU, the output layer is linear (logits).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CKPT_FORMAT = "roskd-checkpoint"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple[int, ...]
    init_seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        """(out, in) for each dense layer."""
        w = self.layer_widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "init_seed": self.init_seed,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["layer_widths"]), int(d.get("init_seed", 0)), d.get("activation", "relu"))


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != self.spec.n_params:
            raise ValueError(
                f"expected {self.spec.n_params} parameters for {self.spec.layer_widths}, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def layers(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (W, b) views, W shaped (out, in)."""
        pos = 0
        for out, inp in self.spec.shapes:
            W = self.values[pos:pos + out * inp].reshape(out, inp)
            pos += out * inp
            b = self.values[pos:pos + out]
            pos += out
            yield W, b

    def weight_mask(self) -> np.ndarray:
        """Boolean mask that is True on weight entries, False on biases."""
        mask = np.zeros(self.spec.n_params, dtype=bool)
        pos = 0
        for out, inp in self.spec.shapes:
            mask[pos:pos + out * inp] = True
            pos += out * inp + out
        return mask

    def _check(self, other: "ParamVector"):
        if other.spec.layer_widths != self.spec.layer_widths:
            raise ValueError("parameter vectors belong to different architectures")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector(self.values + other.values, self.spec)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector(self.values - other.values, self.spec)

    def __mul__(self, scalar: float) -> "ParamVector":
        return ParamVector(self.values * float(scalar), self.spec)

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return ParamVector(-self.values, self.spec)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.spec)

    def equals(self, other: "ParamVector") -> bool:
        """Bit-level equality of architecture and weights."""
        return (self.spec.layer_widths == other.spec.layer_widths
                and np.array_equal(self.values, other.values))


def scale(factor: float, p: ParamVector) -> ParamVector:
    return p * factor


def init_model(spec: ModelSpec) -> ParamVector:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases, keyed on ``spec.init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    chunks = []
    for out, inp in spec.shapes:
        chunks.append(rng.standard_normal(out * inp) / np.sqrt(inp))
        chunks.append(np.zeros(out))
    return ParamVector(np.concatenate(chunks), spec)


def _as_batch(params: ParamVector, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.n_inputs:
        raise ValueError(f"input of shape {x.shape} does not match input width {params.spec.n_inputs}")
    return x


def _forward_cached(params: ParamVector, x: np.ndarray):
    acts = [x]
    pre = []
    layers = list(params.layers())
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        pre.append(z)
        h = z if i == len(layers) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre, layers


def forward(params: ParamVector, x) -> np.ndarray:
    """Logits of shape (L, C); no softmax."""
    x = _as_batch(params, x)
    acts, _, _ = _forward_cached(params, x)
    return acts[-1]


def backprop(params: ParamVector, x, dlogits) -> tuple[ParamVector, np.ndarray]:
    """Gradients of a scalar loss w.r.t. parameters and inputs, given dloss/dlogits."""
    x = _as_batch(params, x)
    dz = np.asarray(dlogits, dtype=np.float64)
    if dz.ndim == 1:
        dz = dz[None, :]
    if dz.shape != (x.shape[0], params.spec.n_classes):
        raise ValueError(f"logit gradient shape {dz.shape} != {(x.shape[0], params.spec.n_classes)}")
    acts, pre, layers = _forward_cached(params, x)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            dz = dz * (pre[i] > 0)
        grads.append((dz.sum(axis=0), (dz.T @ acts[i]).ravel()))
        dz = dz @ W
    flat = []
    for db, dW in reversed(grads):
        flat.append(dW)
        flat.append(db)
    return ParamVector(np.concatenate(flat), params.spec), dz


def backward(params: ParamVector, x, dlogits) -> ParamVector:
    return backprop(params, x, dlogits)[0]


def input_gradient(params: ParamVector, x, dlogits) -> np.ndarray:
    return backprop(params, x, dlogits)[1]


@dataclass
class OptimState:
    """SGD with momentum, L2 weight decay, and a step learning-rate schedule."""
    momentum: float = 0.9
    weight_decay: float = 2e-4
    base_lr: float = 0.1
    decay_epochs: Sequence[int] = (25, 40)
    decay_factor: float = 10.0
    momentum_buffers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)

    def fresh(self) -> "OptimState":
        """Same hyperparameters, empty buffers."""
        return OptimState(self.momentum, self.weight_decay, self.base_lr, self.decay_epochs, self.decay_factor)

    def to_dict(self) -> dict:
        return {"momentum": self.momentum, "weight_decay": self.weight_decay, "base_lr": self.base_lr,
                "decay_epochs": list(self.decay_epochs), "decay_factor": self.decay_factor}


def lr_at_epoch(opt: OptimState, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for e in opt.decay_epochs if epoch >= e)
    return opt.base_lr / opt.decay_factor ** passed


def sgd_step(params: ParamVector, grads: ParamVector, opt: OptimState, epoch: int) -> ParamVector:
    """One momentum step; mutates ``opt.momentum_buffers`` and returns new params."""
    params._check(grads)
    if opt.momentum_buffers is None:
        opt.momentum_buffers = np.zeros_like(params.values)
    elif opt.momentum_buffers.shape != params.values.shape:
        raise ValueError("optimizer state belongs to a different architecture")
    d = grads.values + opt.weight_decay * params.values
    opt.momentum_buffers = opt.momentum * opt.momentum_buffers + d
    return ParamVector(params.values - lr_at_epoch(opt, epoch) * opt.momentum_buffers, params.spec)


def save_checkpoint(path, params: ParamVector, run_id: str = "") -> Path:
    # json floats are written with repr, which round-trips float64 exactly
    path = Path(path)
    payload = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "run_id": run_id,
        "spec": params.spec.to_dict(),
        "values": params.values.tolist(),
    }
    path.write_text(json.dumps(payload))
    return path


def load_checkpoint(path) -> tuple[ParamVector, str]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CKPT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if payload.get("version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    spec = ModelSpec.from_dict(payload["spec"])
    return ParamVector(np.array(payload["values"], dtype=np.float64), spec), payload.get("run_id", "")
