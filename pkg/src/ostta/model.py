"""Feed-forward encoder plus bias-free linear head, with hand-written
forward and backward passes.

The head has num_known + 1 rows; the last row is the unknown class. Logits
are computed from the raw penultimate feature h, while the normalized
embedding z = h / ||h|| feeds the embedding-space machinery.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numeric import l2_normalize

_CKPT_MAGIC = "ostta-ckpt-v1"


@dataclass
class ModelParams:
    weights: list[np.ndarray]      # per encoder layer, shape (out, in)
    biases: list[np.ndarray]       # per encoder layer, shape (out,)
    activations: list[str]         # "tanh" or "linear", per encoder layer
    head: np.ndarray               # (num_known + 1, embed_dim), no bias

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.head.shape[1]

    @property
    def num_known(self) -> int:
        return self.head.shape[0] - 1

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.head.copy(),
        )

    def param_bytes(self) -> bytes:
        chunks = [w.tobytes() for w in self.weights]
        chunks += [b.tobytes() for b in self.biases]
        chunks.append(self.head.tobytes())
        return b"".join(chunks)


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    h: np.ndarray       # penultimate feature
    z: np.ndarray       # unit-norm embedding
    logits: np.ndarray


@dataclass
class ModelGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: np.ndarray

    def scale(self, s: float) -> "ModelGrads":
        return ModelGrads(
            [w * s for w in self.weights],
            [b * s for b in self.biases],
            self.head * s,
        )

    def add_(self, other: "ModelGrads") -> None:
        for i in range(len(self.weights)):
            self.weights[i] += other.weights[i]
            self.biases[i] += other.biases[i]
        self.head += other.head

    @staticmethod
    def zeros_like(params: ModelParams) -> "ModelGrads":
        return ModelGrads(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
            np.zeros_like(params.head),
        )


def init_model(
    input_dim: int,
    embed_dim: int,
    num_known: int,
    seed: int,
    hidden: tuple[int, ...] = (64, 64),
) -> ModelParams:
    """Uniform fan-in-scaled init for weights, zero biases, deterministic
    given seed. Hidden layers use tanh; the embedding layer is linear."""
    if min(input_dim, embed_dim, num_known) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, embed_dim]
    weights, biases, acts = [], [], []
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(sizes[i + 1], fan_in)))
        biases.append(np.zeros(sizes[i + 1]))
        acts.append("tanh" if i < len(sizes) - 2 else "linear")
    limit = 1.0 / np.sqrt(embed_dim)
    head = rng.uniform(-limit, limit, size=(num_known + 1, embed_dim))
    return ModelParams(weights, biases, acts, head)


def _apply_act(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(pre)
    if act == "linear":
        return pre
    raise ValueError(f"unknown activation {act!r}")


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != params.input_dim:
        raise ValueError(f"input dim {x.shape[0]} != model dim {params.input_dim}")
    pre_acts, acts = [], []
    a = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        pre = w @ a + b
        a = _apply_act(pre, act)
        pre_acts.append(pre)
        acts.append(a)
    h = a
    z = l2_normalize(h)
    logits = params.head @ h
    return ForwardTrace(x, pre_acts, acts, h, z, logits)


def backward(params: ModelParams, trace: ForwardTrace, dlogits: np.ndarray) -> ModelGrads:
    """Gradients of a scalar loss w.r.t. all parameters, given dL/dlogits."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != trace.logits.shape:
        raise ValueError("dlogits shape mismatch")
    dhead = np.outer(dlogits, trace.h)
    da = params.head.T @ dlogits
    n = len(params.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if params.activations[i] == "tanh":
            dpre = da * (1.0 - trace.activations[i] ** 2)
        else:
            dpre = da
        prev = trace.activations[i - 1] if i > 0 else trace.x
        dws[i] = np.outer(dpre, prev)
        dbs[i] = dpre
        da = params.weights[i].T @ dpre
    return ModelGrads(dws, dbs, dhead)


def head_logits(params: ModelParams, z: np.ndarray) -> np.ndarray:
    """Logits of the linear head applied directly to an embedding."""
    return params.head @ np.asarray(z, dtype=np.float64)


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Header line (JSON) + raw little-endian float64 dumps, row-major,
    in layer order then head. Round-trips bit-exactly."""
    header = {
        "magic": _CKPT_MAGIC,
        "layer_shapes": [list(w.shape) for w in params.weights],
        "activations": params.activations,
        "head_shape": list(params.head.shape),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.head, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != _CKPT_MAGIC:
            raise ValueError(f"not a model checkpoint: {path}")
        raw = fh.read()
    offset = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    weights, biases = [], []
    for shape in header["layer_shapes"]:
        weights.append(take(tuple(shape)))
        biases.append(take((shape[0],)))
    head = take(tuple(header["head_shape"]))
    return ModelParams(weights, biases, list(header["activations"]), head)
