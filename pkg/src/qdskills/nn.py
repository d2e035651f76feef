"""Fixed-topology multilayer perceptrons over flat parameter vectors.

Every network is described by a :class:`NetSpec` and a flat ``float64``
parameter vector (a genotype). Parameters may also be stacked into a
``(P, n_params)`` matrix, in which case ``P`` independent networks are
evaluated in one batched call; this is how populations are rolled out.

Layer ``i`` stores a weight matrix of shape ``(out, in)`` followed by a bias of
shape ``(out,)``, so ``y = W @ x + b``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

ACTIVATIONS = ("tanh", "relu")
HEADS = ("linear", "tanh-squashed-gaussian", "categorical-logits")

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


class DimensionError(ValueError):
    """Input, parameter or gradient shapes do not match a NetSpec."""


class NonFiniteGradientError(ValueError):
    pass


@dataclass(frozen=True)
class NetSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...] = ()
    output_head: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("a network needs at least two layers")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive: {sizes}")
        acts = tuple(self.activations)
        if not acts:
            acts = ("tanh",) * (len(sizes) - 2)
        object.__setattr__(self, "activations", acts)
        if len(acts) != len(sizes) - 2:
            raise ValueError("need exactly one activation per hidden layer")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activations {bad}")
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        if self.output_head == "tanh-squashed-gaussian" and sizes[-1] % 2:
            raise ValueError("gaussian head needs an even output width (mean, log-std)")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def n_params(self) -> int:
        return sum(o * i + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @cached_property
    def digest(self) -> bytes:
        """8-byte identifier used to tag serialized genotypes."""
        text = f"{self.layer_sizes}|{self.activations}|{self.output_head}"
        return hashlib.sha256(text.encode()).digest()[:8]


def mlp(sizes, activation="tanh", head="linear") -> NetSpec:
    sizes = tuple(sizes)
    return NetSpec(sizes, (activation,) * (len(sizes) - 2), head)


def init_params(spec: NetSpec, rng: np.random.Generator, bias_scale: float = 0.0,
                last_layer_scale: float = 1.0) -> np.ndarray:
    """Glorot-uniform weights; biases uniform in +-bias_scale."""
    chunks = []
    n_layers = len(spec.layer_sizes) - 1
    for k, (n_in, n_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        if k == n_layers - 1:
            limit *= last_layer_scale
        chunks.append(rng.uniform(-limit, limit, size=n_out * n_in))
        if bias_scale > 0:
            chunks.append(rng.uniform(-bias_scale, bias_scale, size=n_out))
        else:
            chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def unflatten(spec: NetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split parameters into per-layer ``(W, b)`` views.

    Works on a single vector (``W`` of shape ``(out, in)``) or a stacked
    matrix (``W`` of shape ``(P, out, in)``).
    """
    params = np.asarray(params)
    if params.shape[-1] != spec.n_params:
        raise DimensionError(f"expected {spec.n_params} parameters, got {params.shape[-1]}")
    lead = params.shape[:-1]
    layers = []
    off = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[..., off:off + n_out * n_in].reshape(lead + (n_out, n_in))
        off += n_out * n_in
        b = params[..., off:off + n_out]
        off += n_out
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    parts = []
    for w, b in layers:
        lead = w.shape[:-2]
        parts.append(w.reshape(lead + (-1,)))
        parts.append(b.reshape(lead + (-1,)))
    return np.concatenate(parts, axis=-1)


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(name, a):
    # derivative expressed through the activation output
    if name == "tanh":
        return 1.0 - a * a
    return a > 0.0


def _as_batched(spec: NetSpec, params, x):
    """Return (params (P,n), x (P,B,in), output shape)."""
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if params.shape[-1] != spec.n_params:
        raise DimensionError(f"expected {spec.n_params} parameters, got {params.shape[-1]}")
    if x.ndim == 0 or x.shape[-1] != spec.n_inputs:
        raise DimensionError(f"expected input width {spec.n_inputs}, got shape {x.shape}")
    if params.ndim == 1:
        if x.ndim > 2:
            raise DimensionError("a single network takes a vector or a (B, in) batch")
        return params[None], x.reshape(1, -1, spec.n_inputs), x.shape[:-1]
    if params.ndim != 2:
        raise DimensionError("stacked parameters must be (P, n_params)")
    if x.ndim not in (2, 3) or x.shape[0] != params.shape[0]:
        raise DimensionError(
            f"stacked parameters need inputs shaped (P, in) or (P, B, in); got {x.shape}")
    if x.ndim == 2:
        return params, x[:, None, :], x.shape[:-1]
    return params, x, x.shape[:-1]


def _forward3(spec: NetSpec, params2, x3):
    acts = [x3]
    a = x3
    layers = unflatten(spec, params2)
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        z = np.matmul(a, np.swapaxes(w, -1, -2)) + b[:, None, :]
        a = z if k == last else _activate(spec.activations[k], z)
        acts.append(a)
    return acts


def forward(spec: NetSpec, params, x) -> np.ndarray:
    """Evaluate the network; returns the raw (pre-head) output."""
    p2, x3, lead = _as_batched(spec, params, x)
    out = _forward3(spec, p2, x3)[-1]
    return out.reshape(lead + (spec.n_outputs,))


def forward_with_cache(spec: NetSpec, params, x):
    p2, x3, lead = _as_batched(spec, params, x)
    acts = _forward3(spec, p2, x3)
    return acts[-1].reshape(lead + (spec.n_outputs,)), (p2, acts, lead, np.ndim(params))


def backward(spec: NetSpec, params, x, upstream, cache=None, param_grad: bool = True):
    """Reverse-mode gradients of ``sum(upstream * forward(params, x))``.

    Returns ``(param_grad, input_grad)``. Parameter gradients are summed over
    the batch axis; for stacked parameters one gradient row per network.
    With ``param_grad=False`` only the input gradient is computed and the
    first element is ``None``.
    """
    if cache is None:
        _, cache = forward_with_cache(spec, params, x)
    p2, acts, lead, pdim = cache
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != lead + (spec.n_outputs,):
        raise DimensionError(f"upstream gradient shape {up.shape} != {lead + (spec.n_outputs,)}")
    delta = up.reshape(acts[-1].shape)
    layers = unflatten(spec, p2)
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        a_prev = acts[k]
        if param_grad:
            grads.append((np.matmul(np.swapaxes(delta, -1, -2), a_prev), delta.sum(axis=1)))
        delta = np.matmul(delta, w)
        if k > 0:
            delta = delta * _activation_grad(spec.activations[k - 1], a_prev)
    if not param_grad:
        return None, delta.reshape(lead + (spec.n_inputs,))
    grads.reverse()
    pgrad = flatten(grads)
    if pdim == 1:
        pgrad = pgrad[0]
    return pgrad, delta.reshape(lead + (spec.n_inputs,))


def gaussian_head(out: np.ndarray):
    """Split a gaussian head output into (mean, clamped log-std)."""
    half = out.shape[-1] // 2
    return out[..., :half], np.clip(out[..., half:], LOG_STD_MIN, LOG_STD_MAX)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: np.ndarray, lr: float = 3e-4, **kw) -> AdamState:
    return AdamState(np.zeros_like(params, dtype=np.float64),
                     np.zeros_like(params, dtype=np.float64), 0, lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam descent step. Returns ``(new_state, new_params)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(params):
        raise DimensionError(f"gradient shape {grad.shape} != parameter shape {np.shape(params)}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad.ravel()))
        raise NonFiniteGradientError(
            f"non-finite gradient at {bad.size} coordinates (first index {bad[0]})")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_state, new_params


def polyak(target: np.ndarray, source: np.ndarray, tau: float) -> np.ndarray:
    return (1.0 - tau) * target + tau * source


def genotype_to_bytes(spec: NetSpec, params: np.ndarray) -> bytes:
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise DimensionError("genotype length does not match its NetSpec")
    return spec.digest + struct.pack("<I", spec.n_params) + params.astype("<f4").tobytes()


def genotype_from_bytes(spec: NetSpec, data: bytes) -> np.ndarray:
    if data[:8] != spec.digest:
        raise ValueError("genotype was serialized for a different network spec")
    (n,) = struct.unpack("<I", data[8:12])
    if n != spec.n_params or len(data) != 12 + 4 * n:
        raise DimensionError("truncated or mis-sized genotype record")
    return np.frombuffer(data[12:], dtype="<f4").astype(np.float64)
