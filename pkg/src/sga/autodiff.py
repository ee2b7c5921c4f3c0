"""Minimal dense-tensor kernel with reverse-mode gradients and Adam.

Just enough operations to express and train the attention network: affine
maps, elementwise activations, gather/scatter over edge lists, a segmented
softmax, layer norm, dropout, and a finite-difference gradient checker.
Values are float32 for training; float64 mode exists for gradient checking.
No operation ever mutates its inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Raised for shape mismatches and invalid kernel usage."""


_checked_mode = False


def set_checked_mode(enabled: bool) -> None:
    """In checked mode every op asserts its output is finite."""
    global _checked_mode
    _checked_mode = enabled


class Tensor:
    """A node in the computation graph: values plus vjp links to parents."""

    __slots__ = ("data", "parents", "vjps")

    def __init__(self, data, parents: tuple = (), vjps: tuple = ()):
        self.data = np.asarray(data)
        self.parents = parents
        self.vjps = vjps
        if _checked_mode and not np.all(np.isfinite(self.data)):
            raise AutodiffError("non-finite value produced in checked mode")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named leaf tensor that accumulates gradients across backward calls."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(np.array(data))
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> "Parameter":
        return Parameter(self.name, self.data.astype(dtype))


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's grad.

    The graph is traversed once in reverse topological order; calling twice
    without zeroing doubles the gradients (accumulation semantics).
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b broadcast per row)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise AutodiffError(f"affine shape mismatch: x{x.data.shape} @ w{w.data.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise AutodiffError(f"affine bias shape {b.data.shape} != ({w.data.shape[1]},)")
        out = out + b.data
    parents: tuple = (x, w)
    vjps: tuple = (lambda g: g @ w.data.T, lambda g: x.data.T @ g)
    if b is not None:
        parents += (b,)
        vjps += (lambda g: g.sum(axis=0),)
    return Tensor(out, parents, vjps)


def matvec(x: Tensor, v: Tensor) -> Tensor:
    """(N, s) @ (s,) -> (N,)."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise AutodiffError(f"matvec shape mismatch: {x.data.shape} @ {v.data.shape}")
    return Tensor(
        x.data @ v.data,
        (x, v),
        (lambda g: np.outer(g, v.data), lambda g: x.data.T @ g),
    )


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"{op} shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b), (lambda g: g, lambda g: -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor(a.data * b.data, (a, b), (lambda g: g * b.data, lambda g: g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor(x.data * c, (x,), (lambda g: g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return Tensor(x.data + c, (x,), (lambda g: g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), (lambda g: g * mask,))


def leaky_relu(x: Tensor, negative_slope: float = 0.2) -> Tensor:
    slope = np.where(x.data >= 0, 1.0, negative_slope).astype(x.data.dtype)
    return Tensor(x.data * slope, (x,), (lambda g: g * slope,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor(s, (x,), (lambda g: g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor(t, (x,), (lambda g: g * (1.0 - t * t),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    out = np.logaddexp(np.zeros_like(x.data), x.data)
    return Tensor(out, (x,), (lambda g: g * _sigmoid(x.data),))


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activate(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise AutodiffError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# Shape and index ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return Tensor(
        x.data.reshape(shape), (x,), (lambda g: g.reshape(x.data.shape),)
    )


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise AutodiffError("concat of an empty sequence")
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
    )


def slice_vec(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1:
        raise AutodiffError("slice_vec expects a 1-d tensor")

    def vjp(g):
        out = np.zeros_like(x.data)
        out[start:stop] = g
        return out

    return Tensor(x.data[start:stop], (x,), (vjp,))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows x[idx]; repeated indices accumulate on the way back."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return out

    return Tensor(x.data[idx], (x,), (vjp,))


def set_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """A copy of `base` with rows at `idx` replaced by `rows` (idx unique)."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise AutodiffError("set_rows requires unique row indices")
    out = base.data.copy()
    out[idx] = rows.data

    def vjp_base(g):
        gb = g.copy()
        gb[idx] = 0
        return gb

    return Tensor(out, (base, rows), (vjp_base, lambda g: g[idx]))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Row-wise scaling: out[e] = x[e] * s[e]."""
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0],):
        raise AutodiffError(f"scale_rows shape mismatch: {x.data.shape} vs {s.data.shape}")
    return Tensor(
        x.data * s.data[:, None],
        (x, s),
        (lambda g: g * s.data[:, None], lambda g: (g * x.data).sum(axis=1)),
    )


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into their segment; empty segments are zero rows."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((num_segments,) + x.data.shape[1:], dtype=x.data.dtype)
    np.add.at(out, segments, x.data)
    return Tensor(out, (x,), (lambda g: g[segments],))


def segmented_softmax(logits: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax within each segment, with max-subtraction for stability.

    Every output lies in (0, 1] and each non-empty segment sums to 1.
    """
    segments = np.asarray(segments, dtype=np.int64)
    if logits.data.ndim != 1 or segments.shape != logits.data.shape:
        raise AutodiffError("segmented_softmax expects matching 1-d logits and segments")
    if logits.data.size == 0:
        return Tensor(np.zeros_like(logits.data), (logits,), (lambda g: np.zeros_like(g),))
    seg_max = np.full(num_segments, -np.inf, dtype=logits.data.dtype)
    np.maximum.at(seg_max, segments, logits.data)
    e = np.exp(logits.data - seg_max[segments])
    denom = np.zeros(num_segments, dtype=logits.data.dtype)
    np.add.at(denom, segments, e)
    alpha = e / denom[segments]

    def vjp(g):
        inner = np.zeros(num_segments, dtype=g.dtype)
        np.add.at(inner, segments, g * alpha)
        return alpha * (g - inner[segments])

    return Tensor(alpha, (logits,), (vjp,))


def sum_all(x: Tensor) -> Tensor:
    return Tensor(
        np.asarray(x.data.sum(), dtype=x.data.dtype),
        (x,),
        (lambda g: np.full_like(x.data, g),),
    )


def mean_scalars(losses: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors, as a graph node."""
    if not losses:
        raise AutodiffError("mean of no losses")
    total = losses[0]
    for term in losses[1:]:
        total = add(total, term)
    return scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# Layer norm and dropout
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to mean 0 / variance 1, then gain * x + bias."""
    if x.data.ndim != 2:
        raise AutodiffError("layer_norm expects a 2-d tensor")
    q = x.data.shape[1]
    if gain.data.shape != (q,) or bias.data.shape != (q,):
        raise AutodiffError(f"layer_norm gain/bias must have shape ({q},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp_x(g):
        dxhat = g * gain.data
        return inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )

    return Tensor(
        out,
        (x, gain, bias),
        (vjp_x, lambda g: (g * xhat).sum(axis=0), lambda g: g.sum(axis=0)),
    )


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scale by 1/(1-rate); eval mode is identity."""
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise AutodiffError("train-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return Tensor(x.data * mask, (x,), (lambda g: g * mask,))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """Bias-corrected Adam update; zeroes every grad afterwards."""
    params = list(params)
    if not params:
        return
    state.step += 1
    t = state.step
    for p in params:
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        p.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    forward: Callable[[], Tensor],
    params: Sequence[Parameter],
    probes: int = 50,
    eps: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes random parameter entries. Run with float64 parameters and dropout
    disabled; finite differences are unreliable in float32.
    """
    params = [p for p in params if p.data.size > 0]
    if not params:
        raise AutodiffError("grad_check needs at least one parameter")
    loss = forward()
    if not np.isfinite(loss.data):
        raise AutodiffError("grad_check: non-finite loss")
    for p in params:
        p.zero_grad()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        p = params[rng.integers(len(params))]
        idx = int(rng.integers(p.data.size))
        original = p.data.flat[idx]
        p.data.flat[idx] = original + eps
        up = float(forward().data)
        p.data.flat[idx] = original - eps
        down = float(forward().data)
        p.data.flat[idx] = original
        if not (np.isfinite(up) and np.isfinite(down)):
            raise AutodiffError("grad_check: non-finite loss at a probe point")
        numeric = (up - down) / (2.0 * eps)
        rel = abs(float(analytic[p.name].flat[idx]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SGAW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: Sequence[Parameter], config_text: str) -> None:
    """Binary parameter dump plus a sidecar text file with the full config."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    path.with_suffix(path.suffix + ".cfg").write_text(config_text, encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    """Returns (name -> float32 array, sidecar config text)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise AutodiffError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise AutodiffError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = (
            np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        )
        offset += 4 * size
    cfg_path = path.with_suffix(path.suffix + ".cfg")
    config_text = cfg_path.read_text(encoding="utf-8") if cfg_path.exists() else ""
    return arrays, config_text
