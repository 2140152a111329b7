"""Dense float tensors with reverse-mode autodiff, optimizers, and checkpoints.

Everything runs in float64 by default (float32 storage is opt-in per store).
Ops are plain functions; gradients are recorded on an explicit :class:`Tape`
used as a context manager around the forward pass.  Outside a tape the same
functions run without any recording overhead, which is how sampling works.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonScalarLoss(ValueError):
    """backward() was handed a non-scalar tensor."""


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf."""


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of ops (and what each needs for its gradient)."""

    def __init__(self):
        self._nodes: list[tuple[int, list[tuple["Tensor", object]]]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: "Tensor", pairs) -> None:
        self._nodes.append((id(out), pairs))


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense array plus a requires_grad flag.  Treated as immutable."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


def _make(out_data: np.ndarray, op: str, pairs) -> Tensor:
    """Wrap an op result; record vjps on the active tape if grads are needed."""
    _check_finite(out_data, op)
    tracked = [(t, vjp) for t, vjp in pairs if t.requires_grad]
    out = Tensor(out_data, requires_grad=bool(tracked), dtype=out_data.dtype)
    tape = _active_tape()
    if tape is not None and tracked:
        tape._record(out, tracked)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, "add", [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, "sub", [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, "mul", [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, "div", [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _make(a.data * s, "scale", [(a, lambda g: g * s)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims broadcast as in numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, "matmul", [
        (a, lambda g: _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)),
    ])


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    pairs = []
    offset = 0
    for t in tensors:
        start, width = offset, t.data.shape[axis]
        offset += width

        def vjp(g, start=start, width=width):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + width)
            return g[tuple(index)]

        pairs.append((t, vjp))
    return _make(out, "concat", pairs)


def slice_(a: Tensor, index) -> Tensor:
    """Basic slicing with a tuple of `slice` objects (no int collapsing)."""
    a = as_tensor(a)
    if not isinstance(index, tuple):
        index = (index,)
    if not all(isinstance(s, slice) for s in index):
        raise ShapeError("slice_ takes a tuple of slice objects")
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return _make(np.ascontiguousarray(out), "slice", [(a, vjp)])


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    out = np.transpose(a.data, axes)
    return _make(out, "transpose", [(a, lambda g: np.transpose(g, inverse))])


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, "reshape", [(a, lambda g: g.reshape(a.data.shape))])


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        g_ = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_, a.data.shape).copy()

    return _make(np.asarray(out), "sum", [(a, vjp)])


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (g - dot) * out

    return _make(out, "softmax", [(a, vjp)])


def silu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    return _make(out, "silu", [(a, lambda g: g * (sig * (1.0 + a.data * (1.0 - sig))))])


LAYER_STATS_EPS = 1e-5


def row_std(a: Tensor, eps: float = LAYER_STATS_EPS) -> Tensor:
    """Population std over the last axis, eps added under the square root."""
    a = as_tensor(a)
    n = a.data.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    sigma = np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)

    def vjp(g):
        return g * centered / (n * sigma)

    return _make(sigma, "row_std", [(a, vjp)])


def layer_stats(a: Tensor, eps: float = LAYER_STATS_EPS) -> tuple[Tensor, Tensor]:
    """(mean, std) over the last axis, both keeping the reduced dim."""
    return mean_(a, axis=-1, keepdims=True), row_std(a, eps=eps)


def cross_entropy(logits: Tensor, targets: Tensor, mask: Tensor | None = None) -> Tensor:
    """Mean of -log softmax(logits)[target] over unmasked positions.

    `targets` are one-hot over the last axis; `mask` covers the leading axes
    (1 = include).  Targets and mask never receive gradients.
    """
    logits = as_tensor(logits)
    targets = as_tensor(targets)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.requires_grad or (mask is not None and as_tensor(mask).requires_grad):
        raise ShapeError("cross_entropy targets/mask must not require grad")
    mask_arr = np.ones(logits.shape[:-1]) if mask is None else np.asarray(as_tensor(mask).data, dtype=np.float64)
    if mask_arr.shape != logits.shape[:-1]:
        raise ShapeError(f"mask {mask_arr.shape} vs positions {logits.shape[:-1]}")
    msum = mask_arr.sum()
    if msum <= 0:
        raise ValueError("cross_entropy: all positions masked")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    per_pos = -(targets.data * logp).sum(axis=-1)
    loss = (per_pos * mask_arr).sum() / msum

    def vjp(g):
        p = np.exp(logp)
        return g * mask_arr[..., None] * (p - targets.data) / msum

    return _make(np.asarray(loss), "cross_entropy", [(logits, vjp)])


# ---------------------------------------------------------------------------
# backward pass


class Gradients:
    """Per-tensor gradient accumulators from one backward pass."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def of(self, t: Tensor) -> np.ndarray:
        g = self._table.get(id(t))
        return g if g is not None else np.zeros_like(t.data)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._table


def backward(loss: Tensor, tape: Tape) -> Gradients:
    """Reverse sweep over the tape; returns gradients for all tracked tensors."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    table: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out_id, pairs in reversed(tape._nodes):
        g = table.get(out_id)
        if g is None:
            continue
        for tensor, vjp in pairs:
            contrib = vjp(g)
            prev = table.get(id(tensor))
            table[id(tensor)] = contrib if prev is None else prev + contrib
    return Gradients(table)


def grad_check(f, params, eps: float = 1e-5, rel_floor: float = 1e-6,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    `f` takes no arguments, reads the params, and returns a scalar Tensor.
    """
    with Tape() as tape:
        loss = f()
        grads = backward(loss, tape)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            idxs = gen.choice(flat.size, size=max_entries, replace=False)
        ad = grads.of(p).reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lo_hi = f().item()
            flat[i] = orig - eps
            lo_lo = f().item()
            flat[i] = orig
            fd = (lo_hi - lo_lo) / (2.0 * eps)
            rel = abs(ad[i] - fd) / max(abs(ad[i]), abs(fd), rel_floor)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParamStore:
    """Named parameter tensors plus optimizer state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True, dtype=self.dtype)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())


def opt_step(store: ParamStore, grads: Gradients, lr: float, kind: str = "adamw",
             betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
             weight_decay: float = 0.01) -> ParamStore:
    """One in-place optimizer update over every parameter in the store."""
    if kind == "sgd":
        for name, p in store.items():
            p.data -= lr * grads.of(p)
        return store
    if kind != "adamw":
        raise ValueError(f"unknown optimizer kind: {kind}")
    b1, b2 = betas
    store.step += 1
    t = store.step
    for name, p in store.items():
        g = grads.of(p)
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store._m[name], store._v[name] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)
    return store


CHECKPOINT_FORMAT = "moldiff-checkpoint-v1"
_DTYPE_TAGS = {np.dtype(np.float64): "<f8", np.dtype(np.float32): "<f4"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_checkpoint(store: ParamStore, path, meta: dict | None = None,
                    include_optimizer: bool = True) -> None:
    """Write `manifest.json` + `params.bin` (little-endian floats) into a dir."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tag = _DTYPE_TAGS[store.dtype]
    entries = []
    chunks = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=store.dtype).astype(tag).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    for name, p in store.items():
        push(name, p.data)
    if include_optimizer:
        for name in store._m:
            push(f"optim/m/{name}", store._m[name])
            push(f"optim/v/{name}", store._v[name])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "payload": "params.bin",
        "optimizer_step": store.step,
        "tensors": entries,
    }
    (path / "params.bin").write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Inverse of save_checkpoint; restores params and optimizer state."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint manifest: {path}")
    raw = (path / "params.bin").read_bytes()
    arrays: dict[str, np.ndarray] = {}
    store_dtype = np.float64
    for entry in manifest["tensors"]:
        dt = _TAG_DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype=entry["dtype"], count=count, offset=start)
        arrays[entry["name"]] = arr.astype(dt).reshape(entry["shape"])
        if not entry["name"].startswith("optim/"):
            store_dtype = dt
    store = ParamStore(dtype=store_dtype)
    for name, arr in arrays.items():
        if name.startswith("optim/"):
            continue
        store.add(name, arr)
    for name, arr in arrays.items():
        if name.startswith("optim/m/"):
            store._m[name[len("optim/m/"):]] = arr.astype(store_dtype).copy()
        elif name.startswith("optim/v/"):
            store._v[name[len("optim/v/"):]] = arr.astype(store_dtype).copy()
    store.step = int(manifest.get("optimizer_step", 0))
    return store, manifest.get("meta", {})
