"""Minimal reverse-mode tensor library and the learnable sub-networks.

Only the operations the codec needs are implemented. Values are 32-bit
by default; gradient-check tooling may switch the working dtype to
float64 through `precision`.
"""

from __future__ import annotations

import contextlib
import json
import struct

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True
DEBUG_NANS = False


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the working float dtype ("float32"/"float64")."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Array node in a dynamically built reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False, _parents=(), _bw=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        if not _GRAD_ENABLED:
            self.requires_grad = False
        self._parents = _parents if self.requires_grad else ()
        self._bw = _bw if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar.

        Graphs are single-use: the sweep frees each node's closure,
        edges, and intermediate grad as it retires, so activation memory
        is released during the pass and closure cycles never reach the
        GC. Build a fresh graph for every backward call.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not np.isfinite(self.data).all():
            raise FloatingPointError("loss is not finite")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)
                if DEBUG_NANS:
                    for p in node._parents:
                        if p.grad is not None and not np.isfinite(p.grad).all():
                            raise FloatingPointError("non-finite gradient")
            if node._parents:
                node._bw = None
                node._parents = ()
                node.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, _parents=(self, other), _bw=None)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accum(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(g, other.data.shape))
            out._bw = bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accum(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(g * self.data, other.data.shape))
            out._bw = bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return self * other.reciprocal()

    def reciprocal(self):
        out = Tensor(1.0 / self.data, _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(_unbroadcast(-g * out.data * out.data, self.data.shape))
            out._bw = bw
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], _parents=(self,))
        if out.requires_grad:
            def bw(g):
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accum(full)
            out._bw = bw
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g.reshape(self.data.shape))
            out._bw = bw
        return out

    def expand(self, shape):
        out = Tensor(np.broadcast_to(self.data, shape).copy(), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(_unbroadcast(g, self.data.shape))
            out._bw = bw
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def amax(self, axis):
        """Max along one axis; tied maxima share the gradient equally."""
        out_data = self.data.max(axis=axis)
        out = Tensor(out_data, _parents=(self,))
        if out.requires_grad:
            def bw(g):
                expanded = np.expand_dims(out_data, axis)
                mask = (self.data == expanded).astype(self.data.dtype)
                mask /= mask.sum(axis=axis, keepdims=True)
                self._accum(mask * np.expand_dims(g, axis))
            out._bw = bw
        return out

    # -- elementwise ----------------------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g * (self.data > 0))
            out._bw = bw
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g * out.data)
            out._bw = bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g / self.data)
            out._bw = bw
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), _parents=(self,))
        if out.requires_grad:
            sign = np.sign(self.data)
            def bw(g):
                self._accum(g * sign)
            out._bw = bw
        return out

    def softplus(self):
        out = Tensor(np.logaddexp(0.0, self.data), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g / (1.0 + np.exp(-self.data)))
            out._bw = bw
        return out

    def clip_min(self, lo: float):
        out = Tensor(np.maximum(self.data, lo), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                self._accum(g * (self.data > lo))
            out._bw = bw
        return out

    def softmax(self, axis):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, _parents=(self,))
        if out.requires_grad:
            def bw(g):
                dot = (g * y).sum(axis=axis, keepdims=True)
                self._accum((g - dot) * y)
            out._bw = bw
        return out

    def detach(self):
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bw(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accum(piece)
        out._bw = bw
    return out


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """x[idx] along axis 0; idx is any integer array, grads scatter-add."""
    idx = np.asarray(idx)
    out = Tensor(x.data[idx], _parents=(x,))
    if out.requires_grad:
        def bw(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            x._accum(full)
        out._bw = bw
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (..., Cin) @ w (Cin, Cout) + b (Cout)."""
    out = Tensor(x.data @ w.data + b.data, _parents=(x, w, b))
    if out.requires_grad:
        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.data.shape[-1])
            if x.requires_grad:
                x._accum((g2 @ w.data.T).reshape(x.data.shape))
            if w.requires_grad:
                w._accum(x2.T @ g2)
            if b.requires_grad:
                b._accum(g2.sum(axis=0))
        out._bw = bw
    return out


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=_DTYPE), requires_grad=True)


class Module:
    """Composable parameter container with dotted-path naming."""

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{path}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{path}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def load_state(self, state: dict, prefix=""):
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=_DTYPE)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def state(self, prefix="") -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}


def _kaiming(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.w = Parameter(_kaiming(rng, cin, (cin, cout)))
        bb = 1.0 / np.sqrt(cin)
        self.b = Parameter(rng.uniform(-bb, bb, size=cout))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class MLP(Module):
    """Affine chain with ReLU on hidden layers, identity on the output."""

    def __init__(self, widths, rng: np.random.Generator):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least one layer")
        self._n = len(widths) - 1
        for i in range(self._n):
            cin, cout = widths[i], widths[i + 1]
            setattr(self, f"w{i + 1}", Parameter(_kaiming(rng, cin, (cin, cout))))
            bb = 1.0 / np.sqrt(cin)
            setattr(self, f"b{i + 1}", Parameter(rng.uniform(-bb, bb, size=cout)))

    def named_parameters(self, prefix=""):
        out = []
        for i in range(1, self._n + 1):
            out.append((f"{prefix}w{i}", getattr(self, f"w{i}")))
            out.append((f"{prefix}b{i}", getattr(self, f"b{i}")))
        return out

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(1, self._n + 1):
            x = linear(x, getattr(self, f"w{i}"), getattr(self, f"b{i}"))
            if i < self._n:
                x = x.relu()
        return x


class GraphConv(Module):
    """MaxPool(MLP(·)) over the neighbor axis: (..., k, Cin) -> (..., Cout)."""

    def __init__(self, widths, rng: np.random.Generator):
        self.mlp = MLP(widths, rng)

    def __call__(self, groups: Tensor) -> Tensor:
        return self.mlp(groups).amax(axis=-2)


class AttentionBlock(Module):
    """Subtraction vector attention over one window, anchored at row 0.

    Queries are the row-0 Key projection repeated across the window, so
    every point attends relative to the window center. Scores gate the
    biased values elementwise and the block is residual.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        self.wk = Linear(channels, channels, rng)
        self.wv = Linear(channels, channels, rng)
        self.pem_mlp = MLP([3, channels, 2 * channels], rng)
        self.attn_mlp = MLP([channels, channels, channels], rng)
        self.val_mlp = MLP([channels, channels, channels], rng)
        self._c = channels

    def __call__(self, feats: Tensor, rel_coords: Tensor) -> Tensor:
        if feats.shape[-1] != self._c or feats.shape[:-1] != rel_coords.shape[:-1]:
            raise ValueError("feature/coordinate window shapes disagree")
        c = self._c
        kproj = self.wk(feats)
        v = self.wv(feats)
        pe = self.pem_mlp(rel_coords)
        pem = pe[..., :c]
        peb = pe[..., c:]
        q = kproj[..., :1, :]
        scores = self.attn_mlp((kproj - q) * pem + peb).softmax(axis=-2)
        return feats + self.val_mlp((v + peb) * scores)


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self._params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self._params]
        self._v = [np.zeros_like(p.data) for p in self._params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self._params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if DEBUG_NANS and not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient in Adam step")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                               ).astype(p.data.dtype)

    def zero_grad(self):
        for p in self._params:
            p.grad = None


# ---------------------------------------------------------------------------
# weights archive
# ---------------------------------------------------------------------------

WEIGHTS_MAGIC = b"PSWT"


def save_weights(path, state: dict, config: dict) -> None:
    """Write a weights archive: manifest (JSON) + little-endian f32 payload."""
    entries = []
    offset = 0
    payload = bytearray()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.extend(arr.tobytes())
        offset += arr.size
    manifest = json.dumps({"format": 1, "config": config, "params": entries},
                          separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(bytes(payload))


def load_weights(path):
    """Read a weights archive; returns (config, {name: float32 array})."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise ValueError("not a weights archive")
    (mlen,) = struct.unpack_from("<I", blob, 4)
    manifest = json.loads(blob[8:8 + mlen].decode())
    if manifest.get("format") != 1:
        raise ValueError(f"unsupported archive format {manifest.get('format')}")
    payload = np.frombuffer(blob[8 + mlen:], dtype="<f4")
    state = {}
    for ent in manifest["params"]:
        shape = tuple(ent["shape"])
        size = int(np.prod(shape)) if shape else 1
        off = ent["offset"]
        state[ent["name"]] = payload[off:off + size].reshape(shape).copy()
    return manifest["config"], state
