"""Minimal deterministic differentiable compute on numpy arrays.

Reverse-mode autodiff with an explicit tape: every op records its parents and
a backward closure, ``Tensor.backward()`` walks the tape in reverse
topological order. No external framework; gradients are checked against
central differences by :func:`grad_check`.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np


class NNError(Exception):
    pass


class NonFiniteError(NNError):
    """An op produced (or was fed) NaN/Inf values."""


class ShapeMismatch(NNError):
    pass


_FINITE_CHECKS = True
_DTYPE = np.float64


def set_finite_checks(enabled):
    """Toggle the NaN/Inf check run after every op (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def set_default_dtype(dtype):
    """float64 for gradient-check fidelity (default), float32 for speed."""
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


def _check_finite(arr, op):
    if _FINITE_CHECKS and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    """A numpy array plus gradient and tape bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DTYPE)
        _check_finite(self.data, name or "tensor")
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Backpropagate from this tensor (defaults to d(self)/d(self) = 1)."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # Operator sugar; constants are wrapped on the fly.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data, name=None):
    """Create a trainable parameter (requires_grad=True)."""
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True, name=name)


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


def _needs_tape(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _op(data, parents, backward, opname):
    _check_finite(data, opname)
    if _needs_tape(*parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _op(out, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _op(out, (a, b), backward, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}: {exc}") from exc

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            a._accumulate(g * bd)
            b._accumulate(g * ad)
        elif ad.ndim == 1:
            a._accumulate(g @ bd.T)
            b._accumulate(np.outer(ad, g))
        elif bd.ndim == 1:
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
        else:
            a._accumulate(g @ bd.T)
            b._accumulate(ad.T @ g)

    return _op(out, (a, b), backward, "matmul")


def getitem(a, idx):
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _op(out, (a,), backward, "getitem")


def take_rows(table, indices):
    """Gather rows of a 2-D tensor by integer index (embedding lookup)."""
    indices = np.asarray(indices, dtype=np.intp)
    out = table.data[indices]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        table._accumulate(full)

    return _op(out, (table,), backward, "take_rows")


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _op(out, (a,), backward, "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _op(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return _op(out, tuple(tensors), backward, "stack")


def summed(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(summed(a, axis=axis, keepdims=keepdims), 1.0 / n)


def absolute(a):
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return _op(out, (a,), backward, "abs")


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _op(out, (a,), backward, "tanh")


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    out = np.where(a.data >= 0, out, 1.0 - out)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _op(out, (a,), backward, "sigmoid")


def relu(a):
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def backward(g):
        a._accumulate(g * mask)

    return _op(out, (a,), backward, "relu")


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _op(out, (a,), backward, "exp")


def log(a):
    out = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _op(out, (a,), backward, "log")


def sqrt(a):
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return _op(out, (a,), backward, "sqrt")


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    sig = np.where(a.data >= 0, sig, 1.0 - sig)

    def backward(g):
        a._accumulate(g * sig)

    return _op(out, (a,), backward, "softplus")


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - dot))

    return _op(out, (a,), backward, "softmax")


def logsumexp(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a.data - m).sum(axis=axis)) + np.squeeze(m, axis=axis)
    sm = np.exp(a.data - m)
    sm = sm / sm.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(np.expand_dims(g, axis) * sm)

    return _op(out, (a,), backward, "logsumexp")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def linear(x, w, b=None):
    """y = x @ w (+ b). Shapes: x [..., in], w [in, out], b [out]."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear: x {x.data.shape} vs w {w.data.shape}")
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def conv1d(x, w, b=None):
    """Same-padded cross-correlation along time.

    x [T, C_in], w [k, C_in, C_out] with odd k, b [C_out] -> [T, C_out].
    """
    k, c_in, c_out = w.data.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {k}")
    if x.data.shape[1] != c_in:
        raise ShapeMismatch(f"conv1d: x {x.data.shape} vs w {w.data.shape}")
    t = x.data.shape[0]
    half = k // 2
    padded = np.zeros((t + 2 * half, c_in), dtype=x.data.dtype)
    padded[half:half + t] = x.data
    # windows[i] = padded[i : i+k]  -> [T, k, C_in]
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=0)
    windows = windows.transpose(0, 2, 1)  # [T, k, C_in]
    cols = windows.reshape(t, k * c_in)
    wmat = w.data.reshape(k * c_in, c_out)
    out = cols @ wmat

    def backward(g):
        gw = (cols.T @ g).reshape(k, c_in, c_out)
        w._accumulate(gw)
        gcols = (g @ wmat.T).reshape(t, k, c_in)
        gx = np.zeros_like(padded)
        for j in range(k):
            gx[j:j + t] += gcols[:, j, :]
        x._accumulate(gx[half:half + t])

    y = _op(out, (x, w), backward, "conv1d")
    if b is not None:
        y = add(y, b)
    return y


def gru_step(x, h_prev, wx, wh, bx, bh, extra_x=None):
    """One gated recurrent unit step.

    Gate layout along the last axis of wx/wh/bx/bh is [reset, update, candidate].
    h' = (1 - z) * n + z * h_prev, with n = tanh(xn + r * hn). ``extra_x``
    is an optional additive input-gate pre-activation (conditioning hook).
    """
    hidden = h_prev.data.shape[-1]
    gx = add(matmul(x, wx), bx)
    if extra_x is not None:
        gx = add(gx, extra_x)
    gh = add(matmul(h_prev, wh), bh)
    r = sigmoid(add(gx[..., 0:hidden], gh[..., 0:hidden]))
    z = sigmoid(add(gx[..., hidden:2 * hidden], gh[..., hidden:2 * hidden]))
    n = tanh(add(gx[..., 2 * hidden:3 * hidden], mul(r, gh[..., 2 * hidden:3 * hidden])))
    return add(mul(1.0 - z, n), mul(z, h_prev))


def attention_energies(query, keys, prev_weights, p):
    """Hybrid content+location attention weights over T key positions.

    query [d_q], keys [T, d_k], prev_weights [T]; p holds the projections:
    wq [d_q, A], wk [d_k, A], loc_conv [k, 1, F], loc_proj [F, A],
    v [A], b [A]. Returns softmax weights [T].
    """
    if keys.data.shape[0] < 1:
        raise ValueError("attention needs at least one key position")
    loc = conv1d(reshape(prev_weights, (-1, 1)), p["loc_conv"])
    feats = add(
        add(matmul(keys, p["wk"]), matmul(loc, p["loc_proj"])),
        add(matmul(query, p["wq"]), p["b"]),
    )
    scores = matmul(tanh(feats), p["v"])
    return softmax(scores, axis=-1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def l1_loss(pred, target):
    return mean(absolute(pred - as_tensor(target)))


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy; targets in {0, 1}. Stable via softplus."""
    t = as_tensor(targets)
    return mean(softplus(logits) - mul(logits, t))


def cross_entropy(logits, label):
    """Softmax cross-entropy for a single class index over a 1-D logit vector."""
    return logsumexp(logits, axis=-1) - logits[int(label)]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def adam_step(values, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Bias-corrected Adam update for a dict of arrays; mutates and returns state.

    ``state`` maps name -> (m, v); pass {} on the first call. t counts from 1.
    """
    if t < 1:
        raise ValueError("adam time step t must be >= 1")
    new_values = {}
    for name, value in values.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        m, v = state.get(name, (np.zeros_like(value), np.zeros_like(value)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state[name] = (m, v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_values[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_values, state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a dict of parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, grad_scale=1.0):
        self.t += 1
        values = {n: p.data for n, p in self.params.items() if p.grad is not None}
        grads = {n: self.params[n].grad * grad_scale for n in values}
        new_values, self.state = adam_step(
            values, grads, self.state,
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, t=self.t,
        )
        for n, v in new_values.items():
            self.params[n].data = v


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn, inputs, eps=1e-5, skips=None):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a list of Tensors to a scalar Tensor. ``inputs`` is a list of
    numpy arrays; ``skips`` optionally gives a boolean mask per input marking
    coordinates to exclude (e.g. kink-adjacent relu pre-activations).
    """
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(tensors)
    if out.data.size != 1:
        raise ValueError("grad_check expects a scalar-valued fn")
    out.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def eval_at(arrays):
        val = fn([Tensor(a) for a in arrays])
        return float(val.data)

    max_err = 0.0
    base = [np.array(x, dtype=np.float64) for x in inputs]
    for i, x in enumerate(base):
        flat = x.reshape(-1)
        skip = None if skips is None or skips[i] is None else np.asarray(skips[i]).reshape(-1)
        for j in range(flat.size):
            if skip is not None and skip[j]:
                continue
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = eval_at(base)
            flat[j] = orig - eps
            f_minus = eval_at(base)
            flat[j] = orig
            cd = (f_plus - f_minus) / (2.0 * eps)
            an = float(analytic[i].reshape(-1)[j])
            err = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
            max_err = max(max_err, err)
    return max_err


# ---------------------------------------------------------------------------
# Named-tensor archive (checkpoints)
# ---------------------------------------------------------------------------

_ARCHIVE_MAGIC = b"NTAR1\n"


def _payload_and_index(tensors):
    names = sorted(tensors)
    chunks = []
    index = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), index


def archive_hash(tensors):
    """Content hash of a named-tensor dict (independent of metadata)."""
    payload, index = _payload_and_index(tensors)
    h = hashlib.sha256()
    h.update(json.dumps(index, sort_keys=True).encode())
    h.update(payload)
    return h.hexdigest()


def save_archive(path, tensors, meta=None):
    """Write tensors (name -> array) with little-endian float64 payload.

    Returns the content hash, which is also stored in the header.
    """
    payload, index = _payload_and_index(tensors)
    h = hashlib.sha256()
    h.update(json.dumps(index, sort_keys=True).encode())
    h.update(payload)
    header = {
        "index": index,
        "meta": meta or {},
        "content_hash": h.hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_ARCHIVE_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    return header["content_hash"]


def load_archive(path):
    """Read an archive; returns (tensors, meta, content_hash) after verifying."""
    with open(path, "rb") as f:
        magic = f.read(len(_ARCHIVE_MAGIC))
        if magic != _ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not a tensor archive")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        payload = f.read()
    h = hashlib.sha256()
    h.update(json.dumps(header["index"], sort_keys=True).encode())
    h.update(payload)
    if h.hexdigest() != header["content_hash"]:
        raise ValueError(f"{path}: content hash mismatch (corrupt archive)")
    tensors = {}
    for entry in header["index"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        tensors[entry["name"]] = arr
    return tensors, header["meta"], header["content_hash"]
