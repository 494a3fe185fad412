"""A small float64 neural toolkit with hand-written gradients.

Everything the models need and nothing more: embedding lookup, a gated
recurrent cell (LSTM) and a stack of them over masked batches, linear
layers, softmax, cross-entropy and SGD with momentum. Parameters live in
plain ``dict`` objects of numpy arrays so that optimisers, checkpoints and
gradient checks can treat every layer the same way.

Batches are row-major: ``x[b, t, :]`` is step ``t`` of example ``b``.
Gates are stacked in the order input, forget, output, candidate.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

DTYPE = np.float64
PROB_FLOOR = 1e-12
GATES = ("i", "f", "o", "g")


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(logits):
    """Row-wise softmax with max subtraction; accepts a vector or a batch."""
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target) -> float:
    """Negative log probability of ``target``, floored at 1e-12."""
    return float(-np.log(max(float(probs[target]), PROB_FLOOR)))


def batch_cross_entropy(probs, targets):
    rows = np.arange(len(targets))
    return -np.log(np.maximum(probs[rows, targets], PROB_FLOOR))


def embed_lookup(table, indices):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    return table[indices]


def embed_backward(table_shape, indices, grad_rows):
    grad = np.zeros(table_shape, dtype=DTYPE)
    np.add.at(grad, np.asarray(indices, dtype=np.int64), grad_rows)
    return grad


def uniform_init(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


# --------------------------------------------------------------------------
# linear layer

class Linear:
    """``y = x @ W.T + b`` with ``W`` shaped (out, in)."""

    def __init__(self, in_dim, out_dim, rng=None, bound=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_dim) if bound is None else bound
        self.params = {"W": uniform_init(rng, (out_dim, in_dim), bound),
                       "b": uniform_init(rng, (out_dim,), bound)}

    @property
    def in_dim(self):
        return self.params["W"].shape[1]

    @property
    def out_dim(self):
        return self.params["W"].shape[0]

    def forward(self, x):
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, x, dy):
        grads = {"W": dy.T @ x, "b": dy.sum(axis=0)}
        return dy @ self.params["W"], grads


# --------------------------------------------------------------------------
# gated recurrent cell

class GatedCell:
    """LSTM cell parameters.

    Stored stacked as ``W`` (4h, in), ``U`` (4h, h) and ``b`` (4h); the
    per-gate matrices ``W_i``, ``U_f``, ``b_o``, ... are views into them.
    """

    def __init__(self, input_dim, hidden_dim, rng=None, forget_bias=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden_dim)
        self.params = {
            "W": uniform_init(rng, (4 * hidden_dim, input_dim), bound),
            "U": uniform_init(rng, (4 * hidden_dim, hidden_dim), bound),
            "b": uniform_init(rng, (4 * hidden_dim,), bound),
        }
        self.params["b"][hidden_dim:2 * hidden_dim] = forget_bias

    @property
    def input_dim(self):
        return self.params["W"].shape[1]

    @property
    def hidden_dim(self):
        return self.params["U"].shape[1]

    def gate(self, name, which):
        h = self.hidden_dim
        k = GATES.index(which)
        return self.params[name][k * h:(k + 1) * h]

    def __getattr__(self, attr):
        # W_i, U_g, b_f, ...
        if len(attr) == 3 and attr[1] == "_" and attr[0] in "WUb" and attr[2] in GATES:
            return self.gate(attr[0], attr[2])
        raise AttributeError(attr)


def cell_step(p: GatedCell, x, h_prev, c_prev):
    """One recurrence step; works on vectors or on (batch, dim) arrays."""
    x, h_prev, c_prev = (np.asarray(a, dtype=DTYPE) for a in (x, h_prev, c_prev))
    for a in (x, h_prev, c_prev):
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to cell_step")
    h, c, _ = _step(p.params, x @ p.params["W"].T, h_prev, c_prev)
    return h, c


def _step(params, xw, h_prev, c_prev):
    hd = h_prev.shape[-1]
    a = xw + h_prev @ params["U"].T + params["b"]
    i = sigmoid(a[..., :hd])
    f = sigmoid(a[..., hd:2 * hd])
    o = sigmoid(a[..., 2 * hd:3 * hd])
    g = np.tanh(a[..., 3 * hd:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, tc)


def _step_backward(params, cache, h_prev, c_prev, dh, dc):
    """Gradient of one step given upstream dh, dc; returns (da, dh_prev, dc_prev)."""
    i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                         do * o * (1.0 - o), dg * (1.0 - g * g)], axis=-1)
    return da, da @ params["U"], dc * f


class LSTMStack:
    """Stacked gated cells run left to right from a zero state.

    ``forward`` takes inputs (B, T, in) and an optional 0/1 mask (B, T).
    Masked steps leave the state untouched, so a sequence padded on the
    right ends with the state of its last real element, and an all-masked
    sequence ends with the zero state.
    """

    def __init__(self, input_dim, hidden_dim, layers=2, rng=None, forget_bias=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cells = []
        for k in range(layers):
            self.cells.append(GatedCell(input_dim if k == 0 else hidden_dim,
                                        hidden_dim, rng, forget_bias))

    @property
    def hidden_dim(self):
        return self.cells[0].hidden_dim

    def forward(self, xs, mask=None):
        """Return the top layer's final hidden state (B, h) and a backward cache."""
        B, T, _ = xs.shape
        if T == 0:
            return np.zeros((B, self.hidden_dim), dtype=DTYPE), None
        m = None if mask is None else np.asarray(mask, dtype=DTYPE)[:, :, None]
        caches = []
        layer_in = xs
        for cell in self.cells:
            p = cell.params
            hd = cell.hidden_dim
            xw = (layer_in.reshape(B * T, -1) @ p["W"].T).reshape(B, T, 4 * hd)
            hs = np.zeros((B, T + 1, hd), dtype=DTYPE)
            cs = np.zeros((B, T + 1, hd), dtype=DTYPE)
            steps = []
            for t in range(T):
                h, c, cache = _step(p, xw[:, t], hs[:, t], cs[:, t])
                if m is not None:
                    h = m[:, t] * h + (1.0 - m[:, t]) * hs[:, t]
                    c = m[:, t] * c + (1.0 - m[:, t]) * cs[:, t]
                hs[:, t + 1] = h
                cs[:, t + 1] = c
                steps.append(cache)
            caches.append((layer_in, hs, cs, steps))
            layer_in = hs[:, 1:]
        return layer_in[:, -1], (caches, m)

    def backward(self, cache, dh_final):
        """Back-propagate through time; returns (dxs, list of per-cell grads)."""
        B = dh_final.shape[0]
        if cache is None:
            grads = [{k: np.zeros_like(v) for k, v in c.params.items()} for c in self.cells]
            return np.zeros((B, 0, self.cells[0].input_dim), dtype=DTYPE), grads
        caches, m = cache
        grads = [None] * len(self.cells)
        d_out = None
        for k in range(len(self.cells) - 1, -1, -1):
            cell = self.cells[k]
            p = cell.params
            layer_in, hs, cs, steps = caches[k]
            T = len(steps)
            hd = cell.hidden_dim
            if d_out is None:
                d_out = np.zeros((B, T, hd), dtype=DTYPE)
                d_out[:, -1] = dh_final
            das = np.zeros((B, T, 4 * hd), dtype=DTYPE)
            dh_next = np.zeros((B, hd), dtype=DTYPE)
            dc_next = np.zeros((B, hd), dtype=DTYPE)
            for t in range(T - 1, -1, -1):
                dh = d_out[:, t] + dh_next
                dc = dc_next
                if m is not None:
                    keep = m[:, t]
                    dh_pass, dc_pass = (1.0 - keep) * dh, (1.0 - keep) * dc
                    dh, dc = keep * dh, keep * dc
                da, dh_prev, dc_prev = _step_backward(p, steps[t], hs[:, t], cs[:, t], dh, dc)
                if m is not None:
                    dh_prev = dh_prev + dh_pass
                    dc_prev = dc_prev + dc_pass
                das[:, t] = da
                dh_next, dc_next = dh_prev, dc_prev
            flat_da = das.reshape(B * T, 4 * hd)
            grads[k] = {
                "W": flat_da.T @ layer_in.reshape(B * T, -1),
                "U": flat_da.T @ hs[:, :-1].reshape(B * T, hd),
                "b": flat_da.sum(axis=0),
            }
            d_out = (flat_da @ p["W"]).reshape(B, T, -1)
        return d_out, grads


# --------------------------------------------------------------------------
# optimiser

class SGD:
    """SGD with momentum: ``v = momentum * v + g``; ``p -= lr * v``."""

    def __init__(self, learning_rate=0.001, momentum=0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params: dict, grads: dict):
        for name, grad in grads.items():
            param = params[name]
            if grad.shape != param.shape:
                raise ValueError(f"{name}: gradient shape {grad.shape} != {param.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(param)
            elif v.shape != param.shape:
                raise ValueError(f"{name}: velocity shape {v.shape} != {param.shape}")
            v *= self.momentum
            v += grad
            param -= self.learning_rate * v
        return params


def sgd_step(state: SGD, params: dict, grads: dict) -> dict:
    return state.step(params, grads)


# --------------------------------------------------------------------------
# gradient checking

def numerical_gradient(f, x, eps=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = f()
        flat[k] = old - eps
        down = f()
        flat[k] = old
        g[k] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is (near) zero from
    dividing rounding noise by zero.
    """
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"NTPCKPT\x00"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict):
    """Write named arrays plus a JSON header; output is byte-stable."""
    header = {"format_version": FORMAT_VERSION, "meta": meta, "tensors": []}
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        else:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        header["tensors"].append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append(arr.tobytes())
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return ``(tensors, meta)`` as written by :func:`save_checkpoint`."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    (n,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    header = json.loads(data[offset:offset + n].decode("utf-8"))
    offset += n
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['format_version']}")
    tensors = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        tensors[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += count * dtype.itemsize
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return tensors, header["meta"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
