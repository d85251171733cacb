"""Dense MLPs with hand-written backprop, AdaGrad, gradient checking and
checkpoint files.

Everything is float64.  Inputs are row-major batches ``X`` of shape
``(batch, in)``; a 1-D input is treated as a batch of one and the output
is returned 1-D.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad_from_output(h):
    # d elu/dz given h = elu(z): 1 where z > 0, else e^z = h + 1
    return np.where(h > 0, 1.0, h + 1.0)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Mlp:
    """``sizes = [in, h1, ..., out]``; elu on hidden layers, identity output."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = [int(s) for s in sizes]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                W = np.zeros((fan_in, fan_out))
            else:
                W = glorot_uniform(rng, fan_in, fan_out)
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for i, (W, b) in enumerate(zip(arrays[0::2], arrays[1::2])):
            if W.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError("parameter shape mismatch")
            self.weights[i][...] = W
            self.biases[i][...] = b

    def copy(self) -> "Mlp":
        twin = Mlp(self.sizes)
        twin.set_params([p.copy() for p in self.params])
        return twin

    def forward(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        H = X[None, :] if single else X
        if H.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {H.shape[1]} != {self.sizes[0]}")
        acts = [H]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = H @ W + b
            H = Z if i == last else elu(Z)
            acts.append(H)
        self._cache = acts
        return H[0] if single else H

    __call__ = forward

    def backward(self, upstream) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(output * upstream)`` for the last forward call.

        Returns ``(grads, dX)`` with ``grads`` ordered like :attr:`params`.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts = self._cache
        G = np.asarray(upstream, dtype=np.float64)
        single = G.ndim == 1
        if single:
            G = G[None, :]
        if G.shape != acts[-1].shape:
            raise ValueError(f"upstream shape {G.shape} != output shape {acts[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                G = G * elu_grad_from_output(acts[i + 1])
            grads[2 * i] = acts[i].T @ G
            grads[2 * i + 1] = G.sum(axis=0)
            G = G @ self.weights[i].T
        return grads, (G[0] if single else G)


class AdaGrad:
    """theta <- theta - lr * g / sqrt(G + eps) with G the running sum of g**2.

    ``initial_accumulator`` seeds G (0 gives the textbook update; 0.1 is
    the TensorFlow default and damps the first, sign-like steps).
    """

    def __init__(self, params: Sequence[np.ndarray], lr: float = 0.05, eps: float = 1e-8, initial_accumulator: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if initial_accumulator < 0:
            raise ValueError("initial_accumulator must be >= 0")
        self.params = list(params)
        self.lr = lr
        self.eps = eps
        self.accum = [np.full_like(p, initial_accumulator) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient count mismatch")
        for p, g, acc in zip(self.params, grads, self.accum):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            acc += g * g
            p -= self.lr * g / np.sqrt(acc + self.eps)


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    """Rescale ``grads`` jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return list(grads)
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


def adagrad_step(params, grads, state: AdaGrad):
    state.step(grads)
    return params


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    params: Sequence[np.ndarray],
    loss_fn: Callable[[], float],
    analytic: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_per_param: int | None = 20,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``params`` are perturbed in place (and restored); ``loss_fn`` must
    recompute the loss from their current values.  The relative error of
    an entry is ``|a - n| / max(|a|, |n|, floor)``.  Up to
    ``max_per_param`` entries of each array are sampled (all when None).
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    count = 0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + h
            up = loss_fn()
            flat[j] = old - h
            down = loss_fn()
            flat[j] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("non-finite loss during gradient check")
            num = (up - down) / (2.0 * h)
            a = gflat[j]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
            count += 1
    return GradCheckReport(worst, count, tolerance)


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout (little endian):
#   b"VULTRCK\0"  magic
#   uint32        format version
#   uint32        len(kind) then kind bytes (utf-8)
#   uint32        number of sizes, then int64 sizes
#   uint32        number of arrays
#   per array:    uint32 ndim, int64 shape[ndim], float64 data (row-major)

_MAGIC = b"VULTRCK\0"
_VERSION = 1


def save_arrays(path, kind: str, sizes: Sequence[int], arrays: Sequence[np.ndarray]) -> None:
    kb = kind.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(kb)) + kb)
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(np.asarray(sizes, dtype="<i8").tobytes())
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            fh.write(struct.pack("<I", a.ndim))
            fh.write(np.asarray(a.shape, dtype="<i8").tobytes())
            fh.write(a.tobytes())


def load_arrays(path) -> tuple[str, list[int], list[np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (klen,) = struct.unpack_from("<I", data, off)
    off += 4
    kind = data[off : off + klen].decode()
    off += klen
    (ns,) = struct.unpack_from("<I", data, off)
    off += 4
    sizes = np.frombuffer(data, dtype="<i8", count=ns, offset=off).tolist()
    off += 8 * ns
    (na,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = []
    for _ in range(na):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = tuple(np.frombuffer(data, dtype="<i8", count=ndim, offset=off).tolist())
        off += 8 * ndim
        n = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    return kind, sizes, arrays


def save_mlp(mlp: Mlp, path) -> None:
    save_arrays(path, "mlp", mlp.sizes, mlp.params)


def load_mlp(path) -> Mlp:
    kind, sizes, arrays = load_arrays(path)
    if kind != "mlp":
        raise ValueError(f"{path}: expected an mlp checkpoint, found {kind!r}")
    mlp = Mlp(sizes)
    mlp.set_params(arrays)
    return mlp
