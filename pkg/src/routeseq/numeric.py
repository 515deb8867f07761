"""Dense numeric kernels, parameter storage, optimizers, gradient checking.

Matrices are row-major float64 numpy arrays throughout; 64-bit precision
keeps finite-difference gradient checks meaningful at desk scale.

``ParamStore`` owns one contiguous float64 buffer and hands out named
views into it.  Gates of a recurrent cell are allocated back to back so a
fused (4D x In) view exists for the hot path while per-gate names keep
the checkpoint layout stable.  Optimizer state lives in equally-shaped
flat buffers, which makes Adam / RMSProp single-pass vectorized updates.

Checkpoint container: ``RSEQCKPT`` magic, little-endian u32 manifest
length, JSON manifest (names, shapes, dtype, architecture tag, config
hash), then the raw little-endian float64 buffers in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

try:  # fused optimizer kernels; the numpy path is the reference semantics
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

_MAGIC = b"RSEQCKPT"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


# ---------------------------------------------------------------------------
# elementwise / BLAS-like building blocks


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require(a.shape[-1] == b.shape[0], f"matmul shape mismatch {a.shape} x {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require(a.shape == b.shape, f"add shape mismatch {a.shape} vs {b.shape}")
    return a + b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require(a.shape == b.shape, f"hadamard shape mismatch {a.shape} vs {b.shape}")
    return a * b


def logistic(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def affine(a: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require(a.shape[-1] == x.shape[0], f"affine shape mismatch {a.shape} x {x.shape}")
    return a @ x + b


def logsoftmax(z: np.ndarray) -> np.ndarray:
    """Shifted log-softmax along the last axis; stable for any finite input."""
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Ordered named parameters backed by one contiguous float64 buffer."""

    def __init__(self):
        self._order: list[str] = []
        self._offsets: dict[str, tuple[int, int]] = {}
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._views: dict[str, np.ndarray] = {}
        self._total = 0
        self.flat: np.ndarray | None = None
        self.opt_state: dict[str, np.ndarray] = {}

    def alloc(self, name: str, *shape: int) -> None:
        _require(self.flat is None, "store is frozen")
        _require(name not in self._offsets, f"duplicate parameter {name!r}")
        size = int(np.prod(shape))
        self._offsets[name] = (self._total, size)
        self._shapes[name] = shape
        self._order.append(name)
        self._total += size

    def freeze(self) -> None:
        _require(self.flat is None, "store already frozen")
        self.flat = np.zeros(self._total, dtype=np.float64)
        for name, (start, size) in self._offsets.items():
            self._views[name] = self.flat[start : start + size].reshape(
                self._shapes[name]
            )

    def fused_view(self, names: list[str]) -> np.ndarray:
        """Single view spanning consecutively allocated parameters."""
        starts = [self._offsets[n][0] for n in names]
        sizes = [self._offsets[n][1] for n in names]
        for k in range(1, len(names)):
            _require(
                starts[k] == starts[k - 1] + sizes[k - 1],
                f"{names[k]!r} not contiguous with {names[k - 1]!r}",
            )
        first_shape = self._shapes[names[0]]
        begin, end = starts[0], starts[-1] + sizes[-1]
        block = self.flat[begin:end]
        if len(first_shape) == 1:
            return block
        cols = first_shape[1]
        _require(
            all(self._shapes[n][1] == cols for n in names),
            "fused parameters must share column count",
        )
        rows = sum(self._shapes[n][0] for n in names)
        return block.reshape(rows, cols)

    def names(self) -> list[str]:
        return list(self._order)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._offsets

    def locate(self, flat_index: int) -> str:
        for name, (start, size) in self._offsets.items():
            if start <= flat_index < start + size:
                return name
        raise IndexError(flat_index)

    def state(self, key: str) -> np.ndarray:
        if key not in self.opt_state:
            self.opt_state[key] = np.zeros_like(self.flat)
        return self.opt_state[key]

    def tape(self) -> "GradTape":
        return GradTape(self)


class GradTape:
    """Per-parameter gradients sharing the owning store's layout."""

    def __init__(self, store: ParamStore):
        self.store = store
        self.flat = np.zeros_like(store.flat)
        self._views = {
            name: self.flat[start : start + size].reshape(store.shape(name))
            for name, (start, size) in store._offsets.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def fused_view(self, names: list[str]) -> np.ndarray:
        offsets = self.store._offsets
        begin = offsets[names[0]][0]
        end = offsets[names[-1]][0] + offsets[names[-1]][1]
        first_shape = self.store.shape(names[0])
        block = self.flat[begin:end]
        if len(first_shape) == 1:
            return block
        rows = sum(self.store.shape(n)[0] for n in names)
        return block.reshape(rows, first_shape[1])

    def zero(self) -> None:
        self.flat[:] = 0.0


class NonFiniteGradient(RuntimeError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


def _check_finite(grads: GradTape) -> None:
    # one BLAS pass; any NaN/Inf (or absurd overflow-scale entry) poisons the dot
    if np.isfinite(grads.flat @ grads.flat):
        return
    finite = np.isfinite(grads.flat)
    bad = int(np.argmax(~finite)) if not finite.all() else int(np.argmax(np.abs(grads.flat)))
    raise NonFiniteGradient(grads.store.locate(bad))


# ---------------------------------------------------------------------------
# optimizers
#
# The fused kernels replicate the numpy pass sequence per element, so both
# backends produce bitwise-identical parameters; numba only removes the
# memory traffic of separate array passes.

if _HAVE_NUMBA:

    @numba.njit(parallel=True, fastmath=False, cache=True)
    def _adam_kernel(p, g, m, v, c1, c2, bc2, eps, step_scale):  # pragma: no cover
        for i in numba.prange(p.size):
            gi = g[i]
            mi = m[i] * c1
            mi = mi + (1.0 - c1) * gi
            vi = v[i] * c2
            w = gi * gi
            w = w * (1.0 - c2)
            vi = vi + w
            m[i] = mi
            v[i] = vi
            w = vi / bc2
            w = np.sqrt(w)
            w = w + eps
            w = mi / w
            w = w * step_scale
            p[i] = p[i] - w

    @numba.njit(parallel=True, fastmath=False, cache=True)
    def _rmsprop_kernel(p, g, r, v, decay, momentum, lr, eps):  # pragma: no cover
        for i in numba.prange(p.size):
            gi = g[i]
            ri = r[i] * decay
            w = gi * gi
            w = w * (1.0 - decay)
            ri = ri + w
            vi = v[i] * momentum
            w = ri + eps
            w = np.sqrt(w)
            w = gi / w
            w = w * lr
            vi = vi + w
            r[i] = ri
            v[i] = vi
            p[i] = p[i] - vi


def adam_step(
    params: ParamStore,
    grads: GradTape,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
    region: slice | None = None,
) -> None:
    """Bias-corrected Adam update, in place.

    ``region`` restricts the update to a flat-buffer slice (used to train
    the decoder against a frozen encoder); identical to a full update
    when the excluded gradients are zero.
    """
    _require(t >= 1, "Adam step index starts at 1")
    _check_finite(grads)
    sl = region if region is not None else slice(None)
    g = grads.flat[sl]
    m = params.state("adam.m")[sl]
    v = params.state("adam.v")[sl]
    bc2 = 1.0 - beta2**t
    step_scale = lr / (1.0 - beta1**t)
    if _HAVE_NUMBA:
        _adam_kernel(params.flat[sl], g, m, v, beta1, beta2, bc2, eps, step_scale)
        return
    # in-place pass sequence through one scratch buffer; the hot loop must
    # not allocate multi-megabyte temporaries per step
    w = params.state("opt.scratch")[sl]
    m *= beta1
    np.multiply(g, 1.0 - beta1, out=w)
    m += w
    v *= beta2
    np.multiply(g, g, out=w)
    w *= 1.0 - beta2
    v += w
    np.divide(v, bc2, out=w)
    np.sqrt(w, out=w)
    w += eps
    np.divide(m, w, out=w)
    w *= step_scale
    params.flat[sl] -= w


def rmsprop_step(
    params: ParamStore,
    grads: GradTape,
    lr: float = 1e-4,
    momentum: float = 0.9,
    decay: float = 0.9,
    eps: float = 1e-8,
    region: slice | None = None,
) -> None:
    """RMSProp with momentum: r <- decay r + (1-decay) g^2;
    v <- momentum v + lr g / sqrt(r + eps); theta <- theta - v."""
    _check_finite(grads)
    sl = region if region is not None else slice(None)
    g = grads.flat[sl]
    r = params.state("rms.r")[sl]
    v = params.state("rms.v")[sl]
    if _HAVE_NUMBA:
        _rmsprop_kernel(params.flat[sl], g, r, v, decay, momentum, lr, eps)
        return
    w = params.state("opt.scratch")[sl]
    r *= decay
    np.multiply(g, g, out=w)
    w *= 1.0 - decay
    r += w
    v *= momentum
    np.add(r, eps, out=w)
    np.sqrt(w, out=w)
    np.divide(g, w, out=w)
    w *= lr
    v += w
    params.flat[sl] -= v


def clip_gradients(grads: GradTape, lo: float, hi: float) -> GradTape:
    _require(lo < hi, "clip range must satisfy lo < hi")
    np.clip(grads.flat, lo, hi, out=grads.flat)
    return grads


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f, params: ParamStore, eps: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f(params) -> (loss, GradTape)`` must be deterministic.  Relative
    error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    _require(eps > 0, "eps must be positive")
    _, tape = f(params)
    analytic = tape.flat.copy()
    worst = 0.0
    flat = params.flat
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi, _ = f(params)
        flat[k] = orig - eps
        lo, _ = f(params)
        flat[k] = orig
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic[k]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ParamStore, arch: str, config_hash: str) -> None:
    manifest = {
        "arch": arch,
        "config_hash": config_hash,
        "dtype": "float64",
        "params": [
            {"name": name, "shape": list(params.shape(name))}
            for name in params.names()
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in params.names():
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        _require(magic == _MAGIC, f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode())
        store = ParamStore()
        for spec in manifest["params"]:
            store.alloc(spec["name"], *spec["shape"])
        store.freeze()
        for spec in manifest["params"]:
            n = int(np.prod(spec["shape"]))
            buf = np.frombuffer(fh.read(8 * n), dtype="<f8")
            store[spec["name"]][...] = buf.reshape(spec["shape"])
    return store, manifest
