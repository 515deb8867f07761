"""Recurrent cells (LSTM, GRU, vanilla RNN), token/binary output heads,
and their reverse-mode backward passes.

Cell equations:
    LSTM: i,f,o = logistic(A_g x + B_g h' + b_g), j = tanh(A_j x + B_j h' + b_j)
          c = f.c' + i.j,  h = o.tanh(c)
    GRU:  z,r = logistic(...),  hcand = tanh(A_h x + B_h (r.h') + b_h)
          h = z.h' + (1-z).hcand          -- z gates the OLD state
    RNN:  h = tanh(A x + B h' + b)

Note the GRU update gate multiplies the previous state (so with all-zero
weights h = 0.5 h'), which differs from formulations where z gates the
new candidate.

Parameters are named ``<prefix>.<gate>.<A|B|b>`` (e.g. ``enc.lstm.f.B``)
and gates are allocated contiguously so fused (stacked-gate) views drive
the hot path.  Backward passes accumulate weight gradients with one GEMM
per matrix over the whole unrolled sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import GradTape, ParamStore, logistic, logsoftmax
from .rng import SplitMix64


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class GruState:
    h: np.ndarray


@dataclass
class RnnState:
    h: np.ndarray


def _init_matrix(rng: SplitMix64, view: np.ndarray, fan_in: int) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    view[...] = (2.0 * rng.uniform_array(view.shape) - 1.0) * bound


class Embedding:
    """Token embedding table; equivalent to one-hot input times a matrix."""

    @staticmethod
    def alloc(store: ParamStore, prefix: str, vocab: int, dim: int) -> None:
        store.alloc(f"{prefix}.table", vocab, dim)

    def __init__(self, store: ParamStore, prefix: str):
        self.name = f"{prefix}.table"
        self.table = store[self.name]

    def init(self, rng: SplitMix64) -> None:
        # fan_in is the vocabulary size under the one-hot view.
        _init_matrix(rng, self.table, self.table.shape[0])

    def rows(self, tokens) -> np.ndarray:
        return self.table[np.asarray(tokens, dtype=np.int64)]

    def backward(self, tape: GradTape, tokens, d_rows: np.ndarray) -> None:
        np.add.at(tape[self.name], np.asarray(tokens, dtype=np.int64), d_rows)


class LstmCell:
    GATES = ("i", "j", "f", "o")

    @staticmethod
    def alloc(store: ParamStore, prefix: str, dim: int, in_dim: int) -> None:
        for g in LstmCell.GATES:
            store.alloc(f"{prefix}.{g}.A", dim, in_dim)
        for g in LstmCell.GATES:
            store.alloc(f"{prefix}.{g}.B", dim, dim)
        for g in LstmCell.GATES:
            store.alloc(f"{prefix}.{g}.b", dim)

    def __init__(self, store: ParamStore, prefix: str, dim: int, in_dim: int):
        self.prefix = prefix
        self.dim = dim
        self.in_dim = in_dim
        self._a_names = [f"{prefix}.{g}.A" for g in self.GATES]
        self._b_names = [f"{prefix}.{g}.B" for g in self.GATES]
        self._bias_names = [f"{prefix}.{g}.b" for g in self.GATES]
        self.A = store.fused_view(self._a_names)
        self.B = store.fused_view(self._b_names)
        self.b = store.fused_view(self._bias_names)
        self._store = store

    def init(self, rng: SplitMix64, forget_bias: float = 1.0) -> None:
        for name in self._a_names:
            _init_matrix(rng, self._store[name], self.in_dim)
        for name in self._b_names:
            _init_matrix(rng, self._store[name], self.dim)
        self.b[:] = 0.0
        self._store[f"{self.prefix}.f.b"][:] = forget_bias

    def zero_state(self) -> LstmState:
        return LstmState(np.zeros(self.dim), np.zeros(self.dim))

    def step(self, x: np.ndarray, prev: LstmState) -> LstmState:
        D = self.dim
        a = self.A @ x + self.B @ prev.h + self.b
        i = logistic(a[:D])
        j = np.tanh(a[D : 2 * D])
        f = logistic(a[2 * D : 3 * D])
        o = logistic(a[3 * D :])
        c = f * prev.c + i * j
        return LstmState(o * np.tanh(c), c)

    def forward(self, xs: np.ndarray, h0: np.ndarray, c0: np.ndarray):
        """Run the unrolled cell; returns hidden states and a backward cache."""
        T = xs.shape[0]
        D = self.dim
        G = np.empty((T, 4 * D))  # post-activation gates i,j,f,o
        C = np.empty((T, D))
        TC = np.empty((T, D))
        H = np.empty((T, D))
        h, c = h0, c0
        for t in range(T):
            a = self.A @ xs[t] + self.B @ h + self.b
            i = logistic(a[:D])
            j = np.tanh(a[D : 2 * D])
            f = logistic(a[2 * D : 3 * D])
            o = logistic(a[3 * D :])
            c = f * c + i * j
            tc = np.tanh(c)
            h = o * tc
            G[t, :D] = i
            G[t, D : 2 * D] = j
            G[t, 2 * D : 3 * D] = f
            G[t, 3 * D :] = o
            C[t] = c
            TC[t] = tc
            H[t] = h
        return H, (xs, h0, c0, G, C, TC, H)

    def backward(self, cache, dH: np.ndarray, tape: GradTape,
                 dh_last=None, dc_last=None):
        """BPTT given per-step upstream dH; returns (dX, dh0, dc0)."""
        xs, h0, c0, G, C, TC, H = cache
        T, D = H.shape
        dAs = np.empty((T, 4 * D))
        dh = np.zeros(D) if dh_last is None else dh_last.copy()
        dc = np.zeros(D) if dc_last is None else dc_last.copy()
        for t in range(T - 1, -1, -1):
            i = G[t, :D]
            j = G[t, D : 2 * D]
            f = G[t, 2 * D : 3 * D]
            o = G[t, 3 * D :]
            tc = TC[t]
            c_prev = C[t - 1] if t > 0 else c0
            dh_tot = dh + dH[t]
            do = dh_tot * tc
            dc = dc + dh_tot * o * (1.0 - tc * tc)
            di = dc * j
            dj = dc * i
            df = dc * c_prev
            dAs[t, :D] = di * i * (1.0 - i)
            dAs[t, D : 2 * D] = dj * (1.0 - j * j)
            dAs[t, 2 * D : 3 * D] = df * f * (1.0 - f)
            dAs[t, 3 * D :] = do * o * (1.0 - o)
            dh = self.B.T @ dAs[t]
            dc = dc * f
        Hprev = np.vstack([h0[None, :], H[:-1]]) if T > 0 else H
        tape.fused_view(self._a_names)[...] += dAs.T @ xs
        tape.fused_view(self._b_names)[...] += dAs.T @ Hprev
        tape.fused_view(self._bias_names)[...] += dAs.sum(axis=0)
        dX = dAs @ self.A
        return dX, dh, dc


class GruCell:
    @staticmethod
    def alloc(store: ParamStore, prefix: str, dim: int, in_dim: int) -> None:
        for g in ("z", "r", "h"):
            store.alloc(f"{prefix}.{g}.A", dim, in_dim)
        for g in ("z", "r"):
            store.alloc(f"{prefix}.{g}.B", dim, dim)
        store.alloc(f"{prefix}.h.B", dim, dim)
        for g in ("z", "r", "h"):
            store.alloc(f"{prefix}.{g}.b", dim)

    def __init__(self, store: ParamStore, prefix: str, dim: int, in_dim: int):
        self.prefix = prefix
        self.dim = dim
        self.in_dim = in_dim
        self._a_names = [f"{prefix}.{g}.A" for g in ("z", "r", "h")]
        self._b2_names = [f"{prefix}.{g}.B" for g in ("z", "r")]
        self._bias_names = [f"{prefix}.{g}.b" for g in ("z", "r", "h")]
        self.A = store.fused_view(self._a_names)        # (3D, in)
        self.B2 = store.fused_view(self._b2_names)      # (2D, D) for z,r
        self.Bh = store[f"{prefix}.h.B"]                # (D, D)
        self.b = store.fused_view(self._bias_names)     # (3D,)
        self._store = store

    def init(self, rng: SplitMix64) -> None:
        for name in self._a_names:
            _init_matrix(rng, self._store[name], self.in_dim)
        for name in self._b2_names + [f"{self.prefix}.h.B"]:
            _init_matrix(rng, self._store[name], self.dim)
        self.b[:] = 0.0

    def zero_state(self) -> GruState:
        return GruState(np.zeros(self.dim))

    def step(self, x: np.ndarray, prev: GruState) -> GruState:
        D = self.dim
        pre = self.A @ x + self.b
        zr = pre[: 2 * D] + self.B2 @ prev.h
        z = logistic(zr[:D])
        r = logistic(zr[D:])
        hcand = np.tanh(pre[2 * D :] + self.Bh @ (r * prev.h))
        return GruState(z * prev.h + (1.0 - z) * hcand)

    def forward(self, xs: np.ndarray, h0: np.ndarray):
        T = xs.shape[0]
        D = self.dim
        Z = np.empty((T, D))
        R = np.empty((T, D))
        HC = np.empty((T, D))
        RH = np.empty((T, D))  # r * h_prev, input to B_h
        H = np.empty((T, D))
        h = h0
        for t in range(T):
            pre = self.A @ xs[t] + self.b
            zr = pre[: 2 * D] + self.B2 @ h
            z = logistic(zr[:D])
            r = logistic(zr[D:])
            rh = r * h
            hcand = np.tanh(pre[2 * D :] + self.Bh @ rh)
            h = z * h + (1.0 - z) * hcand
            Z[t], R[t], HC[t], RH[t], H[t] = z, r, hcand, rh, h
        return H, (xs, h0, Z, R, HC, RH, H)

    def backward(self, cache, dH: np.ndarray, tape: GradTape, dh_last=None):
        xs, h0, Z, R, HC, RH, H = cache
        T, D = H.shape
        dAs = np.empty((T, 3 * D))  # pre-activation grads for z, r, hcand
        dh = np.zeros(D) if dh_last is None else dh_last.copy()
        for t in range(T - 1, -1, -1):
            z, r, hc = Z[t], R[t], HC[t]
            h_prev = H[t - 1] if t > 0 else h0
            dh_tot = dh + dH[t]
            dz = dh_tot * (h_prev - hc)
            dhc = dh_tot * (1.0 - z)
            da_h = dhc * (1.0 - hc * hc)
            g = self.Bh.T @ da_h  # grad wrt (r * h_prev)
            dr = g * h_prev
            dAs[t, :D] = dz * z * (1.0 - z)
            dAs[t, D : 2 * D] = dr * r * (1.0 - r)
            dAs[t, 2 * D :] = da_h
            dh = dh_tot * z + self.B2.T @ dAs[t, : 2 * D] + g * r
        Hprev = np.vstack([h0[None, :], H[:-1]]) if T > 0 else H
        tape.fused_view(self._a_names)[...] += dAs.T @ xs
        tape.fused_view(self._b2_names)[...] += dAs[:, : 2 * D].T @ Hprev
        tape[f"{self.prefix}.h.B"][...] += dAs[:, 2 * D :].T @ RH
        tape.fused_view(self._bias_names)[...] += dAs.sum(axis=0)
        dX = dAs @ self.A
        return dX, dh


class RnnCell:
    @staticmethod
    def alloc(store: ParamStore, prefix: str, dim: int, in_dim: int) -> None:
        store.alloc(f"{prefix}.A", dim, in_dim)
        store.alloc(f"{prefix}.B", dim, dim)
        store.alloc(f"{prefix}.b", dim)

    def __init__(self, store: ParamStore, prefix: str, dim: int, in_dim: int):
        self.prefix = prefix
        self.dim = dim
        self.in_dim = in_dim
        self.A = store[f"{prefix}.A"]
        self.B = store[f"{prefix}.B"]
        self.b = store[f"{prefix}.b"]
        self._store = store

    def init(self, rng: SplitMix64) -> None:
        _init_matrix(rng, self.A, self.in_dim)
        _init_matrix(rng, self.B, self.dim)
        self.b[:] = 0.0

    def zero_state(self) -> RnnState:
        return RnnState(np.zeros(self.dim))

    def step(self, x: np.ndarray, prev: RnnState) -> RnnState:
        return RnnState(np.tanh(self.A @ x + self.B @ prev.h + self.b))

    def forward(self, xs: np.ndarray, h0: np.ndarray):
        T = xs.shape[0]
        H = np.empty((T, self.dim))
        h = h0
        for t in range(T):
            h = np.tanh(self.A @ xs[t] + self.B @ h + self.b)
            H[t] = h
        return H, (xs, h0, H)

    def backward(self, cache, dH: np.ndarray, tape: GradTape, dh_last=None):
        xs, h0, H = cache
        T, D = H.shape
        das = np.empty((T, D))
        dh = np.zeros(D) if dh_last is None else dh_last.copy()
        for t in range(T - 1, -1, -1):
            dh_tot = dh + dH[t]
            das[t] = dh_tot * (1.0 - H[t] * H[t])
            dh = self.B.T @ das[t]
        Hprev = np.vstack([h0[None, :], H[:-1]]) if T > 0 else H
        tape[f"{self.prefix}.A"][...] += das.T @ xs
        tape[f"{self.prefix}.B"][...] += das.T @ Hprev
        tape[f"{self.prefix}.b"][...] += das.sum(axis=0)
        dX = das @ self.A
        return dX, dh


class TokenHead:
    """Affine map plus log-softmax over the node vocabulary (+ EOS)."""

    @staticmethod
    def alloc(store: ParamStore, prefix: str, vocab: int, dim: int) -> None:
        store.alloc(f"{prefix}.C", vocab, dim)
        store.alloc(f"{prefix}.c", vocab)

    def __init__(self, store: ParamStore, prefix: str):
        self.prefix = prefix
        self.C = store[f"{prefix}.C"]
        self.c = store[f"{prefix}.c"]

    def init(self, rng: SplitMix64) -> None:
        _init_matrix(rng, self.C, self.C.shape[1])
        self.c[:] = 0.0

    def log_probs(self, h: np.ndarray) -> np.ndarray:
        return logsoftmax(self.C @ h + self.c)

    def nll_loss(self, H: np.ndarray, targets: np.ndarray, tape: GradTape):
        """Mean NLL over steps; returns (loss, dH)."""
        T = H.shape[0]
        logits = H @ self.C.T + self.c
        logp = logsoftmax(logits)
        idx = np.arange(T)
        loss = -logp[idx, targets].mean()
        dlogits = np.exp(logp)
        dlogits[idx, targets] -= 1.0
        dlogits /= T
        tape[f"{self.prefix}.C"][...] += dlogits.T @ H
        tape[f"{self.prefix}.c"][...] += dlogits.sum(axis=0)
        return loss, dlogits @ self.C


class BinaryHead:
    """Per-channel logistic output with mean bitwise cross-entropy loss."""

    @staticmethod
    def alloc(store: ParamStore, prefix: str, bits: int, dim: int) -> None:
        store.alloc(f"{prefix}.C", bits, dim)
        store.alloc(f"{prefix}.c", bits)

    def __init__(self, store: ParamStore, prefix: str):
        self.prefix = prefix
        self.C = store[f"{prefix}.C"]
        self.c = store[f"{prefix}.c"]

    def init(self, rng: SplitMix64) -> None:
        _init_matrix(rng, self.C, self.C.shape[1])
        self.c[:] = 0.0

    def probs(self, h: np.ndarray) -> np.ndarray:
        return logistic(self.C @ h + self.c)

    def bce_loss(self, H: np.ndarray, targets: np.ndarray, tape: GradTape):
        """Mean BCE over steps and bits; returns (loss, dH)."""
        logits = H @ self.C.T + self.c
        # log(1+e^x) computed stably: max(x,0) + log1p(e^-|x|)
        softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
        loss = float(np.mean(softplus - targets * logits))
        p = logistic(logits)
        dlogits = (p - targets) / targets.size
        tape[f"{self.prefix}.C"][...] += dlogits.T @ H
        tape[f"{self.prefix}.c"][...] += dlogits.sum(axis=0)
        return loss, dlogits @ self.C
