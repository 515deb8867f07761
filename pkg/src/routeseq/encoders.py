"""Context-vector encodings: Fisher vectors from a diagonal GMM and VLAD
residuals from a K-means codebook, plus the fitting machinery (EM,
K-means++ with Lloyd iterations, exact KD-tree nearest neighbour).

Fisher encoding of a descriptor set W = (w_1..w_N), per component k and
dimension j (sigma denotes the standard deviation):

    d_mu[jk]  = 1/(N sqrt(w_k))   sum_i q_ik (w_ji - mu_jk) / sigma_jk
    d_sig[jk] = 1/(N sqrt(2 w_k)) sum_i q_ik [((w_ji - mu_jk)/sigma_jk)^2 - 1]

stacked as (mean block, variance block) of dimension 2KD and then
l2-normalized.  The soft assignment q_ik is the normalized Gaussian
kernel WITHOUT mixture weights or determinant factors:

    q_ik = exp(-0.5 (w_i-mu_k)' S_k^-1 (w_i-mu_k)) / sum_t exp(...)

``weighted=True`` switches to the full posterior (with mixture weights
and normalizing constants) for comparison.

VLAD encoding stacks per-centroid residual sums v_k = sum_i q_ik (w_i -
mu_k) with hard KD-tree assignments, then l2-normalizes (mirroring the
Fisher convention; intra-normalization would be the main alternative).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64

VARIANCE_FLOOR = 1e-6
_ENC_MAGIC = b"RSEQENC1"


@dataclass
class DiagGmm:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D), floored positive
    loglik_path: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def D(self) -> int:
        return self.means.shape[1]


@dataclass
class EncodedVector:
    values: np.ndarray
    is_zero: bool = False  # pre-normalization vector was all-zero


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, D)
    tree: "KdTree"

    @property
    def K(self) -> int:
        return len(self.centroids)

    @property
    def D(self) -> int:
        return self.centroids.shape[1]


# ---------------------------------------------------------------------------
# exact KD-tree


class KdTree:
    """Exact nearest-neighbour index; ties resolve to the lowest point index."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64)
        n, self.dim = self.points.shape
        self._axis = np.full(n, -1, dtype=np.int64)
        self._left = np.full(n, -1, dtype=np.int64)
        self._right = np.full(n, -1, dtype=np.int64)
        self.root = self._build(np.arange(n), 0)

    def _build(self, idx: np.ndarray, depth: int) -> int:
        if len(idx) == 0:
            return -1
        axis = depth % self.dim
        order = np.lexsort((idx, self.points[idx, axis]))
        idx = idx[order]
        mid = len(idx) // 2
        node = int(idx[mid])
        self._axis[node] = axis
        self._left[node] = self._build(idx[:mid], depth + 1)
        self._right[node] = self._build(idx[mid + 1 :], depth + 1)
        return node

    def nearest(self, q: np.ndarray) -> int:
        best = [-1, np.inf]

        def visit(node: int) -> None:
            if node < 0:
                return
            delta = q - self.points[node]
            d2 = float(delta @ delta)
            if d2 < best[1] or (d2 == best[1] and node < best[0]):
                best[0], best[1] = node, d2
            axis = self._axis[node]
            diff = q[axis] - self.points[node, axis]
            near, far = (
                (self._left[node], self._right[node])
                if diff < 0
                else (self._right[node], self._left[node])
            )
            visit(near)
            if diff * diff <= best[1]:
                visit(far)

        visit(self.root)
        return best[0]


# ---------------------------------------------------------------------------
# K-means


def _kmeanspp_init(data: np.ndarray, K: int, rng: SplitMix64) -> np.ndarray:
    n = len(data)
    centroids = np.empty((K, data.shape[1]))
    centroids[0] = data[rng.randint(n)]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centroids[k] = data[rng.randint(n)]
            continue
        u = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), u))
        idx = min(idx, n - 1)
        centroids[k] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centroids[k]) ** 2, axis=1))
    return centroids


def _assign(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(data**2, axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans(data: np.ndarray, K: int, seed: int, max_iter: int = 100,
           tol: float = 1e-8):
    """Lloyd's iterations from a K-means++ seeding.

    Returns (centroids, assignments, inertia_path); inertia is monotone
    non-increasing across iterations.
    """
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    if n < K:
        raise ValueError(f"need at least {K} points, got {n}")
    rng = SplitMix64(seed)
    centroids = _kmeanspp_init(data, K, rng)
    inertia_path = []
    labels = _assign(data, centroids)
    for _ in range(max_iter):
        moved = 0.0
        new_centroids = centroids.copy()
        for k in range(K):
            members = data[labels == k]
            if len(members) == 0:
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(np.sum((data - centroids[labels]) ** 2, axis=1)))
                new_centroids[k] = data[far]
            else:
                new_centroids[k] = members.mean(axis=0)
            moved = max(moved, float(np.sum((new_centroids[k] - centroids[k]) ** 2)))
        centroids = new_centroids
        labels = _assign(data, centroids)
        inertia = float(np.sum((data - centroids[labels]) ** 2))
        inertia_path.append(inertia)
        if moved <= tol:
            break
    return centroids, labels, inertia_path


def fit_codebook(data: np.ndarray, K: int, seed: int) -> Codebook:
    centroids, _, _ = kmeans(data, K, seed)
    return Codebook(centroids=centroids, tree=KdTree(centroids))


# ---------------------------------------------------------------------------
# diagonal GMM via EM


def _log_gauss(data: np.ndarray, gmm_means, gmm_vars) -> np.ndarray:
    """(N, K) log densities of diagonal Gaussians."""
    diff = data[:, None, :] - gmm_means[None, :, :]  # (N, K, D)
    quad = np.sum(diff * diff / gmm_vars[None, :, :], axis=2)
    logdet = np.sum(np.log(gmm_vars), axis=1)  # (K,)
    D = data.shape[1]
    return -0.5 * (quad + logdet[None, :] + D * np.log(2.0 * np.pi))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def fit_gmm(
    data: np.ndarray,
    K: int,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 200,
    variance_floor: float = VARIANCE_FLOOR,
) -> DiagGmm:
    """EM for a diagonal-covariance mixture, initialised from K-means.

    Stops when the relative log-likelihood improvement drops below
    ``tol``; the recorded ``loglik_path`` is monotone non-decreasing.
    """
    data = np.asarray(data, dtype=np.float64)
    n, D = data.shape
    if n <= K:
        raise ValueError(f"need more than {K} points, got {n}")
    centroids, labels, _ = kmeans(data, K, seed)
    weights = np.empty(K)
    means = centroids.copy()
    variances = np.empty((K, D))
    global_var = np.maximum(data.var(axis=0), variance_floor)
    for k in range(K):
        members = data[labels == k]
        weights[k] = max(len(members), 1) / n
        variances[k] = members.var(axis=0) if len(members) > 1 else global_var
    weights /= weights.sum()
    variances = np.maximum(variances, variance_floor)

    loglik_path: list[float] = []
    reseeded = False
    prev_ll = -np.inf
    for _ in range(max_iter):
        logp = _log_gauss(data, means, variances) + np.log(weights)[None, :]
        row_lse = _logsumexp_rows(logp)
        ll = float(row_lse.sum())
        loglik_path.append(ll)
        gamma = np.exp(logp - row_lse[:, None])  # (N, K)
        nk = gamma.sum(axis=0)
        if nk.min() < 1e-10:
            # empty component: re-seed once at the worst-explained point
            k_bad = int(np.argmin(nk))
            if not reseeded:
                reseeded = True
                worst = int(np.argmin(row_lse))
                means[k_bad] = data[worst]
                variances[k_bad] = global_var
                weights[k_bad] = 1.0 / n
                weights /= weights.sum()
                prev_ll = -np.inf
                continue
            nk = np.maximum(nk, 1e-10)
        weights = nk / n
        means = (gamma.T @ data) / nk[:, None]
        diff = data[:, None, :] - means[None, :, :]
        variances = np.einsum("nk,nkd->kd", gamma, diff * diff) / nk[:, None]
        variances = np.maximum(variances, variance_floor)
        if ll - prev_ll < tol * abs(ll) and np.isfinite(prev_ll):
            break
        prev_ll = ll
    return DiagGmm(weights=weights, means=means, variances=variances,
                   loglik_path=loglik_path)


# ---------------------------------------------------------------------------
# encodings


def soft_assign(gmm: DiagGmm, w: np.ndarray, weighted: bool = False) -> np.ndarray:
    """Normalized per-component assignment of a single descriptor."""
    return _soft_assign_batch(gmm, w[None, :], weighted=weighted)[0]


def _soft_assign_batch(gmm: DiagGmm, W: np.ndarray, weighted: bool = False) -> np.ndarray:
    diff = W[:, None, :] - gmm.means[None, :, :]
    score = -0.5 * np.sum(diff * diff / gmm.variances[None, :, :], axis=2)
    if weighted:
        score += np.log(gmm.weights)[None, :]
        score -= 0.5 * np.sum(np.log(gmm.variances), axis=1)[None, :]
    m = score.max(axis=1, keepdims=True)
    e = np.exp(score - m)
    return e / e.sum(axis=1, keepdims=True)


def _normalize(vec: np.ndarray) -> EncodedVector:
    norm = float(np.sqrt(vec @ vec))
    if norm == 0.0:
        return EncodedVector(values=vec, is_zero=True)
    return EncodedVector(values=vec / norm, is_zero=False)


def fisher_encode(gmm: DiagGmm, W: np.ndarray, weighted: bool = False) -> EncodedVector:
    """Mean- and variance-derivative blocks, concatenated then l2-normalized."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    n = len(W)
    q = _soft_assign_batch(gmm, W, weighted=weighted)  # (N, K)
    sigma = np.sqrt(gmm.variances)  # (K, D)
    z = (W[:, None, :] - gmm.means[None, :, :]) / sigma[None, :, :]  # (N, K, D)
    d_mu = np.einsum("nk,nkd->kd", q, z) / (n * np.sqrt(gmm.weights))[:, None]
    d_sig = np.einsum("nk,nkd->kd", q, z * z - 1.0) / (
        n * np.sqrt(2.0 * gmm.weights)
    )[:, None]
    return _normalize(np.concatenate([d_mu.ravel(), d_sig.ravel()]))


def vlad_encode(cb: Codebook, W: np.ndarray) -> EncodedVector:
    """Stacked hard-assignment residuals, l2-normalized."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    v = np.zeros((cb.K, cb.D))
    for w in W:
        k = cb.tree.nearest(w)
        v[k] += w - cb.centroids[k]
    return _normalize(v.ravel())


def condition_number(gmm: DiagGmm, k: int) -> float:
    """Ratio of the largest to smallest singular value of component k's
    (diagonal) covariance: max variance over min variance."""
    variances = gmm.variances[k]
    return float(variances.max() / variances.min())


# ---------------------------------------------------------------------------
# fitted-encoder container


@dataclass
class ContextEncoder:
    """A fitted Fisher or VLAD encoder applied to raw context vectors."""

    kind: str  # "fisher" | "vlad"
    seed: int
    gmm: DiagGmm | None = None
    codebook: Codebook | None = None
    weighted: bool = False

    @property
    def in_dim(self) -> int:
        return self.gmm.D if self.kind == "fisher" else self.codebook.D

    @property
    def out_dim(self) -> int:
        if self.kind == "fisher":
            return 2 * self.gmm.K * self.gmm.D
        return self.codebook.K * self.codebook.D

    def encode(self, W: np.ndarray) -> EncodedVector:
        if self.kind == "fisher":
            return fisher_encode(self.gmm, W, weighted=self.weighted)
        return vlad_encode(self.codebook, W)


def fit_context_encoder(contexts: np.ndarray, kind: str, K: int, seed: int,
                        weighted: bool = False) -> ContextEncoder:
    if kind == "fisher":
        return ContextEncoder(kind=kind, seed=seed, weighted=weighted,
                              gmm=fit_gmm(contexts, K, seed))
    if kind == "vlad":
        return ContextEncoder(kind=kind, seed=seed,
                              codebook=fit_codebook(contexts, K, seed))
    raise ValueError(f"unknown encoder kind {kind!r}")


def save_encoder(path, enc: ContextEncoder) -> None:
    if enc.kind == "fisher":
        buffers = [enc.gmm.weights, enc.gmm.means, enc.gmm.variances]
        names = ["weights", "means", "variances"]
        K, D = enc.gmm.K, enc.gmm.D
    else:
        buffers = [enc.codebook.centroids]
        names = ["centroids"]
        K, D = enc.codebook.K, enc.codebook.D
    manifest = {
        "kind": enc.kind,
        "K": K,
        "D": D,
        "seed": enc.seed,
        "floor": VARIANCE_FLOOR,
        "weighted": enc.weighted,
        "buffers": [
            {"name": name, "shape": list(buf.shape)}
            for name, buf in zip(names, buffers)
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_ENC_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(np.ascontiguousarray(buf, dtype="<f8").tobytes())


def load_encoder(path) -> ContextEncoder:
    with open(path, "rb") as fh:
        if fh.read(len(_ENC_MAGIC)) != _ENC_MAGIC:
            raise ValueError(f"{path}: not an encoder file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode())
        bufs = {}
        for spec in manifest["buffers"]:
            count = int(np.prod(spec["shape"]))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
            bufs[spec["name"]] = data.reshape(spec["shape"])
    if manifest["kind"] == "fisher":
        gmm = DiagGmm(weights=bufs["weights"], means=bufs["means"],
                      variances=bufs["variances"])
        return ContextEncoder(kind="fisher", seed=manifest["seed"],
                              weighted=manifest["weighted"], gmm=gmm)
    cb = Codebook(centroids=bufs["centroids"], tree=KdTree(bufs["centroids"]))
    return ContextEncoder(kind="vlad", seed=manifest["seed"], codebook=cb)
