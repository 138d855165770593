"""Shared numerical kernels: activations, KL divergence, PCA, seeded RNG.

Everything here is pure and 64-bit; random draws always flow through an
explicit `Rng` so that pipelines are reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class Rng:
    """Deterministic random stream addressed by (seed, split-key path).

    `split` derives an independent child stream from the parent's seed and
    a key path without consuming parent state, so concurrent pipeline
    stages can draw in any order and still reproduce exactly. Splitting
    twice with the same keys yields the same stream by design.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(_spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.spawn_key))
        )

    def split(self, *keys: int | str) -> "Rng":
        return Rng(self.seed, self.spawn_key + tuple(_key_code(k) for k in keys))

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, spawn_key={self.spawn_key})"


def _key_code(key: int | str) -> int:
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "little")
    code = int(key)
    if not 0 <= code < 2**32:
        raise ValueError(f"integer split key must be in [0, 2^32), got {key}")
    return code


def softmax(logits) -> np.ndarray:
    """Stable softmax of a logit vector (max-subtracted before exp)."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def kl_divergence(p, q, eps: float = 1e-8) -> float:
    """KL(p || q) with eps-smoothing so absent classes stay finite.

    Both inputs get eps added to every entry and are renormalized before
    the sum, which keeps the score finite (and zero for identical inputs)
    even when one side is missing a class entirely.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("distributions must be nonnegative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    ps = p + eps
    ps /= ps.sum()
    qs = q + eps
    qs /= qs.sum()
    return float(np.sum(ps * np.log(ps / qs)))


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Fitted principal axes: mean, orthonormal components (rows), variances."""

    mean: np.ndarray  # [d]
    components: np.ndarray  # [k, d], rows orthonormal
    eigenvalues: np.ndarray  # [k], descending, >= 0
    explained_variance_ratio: np.ndarray  # [k]

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def pca_fit(x, k: int) -> PcaModel:
    """Fit a k-component PCA of the rows of x (sample covariance, n-1).

    Uses the d x d covariance eigendecomposition when d <= n and the
    n x n Gram trick otherwise; component signs are fixed so the first
    nonzero coordinate of each axis is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError("pca_fit needs at least 2 rows")
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range for {n}x{d} data")
    mean = x.mean(axis=0)
    xc = x - mean
    total_var = float((xc * xc).sum()) / (n - 1)

    if d <= n:
        cov = (xc.T @ xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:k]
        eigenvalues = np.clip(evals[order], 0.0, None)
        components = np.ascontiguousarray(evecs[:, order].T)
    else:
        gram = (xc @ xc.T) / (n - 1)
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:k]
        eigenvalues = np.clip(evals[order], 0.0, None)
        components = np.zeros((k, d))
        for i in range(k):
            lam = eigenvalues[i]
            if lam > 1e-12:
                v = xc.T @ evecs[:, order[i]]
                components[i] = v / np.linalg.norm(v)
        components = _complete_zero_rows(components)

    components = _fix_signs(components)
    if total_var > 0.0:
        ratio = eigenvalues / total_var
    else:
        ratio = np.zeros(k)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues,
                    explained_variance_ratio=ratio)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    """Project rows of x onto the principal axes: (x - mean) @ components.T."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"expected [n, {model.n_features}] input, got shape {x.shape}")
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, z) -> np.ndarray:
    """Map projections back to the original space: z @ components + mean."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.n_components:
        raise ValueError(f"expected [n, {model.n_components}] input, got shape {z.shape}")
    return z @ model.components + model.mean


def _fix_signs(components: np.ndarray) -> np.ndarray:
    out = components.copy()
    for row in out:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return out


def _complete_zero_rows(components: np.ndarray) -> np.ndarray:
    """Fill all-zero rows (zero-variance axes from the Gram path) with a
    deterministic orthonormal completion against the standard basis."""
    out = components.copy()
    zero_rows = [i for i in range(out.shape[0]) if not np.any(np.abs(out[i]) > 1e-12)]
    if not zero_rows:
        return out
    basis = [out[i] for i in range(out.shape[0]) if i not in zero_rows]
    d = out.shape[1]
    e = 0
    for i in zero_rows:
        while e < d:
            v = np.zeros(d)
            v[e] = 1.0
            e += 1
            for b in basis:
                v -= np.dot(v, b) * b
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                v /= norm
                out[i] = v
                basis.append(v)
                break
        else:
            raise ValueError("cannot complete orthonormal basis")
    return out
