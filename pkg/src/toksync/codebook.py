"""Token embedding table and the cosine change measure defined over it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_K = 8192
DEFAULT_DIM = 384

_NORM_TOL = 1e-6


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; zero rows are an error."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero row at index {int(zero[0])}")
    return matrix / norms[:, None]


@dataclass(frozen=True)
class Codebook:
    """K x C table of unit-norm token embeddings.

    ``n_clusters`` records the round-robin cluster layout of synthetically
    generated codebooks (token i belongs to cluster i mod n_clusters); it is
    None for ingested codebooks, which carry no cluster structure.
    """

    embeddings: np.ndarray
    n_clusters: int | None = None

    def __post_init__(self) -> None:
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {emb.shape}")
        k, dim = emb.shape
        if k < 2 or dim < 2:
            raise ValueError(f"codebook needs k >= 2 and dim >= 2, got k={k}, dim={dim}")
        norms = np.linalg.norm(emb, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > _NORM_TOL)
        if bad.size:
            raise ValueError(
                f"embedding row {int(bad[0])} has norm {norms[bad[0]]:.9f}, "
                f"expected 1 within {_NORM_TOL}"
            )
        if self.n_clusters is not None and not 1 <= self.n_clusters <= k:
            raise ValueError(f"n_clusters must be in [1, k], got {self.n_clusters}")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.k):
            bad = ids[(ids < 0) | (ids >= self.k)][0]
            raise ValueError(f"token ID {int(bad)} out of range [0, {self.k})")

    def change_magnitudes(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise 1 - <E[a], E[b]> for paired token-ID arrays.

        Identical IDs score exactly 0.0; rounding in the dot product must not
        leave residue where nothing changed.
        """
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        self._check_ids(a)
        self._check_ids(b)
        dots = np.einsum("ij,ij->i", self.embeddings[a], self.embeddings[b])
        out = 1.0 - dots
        out[a == b] = 0.0
        return out

    def cluster_of(self, token_ids: np.ndarray) -> np.ndarray:
        """Round-robin cluster index per token; requires a clustered codebook."""
        if self.n_clusters is None:
            raise ValueError("codebook has no cluster structure")
        return np.asarray(token_ids, dtype=np.int64) % self.n_clusters

    def cluster_size(self, cluster_id: np.ndarray) -> np.ndarray:
        """Number of tokens assigned to each given cluster under round-robin."""
        if self.n_clusters is None:
            raise ValueError("codebook has no cluster structure")
        cid = np.asarray(cluster_id, dtype=np.int64)
        return (self.k - cid + self.n_clusters - 1) // self.n_clusters


def cosine_change(cb: Codebook, a: int, b: int) -> float:
    """Embedding-space change magnitude between two token IDs, in [0, 2]."""
    out = cb.change_magnitudes(np.array([a]), np.array([b]))
    return float(out[0])


def gen_clustered_codebook(
    k: int = DEFAULT_K,
    dim: int = DEFAULT_DIM,
    n_clusters: int = 64,
    spread: float = 0.15,
    seed: int = 0,
) -> Codebook:
    """Synthetic codebook with round-robin cluster structure.

    Cluster centers are sampled uniformly on the unit sphere; token i is
    assigned to cluster i mod n_clusters and drawn as center + spread * noise,
    renormalized.  With spread small relative to 1, same-cluster tokens are
    nearer in cosine distance than cross-cluster tokens, which is what makes
    cosine-ranked update selection non-degenerate.
    """
    if k < 2 or dim < 2:
        raise ValueError(f"need k >= 2 and dim >= 2, got k={k}, dim={dim}")
    if not 1 <= n_clusters <= k:
        raise ValueError(f"n_clusters must be in [1, k], got {n_clusters}")
    if spread <= 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = normalize_rows(rng.standard_normal((n_clusters, dim)))
    assigned = centers[np.arange(k) % n_clusters]
    rows = normalize_rows(assigned + spread * rng.standard_normal((k, dim)))
    return Codebook(embeddings=rows, n_clusters=n_clusters)
