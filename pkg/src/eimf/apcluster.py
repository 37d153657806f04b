"""Affinity Propagation over dense negative squared-distance similarities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_PREFERENCE = -10.0
DEFAULT_DAMPING = 0.5
DEFAULT_MAX_ITER = 200
DEFAULT_CONV_WINDOW = 15
# Evidence within this fraction of the similarity scale counts as zero, so
# degenerate fixed points (evidence exactly 0 in exact arithmetic) do not
# flip on rounding noise.
EVIDENCE_TOL = 1e-12


class ClusteringError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClusterResult:
    exemplars: tuple[int, ...]
    assignment: tuple[int, ...]  # member index -> exemplar index
    converged: bool
    iterations_run: int

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)

    def members(self, exemplar: int) -> list[int]:
        return [i for i, e in enumerate(self.assignment) if e == exemplar]


def build_similarity(embs: Sequence[np.ndarray] | np.ndarray, p: float) -> np.ndarray:
    """s(i, j) = -||x_i - x_j||^2 off the diagonal, p on it.

    Distances are formed from explicit differences so the matrix is exactly
    symmetric and duplicate points are exactly zero apart.
    """
    if len(embs) == 0:
        raise ValueError("need at least one embedding")
    dims = {np.shape(e)[-1] for e in embs} if not isinstance(embs, np.ndarray) else {embs.shape[1]}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    x = np.asarray(embs, dtype=np.float64)
    n = x.shape[0]
    s = np.empty((n, n), dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, n * x.shape[1]))
    for lo in range(0, n, chunk):
        diff = x[lo:lo + chunk, None, :] - x[None, :, :]
        s[lo:lo + chunk] = -np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(s, p)
    return s


def update_responsibility(s: np.ndarray, a: np.ndarray, r_old: np.ndarray | None = None, damping: float = 0.0) -> np.ndarray:
    n = s.shape[0]
    rows = np.arange(n)
    as_ = a + s
    first = np.argmax(as_, axis=1)
    max1 = as_[rows, first]
    as_[rows, first] = -np.inf
    max2 = np.max(as_, axis=1)
    r_new = s - max1[:, None]
    r_new[rows, first] = s[rows, first] - max2
    if r_old is None or damping == 0.0:
        return r_new
    return damping * r_old + (1.0 - damping) * r_new


def update_availability(r: np.ndarray, a_old: np.ndarray | None = None, damping: float = 0.0) -> np.ndarray:
    rp = np.maximum(r, 0.0)
    np.fill_diagonal(rp, 0.0)
    col = rp.sum(axis=0)  # sum over k != j of max(0, r(k, j))
    a_new = np.minimum(0.0, np.diag(r)[None, :] + col[None, :] - rp)
    np.fill_diagonal(a_new, col)
    if a_old is None or damping == 0.0:
        return a_new
    return damping * a_old + (1.0 - damping) * a_new


def assign_members(s: np.ndarray, exemplars: Sequence[int]) -> tuple[int, ...]:
    ex = np.asarray(sorted(exemplars), dtype=np.int64)
    if ex.size == 0:
        raise ClusteringError("cannot assign members without exemplars")
    best = ex[np.argmax(s[:, ex], axis=1)]  # argmax takes the first, i.e. lowest, exemplar on ties
    best[ex] = ex
    return tuple(int(b) for b in best)


def run_ap(
    s: np.ndarray,
    damping: float = DEFAULT_DAMPING,
    max_iter: int = DEFAULT_MAX_ITER,
    conv_window: int = DEFAULT_CONV_WINDOW,
) -> ClusterResult:
    """Alternate responsibility and availability updates until the exemplar
    set holds steady (and non-empty) for ``conv_window`` iterations."""
    if not 0.0 <= damping < 1.0:
        raise ValueError(f"damping must be in [0, 1), got {damping}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if n == 1:
        return ClusterResult((0,), (0,), True, 0)

    tol = EVIDENCE_TOL * max(1.0, float(np.max(np.abs(s))))
    r = np.zeros_like(s)
    a = np.zeros_like(s)
    prev: tuple[int, ...] | None = None
    run = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = update_responsibility(s, a, r, damping)
        a = update_availability(r, a, damping)
        if not (np.isfinite(r).all() and np.isfinite(a).all()):
            raise ClusteringError(f"non-finite message values at iteration {it}")
        current = tuple(np.flatnonzero(np.diag(r) + np.diag(a) > tol).tolist())
        run = run + 1 if current == prev else 1
        prev = current
        if current and run >= conv_window:
            converged = True
            break

    exemplars = prev or ()
    if not exemplars:
        evidence = np.diag(r) + np.diag(a)
        exemplars = (int(np.flatnonzero(evidence >= evidence.max() - tol)[0]),)
    return ClusterResult(tuple(exemplars), assign_members(s, exemplars), converged, it)


def typical_sample(member_embs: Sequence[np.ndarray] | np.ndarray) -> int:
    x = np.asarray(member_embs, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("typical_sample needs at least one member")
    dist = np.linalg.norm(x - x.mean(axis=0), axis=1)
    return int(np.argmin(dist))


def cluster_embeddings(
    embs: np.ndarray,
    preference: float = DEFAULT_PREFERENCE,
    damping: float = DEFAULT_DAMPING,
    max_iter: int = DEFAULT_MAX_ITER,
    conv_window: int = DEFAULT_CONV_WINDOW,
) -> ClusterResult:
    return run_ap(build_similarity(embs, preference), damping, max_iter, conv_window)
