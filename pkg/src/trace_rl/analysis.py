"""Embedding geometry and learning-curve metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .agent import nearest_action

NEVER = None


@dataclass
class ProjectionResult:
    components: np.ndarray  # (k, d), orthonormal rows
    projected: np.ndarray  # (N, k)
    explained_variance_ratio: np.ndarray  # (k,)
    mean: np.ndarray


def _power_iteration(cov: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    d = cov.shape[0]
    # deterministic start that is not orthogonal to generic eigenvectors
    v = np.linspace(1.0, 2.0, d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        lam_new = float(w @ cov @ w)
        converged = np.linalg.norm(cov @ w - lam_new * w) < tol
        v, lam = w, lam_new
        if converged:
            break
    return lam, v


def pca_project(points: np.ndarray, k: int, tol: float = 1e-10, max_iter: int = 10_000) -> ProjectionResult:
    """Top-k principal directions by power iteration with deflation.

    Each component's sign is fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    total = float(np.trace(cov))
    work = cov.copy()
    comps, eigs = [], []
    for _ in range(k):
        lam, v = _power_iteration(work, tol, max_iter)
        # re-orthogonalise against earlier components; deflation leaves round-off
        for c in comps:
            v = v - (v @ c) * c
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            # degenerate remainder: pick the standard basis vector least covered so far
            basis = np.eye(d)
            resid = [np.linalg.norm(b - sum((b @ c) * c for c in comps)) if comps else 1.0 for b in basis]
            v = basis[int(np.argmax(resid))]
            for c in comps:
                v = v - (v @ c) * c
            norm = np.linalg.norm(v)
        v = v / norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = float(v @ cov @ v)
        comps.append(v)
        eigs.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    components = np.array(comps)
    ratios = np.array(eigs) / total if total > 0 else np.zeros(k)
    return ProjectionResult(components, xc @ components.T, ratios, mean)


def cluster_quality(embeddings: np.ndarray, labels: Sequence[Hashable]) -> tuple[float, float, float]:
    """Mean within-group and across-group pairwise distances and their ratio."""
    e = np.asarray(embeddings, dtype=np.float64)
    codes: dict[Hashable, int] = {}
    lab = np.array([codes.setdefault(l, len(codes)) for l in labels])
    if len(lab) != len(e):
        raise ValueError("one label per embedding required")
    if len(codes) < 2:
        raise ValueError("cluster_quality needs at least two groups")
    dist = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)
    iu = np.triu_indices(len(e), k=1)
    same = (lab[:, None] == lab[None, :])[iu]
    pair = dist[iu]
    intra = float(pair[same].mean()) if same.any() else 0.0
    inter = float(pair[~same].mean())
    if inter == 0.0:
        raise ValueError("all embeddings coincide; ratio undefined")
    return intra, inter, intra / inter


def analogy_check(table, plus: Sequence[int], minus: Sequence[int], expected_group: Hashable,
                  group_fn: Callable[[int], Hashable]) -> bool:
    """Does the nearest action to ``sum e(plus) - sum e(minus)`` fall in ``expected_group``?"""
    w = table.weights if hasattr(table, "weights") else np.asarray(table)
    v = np.sum(w[list(plus)], axis=0) - (np.sum(w[list(minus)], axis=0) if len(minus) else 0.0)
    return group_fn(nearest_action(w, v)) == expected_group


def _same_direction(v: Sequence[float], base: Sequence[float]) -> bool:
    v, base = np.asarray(v, dtype=np.float64), np.asarray(base, dtype=np.float64)
    nv, nb = np.linalg.norm(v), np.linalg.norm(base)
    return bool(nv > 0 and nb > 0 and np.allclose(v / nv, base / nb, atol=1e-12))


def alignment_check(source_table, source_labels: Sequence[Sequence[float]], target_table,
                    target_labels: Sequence[Sequence[float]]) -> list[bool]:
    """Per target action: is the nearest aligned source group its own direction?

    Source actions are grouped by displacement label and represented by the
    group centroid. Candidate groups are those whose displacement is a
    positive multiple of some target action's displacement (for an n-step
    source these are the n-fold repeats of each atomic move). Target action
    ``i`` is aligned when the candidate centroid nearest to its embedding
    points the same way as ``target_labels[i]``.
    """
    ws = source_table.weights if hasattr(source_table, "weights") else np.asarray(source_table)
    wt = target_table.weights if hasattr(target_table, "weights") else np.asarray(target_table)
    groups: dict[tuple, list[int]] = {}
    for i, lab in enumerate(source_labels):
        groups.setdefault(tuple(lab), []).append(i)
    candidates = [g for g in groups if any(_same_direction(g, t) for t in target_labels)]
    if not candidates:
        raise ValueError("no source group shares a direction with any target action")
    centroids = np.array([ws[groups[g]].mean(axis=0) for g in candidates])
    out = []
    for i, lab in enumerate(target_labels):
        best = candidates[nearest_action(centroids, wt[i])]
        out.append(_same_direction(best, lab))
    return out


def monotonicity_check(table) -> float:
    """|Spearman rho| between action index and the first principal coordinate."""
    w = table.weights if hasattr(table, "weights") else np.asarray(table)
    proj = pca_project(w, 1).projected[:, 0]
    rho = spearmanr(np.arange(len(w)), proj).statistic
    return float(abs(rho))


@dataclass
class CurveEnsemble:
    curves: np.ndarray  # (seeds, episodes)

    @classmethod
    def from_curves(cls, curves: Sequence[Sequence[float]]) -> "CurveEnsemble":
        if len(curves) == 0:
            raise ValueError("need at least one curve")
        length = min(len(c) for c in curves)
        arr = np.array([np.asarray(c[:length], dtype=np.float64) for c in curves])
        if not np.all(np.isfinite(arr)):
            raise ValueError("curves contain non-finite values")
        return cls(arr)


def bootstrap_band(ensemble: CurveEnsemble, confidence: float = 0.95, resamples: int = 1000,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Percentile bootstrap over seeds: per-episode (mean, low, high)."""
    curves = ensemble.curves
    n = curves.shape[0]
    if n < 2:
        warnings.warn("bootstrap band over a single seed collapses to the curve", stacklevel=2)
        c = curves[0].copy()
        return c, c.copy(), c.copy()
    rng = np.random.default_rng(seed)
    idx = rng.integers(n, size=(resamples, n))
    means = curves[idx].mean(axis=1)
    tail = 100.0 * (1.0 - confidence) / 2.0
    low, high = np.percentile(means, [tail, 100.0 - tail], axis=0)
    return means.mean(axis=0), low, high


def episodes_to_threshold(curve: Sequence[float], threshold: float, window: int = 100) -> int | None:
    """1-based episode at which the trailing-window mean first reaches ``threshold``.

    Returns ``None`` when it never does.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.asarray(curve, dtype=np.float64)
    if len(c) < window:
        warnings.warn(f"curve of length {len(c)} shorter than window {window}", stacklevel=2)
        return NEVER
    csum = np.concatenate([[0.0], np.cumsum(c)])
    means = (csum[window:] - csum[:-window]) / window
    hits = np.nonzero(means >= threshold - 1e-12)[0]
    return int(hits[0] + window) if len(hits) else NEVER
