"""HDBSCAN* clustering and the co-membership clustering ensemble.

The condensed tree is built top-down: at each distance level every minimum
spanning tree edge of that weight is cut at once, so points tied at the same
distance split simultaneously. The resulting partition therefore does not
depend on which of several equal-weight spanning trees was found.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

NOISE = -1


def pairwise_euclidean(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    sq = np.sum(p * p, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * p @ p.T
    d = np.sqrt(np.maximum(d2, 0.0))
    # exact zeros for duplicated points
    same = np.all(p[:, None, :] == p[None, :, :], axis=2)
    d[same] = 0.0
    return (d + d.T) / 2


def check_distance_matrix(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.diag(d) != 0):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    return d


def mutual_reachability(d: np.ndarray, min_samples: int) -> np.ndarray:
    n = len(d)
    k = min(min_samples, n) - 1
    core = np.sort(d, axis=1)[:, k]
    mr = np.maximum(d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def minimum_spanning_tree(d: np.ndarray) -> list[tuple[float, int, int]]:
    """Prim's algorithm on a dense matrix; ties go to the lowest vertex index.

    Returns edges as ``(weight, i, j)`` with ``i < j``, sorted by that tuple.
    """
    n = len(d)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    key = d[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, key)
        v = int(np.argmin(cand))
        u = int(parent[v])
        edges.append((float(d[u, v]), min(u, v), max(u, v)))
        in_tree[v] = True
        closer = (~in_tree) & (d[v] < key)
        key[closer] = d[v][closer]
        parent[closer] = v
    return sorted(edges)


def _components(points: list[int], edges) -> list[list[int]]:
    parent = {p: p for p in points}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for _, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for p in points:
        groups.setdefault(find(p), []).append(p)
    return sorted(groups.values(), key=lambda g: g[0])


def _lam(w: float) -> float:
    return np.inf if w == 0.0 else 1.0 / w


def condensed_tree(mst_edges, n: int, min_cluster_size: int) -> list[dict]:
    """Top-down condensed cluster tree from MST edges.

    Each cluster record carries its members, birth/death lambda, the lambdas
    at which single points dropped out, its children and its stability.
    """
    clusters: list[dict] = []

    def new(members, birth, parent):
        clusters.append({"members": members, "birth": birth, "parent": parent,
                         "children": [], "death": np.inf, "fallen": [], "stability": 0.0})
        if parent is not None:
            clusters[parent]["children"].append(len(clusters) - 1)
        return len(clusters) - 1

    stack = [(new(list(range(n)), 0.0, None), list(range(n)), list(mst_edges))]
    while stack:
        cid, points, edges = stack.pop()
        rec = clusters[cid]
        while True:
            if not edges:
                rec["fallen"].extend([np.inf] * len(points))
                break
            w = max(e[0] for e in edges)
            lam = _lam(w)
            keep = [e for e in edges if e[0] < w]
            comps = _components(points, keep)
            big = [c for c in comps if len(c) >= min_cluster_size]
            for c in comps:
                if len(c) < min_cluster_size:
                    rec["fallen"].extend([lam] * len(c))
            if len(big) == 1:
                points = big[0]
                pset = set(points)
                edges = [e for e in keep if e[1] in pset]
                continue
            if len(big) >= 2:
                rec["death"] = lam
                for c in big:
                    cset = set(c)
                    child = new(c, lam, cid)
                    stack.append((child, c, [e for e in keep if e[1] in cset]))
            break
    for rec in clusters:
        s = sum(lam - rec["birth"] for lam in rec["fallen"])
        for ch in rec["children"]:
            s += len(clusters[ch]["members"]) * (rec["death"] - rec["birth"])
        rec["stability"] = s
    return clusters


def select_eom(clusters: list[dict], allow_single_cluster: bool) -> list[int]:
    """Excess-of-mass selection; returns ids of the selected clusters.

    Without ``allow_single_cluster`` the root is only returned when the
    hierarchy never splits into two clusters of the minimum size.
    """
    if not allow_single_cluster and not clusters[0]["children"]:
        return [0]
    selected = {}
    subtree = {}
    for cid in range(len(clusters) - 1, -1, -1):
        rec = clusters[cid]
        if cid == 0 and not allow_single_cluster:
            break
        child_sum = sum(subtree[ch] for ch in rec["children"])
        if rec["children"] and child_sum > rec["stability"]:
            subtree[cid] = child_sum
            selected[cid] = False
        else:
            subtree[cid] = rec["stability"]
            selected[cid] = True
            todo = list(rec["children"])
            while todo:
                d = todo.pop()
                selected[d] = False
                todo.extend(clusters[d]["children"])
    return sorted(c for c, s in selected.items() if s)


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters 0.. by order of their lowest member index; noise stays -1."""
    labels = np.asarray(labels)
    out = np.full(len(labels), NOISE, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def density_cluster(points: Optional[np.ndarray] = None, *, distances: Optional[np.ndarray] = None,
                    min_cluster_size: int = 2, min_samples: Optional[int] = None,
                    allow_single_cluster: bool = False) -> np.ndarray:
    """HDBSCAN* labels for raw points (Euclidean) or a precomputed distance matrix.

    Returns an int array with contiguous cluster ids from 0 and -1 for noise.
    """
    if (points is None) == (distances is None):
        raise ValueError("pass exactly one of points or distances")
    d = pairwise_euclidean(points) if distances is None else check_distance_matrix(distances)
    n = len(d)
    if n < 2:
        raise ValueError("need at least two points")
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    ms = min_cluster_size if min_samples is None else min_samples
    mr = mutual_reachability(d, ms)
    tree = condensed_tree(minimum_spanning_tree(mr), n, min_cluster_size)
    labels = np.full(n, NOISE, dtype=np.int64)
    for k, cid in enumerate(select_eom(tree, allow_single_cluster)):
        labels[tree[cid]["members"]] = k
    return canonical_labels(labels)


def clusters_of(labels: np.ndarray) -> list[np.ndarray]:
    """Member index arrays per cluster; every noise point is its own singleton."""
    labels = np.asarray(labels)
    out = [np.flatnonzero(labels == c) for c in sorted(set(labels.tolist()) - {NOISE})]
    out.extend(np.array([i]) for i in np.flatnonzero(labels == NOISE))
    return sorted(out, key=lambda c: int(c[0]))


def dists_from_clust(labels: np.ndarray) -> np.ndarray:
    """0 for pairs in the same cluster, 1 otherwise; noise points are singletons."""
    labels = np.asarray(labels)
    same = (labels[:, None] == labels[None, :]) & (labels[:, None] != NOISE)
    d = np.where(same, 0.0, 1.0)
    np.fill_diagonal(d, 0.0)
    return d


def ensemble_distances(neups: np.ndarray, ddifs: np.ndarray, cosine: np.ndarray,
                       min_cluster_size: int = 2, min_samples: Optional[int] = None) -> np.ndarray:
    """Average of the co-membership matrices of the per-feature clusterings.

    The DDif seeds are averaged first, then combined with the NEUP and cosine
    matrices with equal weight.
    """
    neups = np.asarray(neups)
    ddifs = np.asarray(ddifs)
    cosine = np.asarray(cosine)
    n = len(neups)
    if cosine.shape != (n, n) or ddifs.ndim != 3 or ddifs.shape[1] != n:
        raise ValueError("inconsistent number of models across features")
    kw = dict(min_cluster_size=min_cluster_size, min_samples=min_samples)
    cos_d = dists_from_clust(density_cluster(distances=cosine, **kw))
    neup_d = dists_from_clust(density_cluster(neups, **kw))
    ddif_ds = [dists_from_clust(density_cluster(dd, **kw)) for dd in ddifs]
    merged_ddif = sum(ddif_ds) / len(ddif_ds)
    return (merged_ddif + neup_d + cos_d) / 3.0


def ensemble_cluster(neups: np.ndarray, ddifs: np.ndarray, cosine: np.ndarray,
                     min_cluster_size: int = 2, min_samples: Optional[int] = None) -> np.ndarray:
    merged = ensemble_distances(neups, ddifs, cosine, min_cluster_size, min_samples)
    return density_cluster(distances=merged, min_cluster_size=min_cluster_size,
                           min_samples=min_samples)
