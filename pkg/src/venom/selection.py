"""Choose the relevant subset of lake datasets for a query embedding.

Three selectors: cosine similarity and Euclidean distance keep the top
fraction of closest datasets; K-Means clusters the store (cluster count
chosen by silhouette score) and returns the query's cluster, trimmed or
topped up to the configured size bounds.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .seeding import derive_seed


@dataclass(frozen=True)
class SelectionParams:
    method: str = "euclidean"  # cosine | euclidean | kmeans
    fraction: float = 0.2  # the top-fraction lambda
    cluster_range: tuple[int, int] = (2, 8)
    min_size: int = 1
    max_size: int = 10**9
    seed: int = 0
    restarts: int = 1

    def __post_init__(self):
        if self.method not in ("cosine", "euclidean", "kmeans"):
            raise ContractError(f"unknown selection method: {self.method!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ContractError("fraction must be in (0, 1]")
        lo, hi = self.cluster_range
        if lo < 2 or hi < lo:
            raise ContractError(f"invalid cluster range: {self.cluster_range}")
        if not 1 <= self.min_size <= self.max_size:
            raise ContractError("need 1 <= min_size <= max_size")
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")


@dataclass
class SelectionResult:
    """Ranked relevant subset; scores are better-first per method."""

    query_id: str
    method: str
    ranked: list  # list of (dataset_id, score)
    diagnostics: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [dataset_id for dataset_id, _ in self.ranked]


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|); undefined for zero-norm inputs."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ContractError("cosine similarity of a zero-norm vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"length mismatch: {u.shape} vs {v.shape}")
    return float(np.linalg.norm(u - v))


def _candidates(store, exclude=()):
    ids = [i for i in store.ids() if i not in set(exclude)]
    if not ids:
        raise DataError("no candidate embeddings to select from")
    Z = np.stack([store.get(i).z for i in ids])
    return ids, Z


def top_fraction_count(fraction: float, n: int) -> int:
    """ceil(fraction * n), at least 1."""
    return max(1, math.ceil(fraction * n))


def select_top_fraction(z_o, store, params: SelectionParams, exclude=()) -> SelectionResult:
    """Rank every candidate and keep the closest ceil(lambda * N).

    Ties break by ascending dataset id, so selection is deterministic.
    """
    if params.method not in ("cosine", "euclidean"):
        raise ContractError(f"select_top_fraction cannot use method {params.method!r}")
    z_o = np.asarray(z_o, dtype=np.float64)
    ids, Z = _candidates(store, exclude)
    if params.method == "cosine":
        scored = [(cosine_similarity(z_o, Z[i]), ids[i]) for i in range(len(ids))]
        # descending similarity, ids ascending on ties
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
    else:
        scored = [(euclidean_distance(z_o, Z[i]), ids[i]) for i in range(len(ids))]
        scored.sort(key=lambda pair: (pair[0], pair[1]))
    count = top_fraction_count(params.fraction, len(ids))
    ranked = [(dataset_id, score) for score, dataset_id in scored[:count]]
    return SelectionResult(
        query_id="", method=params.method, ranked=ranked,
        diagnostics={"candidates": len(ids), "fraction": params.fraction},
    )


def silhouette(Z, labels) -> float:
    """Mean silhouette score: per point (b - a) / max(a, b).

    a is the mean distance to same-cluster points, b the smallest mean
    distance to any other cluster. Singleton points (and points where
    both means vanish) score 0.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    unique = np.unique(labels)
    if unique.size < 2:
        raise ContractError("silhouette needs at least 2 clusters")
    for lab in unique:
        if not np.any(labels == lab):
            raise ContractError(f"cluster {lab} is empty")
    diff = Z[:, None, :] - Z[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    scores = np.zeros(Z.shape[0])
    for i in range(Z.shape[0]):
        own = labels[i]
        same = (labels == own)
        if same.sum() <= 1:
            scores[i] = 0.0
            continue
        a = dist[i][same].sum() / (same.sum() - 1)
        b = min(dist[i][labels == lab].mean() for lab in unique if lab != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


@dataclass
class KMeansModel:
    centroids: np.ndarray
    labels: np.ndarray
    s: int
    inertia: float
    inertia_trace: list
    iterations: int


def _kmeanspp_init(Z, s: int, rng) -> np.ndarray:
    """D^2-weighted (k-means++) draw of s initial centroids from Z."""
    n = Z.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(s - 1):
        d2 = np.min(
            [((Z - Z[c]) ** 2).sum(axis=1) for c in chosen], axis=0)
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at already-chosen points (duplicates)
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(remaining)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return Z[chosen].copy()


def _lloyd(Z, centroids, max_iters: int, tol: float):
    n, s = Z.shape[0], centroids.shape[0]
    labels = np.zeros(n, dtype=int)
    inertia_trace = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = ((Z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        assigned = d2[np.arange(n), labels]
        inertia_trace.append(float(assigned.sum()))

        new_centroids = centroids.copy()
        for j in range(s):
            members = labels == j
            if members.any():
                new_centroids[j] = Z[members].mean(axis=0)
        # Reseed empty clusters with the farthest currently-assigned points.
        distances = assigned.copy()
        for j in range(s):
            if not (labels == j).any():
                far = int(distances.argmax())
                new_centroids[j] = Z[far]
                distances[far] = -1.0
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break

    d2 = ((Z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return KMeansModel(centroids, labels, s, inertia, inertia_trace, iterations)


def kmeans_fit(Z, s: int, seed: int, max_iters: int = 300, tol: float = 1e-9,
               restarts: int = 5) -> KMeansModel:
    """Best of `restarts` Lloyd runs, each k-means++-seeded from Z.

    Stops when the largest centroid displacement drops below tol; empty
    clusters are reseeded with the point currently farthest from its
    centroid. A single uniformly-seeded run gets stuck in local optima
    far too often even on tiny inputs, hence the D^2 seeding and the
    inertia-ranked restarts. Deterministic per seed.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if s < 2:
        raise ContractError("cluster count s must be >= 2")
    if s > n:
        raise ContractError(f"cannot form {s} clusters from {n} points")
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(derive_seed(seed, "init", restart))
        model = _lloyd(Z, _kmeanspp_init(Z, s, rng), max_iters, tol)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def choose_s(Z, cluster_range: tuple[int, int], seed: int, restarts: int = 1):
    """Fit K-Means for every s in the range; keep the best mean silhouette.

    Ties (including the all-identical degenerate case, where every
    silhouette is 0) resolve to the smallest s. Returns
    (s_star, fitted model, silhouette, diagnostics).
    """
    Z = np.asarray(Z, dtype=np.float64)
    lo, hi = cluster_range
    if lo < 2 or hi < lo or hi > Z.shape[0]:
        raise ContractError(f"invalid cluster range {cluster_range} for {Z.shape[0]} points")
    best = None
    diagnostics = {}
    for s in range(lo, hi + 1):
        fits = [
            kmeans_fit(Z, s, derive_seed(seed, "kmeans", s, r))
            for r in range(restarts)
        ]
        fit = min(fits, key=lambda f: f.inertia)
        if np.unique(fit.labels).size < 2:
            score = 0.0
            diagnostics[f"s{s}.degenerate"] = True
        else:
            score = silhouette(Z, fit.labels)
        diagnostics[f"s{s}.silhouette"] = score
        if best is None or score > best[2]:
            best = (s, fit, score)
    s_star, model, score = best
    diagnostics["chosen_s"] = s_star
    diagnostics["silhouette"] = score
    return s_star, model, score, diagnostics


def select_by_cluster(z_o, store, params: SelectionParams, exclude=()) -> SelectionResult:
    """Cluster the store, take the query's cluster, enforce size bounds.

    Members above max_size are dropped farthest-first from the centroid;
    below min_size, the nearest non-members (by centroid distance) are
    added. Scores are distances to the chosen centroid.
    """
    z_o = np.asarray(z_o, dtype=np.float64)
    ids, Z = _candidates(store, exclude)
    n = len(ids)
    if n < params.min_size:
        raise ContractError(f"store has {n} candidates, fewer than min_size={params.min_size}")
    lo, hi = params.cluster_range
    clipped = min(hi, n - 1)
    if clipped < lo:
        raise ContractError(
            f"cluster range {params.cluster_range} infeasible for {n} candidates"
        )
    s_star, model, score, diagnostics = choose_s(Z, (lo, clipped), params.seed,
                                                 restarts=params.restarts)
    if clipped != hi:
        diagnostics["range_clipped_to"] = clipped

    centroid_d = np.linalg.norm(model.centroids - z_o, axis=1)
    cluster = int(centroid_d.argmin())
    centroid = model.centroids[cluster]
    diagnostics["assigned_cluster"] = cluster

    def by_centroid_distance(indices):
        pairs = [(float(np.linalg.norm(Z[i] - centroid)), ids[i], i) for i in indices]
        pairs.sort(key=lambda t: (t[0], t[1]))
        return pairs

    members = by_centroid_distance([i for i in range(n) if model.labels[i] == cluster])
    outsiders = by_centroid_distance([i for i in range(n) if model.labels[i] != cluster])

    if len(members) > params.max_size:
        diagnostics["trimmed"] = len(members) - params.max_size
        members = members[: params.max_size]
    if len(members) < params.min_size:
        needed = min(params.min_size - len(members), len(outsiders))
        diagnostics["added"] = needed
        members = sorted(members + outsiders[:needed], key=lambda t: (t[0], t[1]))

    ranked = [(dataset_id, dist) for dist, dataset_id, _ in members]
    return SelectionResult(query_id="", method="kmeans", ranked=ranked,
                           diagnostics=diagnostics)


def select(z_o, store, params: SelectionParams, exclude=()) -> SelectionResult:
    """Dispatch on params.method."""
    if params.method == "kmeans":
        return select_by_cluster(z_o, store, params, exclude)
    return select_top_fraction(z_o, store, params, exclude)


def write_selection(result: SelectionResult, csv_path, diagnostics_path=None) -> None:
    """CSV: query_id, method, rank, dataset_id, score (+ key=value side-car)."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "method", "rank", "dataset_id", "score"])
        for rank, (dataset_id, score) in enumerate(result.ranked, start=1):
            writer.writerow([result.query_id, result.method, rank, dataset_id, repr(float(score))])
    if diagnostics_path is not None:
        with open(diagnostics_path, "w", encoding="utf-8") as fh:
            for key in sorted(result.diagnostics):
                fh.write(f"{key} = {result.diagnostics[key]}\n")
