"""K-means (k-means++ seeding, Lloyd iterations) with elbow support and
behaviour labelling of the fitted clusters."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

DEFAULT_K = 3
DEFAULT_SEED = 42
DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6

BEHAVIORS = ("conservative", "normal", "aggressive")


class ClusteringError(ValueError):
    pass


class TooFewPoints(ClusteringError):
    pass


class ZeroVarianceFeature(ClusteringError):
    def __init__(self, index: int):
        super().__init__(f"feature {index} has zero variance; cannot standardize")
        self.index = index


@dataclass(frozen=True)
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray  # population std

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def standardize(features) -> tuple[np.ndarray, StandardScaler]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewPoints("standardize needs at least 2 rows")
    mean = x.mean(axis=0)
    std = np.sqrt(((x - mean) ** 2).mean(axis=0))
    for j in np.flatnonzero(~(std > 0)):
        raise ZeroVarianceFeature(int(j))
    scaler = StandardScaler(mean, std)
    return scaler.transform(x), scaler


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def kmeans_pp_init(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centre uniform, each further centre drawn with
    probability proportional to squared distance to the nearest chosen centre."""
    x = _as_points(points)
    n = len(x)
    if k < 1 or n < k:
        raise TooFewPoints(f"need n >= k >= 1, got n={n}, k={k}")
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # Every remaining point coincides with a chosen centre.
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def assign(points, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point (ties to the lowest index) and its squared distance."""
    d = _sq_dists(_as_points(points), np.asarray(centroids, dtype=np.float64))
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(d)), labels]


def lloyd_iterate(points, centroids) -> tuple[np.ndarray, np.ndarray, float]:
    """One assignment + update step.

    Returns (new centroids, assignments, WCSS of the new centroids under the new
    assignments). A cluster that ends up empty is re-seeded with the point that
    lies farthest from its nearest centroid.
    """
    x = _as_points(points)
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    k = len(c)
    labels, d = assign(x, c)
    counts = np.bincount(labels, minlength=k)
    if (counts == 0).any():
        taken = np.zeros(len(x), dtype=bool)
        for j in np.flatnonzero(counts == 0):
            movable = ~taken & (counts[labels] > 1)
            if not movable.any():
                continue
            cand = np.flatnonzero(movable)
            i = cand[np.argmax(d[cand])]
            counts[labels[i]] -= 1
            labels[i] = j
            counts[j] = 1
            taken[i] = True
    new = c.copy()
    for j in range(k):
        members = x[labels == j]
        if len(members):
            new[j] = members.mean(axis=0)
    diff = x - new[labels]
    wcss = float(np.einsum("nd,nd->", diff, diff))
    return new, labels, wcss


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # in the space the points were given in
    labels: np.ndarray
    wcss: float
    seed: int
    iterations: int
    converged: bool
    restart: int = 0
    scaler: StandardScaler | None = None
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def centroids_original(self) -> np.ndarray:
        if self.scaler is None:
            return self.centroids
        return self.scaler.inverse_transform(self.centroids)

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if self.scaler is not None:
            x = self.scaler.transform(x)
        return assign(x, self.centroids)[0]


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, restart]))


def _run_restart(x, k, seed, r, max_iter, tol):
    c = kmeans_pp_init(x, k, restart_rng(seed, r))
    prev_labels = None
    prev = np.inf
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        c, labels, wcss = lloyd_iterate(x, c)
        history.append(wcss)
        stable = prev_labels is not None and np.array_equal(labels, prev_labels)
        if stable or prev - wcss < tol:
            converged = True
            break
        prev, prev_labels = wcss, labels
    return ClusterModel(k, c, labels, wcss, seed, it, converged, restart=r, history=history)


def kmeans(
    points,
    k: int = DEFAULT_K,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    jobs: int = 1,
) -> ClusterModel:
    """Best of ``restarts`` k-means runs by final WCSS (ties to the earlier restart).

    Each restart draws its seeding from its own generator derived from
    ``(seed, restart)``, so the result does not depend on ``jobs``.
    """
    x = _as_points(points)
    if k < 1 or len(x) < k:
        raise TooFewPoints(f"need at least k={k} points, got {len(x)}")
    if restarts < 1 or max_iter < 1 or tol < 0:
        raise ValueError("restarts and max_iter must be >= 1 and tol >= 0")
    args = [(x, k, seed, r, max_iter, tol) for r in range(restarts)]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            runs = list(pool.map(lambda a: _run_restart(*a), args))
    else:
        runs = [_run_restart(*a) for a in args]
    return min(runs, key=lambda m: (m.wcss, m.restart))


def fit(features, k=DEFAULT_K, seed=DEFAULT_SEED, restarts=DEFAULT_RESTARTS,
        max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, scale=True, jobs=1) -> ClusterModel:
    """Cluster raw feature rows, z-scoring them first unless ``scale`` is off."""
    x = np.asarray(features, dtype=np.float64)
    scaler = None
    if scale:
        x, scaler = standardize(x)
    model = kmeans(x, k, seed, restarts, max_iter, tol, jobs)
    model.scaler = scaler
    return model


@dataclass
class ElbowResult:
    ks: list[int]
    wcss: list[float]
    knee: int | None

    def rows(self):
        return list(zip(self.ks, self.wcss))


def knee_estimate(ks, wcss) -> int | None:
    """k maximising wcss(k-1) - 2 wcss(k) + wcss(k+1); None with < 3 points."""
    if len(ks) < 3:
        return None
    w = np.asarray(wcss, dtype=np.float64)
    second = w[:-2] - 2 * w[1:-1] + w[2:]
    return int(ks[1 + int(np.argmax(second))])


def elbow_curve(points, k_min=1, k_max=10, seed=DEFAULT_SEED, restarts=DEFAULT_RESTARTS,
                max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, jobs=1) -> ElbowResult:
    x = _as_points(points)
    if not 1 <= k_min <= k_max:
        raise ValueError(f"invalid k range [{k_min}, {k_max}]")
    if k_max > len(x):
        raise TooFewPoints(f"k_max={k_max} exceeds number of points {len(x)}")
    ks = list(range(k_min, k_max + 1))
    wcss = [kmeans(x, k, seed, restarts, max_iter, tol, jobs).wcss for k in ks]
    return ElbowResult(ks, wcss, knee_estimate(ks, wcss))


@dataclass(frozen=True)
class BehaviorLabeling:
    cluster_to_label: dict[int, str]
    ordering_feature: int = 0

    def label(self, cluster: int) -> str:
        return self.cluster_to_label[int(cluster)]


def assign_behavior_labels(model: ClusterModel, scaler: StandardScaler | None = None,
                           ordering_feature: int = 0) -> BehaviorLabeling:
    """Name clusters by their centroid's value of one feature (DV1 by default):
    lowest conservative, middle normal, highest aggressive. Any k other than 3
    gets neutral names ``cluster-<i>``."""
    if model.k != 3:
        return BehaviorLabeling({j: f"cluster-{j}" for j in range(model.k)}, ordering_feature)
    scaler = scaler if scaler is not None else model.scaler
    centres = model.centroids if scaler is None else scaler.inverse_transform(model.centroids)
    order = np.argsort(centres[:, ordering_feature], kind="stable")
    return BehaviorLabeling({int(j): BEHAVIORS[rank] for rank, j in enumerate(order)}, ordering_feature)


def model_to_dict(model: ClusterModel, labeling: BehaviorLabeling, keys=None) -> dict:
    """JSON-ready description of a fitted model (see ``model_from_dict``)."""
    doc = {
        "k": model.k,
        "seed": model.seed,
        "restart": model.restart,
        "iterations": model.iterations,
        "converged": model.converged,
        "wcss": model.wcss,
        "standardized": model.scaler is not None,
        "centroidsStandardized": model.centroids.tolist() if model.scaler is not None else None,
        "centroidsOriginal": model.centroids_original.tolist(),
        "scaler": None
        if model.scaler is None
        else {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "orderingFeature": labeling.ordering_feature,
        "behaviorMap": {str(j): lab for j, lab in sorted(labeling.cluster_to_label.items())},
    }
    if keys is not None:
        doc["assignments"] = [[int(r), int(t), int(c)] for (r, t), c in zip(keys, model.labels)]
    return doc


def model_from_dict(doc: dict):
    """Inverse of ``model_to_dict``: returns (model, labeling, keys)."""
    scaler = None
    if doc.get("scaler"):
        scaler = StandardScaler(np.asarray(doc["scaler"]["mean"], float), np.asarray(doc["scaler"]["std"], float))
    centroids = doc["centroidsStandardized"] if scaler is not None else doc["centroidsOriginal"]
    assignments = doc.get("assignments", [])
    model = ClusterModel(
        k=int(doc["k"]),
        centroids=np.asarray(centroids, dtype=np.float64),
        labels=np.array([a[2] for a in assignments], dtype=np.int64),
        wcss=float(doc["wcss"]),
        seed=int(doc["seed"]),
        iterations=int(doc["iterations"]),
        converged=bool(doc["converged"]),
        restart=int(doc.get("restart", 0)),
        scaler=scaler,
    )
    labeling = BehaviorLabeling(
        {int(j): lab for j, lab in doc["behaviorMap"].items()}, int(doc.get("orderingFeature", 0))
    )
    keys = [(int(a[0]), int(a[1])) for a in assignments]
    return model, labeling, keys
