"""Profile-similarity baselines: mean features and cluster-label histograms.

Both build one profile vector per user from the user's images and score a
pair of users by the cosine similarity of their profiles.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from grtm.errors import ContractError

logger = logging.getLogger(__name__)

MAX_LLOYD_ITERS = 100


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    vector: np.ndarray
    kind: str


def mean_profile(corpus, u):
    images = corpus.users[u].images
    if images.shape[0] == 0:
        warnings.warn(f"user {u} has no images; using a zero profile", stacklevel=2)
        return UserProfile(u, np.zeros(corpus.dim), "mean")
    return UserProfile(u, images.mean(axis=0), "mean")


def kmeans_pp_seed(X, k, rng):
    """Indices of ``k`` seed rows of ``X`` chosen by D^2 sampling."""
    n = X.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All remaining points coincide with a centre.
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(chosen)


def _assign(X, centroids):
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    inertia = float(np.sum(np.maximum(d2[np.arange(X.shape[0]), labels], 0.0)))
    return labels, inertia


def lloyd(X, centroids, max_iters=MAX_LLOYD_ITERS):
    """Lloyd iterations until the assignment stops changing.

    Returns ``(labels, centroids, inertia_trace)``; a cluster that loses all
    its points keeps its previous centroid.
    """
    centroids = np.array(centroids, dtype=np.float64)
    labels, inertia = _assign(X, centroids)
    trace = [inertia]
    for _ in range(max_iters):
        for k in range(centroids.shape[0]):
            members = labels == k
            if np.any(members):
                centroids[k] = X[members].mean(axis=0)
        new_labels, inertia = _assign(X, centroids)
        trace.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, trace


def kmeans_cluster(corpus, n_clusters, seed, return_trace=False):
    """Cluster all images of the corpus with k-means++ seeding and Lloyd.

    Returns per-user label arrays and the (n_clusters, D) centroids.
    """
    X = corpus.stacked
    if not 1 <= n_clusters <= X.shape[0]:
        raise ContractError(
            f"need 1 <= n_clusters <= {X.shape[0]} images, got {n_clusters}"
        )
    rng = np.random.default_rng(seed)
    seeds = kmeans_pp_seed(X, n_clusters, rng)
    labels, centroids, trace = lloyd(X, X[seeds])
    per_user = [labels[a:b] for a, b in zip(corpus.offsets[:-1], corpus.offsets[1:])]
    if return_trace:
        return per_user, centroids, trace
    return per_user, centroids


def histogram_profile(labels, u, n_clusters):
    counts = np.bincount(np.asarray(labels[u], dtype=np.int64), minlength=n_clusters)
    return UserProfile(u, counts.astype(np.int64), "histogram")


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _cosine_matrix(P):
    norms = np.linalg.norm(P, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = P / safe[:, None]
    S = np.clip(U @ U.T, -1.0, 1.0)
    S[norms == 0, :] = 0.0
    S[:, norms == 0] = 0.0
    return S


def profiles(corpus, method, n_clusters=None, seed=0):
    """Stack all user profiles for ``method`` into an (N, dim) array."""
    if method == "mean":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return np.vstack([mean_profile(corpus, u).vector for u in range(corpus.n_users)])
    if method == "boft":
        if n_clusters is None:
            raise ContractError("boft needs n_clusters")
        labels, _ = kmeans_cluster(corpus, n_clusters, seed)
        return np.vstack(
            [histogram_profile(labels, u, n_clusters).vector for u in range(corpus.n_users)]
        ).astype(np.float64)
    raise ContractError(f"unknown baseline method {method!r}")


def baseline_scores(corpus, method, n_clusters=None, seed=0, pairs=None):
    """Cosine-similarity scores for user pairs.

    Scores every unordered pair u < v unless ``pairs`` is given. Returns a
    dict mapping (u, v) to the similarity.
    """
    P = profiles(corpus, method, n_clusters=n_clusters, seed=seed)
    S = _cosine_matrix(P)
    if pairs is None:
        iu, iv = np.triu_indices(corpus.n_users, k=1)
        pairs = zip(iu.tolist(), iv.tolist())
    return {(u, v): float(S[u, v]) for u, v in pairs}
