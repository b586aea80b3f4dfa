"""Synthetic corpora and links sampled from the generative model.

For each user a topic-proportion vector is drawn from a symmetric
Dirichlet, every image picks a topic from it and is drawn from that
topic's Gaussian, and every unordered user pair is linked with probability
``min(1, exp(eta . (zbar_u * zbar_v) + nu))`` where ``zbar_u`` is the
user's empirical topic frequency vector.
"""

from dataclasses import dataclass, field

import numpy as np

from grtm.errors import ContractError
from grtm.mathkit import Covariance
from grtm.model import Corpus, LinkModel, LinkSet, TopicParams


@dataclass(frozen=True)
class GenConfig:
    N: int = 60
    images_per_user: tuple = (40, 40)
    K: int = 5
    D: int = 8
    alpha: float = 0.3
    topic_mean_separation: float = 10.0
    sigma: float = 1.0
    eta_true: tuple | None = None
    nu_true: float = -6.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.images_per_user
        if lo < 0 or hi < lo:
            raise ContractError(f"invalid images_per_user range {self.images_per_user}")
        if self.N < 1 or self.K < 1 or self.D < 1:
            raise ContractError("N, K and D must be positive")
        if not self.alpha > 0:
            raise ContractError("alpha must be positive")
        if not self.topic_mean_separation > 0:
            raise ContractError("topic_mean_separation must be positive")
        if not self.sigma > 0:
            raise ContractError("sigma must be positive")
        if self.eta_true is not None and len(self.eta_true) != self.K:
            raise ContractError("eta_true must have K entries")

    def eta(self):
        # Default: links strongly favour users sharing topics.
        if self.eta_true is None:
            return np.full(self.K, 6.0)
        return np.asarray(self.eta_true, dtype=np.float64)


@dataclass
class GroundTruth:
    theta: np.ndarray
    z: list
    topic_params: TopicParams
    link_model_true: LinkModel
    zbar: np.ndarray = field(default=None)


def _gamma_sample(shape, rng):
    """One Gamma(shape, 1) draw by Marsaglia-Tsang rejection.

    Shapes below one use the boost Gamma(a) = Gamma(a + 1) * U^(1/a).
    """
    boost = 1.0
    if shape < 1.0:
        boost = rng.random() ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = (1.0 + c * x) ** 3
        if v <= 0:
            continue
        u = rng.random()
        if np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
            return d * v * boost


def dirichlet_sample(alpha_vec, rng):
    alpha_vec = np.asarray(alpha_vec, dtype=np.float64)
    if np.any(~(alpha_vec > 0)):
        raise ContractError("Dirichlet parameters must be positive")
    while True:
        g = np.array([_gamma_sample(a, rng) for a in alpha_vec])
        total = g.sum()
        if total > 0:
            return g / total
        # Every draw underflowed (only for tiny alpha); redraw.


def planted_means(K, D, separation, sigma, rng):
    """K means with pairwise distance ``separation * sigma``.

    Uses scaled basis vectors when K <= D; otherwise random points on a
    sphere rejected until every pair is at least that far apart.
    """
    dist = separation * sigma
    if K <= D:
        means = np.zeros((K, D))
        means[np.arange(K), np.arange(K)] = dist / np.sqrt(2.0)
        return means
    radius = dist
    for _ in range(10000):
        pts = rng.standard_normal((K, D))
        pts *= radius / np.linalg.norm(pts, axis=1, keepdims=True)
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if np.sqrt(d2.min()) >= dist:
            return pts
        radius *= 1.05
    raise ContractError(f"could not place {K} means {dist} apart in {D} dimensions")


def sample_corpus(cfg):
    """Draw (corpus, links, ground_truth) from ``cfg``; deterministic in the seed."""
    rng = np.random.default_rng(cfg.seed)
    K, D = cfg.K, cfg.D
    means = planted_means(K, D, cfg.topic_mean_separation, cfg.sigma, rng)
    cov = Covariance.diagonal(np.full(D, cfg.sigma**2))
    topics = TopicParams(means, [cov] * K)
    eta, nu = cfg.eta(), float(cfg.nu_true)

    lo, hi = cfg.images_per_user
    theta = np.empty((cfg.N, K))
    zs, images = [], []
    zbar = np.empty((cfg.N, K))
    for u in range(cfg.N):
        theta[u] = dirichlet_sample(np.full(K, cfg.alpha), rng)
        n_u = int(rng.integers(lo, hi + 1))
        z = rng.choice(K, size=n_u, p=theta[u]) if n_u else np.zeros(0, dtype=np.int64)
        x = means[z] + cfg.sigma * rng.standard_normal((n_u, D))
        zs.append(z.astype(np.int64))
        images.append(x)
        zbar[u] = np.bincount(z, minlength=K) / n_u if n_u else np.full(K, 1.0 / K)

    iu, iv = np.triu_indices(cfg.N, k=1)
    logits = (zbar[iu] * zbar[iv]) @ eta + nu
    prob = np.minimum(1.0, np.exp(np.minimum(logits, 0.0)))
    linked = rng.random(iu.shape[0]) < prob
    links = LinkSet(zip(iu[linked].tolist(), iv[linked].tolist()))

    truth = GroundTruth(theta, zs, topics, LinkModel(eta, nu), zbar)
    return Corpus(images, dim=D), links, truth
