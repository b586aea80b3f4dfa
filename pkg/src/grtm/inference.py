"""Coordinate-ascent variational EM for the Gaussian relational topic model.

One iteration of :func:`fit` performs, in order,

1. a sweep over users updating responsibilities ``phi`` then Dirichlet
   parameters ``gamma``;
2. the closed-form Gaussian topic update;
3. the closed-form link-parameter update;

and records the evidence lower bound. The per-user sweep reads a frozen
snapshot of every other user's mean responsibilities taken at the start of
the sweep, so its result does not depend on the order users are visited.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from grtm.baselines import kmeans_pp_seed, lloyd
from grtm.errors import ContractError, NumericError
from grtm.linkpredict import pair_pi
from grtm.mathkit import Covariance, digamma, log_sum_exp
from grtm.model import FittedModel, Hyperparams, LinkModel, TopicParams, VariationalState, validate

logger = logging.getLogger(__name__)

EMPTY_TOPIC_MASS = 1e-8
INIT_SPREAD = 0.9
INIT_RESTARTS = 4
ETA_FORMS = ("rtm", "printed")


@dataclass(frozen=True)
class FitConfig:
    hyperparams: Hyperparams = Hyperparams()
    init_strategy: str = "kmeans_pp"
    log_every: int = 0
    eta_form: str = "rtm"

    def __post_init__(self):
        if self.eta_form not in ETA_FORMS:
            raise ContractError(f"unknown eta_form {self.eta_form!r}")
        if self.init_strategy not in ("kmeans_pp", "random_assign"):
            raise ContractError(f"unknown init_strategy {self.init_strategy!r}")


def _rows(corpus, u):
    return slice(int(corpus.offsets[u]), int(corpus.offsets[u + 1]))


def _split_rows(corpus, stacked):
    return [stacked[_rows(corpus, u)].copy() for u in range(corpus.n_users)]


def _global_covariance(X, kind):
    if X.shape[0] == 0:
        raise ContractError("corpus has no images")
    if kind == "diagonal":
        return Covariance.diagonal(X.var(axis=0))
    diff = X - X.mean(axis=0)
    return Covariance.full(diff.T @ diff / X.shape[0])


def _soft_assign(labels, K):
    if K == 1:
        return np.ones((labels.shape[0], 1))
    phi = np.full((labels.shape[0], K), (1.0 - INIT_SPREAD) / (K - 1))
    phi[np.arange(labels.shape[0]), labels] = INIT_SPREAD
    return phi


def init_state(corpus, cfg):
    """Initial variational state and topics.

    ``kmeans_pp`` runs k-means (k-means++ seeding, a few restarts, best
    inertia kept) on all images; ``random_assign`` draws a random topic per
    image and uses the per-topic means. Every covariance starts at the
    global per-dimension variance and responsibilities are the hard
    assignments softened to 0.9 on the chosen topic.
    """
    hp = cfg.hyperparams
    K = hp.K
    X = corpus.stacked
    n = X.shape[0]
    rng = np.random.default_rng(hp.seed)
    strategy = cfg.init_strategy
    if strategy == "kmeans_pp" and K > n:
        warnings.warn(
            f"K = {K} exceeds the {n} available images; falling back to random_assign",
            stacklevel=2,
        )
        strategy = "random_assign"

    if strategy == "kmeans_pp":
        best = None
        for _ in range(INIT_RESTARTS):
            seeds = kmeans_pp_seed(X, K, rng)
            labels, centroids, trace = lloyd(X, X[seeds])
            if best is None or trace[-1] < best[2]:
                best = (labels, centroids, trace[-1])
        labels, means = best[0], best[1]
    else:
        labels = rng.integers(K, size=n)
        means = np.empty((K, corpus.dim))
        gmean = X.mean(axis=0) if n else np.zeros(corpus.dim)
        for k in range(K):
            members = labels == k
            # Empty topics start at a random image (or the global mean) plus jitter.
            base = X[members].mean(axis=0) if np.any(members) else (
                X[rng.integers(n)] if n else gmean
            )
            means[k] = base
        scale = np.sqrt(X.var(axis=0)) if n else np.ones(corpus.dim)
        means = means + 1e-3 * scale * rng.standard_normal(means.shape)

    cov = _global_covariance(X, hp.cov_kind)
    topics = TopicParams(means, [cov] * K)
    phi = _split_rows(corpus, _soft_assign(labels, K))
    gamma = np.full((corpus.n_users, K), hp.alpha)
    state = VariationalState(phi, gamma)
    for u in range(corpus.n_users):
        state.gamma[u] = update_gamma(state, hp.alpha, u)
    return state, topics


def expected_log_theta(gamma):
    """E_q[log theta] = digamma(gamma) - digamma(sum(gamma)), row-wise."""
    gamma = np.asarray(gamma, dtype=np.float64)
    return digamma(gamma) - digamma(np.sum(gamma, axis=-1, keepdims=True))


def _link_messages(phibar, link_model, neighbors):
    """For every user, sum over linked v of eta * phibar_v (unscaled)."""
    out = np.zeros_like(phibar)
    for u, nbrs in enumerate(neighbors):
        if nbrs:
            out[u] = link_model.eta * phibar[nbrs].sum(axis=0)
    return out


def update_phi(corpus, state, topics, link_model, train_links, u, phibar=None, log_dens=None):
    """New (N_u, K) responsibilities for user ``u``.

    ``phibar`` is the snapshot of mean responsibilities used for the link
    term; it defaults to the current state's. ``log_dens`` optionally
    supplies the precomputed (N_u, K) Gaussian log densities.
    """
    rows = corpus.users[u].images
    n_u = rows.shape[0]
    if n_u == 0:
        return np.zeros((0, topics.K))
    if phibar is None:
        phibar = state.phibar()
    if log_dens is None:
        log_dens = topics.log_densities(rows)
    nbrs = [v for v in range(corpus.n_users) if v != u and (u, v) in train_links]
    msg = link_model.eta * phibar[nbrs].sum(axis=0) if nbrs else np.zeros(topics.K)
    logw = log_dens + expected_log_theta(state.gamma[u])[None, :] + msg[None, :] / n_u
    return np.exp(logw - log_sum_exp(logw, axis=1)[:, None])


def update_gamma(state, alpha, u):
    rows = state.phi[u]
    return alpha + rows.sum(axis=0)


def update_topics(corpus, state, cov_kind, previous=None):
    """Responsibility-weighted Gaussian topic estimates.

    A topic whose total responsibility is below ``EMPTY_TOPIC_MASS`` keeps
    its previous mean (from ``previous``, else the global mean) and gets
    the global covariance.
    """
    X = corpus.stacked
    phi = state.stacked_phi()
    K = phi.shape[1]
    mass = phi.sum(axis=0)
    means = np.empty((K, corpus.dim))
    covs = []
    global_cov = None
    for k in range(K):
        if mass[k] < EMPTY_TOPIC_MASS:
            if global_cov is None:
                global_cov = _global_covariance(X, cov_kind)
            means[k] = previous.means[k] if previous is not None else X.mean(axis=0)
            covs.append(global_cov)
            continue
        w = phi[:, k]
        mu = (w @ X) / mass[k]
        diff = X - mu
        if cov_kind == "diagonal":
            covs.append(Covariance.diagonal((w @ (diff * diff)) / mass[k]))
        else:
            covs.append(Covariance.full((diff * w[:, None]).T @ diff / mass[k]))
        means[k] = mu
    return TopicParams(means, covs)


def link_statistics(phibar, train_links):
    """(M, Pi-bar): number of training links and the summed pair products."""
    edges = train_links.as_array()
    M = edges.shape[0]
    if M == 0:
        return 0, np.zeros(phibar.shape[1])
    Pi = pair_pi(phibar[edges[:, 0]], phibar[edges[:, 1]]).sum(axis=0)
    return M, Pi


def update_link_params(state, train_links, rho, K, phibar=None, eta_form="rtm"):
    """Closed-form link parameters (eta, nu) from the training links.

    nu  = log(M - sum(Pi)) - log(rho (1 - 1/K) + M - sum(Pi))

    with M the number of training links and Pi the sum over training links
    of phibar_u * phibar_v. ``eta_form`` selects the eta update:

    ``"rtm"``
        eta = log(Pi) - log(Pi + rho / K^2) - nu, the joint maximiser of the
        link terms of the bound together with :func:`link_regularizer`.
    ``"printed"``
        eta = log(Pi) - log(Pi + rho / K^2 - nu), with nu inside the second
        logarithm. Every eta_k is then negative, so pairs sharing topics
        score lower; kept for comparison only.
    """
    if eta_form not in ETA_FORMS:
        raise ContractError(f"eta_form must be one of {ETA_FORMS}, got {eta_form!r}")
    if len(train_links) == 0:
        raise ContractError("link parameters need at least one training link")
    if phibar is None:
        phibar = state.phibar()
    M, Pi = link_statistics(phibar, train_links)
    slack = M - Pi.sum()
    if not slack > 0:
        raise NumericError(
            f"degenerate responsibilities: M - sum(Pi) = {slack:.3e} <= 0 "
            f"(every linked pair shares one topic exclusively)"
        )
    if np.any(~(Pi > 0)):
        bad = np.nonzero(~(Pi > 0))[0].tolist()
        raise NumericError(
            f"degenerate responsibilities: Pi is zero for topics {bad} "
            f"(no linked pair shares those topics)"
        )
    nu = np.log(slack) - np.log(rho * (1.0 - 1.0 / K) + slack)
    if eta_form == "rtm":
        eta = np.log(Pi) - np.log(Pi + rho / K**2) - nu
    else:
        eta = np.log(Pi) - np.log(Pi + rho / K**2 - nu)
    return LinkModel(eta, float(nu))


def link_regularizer(link_model, rho, K):
    """Expected log-likelihood of the rho pseudo-observed absent links.

    Treats rho negative observations whose topic-pair indicator is uniform
    over the K x K topic pairs: the K diagonal pairs contribute through
    eta_k + nu and the K(K-1) off-diagonal pairs through nu alone.
    """
    if rho == 0:
        return 0.0
    eta, nu = link_model.eta, link_model.nu
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = np.log(-np.expm1(eta + nu))
        total = np.sum(diag) / K**2
        if K > 1:
            total += (1.0 - 1.0 / K) * np.log(-np.expm1(nu))
    return float(rho * total)


def elbo_terms(corpus, state, topics, link_model, alpha, train_links, rho, phibar=None):
    """The evidence lower bound split into its named terms."""
    K = topics.K
    X = corpus.stacked
    phi = state.stacked_phi()
    log_dens = topics.log_densities(X)
    elog = expected_log_theta(state.gamma)
    owner = corpus.owner
    gsum = state.gamma.sum(axis=1)
    terms = {
        "likelihood": float(np.sum(phi * log_dens)),
        "assignment": float(np.sum(phi * elog[owner])),
        "prior": float(
            corpus.n_users * (gammaln(K * alpha) - K * gammaln(alpha))
            + (alpha - 1.0) * np.sum(elog)
        ),
        "entropy_theta": float(
            -np.sum(gammaln(gsum))
            + np.sum(gammaln(state.gamma))
            - np.sum((state.gamma - 1.0) * elog)
        ),
        "entropy_z": float(-np.sum(xlogy(phi, phi))),
    }
    if phibar is None:
        phibar = state.phibar()
    M, Pi = link_statistics(phibar, train_links)
    terms["links"] = float(link_model.eta @ Pi + M * link_model.nu)
    terms["link_regularizer"] = link_regularizer(link_model, rho, K)
    return terms


def elbo(corpus, state, topics, link_model, alpha, train_links, rho):
    return float(sum(elbo_terms(corpus, state, topics, link_model, alpha, train_links, rho).values()))


def sweep_users(corpus, state, topics, link_model, alpha, neighbors):
    """Update phi then gamma for every user against a frozen phibar snapshot."""
    K = topics.K
    X = corpus.stacked
    phibar = state.phibar()
    log_dens = topics.log_densities(X)
    counts = corpus.counts
    msg = _link_messages(phibar, link_model, neighbors)
    scale = np.where(counts > 0, counts, 1)
    owner = corpus.owner
    logw = log_dens + expected_log_theta(state.gamma)[owner] + (msg / scale[:, None])[owner]
    phi = np.exp(logw - log_sum_exp(logw, axis=1)[:, None])
    state.phi = _split_rows(corpus, phi)
    for u in range(corpus.n_users):
        state.gamma[u] = update_gamma(state, alpha, u)
    return state


def fit(corpus, train_links, cfg=None, callback=None):
    """Run variational EM until the ELBO stabilises.

    Stops when the relative ELBO change drops below ``elbo_rel_tol`` or
    after ``max_iters`` iterations. ``callback(iteration, model)``, when
    given, is invoked after every iteration.
    """
    cfg = cfg or FitConfig()
    hp = cfg.hyperparams
    problems = validate(corpus, train_links)
    if problems:
        raise ContractError("invalid input: " + "; ".join(problems[:5]))
    if len(train_links) == 0:
        raise ContractError("fit needs at least one training link")
    if corpus.n_total == 0:
        raise ContractError("corpus has no images")

    state, topics = init_state(corpus, cfg)
    neighbors = train_links.neighbors(corpus.n_users)
    try:
        link_model = update_link_params(state, train_links, hp.rho, hp.K, eta_form=cfg.eta_form)
    except NumericError as exc:
        raise NumericError(f"iteration 0: {exc}") from exc
    trace = [elbo(corpus, state, topics, link_model, hp.alpha, train_links, hp.rho)]
    model = FittedModel(hp, topics, state, link_model, trace, train_links, corpus.counts.copy())

    for it in range(1, hp.max_iters + 1):
        try:
            sweep_users(corpus, state, topics, link_model, hp.alpha, neighbors)
            topics = update_topics(corpus, state, hp.cov_kind, previous=topics)
            link_model = update_link_params(state, train_links, hp.rho, hp.K, eta_form=cfg.eta_form)
            value = elbo(corpus, state, topics, link_model, hp.alpha, train_links, hp.rho)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from exc
        if not np.isfinite(value):
            raise NumericError(f"iteration {it}: ELBO is not finite ({value})")
        delta = value - trace[-1]
        trace.append(value)
        model.topic_params = topics
        model.link_model = link_model
        if cfg.log_every > 0 and it % cfg.log_every == 0:
            logger.info("iter %d  elbo %.10g  delta %.3e", it, value, delta)
        if callback is not None:
            callback(it, model)
        if abs(delta) < hp.elbo_rel_tol * abs(trace[-2]):
            break
    return model
