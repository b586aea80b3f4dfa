"""Core data types: corpus, links, hyperparameters and fitted state."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from grtm.errors import ContractError
from grtm.mathkit import Covariance

COV_KINDS = ("diagonal", "full")


@dataclass(frozen=True)
class UserCollection:
    """The images shared by one user, as an (N_u, D) array."""

    user_id: int
    images: np.ndarray

    @property
    def n_images(self):
        return self.images.shape[0]


class Corpus:
    """Image feature vectors of all users, grouped per user.

    Parameters
    ----------
    images : sequence of array-like
        ``images[u]`` holds the feature vectors of user ``u`` with shape
        (N_u, D). Users without images are given as empty (0, D) arrays.
    dim : int, optional
        Feature dimension; required when every user is empty.
    """

    def __init__(self, images, dim=None):
        users = []
        for u, imgs in enumerate(images):
            arr = np.asarray(imgs, dtype=np.float64)
            if arr.size == 0:
                arr = arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else (dim or 0))
            if arr.ndim != 2:
                raise ContractError(f"user {u}: images must be a 2-D array, got shape {arr.shape}")
            users.append(UserCollection(u, arr))
        if not users:
            raise ContractError("corpus needs at least one user")
        if dim is None:
            # Mismatched users are left for validate() to report.
            nonempty = [uc.images.shape[1] for uc in users if uc.n_images]
            dim = nonempty[0] if nonempty else users[0].images.shape[1]
        if dim < 1:
            raise ContractError("feature dimension must be positive")
        self.users = users
        self.dim = int(dim)

    @property
    def n_users(self):
        return len(self.users)

    @cached_property
    def counts(self):
        """Number of images per user, shape (N,)."""
        return np.array([uc.n_images for uc in self.users], dtype=np.int64)

    @cached_property
    def offsets(self):
        """Row offsets of each user's block in :attr:`stacked` (length N + 1)."""
        return np.concatenate([[0], np.cumsum(self.counts)])

    @cached_property
    def stacked(self):
        """All images stacked into a (total, D) array, user-major."""
        blocks = [uc.images for uc in self.users if uc.n_images]
        if not blocks:
            return np.zeros((0, self.dim))
        return np.vstack(blocks)

    @cached_property
    def owner(self):
        """User id of every row of :attr:`stacked`."""
        return np.repeat(np.arange(self.n_users), self.counts)

    @property
    def n_total(self):
        return int(self.offsets[-1])

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.n_users == other.n_users
            and all(
                a.images.shape == b.images.shape and np.array_equal(a.images, b.images)
                for a, b in zip(self.users, other.users)
            )
        )

    def __repr__(self):
        return f"Corpus(n_users={self.n_users}, n_images={self.n_total}, dim={self.dim})"


class LinkSet:
    """Undirected user-user links stored as sorted pairs (u, v) with u < v.

    Self-loops are rejected; (u, v) and (v, u) denote the same edge.
    """

    def __init__(self, edges=()):
        pairs = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ContractError(f"self-loop on user {u}")
            pairs.add((u, v) if u < v else (v, u))
        self._edges = tuple(sorted(pairs))
        self._set = frozenset(self._edges)

    @staticmethod
    def key(u, v):
        return (u, v) if u < v else (v, u)

    def __contains__(self, pair):
        u, v = pair
        return self.key(int(u), int(v)) in self._set

    def __iter__(self):
        return iter(self._edges)

    def __len__(self):
        return len(self._edges)

    def __eq__(self, other):
        if not isinstance(other, LinkSet):
            return NotImplemented
        return self._edges == other._edges

    def __hash__(self):
        return hash(self._edges)

    def __repr__(self):
        return f"LinkSet({len(self)} edges)"

    def union(self, other):
        return LinkSet(self._edges + tuple(other))

    def difference(self, other):
        return LinkSet(e for e in self._edges if e not in other)

    def as_array(self):
        """Edges as an (M, 2) integer array."""
        return np.array(self._edges, dtype=np.int64).reshape(-1, 2)

    def neighbors(self, n_users):
        """Adjacency lists for users 0..n_users-1."""
        adj = [[] for _ in range(n_users)]
        for u, v in self._edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 2.0
    K: int = 100
    rho: float = 1.0
    cov_kind: str = "diagonal"
    max_iters: int = 500
    elbo_rel_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ContractError(f"alpha must be positive, got {self.alpha}")
        if int(self.K) != self.K or self.K < 1:
            raise ContractError(f"K must be a positive integer, got {self.K}")
        if not self.rho >= 0:
            raise ContractError(f"rho must be nonnegative, got {self.rho}")
        if self.cov_kind not in COV_KINDS:
            raise ContractError(f"cov_kind must be one of {COV_KINDS}, got {self.cov_kind!r}")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if not self.elbo_rel_tol >= 0:
            raise ContractError("elbo_rel_tol must be nonnegative")


@dataclass
class TopicParams:
    """Gaussian topics: ``means`` is (K, D), one :class:`Covariance` per topic."""

    means: np.ndarray
    covariances: list

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def cov_kind(self):
        return self.covariances[0].kind

    def log_densities(self, X):
        """(n, K) matrix of log N(x_i | mu_k, Sigma_k)."""
        from grtm.mathkit import gaussian_log_density

        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[0], self.K))
        for k in range(self.K):
            out[:, k] = gaussian_log_density(X, self.means[k], self.covariances[k])
        return out


@dataclass
class VariationalState:
    """Mean-field parameters.

    ``phi[u]`` is the (N_u, K) responsibility matrix of user ``u`` and
    ``gamma`` the (N, K) matrix of Dirichlet parameters. A state loaded
    without responsibilities has ``phi = None`` and carries the per-user
    topic means in ``stored_phibar`` instead.
    """

    phi: list | None
    gamma: np.ndarray
    stored_phibar: np.ndarray | None = None

    @property
    def n_users(self):
        return self.gamma.shape[0]

    @property
    def K(self):
        return self.gamma.shape[1]

    def phibar(self):
        """(N, K) matrix of per-user mean responsibilities."""
        if self.phi is None:
            return self.stored_phibar
        K = self.K
        out = np.full((len(self.phi), K), 1.0 / K)
        for u, rows in enumerate(self.phi):
            if rows.shape[0]:
                out[u] = rows.mean(axis=0)
        return out

    def stacked_phi(self):
        blocks = [rows for rows in self.phi if rows.shape[0]]
        return np.vstack(blocks) if blocks else np.zeros((0, self.K))

    def copy(self):
        return VariationalState(
            None if self.phi is None else [p.copy() for p in self.phi],
            self.gamma.copy(),
            None if self.stored_phibar is None else self.stored_phibar.copy(),
        )

    def check(self, alpha, counts=None, simplex_tol=1e-9, mass_tol=1e-6):
        """Return a list of invariant violations (empty when valid)."""
        problems = []
        if np.any(~(self.gamma > 0)):
            problems.append("gamma has non-positive entries")
        if self.phi is not None:
            for u, rows in enumerate(self.phi):
                if rows.shape[0] == 0:
                    continue
                if np.any(rows < 0) or np.any(rows > 1):
                    problems.append(f"user {u}: phi entries outside [0, 1]")
                if np.max(np.abs(rows.sum(axis=1) - 1.0)) > simplex_tol:
                    problems.append(f"user {u}: phi rows do not sum to 1")
            n_u = np.array([r.shape[0] for r in self.phi]) if counts is None else counts
            mass = np.sum(self.gamma - alpha, axis=1)
            bad = np.nonzero(np.abs(mass - n_u) > mass_tol)[0]
            for u in bad:
                problems.append(f"user {u}: sum(gamma - alpha) = {mass[u]} != N_u = {n_u[u]}")
        return problems


@dataclass
class LinkModel:
    eta: np.ndarray
    nu: float


@dataclass
class FittedModel:
    hyperparams: Hyperparams
    topic_params: TopicParams
    variational_state: VariationalState
    link_model: LinkModel
    elbo_trace: list = field(default_factory=list)
    train_links: LinkSet = field(default_factory=LinkSet)
    counts: np.ndarray | None = None
    # Optional record of how the training split was produced.
    split_info: dict = field(default_factory=dict)

    @property
    def n_users(self):
        return self.variational_state.n_users


def validate(corpus, links):
    """List problems with a corpus/link pair; an empty list means valid."""
    problems = []
    for uc in corpus.users:
        if uc.n_images and uc.images.shape[1] != corpus.dim:
            problems.append(
                f"user {uc.user_id}: feature dimension {uc.images.shape[1]} != {corpus.dim}"
            )
            continue
        bad = np.nonzero(~np.all(np.isfinite(uc.images), axis=1))[0]
        for n in bad:
            problems.append(f"user {uc.user_id}, image {n}: non-finite feature value")
    for u, v in links:
        for w in (u, v):
            if not 0 <= w < corpus.n_users:
                problems.append(
                    f"link ({u}, {v}): user id {w} out of range [0, {corpus.n_users})"
                )
                break
    return problems
