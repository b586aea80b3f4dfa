"""Link probabilities from per-user topic usage and candidate ranking."""

from dataclasses import dataclass

import numpy as np

from grtm.errors import ContractError


@dataclass(frozen=True)
class PairScore:
    u: int
    v: int
    score: float

    @property
    def probability(self):
        # The exponential link is unnormalized; ranking uses the raw score.
        return min(1.0, self.score)


def user_topic_mean(state, u):
    """Average responsibility vector of user ``u`` (uniform if no images)."""
    if state.phi is None:
        return state.stored_phibar[u].copy()
    rows = state.phi[u]
    if rows.shape[0] == 0:
        return np.full(state.K, 1.0 / state.K)
    return rows.mean(axis=0)


def pair_pi(phibar_u, phibar_v):
    a = np.asarray(phibar_u, dtype=np.float64)
    b = np.asarray(phibar_v, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.shape} vs {b.shape}")
    return a * b


def link_logit(phibar_u, phibar_v, link_model):
    """eta . (phibar_u * phibar_v) + nu, the log of the link score."""
    pi = pair_pi(phibar_u, phibar_v)
    if pi.shape[-1] != link_model.eta.shape[0]:
        raise ContractError(
            f"topic count {pi.shape[-1]} does not match eta length {link_model.eta.shape[0]}"
        )
    return pi @ link_model.eta + link_model.nu


def predict_link(phibar_u, phibar_v, link_model, u=-1, v=-1):
    return PairScore(u, v, float(np.exp(link_logit(phibar_u, phibar_v, link_model))))


def score_pairs(phibar, link_model, pairs):
    """Scores exp(eta . pi_uv + nu) for an (M, 2) array of user pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pi = phibar[pairs[:, 0]] * phibar[pairs[:, 1]]
    return np.exp(pi @ link_model.eta + link_model.nu)


def rank_candidates(model, u, exclude=None, top_n=10):
    """Best link candidates for user ``u`` as a list of (v, score).

    Candidates already in ``exclude`` (by default the model's training
    links) are skipped. Ties are broken by ascending user id.
    """
    n = model.n_users
    if not 0 <= u < n:
        raise ContractError(f"user {u} out of range [0, {n})")
    if exclude is None:
        exclude = model.train_links
    if top_n <= 0:
        return []
    phibar = model.variational_state.phibar()
    cands = np.array([v for v in range(n) if v != u and (u, v) not in exclude], dtype=np.int64)
    if cands.size == 0:
        return []
    affinity = (phibar[cands] * phibar[u]) @ model.link_model.eta
    # nu is shared by all candidates, so the order depends on affinity alone.
    order = np.lexsort((cands, -affinity))[:top_n]
    return [(int(cands[i]), float(np.exp(affinity[i] + model.link_model.nu))) for i in order]
