"""
Fitting the model to a synthetic corpus
=======================================

Draw users, images and links from the generative model, fit the model with
variational EM, and check that the planted topics come back.
"""

# %%
# A corpus with five well-separated Gaussian topics in eight dimensions.
# Links are likely between users who share one of the first three topics.
import numpy as np
from scipy.optimize import linear_sum_assignment

from grtm.generator import GenConfig, sample_corpus
from grtm.inference import FitConfig, fit
from grtm.model import Hyperparams

cfg = GenConfig(N=60, images_per_user=(40, 40), K=5, D=8, alpha=0.3,
                eta_true=(12.0, 12.0, 12.0, 0.0, 0.0), nu_true=-8.0, seed=0)
corpus, links, truth = sample_corpus(cfg)
print(corpus, "with", len(links), "links")

# %%
# Fit with the same number of topics. The ELBO trace never decreases.
model = fit(corpus, links, FitConfig(Hyperparams(K=5, max_iters=100, seed=0)))
trace = np.array(model.elbo_trace)
print(f"{len(trace) - 1} iterations, ELBO {trace[0]:.1f} -> {trace[-1]:.1f}")
print("monotone:", bool(np.all(np.diff(trace) >= -1e-6 * np.abs(trace[:-1]))))

# %%
# Topic labels are arbitrary, so match fitted to planted means first.
planted = truth.topic_params.means
cost = np.abs(model.topic_params.means[:, None] - planted[None]).max(axis=-1)
rows, cols = linear_sum_assignment(cost)
print("largest per-dimension mean error:", cost[rows, cols].max().round(3))

relabel = dict(zip(rows, cols))
zhat = np.array([relabel[k] for k in model.variational_state.stacked_phi().argmax(axis=1)])
print("image assignment accuracy:", np.mean(zhat == np.concatenate(truth.z)))

# %%
# Learned link weights, listed in planted-topic order. Only the first three
# planted topics generate links, so their weights should stand out.
eta = model.link_model.eta[rows[np.argsort(cols)]]
print("eta:", eta.round(3), "nu:", round(model.link_model.nu, 3))
