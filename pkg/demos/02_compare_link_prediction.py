"""
Held-out link prediction against the baselines
==============================================

Hide 40% of the links, fit on the rest, and rank every non-training pair.
The model is compared with the Mean (average image feature) and BoFT
(cluster-label histogram) profile baselines.
"""

# %%
from grtm.baselines import baseline_scores
from grtm.evaluation import evaluate, evaluation_universe, split_links
from grtm.generator import GenConfig, sample_corpus
from grtm.inference import FitConfig, fit
from grtm.linkpredict import score_pairs
from grtm.model import Hyperparams

corpus, links, _ = sample_corpus(
    GenConfig(N=60, alpha=0.3, eta_true=(12.0, 12.0, 12.0, 0.0, 0.0), nu_true=-8.0, seed=1)
)
split = split_links(links, train_ratio=0.6, seed=1)
universe = evaluation_universe(corpus.n_users, split.train)
print(f"{len(split.train)} training links, {len(split.test)} test links, {len(universe)} candidate pairs")

# %%
model = fit(corpus, split.train, FitConfig(Hyperparams(K=5, seed=1)))
grtm = dict(zip(universe, score_pairs(model.variational_state.phibar(), model.link_model, universe).tolist()))

scores = {
    "grtm": grtm,
    "mean": baseline_scores(corpus, "mean", pairs=universe),
    "boft": baseline_scores(corpus, "boft", n_clusters=5, seed=1, pairs=universe),
}

# %%
# ROC-AUC, PR-AUC and precision at 10% recall for each method.
for name, s in scores.items():
    rep = evaluate(s, split, corpus.n_users)
    print(f"{name:5s} roc_auc={rep.roc_auc:.3f} pr_auc={rep.pr_auc:.3f} "
          f"precision@0.1={rep.precision_at[0.1]:.3f}")

# %%
# Curves can be written out as CSV for plotting elsewhere:
#
#     from grtm.io import export_report
#     export_report(evaluate(scores["grtm"], split, corpus.n_users), "report/")
