"""
Recommending friends and inspecting topics
==========================================

Save a fitted model, reload it without the per-image responsibilities,
recommend ten candidate friends for a user and list the most typical
images of every topic.
"""

# %%
import tempfile
from pathlib import Path

from grtm import io as gio
from grtm.cli import representatives
from grtm.generator import GenConfig, sample_corpus
from grtm.inference import FitConfig, fit
from grtm.linkpredict import rank_candidates
from grtm.model import Hyperparams

corpus, links, truth = sample_corpus(GenConfig(N=40, K=4, D=6, nu_true=-4.0, seed=2))
model = fit(corpus, links, FitConfig(Hyperparams(K=4, seed=2)))

# %%
# Only the per-user topic means are needed for prediction.
path = Path(tempfile.mkdtemp()) / "model.grtm"
gio.save_model(model, path, include_phi=False)
light = gio.load_model(path)
print("reloaded; phi stored:", light.variational_state.phi is not None)

# %%
# Ten best candidates for user 0 that are not already linked.
for rank, (v, score) in enumerate(rank_candidates(light, 0, top_n=10), start=1):
    print(f"{rank:2d}. user {v:2d}  score {score:.4f}")

# %%
# The three most probable images under each topic, as (user, image index).
for k, reps in enumerate(representatives(model, corpus, 3)):
    print(f"topic {k}:", [(u, n) for u, n, _ in reps])
