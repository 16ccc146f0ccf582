# From several raters' traces to one Beta distribution per frame.
# Run: python demos/02_label_fitting.py

import numpy as np
from scipy import stats

from cdnode import labels, synth
from cdnode.training import ccc

# A single window of ratings: MAP grid search recovers the generating Beta.
y = stats.beta(5, 3).rvs(size=1000, random_state=np.random.default_rng(0))
m = labels.map_fit(y)
print("Beta(5,3): true mu 0.625 sd 0.161 -> fitted mu %.4f sd %.4f" % (m.mu, m.sigma))

# Now whole sequences.  Each frame pools ratings from a +-F frame window.
utts = synth.generate(synth.SynthSpec(utterance_count=4, frames_per_utterance=600))
ratings = [labels.RaterMatrix(u.ratings) for u in utts]

# Two passes: flat prior first, then a KDE prior built from pass one.
fitted, prior = labels.fit_partition(ratings, labels.WindowConfig(F=6))
print("KDE bandwidths (mu, sd):", np.round(prior.bandwidths, 4))

for u, lab in zip(utts, fitted):
    print("%s  CCC(mu) %.3f  CCC(sd) %.3f" % (
        u.id, ccc(lab.mu, u.truth.mu), ccc(lab.sigma, u.truth.sigma)))
