# Density maps and the density -> threshold regressor.
import numpy as np
from scipy.stats import spearmanr

from rtann import build_index, gen_synthetic
from rtann.threshold import pseudo_query_neighbors, retention, sample_training_pairs
from rtann.trainer import compute_residuals

base = gen_synthetic(20_000, 32, 64, 0.05, seed=1)
index = build_index(base, 64, 64, seed=1)
res = compute_residuals(base.data, index.ivf)

dens, thr, rows = sample_training_pairs(base, res, index.density_maps, 500, seed=1)
for s in range(4):
    rho = spearmanr(dens[:, s], thr[:, s])[0]
    m = index.models[s]
    print("subspace %d  Spearman(density, threshold) = %+.2f  clamp [%.4f, %.4f]" % (s, rho, m.t_min, m.t_max))

dm = index.density_maps[0]
print("grid", dm.density.shape, "cell area %.2e" % dm.cell_area, "points", int(round(dm.counts().sum())))

# how many of a held-out point's 100 neighbors survive a scaled threshold
held = np.setdiff1d(np.arange(base.n), rows)[:200]
nb = pseudo_query_neighbors(base.data, held, 100)
pred = index.predict_thresholds(res[held].reshape(len(held), index.n_sub, 2))
for scale in [0.25, 0.5, 0.75, 1.0, 1.25]:
    print("scale %.2f  mean retention %.3f" % (scale, retention(res, held, nb, scale * pred).mean()))
