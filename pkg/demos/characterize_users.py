"""
Characterizing a user population
================================

Build a toy population of account attributes, look at which columns carry
the variance, cluster the users and name the clusters.
"""

import numpy as np

from cohortsynth import FeatureMatrix, fit_pca, kmeans_fit, label_clusters, loadings, select_attributes
from cohortsynth.cluster import elbow_k, wcss_curve

rng = np.random.default_rng(3)

# %%
# Four groups of accounts, drawn in log space so counts span many decades.
# Columns: followers, friends, listed, favourites, statuses.
centers = np.array([
    [13.0, 8.0, 9.0, 4.0, 6.0],     # very widely followed
    [4.0, 3.0, 1.0, 4.0, 5.0],      # the bulk of accounts
    [7.0, 6.0, 3.0, 10.0, 11.0],    # post a lot
    [5.0, 5.0, 1.0, 9.0, 3.0],      # like a lot, post little
])
sizes = [60, 6000, 800, 300]
z = np.vstack([rng.normal(c, 0.4, size=(n, 5)) for c, n in zip(centers, sizes)])
counts = np.round(np.expm1(np.clip(z, 0, None)))
columns = ("followers_count", "friends_count", "listed_count", "favourites_count", "statuses_count")
table = FeatureMatrix(counts, columns, tuple(str(i) for i in range(len(counts))))
print(table.n_rows, "users")

# %%
# Raw-count PCA is dominated by the columns with the largest spread.
pca = fit_pca(table, n_components=3)
print("explained variance ratio", np.round(pca.explained_variance_ratio, 4))
table_l = loadings(pca)
for name, row in zip(table_l.attributes, table_l.values):
    print(f"{name:>18s}", " ".join(f"{v: .3e}" for v in row))
print("selected:", select_attributes(table_l, threshold=1e-3, top_m=5))

# %%
# The WCSS curve suggests a K; the knee is the point farthest from the chord.
curve = wcss_curve(table, 1, 8, seed=0, restarts=5, transform="log1p+zscore")
print("WCSS", [f"{w:.0f}" for w in curve.wcss], "-> knee at", elbow_k(curve))

# %%
# Cluster with K=4 on log-scaled, standardized counts and name the clusters
# from their centroid profiles.
model = kmeans_fit(table, 4, seed=0, restarts=10, transform="log1p+zscore")
names = label_clusters(model, table)
for j in range(4):
    members = model.assignments == j
    med = np.median(table.values[members], axis=0)
    print(f"{names[j]:>15s} n={members.sum():5d} median", med.astype(int))
