"""Scikit-learn style front end for the clustering pipeline.

Takes a list of per-view feature matrices (all with the same row order),
trains the three-stage model and exposes the resulting cluster labels, so
the method drops into code written against the usual fit/fit_predict
clustering API.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import as_matrix, check_same_rows
from .datagen import MultiViewDataset
from .pipeline import ExperimentConfig, run_experiment


class PotMultiviewClustering(BaseEstimator, ClusterMixin):
    """Imbalanced multi-view clustering via partial-transport pseudo-labels.

    Parameters mirror the experiment configuration; ``balanced_labels``
    switches the labeler to the balanced-transport baseline for A/B runs.

    Attributes after fit: ``labels_`` (cluster id per sample), ``report_``
    (per-epoch losses and diagnostics), ``metrics_`` (only when ground truth
    was passed to fit).
    """

    def __init__(self, n_clusters=5, stage1_epochs=30, stage2_epochs=20,
                 stage3_epochs=20, batch_size=256, lr=1e-3, alpha=0.5,
                 tau_f=0.5, tau_l=1.0, lambda_base=0.1, lambda_max=1.0,
                 epsilon=0.1, beta=0.5, w_view=0.8, w_target=0.2,
                 ce_weight=1.0, balanced_labels=False, keep_align=False,
                 encoder_dims=(64, 32), projection_dim=16, random_state=0):
        self.n_clusters = n_clusters
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.stage3_epochs = stage3_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.alpha = alpha
        self.tau_f = tau_f
        self.tau_l = tau_l
        self.lambda_base = lambda_base
        self.lambda_max = lambda_max
        self.epsilon = epsilon
        self.beta = beta
        self.w_view = w_view
        self.w_target = w_target
        self.ce_weight = ce_weight
        self.balanced_labels = balanced_labels
        self.keep_align = keep_align
        self.encoder_dims = encoder_dims
        self.projection_dim = projection_dim
        self.random_state = random_state

    def _config(self, view_dims):
        return ExperimentConfig(
            classes=self.n_clusters, views=len(view_dims),
            view_dims=view_dims, stage1_epochs=self.stage1_epochs,
            stage2_epochs=self.stage2_epochs,
            stage3_epochs=self.stage3_epochs, batch_size=self.batch_size,
            lr=self.lr, alpha=self.alpha, tau_f=self.tau_f, tau_l=self.tau_l,
            lambda_base=self.lambda_base, lambda_max=self.lambda_max,
            epsilon=self.epsilon, beta=self.beta, w_view=self.w_view,
            w_target=self.w_target, ce_weight=self.ce_weight,
            balanced_labels=self.balanced_labels,
            keep_align=self.keep_align, encoder_dims=self.encoder_dims,
            projection_dim=self.projection_dim, seed=self.random_state)

    def fit(self, Xs, y=None):
        """Train on a list of per-view matrices sharing one row order."""
        if not isinstance(Xs, (list, tuple)) or len(Xs) == 0:
            raise ValueError("Xs must be a non-empty list of view matrices")
        views = [as_matrix(x, f"view {v}") for v, x in enumerate(Xs)]
        n = check_same_rows(views)
        truth = np.zeros(n, dtype=np.int64) if y is None \
            else np.asarray(y, dtype=np.int64)
        data = MultiViewDataset(views=views, labels=truth,
                                n_classes=self.n_clusters
                                if y is None else max(self.n_clusters,
                                                      int(truth.max()) + 1))
        config = self._config(tuple(x.shape[1] for x in views))
        report = run_experiment(config, data=data)
        if report.failure is not None:
            raise RuntimeError(f"training failed: {report.failure}")
        self.labels_ = np.asarray(report.predicted, dtype=np.int64)
        self.report_ = report
        self.metrics_ = report.metrics if y is not None else None
        return self

    def fit_predict(self, Xs, y=None):
        return self.fit(Xs, y).labels_
