"""Differentiable objectives: reconstruction, structure-guided and semantic
contrastive alignment, self-labeling cross-entropy, and the class-rebalanced
losses driven by transport pseudo-labels.

Each loss has a value-only form returning a LossValue and a ``*_grads`` form
additionally returning exact gradients with respect to its array inputs;
the two share one implementation. Pseudo-labels, their class frequencies and
the logit adjustments are always treated as constants: they are recomputed
once per epoch by the solver, not differentiated through.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, check_row_stochastic
from .mathops import logsumexp_axis

_PROB_FLOOR = 1e-12


@dataclass
class LossValue:
    value: float
    per_sample: np.ndarray | None = None


@dataclass
class RebalanceContext:
    """Constants for the rebalanced losses of the final training stage.

    eta holds the per-sample logit adjustment -log(frequency of the sample's
    pseudo-label class), zero where unassigned; assigned marks samples with a
    hard pseudo-label; class_weight holds the pseudo-label class frequencies
    used to rescale the pseudo-label candidate's score.
    """

    eta: np.ndarray
    assigned: np.ndarray
    class_weight: np.ndarray
    w_view: float = 0.8
    w_target: float = 0.2
    tau_f: float = 0.5

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.float64)
        self.assigned = np.asarray(self.assigned, dtype=bool)
        self.class_weight = np.asarray(self.class_weight, dtype=np.float64)
        if np.any(self.eta < 0):
            raise ValueError("eta must be nonnegative")
        if abs(self.w_view + self.w_target - 1.0) > 1e-12:
            raise ValueError("w_view + w_target must equal 1")


def reconstruction_loss(xs, xhats):
    return _reconstruction(xs, xhats)[0]


def reconstruction_loss_grads(xs, xhats):
    return _reconstruction(xs, xhats)


def _reconstruction(xs, xhats):
    if len(xs) != len(xhats):
        raise ValueError("views and reconstructions differ in count")
    total = 0.0
    per_sample = None
    grads = []
    for v, (x, xh) in enumerate(zip(xs, xhats)):
        x = np.asarray(x, dtype=np.float64)
        xh = np.asarray(xh, dtype=np.float64)
        if x.shape != xh.shape:
            raise ValueError(f"view {v} shape mismatch: {x.shape} vs "
                             f"{xh.shape}")
        diff = xh - x
        contrib = (diff * diff).sum(axis=1)
        per_sample = contrib if per_sample is None else per_sample + contrib
        total += contrib.sum()
        grads.append(2.0 * diff)
    return LossValue(float(total), per_sample), grads


def self_label_ce(p_hat, t):
    return _self_label_ce(p_hat, t)[0]


def self_label_ce_grads(p_hat, t):
    return _self_label_ce(p_hat, t)


def _self_label_ce(p_hat, t):
    p_hat = as_matrix(p_hat, "p_hat")
    t = as_matrix(t, "t")
    if p_hat.shape != t.shape:
        raise ValueError("p_hat and t shapes differ")
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    n = p_hat.shape[0]
    clamped = np.maximum(p_hat, _PROB_FLOOR)
    per_sample = -(t * np.log(clamped)).sum(axis=1) / n
    d_p_hat = np.where(p_hat > _PROB_FLOOR, -t / (clamped * n), 0.0)
    return LossValue(float(per_sample.sum()), per_sample * n), d_p_hat


def _cosine_matrix(a, b):
    """Pairwise cosine similarities of the rows of a and b, with the pieces
    needed to push gradients back through the normalization."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm row in cosine similarity")
    a_hat = a / na
    b_hat = b / nb
    return a_hat @ b_hat.T, (a_hat, na, b_hat, nb)

def _cosine_matrix_backward(d_cos, pieces):
    a_hat, na, b_hat, nb = pieces
    d_a_hat = d_cos @ b_hat
    d_b_hat = d_cos.T @ a_hat
    d_a = (d_a_hat - a_hat * (d_a_hat * a_hat).sum(axis=1, keepdims=True)) \
        / na
    d_b = (d_b_hat - b_hat * (d_b_hat * b_hat).sum(axis=1, keepdims=True)) \
        / nb
    return d_a, d_b


def structure_contrastive_loss(h_views, u, g, tau_f=0.5):
    return _structure_contrastive(h_views, u, g, tau_f, need_grads=False)[0]


def structure_contrastive_loss_grads(h_views, u, g, tau_f=0.5):
    return _structure_contrastive(h_views, u, g, tau_f, need_grads=True)


def _structure_contrastive(h_views, u, g, tau_f, need_grads):
    """Contrast each view feature against its consensus row; negatives are
    the other consensus rows down-weighted by (1 - G_ij^2)."""
    u = as_matrix(u, "u")
    g = as_matrix(g, "g")
    n = u.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if g.shape != (n, n):
        raise ValueError("structure matrix shape mismatch")
    off_diag = ~np.eye(n, dtype=bool)
    weights = (1.0 - g ** 2) * off_diag
    n_views = len(h_views)
    total = 0.0
    per_sample = np.zeros(n)
    d_h = []
    d_u = np.zeros_like(u)
    d_g = np.zeros_like(g)
    scale = 1.0 / (n * n_views)
    for h in h_views:
        h = as_matrix(h, "h")
        cos, pieces = _cosine_matrix(h, u)
        dmat = np.exp(cos / tau_f)
        denom = (weights * dmat).sum(axis=1)
        if np.any(denom <= 0):
            raise ValueError("contrastive denominator vanished "
                             "(all structure weights zero)")
        losses = -cos.diagonal() / tau_f + np.log(denom)
        total += losses.sum()
        per_sample += losses
        if need_grads:
            d_cos = (weights * dmat) / denom[:, None] / tau_f
            np.fill_diagonal(d_cos, d_cos.diagonal() - 1.0 / tau_f)
            d_cos *= scale
            dh, du = _cosine_matrix_backward(d_cos, pieces)
            d_h.append(dh)
            d_u += du
            d_g += scale * (-2.0 * g) * off_diag * dmat / denom[:, None]
    value = LossValue(float(total * scale), per_sample / n_views)
    if not need_grads:
        return (value,)
    return value, d_h, d_u, d_g


def semantic_alignment_loss(p_view, p, tau_l=1.0):
    return _semantic_alignment(p_view, p, tau_l, need_grads=False)[0]


def semantic_alignment_loss_grads(p_view, p, tau_l=1.0):
    return _semantic_alignment(p_view, p, tau_l, need_grads=True)


def _semantic_alignment(p_view, p, tau_l, need_grads):
    """Contrast class-probability columns of one view against the consensus
    columns; negatives are the other consensus columns."""
    p_view = check_row_stochastic(p_view, "p_view")
    p = check_row_stochastic(p, "p")
    if p_view.shape != p.shape:
        raise ValueError("prediction shapes differ")
    k = p.shape[1]
    if k < 2:
        raise ValueError("need at least two classes")
    a = p_view.T
    b = p.T
    cos, pieces = _cosine_matrix(a, b)
    dmat = np.exp(cos / tau_l)
    off_diag = ~np.eye(k, dtype=bool)
    denom = (dmat * off_diag).sum(axis=1)
    losses = -cos.diagonal() / tau_l + np.log(denom)
    value = LossValue(float(losses.mean()), losses)
    if not need_grads:
        return (value,)
    scale = 1.0 / k
    d_cos = (dmat * off_diag) / denom[:, None] / tau_l
    np.fill_diagonal(d_cos, -1.0 / tau_l)
    d_cos *= scale
    d_a, d_b = _cosine_matrix_backward(d_cos, pieces)
    return value, d_a.T, d_b.T


def align_loss(h_views, u, g, p_views, p, view_weights=None, tau_f=0.5,
               tau_l=1.0):
    return _align(h_views, u, g, p_views, p, view_weights, tau_f, tau_l,
                  need_grads=False)[0]


def align_loss_grads(h_views, u, g, p_views, p, view_weights=None,
                     tau_f=0.5, tau_l=1.0):
    return _align(h_views, u, g, p_views, p, view_weights, tau_f, tau_l,
                  need_grads=True)


def _align(h_views, u, g, p_views, p, view_weights, tau_f, tau_l,
           need_grads):
    """Per-view weighted sum of the structure and semantic alignment terms."""
    n_views = len(h_views)
    if view_weights is None:
        view_weights = np.full(n_views, 1.0 / n_views)
    view_weights = np.asarray(view_weights, dtype=np.float64)
    if np.any(view_weights < 0):
        raise ValueError("view weights must be nonnegative")
    total = 0.0
    d_h = [None] * n_views
    d_pv = [None] * n_views
    d_u = None
    d_g = None
    d_p = None
    for v in range(n_views):
        w = view_weights[v]
        if w == 0.0:
            continue
        if need_grads:
            fea, dh, du, dg = _structure_contrastive(
                [h_views[v]], u, g, tau_f, True)
            sem, dpv, dp = _semantic_alignment(p_views[v], p, tau_l, True)
            d_h[v] = w * dh[0]
            d_pv[v] = w * dpv
            d_u = w * du if d_u is None else d_u + w * du
            d_g = w * dg if d_g is None else d_g + w * dg
            d_p = w * dp if d_p is None else d_p + w * dp
        else:
            fea = _structure_contrastive([h_views[v]], u, g, tau_f,
                                         False)[0]
            sem = _semantic_alignment(p_views[v], p, tau_l, False)[0]
        total += w * (fea.value + sem.value)
    value = LossValue(float(total))
    if not need_grads:
        return (value,)
    n = u.shape[0]
    if d_u is None:
        d_u = np.zeros_like(np.asarray(u, dtype=np.float64))
        d_g = np.zeros((n, n))
        d_p = np.zeros_like(np.asarray(p, dtype=np.float64))
    return value, d_h, d_u, d_g, d_pv, d_p


def rebalanced_feature_loss(h_views, u, ctx):
    return _rebalanced_feature(h_views, u, ctx, need_grads=False)[0]


def rebalanced_feature_loss_grads(h_views, u, ctx):
    return _rebalanced_feature(h_views, u, ctx, need_grads=True)


def _rebalanced_feature(h_views, u, ctx, need_grads):
    """Logit-adjusted contrast: the positive-pair similarity is boosted by
    eta_i; the denominator runs over every consensus row including i."""
    u = as_matrix(u, "u")
    assigned = ctx.assigned
    n_assigned = int(assigned.sum())
    if n_assigned == 0:
        raise ValueError("no assigned samples")
    n_views = len(h_views)
    scale = 1.0 / (n_assigned * n_views)
    total = 0.0
    per_sample = np.zeros(u.shape[0])
    d_h = []
    d_u = np.zeros_like(u)
    for h in h_views:
        h = as_matrix(h, "h")
        cos, pieces = _cosine_matrix(h, u)
        dmat = np.exp(cos / ctx.tau_f)
        lse = logsumexp_axis(dmat, axis=1)
        losses = np.where(assigned,
                          -(dmat.diagonal() + ctx.eta) + lse, 0.0)
        total += losses.sum()
        per_sample += losses
        if need_grads:
            soft = np.exp(dmat - lse[:, None])
            d_dmat = soft * assigned[:, None]
            np.fill_diagonal(
                d_dmat, d_dmat.diagonal() - 1.0 * assigned)
            d_cos = d_dmat * dmat / ctx.tau_f * scale
            dh, du = _cosine_matrix_backward(d_cos, pieces)
            d_h.append(dh)
            d_u += du
    value = LossValue(float(total * scale), per_sample / n_views)
    if not need_grads:
        return (value,)
    return value, d_h, d_u


def rebalanced_class_loss(p_views, p, labels, ctx):
    return _rebalanced_class(p_views, p, labels, ctx, need_grads=False)[0]


def rebalanced_class_loss_grads(p_views, p, labels, ctx):
    return _rebalanced_class(p_views, p, labels, ctx, need_grads=True)


def _rebalanced_class(p_views, p, labels, ctx, need_grads):
    """Candidate set per sample: its view prediction rows plus its unit-mass
    pseudo-label row. Every candidate takes a turn as the positive (views
    weighted w_view, the pseudo-label w_target); scores are dot products
    against the consensus row, with the pseudo-label candidate rescaled by
    the class frequencies."""
    p = check_row_stochastic(p, "p")
    n, k = p.shape
    assigned = ctx.assigned
    if int(assigned.sum()) == 0:
        raise ValueError("no assigned samples")
    targets = labels.unit_rows()
    n_views = len(p_views)
    pv = [check_row_stochastic(x, "p_view") for x in p_views]
    scores = np.empty((n, n_views + 1))
    for v in range(n_views):
        scores[:, v] = (pv[v] * p).sum(axis=1)
    weighted_target = targets * ctx.class_weight[None, :]
    scores[:, n_views] = (weighted_target * p).sum(axis=1)
    log_z = logsumexp_axis(scores, axis=1)
    pos_w = np.concatenate([np.full(n_views, ctx.w_view), [ctx.w_target]])
    per_sample = np.where(
        assigned, -(scores @ pos_w) + pos_w.sum() * log_z, 0.0)
    n_assigned = int(assigned.sum())
    value = LossValue(float(per_sample.sum() / n_assigned), per_sample)
    if not need_grads:
        return (value,)
    soft = np.exp(scores - log_z[:, None])
    d_scores = (-pos_w[None, :] + pos_w.sum() * soft) \
        * assigned[:, None] / n_assigned
    d_p = np.zeros_like(p)
    d_pv = []
    for v in range(n_views):
        d_pv.append(d_scores[:, v: v + 1] * p)
        d_p += d_scores[:, v: v + 1] * pv[v]
    d_p += d_scores[:, n_views: n_views + 1] * weighted_target
    return value, d_pv, d_p


def imbalance_loss(h_views, u, p_views, p, labels, ctx):
    fea = rebalanced_feature_loss(h_views, u, ctx)
    sem = rebalanced_class_loss(p_views, p, labels, ctx)
    return LossValue(fea.value + sem.value)


def imbalance_loss_grads(h_views, u, p_views, p, labels, ctx):
    fea, d_h, d_u = rebalanced_feature_loss_grads(h_views, u, ctx)
    sem, d_pv, d_p = rebalanced_class_loss_grads(p_views, p, labels, ctx)
    value = LossValue(fea.value + sem.value)
    return value, d_h, d_u, d_pv, d_p
