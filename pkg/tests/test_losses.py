import math

import numpy as np
import pytest

from conftest import loss_gradient_check
from potmvc.labeling import PseudoLabels, make_rebalance_context
from potmvc.losses import (
    RebalanceContext,
    align_loss,
    align_loss_grads,
    imbalance_loss,
    imbalance_loss_grads,
    rebalanced_class_loss,
    rebalanced_class_loss_grads,
    rebalanced_feature_loss,
    reconstruction_loss,
    reconstruction_loss_grads,
    self_label_ce,
    self_label_ce_grads,
    semantic_alignment_loss,
    structure_contrastive_loss,
    structure_contrastive_loss_grads,
)
from potmvc.mathops import softmax_rows


def make_labels(soft, n=None):
    soft = np.asarray(soft, dtype=np.float64)
    n = n or soft.shape[0]
    row_mass = soft.sum(axis=1)
    hard = np.where(row_mass >= 0.5 / n, soft.argmax(axis=1), -1)
    counts = np.bincount(hard[hard >= 0], minlength=soft.shape[1])
    freq = counts / max(counts.sum(), 1)
    return PseudoLabels(soft=soft, hard=hard.astype(np.int64),
                        row_mass=row_mass, class_counts=counts,
                        class_freq=freq, class_weight=freq.copy())


def fixture_context(n=4, k=3, eta=None, assigned=None, weight=None):
    eta = np.zeros(n) if eta is None else np.asarray(eta, dtype=np.float64)
    assigned = np.ones(n, dtype=bool) if assigned is None else assigned
    weight = np.full(k, 1 / k) if weight is None else weight
    return RebalanceContext(eta=eta, assigned=assigned, class_weight=weight)


class TestReconstructionLoss:
    def test_perfect_reconstruction_is_zero(self):
        x = [np.ones((3, 2))]
        assert reconstruction_loss(x, [x[0].copy()]).value == 0.0

    def test_direct_value(self):
        out = reconstruction_loss([np.array([[1.0, 0.0]])],
                                  [np.array([[0.0, 0.0]])])
        assert out.value == pytest.approx(1.0)

    def test_sample_permutation_invariance(self):
        rng = np.random.default_rng(0)
        xs = [rng.normal(size=(5, 3)), rng.normal(size=(5, 2))]
        xh = [rng.normal(size=(5, 3)), rng.normal(size=(5, 2))]
        perm = rng.permutation(5)
        a = reconstruction_loss(xs, xh).value
        b = reconstruction_loss([x[perm] for x in xs],
                                [x[perm] for x in xh]).value
        assert a == pytest.approx(b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            reconstruction_loss([np.ones((2, 2))], [np.ones((2, 3))])

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(1)
        xs = [rng.normal(size=(3, 2))]
        xh = [rng.normal(size=(3, 2))]
        _, grads = reconstruction_loss_grads(xs, xh)
        h = 1e-6
        for idx in np.ndindex(xh[0].shape):
            xp = [xh[0].copy()]
            xp[0][idx] += h
            xm = [xh[0].copy()]
            xm[0][idx] -= h
            fd = (reconstruction_loss(xs, xp).value
                  - reconstruction_loss(xs, xm).value) / (2 * h)
            assert grads[0][idx] == pytest.approx(fd, rel=1e-6)


class TestSelfLabelCe:
    def test_one_hot_match_is_zero(self):
        t = np.array([[1.0, 0.0]])
        p = np.array([[1.0, 0.0]])
        assert self_label_ce(p, t).value == pytest.approx(0.0, abs=1e-10)

    def test_uniform_value_is_log_k(self):
        k = 4
        t = np.full((3, k), 1 / k)
        p = np.full((3, k), 1 / k)
        assert self_label_ce(p, t).value == pytest.approx(math.log(k))

    def test_zero_rows_contribute_nothing(self):
        p = np.array([[0.5, 0.5], [0.9, 0.1]])
        t = np.array([[0.0, 0.0], [1.0, 0.0]])
        full = self_label_ce(p, t).value
        only = self_label_ce(p[1:], t[1:]).value / 2
        assert full == pytest.approx(only)

    def test_negative_targets_rejected(self):
        with pytest.raises(ValueError):
            self_label_ce(np.full((1, 2), 0.5), np.array([[-0.1, 0.5]]))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(2)
        p = rng.dirichlet(np.ones(3), size=4)
        t = rng.dirichlet(np.ones(3), size=4) * 0.8
        _, d_p = self_label_ce_grads(p, t)
        h = 1e-7
        for idx in [(0, 0), (1, 2), (3, 1)]:
            pp = p.copy()
            pp[idx] += h
            pm = p.copy()
            pm[idx] -= h
            fd = (self_label_ce(pp, t).value
                  - self_label_ce(pm, t).value) / (2 * h)
            assert d_p[idx] == pytest.approx(fd, rel=1e-5)


class TestStructureContrastive:
    def test_identical_rows_zero_structure_gives_log_n_minus_one(self):
        n, d = 5, 4
        u = np.tile(np.array([1.0, 2.0, -1.0, 0.5]), (n, 1))
        g = np.zeros((n, n))
        out = structure_contrastive_loss([u.copy()], u, g, tau_f=0.5)
        assert out.value == pytest.approx(math.log(n - 1), abs=1e-12)

    def test_raising_structure_lowers_loss(self):
        rng = np.random.default_rng(3)
        u = rng.normal(size=(4, 3))
        h = [rng.normal(size=(4, 3))]
        low = structure_contrastive_loss(h, u, np.zeros((4, 4))).value
        g = np.full((4, 4), 0.8)
        np.fill_diagonal(g, 1.0)
        high = structure_contrastive_loss(h, u, g).value
        assert high < low

    def test_all_unit_structure_rejected(self):
        u = np.random.default_rng(4).normal(size=(3, 2))
        with pytest.raises(ValueError):
            structure_contrastive_loss([u], u, np.ones((3, 3)))

    def test_single_sample_rejected(self):
        u = np.ones((1, 2))
        with pytest.raises(ValueError):
            structure_contrastive_loss([u], u, np.ones((1, 1)))

    def test_zero_structure_reduces_to_infonce(self):
        rng = np.random.default_rng(5)
        n, d = 6, 4
        h = rng.normal(size=(n, d))
        u = rng.normal(size=(n, d))
        tau = 0.5
        got = structure_contrastive_loss([h], u, np.zeros((n, n)),
                                         tau_f=tau).value
        # independent plain InfoNCE with j != i negatives
        total = 0.0
        for i in range(n):
            sims = np.array([
                float(h[i] @ u[j] / (np.linalg.norm(h[i])
                                     * np.linalg.norm(u[j]))) / tau
                for j in range(n)])
            denom = sum(math.exp(sims[j]) for j in range(n) if j != i)
            total += -sims[i] + math.log(denom)
        assert got == pytest.approx(total / n, abs=1e-12)

    def test_sample_permutation_invariance(self):
        rng = np.random.default_rng(6)
        n = 5
        h = [rng.normal(size=(n, 3))]
        u = rng.normal(size=(n, 3))
        g = rng.uniform(0, 0.5, size=(n, n))
        g = (g + g.T) / 2
        np.fill_diagonal(g, 1.0)
        perm = rng.permutation(n)
        a = structure_contrastive_loss(h, u, g).value
        b = structure_contrastive_loss([h[0][perm]], u[perm],
                                       g[np.ix_(perm, perm)]).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_direct_input_grads_match_finite_differences(self):
        rng = np.random.default_rng(7)
        n = 4
        h = [rng.normal(size=(n, 3))]
        u = rng.normal(size=(n, 3))
        g = rng.uniform(0, 0.6, size=(n, n))
        g = (g + g.T) / 2
        np.fill_diagonal(g, 1.0)
        _, d_h, d_u, d_g = structure_contrastive_loss_grads(h, u, g)
        hstep = 1e-6
        for idx in [(0, 1), (2, 0), (3, 2)]:
            up = u.copy()
            up[idx] += hstep
            um = u.copy()
            um[idx] -= hstep
            fd = (structure_contrastive_loss(h, up, g).value
                  - structure_contrastive_loss(h, um, g).value) / (2 * hstep)
            assert d_u[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        for idx in [(0, 2), (1, 3)]:
            gp = g.copy()
            gp[idx] += hstep
            gm = g.copy()
            gm[idx] -= hstep
            fd = (structure_contrastive_loss(h, u, gp).value
                  - structure_contrastive_loss(h, u, gm).value) / (2 * hstep)
            assert d_g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestSemanticAlignment:
    def test_matching_one_hot_columns_minimal_among_permutations(self):
        import itertools
        p = np.eye(3)[[0, 1, 2, 0, 1]]
        base = semantic_alignment_loss(p, p).value
        for perm in itertools.permutations(range(3)):
            permuted = p[:, list(perm)]
            assert base <= semantic_alignment_loss(p, permuted).value + 1e-12

    def test_identical_uniform_columns_k2(self):
        p = np.full((4, 2), 0.5)
        # only one negative = the positive column itself: ratio 1, loss 0
        assert semantic_alignment_loss(p, p).value == pytest.approx(0.0,
                                                                    abs=1e-12)

    def test_class_permutation_invariance(self):
        rng = np.random.default_rng(8)
        pv = softmax_rows(rng.normal(size=(6, 4)))
        p = softmax_rows(rng.normal(size=(6, 4)))
        perm = rng.permutation(4)
        a = semantic_alignment_loss(pv, p).value
        b = semantic_alignment_loss(pv[:, perm], p[:, perm]).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            semantic_alignment_loss(np.ones((3, 1)), np.ones((3, 1)))


class TestAlignLoss:
    def setup_inputs(self, seed=9):
        rng = np.random.default_rng(seed)
        n, d, k = 5, 3, 3
        h = [rng.normal(size=(n, d)) for _ in range(2)]
        u = rng.normal(size=(n, d))
        g = rng.uniform(0, 0.5, size=(n, n))
        g = (g + g.T) / 2
        np.fill_diagonal(g, 1.0)
        pv = [softmax_rows(rng.normal(size=(n, k))) for _ in range(2)]
        p = softmax_rows(rng.normal(size=(n, k)))
        return h, u, g, pv, p

    def test_zero_weights_zero_loss(self):
        h, u, g, pv, p = self.setup_inputs()
        out = align_loss(h, u, g, pv, p, view_weights=[0.0, 0.0])
        assert out.value == 0.0

    def test_uniform_weights_average_views(self):
        h, u, g, pv, p = self.setup_inputs()
        full = align_loss(h, u, g, pv, p).value
        per_view = [align_loss([h[v]], u, g, [pv[v]], p,
                               view_weights=[1.0]).value for v in range(2)]
        assert full == pytest.approx(sum(per_view) / 2)

    def test_one_hot_weights_select_single_view(self):
        h, u, g, pv, p = self.setup_inputs()
        masked = align_loss(h, u, g, pv, p, view_weights=[1.0, 0.0]).value
        single = align_loss([h[0]], u, g, [pv[0]], p,
                            view_weights=[1.0]).value
        assert masked == pytest.approx(single)


class TestRebalancedFeature:
    def test_single_assigned_sample_zero_eta(self):
        u = np.array([[1.0, 2.0]])
        ctx = fixture_context(n=1, k=2)
        out = rebalanced_feature_loss([u.copy()], u, ctx)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_eta_shift_identity(self):
        rng = np.random.default_rng(10)
        n = 4
        h = [rng.normal(size=(n, 3))]
        u = rng.normal(size=(n, 3))
        base_ctx = fixture_context(n=n)
        base = rebalanced_feature_loss(h, u, base_ctx)
        delta = 0.37
        eta = np.zeros(n)
        eta[2] += delta
        shifted = rebalanced_feature_loss(h, u, fixture_context(n=n, eta=eta))
        assert shifted.per_sample[2] - base.per_sample[2] == pytest.approx(
            -delta, abs=1e-12)
        np.testing.assert_allclose(
            np.delete(shifted.per_sample, 2), np.delete(base.per_sample, 2),
            atol=1e-12)

    def test_unassigned_excluded_from_numerator(self):
        rng = np.random.default_rng(11)
        n = 4
        h = [rng.normal(size=(n, 3))]
        u = rng.normal(size=(n, 3))
        assigned = np.array([True, True, False, True])
        out = rebalanced_feature_loss(h, u, fixture_context(
            n=n, assigned=assigned))
        assert out.per_sample[2] == 0.0

    def test_no_assigned_rejected(self):
        u = np.ones((2, 2))
        ctx = fixture_context(n=2, assigned=np.zeros(2, dtype=bool))
        with pytest.raises(ValueError):
            rebalanced_feature_loss([u], u, ctx)


class TestRebalancedClass:
    def test_single_candidate_zero_loss(self):
        # V=0 views: only the pseudo-label candidate, softmax of one = 1
        p = np.array([[0.6, 0.4]])
        labels = make_labels([[1.0, 0.0]])
        ctx = RebalanceContext(eta=np.zeros(1), assigned=np.array([True]),
                               class_weight=np.array([1.0, 1.0]),
                               w_view=0.0, w_target=1.0)
        out = rebalanced_class_loss([], p, labels, ctx)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_independent_scalar_reimplementation(self):
        # K=2, V=1 concrete instance checked against a from-scratch scalar
        # evaluation of the same weighted softmax-score formula
        pv = np.array([[0.7, 0.3]])
        p = np.array([[0.6, 0.4]])
        labels = make_labels([[1.0, 0.0]])
        w_c = np.array([0.75, 0.25])
        ctx = RebalanceContext(eta=np.zeros(1), assigned=np.array([True]),
                               class_weight=w_c)
        out = rebalanced_class_loss([pv], p, labels, ctx)
        s_view = 0.7 * 0.6 + 0.3 * 0.4
        s_target = 1.0 * 0.75 * 0.6 + 0.0 * 0.25 * 0.4
        z = math.exp(s_view) + math.exp(s_target)
        expect = -0.8 * math.log(math.exp(s_view) / z) \
            - 0.2 * math.log(math.exp(s_target) / z)
        assert out.value == pytest.approx(expect, abs=1e-12)

    def test_unassigned_samples_skipped(self):
        rng = np.random.default_rng(12)
        pv = [softmax_rows(rng.normal(size=(3, 2)))]
        p = softmax_rows(rng.normal(size=(3, 2)))
        soft = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        labels = make_labels(soft, n=3)
        assert labels.hard[1] == -1
        ctx = make_rebalance_context(labels)
        out = rebalanced_class_loss(pv, p, labels, ctx)
        assert out.per_sample[1] == 0.0

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(13)
        n, k = 4, 3
        pv = [rng.dirichlet(np.ones(k), size=n) for _ in range(2)]
        p = rng.dirichlet(np.ones(k), size=n)
        labels = make_labels(rng.dirichlet(np.ones(k), size=n))
        ctx = make_rebalance_context(labels)
        _, d_pv, d_p = rebalanced_class_loss_grads(pv, p, labels, ctx)
        h = 1e-7

        def value(p_views, p_cons):
            return rebalanced_class_loss(p_views, p_cons, labels, ctx).value

        for idx in [(0, 0), (2, 1), (3, 2)]:
            pp = p.copy()
            pp[idx] += h
            pm = p.copy()
            pm[idx] -= h
            fd = (value(pv, pp) - value(pv, pm)) / (2 * h)
            assert d_p[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)
            vp = [x.copy() for x in pv]
            vp[1][idx] += h
            vm = [x.copy() for x in pv]
            vm[1][idx] -= h
            fd = (value(vp, p) - value(vm, p)) / (2 * h)
            assert d_pv[1][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestImbalanceLoss:
    def test_equals_sum_of_parts(self):
        rng = np.random.default_rng(14)
        n, d, k = 4, 3, 3
        h = [rng.normal(size=(n, d))]
        u = rng.normal(size=(n, d))
        pv = [rng.dirichlet(np.ones(k), size=n)]
        p = rng.dirichlet(np.ones(k), size=n)
        labels = make_labels(rng.dirichlet(np.ones(k), size=n))
        ctx = make_rebalance_context(labels)
        total = imbalance_loss(h, u, pv, p, labels, ctx).value
        fea = rebalanced_feature_loss(h, u, ctx).value
        sem = rebalanced_class_loss(pv, p, labels, ctx).value
        assert total == pytest.approx(fea + sem)


class TestNetworkGradientSuite:
    """Full-model analytic vs central finite-difference gradients for every
    loss, on the seeded 4-sample latent-8 3-class configuration."""

    TOL = 1e-4

    def test_reconstruction(self, small_net):
        config, params, views = small_net
        err = loss_gradient_check(
            params, views,
            lambda c: reconstruction_loss(views, c.xhat),
            lambda c: dict(
                d_xhat=reconstruction_loss_grads(views, c.xhat)[1]))
        assert err < self.TOL

    def test_structure_contrastive(self, small_net):
        config, params, views = small_net

        def kwargs(c):
            _, d_h, d_u, d_g = structure_contrastive_loss_grads(
                c.h, c.u_proj, c.structure)
            return dict(d_h=d_h, d_u_proj=d_u, d_structure=d_g)

        err = loss_gradient_check(
            params, views,
            lambda c: structure_contrastive_loss(c.h, c.u_proj, c.structure),
            kwargs)
        assert err < self.TOL

    def test_semantic_alignment(self, small_net):
        config, params, views = small_net

        def loss(c):
            vals = [semantic_alignment_loss(pv, c.p_consensus,
                                            config.tau_l).value
                    for pv in c.p_views]
            from potmvc.losses import LossValue
            return LossValue(sum(vals) / len(vals))

        def kwargs(c):
            from potmvc.losses import semantic_alignment_loss_grads
            n_views = len(c.p_views)
            d_pv = []
            d_p = None
            for pv in c.p_views:
                _, dv, dp = semantic_alignment_loss_grads(pv, c.p_consensus,
                                                          config.tau_l)
                d_pv.append(dv / n_views)
                d_p = dp / n_views if d_p is None else d_p + dp / n_views
            return dict(d_p_views=d_pv, d_p_consensus=d_p)

        err = loss_gradient_check(params, views, loss, kwargs)
        assert err < self.TOL

    def test_align(self, small_net):
        config, params, views = small_net

        def kwargs(c):
            _, d_h, d_u, d_g, d_pv, d_p = align_loss_grads(
                c.h, c.u_proj, c.structure, c.p_views, c.p_consensus)
            return dict(d_h=d_h, d_u_proj=d_u, d_structure=d_g,
                        d_p_views=d_pv, d_p_consensus=d_p)

        err = loss_gradient_check(
            params, views,
            lambda c: align_loss(c.h, c.u_proj, c.structure, c.p_views,
                                 c.p_consensus),
            kwargs)
        assert err < self.TOL

    def test_self_label_ce(self, small_net):
        config, params, views = small_net
        rng = np.random.default_rng(15)
        t = rng.dirichlet(np.ones(config.n_classes), size=4)
        alpha = 0.5

        def mixed(c):
            mean_views = np.mean(c.p_views, axis=0)
            return alpha * c.p_consensus + (1 - alpha) * mean_views

        def kwargs(c):
            _, d_mix = self_label_ce_grads(mixed(c), t)
            n_views = len(c.p_views)
            return dict(
                d_p_views=[(1 - alpha) / n_views * d_mix] * n_views,
                d_p_consensus=alpha * d_mix)

        err = loss_gradient_check(
            params, views, lambda c: self_label_ce(mixed(c), t), kwargs)
        assert err < self.TOL

    def _context(self, config):
        rng = np.random.default_rng(16)
        soft = rng.dirichlet(np.ones(config.n_classes), size=4) / 4
        soft[1] *= 0.1  # leave one sample unassigned
        labels = make_labels(soft, n=4)
        return labels, make_rebalance_context(labels)

    def test_rebalanced_feature(self, small_net):
        config, params, views = small_net
        labels, ctx = self._context(config)

        def kwargs(c):
            from potmvc.losses import rebalanced_feature_loss_grads
            _, d_h, d_u = rebalanced_feature_loss_grads(c.h, c.u_proj, ctx)
            return dict(d_h=d_h, d_u_proj=d_u)

        err = loss_gradient_check(
            params, views,
            lambda c: rebalanced_feature_loss(c.h, c.u_proj, ctx),
            kwargs)
        assert err < self.TOL

    def test_rebalanced_class(self, small_net):
        config, params, views = small_net
        labels, ctx = self._context(config)

        def kwargs(c):
            _, d_pv, d_p = rebalanced_class_loss_grads(
                c.p_views, c.p_consensus, labels, ctx)
            return dict(d_p_views=d_pv, d_p_consensus=d_p)

        err = loss_gradient_check(
            params, views,
            lambda c: rebalanced_class_loss(c.p_views, c.p_consensus,
                                            labels, ctx),
            kwargs)
        assert err < self.TOL

    def test_imbalance_total(self, small_net):
        config, params, views = small_net
        labels, ctx = self._context(config)

        def kwargs(c):
            _, d_h, d_u, d_pv, d_p = imbalance_loss_grads(
                c.h, c.u_proj, c.p_views, c.p_consensus, labels, ctx)
            return dict(d_h=d_h, d_u_proj=d_u, d_p_views=d_pv,
                        d_p_consensus=d_p)

        err = loss_gradient_check(
            params, views,
            lambda c: imbalance_loss(c.h, c.u_proj, c.p_views,
                                     c.p_consensus, labels, ctx),
            kwargs)
        assert err < self.TOL
