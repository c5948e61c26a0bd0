"""Pseudo-labels from model predictions: prediction mixing, the progressive
mass schedule, solver invocation, and class-frequency statistics."""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_row_stochastic, check_same_rows
from .losses import RebalanceContext
from .transport import PotConfig, pot_uot_scaling, sinkhorn

UNASSIGNED = -1

_PROB_FLOOR = 1e-12


@dataclass
class MixedPrediction:
    p_hat: np.ndarray
    alpha: float


@dataclass
class MassSchedule:
    lambda_base: float
    lambda_max: float = 1.0
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 < self.lambda_base <= self.lambda_max <= 1.0:
            raise ValueError("need 0 < lambda_base <= lambda_max <= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")


@dataclass
class PseudoLabels:
    """Transport pseudo-labels: soft rows are the plan T*, hard labels the
    row argmax where enough mass landed, and the class statistics cover the
    assigned samples only."""

    soft: np.ndarray
    hard: np.ndarray
    row_mass: np.ndarray
    class_counts: np.ndarray
    class_freq: np.ndarray
    class_weight: np.ndarray
    converged: bool = True
    solver_iterations: int = 0

    @property
    def assigned(self):
        return self.hard != UNASSIGNED

    @property
    def n_assigned(self):
        return int(self.assigned.sum())

    def unit_rows(self):
        """Soft rows rescaled to unit mass (zero rows stay zero)."""
        mass = self.row_mass[:, None]
        return np.divide(self.soft, mass, out=np.zeros_like(self.soft),
                         where=mass > _PROB_FLOOR)


def mix_predictions(consensus, views, alpha):
    """Blend the consensus prediction with the mean view prediction:
    alpha*P + ((1-alpha)/V) * sum_v P^v."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    consensus = check_row_stochastic(consensus, "consensus")
    views = [check_row_stochastic(p, f"view {v}")
             for v, p in enumerate(views)]
    check_same_rows([consensus, *views])
    for v, p in enumerate(views):
        if p.shape != consensus.shape:
            raise ValueError(f"view {v} prediction shape {p.shape} does not "
                             f"match consensus {consensus.shape}")
    p_hat = alpha * consensus
    if views:
        p_hat = p_hat + (1.0 - alpha) / len(views) * np.sum(views, axis=0)
    return MixedPrediction(p_hat=p_hat, alpha=alpha)


def lambda_at(schedule, step):
    """Transported-mass fraction after ``step`` of ``total_steps``:
    lambda_base + (lambda_max - lambda_base) * exp(-5 (1 - tau)^2)."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    tau = step / schedule.total_steps
    ramp = math.exp(-5.0 * (1.0 - tau) ** 2)
    return schedule.lambda_base + \
        (schedule.lambda_max - schedule.lambda_base) * ramp


def _labels_from_plan(plan, row_mass, n_classes, converged, iterations):
    n = plan.shape[0]
    threshold = 0.5 / n
    hard = np.where(row_mass >= threshold, plan.argmax(axis=1), UNASSIGNED)
    hard = hard.astype(np.int64)
    assigned = hard != UNASSIGNED
    counts = np.bincount(hard[assigned], minlength=n_classes)
    total = counts.sum()
    freq = counts / total if total > 0 else np.zeros(n_classes)
    return PseudoLabels(soft=plan, hard=hard, row_mass=row_mass,
                        class_counts=counts, class_freq=freq,
                        class_weight=freq.copy(), converged=converged,
                        solver_iterations=iterations)


def assign_pot_labels(mixed, lam, config=None):
    """Solve the partial+unbalanced transport problem on -log(p_hat) and
    threshold row masses at half the per-sample budget into hard labels.

    A non-converged solve still returns labels, flagged via ``converged``.
    """
    if config is None:
        config = PotConfig()
    p_hat = check_row_stochastic(mixed.p_hat, "p_hat")
    cost = -np.log(np.maximum(p_hat, _PROB_FLOOR))
    result = pot_uot_scaling(cost, lam, config)
    return _labels_from_plan(result.plan, result.row_marginal,
                             p_hat.shape[1], result.converged,
                             result.iterations_used)


def assign_balanced_labels(mixed, config=None):
    """Baseline labeler: balanced transport with uniform marginals (full
    mass, hard cluster-size constraints)."""
    if config is None:
        config = PotConfig()
    p_hat = check_row_stochastic(mixed.p_hat, "p_hat")
    n, k = p_hat.shape
    cost = -np.log(np.maximum(p_hat, _PROB_FLOOR))
    result = sinkhorn(cost, np.full(n, 1.0 / n), np.full(k, 1.0 / k),
                      epsilon=config.epsilon, max_iter=config.max_iter,
                      tol=min(config.tol, 1e-9))
    return _labels_from_plan(result.plan, result.row_marginal, k,
                             result.converged, result.iterations_used)


def class_statistics(labels):
    """(class_freq, class_weight) over the assigned samples."""
    if labels.n_assigned == 0:
        raise ValueError("no assigned samples")
    counts = np.bincount(labels.hard[labels.assigned],
                         minlength=labels.soft.shape[1])
    freq = counts / counts.sum()
    return freq, freq.copy()


def make_rebalance_context(labels, w_view=0.8, w_target=0.2, tau_f=0.5):
    """Constants for the rebalanced losses: per-sample logit adjustments
    -log(pseudo-label class frequency) and the class weights."""
    freq, weight = class_statistics(labels)
    eta = np.zeros(len(labels.hard))
    assigned = labels.assigned
    eta[assigned] = -np.log(freq[labels.hard[assigned]])
    return RebalanceContext(eta=eta, assigned=assigned, class_weight=weight,
                            w_view=w_view, w_target=w_target, tau_f=tau_f)
