"""Entropic optimal-transport solvers.

Three fast scaling solvers plus a deliberately slow projected-descent
reference used as a correctness oracle in the test suite:

- ``sinkhorn``: balanced entropic OT with hard marginals.
- ``uot_sinkhorn``: unbalanced OT with KL-relaxed marginals.
- ``pot_uot_scaling``: the partial+unbalanced solver with a virtual column
  absorbing the untransported mass; this is the pseudo-label engine.
- ``reference_solver``: long-horizon projected gradient descent on the plan
  entries, independent of any scaling recursion.

All solvers are pure functions of their inputs and safe to call from many
threads at once.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _descent
from ._validation import as_matrix, as_vector
from .mathops import logsumexp_axis

# Entries of -C/epsilon below this would underflow to zeros that stall the
# multiplicative scaling, so the recursion switches to log space.
_LOG_DOMAIN_THRESHOLD = -60.0

_REFERENCE_MAX_ROWS = 8
_REFERENCE_MAX_COLS = 4


@dataclass
class TransportPlan:
    """A nonnegative coupling with its marginals and solver diagnostics.

    ``plan`` covers the real columns only; for the partial solver the
    virtual-column mass is reported separately in ``virtual_mass``.
    """

    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    total_mass: float
    iterations_used: int
    converged: bool
    virtual_mass: np.ndarray | None = None
    residuals: list = field(default_factory=list)


@dataclass
class PotConfig:
    """Knobs for the partial+unbalanced scaling solver.

    ``beta`` may be a scalar (broadcast over real columns) or a length-K
    vector; the virtual column always behaves as the infinite-weight limit.
    ``log_domain`` is "auto" (switch when the kernel would underflow), True,
    or False.
    """

    epsilon: float = 0.1
    beta: float | np.ndarray = 0.5
    max_iter: int = 1000
    tol: float = 1e-8
    log_domain: bool | str = "auto"

    def validate(self, n_cols):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim == 0:
            beta = np.full(n_cols, float(beta))
        if beta.shape != (n_cols,):
            raise ValueError(f"beta must be scalar or length {n_cols}")
        if np.any(beta <= 0):
            raise ValueError("beta must be positive on real columns")
        return beta


@dataclass
class ConstraintSpec:
    """Problem description for the reference solver.

    kind is one of "balanced" (hard marginals r, c), "unbalanced" (KL
    penalties gamma1, gamma2 towards r, c) or "partial" (hard uniform rows,
    total mass lam, per-column KL weights beta).
    """

    kind: str
    r: np.ndarray | None = None
    c: np.ndarray | None = None
    gamma1: float = 0.0
    gamma2: float = 0.0
    lam: float = 1.0
    beta: float | np.ndarray = 0.5


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _gen_kl(x, y):
    """Generalized KL sum(x log(x/y) - x + y) with 0 log 0 := 0."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos] / y[pos])
    return float(out.sum() - x.sum() + y.sum())


def balanced_objective(plan, cost, epsilon):
    """<Q,C> + eps * sum Q log Q, the balanced entropic objective."""
    return float((plan * cost).sum() + epsilon * _xlogx(plan).sum())


def uot_objective(plan, cost, r, c, epsilon, gamma1, gamma2):
    """Entropic unbalanced objective with generalized-KL marginal penalties."""
    kernel = np.exp(-cost / epsilon)
    ent = epsilon * _gen_kl(plan, kernel)
    return ent + gamma1 * _gen_kl(plan.sum(axis=1), r) \
        + gamma2 * _gen_kl(plan.sum(axis=0), c)


def pot_objective(plan, virtual_mass, log_pred, lam, epsilon, beta):
    """Objective of the partial+unbalanced problem on an extended plan.

    Evaluates eps*KL(T_ext || exp(-C/eps)) plus the weighted generalized-KL
    column penalty over the real columns; the virtual column enters only
    through the entropy term (its marginal is pinned to 1-lam).
    """
    n, k = log_pred.shape
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim == 0:
        beta = np.full(k, float(beta))
    ext = np.hstack([plan, virtual_mass.reshape(-1, 1)])
    log_kernel = np.hstack([-log_pred / epsilon, np.zeros((n, 1))])
    pos = ext > 0
    ent = np.zeros_like(ext)
    ent[pos] = ext[pos] * (np.log(ext[pos]) - log_kernel[pos])
    target = lam / k
    value = epsilon * ent.sum()
    for j in range(k):
        col = np.array([plan[:, j].sum()])
        value += beta[j] * _gen_kl(col, np.array([target]))
    return float(value)


def _wants_log_domain(neg_cost_over_eps):
    return (neg_cost_over_eps.min() < _LOG_DOMAIN_THRESHOLD
            or neg_cost_over_eps.max() > -_LOG_DOMAIN_THRESHOLD)


def sinkhorn(cost, r, c, epsilon, max_iter=1000, tol=1e-9):
    """Balanced entropic OT by Sinkhorn scaling.

    Parameters
    ----------
    cost : array (n, k)
    r, c : nonnegative marginals with equal total mass (within 1e-9).
    epsilon : float > 0, entropic regularization.
    max_iter, tol : iteration cap and sup-norm marginal tolerance.

    Returns
    -------
    TransportPlan with both marginals matched within ``tol`` when
    ``converged`` is True.
    """
    cost = as_matrix(cost, "cost")
    r = as_vector(r, "r")
    c = as_vector(c, "c")
    if np.any(r < 0) or np.any(c < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(r.sum() - c.sum()) > 1e-9:
        raise ValueError(f"marginal masses differ: {r.sum()} vs {c.sum()}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    scaled = -cost / epsilon
    if _wants_log_domain(scaled):
        return _sinkhorn_log(cost, r, c, epsilon, max_iter, tol)
    kernel = np.exp(scaled)
    u = np.where(r > 0, 1.0, 0.0)
    v = np.where(c > 0, 1.0, 0.0)
    converged = False
    it = 0
    residuals = []
    for it in range(1, max_iter + 1):
        kv = kernel @ v
        u = np.divide(r, kv, out=np.zeros_like(r), where=kv > 0)
        ku = kernel.T @ u
        v = np.divide(c, ku, out=np.zeros_like(c), where=ku > 0)
        row_err = np.max(np.abs(u * (kernel @ v) - r))
        residuals.append(float(row_err))
        if row_err < tol:
            converged = True
            break
    plan = u[:, None] * kernel * v[None, :]
    return TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                         col_marginal=plan.sum(axis=0),
                         total_mass=float(plan.sum()),
                         iterations_used=it, converged=converged,
                         residuals=residuals)


def _sinkhorn_log(cost, r, c, epsilon, max_iter, tol):
    with np.errstate(divide="ignore"):
        log_r = np.log(r)
        log_c = np.log(c)
    f = np.zeros_like(r)
    g = np.zeros_like(c)
    converged = False
    it = 0
    residuals = []
    for it in range(1, max_iter + 1):
        f = epsilon * (log_r - logsumexp_axis((g[None, :] - cost) / epsilon,
                                              axis=1))
        g = epsilon * (log_c - logsumexp_axis((f[:, None] - cost) / epsilon,
                                              axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
        row_err = np.max(np.abs(plan.sum(axis=1) - r))
        residuals.append(float(row_err))
        if row_err < tol:
            converged = True
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    return TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                         col_marginal=plan.sum(axis=0),
                         total_mass=float(plan.sum()),
                         iterations_used=it, converged=converged,
                         residuals=residuals)


def uot_sinkhorn(cost, r, c, epsilon, gamma1, gamma2, max_iter=1000,
                 tol=1e-9):
    """Unbalanced entropic OT: KL-proximal scaling with relaxed marginals.

    gamma1 and gamma2 weight the KL penalties pulling the row and column
    marginals towards r and c; in the limit of large gammas the solution
    approaches the balanced Sinkhorn plan.
    """
    cost = as_matrix(cost, "cost")
    r = as_vector(r, "r")
    c = as_vector(c, "c")
    if np.any(r < 0) or np.any(c < 0):
        raise ValueError("marginals must be nonnegative")
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError("gamma1 and gamma2 must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    fr = gamma1 / (gamma1 + epsilon)
    fc = gamma2 / (gamma2 + epsilon)
    scaled = -cost / epsilon
    if _wants_log_domain(scaled):
        return _uot_sinkhorn_log(cost, r, c, epsilon, fr, fc, max_iter, tol)
    kernel = np.exp(scaled)
    u = np.ones_like(r)
    v = np.ones_like(c)
    converged = False
    it = 0
    residuals = []
    for it in range(1, max_iter + 1):
        kv = kernel @ v
        u_new = np.where(kv > 0, r / np.where(kv > 0, kv, 1.0), 0.0) ** fr
        ku = kernel.T @ u_new
        v_new = np.where(ku > 0, c / np.where(ku > 0, ku, 1.0), 0.0) ** fc
        res = max(np.max(np.abs(u_new - u)), np.max(np.abs(v_new - v)))
        residuals.append(float(res))
        u, v = u_new, v_new
        if res < tol:
            converged = True
            break
    plan = u[:, None] * kernel * v[None, :]
    return TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                         col_marginal=plan.sum(axis=0),
                         total_mass=float(plan.sum()),
                         iterations_used=it, converged=converged,
                         residuals=residuals)


def _uot_sinkhorn_log(cost, r, c, epsilon, fr, fc, max_iter, tol):
    with np.errstate(divide="ignore"):
        log_r = np.log(r)
        log_c = np.log(c)
    log_kernel = -cost / epsilon
    log_u = np.zeros_like(r)
    log_v = np.zeros_like(c)
    converged = False
    it = 0
    residuals = []
    for it in range(1, max_iter + 1):
        log_u_new = fr * (log_r - logsumexp_axis(log_kernel + log_v[None, :],
                                                 axis=1))
        log_v_new = fc * (log_c - logsumexp_axis(
            log_kernel + log_u_new[:, None], axis=0))
        res = max(_log_residual(log_u_new, log_u),
                  _log_residual(log_v_new, log_v))
        residuals.append(float(res))
        log_u, log_v = log_u_new, log_v_new
        if res < tol:
            converged = True
            break
    plan = np.exp(log_u[:, None] + log_kernel + log_v[None, :])
    return TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                         col_marginal=plan.sum(axis=0),
                         total_mass=float(plan.sum()),
                         iterations_used=it, converged=converged,
                         residuals=residuals)


def _log_residual(new, old):
    """Sup-norm change of two log-scale vectors, treating -inf == -inf."""
    with np.errstate(invalid="ignore"):
        both_dead = np.isneginf(new) & np.isneginf(old)
        diff = np.where(both_dead, 0.0, new - old)
    diff = np.where(np.isnan(diff), np.inf, diff)
    return float(np.max(np.abs(diff)))


def pot_uot_scaling(log_pred, lam, config=None):
    """Partial+unbalanced transport of mass ``lam`` from samples to classes.

    Parameters
    ----------
    log_pred : array (n, k)
        Cost entries, i.e. -log of the (clamped) predicted probabilities.
    lam : float in (0, 1]
        Fraction of the total sample mass to transport to real classes; the
        remaining 1-lam lands on a virtual column handled as the exact
        infinite-weight limit (its marginal projection is exact).
    config : PotConfig

    Returns
    -------
    TransportPlan over the k real columns; ``virtual_mass`` carries the
    per-row untransported mass, and ``residuals`` the sup-norm change of the
    column scaling vector per iteration.
    """
    log_pred = as_matrix(log_pred, "log_pred")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    if config is None:
        config = PotConfig()
    n, k = log_pred.shape
    beta = config.validate(k)
    eps = config.epsilon
    cost = np.hstack([log_pred, np.zeros((n, 1))])
    c_star = np.concatenate([np.full(k, lam / k), [1.0 - lam]])
    # Virtual column exponent is the beta -> inf limit of beta/(beta+eps).
    f = np.concatenate([beta / (beta + eps), [1.0]])
    r = np.full(n, 1.0 / n)
    scaled = -cost / eps
    use_log = _wants_log_domain(scaled)
    if use_log and config.log_domain is False:
        raise OverflowError(
            "kernel exp(-cost/epsilon) would underflow; rerun with "
            "log_domain='auto' or True")
    if config.log_domain is True:
        use_log = True
    if use_log:
        return _pot_scaling_log(scaled, r, c_star, f, k,
                                config.max_iter, config.tol)
    kernel = np.exp(scaled)
    active = c_star > 0
    # When every active column shares one exponent, rescaling b is an exact
    # symmetry of the iteration (plans are unchanged); pinning the geometric
    # mean removes that wandering mode, which otherwise contracts only at
    # rate f and stalls the b residual for huge beta.
    fix_gauge = np.ptp(f[active]) == 0.0
    b = np.where(active, 1.0, 0.0)
    converged = False
    it = 0
    residuals = []
    for it in range(1, config.max_iter + 1):
        kb = kernel @ b
        a = r / kb
        ka = kernel.T @ a
        b_new = np.where(ka > 0, c_star / np.where(ka > 0, ka, 1.0), 0.0) ** f
        if fix_gauge:
            b_new = b_new / np.exp(np.mean(np.log(b_new[active])))
        res = float(np.max(np.abs(b_new - b)))
        residuals.append(res)
        b = b_new
        if res < config.tol:
            converged = True
            break
    a = r / (kernel @ b)
    ext = a[:, None] * kernel * b[None, :]
    return _extract_pot_plan(ext, k, it, converged, residuals)


def _pot_scaling_log(log_kernel, r, c_star, f, k, max_iter, tol):
    log_r = np.log(r)
    with np.errstate(divide="ignore"):
        log_c = np.log(c_star)
    active = c_star > 0
    fix_gauge = np.ptp(f[active]) == 0.0
    log_b = np.where(active, 0.0, -np.inf)
    converged = False
    it = 0
    residuals = []
    for it in range(1, max_iter + 1):
        log_a = log_r - logsumexp_axis(log_kernel + log_b[None, :], axis=1)
        log_b_new = f * (log_c - logsumexp_axis(
            log_kernel + log_a[:, None], axis=0))
        if fix_gauge:
            log_b_new = log_b_new - np.mean(log_b_new[active])
        res = _log_residual(log_b_new, log_b)
        residuals.append(res)
        log_b = log_b_new
        if res < tol:
            converged = True
            break
    log_a = log_r - logsumexp_axis(log_kernel + log_b[None, :], axis=1)
    ext = np.exp(log_a[:, None] + log_kernel + log_b[None, :])
    return _extract_pot_plan(ext, k, it, converged, residuals)


def _extract_pot_plan(ext, k, iterations, converged, residuals):
    plan = ext[:, :k].copy()
    return TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                         col_marginal=plan.sum(axis=0),
                         total_mass=float(plan.sum()),
                         iterations_used=iterations, converged=converged,
                         virtual_mass=ext[:, k].copy(), residuals=residuals)


def weighted_kl(x, y, w):
    """sum_i w_i x_i log(x_i / y_i) with the convention 0 log 0 = 0."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    w = as_vector(w, "w")
    if not (x.shape == y.shape == w.shape):
        raise ValueError("x, y, w must have equal lengths")
    if np.any(y <= 0):
        raise ValueError("y must be strictly positive")
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    terms = np.zeros_like(x)
    pos = x > 0
    terms[pos] = w[pos] * x[pos] * np.log(x[pos] / y[pos])
    return float(terms.sum())


def reference_solver(cost, constraint_spec, epsilon, iterations=100_000,
                     step0=1.0, decay=0.1, polish=2000, avg_frac=0.25):
    """Slow oracle: projected gradient descent directly on the plan entries.

    Runs ``iterations`` soft-sign normalized gradient steps with a
    1/(1+decay*t) schedule, keeps iterates feasible with Euclidean simplex
    projections, averages the tail iterates and polishes feasibility with
    pure alternating projections. Never touches any scaling recursion.
    Limited to 8x4 problems; meant for tests only.
    """
    cost = as_matrix(cost, "cost")
    n, k = cost.shape
    if n > _REFERENCE_MAX_ROWS or k > _REFERENCE_MAX_COLS:
        raise ValueError(
            f"reference_solver is limited to {_REFERENCE_MAX_ROWS}x"
            f"{_REFERENCE_MAX_COLS} problems, got {n}x{k}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    spec = constraint_spec
    if spec.kind == "balanced":
        r = as_vector(spec.r, "r")
        c = as_vector(spec.c, "c")
        plan = _descent.pgd_balanced(-cost / epsilon, r, c, epsilon,
                                     iterations, step0, decay, polish,
                                     avg_frac)
        virtual = None
    elif spec.kind == "unbalanced":
        r = as_vector(spec.r, "r")
        c = as_vector(spec.c, "c")
        plan = _descent.pgd_unbalanced(-cost / epsilon, r, c, epsilon,
                                       spec.gamma1, spec.gamma2,
                                       iterations, step0, decay, avg_frac)
        virtual = None
    elif spec.kind == "partial":
        ext = reference_pot_batch(cost[None, :, :], spec.lam, epsilon,
                                  spec.beta, iterations=iterations,
                                  step0=step0, decay=decay, polish=polish,
                                  avg_frac=avg_frac)[0]
        plan = ext[:, :k]
        virtual = ext[:, k]
    else:
        raise ValueError(f"unknown constraint kind {spec.kind!r}")
    result = TransportPlan(plan=plan, row_marginal=plan.sum(axis=1),
                           col_marginal=plan.sum(axis=0),
                           total_mass=float(plan.sum()),
                           iterations_used=iterations, converged=True)
    result.virtual_mass = virtual
    return result


def reference_pot_batch(costs, lam, epsilon, beta, iterations=100_000,
                        step0=1.0, decay=0.1, polish=2000, avg_frac=0.25):
    """Batched partial-mode oracle; returns extended plans (b, n, k+1).

    All instances share lam, epsilon and beta. Instances run in parallel;
    each one is solved independently and deterministically.
    """
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    b, n, k = costs.shape
    if n > _REFERENCE_MAX_ROWS or k > _REFERENCE_MAX_COLS:
        raise ValueError("reference solver size limits exceeded")
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim == 0:
        beta = np.full(k, float(beta))
    beta_pad = np.concatenate([beta, [0.0]])
    c_star = np.concatenate([np.full(k, lam / k), [1.0 - lam]])
    log_kernels = np.concatenate(
        [-costs / epsilon, np.zeros((b, n, 1))], axis=2)
    return _descent.pgd_partial_batch(
        np.ascontiguousarray(log_kernels), 1.0 / n, c_star, beta_pad,
        epsilon, iterations, step0, decay, polish, avg_frac)
