"""Semantic-constraint matching between the primal and shuffled activation maps.

Staircase-weighted marginals, a cosine cost between spatial features, entropic
optimal transport solved by log-domain Sinkhorn iterations recorded on the
tape, and refinement of the features through the solved flow.
"""
from typing import Optional, Tuple, Union

import numpy as np

from app.config import Settings
from app.core.errors import ConfigError, MatchingError, NonFiniteError, ShapeError
from app.core.logging import get_logger
from app.models.matching import (
    DiscreteDistribution,
    StaircaseConfig,
    TransportPlan,
    entropic_objective,
)
from app.services import metrics
from app.services.params import ACROSS_PREFIX, ModelParams
from app.services.tensor import (
    Tensor,
    as_tensor,
    concatenate,
    exp,
    logsumexp,
    matmul,
    reshape,
    softmax,
    split,
    sqrt,
    tensor_sum,
    transpose,
)
from app.services.vit import attention_block, linear

logger = get_logger("matching")

COSINE_GUARD = 1e-8
# Added under the square root so a zero feature vector keeps a finite gradient.
NORM_GUARD = 1e-24
# Zero-mass positions get log weight log(LOG_FLOOR) instead of -inf.
LOG_FLOOR = 1e-300
MARGINAL_TOLERANCE = 1e-9
ORACLE_MAX_SIDE = 3

Marginal = Union[DiscreteDistribution, np.ndarray, Tensor]


def _flatten_spatial(maps: Tensor) -> Tensor:
    """c x h x w -> c x hw"""
    c, h, w = maps.shape
    return reshape(maps, (c, h * w))


def across_transformer(F_prime_p: Tensor, F_prime_h: Tensor, params: ModelParams,
                       settings: Settings, enabled: Optional[bool] = None) -> Tuple[Tensor, Tensor]:
    """Co-attention over all 2hw spatial tokens of the pair.

    Disabled, it passes both maps through unchanged.
    """
    F_prime_p, F_prime_h = as_tensor(F_prime_p), as_tensor(F_prime_h)
    if F_prime_p.ndim != 3 or F_prime_p.shape != F_prime_h.shape:
        raise ShapeError.mismatch("across_transformer", F_prime_p.shape, F_prime_h.shape)
    if enabled is None:
        enabled = settings.use_across_transformer
    if not enabled:
        return F_prime_p, F_prime_h

    c, h, w = F_prime_p.shape
    tokens = concatenate([transpose(_flatten_spatial(F_prime_p)),
                          transpose(_flatten_spatial(F_prime_h))], axis=0)
    x = linear(tokens, params[ACROSS_PREFIX + "in_proj.weight"], params[ACROSS_PREFIX + "in_proj.bias"])
    x, _ = attention_block(x, params, ACROSS_PREFIX + "block.", settings.across_heads)
    x = linear(x, params[ACROSS_PREFIX + "out_proj.weight"], params[ACROSS_PREFIX + "out_proj.bias"])
    out_p, out_h = split(x, 2, axis=0)
    return (reshape(transpose(out_p), (c, h, w)),
            reshape(transpose(out_h), (c, h, w)))


def staircase(M: Union[Tensor, np.ndarray], cfg: StaircaseConfig) -> Tensor:
    """A(x) = sum_i beta_i * [M(x) > alpha_i] on a map normalized to [0, 1]"""
    if cfg.mu <= 0:
        raise ConfigError(f"staircase: stair scale mu must be > 0, got {cfg.mu}")
    values = as_tensor(M).data
    stairs = np.zeros(values.shape)
    for alpha, beta in zip(cfg.alpha, cfg.beta):
        stairs = stairs + beta * (values > alpha)
    return Tensor(stairs)


def to_distribution(A: Union[Tensor, np.ndarray]) -> DiscreteDistribution:
    """Flatten and normalize; an all-zero map falls back to uniform"""
    weights = as_tensor(A).data.reshape(-1)
    if np.any(weights < 0):
        raise MatchingError("to_distribution: weights must be non-negative")
    total = weights.sum()
    if total == 0:
        return DiscreteDistribution(weights=np.full(weights.size, 1.0 / weights.size))
    return DiscreteDistribution(weights=weights / total)


def cost_matrix(O_p: Tensor, O_h: Tensor) -> Tensor:
    """Gamma[i, j] = 1 - cos(o_p^i, o_h^j) over flattened spatial positions"""
    O_p, O_h = as_tensor(O_p), as_tensor(O_h)
    if O_p.ndim != 3 or O_h.ndim != 3 or O_p.shape[0] != O_h.shape[0]:
        raise ShapeError.mismatch("cost_matrix", O_p.shape, O_h.shape)
    x = transpose(_flatten_spatial(O_p))
    y = transpose(_flatten_spatial(O_h))
    dots = matmul(x, transpose(y))
    norm_x = sqrt(tensor_sum(x * x, axis=1) + NORM_GUARD)
    norm_y = sqrt(tensor_sum(y * y, axis=1) + NORM_GUARD)
    denom = reshape(norm_x, (-1, 1)) * reshape(norm_y, (1, -1)) + COSINE_GUARD
    return 1.0 - dots / denom


def _marginal(value: Marginal, name: str) -> np.ndarray:
    if isinstance(value, DiscreteDistribution):
        return value.weights
    weights = np.asarray(as_tensor(value).data, dtype=np.float64).reshape(-1)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise MatchingError(f"{name} marginal must be finite and non-negative")
    return weights


def _check_problem(cost: Tensor, a: np.ndarray, b: np.ndarray, epsilon: float) -> None:
    if epsilon <= 0:
        raise ConfigError(f"entropic regularization epsilon must be > 0, got {epsilon}")
    if cost.shape != (a.size, b.size):
        raise ShapeError.mismatch("sinkhorn cost vs marginals", cost.shape, (a.size, b.size))
    if abs(a.sum() - b.sum()) > MARGINAL_TOLERANCE:
        raise MatchingError(f"infeasible marginals: sums {a.sum()} and {b.sum()} differ")


def marginal_error(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(max(np.max(np.abs(plan.sum(axis=1) - a)),
                     np.max(np.abs(plan.sum(axis=0) - b))))


def sinkhorn(cost: Tensor, source: Marginal, target: Marginal, epsilon: float = 0.1,
             max_iters: int = 200, tol: float = 1e-6) -> TransportPlan:
    """Entropic OT plan T = diag(u) K diag(v), K = exp(-Gamma / eps), in the log domain.

    Stops once the marginal violation drops below ``tol`` (``tol=0`` runs all
    ``max_iters`` iterations). Every iteration is recorded on the active tape,
    so gradients reach ``cost``; the marginals are constants.
    """
    cost = as_tensor(cost)
    a, b = _marginal(source, "source"), _marginal(target, "target")
    _check_problem(cost, a, b, epsilon)

    log_a = Tensor(np.log(np.maximum(a, LOG_FLOOR)))
    log_b = Tensor(np.log(np.maximum(b, LOG_FLOOR)))
    scaled = cost * (-1.0 / epsilon)
    f = Tensor(np.zeros(a.size))
    g = Tensor(np.zeros(b.size))

    iterations, error = 0, np.inf
    for iterations in range(1, max_iters + 1):
        f = epsilon * (log_a - logsumexp(scaled + reshape(g, (1, -1)) * (1.0 / epsilon), axis=1))
        g = epsilon * (log_b - logsumexp(scaled + reshape(f, (-1, 1)) * (1.0 / epsilon), axis=0))
        if tol > 0:
            log_plan = scaled.data + (f.data[:, None] + g.data[None, :]) / epsilon
            error = float(np.max(np.abs(np.exp(log_plan).sum(axis=1) - a)))
            if error < tol:
                break

    flow = exp(scaled + (reshape(f, (-1, 1)) + reshape(g, (1, -1))) * (1.0 / epsilon))
    if not np.all(np.isfinite(flow.data)):
        raise NonFiniteError(f"sinkhorn: non-finite kernel after stabilization (epsilon={epsilon})")

    error = marginal_error(flow.data, a, b)
    converged = error <= tol
    metrics.SINKHORN_ITERATIONS.observe(iterations)
    metrics.SINKHORN_MARGINAL_ERROR.set(error)
    if tol > 0 and not converged:
        logger.warning("sinkhorn_not_converged", iterations=iterations,
                       marginal_error=error, tol=tol, epsilon=epsilon)

    return TransportPlan(cost=cost, source=a, target=b, epsilon=epsilon,
                         iterations=iterations, flow=flow, marginal_error=error,
                         converged=converged)


def _plans_from_free(free: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Complete (..., n-1, m-1) free entries into (..., n, m) plans with marginals a, b"""
    n, m = a.size, b.size
    lead = free.shape[:-2]
    plans = np.zeros(lead + (n, m))
    plans[..., : n - 1, : m - 1] = free
    plans[..., : n - 1, m - 1] = a[: n - 1] - free.sum(axis=-1)
    plans[..., n - 1, : m - 1] = b[: m - 1] - free.sum(axis=-2)
    plans[..., n - 1, m - 1] = a[n - 1] - plans[..., n - 1, : m - 1].sum(axis=-1)
    return plans


def _objectives(plans: np.ndarray, cost: np.ndarray, epsilon: float) -> np.ndarray:
    feasible = np.all(plans >= 0, axis=(-2, -1))
    clipped = np.maximum(plans, 0.0)
    safe = np.where(clipped > 0, clipped, 1.0)
    entropy = np.where(clipped > 0, clipped * (np.log(safe) - 1.0), 0.0)
    values = (clipped * cost).sum(axis=(-2, -1)) + epsilon * entropy.sum(axis=(-2, -1))
    return np.where(feasible, values, np.inf)


def exact_entropic_oracle(cost: Union[Tensor, np.ndarray], source: Marginal, target: Marginal,
                          epsilon: float, budget: int = 200_000,
                          final_resolution: float = 1e-6) -> np.ndarray:
    """Brute-force minimizer of <T, Gamma> + eps * sum T (log T - 1) for at most 3 x 3.

    Scans the free entries of the transportation polytope on a dense grid and
    zooms into the best cell until the grid step is below ``final_resolution``.
    Strict convexity of the objective keeps the optimum inside each zoom window.
    """
    cost = as_tensor(cost)
    a, b = _marginal(source, "source"), _marginal(target, "target")
    _check_problem(cost, a, b, epsilon)
    n, m = a.size, b.size
    if n > ORACLE_MAX_SIDE or m > ORACLE_MAX_SIDE:
        raise ShapeError(f"exact_entropic_oracle: {n}x{m} exceeds {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}")

    free_shape = (n - 1, m - 1)
    k = free_shape[0] * free_shape[1]
    if k == 0:
        return _plans_from_free(np.zeros(free_shape), a, b)

    bounds = np.array([min(a[i], b[j]) for i in range(n - 1) for j in range(m - 1)])
    upper = bounds.copy()
    lower = np.zeros(k)
    points = max(11, int(budget ** (1.0 / k)))
    best = (lower + upper) / 2.0
    step = np.inf
    while step > final_resolution:
        axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        values = _objectives(_plans_from_free(grid.reshape(-1, *free_shape), a, b),
                             cost.data, epsilon)
        best = grid[int(np.argmin(values))]
        step = float(max((hi - lo) / (points - 1) for lo, hi in zip(lower, upper)))
        if step == 0:
            break
        lower = np.maximum(best - 4 * step, 0.0)
        upper = np.minimum(best + 4 * step, bounds)
    return _plans_from_free(best.reshape(free_shape), a, b)


def independent_coupling(source: Marginal, target: Marginal) -> np.ndarray:
    a, b = _marginal(source, "source"), _marginal(target, "target")
    return np.outer(a, b)


def plan_objective(plan: np.ndarray, cost: Union[Tensor, np.ndarray], epsilon: float) -> float:
    return entropic_objective(plan, as_tensor(cost).data, epsilon)


def refine(O_p: Tensor, O_h: Tensor, flow: Tensor) -> Tuple[Tensor, Tensor]:
    """T_p = O_p softmax(T_hat), T_h = O_h softmax(T_hat^T), softmax over the source axis"""
    O_p, O_h, flow = as_tensor(O_p), as_tensor(O_h), as_tensor(flow)
    if O_p.ndim != 3 or O_p.shape != O_h.shape:
        raise ShapeError.mismatch("refine", O_p.shape, O_h.shape)
    c, h, w = O_p.shape
    if flow.shape != (h * w, h * w):
        raise ShapeError.mismatch("refine flow", flow.shape, (h * w, h * w))
    T_p = matmul(_flatten_spatial(O_p), softmax(flow, axis=0))
    T_h = matmul(_flatten_spatial(O_h), softmax(transpose(flow), axis=0))
    return reshape(T_p, (c, h, w)), reshape(T_h, (c, h, w))
