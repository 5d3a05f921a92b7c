"""Prediction heads on the tangent representation.

* relation head: does a neighbour share the centre node's treatment?
* two outcome regressors, one per treatment arm, with disjoint parameters
* entropic optimal-transport distance between treated and control clouds,
  plus a brute-force exact solver used as a test oracle
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import diffcore as dc

PROB_CLAMP = 1e-7
ANNEAL_TOL = 1e-3
ANNEAL_RATIO = 100.0


class ConfigurationError(ValueError):
    pass


# relation head -----------------------------------------------------------------
def pair_probability(h_center, h_neighbor, W, b):
    """``sigmoid(W (h_i || h_j) + b)``; works row-wise on batches."""
    if isinstance(h_center, dc.Tensor) or isinstance(h_neighbor, dc.Tensor) or isinstance(W, dc.Tensor):
        z = dc.concat([h_center, h_neighbor], axis=-1)
        W = W if isinstance(W, dc.Tensor) else dc.Tensor(W)
        logit = (z @ W.T).sum(axis=-1) + b
        return dc.sigmoid(logit)
    z = np.concatenate([np.asarray(h_center, float), np.asarray(h_neighbor, float)], axis=-1)
    W = np.asarray(W, float).reshape(-1)
    if W.shape[0] != z.shape[-1]:
        raise ValueError(f"relation weights have length {W.shape[0]}, expected {z.shape[-1]}")
    return dc.sigmoid(z @ W + np.asarray(b, float).reshape(()))


def pair_label(t_i, t_j):
    return int(int(t_i) == int(t_j))


class PairSample(NamedTuple):
    center: int
    neighbor: int
    label: int


@dataclass
class PairBatch:
    centers: np.ndarray
    neighbors: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.centers)

    def __iter__(self):
        for i, j, p in zip(self.centers, self.neighbors, self.labels):
            yield PairSample(int(i), int(j), int(p))


def n_samples(n1, n0):
    """``ceil(min(n1, n0) / 5)``."""
    return -(-min(n1, n0) // 5)


def sample_pairs(graph, treatments, seed, epoch, nodes=None):
    """Draw centre/neighbour pairs for the relation task.

    For every centre ``i`` the neighbours are split by treatment into ``N1`` and
    ``N0``; ``ceil(min(|N1|, |N0|) / 5)`` are drawn without replacement from
    each. When ``nodes`` is given, both endpoints are restricted to it. The draw
    depends only on ``(seed, epoch)``.
    """
    t = np.asarray(treatments).astype(np.int64)
    allowed = np.ones(graph.n, dtype=bool)
    if nodes is not None:
        allowed = np.zeros(graph.n, dtype=bool)
        allowed[np.asarray(nodes)] = True
    rng = np.random.default_rng([int(seed), int(epoch)])
    centers, nbrs, labels = [], [], []
    for i in np.flatnonzero(allowed):
        nb = graph.neighbors(i)
        nb = nb[allowed[nb]]
        n1 = nb[t[nb] == 1]
        n0 = nb[t[nb] == 0]
        k = n_samples(len(n1), len(n0))
        if k == 0:
            continue
        for group in (n1, n0):
            pick = rng.choice(group, size=k, replace=False)
            centers.extend([i] * k)
            nbrs.extend(pick.tolist())
            labels.extend((t[pick] == t[i]).astype(np.int64).tolist())
    return PairBatch(
        np.asarray(centers, dtype=np.int64),
        np.asarray(nbrs, dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
    )


def relation_loss(labels, probs):
    """Mean binary cross-entropy over sampled pairs.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``. An empty pair set gives
    0 together with a ``RuntimeWarning``.
    """
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0:
        warnings.warn("relation loss over an empty pair set", RuntimeWarning, stacklevel=2)
        return dc.Tensor(0.0) if isinstance(probs, dc.Tensor) else 0.0
    if isinstance(probs, dc.Tensor):
        q = dc.clip(probs, PROB_CLAMP, 1 - PROB_CLAMP)
        ll = labels * dc.log(q) + (1 - labels) * dc.log(1 - q)
        return -ll.mean()
    q = np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(q) + (1 - labels) * np.log(1 - q)))


# outcome heads -------------------------------------------------------------------
@dataclass
class OutcomeConfig:
    in_dim: int
    hidden: int = 50
    layers: int = 1

    def param_shapes(self, arm):
        shapes = {}
        d = self.in_dim
        for l in range(self.layers):
            shapes[f"y{arm}.W{l}"] = (self.hidden, d)
            shapes[f"y{arm}.b{l}"] = (self.hidden,)
            d = self.hidden
        shapes[f"y{arm}.Wout"] = (1, d)
        shapes[f"y{arm}.bout"] = (1,)
        return shapes


def regressor(h, params, arm, layers):
    """One arm's network: ``layers`` ReLU blocks then a scalar output, row-wise."""
    z = h
    for l in range(layers):
        z = dc.relu(dc.affine(params[f"y{arm}.W{l}"], z, params[f"y{arm}.b{l}"]))
    out = dc.affine(params[f"y{arm}.Wout"], z, params[f"y{arm}.bout"])
    if isinstance(out, dc.Tensor):
        return out.sum(axis=-1)
    return np.asarray(out)[..., 0]


def outcome_forward(h, t, params, layers):
    """Predicted outcome under treatment ``t``; a scalar ``t`` or a per-row 0/1 array."""
    t = np.asarray(t)
    if t.ndim == 0:
        return regressor(h, params, int(t), layers)
    y1 = regressor(h, params, 1, layers)
    y0 = regressor(h, params, 0, layers)
    if isinstance(y1, dc.Tensor):
        return dc.where(t == 1, y1, y0)
    return np.where(t == 1, y1, y0)


def factual_loss(y_hat, y, mask=None):
    """Mean squared error over the masked nodes (factual outcomes only)."""
    y = np.asarray(y, dtype=float)
    idx = np.arange(len(y)) if mask is None else _mask_index(mask, len(y))
    if idx.size == 0:
        raise ConfigurationError("factual loss over an empty node mask")
    if isinstance(y_hat, dc.Tensor):
        r = y_hat[idx] - y[idx]
        return (r * r).mean()
    r = np.asarray(y_hat, dtype=float)[idx] - y[idx]
    return float(np.mean(r * r))


def _mask_index(mask, n):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


# optimal transport -----------------------------------------------------------------
def sq_euclidean_cost(a, b):
    if isinstance(a, dc.Tensor) or isinstance(b, dc.Tensor):
        a = a if isinstance(a, dc.Tensor) else dc.Tensor(a)
        b = b if isinstance(b, dc.Tensor) else dc.Tensor(b)
        aa = (a * a).sum(axis=1, keepdims=True)
        bb = (b * b).sum(axis=1, keepdims=True)
        return aa + bb.T - 2.0 * (a @ b.T)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(C, 0.0)


@dataclass
class TransportProblem:
    """Uniform-marginal transport between a treated and a control cloud.

    ``epsilon`` is used as given; when ``None`` it is ``epsilon_scale`` times the
    median entry of the cost matrix.
    """

    treated: np.ndarray
    control: np.ndarray
    epsilon: float = None
    epsilon_scale: float = 0.1
    max_iters: int = 100
    tol: float = 1e-9
    anneal: bool = True
    # optional warm start for the dual potentials
    potentials: tuple = field(default=None, repr=False)
    cost: np.ndarray = None
    plan: np.ndarray = None
    distance: float = None
    # epsilon * KL(P | a b^T) at the solution and the regularised objective
    regularizer: float = None
    objective: float = None
    epsilon_used: float = None
    converged: bool = False
    n_iter: int = 0
    marginal_error: float = field(default=None, repr=False)

    def __post_init__(self):
        self.treated = np.atleast_2d(np.asarray(self.treated, dtype=float))
        self.control = np.atleast_2d(np.asarray(self.control, dtype=float))
        if len(self.treated) == 0 or len(self.control) == 0 or self.treated.size == 0 or self.control.size == 0:
            raise ConfigurationError("transport needs non-empty treated and control clouds")
        if self.cost is None:
            self.cost = sq_euclidean_cost(self.treated, self.control)

    def resolved_epsilon(self):
        if self.epsilon is not None:
            if not self.epsilon > 0:
                raise ConfigurationError("entropic regularisation must be positive")
            return float(self.epsilon)
        med = float(np.median(self.cost))
        # all points coincide: any positive value gives the same zero-cost plan
        return self.epsilon_scale * med if med > 0 else 1.0


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn_distance(problem):
    """Log-domain Sinkhorn scaling; returns ``(<P, C>, P)`` and fills ``problem``.

    Besides the transport cost ``distance`` the problem receives the entropic
    objective ``objective = <P, C> + epsilon KL(P | a b^T)``, which is the value
    whose gradient the fixed plan gives exactly.

    When ``epsilon`` is small against the costs (``max(C) > 100 epsilon``) it is
    annealed from ``max(C)`` down to the target by halving, warm-starting the
    dual potentials each time; intermediate stages stop at a loose tolerance.
    Without annealing such problems converge sublinearly. ``max_iters`` bounds
    each stage.
    """
    C = problem.cost
    n1, n0 = C.shape
    eps = problem.resolved_epsilon()
    log_a = -math.log(n1)
    log_b = -math.log(n0)
    f = np.zeros(n1)
    g = np.zeros(n0)
    cmax = float(C.max())
    e = cmax if problem.anneal and cmax > ANNEAL_RATIO * eps else eps
    if problem.potentials is not None:
        f, g = (np.array(v, dtype=float) for v in problem.potentials)
        e = eps
    problem.converged = False
    problem.n_iter = 0
    while True:
        final = e == eps
        tol = problem.tol if final else ANNEAL_TOL
        for _ in range(problem.max_iters):
            f_new = e * (log_a - _lse((g[None, :] - C) / e, axis=1))
            g_new = e * (log_b - _lse((f_new[:, None] - C) / e, axis=0))
            change = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g))) / e
            f, g = f_new, g_new
            problem.n_iter += 1
            if change < tol:
                problem.converged = final
                break
        if final:
            break
        e = max(eps, e * 0.5)
    log_p = (f[:, None] + g[None, :] - C) / eps
    P = np.exp(log_p)
    problem.potentials = (f, g)
    problem.plan = P
    problem.epsilon_used = eps
    problem.distance = float(np.sum(P * C))
    problem.regularizer = eps * float(np.sum(P * (log_p - log_a - log_b)))
    problem.objective = problem.distance + problem.regularizer
    problem.marginal_error = max(
        float(np.max(np.abs(P.sum(axis=1) - 1.0 / n1))),
        float(np.max(np.abs(P.sum(axis=0) - 1.0 / n0))),
    )
    return problem.distance, P


def transport_cost(treated, control, plan):
    """``<P, C(h)>`` with the plan held fixed; differentiable in the clouds."""
    C = sq_euclidean_cost(treated, control)
    if isinstance(C, dc.Tensor):
        return (C * plan).sum()
    return float(np.sum(C * plan))


def balancing_term(treated, control, problem):
    """Entropic transport objective at a solved ``problem``, differentiable in the clouds.

    The plan and the entropy part are constants, so the gradient is
    ``<P, dC>``; by the envelope theorem this is the exact gradient of the
    regularised optimum at fixed epsilon.
    """
    return transport_cost(treated, control, problem.plan) + problem.regularizer


MAX_ORACLE_POINTS = 6


def exact_ot_oracle(problem):
    """Exact uniform-marginal transport cost for tiny clouds (at most 6 points each).

    Equal sizes: minimum over all permutation matchings. Unequal sizes ``n1``,
    ``n0``: each point is replicated ``lcm/n`` times so the integral vertices of
    the transportation polytope become assignments, which are solved exactly.
    """
    C = np.asarray(problem.cost, dtype=float)
    n1, n0 = C.shape
    if max(n1, n0) > MAX_ORACLE_POINTS:
        raise ConfigurationError(f"exact oracle limited to {MAX_ORACLE_POINTS} points per cloud")
    if n1 == n0:
        rows = np.arange(n1)
        best = min(C[rows, list(p)].sum() for p in itertools.permutations(range(n0)))
        return float(best) / n1
    L = math.lcm(n1, n0)
    big = np.repeat(np.repeat(C, L // n1, axis=0), L // n0, axis=1)
    r, c = linear_sum_assignment(big)
    return float(big[r, c].sum()) / L
