"""Hyperbolic graph-convolutional encoder on the Poincare ball.

Every layer runs linear -> Mobius bias -> neighbourhood aggregation -> ReLU,
with all Euclidean work done in the tangent space at the origin. The final
ball points are mapped back with ``log_0`` and that tangent representation is
what the prediction heads consume.

The functions accept plain arrays or :class:`~hyperite.diffcore.Tensor`
objects. With arrays they return arrays; with tensors the computation is
recorded for backpropagation.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .geometry import ARTANH_EPS, BALL_EPS, MIN_NORM


@dataclass
class HgcnConfig:
    in_dim: int
    hidden_dim: int = 50
    layers: int = 1
    c: float = 1e-2

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one HGCN layer")
        if self.in_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be positive")
        if not np.isfinite(self.c) or self.c < 0:
            raise ValueError("curvature magnitude must be finite and >= 0")

    def param_shapes(self):
        shapes = {}
        d_in = self.in_dim
        for l in range(self.layers):
            shapes[f"enc.W{l}"] = (self.hidden_dim, d_in)
            shapes[f"enc.b{l}"] = (self.hidden_dim,)
            d_in = self.hidden_dim
        return shapes


# differentiable ball maps ----------------------------------------------------
def _norm(x):
    return dc.sqrt(dc.clip((x * x).sum(axis=-1, keepdims=True), lo=MIN_NORM**2))


def project(x, c):
    if c == 0:
        return x
    maxnorm = (1 - BALL_EPS) / np.sqrt(c)
    norm = _norm(x)
    outside = norm.data > maxnorm
    if not outside.any():
        return x
    return x * dc.where(outside, maxnorm / norm, 1.0)


def expmap0(v, c):
    if c == 0:
        return v
    sc = np.sqrt(c)
    n = _norm(v) * sc
    return project(dc.tanh(n) * v / n, c)


def logmap0(y, c):
    if c == 0:
        return y
    sc = np.sqrt(c)
    n = _norm(y) * sc
    return dc.artanh(dc.clip(n, hi=1 - ARTANH_EPS)) * y / n


def mobius_add(x, y, c):
    if c == 0:
        return x + y
    x2 = (x * x).sum(axis=-1, keepdims=True)
    y2 = (y * y).sum(axis=-1, keepdims=True)
    xy = (x * y).sum(axis=-1, keepdims=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    den = 1 + 2 * c * xy + c**2 * x2 * y2
    return project(num / den, c)


def _wrap(*args):
    plain = not any(isinstance(a, dc.Tensor) for a in args)
    return plain, [a if isinstance(a, dc.Tensor) else dc.Tensor(a) for a in args]


def _out(t, plain):
    return t.data.copy() if plain else t


# layer pieces --------------------------------------------------------------------
def lift_features(x, c):
    """Treat Euclidean features as a tangent vector at the origin and map them onto the ball."""
    plain, (x,) = _wrap(x)
    return _out(expmap0(x, c), plain)


def hyp_linear(W, x, c):
    plain, (W, x) = _wrap(W, x)
    if W.shape[-1] != x.shape[-1]:
        raise ValueError(f"shape mismatch: W{W.shape} vs x{x.shape}")
    u = logmap0(x, c)
    u = u @ W.T if u.ndim > 1 else W @ u
    return _out(expmap0(u, c), plain)


def hyp_bias_add(x, b, c):
    plain, (x, b) = _wrap(x, b)
    return _out(mobius_add(x, expmap0(b, c), c), plain)


def aggregate(points, graph, c):
    """Per node: ``exp_0(sum_j a_ij log_0(x_j))`` over neighbours and the node itself."""
    plain, (points,) = _wrap(points)
    t = dc.spmm(graph.norm_adjacency(), logmap0(points, c))
    return _out(expmap0(t, c), plain)


def hyp_activation(x, c):
    plain, (x,) = _wrap(x)
    return _out(expmap0(dc.relu(logmap0(x, c)), c), plain)


def hgcn_layer(x, W, b, graph, c):
    plain, (x, W, b) = _wrap(x, W, b)
    h = hyp_linear(W, x, c)
    h = hyp_bias_add(h, b, c)
    h = aggregate(h, graph, c)
    h = hyp_activation(h, c)
    return _out(h, plain)


def encode(features, graph, config, params):
    """Run the encoder over the whole graph.

    Parameters
    ----------
    features : (n, d) array or Tensor
    graph : Graph
    config : HgcnConfig
    params : ParamStore or mapping with ``enc.W{l}`` / ``enc.b{l}`` entries

    Returns
    -------
    h_ball, h_tan
        Final ball points and their ``log_0`` images.
    """
    c = config.c
    plain = not isinstance(params, dc.ParamStore) and not isinstance(features, dc.Tensor)
    x = features if isinstance(features, dc.Tensor) else dc.Tensor(features)
    h = lift_features(x, c)
    for l in range(config.layers):
        W, b = params[f"enc.W{l}"], params[f"enc.b{l}"]
        h = hgcn_layer(h, W if isinstance(W, dc.Tensor) else dc.Tensor(W), b, graph, c)
    h_tan = logmap0(h, c)
    if plain:
        return h.data.copy(), h_tan.data.copy()
    return h, h_tan
