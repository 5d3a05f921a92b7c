"""Poincare ball math.

All functions act on the last axis, so a single point of shape ``(d,)`` and a
batch of shape ``(n, d)`` are handled alike. ``c`` is the curvature magnitude
(the ball has curvature ``-c``). ``c == 0`` is an exact Euclidean branch, not a
small-``c`` approximation.
"""

import numpy as np

# clamping safety
MIN_NORM = 1e-15
ZERO_VEC = 1e-12
ARTANH_EPS = 1e-15
BALL_EPS = 1e-5


class GeometryDomainError(ValueError):
    """A point or operation left the domain of the Poincare ball."""


def _check_c(c):
    c = float(c)
    if not np.isfinite(c) or c < 0:
        raise GeometryDomainError(f"curvature magnitude must be finite and >= 0, got {c}")
    return c


def _sqnorm(x):
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x):
    return np.sqrt(_sqnorm(x))


def artanh(x):
    x = np.clip(x, -1 + ARTANH_EPS, 1 - ARTANH_EPS)
    return 0.5 * (np.log1p(x) - np.log1p(-x))


def conformal_factor(x, c):
    """lambda_x = 2 / (1 - c ||x||^2), with shape ``x.shape[:-1] + (1,)``."""
    c = _check_c(c)
    x = np.asarray(x, dtype=float)
    if c == 0:
        return np.full(x.shape[:-1] + (1,), 2.0)
    denom = 1.0 - c * _sqnorm(x)
    if np.any(denom <= 0):
        raise GeometryDomainError("point lies on or outside the ball boundary")
    return 2.0 / denom


def project_to_ball(x, c):
    """Pull points back to norm at most ``(1 - 1e-5) / sqrt(c)``."""
    c = _check_c(c)
    x = np.asarray(x, dtype=float)
    if c == 0:
        return x.copy()
    maxnorm = (1 - BALL_EPS) / np.sqrt(c)
    norm = np.maximum(_norm(x), MIN_NORM)
    return np.where(norm > maxnorm, x / norm * maxnorm, x)


def mobius_add(x, y, c):
    c = _check_c(c)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if c == 0:
        return x + y
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    denom = 1 + 2 * c * xy + c**2 * x2 * y2
    if np.any(denom <= MIN_NORM):
        raise GeometryDomainError("Mobius addition of (near-)antipodal boundary points")
    return project_to_ball(num / denom, c)


def exp_map(z, v, c):
    """Exponential map at base point ``z`` applied to tangent vector ``v``."""
    c = _check_c(c)
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    if c == 0:
        return z + v
    sqrt_c = np.sqrt(c)
    vnorm = _norm(v)
    small = vnorm < ZERO_VEC
    safe = np.where(small, 1.0, vnorm)
    lam = conformal_factor(z, c)
    second = np.where(small, 0.0, np.tanh(sqrt_c * lam * safe / 2) * v / (sqrt_c * safe))
    return mobius_add(z, second, c)


def log_map(z, y, c):
    """Logarithmic map at ``z``; inverse of :func:`exp_map`."""
    c = _check_c(c)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if c == 0:
        return y - z
    sqrt_c = np.sqrt(c)
    u = mobius_add(-z, y, c)
    unorm = _norm(u)
    small = unorm < ZERO_VEC
    safe = np.where(small, 1.0, unorm)
    lam = conformal_factor(z, c)
    scale = 2.0 / (sqrt_c * lam) * artanh(sqrt_c * safe) / safe
    return np.where(small, 0.0, scale * u)


def exp_map0(v, c):
    """Exponential map at the origin, ``tanh(sqrt(c)|v|) v / (sqrt(c)|v|)``."""
    c = _check_c(c)
    v = np.asarray(v, dtype=float)
    if c == 0:
        return v.copy()
    sqrt_c = np.sqrt(c)
    vnorm = _norm(v)
    small = vnorm < ZERO_VEC
    safe = np.where(small, 1.0, vnorm)
    out = np.where(small, v, np.tanh(sqrt_c * safe) * v / (sqrt_c * safe))
    return project_to_ball(out, c)


def log_map0(y, c):
    c = _check_c(c)
    y = np.asarray(y, dtype=float)
    if c == 0:
        return y.copy()
    sqrt_c = np.sqrt(c)
    ynorm = _norm(y)
    small = ynorm < ZERO_VEC
    safe = np.where(small, 1.0, ynorm)
    return np.where(small, y, artanh(sqrt_c * safe) * y / (sqrt_c * safe))


def hyp_distance(x, y, c):
    """Geodesic distance ``(2/sqrt(c)) artanh(sqrt(c) |-x (+) y|)``."""
    c = _check_c(c)
    if c == 0:
        raise GeometryDomainError("hyperbolic distance is undefined at c = 0; use the Euclidean norm")
    sqrt_c = np.sqrt(c)
    u = mobius_add(-np.asarray(x, dtype=float), y, c)
    return (2.0 / sqrt_c) * artanh(sqrt_c * _norm(u))[..., 0]
