"""Operator differentiation and Lipschitz-constant machinery.

Provides the analytic derivative of the cubic attention map, central
finite-difference oracles, power-iteration spectral norms, and the
neighborhood-counting contraction certificate for graph aggregation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .operators import (
    AffineOperator,
    AttentionOperator,
    GnnAggregateOperator,
    apply,
    neighborhood_membership_counts,
)
from .spaces import flatten_values, lincomb, norm, unflatten_like

FD_JACOBIAN_DIM_LIMIT = 64
FD_DEFAULT_STEP = 1e-5


@dataclass(frozen=True)
class LipschitzEstimate:
    """An estimated (or exact) Lipschitz constant and how it was obtained.

    Pair-sampling certifies only a lower bound; the spectral norm of a linear
    map is exact, hence also an upper bound.
    """

    value: float
    method: str
    samples: int
    is_upper_bound: bool
    seed: Optional[int] = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "samples": self.samples,
            "seed": self.seed,
            "is_upper_bound": self.is_upper_bound,
        }


@dataclass(frozen=True)
class FrechetDirectionalResult:
    """Analytic vs finite-difference directional derivative at one point."""

    analytic: np.ndarray
    finite_difference: np.ndarray
    rel_error: float
    step: float


@dataclass(frozen=True)
class GnnLipschitzReport:
    """Contraction certificate for graph aggregation.

    L is the spectral norm of the shared weight matrix; coeffs[i] counts the
    neighborhoods node i belongs to; the map is certified contractive when
    L * alpha_max < 1.
    """

    L: float
    coeffs: np.ndarray
    alpha_max: int
    product: float

    @property
    def certified(self) -> bool:
        return self.product < 1.0


def attention_frechet(op: AttentionOperator, Y, H) -> np.ndarray:
    """Derivative of the cubic attention map at Y in direction H.

    The map is a product of three terms linear in Y, so the derivative is the
    sum of the three single-substitution terms; it is linear in H.
    """
    Y = np.asarray(Y, dtype=float)
    H = np.asarray(H, dtype=float)
    if Y.shape != H.shape:
        raise ValueError(f"Y and H must share a shape, got {Y.shape} vs {H.shape}")
    if Y.ndim != 2 or Y.shape[1] != op.d:
        raise ValueError(f"expected m x {op.d} matrices, got shape {Y.shape}")
    Q, K, V = Y @ op.Wq, Y @ op.Wk, Y @ op.Wv
    Qh, Kh, Vh = H @ op.Wq, H @ op.Wk, H @ op.Wv
    return (Qh @ K.T) @ V + (Q @ Kh.T) @ V + (Q @ K.T) @ Vh


def fd_directional(op, y, h, t: float = FD_DEFAULT_STEP):
    """Central-difference directional derivative (T(y + t h) - T(y - t h)) / (2 t)."""
    if t == 0:
        raise ValueError("step t must be nonzero")
    plus = apply(op, lincomb(1.0, y, t, h))
    minus = apply(op, lincomb(1.0, y, -t, h))
    return lincomb(1.0 / (2 * t), plus, -1.0 / (2 * t), minus)


def frechet_check(op: AttentionOperator, Y, H,
                  t: float = FD_DEFAULT_STEP) -> FrechetDirectionalResult:
    """Compare the analytic attention derivative against the central difference."""
    analytic = attention_frechet(op, Y, H)
    fd = fd_directional(op, np.asarray(Y, dtype=float), np.asarray(H, dtype=float), t)
    denom = max(norm(analytic), 1e-14)
    rel = norm(lincomb(1.0, analytic, -1.0, fd)) / denom
    return FrechetDirectionalResult(analytic, fd, rel, t)


def spectral_norm(A, tol: float = 1e-12, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest singular value by alternating power iteration on A^T A.

    The start vector is drawn from a seeded generator so results are
    reproducible. On non-convergence the last estimate is returned with a
    warning.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("A must have finite entries")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not A.any():
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma_old = 0.0
    sigma = 0.0
    for _ in range(max_iter):
        w = A @ v
        wn = np.linalg.norm(w)
        if wn == 0:
            # v fell in the null space; re-seed the direction
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        u = w / wn
        z = A.T @ u
        sigma = float(np.linalg.norm(z))
        if sigma == 0:
            return 0.0
        v = z / sigma
        if abs(sigma - sigma_old) <= tol * max(sigma, 1e-300):
            return sigma
        sigma_old = sigma
    warnings.warn(f"spectral norm power iteration did not converge in {max_iter} "
                  f"iterations; returning last estimate {sigma:g}")
    return sigma


def lipschitz_sample(op, sampler, n_pairs: int, seed: int = 0,
                     norm_kind: str = "discrete-L2",
                     extra_pairs=None) -> LipschitzEstimate:
    """Empirical Lipschitz constant: max of ||T(x)-T(y)|| / ||x-y|| over sampled pairs.

    ``sampler(rng)`` draws one point from the operator's domain. Pairs closer
    than 1e-12 are skipped. ``extra_pairs`` lets callers add hand-picked
    (x, y) pairs, e.g. aligned with a known worst-case direction. The result
    is a lower bound on the true constant.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    pairs = ((sampler(rng), sampler(rng)) for _ in range(n_pairs))
    best = -np.inf
    used = 0
    for x, y in pairs:
        gap = norm(lincomb(1.0, x, -1.0, y), norm_kind)
        if gap < 1e-12:
            continue
        ratio = norm(lincomb(1.0, apply(op, x), -1.0, apply(op, y)), norm_kind) / gap
        best = max(best, ratio)
        used += 1
    if extra_pairs:
        for x, y in extra_pairs:
            gap = norm(lincomb(1.0, x, -1.0, y), norm_kind)
            if gap < 1e-12:
                continue
            ratio = norm(lincomb(1.0, apply(op, x), -1.0, apply(op, y)), norm_kind) / gap
            best = max(best, ratio)
            used += 1
    if used == 0:
        raise ValueError("all sampled pairs were degenerate (||x - y|| < 1e-12)")
    return LipschitzEstimate(value=float(best), method="pair-sampling",
                             samples=used, is_upper_bound=False, seed=seed)


def _fd_jacobian(op, u, step: float) -> np.ndarray:
    flat = flatten_values(u)
    dim = flat.size
    if dim > FD_JACOBIAN_DIM_LIMIT:
        raise ValueError(f"finite-difference Jacobian refused above "
                         f"{FD_JACOBIAN_DIM_LIMIT} dimensions (got {dim})")
    cols = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        plus = apply(op, unflatten_like(u, flat + step * e))
        minus = apply(op, unflatten_like(u, flat - step * e))
        cols.append((flatten_values(plus) - flatten_values(minus)) / (2 * step))
    return np.column_stack(cols)


def _attention_jacobian(op: AttentionOperator, Y: np.ndarray) -> np.ndarray:
    m, d = Y.shape
    dim = m * d
    if dim > FD_JACOBIAN_DIM_LIMIT:
        raise ValueError(f"attention Jacobian refused above "
                         f"{FD_JACOBIAN_DIM_LIMIT} dimensions (got {dim})")
    cols = []
    for j in range(dim):
        E = np.zeros(dim)
        E[j] = 1.0
        cols.append(attention_frechet(op, Y, E.reshape(m, d)).ravel())
    return np.column_stack(cols)


def derivative_bound_lipschitz(op, center, radius: float, n_samples: int,
                               seed: int = 0,
                               fd_step: float = FD_DEFAULT_STEP) -> LipschitzEstimate:
    """Max operator norm of the derivative over points sampled in a ball.

    By the mean value theorem this bounds the Lipschitz constant on the ball;
    since the supremum is only sampled, the value certifies a lower bound on
    the true sup (exact for affine maps, whose derivative is constant).
    """
    if not radius > 0:
        raise ValueError("ball radius must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if isinstance(op, AffineOperator):
        return LipschitzEstimate(value=spectral_norm(op.A), method="derivative-bound",
                                 samples=1, is_upper_bound=True, seed=seed)
    rng = np.random.default_rng(seed)
    c = flatten_values(center)
    dim = c.size
    best = 0.0
    for _ in range(n_samples):
        direction = rng.standard_normal(dim)
        dn = np.linalg.norm(direction)
        if dn == 0:
            continue
        r = radius * rng.random() ** (1.0 / dim)
        u = unflatten_like(center, c + r * direction / dn)
        if isinstance(op, AttentionOperator):
            jac = _attention_jacobian(op, np.asarray(u, dtype=float))
        else:
            jac = _fd_jacobian(op, u, fd_step)
        best = max(best, spectral_norm(jac))
    return LipschitzEstimate(value=float(best), method="derivative-bound",
                             samples=n_samples, is_upper_bound=False, seed=seed)


def gnn_lipschitz_report(op: GnnAggregateOperator) -> GnnLipschitzReport:
    """Contraction certificate for the aggregation operator.

    coeffs[i] is the number of neighborhoods containing node i (its degree,
    plus one under self-inclusion); the direct-sum Lipschitz constant is
    bounded by spectral_norm(W) * max(coeffs).
    """
    L = spectral_norm(op.W)
    coeffs = neighborhood_membership_counts(op.graph)
    alpha_max = int(coeffs.max())
    return GnnLipschitzReport(L=L, coeffs=coeffs, alpha_max=alpha_max,
                              product=L * alpha_max)


def rescale_to_contraction(W, alpha_max: int, target: float) -> np.ndarray:
    """Scale W so that spectral_norm(W') * alpha_max equals the target in (0, 1)."""
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    if alpha_max < 1:
        raise ValueError("alpha_max must be a positive count")
    W = np.asarray(W, dtype=float)
    sigma = spectral_norm(W)
    if sigma == 0:
        raise ValueError("cannot rescale the zero matrix")
    return W * (target / (sigma * alpha_max))
