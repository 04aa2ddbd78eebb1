"""Closed-form fundamental solution and derived pointwise quantities.

All evaluations go through a log-space primitive: level sets of the kernel
span hundreds of orders of magnitude across shell indices, so callers that
need ratios work with log differences and only exponentiate at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveLevel, TimeSignViolation
from .operator import OperatorSpec, SpaceTimePoint, transition_matrix

NEG_INF = -np.inf


@dataclass(frozen=True)
class KernelContext:
    """Immutable evaluation context bound to one operator."""

    spec: OperatorSpec

    @property
    def kernel_const(self) -> float:
        return self.spec.kernel_const

    @property
    def log_kernel_const(self) -> float:
        return math.log(self.spec.kernel_const)

    @property
    def dim(self) -> int:
        return self.spec.dim


def quad_form(ctx: KernelContext, x: np.ndarray) -> np.ndarray:
    """Anisotropic quadratic form: one quarter of <G(1)^-1 x, x>."""
    x = np.asarray(x, dtype=float)
    return 0.25 * np.einsum("...i,ij,...j", x, ctx.spec.gram1_inv, x)


def log_density_origin(ctx: KernelContext, x, t) -> np.ndarray:
    """Log of the fundamental solution with pole at the group origin.

    Vectorized: x has shape (..., N), t broadcasts against the leading axes.
    Entries with t <= 0 give -inf.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], t.shape)
    x = np.broadcast_to(x, lead + x.shape[-1:])
    t = np.broadcast_to(t, lead)
    scalar = lead == ()
    if scalar:
        x, t = x[None, :], t[None]
    out = np.full(t.shape, NEG_INF)
    pos = t > 0
    if np.any(pos):
        expo = ctx.spec.space_exponents
        scale = np.sqrt(t[pos])[..., None] ** expo
        v = x[pos] / scale
        q = quad_form(ctx, v)
        out[pos] = ctx.log_kernel_const - 0.5 * ctx.spec.hom_dim * np.log(t[pos]) - q
    return float(out[0]) if scalar else out


def density_origin(ctx: KernelContext, z: SpaceTimePoint) -> float:
    """Fundamental solution at z with pole at the origin; 0 for t <= 0."""
    lg = log_density_origin(ctx, z.x, z.t)
    if lg > 709.0:
        return math.inf
    return math.exp(lg)


def _drift_coeff_table(ctx: KernelContext, dt: np.ndarray) -> np.ndarray:
    """Coefficients (-dt)^k / k! of the terminating transition series."""
    n = ctx.spec.levels
    coeffs = np.ones(dt.shape + (n + 1,))
    acc = np.ones_like(dt)
    for k in range(1, n + 1):
        acc = acc * (-dt) / k
        coeffs[..., k] = acc
    return coeffs


def rel_offsets(ctx: KernelContext, zx, zt, px, pt):
    """Pairwise group offsets pole^-1 o z: (x - E(t-tau) xi, t - tau)."""
    zx = np.atleast_2d(np.asarray(zx, dtype=float))
    px = np.atleast_2d(np.asarray(px, dtype=float))
    dt = np.asarray(zt, dtype=float) - np.asarray(pt, dtype=float)
    coeffs = _drift_coeff_table(ctx, dt)
    sheared = np.zeros_like(px)
    for k, P in enumerate(ctx.spec.drift_powers):
        sheared += coeffs[..., k, None] * (px @ P.T)
    return zx - sheared, dt


def log_density_pairs(ctx: KernelContext, zx, zt, px, pt) -> np.ndarray:
    """Pairwise log kernel between evaluation points and poles (same length)."""
    offx, dt = rel_offsets(ctx, zx, zt, px, pt)
    return log_density_origin(ctx, offx, dt)


def log_density(ctx: KernelContext, z: SpaceTimePoint, pole: SpaceTimePoint) -> float:
    return float(log_density_pairs(ctx, z.x[None, :], z.t, pole.x[None, :], pole.t)[0])


def density(ctx: KernelContext, z: SpaceTimePoint, pole: SpaceTimePoint) -> float:
    """Translation-invariant two-point kernel; 0 unless z is later than pole."""
    lg = log_density(ctx, z, pole)
    if lg > 709.0:
        return math.inf
    return math.exp(lg)


def log_density_matrix(ctx: KernelContext, eval_x, eval_t, pole_x, pole_t,
                       chunk: int = 0) -> np.ndarray:
    """Dense (evals x poles) log-kernel matrix, assembled in probe chunks."""
    eval_x = np.atleast_2d(np.asarray(eval_x, dtype=float))
    pole_x = np.atleast_2d(np.asarray(pole_x, dtype=float))
    eval_t = np.asarray(eval_t, dtype=float).reshape(-1)
    pole_t = np.asarray(pole_t, dtype=float).reshape(-1)
    P, A = len(eval_t), len(pole_t)
    if chunk <= 0:
        chunk = max(1, int(4_000_000 // max(A, 1)))
    pole_pows = [pole_x @ Pk.T for Pk in ctx.spec.drift_powers]
    out = np.empty((P, A))
    for lo in range(0, P, chunk):
        hi = min(lo + chunk, P)
        dt = eval_t[lo:hi, None] - pole_t[None, :]
        coeffs = _drift_coeff_table(ctx, dt)
        sheared = np.zeros((hi - lo, A, ctx.spec.dim))
        for k, Pw in enumerate(pole_pows):
            sheared += coeffs[..., k, None] * Pw[None, :, :]
        offx = eval_x[lo:hi, None, :] - sheared
        block = np.full(dt.shape, NEG_INF)
        pos = dt > 0
        if np.any(pos):
            expo = ctx.spec.space_exponents
            v = offx[pos] / np.sqrt(dt[pos])[:, None] ** expo
            q = quad_form(ctx, v)
            block[pos] = (ctx.log_kernel_const
                          - 0.5 * ctx.spec.hom_dim * np.log(dt[pos]) - q)
        out[lo:hi] = block
    return out


def scaled_radius(ctx: KernelContext, z: SpaceTimePoint) -> float:
    """Euclidean length of the dilation-normalized spatial part, for t < 0."""
    if z.t >= 0:
        raise TimeSignViolation(f"scaled radius needs t < 0, got t={z.t}")
    scale = math.sqrt(-z.t) ** ctx.spec.space_exponents
    return float(np.linalg.norm(z.x / scale))


def time_ratio(z: SpaceTimePoint, pole: SpaceTimePoint) -> float:
    """Depth ratio (-t)/(-tau) in (0,1) for 0 > t > tau."""
    if not (0 > z.t > pole.t):
        raise TimeSignViolation(
            f"time ratio needs 0 > t > tau, got t={z.t}, tau={pole.t}"
        )
    return z.t / pole.t


def shell_exponent(k: float) -> float:
    """Exponent k*log(k) of the level progression (natural log)."""
    return float(k) * math.log(k)


def superlevel_depth(ctx: KernelContext, level: float) -> float:
    """Maximal time depth of the superlevel set {kernel >= level}."""
    if level <= 0:
        raise NonPositiveLevel(f"level must be positive, got {level}")
    return superlevel_depth_from_log(ctx, math.log(level))


def superlevel_depth_from_log(ctx: KernelContext, log_level: float) -> float:
    """Depth (c / level)^(2/Q) computed from log(level)."""
    return math.exp((ctx.log_kernel_const - log_level) * 2.0 / ctx.spec.hom_dim)


def superlevel_contains(ctx: KernelContext, z0: SpaceTimePoint, level: float,
                        z: SpaceTimePoint) -> bool:
    """Pointwise membership in {kernel(z0, .) >= level}."""
    if level <= 0:
        raise NonPositiveLevel(f"level must be positive, got {level}")
    return log_density(ctx, z0, z) >= math.log(level)


def resolvable_height(ctx: KernelContext, steps: np.ndarray,
                      target: float = 0.7) -> float:
    """Smallest time height at which the kernel resolves a spatial lattice.

    A probe at height h sees atoms through a Gaussian whose precision is
    half of E(h)^T G(h)^-1 E(h); lattice sums converge to integrals once the
    conditional standard deviation along every axis exceeds ``target`` cells
    (Poisson-summation ripple is then below 1e-4).
    """
    spec = ctx.spec
    steps = np.asarray(steps, dtype=float)
    expo = spec.space_exponents

    def ok(h: float) -> bool:
        d = math.sqrt(h) ** (-expo)
        ginv = spec.gram1_inv * np.outer(d, d)
        E = transition_matrix(spec, h)
        prec = 0.5 * E.T @ ginv @ E
        # conditional std along axis d of a Gaussian with precision prec
        cond_std = 1.0 / np.sqrt(np.diag(prec))
        return bool(np.all(cond_std >= target * steps))

    g2 = float(np.max(steps ** (2.0 / expo)))
    lo, hi = g2 * 2.0 ** -8, g2 * 2.0 ** 12
    if ok(lo):
        return lo
    if not ok(hi):
        return hi
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
