"""Block-structured Kolmogorov operators: validation, group structure, dilations.

The operator class is ``div(A grad) + <Bx, grad> - d/dt`` with A carrying a
positive definite top-left block and B a strictly lower block-triangular
chain of full-rank couplings.  Everything downstream (kernel, capacities,
series) is driven by the derived constants assembled here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm, qmc

from .errors import (
    ConfigError,
    KalmanFailure,
    LambdaOutOfRange,
    NonPositiveScale,
    NonPositiveTime,
    NotPositiveDefinite,
    NotSymmetric,
    RankDeficient,
    ShapeMismatch,
)

# Scale-invariant positive-definiteness threshold: smallest eigenvalue must
# exceed PD_RTOL * largest (with an absolute floor for sub-unit scales).
PD_RTOL = 1e-10

TIME_EXPONENT = 2


@dataclass(frozen=True)
class BlockSignature:
    """Block dimensions p_0 >= p_1 >= ... >= p_n >= 1 of the state space."""

    p: tuple[int, ...]

    def __post_init__(self):
        if len(self.p) == 0:
            raise ShapeMismatch("signature needs at least one block")
        if any(int(q) != q or q < 1 for q in self.p):
            raise ShapeMismatch(f"block sizes must be positive integers, got {self.p}")
        if any(self.p[i] < self.p[i + 1] for i in range(len(self.p) - 1)):
            raise ShapeMismatch(f"block sizes must be non-increasing, got {self.p}")
        object.__setattr__(self, "p", tuple(int(q) for q in self.p))

    @property
    def total_dim(self) -> int:
        return sum(self.p)

    @property
    def levels(self) -> int:
        """Number of coupling levels n (blocks minus one)."""
        return len(self.p) - 1

    def block_slices(self) -> list[slice]:
        offsets = np.cumsum((0,) + self.p)
        return [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]

    def space_exponents(self) -> np.ndarray:
        """Per-coordinate dilation exponents (2i+1 on block i)."""
        return np.concatenate(
            [np.full(q, 2 * i + 1, dtype=float) for i, q in enumerate(self.p)]
        )


@dataclass(frozen=True)
class SpaceTimePoint:
    """A point z = (x, t) of space-time."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)) or not math.isfinite(self.t):
            raise ShapeMismatch("space-time point must have finite components")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, [self.t]])


def point(x, t) -> SpaceTimePoint:
    """Convenience constructor accepting scalars, lists or arrays."""
    return SpaceTimePoint(np.atleast_1d(np.asarray(x, dtype=float)), float(t))


@dataclass(frozen=True)
class OperatorSpec:
    """A validated operator with its derived structural constants.

    Immutable after construction; safe to share across threads.
    """

    sig: BlockSignature
    A0: np.ndarray
    bblocks: tuple[np.ndarray, ...]
    A: np.ndarray              # N x N diffusion matrix
    B: np.ndarray              # N x N drift matrix (nilpotent)
    drift_powers: tuple[np.ndarray, ...]   # B^0 ... B^n
    hom_dim: int               # homogeneous dimension of the spatial slice
    gram1: np.ndarray          # controllability Gramian at t = 1
    gram1_inv: np.ndarray
    gram1_logdet: float
    kernel_const: float        # (4 pi)^(-N/2) / sqrt(det gram1)
    norm_floor: float          # min of the homogeneous norm on the unit sphere
    quad_floor: float          # floor constant of the sheared quadratic form

    @property
    def dim(self) -> int:
        return self.sig.total_dim

    @property
    def levels(self) -> int:
        return self.sig.levels

    @property
    def space_exponents(self) -> np.ndarray:
        return self._expo

    # cached exponent vector, set during construction
    _expo: np.ndarray = field(default=None, repr=False, compare=False)


def _check_symmetric_pd(M: np.ndarray, what: str) -> np.ndarray:
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise NotSymmetric(f"{what} is not symmetric")
    eigvals = np.linalg.eigvalsh(0.5 * (M + M.T))
    lo, hi = eigvals[0], eigvals[-1]
    if lo <= PD_RTOL * max(hi, 1.0):
        raise NotPositiveDefinite(
            f"{what} is not positive definite (eigenvalues in [{lo:.3e}, {hi:.3e}])"
        )
    return eigvals


def _assemble_full(sig: BlockSignature, A0: np.ndarray, bblocks: Sequence[np.ndarray]):
    N = sig.total_dim
    slices = sig.block_slices()
    A = np.zeros((N, N))
    A[slices[0], slices[0]] = A0
    B = np.zeros((N, N))
    for j, Bj in enumerate(bblocks, start=1):
        B[slices[j], slices[j - 1]] = Bj.T
    return A, B


def _gauss_legendre_gramian(A: np.ndarray, powers, t: float, n_levels: int) -> np.ndarray:
    """Integrate E(s) A E(s)^T over [0, t].

    The integrand is a matrix polynomial of degree <= 2n in s, so
    Gauss-Legendre with n+2 nodes is exact up to rounding.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_levels + 2)
    s = 0.5 * t * (nodes + 1.0)
    w = 0.5 * t * weights
    out = np.zeros_like(A)
    for si, wi in zip(s, w):
        E = _transition_from_powers(powers, si)
        out += wi * (E @ A @ E.T)
    return 0.5 * (out + out.T)


def _transition_from_powers(powers, s: float) -> np.ndarray:
    out = np.zeros_like(powers[0])
    coeff = 1.0
    for k, P in enumerate(powers):
        if k > 0:
            coeff *= -s / k
        out += coeff * P
    return out


def _hom_norm_raw(sig: BlockSignature, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for i, sl in enumerate(sig.block_slices()):
        block = np.linalg.norm(x[..., sl], axis=-1)
        total = total + block ** (1.0 / (2 * i + 1))
    return total


def _minimize_norm_on_sphere(sig: BlockSignature, samples: int = 2 ** 17,
                             refine_iters: int = 50, tol: float = 1e-6) -> float:
    """Minimize the homogeneous norm over the Euclidean unit sphere.

    Quasi-random sphere sampling followed by coordinate-descent refinement.
    The norm is non-smooth where a block vanishes, so the search is
    derivative-free.
    """
    N = sig.total_dim
    if N == 1:
        return float(_hom_norm_raw(sig, np.array([1.0])))
    sob = qmc.Sobol(d=N, scramble=True, seed=1234)
    u = sob.random(samples)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    lengths = np.linalg.norm(g, axis=1)
    pts = g / lengths[:, None]
    vals = _hom_norm_raw(sig, pts)
    best = int(np.argmin(vals))
    x, fx = pts[best].copy(), float(vals[best])
    step = 0.1
    for _ in range(refine_iters):
        improved = False
        for d in range(N):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[d] += sgn * step
                y /= np.linalg.norm(y)
                fy = float(_hom_norm_raw(sig, y))
                if fy < fx - 1e-15:
                    x, fx = y, fy
                    improved = True
        if not improved:
            step *= 0.5
            if step < tol:
                break
    return fx


def build_operator(p: Sequence[int], A0, bblocks=()) -> OperatorSpec:
    """Validate block data and assemble an operator with derived constants.

    Raises ShapeMismatch / NotSymmetric / NotPositiveDefinite / RankDeficient
    / KalmanFailure on invalid input.
    """
    sig = BlockSignature(tuple(p))
    A0 = np.array(A0, dtype=float)
    if A0.shape != (sig.p[0], sig.p[0]):
        raise ShapeMismatch(
            f"A0 must be {sig.p[0]}x{sig.p[0]}, got {A0.shape}"
        )
    _check_symmetric_pd(A0, "A0")

    blocks = tuple(np.array(Bj, dtype=float) for Bj in bblocks)
    if len(blocks) != sig.levels:
        raise ShapeMismatch(
            f"signature has {sig.levels} coupling blocks, got {len(blocks)}"
        )
    for j, Bj in enumerate(blocks, start=1):
        want = (sig.p[j - 1], sig.p[j])
        if Bj.shape != want:
            raise ShapeMismatch(f"B{j} must be {want}, got {Bj.shape}")
        if np.linalg.matrix_rank(Bj) < sig.p[j]:
            raise RankDeficient(f"B{j} has rank below its column count {sig.p[j]}")

    A, B = _assemble_full(sig, A0, blocks)
    n = sig.levels
    powers = [np.eye(sig.total_dim)]
    for _ in range(n):
        powers.append(powers[-1] @ B)
    # nilpotency is structural; the next power must vanish identically
    nil = powers[-1] @ B
    if np.abs(nil).max() > 1e-12:
        raise ShapeMismatch("drift matrix is not nilpotent at the expected order")
    powers = tuple(powers)

    gram1 = _gauss_legendre_gramian(A, powers, 1.0, n)
    try:
        eigvals = _check_symmetric_pd(gram1, "Gramian at t=1")
    except NotPositiveDefinite as exc:
        raise KalmanFailure(str(exc)) from exc
    sign, logdet = np.linalg.slogdet(gram1)
    if sign <= 0:
        raise KalmanFailure("Gramian determinant is not positive")
    gram1_inv = np.linalg.inv(gram1)
    gram1_inv = 0.5 * (gram1_inv + gram1_inv.T)

    N = sig.total_dim
    kernel_const = math.exp(-0.5 * N * math.log(4 * math.pi) - 0.5 * logdet)
    hom_dim = int(sum((2 * i + 1) * q for i, q in enumerate(sig.p)))

    E1 = _transition_from_powers(powers, 1.0)
    shear_form = E1.T @ gram1_inv @ E1
    lam_min = float(np.linalg.eigvalsh(0.5 * (shear_form + shear_form.T))[0])
    quad_floor = 0.5 * math.sqrt(max(lam_min, 0.0))

    norm_floor = _minimize_norm_on_sphere(sig)

    for arr in (A0, A, B, gram1, gram1_inv) + blocks + powers:
        arr.setflags(write=False)
    expo = sig.space_exponents()
    expo.setflags(write=False)

    spec = OperatorSpec(
        sig=sig, A0=A0, bblocks=blocks, A=A, B=B, drift_powers=powers,
        hom_dim=hom_dim, gram1=gram1, gram1_inv=gram1_inv,
        gram1_logdet=float(logdet), kernel_const=kernel_const,
        norm_floor=norm_floor, quad_floor=quad_floor,
    )
    object.__setattr__(spec, "_expo", expo)
    return spec


def validate_spec(p, A0, bblocks=()) -> OperatorSpec:
    """Alias of build_operator, named after the validation role."""
    return build_operator(p, A0, bblocks)


def transition_matrix(spec: OperatorSpec, s: float) -> np.ndarray:
    """State-transition matrix exp(-s B); a terminating polynomial in s."""
    return _transition_from_powers(spec.drift_powers, float(s))


def gramian(spec: OperatorSpec, t: float) -> np.ndarray:
    """Controllability Gramian at time t > 0, via the dilation factorization."""
    if t <= 0:
        raise NonPositiveTime(f"Gramian needs t > 0, got {t}")
    d = np.sqrt(t) ** spec.space_exponents
    return spec.gram1 * np.outer(d, d)


def gramian_inv(spec: OperatorSpec, t: float) -> np.ndarray:
    """Inverse Gramian at time t > 0, stable for very small t."""
    if t <= 0:
        raise NonPositiveTime(f"Gramian needs t > 0, got {t}")
    d = np.sqrt(t) ** (-spec.space_exponents)
    return spec.gram1_inv * np.outer(d, d)


def gramian_by_quadrature(spec: OperatorSpec, t: float) -> np.ndarray:
    """Direct quadrature of the Gramian integral (cross-check route)."""
    if t <= 0:
        raise NonPositiveTime(f"Gramian needs t > 0, got {t}")
    return _gauss_legendre_gramian(spec.A, spec.drift_powers, t, spec.levels)


def dilate_space(spec: OperatorSpec, r, x: np.ndarray) -> np.ndarray:
    """Anisotropic spatial dilation: block i scales by r^(2i+1).

    r may be a scalar or an array broadcasting against the leading axes of x.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise NonPositiveScale("dilation scale must be positive")
    x = np.asarray(x, dtype=float)
    if r.ndim:
        return x * r[..., None] ** spec.space_exponents
    return x * r ** spec.space_exponents


def dilate(spec: OperatorSpec, r: float, z: SpaceTimePoint) -> SpaceTimePoint:
    """Space-time dilation: spatial blocks by r^(2i+1), time by r^2."""
    if r <= 0:
        raise NonPositiveScale(f"dilation scale must be positive, got {r}")
    return SpaceTimePoint(dilate_space(spec, r, z.x), r ** TIME_EXPONENT * z.t)


def compose(spec: OperatorSpec, z: SpaceTimePoint, zeta: SpaceTimePoint) -> SpaceTimePoint:
    """Group composition (x,t) o (xi,s) = (xi + E(s) x, t + s)."""
    E = transition_matrix(spec, zeta.t)
    return SpaceTimePoint(zeta.x + E @ z.x, z.t + zeta.t)


def inverse(spec: OperatorSpec, z: SpaceTimePoint) -> SpaceTimePoint:
    """Group inverse (-E(-t) x, -t)."""
    E = transition_matrix(spec, -z.t)
    return SpaceTimePoint(-(E @ z.x), -z.t)


def hom_norm(spec: OperatorSpec, x: np.ndarray) -> np.ndarray:
    """Homogeneous norm: sum over blocks of |x_block|^(1/(2i+1))."""
    return _hom_norm_raw(spec.sig, x)


def _sheared_const(spec: OperatorSpec, T: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rows E(T_m) v for a fixed vector v (terminating power series)."""
    T = np.asarray(T, dtype=float)
    out = np.zeros(T.shape + (spec.dim,))
    coeff = np.ones_like(T)
    for k, P in enumerate(spec.drift_powers):
        if k > 0:
            coeff = coeff * (-T) / k
        out += coeff[..., None] * (P @ v)
    return out


def compose_many(spec: OperatorSpec, z0: SpaceTimePoint, X, T):
    """Left-translate rows (X, T) by z0: rows of z0 o (x, t)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(T, dtype=float)
    return X + _sheared_const(spec, T, z0.x), z0.t + T


def relative_many(spec: OperatorSpec, z0: SpaceTimePoint, X, T):
    """Rows of z0^-1 o (x, t): coordinates relative to the frame point z0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(T, dtype=float)
    zinv = inverse(spec, z0)
    return X + _sheared_const(spec, T, zinv.x), T - z0.t


def cylinder_contains(spec: OperatorSpec, z0: SpaceTimePoint, r: float,
                      z: SpaceTimePoint) -> bool:
    """Membership in the group-translated homogeneous cylinder of radius r."""
    if r <= 0:
        raise NonPositiveScale(f"cylinder radius must be positive, got {r}")
    w = compose(spec, inverse(spec, z0), z)
    return bool(_hom_norm_raw(spec.sig, w.x) <= r and abs(w.t) <= r ** 2)


@dataclass(frozen=True)
class SpacingFloor:
    """Constants steering the block spacing of the level sequence."""

    margin: float    # the five-term maximum
    q_min: float     # minimal admissible block length


def spacing_floor(spec: OperatorSpec, lam: float) -> SpacingFloor:
    """Minimal block length of level indices guaranteeing spacing estimates.

    Returns the pair (margin m, q0 = 4 + m / log(1/lam)).
    """
    if not 0.0 < lam < 1.0:
        raise LambdaOutOfRange(f"lambda must be in (0,1), got {lam}")
    Q = spec.hom_dim
    n = spec.levels
    log6 = math.log(6.0)
    log8 = math.log(8.0)
    m = max(
        2.0,
        Q / log6,
        2.0 * spec.quad_floor ** 2 / log6,
        Q * math.log(2.0) / log8,
        2.0 * Q * math.log((n + 1) / spec.norm_floor) / log8,
    )
    return SpacingFloor(margin=m, q_min=4.0 + m / math.log(1.0 / lam))


def load_operator(source) -> OperatorSpec:
    """Build an operator from a JSON file path or an already-parsed dict.

    Schema: {"p": [ints], "A0": [[...]], "B": [[[...]], ...]} with B optional.
    """
    if isinstance(source, (str,)):
        try:
            with open(source) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read operator config: {exc}") from exc
    else:
        data = source
    if not isinstance(data, dict) or "p" not in data or "A0" not in data:
        raise ConfigError("operator config needs fields 'p' and 'A0'")
    return build_operator(data["p"], data["A0"], data.get("B", ()))
