"""Capacity and equilibrium potentials of discrete compacts via finite LPs.

The definitional supremum (largest total mass whose kernel potential stays
below one) becomes a finite linear program: variables are per-atom masses,
constraints are potential bounds at probe points above and around the
compact.  Finitely many admissible measures under-approximate the supremum
while finitely many constraints over-approximate it, so the solver refines
probes (violation cuts on a certification cloud) until the value settles,
then certifies primal feasibility by rescaling.

All kernel magnitudes pass through one global log-scale shift: shell
compacts live at kernel levels spanning hundreds of orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from . import kernel as kn
from .errors import EmptyCompact, LPFailure
from .geometry import DiscreteCompact
from .operator import SpaceTimePoint, compose, dilate, dilate_space

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ProbeStrategy:
    """Knobs of the probe cloud used to constrain the LP."""

    height_factors: tuple = (0.5, 2.0, 8.0)   # multiples of the local time step
    halo_margin: int = 3                      # rim cells beyond flat footprints
    cert_points: int = 2048                   # certification cloud size
    cert_seed: int = 42
    max_rounds: int = 3                       # violation-cut rounds
    cut_batch: int = 64
    rtol: float = 0.01                        # refinement stopping tolerance


DEFAULT_STRATEGY = ProbeStrategy()


@dataclass
class EquilibriumSolution:
    """LP solution: measure weights, capacity value, potential evaluator."""

    compact: DiscreteCompact
    weights_scaled: np.ndarray      # u = S * w, with log(S) = log_scale
    log_scale: float
    log_cap: float                  # log of the capacity value
    probes_x: np.ndarray
    probes_t: np.ndarray
    max_potential: float
    feasibility_residual: float
    status: str                     # "optimal" or "suboptimal"
    rounds: int
    meta: dict = field(default_factory=dict)

    @property
    def cap_value(self) -> float:
        return math.exp(self.log_cap) if np.isfinite(self.log_cap) else 0.0

    @property
    def weights(self) -> np.ndarray:
        return self.weights_scaled * math.exp(-self.log_scale)

    def log_potential_many(self, X, T) -> np.ndarray:
        """Log potential at points given in the compact's frame coordinates."""
        ctx = kn.KernelContext(self.compact.spec)
        lg = kn.log_density_matrix(ctx, X, T, self.compact.xs, self.compact.ts)
        with np.errstate(divide="ignore"):
            return logsumexp(lg, axis=1, b=self.weights_scaled[None, :]) - self.log_scale

    def potential_at(self, z: SpaceTimePoint) -> float:
        """Equilibrium potential at an absolute space-time point."""
        wx, wt = self.compact.to_relative(z)
        lv = self.log_potential_many(wx[None, :], np.array([wt]))[0]
        return float(math.exp(lv)) if np.isfinite(lv) else 0.0


def potential_at(solution: EquilibriumSolution, z: SpaceTimePoint) -> float:
    return solution.potential_at(z)


def _probe_epsilon(compact: DiscreteCompact) -> float:
    # half the local time grid step; tiny fallback for zero-extent compacts
    if compact.time_step > 0:
        return 0.5 * compact.time_step
    tscale = max(1.0, float(np.abs(compact.ts).max(initial=0.0)))
    return 1e-12 * tscale


def _dedupe_rows(pts: np.ndarray) -> np.ndarray:
    if len(pts) == 0:
        return pts
    scale = np.maximum(np.abs(pts).max(axis=0), 1.0)
    _, idx = np.unique(np.round(pts / scale * 1e9).astype(np.int64),
                       axis=0, return_index=True)
    return pts[np.sort(idx)]


def _flat_rim(compact: DiscreteCompact, margin: int) -> np.ndarray:
    """Lateral rim positions around a flat footprint, one axis at a time."""
    if compact.spatial_steps is None or margin <= 0:
        return np.zeros((0, compact.spec.dim))
    rims = []
    for d in range(compact.spec.dim):
        h = compact.spatial_steps[d]
        for j in range(1, margin + 1):
            for sgn in (1.0, -1.0):
                shifted = compact.xs.copy()
                shifted[:, d] += sgn * j * h
                rims.append(shifted)
    return np.vstack(rims)


def _base_probes(compact: DiscreteCompact, strategy: ProbeStrategy):
    eps = _probe_epsilon(compact)
    heights = [2.0 * f * eps for f in strategy.height_factors]
    xs, ts = [], []
    flat = compact.time_step == 0.0 or compact.meta.get("kind") == "flat"
    positions = compact.xs
    if flat:
        rim = _flat_rim(compact, strategy.halo_margin)
        if len(rim):
            positions = _dedupe_rows(np.vstack([compact.xs, rim]))
    for h in heights:
        if flat:
            xs.append(positions)
            ts.append(np.full(len(positions), compact.ts[0] if compact.count else 0.0) + h)
        else:
            xs.append(compact.xs)
            ts.append(compact.ts + h)
    # half-step lateral offsets at the lowest height
    if compact.spatial_steps is not None:
        for d in range(compact.spec.dim):
            shifted = compact.xs.copy()
            shifted[:, d] += 0.5 * compact.spatial_steps[d]
            xs.append(shifted)
            ts.append(compact.ts + heights[0])
    # frame origin (the anchor point sits above framed compacts)
    if compact.frame is not None:
        zero = np.zeros((2, compact.spec.dim))
        xs.append(zero)
        ts.append(np.array([0.0, eps]))
    # far field
    t_hi = float(compact.ts.max(initial=0.0))
    span = max(float(compact.ts.max(initial=0.0) - compact.ts.min(initial=0.0)),
               compact.time_step, eps)
    center = compact.xs.mean(axis=0) if compact.count else np.zeros(compact.spec.dim)
    far_x = np.vstack([center, center, center + 1.0, center - 1.0])
    far_t = np.array([t_hi + 2 * span, t_hi + 8 * span, t_hi + 4 * span, t_hi + 4 * span])
    xs.append(far_x)
    ts.append(far_t)
    return np.vstack(xs), np.concatenate(ts), eps


def _cert_cloud(compact: DiscreteCompact, floor_height: float,
                strategy: ProbeStrategy):
    """Random exterior points used to verify the potential bound.

    Heights stay at or above the lowest probe height: below the resolution
    scale the atom cloud cannot stand in for a continuum density, so
    sub-resolution certification would measure discreteness, not capacity.
    """
    rng = np.random.default_rng(strategy.cert_seed)
    m = strategy.cert_points
    idx = rng.integers(0, compact.count, size=m)
    base_x = compact.xs[idx]
    base_t = compact.ts[idx]
    if compact.spatial_steps is not None:
        jitter = rng.uniform(-1.0, 1.0, size=base_x.shape) * compact.spatial_steps
    else:
        jitter = np.zeros_like(base_x)
    heights = floor_height * np.exp(rng.uniform(0.0, math.log(60.0), size=m))
    return base_x + jitter, base_t + heights


def _assemble(ctx, px, pt, compact):
    return kn.log_density_matrix(ctx, px, pt, compact.xs, compact.ts)


def _scaled_matrix(logG: np.ndarray, log_scale: float) -> np.ndarray:
    """Constraint matrix exp(logG - log_scale), zeroing negligible entries.

    Entries more than 20 decades below the largest cannot influence the
    optimum (every atom keeps its near-singular own probe) but subnormal
    coefficients destabilize the solver.
    """
    shifted = logG - log_scale
    G = np.where(shifted > math.log(1e-20), np.exp(np.minimum(shifted, 700.0)), 0.0)
    return G


def solve_equilibrium(ctx: kn.KernelContext, compact: DiscreteCompact,
                      strategy: Optional[ProbeStrategy] = None) -> EquilibriumSolution:
    """Maximize total atom mass subject to potential <= 1 at all probes.

    The returned capacity value is a certified lower bound for the
    discretized problem: weights are rescaled so the potential stays below
    1 + FEAS_TOL on every probe and certification point.
    """
    if compact.is_empty:
        raise EmptyCompact("cannot solve the equilibrium problem on an empty compact")
    strategy = strategy or DEFAULT_STRATEGY
    px, pt, eps = _base_probes(compact, strategy)
    logG = _assemble(ctx, px, pt, compact)
    finite = logG[np.isfinite(logG)]
    if finite.size == 0:
        raise LPFailure("degenerate", "no probe sees any atom")
    log_scale = float(finite.max()) - math.log(1e4)

    floor_height = 2.0 * min(strategy.height_factors) * eps
    cert_x, cert_t = _cert_cloud(compact, floor_height, strategy)
    log_cert = _assemble(ctx, cert_x, cert_t, compact)

    rounds = 0
    status = "optimal"
    u = None
    for rounds in range(1, strategy.max_rounds + 1):
        G = _scaled_matrix(logG, log_scale)
        res = linprog(-np.ones(compact.count), A_ub=G, b_ub=np.ones(len(G)),
                      method="highs")
        if res.x is None:
            raise LPFailure(res.status, res.message)
        status = "optimal" if res.status == 0 else "suboptimal"
        u = np.maximum(res.x, 0.0)
        with np.errstate(divide="ignore"):
            log_v = logsumexp(log_cert, axis=1, b=u[None, :]) - log_scale
        viol = np.where(log_v > math.log1p(10 * FEAS_TOL))[0]
        if len(viol) == 0 or rounds == strategy.max_rounds:
            break
        worst = viol[np.argsort(log_v[viol])[::-1][: strategy.cut_batch]]
        logG = np.vstack([logG, log_cert[worst]])
        px = np.vstack([px, cert_x[worst]])
        pt = np.concatenate([pt, cert_t[worst]])

    # certify: rescale so the bound holds on probes and the cloud
    with np.errstate(divide="ignore"):
        log_vp = logsumexp(logG, axis=1, b=u[None, :]) - log_scale
        log_vc = logsumexp(log_cert, axis=1, b=u[None, :]) - log_scale
    log_max = max(log_vp.max(initial=-np.inf), log_vc.max(initial=-np.inf))
    if log_max > 0.0:
        u = u * math.exp(-log_max) / (1.0 + 1e-14)
        log_vp = log_vp - log_max
        log_vc = log_vc - log_max
    max_pot = math.exp(max(log_vp.max(initial=-np.inf), log_vc.max(initial=-np.inf)))
    total = float(u.sum())
    log_cap = math.log(total) - log_scale if total > 0 else -math.inf
    return EquilibriumSolution(
        compact=compact,
        weights_scaled=u,
        log_scale=log_scale,
        log_cap=log_cap,
        probes_x=px,
        probes_t=pt,
        max_potential=max_pot,
        feasibility_residual=max(max_pot - 1.0, 0.0),
        status=status,
        rounds=rounds,
        meta={"eps": eps, "n_probes": len(pt), "n_atoms": compact.count},
    )


def dilate_compact(compact: DiscreteCompact, r: float) -> DiscreteCompact:
    """Image of the compact under the anisotropic dilation by r."""
    spec = compact.spec
    Q = spec.hom_dim
    flat = compact.meta.get("kind") == "flat"
    vol_power = Q if flat else Q + 2
    frame = dilate(spec, r, compact.frame) if compact.frame is not None else None
    return DiscreteCompact(
        spec=spec,
        xs=dilate_space(spec, r, compact.xs),
        ts=compact.ts * r ** 2,
        volumes=compact.volumes * r ** vol_power,
        frame=frame,
        time_step=compact.time_step * r ** 2,
        spatial_steps=(None if compact.spatial_steps is None
                       else compact.spatial_steps * r ** spec.space_exponents),
        meta=dict(compact.meta, dilated_by=r),
    )


def translate_compact(compact: DiscreteCompact, z0: SpaceTimePoint) -> DiscreteCompact:
    """Image of the compact under left group translation by z0."""
    spec = compact.spec
    if compact.frame is not None:
        frame = compose(spec, z0, compact.frame)
        xs, ts = compact.xs.copy(), compact.ts.copy()
    else:
        frame = None
        from .operator import compose_many

        xs, ts = compose_many(spec, z0, compact.xs, compact.ts)
    return DiscreteCompact(
        spec=spec, xs=xs, ts=ts, volumes=compact.volumes.copy(), frame=frame,
        time_step=compact.time_step,
        spatial_steps=None if compact.spatial_steps is None else compact.spatial_steps.copy(),
        meta=dict(compact.meta, translated=True),
    )


def capacity_scaling_check(ctx: kn.KernelContext, compact: DiscreteCompact,
                           r: float, strategy: Optional[ProbeStrategy] = None):
    """Solve the compact and its dilation; the ratio should follow r^Q."""
    base = solve_equilibrium(ctx, compact, strategy)
    scaled = solve_equilibrium(ctx, dilate_compact(compact, r), strategy)
    ratio = math.exp(scaled.log_cap - base.log_cap)
    return base.cap_value, scaled.cap_value, ratio


def translation_invariance_check(ctx: kn.KernelContext, compact: DiscreteCompact,
                                 z0: SpaceTimePoint,
                                 strategy: Optional[ProbeStrategy] = None):
    """Solve the compact and its left translate; capacities should agree."""
    base = solve_equilibrium(ctx, compact, strategy)
    moved = solve_equilibrium(ctx, translate_compact(compact, z0), strategy)
    return base.cap_value, moved.cap_value


def dump_lp(solution: EquilibriumSolution, path: str) -> None:
    """Write the solved LP instance as a plain-text dense matrix."""
    ctx = kn.KernelContext(solution.compact.spec)
    logG = kn.log_density_matrix(ctx, solution.probes_x, solution.probes_t,
                                 solution.compact.xs, solution.compact.ts)
    G = _scaled_matrix(logG, solution.log_scale)
    with open(path, "w") as fh:
        fh.write(f"# maximize sum(w); rows: G w <= 1; w >= 0\n")
        fh.write(f"rows {G.shape[0]} cols {G.shape[1]}\n")
        fh.write(f"log_scale {solution.log_scale!r}\n")
        for row in G:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")
