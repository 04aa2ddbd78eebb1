"""Domains as composable predicates and discretization of compact sets.

Domains are predicate trees over space-time; compact sets are atom clouds
with per-atom quadrature volumes.  Shell and cylinder compacts store their
atoms in coordinates relative to the anchor point: level-set depths shrink
below float resolution of absolute times after a dozen shell indices, and
left invariance of the kernel makes the relative frame exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernel as kn
from .errors import ConfigError, LambdaOutOfRange, NotBoundaryPoint
from .operator import (
    OperatorSpec,
    SpaceTimePoint,
    compose_many,
    dilate_space,
    hom_norm,
    point,
    relative_many,
)


# ---------------------------------------------------------------------------
# spatial regions (used by flat compacts and cone bases)

@dataclass(frozen=True)
class SpatialBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ConfigError("spatial box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def bounds(self):
        return self.lo, self.hi


@dataclass(frozen=True)
class SpatialBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ConfigError("spatial ball needs a positive radius")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.center, axis=-1) <= self.radius

    def bounds(self):
        return self.center - self.radius, self.center + self.radius


# ---------------------------------------------------------------------------
# domain predicate tree

class DomainNode:
    """Base predicate over space-time rows [x_1..x_N, t]."""

    def contains_many(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self):
        """Axis box (lo, hi) covering the set, or None if unbounded."""
        return None


@dataclass(frozen=True)
class BoxSet(DomainNode):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ConfigError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        return np.all((Z >= self.lo) & (Z <= self.hi), axis=-1)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()


@dataclass(frozen=True)
class HalfSpaceSet(DomainNode):
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.normal, dtype=float))
        if not np.any(n != 0):
            raise ConfigError("half-space needs a nonzero normal")
        object.__setattr__(self, "normal", n)

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        return Z @ self.normal <= self.offset


@dataclass(frozen=True)
class BallSet(DomainNode):
    center: np.ndarray
    radius: float

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        return np.linalg.norm(Z - np.asarray(self.center, dtype=float), axis=-1) <= self.radius

    def bounding_box(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class PointSet(DomainNode):
    z: np.ndarray

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        return np.all(Z == np.asarray(self.z, dtype=float), axis=-1)

    def bounding_box(self):
        z = np.asarray(self.z, dtype=float)
        return z.copy(), z.copy()


@dataclass(frozen=True)
class CylinderSet(DomainNode):
    """Group-translated homogeneous cylinder of a given radius."""

    spec: OperatorSpec
    center: SpaceTimePoint
    radius: float

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        wx, wt = relative_many(self.spec, self.center, Z[:, :-1], Z[:, -1])
        return (hom_norm(self.spec, wx) <= self.radius) & (np.abs(wt) <= self.radius ** 2)


@dataclass(frozen=True)
class ConeSet(DomainNode):
    """Dilation-parametrized cone with vertex z0: points z0 o (D_r xi, -r^2)."""

    spec: OperatorSpec
    vertex: SpaceTimePoint
    base: object            # SpatialBox or SpatialBall
    depth: float            # maximal dilation parameter R

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        wx, wt = relative_many(self.spec, self.vertex, Z[:, :-1], Z[:, -1])
        out = np.zeros(len(wt), dtype=bool)
        s = -wt
        ok = (s >= 0) & (s <= self.depth ** 2)
        pos = ok & (s > 0)
        if np.any(pos):
            r = np.sqrt(s[pos])
            xi = dilate_space(self.spec, 1.0 / r, wx[pos])
            out[pos] = self.base.contains(xi)
        tip = ok & (s == 0)
        if np.any(tip):
            out[tip] = np.all(wx[tip] == 0.0, axis=-1)
        return out


@dataclass(frozen=True)
class TransformSet(DomainNode):
    """Image of a child set under z -> z0 o dilation_r(z)."""

    spec: OperatorSpec
    z0: SpaceTimePoint
    scale: float
    child: DomainNode

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        wx, wt = relative_many(self.spec, self.z0, Z[:, :-1], Z[:, -1])
        wx = dilate_space(self.spec, 1.0 / self.scale, wx)
        wt = wt / self.scale ** 2
        return self.child.contains_many(np.column_stack([wx, wt]))


@dataclass(frozen=True)
class UnionSet(DomainNode):
    parts: tuple

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        out = np.zeros(len(Z), dtype=bool)
        for part in self.parts:
            out |= part.contains_many(Z)
        return out

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        if any(b is None for b in boxes):
            return None
        los = np.min([b[0] for b in boxes], axis=0)
        his = np.max([b[1] for b in boxes], axis=0)
        return los, his


@dataclass(frozen=True)
class IntersectionSet(DomainNode):
    parts: tuple

    def contains_many(self, Z):
        Z = np.atleast_2d(Z)
        out = np.ones(len(Z), dtype=bool)
        for part in self.parts:
            out &= part.contains_many(Z)
        return out

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts if p.bounding_box() is not None]
        if not boxes:
            return None
        los = np.max([b[0] for b in boxes], axis=0)
        his = np.min([b[1] for b in boxes], axis=0)
        return los, his


@dataclass(frozen=True)
class ComplementSet(DomainNode):
    child: DomainNode

    def contains_many(self, Z):
        return ~self.child.contains_many(np.atleast_2d(Z))


@dataclass(frozen=True)
class Domain:
    """A domain predicate with an optional bounding box."""

    root: DomainNode
    bbox: Optional[tuple] = None

    def contains(self, z: SpaceTimePoint) -> bool:
        return bool(self.contains_many(z.as_array()[None, :])[0])

    def contains_many(self, Z: np.ndarray) -> np.ndarray:
        return self.root.contains_many(Z)

    def bounding_box(self):
        if self.bbox is not None:
            return self.bbox
        return self.root.bounding_box()


# spec-facing alias
DomainSpec = Domain


def load_domain(source, spec: OperatorSpec) -> Domain:
    """Build a domain from a JSON file path or a parsed dict tree.

    Nodes: box, halfspace, ball, point, cylinder, cone, transform,
    union, intersection, complement.  Optional top-level "bbox".
    """
    if isinstance(source, str):
        import json

        try:
            with open(source) as fh:
                source = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read domain config: {exc}") from exc
    if not isinstance(source, dict):
        raise ConfigError("domain config must be a JSON object")
    data = dict(source)
    bbox = None
    if "bbox" in data:
        raw = data.pop("bbox")
        bbox = (np.asarray(raw["min"], dtype=float), np.asarray(raw["max"], dtype=float))
    root = _parse_node(data, spec)
    return Domain(root=root, bbox=bbox)


def _parse_node(node, spec: OperatorSpec) -> DomainNode:
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError(f"domain node must have exactly one key, got {node!r}")
    kind, body = next(iter(node.items()))
    if kind == "box":
        return BoxSet(np.asarray(body["min"], dtype=float), np.asarray(body["max"], dtype=float))
    if kind == "halfspace":
        return HalfSpaceSet(np.asarray(body["normal"], dtype=float), float(body["offset"]))
    if kind == "ball":
        return BallSet(np.asarray(body["center"], dtype=float), float(body["radius"]))
    if kind == "point":
        return PointSet(np.asarray(body["z"], dtype=float))
    if kind == "cylinder":
        c = np.asarray(body["center"], dtype=float)
        return CylinderSet(spec, point(c[:-1], c[-1]), float(body["radius"]))
    if kind == "cone":
        v = np.asarray(body["vertex"], dtype=float)
        base = _parse_base(body, spec)
        return ConeSet(spec, point(v[:-1], v[-1]), base, float(body["radius"]))
    if kind == "transform":
        z0 = np.asarray(body["z0"], dtype=float)
        return TransformSet(spec, point(z0[:-1], z0[-1]), float(body["r"]),
                            _parse_node(body["of"], spec))
    if kind == "union":
        return UnionSet(tuple(_parse_node(ch, spec) for ch in body))
    if kind == "intersection":
        return IntersectionSet(tuple(_parse_node(ch, spec) for ch in body))
    if kind == "complement":
        return ComplementSet(_parse_node(body, spec))
    raise ConfigError(f"unknown domain node kind {kind!r}")


def _parse_base(body, spec):
    if "base_min" in body:
        return SpatialBox(np.asarray(body["base_min"], dtype=float),
                          np.asarray(body["base_max"], dtype=float))
    if "base_center" in body:
        return SpatialBall(np.asarray(body["base_center"], dtype=float),
                           float(body["base_radius"]))
    raise ConfigError("cone needs base_min/base_max or base_center/base_radius")


# ---------------------------------------------------------------------------
# discrete compacts

@dataclass
class DiscreteCompact:
    """Atom cloud with quadrature volumes standing in for a compact set.

    When ``frame`` is set, atom coordinates are relative to that anchor
    point (absolute = frame o atom).
    """

    spec: OperatorSpec
    xs: np.ndarray                  # (A, N)
    ts: np.ndarray                  # (A,)
    volumes: np.ndarray             # (A,)
    frame: Optional[SpaceTimePoint] = None
    time_step: float = 0.0          # local time grid step (probe scale)
    spatial_steps: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float).reshape(-1, self.spec.dim)
        self.ts = np.asarray(self.ts, dtype=float).reshape(-1)
        self.volumes = np.asarray(self.volumes, dtype=float).reshape(-1)
        if len(self.ts) != len(self.xs) or len(self.volumes) != len(self.xs):
            raise ConfigError("atom arrays must have matching lengths")
        if np.any(self.volumes <= 0) and len(self.volumes):
            raise ConfigError("atom volumes must be positive")

    @property
    def count(self) -> int:
        return len(self.ts)

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    @property
    def time_span(self):
        if self.is_empty:
            return (0.0, 0.0)
        return (float(self.ts.min()), float(self.ts.max()))

    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def absolute(self):
        """Atom coordinates in the absolute frame."""
        if self.frame is None:
            return self.xs, self.ts
        return compose_many(self.spec, self.frame, self.xs, self.ts)

    def to_relative(self, z: SpaceTimePoint):
        """Coordinates of an absolute point in this compact's frame."""
        if self.frame is None:
            return z.x, z.t
        wx, wt = relative_many(self.spec, self.frame, z.x[None, :], np.array([z.t]))
        return wx[0], float(wt[0])


def measure_estimate(compact: DiscreteCompact) -> float:
    """Lebesgue measure estimate of the discretized set."""
    return compact.total_volume()


# ---------------------------------------------------------------------------
# compact builders

def flat_compact(spec: OperatorSpec, region, tau: float,
                 resolution: int) -> DiscreteCompact:
    """Spatial grid at a fixed time, carrying spatial cell measures.

    ``resolution`` is a total atom budget; cells follow the operator's
    anisotropic scaling (block i cell ~ g^(2i+1)), so the kernel resolves
    every direction at a common probe height g^2.
    """
    lo, hi = region.bounds()
    dim = len(lo)
    if spec.dim != dim:
        raise ConfigError("region dimension does not match the operator")
    expo = spec.space_exponents
    lengths = hi - lo
    # unit scale g solves prod(L_i / g^(e_i)) = budget
    g = float(np.exp((np.sum(np.log(lengths)) - math.log(resolution)) / np.sum(expo)))
    counts = np.maximum(1, np.round(lengths / g ** expo).astype(int))
    steps = lengths / counts
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * steps[d] for d in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij") if dim > 1 else [axes[0]]
    pts = np.column_stack([m.reshape(-1) for m in mesh])
    pts = pts[region.contains(pts)]
    cell = float(np.prod(steps))
    g_eff = float(np.max(steps ** (1.0 / expo)))
    return DiscreteCompact(
        spec=spec,
        xs=pts,
        ts=np.full(len(pts), float(tau)),
        volumes=np.full(len(pts), cell),
        frame=None,
        time_step=g_eff ** 2,
        spatial_steps=steps,
        meta={"kind": "flat", "tau": float(tau), "budget": resolution},
    )


def solid_box_compact(spec: OperatorSpec, region: SpatialBox, t_lo: float,
                      t_hi: float, resolution: int) -> DiscreteCompact:
    """Space-time box discretized on an anisotropically matched grid."""
    if t_hi <= t_lo:
        raise ConfigError("solid box needs t_lo < t_hi")
    lo, hi = region.bounds()
    expo = spec.space_exponents
    lengths = hi - lo
    span = t_hi - t_lo
    g = float(np.exp((np.sum(np.log(lengths)) + math.log(span)
                      - math.log(resolution)) / (np.sum(expo) + 2.0)))
    counts = np.maximum(1, np.round(lengths / g ** expo).astype(int))
    steps = lengths / counts
    tcount = max(1, int(round(span / g ** 2)))
    tstep = span / tcount
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * steps[d] for d in range(len(lo))]
    taxis = t_lo + (np.arange(tcount) + 0.5) * tstep
    mesh = np.meshgrid(*axes, taxis, indexing="ij")
    flat = [m.reshape(-1) for m in mesh]
    xs = np.column_stack(flat[:-1])
    ts = flat[-1]
    vol = float(np.prod(steps)) * tstep
    return DiscreteCompact(
        spec=spec, xs=xs, ts=ts, volumes=np.full(len(ts), vol),
        frame=None, time_step=tstep, spatial_steps=steps,
        meta={"kind": "solid_box", "t_lo": t_lo, "t_hi": t_hi},
    )


def check_boundary_point(spec: OperatorSpec, domain: Domain, z0: SpaceTimePoint,
                         eps: float) -> None:
    """Verify z0 sits on the domain boundary at cylinder scale eps.

    The probe cylinder around z0 must meet both the domain and its
    complement; predicates cannot answer topological queries exactly.
    """
    offsets = [np.zeros(spec.dim + 1)]
    for d in range(spec.dim):
        for sgn in (1.0, -1.0):
            v = np.zeros(spec.dim + 1)
            v[d] = sgn * eps ** spec.space_exponents[d]
            offsets.append(v)
    for sgn in (1.0, -1.0):
        v = np.zeros(spec.dim + 1)
        v[-1] = sgn * eps ** 2
        offsets.append(v)
    rng = np.random.default_rng(7)
    for _ in range(16):
        v = rng.uniform(-1, 1, spec.dim + 1)
        v[: spec.dim] *= eps ** spec.space_exponents
        v[-1] *= eps ** 2
        offsets.append(v)
    W = np.array(offsets)
    X, T = compose_many(spec, z0, W[:, :-1], W[:, -1])
    inside = domain.contains_many(np.column_stack([X, T]))
    if np.all(inside):
        raise NotBoundaryPoint("anchor point is interior to the domain at grid scale")
    if not np.any(inside):
        raise NotBoundaryPoint("no domain point within the probe cylinder")


def shell(ctx: kn.KernelContext, domain: Domain, z0: SpaceTimePoint, lam: float,
          k: int, resolution: int) -> DiscreteCompact:
    """Discretize the k-th level shell of the domain complement around z0.

    Atoms are grid points (in the frame of z0) whose kernel value sits
    between the two consecutive superlevel thresholds and which fall
    outside the domain.  Empty compacts are allowed.

    The grid is the dilation image of a unit reference grid at the shell's
    intrinsic scale, so deeper shells keep a constant number of cells.
    """
    if not 0.0 < lam < 1.0:
        raise LambdaOutOfRange(f"lambda must be in (0,1), got {lam}")
    if k < 2:
        raise ValueError("shells are defined for k >= 2")
    spec = ctx.spec
    log_inv = math.log(1.0 / lam)
    log_lo = kn.shell_exponent(k) * log_inv
    log_hi = kn.shell_exponent(k + 1) * log_inv
    depth = kn.superlevel_depth_from_log(ctx, log_lo)
    rho = math.sqrt(depth)
    check_boundary_point(spec, domain, z0, rho / resolution)

    tstep = depth / resolution
    steps = (rho / resolution) ** spec.space_exponents
    xs_parts, ts_parts = [], []
    zero = np.zeros((1, spec.dim))
    for j in range(resolution):
        s = (j + 0.5) * tstep
        g_lo = ctx.log_kernel_const - 0.5 * spec.hom_dim * math.log(s) - log_lo
        if g_lo < 0:
            continue
        # bounding half-widths of the outer-level ellipsoid at this depth
        E = _transition_rows(spec, np.array([-s]))[0]
        scale = math.sqrt(s) ** spec.space_exponents
        K = E @ (spec.gram1 * np.outer(scale, scale)) @ E.T
        hw = 2.0 * np.sqrt(np.maximum(g_lo * np.diag(K), 0.0))
        counts = np.minimum(np.ceil(hw / steps).astype(int), 2000)
        axes = [np.arange(-c, c + 1) * h for c, h in zip(counts, steps)]
        mesh = np.meshgrid(*axes, indexing="ij") if spec.dim > 1 else [axes[0]]
        wx = np.column_stack([m.reshape(-1) for m in mesh])
        lg = kn.log_density_pairs(ctx, np.broadcast_to(zero, wx.shape), 0.0,
                                  wx, np.full(len(wx), -s))
        keep = (lg >= log_lo) & (lg <= log_hi)
        wx = wx[keep]
        if len(wx) == 0:
            continue
        ax, at = compose_many(spec, z0, wx, np.full(len(wx), -s))
        outside = ~domain.contains_many(np.column_stack([ax, at]))
        wx = wx[outside]
        if len(wx):
            xs_parts.append(wx)
            ts_parts.append(np.full(len(wx), -s))
    if xs_parts:
        xs = np.vstack(xs_parts)
        ts = np.concatenate(ts_parts)
    else:
        xs = np.zeros((0, spec.dim))
        ts = np.zeros(0)
    vol = float(np.prod(steps)) * tstep
    return DiscreteCompact(
        spec=spec, xs=xs, ts=ts, volumes=np.full(len(ts), vol), frame=z0,
        time_step=tstep, spatial_steps=steps,
        meta={"kind": "shell", "k": k, "lam": lam, "depth": depth,
              "log_level_lo": log_lo, "log_level_hi": log_hi,
              "resolution": resolution},
    )


def g_r_set(ctx: kn.KernelContext, domain: Domain, z0: SpaceTimePoint,
            r: float, resolution: int) -> DiscreteCompact:
    """Complement part of the homogeneous cylinder below z0."""
    spec = ctx.spec
    if r <= 0:
        raise ConfigError("cylinder radius must be positive")
    tstep = r ** 2 / resolution
    steps = np.array([2.0 * r ** e / resolution for e in spec.space_exponents])
    half = np.array([r ** e for e in spec.space_exponents])
    counts = np.ceil(half / steps).astype(int)
    axes = [np.arange(-c, c + 1) * h for c, h in zip(counts, steps)]
    mesh = np.meshgrid(*axes, indexing="ij") if spec.dim > 1 else [axes[0]]
    grid = np.column_stack([m.reshape(-1) for m in mesh])
    grid = grid[hom_norm(spec, grid) <= r]
    xs_parts, ts_parts = [], []
    for j in range(resolution):
        s = (j + 0.5) * tstep
        ax, at = compose_many(spec, z0, grid, np.full(len(grid), -s))
        outside = ~domain.contains_many(np.column_stack([ax, at]))
        wx = grid[outside]
        if len(wx):
            xs_parts.append(wx)
            ts_parts.append(np.full(len(wx), -s))
    if xs_parts:
        xs = np.vstack(xs_parts)
        ts = np.concatenate(ts_parts)
    else:
        xs = np.zeros((0, spec.dim))
        ts = np.zeros(0)
    vol = float(np.prod(steps)) * tstep
    return DiscreteCompact(
        spec=spec, xs=xs, ts=ts, volumes=np.full(len(ts), vol), frame=z0,
        time_step=tstep, spatial_steps=steps,
        meta={"kind": "cylinder_complement", "r": r, "resolution": resolution},
    )


def _transition_rows(spec: OperatorSpec, T: np.ndarray) -> np.ndarray:
    """Stack of transition matrices E(T_m)."""
    T = np.asarray(T, dtype=float)
    out = np.zeros(T.shape + (spec.dim, spec.dim))
    coeff = np.ones_like(T)
    for k, P in enumerate(spec.drift_powers):
        if k > 0:
            coeff = coeff * (-T) / k
        out += coeff[..., None, None] * P
    return out


# ---------------------------------------------------------------------------
# exterior cones

@dataclass(frozen=True)
class ConeSpec:
    """Cone parameters: base set, depth parameter, vertex."""

    base: object
    depth: float
    vertex: SpaceTimePoint

    def __post_init__(self):
        if self.depth <= 0:
            raise ConfigError("cone depth must be positive")


def cone_sample_points(spec: OperatorSpec, cone: ConeSpec, base_res: int = 6,
                       ladder: int = 40):
    """Deterministic sample of the cone, geometrically refined toward the tip."""
    lo, hi = cone.base.bounds()
    axes = [np.linspace(lo[d], hi[d], base_res) for d in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij") if len(lo) > 1 else [axes[0]]
    xi = np.column_stack([m.reshape(-1) for m in mesh])
    xi = xi[cone.base.contains(xi)]
    rs = cone.depth * 0.75 ** np.arange(ladder)
    pts_x, pts_t = [], []
    for r in rs:
        pts_x.append(dilate_space(spec, r, xi))
        pts_t.append(np.full(len(xi), -r ** 2))
    X = np.vstack(pts_x)
    T = np.concatenate(pts_t)
    return compose_many(spec, cone.vertex, X, T)


def cone_check(spec: OperatorSpec, domain: Domain, cone: ConeSpec,
               base_res: int = 6, ladder: int = 40):
    """True when all sampled cone points avoid the domain.

    Returns (ok, witness): witness is a violating point when ok is False.
    """
    X, T = cone_sample_points(spec, cone, base_res, ladder)
    inside = domain.contains_many(np.column_stack([X, T]))
    if np.any(inside):
        i = int(np.argmax(inside))
        return False, point(X[i], T[i])
    return True, None


def find_exterior_cone(spec: OperatorSpec, domain: Domain, z0: SpaceTimePoint,
                       depths=(1.0, 0.5, 0.25), half_widths=(1.0, 0.5, 0.25),
                       offsets=(0.0, 1.5, -1.5)):
    """Search a small catalog of cones for one contained in the complement."""
    for depth in depths:
        for w in half_widths:
            for off in offsets:
                center = np.full(spec.dim, off * w)
                base = SpatialBox(center - w, center + w)
                cone = ConeSpec(base=base, depth=depth, vertex=z0)
                ok, _ = cone_check(spec, domain, cone)
                if ok:
                    return cone
    return None


def shell_measure_terms(ctx: kn.KernelContext, domain: Domain, z0: SpaceTimePoint,
                        lam: float, k_range: Sequence[int], resolution: int):
    """Measure-based series terms |shell_k| / lam^((Q+2)/Q * k log k)."""
    Q = ctx.spec.hom_dim
    terms = []
    for k in k_range:
        comp = shell(ctx, domain, z0, lam, k, resolution)
        vol = comp.total_volume()
        if vol == 0.0:
            terms.append(0.0)
            continue
        log_term = math.log(vol) + (Q + 2.0) / Q * kn.shell_exponent(k) * math.log(1.0 / lam)
        terms.append(math.exp(log_term))
    return terms
