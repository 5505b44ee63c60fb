"""Singular model potentials, the decreasing approximation scheme, and the
Lelong-number slope estimator.

Model potentials are built from the torus Green's function

    Delta G = 2 pi (delta_{z0} - 1/L^2),   G(z) = log|z - z0| + O(|z - z0|^2),

evaluated through a rapidly convergent theta-function product, so that a
log pole of mass gamma is periodized with its Lelong mass kept exactly
gamma.  The price is a uniform curvature background -pi gamma / (2 L^2) on
the complex Hessian, which bounds the admissible gamma for a given period
(gamma = 1 needs period >= ~1.26; the singular test scenarios use L = 2).

Regularization replaces abstract smoothing theory by an explicit scheme
that is exact on the flat torus: truncate at depth j*K, mollify with the
heat kernel at radius delta_j (a positive kernel, so omega-psh survives),
and add the compensating constant C*delta_j^2 with C = 2n + 1/2 so the
levels decrease pointwise in j.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from . import geometry as geo
from .errors import InsufficientResolution, InvalidSpec, MonotonicityFailure
from .geometry import PotentialField

_THETA_Q = np.exp(-np.pi)  # nome of the square torus


def _theta1(v):
    """Jacobi theta_1(v, q=e^{-pi}) for complex array v (6 terms, ~1e-12)."""
    out = np.zeros_like(v, dtype=np.complex128)
    for m in range(6):
        out += (-1) ** m * _THETA_Q ** ((m + 0.5) ** 2) * np.sin((2 * m + 1) * v)
    return 2.0 * out


def _theta1_prime0():
    return 2.0 * sum((-1) ** m * (2 * m + 1) * _THETA_Q ** ((m + 0.5) ** 2)
                     for m in range(6))


def green_function(grid, z0, axis_pair=0):
    """Torus Green's function centered at z0 = (x0, y0), sampled on the grid.

    For n=2, ``axis_pair`` selects which complex coordinate carries the pole;
    the result is constant along the other pair.
    """
    L = grid.period
    x = grid.coord(2 * axis_pair) - z0[0]
    y = grid.coord(2 * axis_pair + 1) - z0[1]
    # reduce to the fundamental cell so the theta series converges fast
    x = x - L * np.round(x / L)
    y = y - L * np.round(y / L)
    v = (np.pi / L) * (x + 1j * y)
    mod = np.abs(_theta1(v))
    g = np.log(np.maximum(mod, 1e-300)) - np.pi * y ** 2 / L ** 2
    g = g - np.log(np.pi * _theta1_prime0() / L)
    return np.broadcast_to(g, grid.shape).copy()


def default_center(grid):
    """Half a cell off the grid nodes, so samples of log poles stay finite."""
    c = (grid.res // 2 + 0.5) * grid.h
    return (c,) * (2 * grid.n)


@dataclass
class PotentialSpec:
    """Initial-potential description with a prescribed regularity class.

    kind is one of:
      smooth                  band-limited modes: [(kvec, amp, phase), ...]
      lelong                  gamma * log|z - z0|, periodized; Lelong mass gamma
      zero_lelong_unbounded   -(s0 + max(-G, 0))^a, unbounded, zero Lelong number
      bounded_discontinuous   max(gamma*G, floor): bounded, kinked
      finite_energy           same family as zero_lelong with tail a < 1/2
      from_file               load a snapshot file
    """

    kind: str
    gamma: float = 1.0
    a: float = 0.5
    center: tuple = None
    floor: float = -1.0
    s0: float = 1.0
    modes: list = field(default_factory=list)
    path: str = ""
    clip_floor: float = -1e6

    KINDS = ("smooth", "lelong", "zero_lelong_unbounded",
             "bounded_discontinuous", "finite_energy", "from_file")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidSpec(f"unknown potential kind {self.kind!r}")
        if self.kind == "lelong" and self.gamma < 0:
            raise InvalidSpec("lelong mass gamma must be >= 0")
        if self.kind in ("zero_lelong_unbounded", "finite_energy"):
            if not 0.0 < self.a < 1.0:
                raise InvalidSpec("exponent a must lie in (0, 1)")
        if self.kind == "finite_energy" and self.a >= 0.5:
            raise InvalidSpec("finite-energy tail exponent must satisfy a < 1/2")

    @property
    def data_class(self):
        return {"smooth": "smooth", "lelong": "lelong",
                "zero_lelong_unbounded": "zero_lelong",
                "bounded_discontinuous": "bounded",
                "finite_energy": "finite_energy",
                "from_file": "unknown"}[self.kind]


def cos_mode(grid, kvec, amp, phase=0.0):
    """amp * cos(2 pi k.x / L + phase) for an integer frequency vector."""
    L = grid.period
    arg = phase
    for axis, k in enumerate(kvec):
        if k:
            arg = arg + (2.0 * np.pi * k / L) * grid.coord(axis)
    return amp * np.cos(np.broadcast_to(arg, grid.shape))


def _pole_potential(spec, grid):
    z0 = spec.center if spec.center is not None else default_center(grid)
    if len(z0) != 2 * grid.n:
        raise InvalidSpec(f"center needs {2 * grid.n} coordinates, got {len(z0)}")
    if grid.n == 1:
        g = green_function(grid, z0[:2])
    else:
        g1 = green_function(grid, z0[:2], axis_pair=0)
        g2 = green_function(grid, z0[2:], axis_pair=1)
        # (1/2) log(e^{2G1} + e^{2G2}) ~ log|z - z0| near the pole
        g = 0.5 * np.logaddexp(2.0 * g1, 2.0 * g2)
    return g, z0


def sample_potential(spec, grid, validate=True):
    """Sample a model potential on the grid, clipped at spec.clip_floor.

    Validation mollifies a copy at grid scale and requires
    min eig(I + H) >= -1e-6, i.e. the sample is omega-psh up to tolerance.
    """
    if spec.kind == "smooth":
        vals = np.zeros(grid.shape)
        for kvec, amp, phase in spec.modes:
            vals += cos_mode(grid, kvec, amp, phase)
    elif spec.kind == "from_file":
        from . import io as _io
        fld, _ = _io.read_field(spec.path)
        if fld.grid != grid:
            raise InvalidSpec("snapshot grid does not match the requested grid")
        vals = fld.values
    else:
        g, _ = _pole_potential(spec, grid)
        if spec.kind == "lelong":
            vals = spec.gamma * g
        elif spec.kind == "bounded_discontinuous":
            vals = np.maximum(spec.gamma * g, spec.floor)
        else:  # zero_lelong_unbounded / finite_energy
            vals = -(spec.s0 + np.maximum(-g, 0.0)) ** spec.a
    vals = np.maximum(vals, spec.clip_floor)
    if validate:
        smooth = geo.mollify_raw(grid, vals, 2.0 * grid.h)
        emin = float(geo.eigmin_raw(
            grid, geo.raw_combine(grid, 1.0, geo.hessian_raw(grid, smooth))).min())
        if emin < -1e-6:
            raise InvalidSpec(
                f"sampled potential is not omega-psh at grid scale "
                f"(min eig {emin:.3e}); reduce the mass or enlarge the period")
    return PotentialField(grid, vals)


@dataclass
class ApproximationLevel:
    j: int
    phi: PotentialField
    delta: float
    eps: float   # strict psh margin: min eig of I + H(phi_j)


@dataclass
class ApproximationSequence:
    spec: PotentialSpec
    grid: "geo.TorusGrid"
    levels: list

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def approximation_sequence(spec, grid, J, K=1.0, delta0=None, ratio=0.7,
                           s0=0.01):
    """Decreasing smooth strictly omega-psh approximants of the sampled spec.

    Level j (j = 1..J): truncate at -j*K, heat-mollify at radius
    delta_j = delta0 * ratio^(j-1), blend by s_j = s0 * ratio^(2(j-1))
    towards the sup (for a strict cone margin), and add (2n + 1/2) delta_j^2.
    The construction telescopes through the heat semigroup, so levels
    decrease pointwise; this is checked and MonotonicityFailure raised
    otherwise.
    """
    if J < 1:
        raise InvalidSpec("need at least one approximation level")
    phi0 = sample_potential(spec, grid)
    if delta0 is None:
        delta0 = max(6.0 * grid.h, grid.period / 32.0)
    C = 2.0 * grid.n + 0.5
    levels = []
    for j in range(1, J + 1):
        delta = delta0 * ratio ** (j - 1)
        s = s0 * ratio ** (2 * (j - 1))
        trunc = np.maximum(phi0.values, -j * K)
        psi = geo.mollify_raw(grid, trunc, delta)
        vals = (1.0 - s) * psi + s * psi.max() + C * delta ** 2
        eps = float(geo.eigmin_raw(
            grid, geo.raw_combine(grid, 1.0, geo.hessian_raw(grid, vals))).min())
        if eps <= 0.0:
            raise InvalidSpec(
                f"level {j} is not strictly omega-psh (min eig {eps:.3e})")
        levels.append(ApproximationLevel(j, PotentialField(grid, vals), delta, eps))
    for lo, hi in zip(levels[1:], levels[:-1]):
        gap = float((lo.phi.values - hi.phi.values).max())
        if gap > 1e-12:
            raise MonotonicityFailure(
                f"levels {hi.j} -> {lo.j} fail pointwise decrease by {gap:.3e}")
    return ApproximationSequence(spec, grid, levels)


# ---------------------------------------------------------------------------
# Lelong-number estimation


def _sphere_directions(n, count, seed=7):
    rng = np.random.default_rng(seed)
    if n == 1:
        th = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    v = rng.standard_normal((count, 4))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_average(phi, z0, r, n_dirs=96):
    """Average of phi over the sphere |z - z0| = r (interpolated, periodic)."""
    grid = phi.grid
    dirs = _sphere_directions(grid.n, n_dirs)
    pts = (np.asarray(z0)[None, :] + r * dirs) / grid.h
    coords = [pts[:, a] for a in range(2 * grid.n)]
    vals = map_coordinates(phi.values, coords, order=3, mode="grid-wrap")
    return float(vals.mean())


def lelong_estimate(phi, z0, r_min=None, r_max=None, n_radii=10, n_dirs=96):
    """Log-slope estimate of the Lelong mass of phi at z0.

    Sphere averages a(r) are fitted against [1, log r, r^2]; the r^2 term
    absorbs the smooth curvature background (including the Green-function
    compensation), and the log r coefficient estimates the mass.  Clamped
    at zero.
    """
    grid = phi.grid
    if r_min is None:
        r_min = 3.0 * grid.h
    if r_max is None:
        r_max = 0.22 * grid.period
    if r_min < 2.0 * grid.h:
        r_min = 2.0 * grid.h
    if r_max <= r_min * 1.05:
        raise InsufficientResolution(
            f"radius window [{r_min:.3g}, {r_max:.3g}] too narrow at res {grid.res}")
    radii = np.geomspace(r_min, r_max, n_radii)
    if len(radii) < 3:
        raise InsufficientResolution("need at least 3 usable radii")
    avgs = np.array([sphere_average(phi, z0, r, n_dirs) for r in radii])
    logs = np.log(radii)
    cols = [np.ones_like(radii), logs]
    if len(radii) >= 4:
        cols.append(radii ** 2)
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, avgs, rcond=None)
    return max(0.0, float(coef[1]))


def integrability_threshold(spec, base_res, period=2.0, betas=None, growth=1.10):
    """Largest beta with int e^{-2 beta phi0} finite, detected by quadrature
    divergence as the resolution doubles (base_res, 2x, 4x).

    Returns the geometric mean of the last convergent and first divergent
    beta on the scanned ladder.  The threshold is a local quantity, so the
    period only needs to keep the sample omega-psh.
    """
    if betas is None:
        ref = 1.0 / spec.gamma if spec.kind == "lelong" and spec.gamma > 0 else 1.0
        betas = ref * np.array([0.5, 0.65, 0.8, 0.9, 1.0, 1.1, 1.25, 1.45, 1.7])
    grids = [geo.TorusGrid(1, base_res * (2 ** i), period) for i in range(3)]
    samples = [sample_potential(spec, g, validate=False) for g in grids]
    last_conv, first_div = None, None
    for beta in betas:
        vals = [float(np.exp(np.minimum(-2.0 * beta * s.values, 700.0)).mean())
                for s in samples]
        r1, r2 = vals[1] / vals[0], vals[2] / vals[1]
        if r2 > growth and r2 >= r1 * 0.99:
            first_div = beta
            break
        last_conv = beta
    if last_conv is None:
        return float(betas[0])
    if first_div is None:
        return float(betas[-1])
    return float(np.sqrt(last_conv * first_div))
