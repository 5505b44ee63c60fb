"""Spectral calculus on flat complex tori.

Fields live on a uniform periodic grid over the real coordinates
(x_1, y_1, ..., x_n, y_n) of X = C^n / (period * Z^(2n)).  All derivatives
are discrete Fourier derivatives, hence exact (to round-off) for
band-limited data.

Conventions, fixed once and used by every module:

* d/dz = (d/dx - i d/dy)/2, so the complex Hessian is
  H(phi)[j, k] = d^2 phi / dz_j dzbar_k and for n = 1 it equals Delta/4.
* The reference form omega has matrix I in these coordinates, the
  Monge-Ampere ratio (theta_t + dd^c phi)^n / omega^n is
  det((1 + t*c) I + H(t*psi_chi + phi)), and vol(X) = period^(2n).
  The customary 1/pi in dd^c is absorbed into this normalization, which
  makes gamma * log|z - z0| carry Lelong mass exactly gamma.
* Nyquist modes are dropped from the derivative multipliers.  This keeps
  H(phi) exactly Hermitian for real phi and makes the discrete volume
  identity integrate(det M) = (1+tc)^n V hold to round-off.

All operations here are pure functions of immutable snapshots and are
safe to call concurrently.
"""

import numpy as np
from scipy import fft as sfft

from .errors import KaehlerConeViolation, SingularMetric


def _is_power_of_two(m):
    return m >= 1 and (m & (m - 1)) == 0


class TorusGrid:
    """Uniform periodic grid with ``res`` points per real axis.

    Parameters
    ----------
    n : complex dimension, 1 or 2.
    res : points per real axis, a power of two >= 8.
    period : real period per axis (default 1).

    Derivative multipliers and FFT plans are cached on the instance; two
    grids compare equal iff (n, res, period) agree.
    """

    def __init__(self, n, res, period=1.0):
        n = int(n)
        res = int(res)
        period = float(period)
        if n not in (1, 2):
            raise ValueError("complex dimension must be 1 or 2")
        if res < 8 or not _is_power_of_two(res):
            raise ValueError("res must be a power of two >= 8")
        if period <= 0.0:
            raise ValueError("period must be positive")
        self.n = n
        self.res = res
        self.period = period
        self._cache = {}

    # -- basic geometry -------------------------------------------------

    @property
    def shape(self):
        return (self.res,) * (2 * self.n)

    @property
    def npoints(self):
        return self.res ** (2 * self.n)

    @property
    def h(self):
        """Grid spacing per real axis."""
        return self.period / self.res

    @property
    def volume(self):
        """V = integral of omega^n = period^(2n)."""
        return self.period ** (2 * self.n)

    def axis_coords(self):
        return np.arange(self.res) * self.h

    def coord(self, axis):
        """Coordinate array along real axis ``axis``, broadcastable to shape."""
        c = self.axis_coords()
        sh = [1] * (2 * self.n)
        sh[axis] = self.res
        return c.reshape(sh)

    def __eq__(self, other):
        return (isinstance(other, TorusGrid)
                and (self.n, self.res, self.period) == (other.n, other.res, other.period))

    def __hash__(self):
        return hash((self.n, self.res, self.period))

    def __repr__(self):
        return f"TorusGrid(n={self.n}, res={self.res}, period={self.period})"

    # -- spectral machinery ----------------------------------------------

    def _freq(self, zero_nyquist=True):
        """Angular frequencies along one axis (1d)."""
        key = ("freq", zero_nyquist)
        if key not in self._cache:
            k = 2.0 * np.pi * np.fft.fftfreq(self.res, d=self.h)
            if zero_nyquist:
                k = k.copy()
                k[self.res // 2] = 0.0
            self._cache[key] = k
        return self._cache[key]

    def _freq_along(self, axis, zero_nyquist=True, rfft=False):
        """Frequency array broadcastable to the (r)fft spectrum shape."""
        k = self._freq(zero_nyquist)
        if rfft and axis == 2 * self.n - 1:
            k = k[: self.res // 2 + 1].copy()
            if not zero_nyquist:
                k[-1] = abs(k[-1])
        sh = [1] * (2 * self.n)
        sh[axis] = len(k)
        return k.reshape(sh)

    def _dz_mult(self, j, rfft=False):
        """Multiplier of d/dz_j = (d/dx_j - i d/dy_j)/2."""
        kx = self._freq_along(2 * j, rfft=rfft)
        ky = self._freq_along(2 * j + 1, rfft=rfft)
        return 0.5 * (1j * kx + ky)

    def _dzbar_mult(self, k, rfft=False):
        kx = self._freq_along(2 * k, rfft=rfft)
        ky = self._freq_along(2 * k + 1, rfft=rfft)
        return 0.5 * (1j * kx - ky)

    def hessian_multiplier(self, j, k, rfft=False):
        """Fourier multiplier of d^2/dz_j dzbar_k (cached, full shape)."""
        key = ("hess", j, k, rfft)
        if key not in self._cache:
            m = self._dz_mult(j, rfft) * self._dzbar_mult(k, rfft)
            if j == k:
                m = m.real  # equals -(kx^2+ky^2)/4
            m = np.broadcast_to(m, self._spec_shape(rfft)).copy()
            self._cache[key] = m
        return self._cache[key]

    def flat_symbol(self, rfft=False):
        """Symbol of the flat complex Laplacian tr H = sum_j d^2/dz_j dzbar_j."""
        key = ("flat", rfft)
        if key not in self._cache:
            s = sum(self.hessian_multiplier(j, j, rfft) for j in range(self.n))
            self._cache[key] = s
        return self._cache[key]

    def _spec_shape(self, rfft=False):
        sh = list(self.shape)
        if rfft:
            sh[-1] = self.res // 2 + 1
        return tuple(sh)

    def ksq_full(self, rfft=False):
        """|k|^2 over all 2n real axes, Nyquist included (for mollification)."""
        key = ("ksq", rfft)
        if key not in self._cache:
            tot = 0.0
            for a in range(2 * self.n):
                tot = tot + self._freq_along(a, zero_nyquist=False, rfft=rfft) ** 2
            self._cache[key] = np.broadcast_to(tot, self._spec_shape(rfft)).copy()
        return self._cache[key]

    def dealias_mask(self, rfft=False):
        """2/3-rule mask (True = keep)."""
        key = ("dealias", rfft)
        if key not in self._cache:
            cut = self.res // 3
            keep = np.ones(self._spec_shape(rfft), dtype=bool)
            for a in range(2 * self.n):
                idx = np.rint(np.fft.fftfreq(self.res) * self.res).astype(int)
                if rfft and a == 2 * self.n - 1:
                    idx = idx[: self.res // 2 + 1].copy()
                    idx[-1] = self.res // 2
                sh = [1] * (2 * self.n)
                sh[a] = len(idx)
                keep &= np.abs(idx.reshape(sh)) <= cut
            self._cache[key] = keep
        return self._cache[key]


# ---------------------------------------------------------------------------
# field containers


class PotentialField:
    """Real scalar field on a torus grid (the potential state variable)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        self.grid = grid
        self.values = values

    def copy(self):
        return PotentialField(self.grid, self.values.copy())

    @property
    def sup(self):
        return float(self.values.max())

    @property
    def inf(self):
        return float(self.values.min())

    def __add__(self, a):
        return PotentialField(self.grid, self.values + float(a))

    __radd__ = __add__

    def __sub__(self, a):
        return PotentialField(self.grid, self.values - float(a))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))


class HermitianField:
    """n x n complex Hermitian matrix per gridpoint, stored as (*grid, n, n)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != grid.shape + (grid.n, grid.n):
            raise ValueError("Hermitian field has wrong shape")
        self.grid = grid
        self.values = values

    def scalar(self):
        """For n = 1 the field is a real scalar; return it as such."""
        if self.grid.n != 1:
            raise ValueError("scalar() only makes sense at n = 1")
        return self.values[..., 0, 0].real


class MetricField(HermitianField):
    """Positive-definite Hermitian field representing theta_t + dd^c phi."""

    __slots__ = ("min_eig",)

    def __init__(self, grid, values, min_eig=None):
        super().__init__(grid, values)
        if min_eig is None:
            min_eig = float(eigmin_hermitian(grid, values).min())
        self.min_eig = float(min_eig)


# ---------------------------------------------------------------------------
# raw spectral kernels (ndarray in, ndarray out; hot path of the stepper)


def hessian_raw(grid, arr, spec=None):
    """Complex Hessian of a real array.

    Returns the scalar H (real 2d array) for n = 1, and the component
    triple (h11, h22, h12) for n = 2 (h11, h22 real, h12 complex).
    ``spec`` optionally supplies the precomputed (r)fft of ``arr``.
    """
    if grid.n == 1:
        if spec is None:
            spec = sfft.rfftn(arr)
        return sfft.irfftn(grid.hessian_multiplier(0, 0, rfft=True) * spec, s=grid.shape)
    if spec is None:
        spec = sfft.fftn(arr)
    h11 = sfft.ifftn(grid.hessian_multiplier(0, 0) * spec).real
    h22 = sfft.ifftn(grid.hessian_multiplier(1, 1) * spec).real
    h12 = sfft.ifftn(grid.hessian_multiplier(0, 1) * spec)
    return h11, h22, h12


def hessian_matrix(grid, raw):
    """Pack a raw Hessian into the (*grid, n, n) complex layout."""
    out = np.zeros(grid.shape + (grid.n, grid.n), dtype=np.complex128)
    if grid.n == 1:
        out[..., 0, 0] = raw
    else:
        h11, h22, h12 = raw
        out[..., 0, 0] = h11
        out[..., 1, 1] = h22
        out[..., 0, 1] = h12
        out[..., 1, 0] = np.conj(h12)
    return out


def raw_from_matrix(grid, values):
    if grid.n == 1:
        return values[..., 0, 0].real
    return values[..., 0, 0].real, values[..., 1, 1].real, values[..., 0, 1]


def raw_combine(grid, a, raw, scale=1.0):
    """a*I + scale*raw as a raw metric rep (a may be a scalar)."""
    if grid.n == 1:
        return a + scale * raw
    h11, h22, h12 = raw
    return a + scale * h11, a + scale * h22, scale * h12


def raw_add(grid, r1, r2, s1=1.0, s2=1.0):
    if grid.n == 1:
        return s1 * r1 + s2 * r2
    return (s1 * r1[0] + s2 * r2[0], s1 * r1[1] + s2 * r2[1], s1 * r1[2] + s2 * r2[2])


def raw_zero(grid):
    z = np.zeros(grid.shape)
    if grid.n == 1:
        return z
    return z, z.copy(), np.zeros(grid.shape, dtype=np.complex128)


def det_raw(grid, m):
    """Determinant of a raw metric rep, pointwise."""
    if grid.n == 1:
        return m
    m11, m22, m12 = m
    return m11 * m22 - (m12.real ** 2 + m12.imag ** 2)


def trace_raw(grid, m):
    if grid.n == 1:
        return m
    return m[0] + m[1]


def eigmin_raw(grid, m):
    """Pointwise smallest eigenvalue of a raw metric rep."""
    if grid.n == 1:
        return m
    m11, m22, m12 = m
    tr = m11 + m22
    disc = np.sqrt(np.maximum((m11 - m22) ** 2 + 4.0 * (m12.real ** 2 + m12.imag ** 2), 0.0))
    return 0.5 * (tr - disc)


def matrix_from_raw(grid, m):
    if grid.n == 1:
        out = np.zeros(grid.shape + (1, 1), dtype=np.complex128)
        out[..., 0, 0] = m
        return out
    out = np.zeros(grid.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = m[0]
    out[..., 1, 1] = m[1]
    out[..., 0, 1] = m[2]
    out[..., 1, 0] = np.conj(m[2])
    return out


def mollify_raw(grid, arr, delta):
    """Gaussian (heat-kernel) mollification at radius delta.

    Multiplier exp(-delta^2 |k|^2 / 2): the heat semigroup at time
    delta^2/2, whose positive kernel preserves omega-psh fields.
    """
    if delta <= 0.0:
        return np.array(arr, dtype=np.float64, copy=True)
    mult = np.exp(-0.5 * delta ** 2 * grid.ksq_full(rfft=True))
    return sfft.irfftn(mult * sfft.rfftn(arr), s=grid.shape)


# ---------------------------------------------------------------------------
# public operations (spec-level surface)


def complex_hessian(phi):
    """H(phi)[j,k] = d^2 phi / dz_j dzbar_k, spectrally exact for band-limited phi."""
    raw = hessian_raw(phi.grid, phi.values)
    return HermitianField(phi.grid, hessian_matrix(phi.grid, raw))


def metric_matrix(phi, twist=None, t=0.0, check=True):
    """Local matrix of theta_t + dd^c phi, i.e. (1+tc) I + H(t psi_chi + phi).

    Raises KaehlerConeViolation when the smallest eigenvalue over the grid
    is <= 0 (unless check=False).
    """
    grid = phi.grid
    c = 0.0 if twist is None else twist.c
    arr = phi.values
    if twist is not None and twist.psi_chi is not None and t != 0.0:
        arr = arr + t * twist.psi_chi.values
    raw = raw_combine(grid, 1.0 + t * c, hessian_raw(grid, arr))
    min_eig = float(eigmin_raw(grid, raw).min())
    if check and not (min_eig > 0.0):
        raise KaehlerConeViolation(
            f"metric not positive definite (min eigenvalue {min_eig:.3e})",
            t=t, min_eig=min_eig)
    return MetricField(grid, matrix_from_raw(grid, raw), min_eig=min_eig)


def ma_ratio(phi, twist=None, t=0.0):
    """(theta_t + dd^c phi)^n / omega^n = det of the metric matrix."""
    M = metric_matrix(phi, twist, t)
    return det_raw(phi.grid, raw_from_matrix(phi.grid, M.values))


def inverse_hermitian(grid, values):
    """Closed-form pointwise inverse (n <= 2) of a Hermitian matrix field."""
    det = det_raw(grid, raw_from_matrix(grid, values))
    bad = np.abs(det).min()
    if not np.isfinite(bad) or bad < 1e-300:
        raise SingularMetric(f"matrix inversion failed (|det| down to {bad:.3e})")
    out = np.empty_like(values)
    if grid.n == 1:
        out[..., 0, 0] = 1.0 / values[..., 0, 0]
        return out
    out[..., 0, 0] = values[..., 1, 1] / det
    out[..., 1, 1] = values[..., 0, 0] / det
    out[..., 0, 1] = -values[..., 0, 1] / det
    out[..., 1, 0] = -values[..., 1, 0] / det
    return out


def trace_wrt(M, N):
    """tr_M(N) = sum_{jk} (M^{-1})_{jk} N_{kj}, a real scalar field."""
    inv = inverse_hermitian(M.grid, M.values)
    return np.einsum("...jk,...kj->...", inv, N.values).real


def laplacian_wrt(M, psi):
    """Laplacian of psi with respect to the metric M: tr_M(dd^c psi)."""
    return trace_wrt(M, complex_hessian(psi))


def eigmin_hermitian(grid, values):
    return eigmin_raw(grid, raw_from_matrix(grid, values))


def min_eigenvalue(M):
    """Global minimum over gridpoints of the smallest eigenvalue."""
    return float(eigmin_hermitian(M.grid, M.values).min())


def integrate(field, grid=None):
    """Integral against omega^n: grid mean times V (spectral quadrature)."""
    if isinstance(field, PotentialField):
        grid, arr = field.grid, field.values
    else:
        arr = np.asarray(field)
        if grid is None:
            raise ValueError("integrate(ndarray) needs the grid")
    return float(arr.mean() * grid.volume)
