"""Matrix- and scalar-valued periodic functions on the torus T^l = [0, 1)^l.

A field is sampled on a regular grid of power-of-two size and may also carry
its Fourier coefficients.  Coefficients are stored in FFT order and normalized
so that ``coeff(0)`` is the mean of the samples.

For even grid sizes the Nyquist frequency ``N/2`` is treated as a cosine mode:
shifting multiplies it by ``cos(pi N delta)`` instead of a complex phase.  This
keeps shifts of real fields real and makes the trigonometric interpolant agree
with the samples at every node.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import ndimage, signal

from .errors import (
    ConjugateSymmetryError,
    InvalidInputError,
    RepresentationError,
    ShapeError,
    SingularMatrixError,
)

IMAG_RESIDUE_TOL = 1e-10


class ShiftStrategy(str, enum.Enum):
    GRID_INTERP = "interp"
    FOURIER_DIAG = "fourier"
    SPECTRAL_ONLY = "spectral"


class ProductStrategy(str, enum.Enum):
    GRID = "grid"
    CAUCHY_SPECTRAL = "cauchy"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Regular grid on T^l with ``sizes[i]`` points along axis ``i``."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in np.atleast_1d(self.sizes))
        if not sizes:
            raise InvalidInputError("grid needs at least one axis")
        for s in sizes:
            if not _is_pow2(s):
                raise InvalidInputError(f"grid size {s} is not a power of 2")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def uniform(cls, n: int, ell: int = 1) -> "GridSpec":
        return cls((n,) * ell)

    @property
    def ell(self) -> int:
        return len(self.sizes)

    @property
    def n_points(self) -> int:
        return math.prod(self.sizes)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.ell))

    @property
    def spacing(self) -> np.ndarray:
        return 1.0 / np.asarray(self.sizes, dtype=float)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``sizes + (ell,)``."""
        axes = [np.arange(n) / n for n in self.sizes]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Node coordinates flattened to shape ``(N, ell)`` in row-major order."""
        return self.nodes().reshape(-1, self.ell)

    def frequencies(self) -> list[np.ndarray]:
        """Integer frequencies per axis in FFT order (Nyquist reported as -N/2)."""
        return [np.rint(sfft.fftfreq(n, 1.0 / n)).astype(int) for n in self.sizes]

    def node_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.sizes))


def _reduce_mod1(x: np.ndarray) -> np.ndarray:
    x = np.mod(x, 1.0)
    x[x >= 1.0] = 0.0
    return x


@dataclass(frozen=True)
class RotationVector:
    """Frequency vector of the rotation T_omega, components reduced to [0, 1)."""

    omega: tuple[float, ...]

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise InvalidInputError(f"bad rotation vector {self.omega!r}")
        object.__setattr__(self, "omega", tuple(float(v) for v in _reduce_mod1(arr)))

    @property
    def ell(self) -> int:
        return len(self.omega)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.omega)

    def times(self, n: int) -> "RotationVector":
        """Exact ``n * omega mod 1`` for the stored floating-point omega."""
        return RotationVector(tuple(float((Fraction(w) * int(n)) % 1) for w in self.omega))

    def doubled(self) -> "RotationVector":
        return self.times(2)

    def __neg__(self) -> "RotationVector":
        return RotationVector(tuple(-w for w in self.omega))

    def __add__(self, other) -> "RotationVector":
        other = as_rotation(other)
        return RotationVector(
            tuple(float((Fraction(a) + Fraction(b)) % 1) for a, b in zip(self.omega, other.omega))
        )

    def signed(self) -> np.ndarray:
        """Representative in [-1/2, 1/2)."""
        a = self.array
        return np.where(a >= 0.5, a - 1.0, a)

    def min_circle_distance(self, kmax: int) -> float:
        """min over 0 < |k|_inf <= kmax of dist(k . omega, Z)."""
        ks = np.stack(
            np.meshgrid(*[np.arange(-kmax, kmax + 1)] * self.ell, indexing="ij"), axis=-1
        ).reshape(-1, self.ell)
        ks = ks[np.any(ks != 0, axis=1)]
        x = ks @ self.array
        return float(np.min(np.abs(x - np.rint(x))))


def as_rotation(delta) -> RotationVector:
    if isinstance(delta, RotationVector):
        return delta
    return RotationVector(tuple(np.atleast_1d(np.asarray(delta, dtype=float))))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Samples and/or Fourier coefficients of a function T^l -> R^{r x c}.

    ``values`` has shape ``grid.sizes + (r, c)``; ``spectral`` has the same shape
    with complex entries.  Either may be ``None``; at least one must be present.
    """

    grid: GridSpec
    values: np.ndarray | None = None
    spectral: np.ndarray | None = None

    def __post_init__(self):
        if self.values is None and self.spectral is None:
            raise RepresentationError("field needs a grid or a spectral representation")
        ell = self.grid.ell
        shape = None
        if self.values is not None:
            v = np.array(self.values, dtype=float)
            if v.ndim != ell + 2 or v.shape[:ell] != self.grid.sizes:
                raise ShapeError(f"values shape {v.shape} does not fit grid {self.grid.sizes}")
            if not np.all(np.isfinite(v)):
                raise InvalidInputError("field has non-finite entries")
            object.__setattr__(self, "values", _freeze(v))
            shape = v.shape[ell:]
        if self.spectral is not None:
            s = np.array(self.spectral, dtype=complex)
            if s.ndim != ell + 2 or s.shape[:ell] != self.grid.sizes:
                raise ShapeError(f"spectral shape {s.shape} does not fit grid {self.grid.sizes}")
            if shape is not None and s.shape[ell:] != shape:
                raise ShapeError("grid and spectral representations disagree in shape")
            if not np.all(np.isfinite(s)):
                raise InvalidInputError("field has non-finite coefficients")
            object.__setattr__(self, "spectral", _freeze(s))

    # construction helpers

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> "MatrixField":
        """Sample ``fn`` at the nodes; ``fn`` maps an ``(..., ell)`` array of angles to ``(..., r, c)``."""
        return cls(grid, values=np.asarray(fn(grid.nodes()), dtype=float))

    @classmethod
    def constant(cls, grid: GridSpec, A) -> "MatrixField":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(grid, values=np.broadcast_to(A, grid.sizes + A.shape).copy())

    @classmethod
    def identity(cls, grid: GridSpec, dim: int) -> "MatrixField":
        return cls.constant(grid, np.eye(dim))

    # introspection

    @property
    def has_grid(self) -> bool:
        return self.values is not None

    @property
    def has_spectral(self) -> bool:
        return self.spectral is not None

    @property
    def repr_flags(self) -> frozenset[str]:
        flags = set()
        if self.has_grid:
            flags.add("grid")
        if self.has_spectral:
            flags.add("spectral")
        return frozenset(flags)

    @property
    def shape(self) -> tuple[int, int]:
        a = self.values if self.values is not None else self.spectral
        return tuple(a.shape[self.grid.ell:])

    @property
    def dim(self) -> int:
        return self.shape[0]

    def coeff(self, k) -> np.ndarray:
        """Fourier coefficient for integer frequency vector ``k``."""
        if self.spectral is None:
            raise RepresentationError("spectral representation not valid")
        k = tuple(int(x) % n for x, n in zip(np.atleast_1d(k), self.grid.sizes))
        return self.spectral[k]

    def grid_values(self) -> np.ndarray:
        return to_grid(self).values

    def flat_values(self) -> np.ndarray:
        """Grid samples reshaped to ``(N, r, c)``."""
        return self.grid_values().reshape((self.grid.n_points,) + self.shape)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.grid_values()))) if self.grid.n_points else 0.0

    def check_consistency(self, tol: float = 1e-10) -> float:
        """Sup distance between the grid samples and the inverse transform of the coefficients."""
        if not (self.has_grid and self.has_spectral):
            return 0.0
        back = to_grid(MatrixField(self.grid, spectral=self.spectral)).values
        err = float(np.max(np.abs(back - self.values)))
        scale = max(1.0, float(np.max(np.abs(self.values))))
        if err > tol * scale:
            raise InvalidInputError(f"representations disagree by {err:.3e}")
        return err


class ScalarField(MatrixField):
    """A field with 1x1 values; ``data`` gives the plain ``grid.sizes`` array."""

    @classmethod
    def from_values(cls, grid: GridSpec, data) -> "ScalarField":
        data = np.asarray(data, dtype=float)
        return cls(grid, values=data.reshape(grid.sizes + (1, 1)))

    @classmethod
    def wrap(cls, field: MatrixField) -> "ScalarField":
        if field.shape != (1, 1):
            raise ShapeError(f"expected a 1x1 field, got {field.shape}")
        return cls(field.grid, values=field.values, spectral=field.spectral)

    @property
    def data(self) -> np.ndarray:
        return self.grid_values()[..., 0, 0]


def _keep_class(template: MatrixField, grid, values=None, spectral=None) -> MatrixField:
    cls = ScalarField if isinstance(template, ScalarField) else MatrixField
    return cls(grid, values=values, spectral=spectral)


# transforms


def to_spectral(field: MatrixField) -> MatrixField:
    """Populate the Fourier representation; grid samples are kept."""
    if field.has_spectral:
        return field
    g = field.grid
    coeffs = sfft.fftn(field.values, axes=g.axes) / g.n_points
    return _keep_class(field, g, values=field.values, spectral=coeffs)


def to_grid(field: MatrixField) -> MatrixField:
    """Populate grid samples from the coefficients.

    Raises ConjugateSymmetryError when the inverse transform has an imaginary
    part above ``IMAG_RESIDUE_TOL`` relative to its magnitude.
    """
    if field.has_grid:
        return field
    g = field.grid
    z = sfft.ifftn(field.spectral, axes=g.axes) * g.n_points
    scale = float(np.max(np.abs(z))) if z.size else 0.0
    resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if resid > IMAG_RESIDUE_TOL * scale:
        raise ConjugateSymmetryError(
            f"imaginary residue {resid:.3e} (relative {resid / scale:.3e}) after inverse transform"
        )
    return _keep_class(field, g, values=z.real, spectral=field.spectral)


def _axis_phase(n: int, d: float, half: bool = False) -> np.ndarray:
    if half:
        k = np.arange(n // 2 + 1)
    else:
        k = np.rint(sfft.fftfreq(n, 1.0 / n))
    ph = np.exp(2j * np.pi * k * d)
    if n > 1 and n % 2 == 0:
        ph[n // 2] = math.cos(math.pi * n * d)
    return ph


def phase_factors(grid: GridSpec, delta, half: bool = False) -> np.ndarray:
    """Multipliers realizing theta -> theta + delta on coefficients.

    Shape ``grid.sizes`` (or the rfft half-spectrum shape with ``half=True``).
    """
    d = np.atleast_1d(np.asarray(delta.omega if isinstance(delta, RotationVector) else delta, float))
    out = np.ones((), dtype=complex)
    for i, (n, di) in enumerate(zip(grid.sizes, d)):
        ph = _axis_phase(n, float(di), half=half and i == grid.ell - 1)
        out = np.multiply.outer(out, ph)
    return out


def _lagrange_weights(t: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    lo = -((order - 1) // 2)
    offsets = np.arange(lo, lo + order + 1)
    w = np.ones(len(offsets))
    for i, oi in enumerate(offsets):
        for j, oj in enumerate(offsets):
            if i != j:
                w[i] *= (t - oj) / (oi - oj)
    return offsets, w


def _interp_shift(values: np.ndarray, grid: GridSpec, delta: np.ndarray, order: int) -> np.ndarray:
    out = values
    for ax, (n, d) in enumerate(zip(grid.sizes, delta)):
        s = (d % 1.0) * n
        m = math.floor(s)
        t = s - m
        if t == 0.0:
            if m % n:
                out = np.roll(out, -m, axis=ax)
            continue
        offsets, w = _lagrange_weights(t, order)
        # one wrapped stencil pass, then the integer part of the shift
        acc = ndimage.correlate1d(out, w, axis=ax, mode="wrap", origin=-(len(w) // 2) - int(offsets[0]))
        out = np.roll(acc, -m, axis=ax) if m % n else acc
    return out


def shift(field: MatrixField, delta, strategy=ShiftStrategy.FOURIER_DIAG, order: int = 3) -> MatrixField:
    """Return the field theta -> field(theta + delta).

    ``fourier`` multiplies coefficients by phases and returns to the grid,
    ``spectral`` does the same but stays in coefficient space, and ``interp``
    uses periodic Lagrange interpolation of the given ``order`` (cubic by
    default, a 4-point stencil per axis).
    """
    strategy = ShiftStrategy(strategy)
    g = field.grid
    d = np.atleast_1d(np.asarray(delta.omega if isinstance(delta, RotationVector) else delta, float))
    if d.size != g.ell:
        raise ShapeError(f"shift of dimension {d.size} on a {g.ell}-torus")
    ext = (np.newaxis, np.newaxis)

    if strategy is ShiftStrategy.GRID_INTERP:
        if order < 1:
            raise InvalidInputError("interpolation order must be >= 1")
        vals = to_grid(field).values
        return _keep_class(field, g, values=_interp_shift(vals, g, d, order))

    if strategy is ShiftStrategy.FOURIER_DIAG and not field.has_spectral:
        ph = phase_factors(g, d, half=True)[(...,) + ext]
        spec = sfft.rfftn(field.values, axes=g.axes)
        vals = sfft.irfftn(spec * ph, s=g.sizes, axes=g.axes)
        return _keep_class(field, g, values=vals)

    field = to_spectral(field)
    spec = field.spectral * phase_factors(g, d)[(...,) + ext]
    out = _keep_class(field, g, spectral=spec)
    if strategy is ShiftStrategy.FOURIER_DIAG:
        out = to_grid(out)
    return out


# products


def _check_product_shapes(A: MatrixField, B: MatrixField):
    if A.grid != B.grid:
        raise ShapeError(f"grid mismatch {A.grid.sizes} vs {B.grid.sizes}")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matrix shapes {A.shape} and {B.shape} do not compose")


def _convolve(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        return np.convolve(x, y)
    return signal.convolve(x, y, mode="full", method="direct")


def _fold_band(full: np.ndarray, sizes: Sequence[int], pad: bool) -> np.ndarray:
    """Map a full linear convolution of centered spectra back to FFT order."""
    out = full
    for ax, n in enumerate(sizes):
        if n == 1:
            continue
        out = np.moveaxis(out, ax, 0)
        if pad:
            # keep |k| <= n/2, merge +n/2 into the Nyquist bin
            band = out[n // 2: n // 2 + n + 1].copy()
            band[0] += band[n]
            band = sfft.ifftshift(band[:n], axes=0)
        else:
            padded = np.concatenate([out, np.zeros((1,) + out.shape[1:], out.dtype)], axis=0)
            band = padded.reshape((2, n) + out.shape[1:]).sum(axis=0)
        out = np.moveaxis(band, 0, ax)
    return out


def cauchy_product(a: np.ndarray, b: np.ndarray, sizes: Sequence[int], pad: bool = True) -> np.ndarray:
    """Coefficients of the product of two matrix trigonometric polynomials.

    ``a`` and ``b`` are FFT-ordered coefficient arrays of shape
    ``sizes + (r, q)`` and ``sizes + (q, c)``.  With ``pad`` the linear
    convolution is truncated to the input band (no aliasing); without it the
    convolution is circular and reproduces the grid product exactly.
    """
    ell = len(sizes)
    axes = tuple(range(ell))
    ac = sfft.fftshift(a, axes=axes)
    bc = sfft.fftshift(b, axes=axes)
    r, q = a.shape[ell:]
    c = b.shape[ell + 1]
    out = np.zeros(tuple(sizes) + (r, c), dtype=complex)
    for i in range(r):
        for j in range(c):
            full = None
            for k in range(q):
                term = _convolve(ac[(...,) + (i, k)], bc[(...,) + (k, j)])
                full = term if full is None else full + term
            out[(...,) + (i, j)] = _fold_band(full, sizes, pad)
    return out


def pointwise_product(A: MatrixField, B: MatrixField, strategy=ProductStrategy.GRID, pad: bool = True) -> MatrixField:
    """theta -> A(theta) @ B(theta), either on the grid or by the Cauchy formula."""
    strategy = ProductStrategy(strategy)
    _check_product_shapes(A, B)
    g = A.grid
    if strategy is ProductStrategy.GRID:
        return MatrixField(g, values=np.matmul(to_grid(A).values, to_grid(B).values))
    a = to_spectral(A).spectral
    b = to_spectral(B).spectral
    return MatrixField(g, spectral=cauchy_product(a, b, g.sizes, pad=pad))


def scale(field: MatrixField, c: float) -> MatrixField:
    vals = None if field.values is None else field.values * c
    spec = None if field.spectral is None else field.spectral * c
    return _keep_class(field, field.grid, values=vals, spectral=spec)


def transpose(field: MatrixField) -> MatrixField:
    vals = to_grid(field).values
    return MatrixField(field.grid, values=np.swapaxes(vals, -1, -2))


def pointwise_inverse(field: MatrixField) -> MatrixField:
    vals = to_grid(field).values
    flat = vals.reshape((-1,) + field.shape)
    det = np.linalg.det(flat)
    bad = np.flatnonzero(~np.isfinite(det) | (det == 0))
    if bad.size:
        raise SingularMatrixError(f"singular matrix at node {field.grid.node_index(bad[0])}",
                                  node=field.grid.node_index(bad[0]))
    return MatrixField(field.grid, values=np.linalg.inv(vals))


def pointwise_det(field: MatrixField) -> np.ndarray:
    return np.linalg.det(to_grid(field).values)


# evaluation


def _as_points(theta, ell: int) -> tuple[np.ndarray, bool]:
    t = np.asarray(theta, dtype=float)
    if ell == 1:
        return t.reshape(-1, 1), t.ndim == 0
    return t.reshape(-1, ell), t.ndim == 1


def evaluate(field: MatrixField, theta) -> np.ndarray:
    """Value of the field at arbitrary angle(s).

    Uses the trigonometric interpolant when coefficients are available and
    periodic cubic interpolation of the samples otherwise.  ``theta`` may be a
    single point or an array of points ``(P, ell)`` (``(P,)`` when ell = 1).
    """
    g = field.grid
    pts, single = _as_points(theta, g.ell)
    shp = field.shape
    if field.has_spectral:
        phase = np.ones((pts.shape[0], 1), dtype=complex)
        for ax, n in enumerate(g.sizes):
            k = np.rint(sfft.fftfreq(n, 1.0 / n))
            e = np.exp(2j * np.pi * np.outer(pts[:, ax], k))
            if n > 1 and n % 2 == 0:
                e[:, n // 2] = np.cos(np.pi * n * pts[:, ax])
            phase = (phase[:, :, None] * e[:, None, :]).reshape(pts.shape[0], -1)
        out = (phase @ field.spectral.reshape(g.n_points, -1)).real.reshape((-1,) + shp)
    else:
        out = _interp_points(field.values, g, pts)
    return out[0] if single else out


def _interp_points(values: np.ndarray, grid: GridSpec, pts: np.ndarray, order: int = 3) -> np.ndarray:
    P = pts.shape[0]
    idx_list = []
    w_list = []
    for ax, n in enumerate(grid.sizes):
        s = np.mod(pts[:, ax], 1.0) * n
        m = np.floor(s).astype(int)
        t = s - m
        lo = -((order - 1) // 2)
        offsets = np.arange(lo, lo + order + 1)
        w = np.ones((P, len(offsets)))
        for i, oi in enumerate(offsets):
            for j, oj in enumerate(offsets):
                if i != j:
                    w[:, i] *= (t - oj) / (oi - oj)
        idx_list.append(np.mod(m[:, None] + offsets[None, :], n))
        w_list.append(w)
    out = np.zeros((P,) + values.shape[grid.ell:])
    stencil = order + 1
    for combo in np.ndindex(*(stencil,) * grid.ell):
        weight = np.ones(P)
        index = []
        for ax, c in enumerate(combo):
            weight = weight * w_list[ax][:, c]
            index.append(idx_list[ax][:, c])
        out += weight[:, None, None] * values[tuple(index)]
    return out
