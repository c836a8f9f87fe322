"""Example cocycle generators."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, IllConditionedError, InvalidInputError
from .fields import GridSpec, MatrixField, as_rotation


class GeneratorKind(str, enum.Enum):
    CONSTANT = "constant"
    SCHRODINGER = "schrodinger"
    CONJUGATED_CONSTANT = "conjugated_constant"
    NON_ORIENTABLE = "nonorientable"
    NEAR_CONSTANT = "near_constant"


def _matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def rotation_matrices(phi) -> np.ndarray:
    """Planar rotations, shape ``phi.shape + (2, 2)``."""
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def make_constant(A, grid: GridSpec) -> MatrixField:
    return MatrixField.constant(grid, _matrix(A))


def make_schrodinger(E: float, coupling: float, grid: GridSpec) -> MatrixField:
    """Transfer matrices ``[[E - 2 coupling cos 2 pi theta, -1], [1, 0]]``; unit determinant."""
    if grid.ell != 1:
        raise InvalidInputError("the Schrodinger generator lives on the circle (ell=1)")
    if coupling < 0:
        raise InvalidInputError("coupling must be nonnegative")
    th = grid.nodes()[..., 0]
    v = np.empty(th.shape + (2, 2))
    v[..., 0, 0] = E - 2.0 * coupling * np.cos(2 * np.pi * th)
    v[..., 0, 1] = -1.0
    v[..., 1, 0] = 1.0
    v[..., 1, 1] = 0.0
    return MatrixField(grid, values=v)


def transform_field(recipe: dict | None, grid: GridSpec, dim: int, delta=None) -> np.ndarray:
    """Grid samples of a change-of-frame field ``Q(theta + delta)`` from a recipe.

    Recipes:
      ``{"kind": "identity"}``
      ``{"kind": "rotation", "amplitude": a, "angle": b, "offset": c}``:
      rotation in the first coordinate plane by ``b + 2 pi a sin(2 pi (theta_1 + c))``.
    """
    recipe = dict(recipe or {"kind": "identity"})
    kind = recipe.pop("kind", "identity")
    th = grid.nodes()[..., 0]
    if delta is not None:
        th = th + as_rotation(delta).array[0]
    eye = np.broadcast_to(np.eye(dim), grid.sizes + (dim, dim)).copy()
    if kind == "identity":
        return eye
    if kind == "rotation":
        amp = float(recipe.pop("amplitude", 0.1))
        base = float(recipe.pop("angle", 0.0))
        off = float(recipe.pop("offset", 0.0))
        if recipe:
            raise ConfigError(f"rotation recipe: unknown keys {sorted(recipe)}")
        if dim < 2:
            raise InvalidInputError("rotation recipe needs dim >= 2")
        eye[..., :2, :2] = rotation_matrices(base + 2 * np.pi * amp * np.sin(2 * np.pi * (th + off)))
        return eye
    raise ConfigError(f"unknown transform recipe kind {kind!r}")


def make_conjugated_constant(A, Q_spec: dict | None, omega, grid: GridSpec) -> MatrixField:
    """``Q(theta + omega) A Q(theta)^-1``: preconditioning by ``Q`` gives back ``A``."""
    A = _matrix(A)
    D = A.shape[0]
    Q0 = transform_field(Q_spec, grid, D)
    Q1 = transform_field(Q_spec, grid, D, delta=omega)
    cond = np.linalg.cond(Q0)
    if np.any(~np.isfinite(cond)) or np.max(cond) > 1e12:
        flat = int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf)))
        node = np.unravel_index(flat, grid.sizes)
        raise IllConditionedError(f"transform recipe is ill-conditioned at node {node}", node=node)
    return MatrixField(grid, values=Q1 @ A @ np.linalg.inv(Q0))


def make_nonorientable(a: float, omega, grid: GridSpec) -> MatrixField:
    """``R(pi (theta + omega)) diag(a, 1/a) R(pi theta)^-1``.

    The frame turns by half a revolution around the circle, so the expanding
    line field comes back with its orientation reversed.
    """
    if grid.ell != 1:
        raise InvalidInputError("the non-orientable generator lives on the circle (ell=1)")
    if a <= 1:
        raise InvalidInputError("need a > 1")
    w = as_rotation(omega).array[0]
    th = grid.nodes()[..., 0]
    A = np.diag([a, 1.0 / a])
    R1 = rotation_matrices(np.pi * (th + w))
    R0 = rotation_matrices(np.pi * th)
    return MatrixField(grid, values=R1 @ A @ np.swapaxes(R0, -1, -2))


def _half_lattice(band: int, ell: int):
    """Integer vectors in ``[-band, band]^ell`` with first nonzero entry positive."""
    for k in itertools.product(range(-band, band + 1), repeat=ell):
        nz = [x for x in k if x != 0]
        if nz and nz[0] > 0:
            yield np.array(k)


def make_near_constant(A, epsilon: float, seed: int, grid: GridSpec, band: int | None = None) -> MatrixField:
    """``A + epsilon * P`` with ``P`` a seeded random trigonometric polynomial.

    ``P`` uses modes with ``|k_i| <= band`` (default and maximum ``N/4``) and is
    scaled so its largest entry over the grid is 1.
    """
    A = _matrix(A)
    if epsilon < 0:
        raise InvalidInputError("epsilon must be >= 0")
    nmin = min(grid.sizes)
    cap = max(nmin // 4, 1)
    band = cap if band is None else int(band)
    if not 1 <= band <= cap:
        raise InvalidInputError(f"band must be in [1, {cap}]")
    rng = np.random.default_rng(seed)
    D = A.shape[0]
    pts = grid.nodes()
    P = np.zeros(grid.sizes + (D, D))
    for k in _half_lattice(band, grid.ell):
        arg = 2 * np.pi * (pts @ k)
        a = rng.standard_normal((D, D))
        b = rng.standard_normal((D, D))
        P += np.cos(arg)[..., None, None] * a + np.sin(arg)[..., None, None] * b
    m = np.max(np.abs(P))
    if m > 0:
        P /= m
    return MatrixField(grid, values=A + epsilon * P)


@dataclass(frozen=True)
class GeneratorSpec:
    """A generator named by kind with its parameters, as it appears in config files."""

    kind: GeneratorKind
    parameters: dict = field(default_factory=dict)
    grid: GridSpec = field(default_factory=lambda: GridSpec.uniform(256))

    @classmethod
    def from_dict(cls, d: dict, grid: GridSpec) -> "GeneratorSpec":
        d = dict(d)
        try:
            kind = GeneratorKind(d.pop("kind"))
        except KeyError:
            raise ConfigError("generator: missing 'kind'") from None
        except ValueError as err:
            choices = ", ".join(k.value for k in GeneratorKind)
            raise ConfigError(f"generator.kind: {err} (choose from {choices})") from None
        return cls(kind, d, grid)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, **self.parameters}

    def build(self, omega=None) -> MatrixField:
        p = dict(self.parameters)
        try:
            return _BUILDERS[self.kind](p, self.grid, omega)
        except KeyError as err:
            raise ConfigError(f"generator {self.kind.value}: missing parameter {err}") from None
        except TypeError as err:
            raise ConfigError(f"generator {self.kind.value}: {err}") from None


def _need_omega(omega):
    if omega is None:
        raise ConfigError("this generator depends on omega")
    return omega


_BUILDERS: dict[GeneratorKind, Any] = {
    GeneratorKind.CONSTANT: lambda p, g, w: make_constant(p.get("A", [[2.0, 0.0], [0.0, 0.5]]), g),
    GeneratorKind.SCHRODINGER: lambda p, g, w: make_schrodinger(float(p.get("E", 0.0)), float(p["coupling"]), g),
    GeneratorKind.CONJUGATED_CONSTANT: lambda p, g, w: make_conjugated_constant(
        p.get("A", [[3.0, 0.0], [0.0, 1.0 / 3.0]]), p.get("Q", {"kind": "rotation", "amplitude": 0.1}),
        _need_omega(w), g),
    GeneratorKind.NON_ORIENTABLE: lambda p, g, w: make_nonorientable(float(p.get("a", 3.0)), _need_omega(w), g),
    GeneratorKind.NEAR_CONSTANT: lambda p, g, w: make_near_constant(
        p.get("A", [[2.0, 0.0], [0.0, 0.5]]), float(p.get("epsilon", 1e-3)), int(p.get("seed", 0)), g,
        p.get("band")),
}
