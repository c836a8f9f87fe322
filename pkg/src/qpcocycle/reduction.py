"""Reduction of scalar (rank-one) cocycles to constants.

Given multipliers ``lam(theta)`` of one sign, find ``p > 0`` and a constant
``mu`` with ``lam(theta) p(theta) = mu p(theta + omega)``.  Taking logs turns
this into the difference equation ``g(theta + omega) - g(theta) = f(theta) - avg``
which is diagonal in Fourier space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NonconstantSignError, ResonanceError
from .fields import MatrixField, ScalarField, ShiftStrategy, as_rotation, phase_factors, shift, to_grid, to_spectral


class SignCharacter(str, enum.Enum):
    PLUS = "plus"
    MINUS = "minus"


@dataclass(frozen=True)
class SmallDivisorDiagnostics:
    min_divisor: float
    dropped_modes: list = field(default_factory=list)
    threshold: float = 1e-10

    def to_dict(self) -> dict:
        return {"min_divisor": self.min_divisor, "threshold": self.threshold,
                "dropped_modes": [list(map(int, k)) for k in self.dropped_modes]}


@dataclass(frozen=True, eq=False)
class ReducedForm:
    mu: float
    p: ScalarField
    sign_character: SignCharacter
    diagnostics: SmallDivisorDiagnostics | None = None

    @property
    def sign(self) -> float:
        return -1.0 if self.sign_character is SignCharacter.MINUS else 1.0

    def residual(self, lam: ScalarField, omega, strategy=ShiftStrategy.FOURIER_DIAG) -> np.ndarray:
        """``lam p - mu p(. + omega)`` on the grid."""
        ps = ScalarField.wrap(shift(self.p, omega, strategy)).data
        return lam.data * self.p.data - self.mu * ps


def _mode(grid, flat: int) -> tuple[int, ...]:
    """Signed frequency vector of the FFT slot ``flat``."""
    idx = grid.node_index(flat)
    return tuple(int(i - n) if i > n // 2 else int(i) for i, n in zip(idx, grid.sizes))


def solve_cohomological(f: ScalarField, omega, *, threshold: float = 1e-10, coeff_tol: float = 1e-8):
    """Solve ``g(theta + omega) - g(theta) = f(theta) - avg`` with ``avg`` the mean of ``f``.

    Returns ``(g, avg, diagnostics)``.  The mean of ``g`` is pinned to zero.
    Modes whose divisor ``|exp(2 pi i k.omega) - 1|`` is below ``threshold``
    are dropped; a dropped mode carrying a coefficient above ``coeff_tol``
    raises ResonanceError.
    """
    omega = as_rotation(omega)
    if f.shape != (1, 1):
        raise InvalidInputError("expected a scalar field")
    g = f.grid
    fh = to_spectral(f).spectral[..., 0, 0]
    if not np.all(np.isfinite(fh)):
        raise InvalidInputError("f has non-finite values")
    avg = float(fh.flat[0].real)
    div = phase_factors(g, omega) - 1.0
    mag = np.abs(div)
    mag.flat[0] = np.inf
    small = mag < threshold
    dropped = [_mode(g, i) for i in np.flatnonzero(small.reshape(-1))]
    big = small & (np.abs(fh) > coeff_tol)
    if np.any(big):
        modes = [_mode(g, i) for i in np.flatnonzero(big.reshape(-1))]
        raise ResonanceError(f"resonant modes {modes[:5]} carry coefficients above {coeff_tol:.0e}", modes=modes)
    gh = np.zeros_like(fh)
    keep = ~small
    keep.flat[0] = False
    gh[keep] = fh[keep] / div[keep]
    sol = ScalarField.wrap(MatrixField(g, spectral=gh[..., None, None]))
    diag = SmallDivisorDiagnostics(float(np.min(mag)), dropped, threshold)
    return ScalarField.wrap(to_grid(sol)), avg, diag


def reduce_rank1(lam: ScalarField, omega, *, threshold: float = 1e-10, coeff_tol: float = 1e-8,
                 min_abs: float = 1e-12) -> ReducedForm:
    """Constant form ``mu`` and positive gauge ``p`` for multipliers of one sign."""
    vals = lam.data
    if np.any(~np.isfinite(vals)):
        raise InvalidInputError("lambda has non-finite values")
    if np.min(np.abs(vals)) <= min_abs:
        raise InvalidInputError(f"|lambda| must stay above {min_abs:g}")
    if np.all(vals > 0):
        sc = SignCharacter.PLUS
    elif np.all(vals < 0):
        sc = SignCharacter.MINUS
    else:
        raise NonconstantSignError("lambda changes sign; no positive gauge reduces it to a constant")
    f = ScalarField.from_values(lam.grid, np.log(np.abs(vals)))
    gfield, avg, diag = solve_cohomological(f, omega, threshold=threshold, coeff_tol=coeff_tol)
    p = ScalarField.from_values(lam.grid, np.exp(gfield.data))
    mu = float(np.exp(avg))
    return ReducedForm(-mu if sc is SignCharacter.MINUS else mu, p, sc, diag)
