"""Iteration of cocycles over a rotation.

The cocycle generated by ``M`` over ``T_omega`` is

    Mc(n, theta) = M(theta + (n-1) omega) ... M(theta)      (n >= 1)

with ``Mc(0, .) = Id`` and ``Mc(-n, theta) = M(theta - n omega)^-1 ... M(theta - omega)^-1``.

``direct_cocycle`` multiplies the factors one at a time and is the test oracle.
The fast engines renormalize the generator: ``(M, omega) -> (M(. + omega) M, 2 omega)``
so ``k`` steps represent ``2**k`` iterations (``iterate_fast``), optionally
carrying a pointwise QR factorization along (``qr_double_step``), and, on the
circle, a continued-fraction scheme that reaches the convergent denominators
``q_n`` (``iterate_cf``).
"""

from __future__ import annotations

import enum
import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CocycleError,
    InvalidInputError,
    LevelBudgetError,
    NumericOverflowError,
    SingularMatrixError,
    annotate,
)
from .fields import (
    GridSpec,
    MatrixField,
    ProductStrategy,
    RotationVector,
    ShiftStrategy,
    as_rotation,
    evaluate,
    pointwise_product,
    shift,
    to_grid,
    to_spectral,
)


class Strategy(str, enum.Enum):
    """How one renormalization step shifts and multiplies.

    INTERP    grid samples, shift by local interpolation       O(N)
    FOURIER   grid samples, shift diagonal in Fourier space    O(N log N)
    SPECTRAL  Fourier coefficients, Cauchy product formula     O(N^2)
    """

    INTERP = "interp"
    FOURIER = "fourier"
    SPECTRAL = "spectral"


def parse_strategy(s) -> Strategy:
    try:
        return Strategy(s)
    except ValueError:
        choices = ", ".join(x.value for x in Strategy)
        raise InvalidInputError(f"strategy: unknown value {s!r} (choose from {choices})") from None


# direct oracle


def _sampler(M) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a field or a callable into ``f(points (P, ell)) -> (P, D, D)``."""
    if isinstance(M, MatrixField):
        # trigonometric interpolant, exact off-node for band-limited fields
        M = to_spectral(M)
        nz = np.any(np.abs(M.spectral.reshape(M.grid.n_points, -1)) > 1e-15 * np.max(np.abs(M.spectral)), axis=1)
        if M.grid.ell == 1 and 0 < nz.sum() < nz.size // 4:
            return lambda pts: _sparse_eval(M, nz, pts)
        return lambda pts: np.asarray(evaluate(M, pts)).reshape((len(pts),) + M.shape)
    return lambda pts: np.asarray(M(pts), dtype=float).reshape((len(pts),) + np.shape(M(pts[:1]))[1:])


def _sparse_eval(M: MatrixField, nz: np.ndarray, pts: np.ndarray) -> np.ndarray:
    n = M.grid.sizes[0]
    k = np.rint(np.fft.fftfreq(n, 1.0 / n))[nz]
    e = np.exp(2j * np.pi * np.outer(pts[:, 0], k))
    nyq = np.flatnonzero(np.flatnonzero(nz) == n // 2) if n % 2 == 0 and n > 1 else []
    for col in nyq:
        e[:, col] = np.cos(np.pi * n * pts[:, 0])
    c = M.spectral.reshape(n, -1)[nz]
    return (e @ c).real.reshape((len(pts),) + M.shape)


def _points(theta, ell: int) -> tuple[np.ndarray, bool]:
    t = np.asarray(theta, dtype=float)
    if ell == 1:
        return t.reshape(-1, 1), t.ndim == 0
    return t.reshape(-1, ell), t.ndim == 1


def direct_cocycle_log(M, omega, n: int, theta, renorm_every: int = 8):
    """Direct product with periodic renormalization.

    Returns ``(log_scale, X)`` with ``Mc(n, theta) = exp(log_scale) * X`` where
    each ``X`` has unit Frobenius norm.  ``theta`` may hold several points.
    """
    omega = as_rotation(omega).array
    f = _sampler(M)
    pts, single = _points(theta, len(omega))
    P = pts.shape[0]
    first = f(pts[:1])
    D = first.shape[-1]
    X = np.broadcast_to(np.eye(D), (P, D, D)).copy()
    logs = np.zeros(P)
    n = int(n)
    for j in range(abs(n)):
        if n > 0:
            A = f(np.mod(pts + j * omega, 1.0))
        else:
            B = f(np.mod(pts - (j + 1) * omega, 1.0))
            det = np.linalg.det(B)
            cond = np.linalg.cond(B)
            bad = np.flatnonzero((det == 0) | ~np.isfinite(cond) | (cond > 1e15))
            if bad.size:
                raise SingularMatrixError(f"singular sample at theta={pts[bad[0]] - (j + 1) * omega}")
            A = np.linalg.inv(B)
        X = A @ X
        if (j + 1) % renorm_every == 0 or j + 1 == abs(n):
            s = np.linalg.norm(X, axis=(1, 2))
            s[s == 0] = 1.0
            X = X / s[:, None, None]
            logs += np.log(s)
    if n == 0:
        s = np.linalg.norm(X, axis=(1, 2))
        X = X / s[:, None, None]
        logs += np.log(s)
    if single:
        return logs[0], X[0]
    return logs, X


def direct_cocycle(M, omega, n: int, theta) -> np.ndarray:
    """``Mc(n, theta)`` by ``|n|`` explicit evaluate-and-multiply steps.

    ``M`` is a MatrixField or a callable taking an ``(P, ell)`` array of angles
    and returning ``(P, D, D)`` matrices.  Cost is O(n) by design.
    """
    logs, X = direct_cocycle_log(M, omega, n, theta)
    with np.errstate(over="ignore"):
        out = np.exp(logs)[..., None, None] * X if np.ndim(logs) else math.exp(min(logs, 1e4)) * X
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"direct cocycle of length {n} overflows; use direct_cocycle_log")
    return out


def direct_lyapunov(M, omega, n: int, theta, reorth_every: int = 4) -> np.ndarray:
    """Finite-time exponents ``(1/n) sum log R_ii`` from QR re-orthonormalization.

    Returns an array ``(P, D)``; column 0 is the top exponent estimate.
    """
    omega = as_rotation(omega).array
    f = _sampler(M)
    pts, single = _points(theta, len(omega))
    P = pts.shape[0]
    D = f(pts[:1]).shape[-1]
    X = np.broadcast_to(np.eye(D), (P, D, D)).copy()
    acc = np.zeros((P, D))
    for j in range(n):
        X = f(np.mod(pts + j * omega, 1.0)) @ X
        if (j + 1) % reorth_every == 0 or j + 1 == n:
            Q, R = np.linalg.qr(X)
            d = np.abs(np.diagonal(R, axis1=1, axis2=2))
            acc += np.log(d)
            X = Q
    out = acc / n
    return out[0] if single else out


# doubling


@dataclass(frozen=True, eq=False)
class IterationResult:
    """Renormalized generator standing for ``steps_n`` cocycle iterations.

    ``exp(log_scale) * generator(theta)`` approximates ``Mc(steps_n, theta)``
    for the base rotation ``omega``.
    """

    generator: MatrixField
    omega: RotationVector
    steps_n: int = 1
    log_scale: float = 0.0
    rotation_real: float | None = None

    @property
    def omega_eff(self) -> RotationVector:
        return self.omega.times(self.steps_n)

    def log_form(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node ``(log magnitude, unit-norm matrix)``, safe against overflow."""
        vals = self.generator.flat_values()
        s = np.linalg.norm(vals, axis=(1, 2))
        with np.errstate(divide="ignore"):
            logs = np.log(s) + self.log_scale
        s = np.where(s == 0, 1.0, s)
        return logs, vals / s[:, None, None]


def start(M: MatrixField, omega) -> IterationResult:
    return IterationResult(M, as_rotation(omega))


def _as_state(M, omega) -> IterationResult:
    if isinstance(M, IterationResult):
        return M
    if omega is None:
        raise InvalidInputError("omega is required when starting from a bare field")
    return start(M, omega)


def _first_bad_node(arr: np.ndarray, grid: GridSpec):
    ok = np.isfinite(arr).reshape(grid.n_points, -1).all(axis=1)
    bad = np.flatnonzero(~ok)
    return grid.node_index(bad[0]) if bad.size else None


def double_step(M, omega=None, strategy=Strategy.FOURIER, scaling: bool = True, *, order: int = 3) -> IterationResult:
    """One renormalization step ``M -> M(. + omega_eff) M``.

    ``M`` is a MatrixField (with ``omega``) or an IterationResult to continue.
    With ``scaling`` the new generator is divided by its largest absolute entry
    (largest coefficient for the spectral strategy) and the log is recorded.
    """
    state = _as_state(M, omega)
    strat = parse_strategy(strategy)
    gen = state.generator
    g = gen.grid
    w = state.omega_eff
    with np.errstate(over="ignore", invalid="ignore"):
        if strat is Strategy.SPECTRAL:
            gen = to_spectral(gen)
            shifted = shift(gen, w, ShiftStrategy.SPECTRAL_ONLY)
            from .fields import cauchy_product

            arr = cauchy_product(shifted.spectral, gen.spectral, g.sizes, pad=True)
        else:
            sstrat = ShiftStrategy.GRID_INTERP if strat is Strategy.INTERP else ShiftStrategy.FOURIER_DIAG
            gen = to_grid(gen)
            shifted = shift(gen, w, sstrat, order=order)
            arr = np.matmul(shifted.values, gen.values)
    node = _first_bad_node(arr, g)
    if node is not None:
        raise NumericOverflowError(f"non-finite entries at node {node}", node=node)
    inc = 0.0
    if scaling:
        s = float(np.max(np.abs(arr)))
        if s > 0:
            arr = arr / s
            inc = math.log(s)
    if strat is Strategy.SPECTRAL:
        new = MatrixField(g, spectral=arr)
    else:
        new = MatrixField(g, values=arr)
    return IterationResult(new, state.omega, state.steps_n * 2, 2.0 * state.log_scale + inc)


def iterate_fast(M, omega=None, k: int = 1, strategy=Strategy.FOURIER, scaling: bool = True,
                 on_step: Callable[[dict], None] | None = None, *, order: int = 3,
                 keep_history: bool = False):
    """Apply ``k`` doubling steps; ``Mc(2**k, .)`` up to the recorded scale.

    ``on_step`` receives a diagnostics dict after each step.  With
    ``keep_history`` a list of all intermediate results (including the start)
    is returned instead of the final one.
    """
    if k < 0:
        raise InvalidInputError("k must be >= 0")
    state = _as_state(M, omega)
    history = [state]
    for i in range(k):
        t0 = time.perf_counter()
        try:
            new = double_step(state, strategy=strategy, scaling=scaling, order=order)
        except CocycleError as err:
            raise annotate(err, f"doubling step {i + 1}") from err
        dt = time.perf_counter() - t0
        if on_step is not None:
            on_step({
                "step": i + 1,
                "steps_n": new.steps_n,
                "log_scale_increment": new.log_scale - 2.0 * state.log_scale,
                "log_scale": new.log_scale,
                "sup_norm": new.generator.sup_norm() if new.generator.has_grid else
                float(np.max(np.abs(new.generator.spectral))),
                "wall_time": dt,
            })
        state = new
        if keep_history:
            history.append(state)
    return history if keep_history else state


# QR-carrying doubling


@dataclass(frozen=True, eq=False)
class QRField:
    """Pointwise factorization ``Mc(steps_n, theta) = Q diag(exp(log_diag)) R``.

    ``qr_decompose_field`` returns a plain factorization (``log_diag`` is None,
    ``R`` has nonnegative diagonal).  The doubling engine keeps ``R`` with unit
    diagonal and moves the diagonal magnitudes into ``log_diag`` so growth and
    decay rates never overflow.
    """

    Q: MatrixField
    R: MatrixField
    log_diag: np.ndarray | None = None
    omega: RotationVector | None = None
    steps_n: int = 1
    rank_deficient: tuple = ()
    ordering: str = "corrected"

    @property
    def grid(self) -> GridSpec:
        return self.Q.grid

    @property
    def omega_eff(self) -> RotationVector:
        if self.omega is None:
            raise InvalidInputError("QRField carries no rotation")
        return self.omega.times(self.steps_n)

    def total_log_diag(self) -> np.ndarray:
        """``log |diag|`` of the full triangular factor, shape ``grid.sizes + (D,)``."""
        with np.errstate(divide="ignore"):
            d = np.log(np.abs(np.diagonal(self.R.values, axis1=-2, axis2=-1)))
        return d if self.log_diag is None else d + self.log_diag

    def reconstruct(self) -> MatrixField:
        R = self.R.values
        if self.log_diag is not None:
            R = np.exp(self.log_diag)[..., :, None] * R
        return MatrixField(self.grid, values=self.Q.values @ R)


def _signed_qr(a: np.ndarray):
    Q, R = np.linalg.qr(a)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    sgn = np.where(d < 0, -1.0, 1.0)
    Q = Q * sgn[..., None, :]
    R = np.triu(R * sgn[..., :, None])
    return Q, R


def qr_decompose_field(M: MatrixField, rank_tol: float = 1e-14) -> QRField:
    """Householder QR at every node with nonnegative diagonal of ``R``.

    Nodes where a diagonal entry of ``R`` falls below ``rank_tol`` times the
    node's largest entry are listed in ``rank_deficient``.
    """
    vals = to_grid(M).values
    Q, R = _signed_qr(vals)
    g = M.grid
    d = np.diagonal(R, axis1=-2, axis2=-1).reshape(g.n_points, -1)
    big = np.max(np.abs(R).reshape(g.n_points, -1), axis=1)
    deficient = np.flatnonzero(np.any(d <= rank_tol * big[:, None], axis=1))
    return QRField(MatrixField(g, values=Q), MatrixField(g, values=R),
                   rank_deficient=tuple(g.node_index(i) for i in deficient))


def _normalized_parts(state: QRField):
    """Return ``(Q, U, logr)`` with ``U`` unit upper triangular."""
    R = state.R.values
    D = R.shape[-1]
    d = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    tiny = np.finfo(float).tiny
    dd = np.maximum(d, tiny)
    with np.errstate(over="ignore", invalid="ignore"):
        U = np.triu(R / dd[..., :, None], 1) + np.eye(D)
    logr = np.log(dd)
    if state.log_diag is not None:
        logr = logr + state.log_diag
    return state.Q.values, U, logr


def _graded_log_diag(logd: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``log |diag R|`` for the QR factor of ``diag(exp(logd)) @ Y`` without forming it.

    The product of the first ``j`` diagonal entries is the volume spanned by the
    first ``j`` columns; Cauchy-Binet writes its square as a sum over row
    subsets, which is summed here in log space.
    """
    D = Y.shape[-1]
    logvol = [np.zeros(logd.shape[:-1])]
    for j in range(1, D + 1):
        terms = []
        for rows in itertools.combinations(range(D), j):
            sub = Y[..., list(rows), :j]
            with np.errstate(divide="ignore"):
                ld = np.log(np.abs(np.linalg.det(sub)))
            terms.append(2.0 * (logd[..., list(rows)].sum(axis=-1) + ld))
        logvol.append(0.5 * logsumexp(np.stack(terms, axis=-1), axis=-1))
    return np.stack([logvol[j] - logvol[j - 1] for j in range(1, D + 1)], axis=-1)


def _polar(a: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(a)
    return u @ vt


def qr_double_step(state: QRField, omega=None, strategy=Strategy.FOURIER, ordering: str = "corrected",
                   *, order: int = 3, reorthonormalize: bool = True) -> QRField:
    """One doubling step carried on the QR factors.

    With ``M = Q R`` at every node:

        S(theta)     = R(theta + w) Q(theta)         (w = current rotation)
        S            = Qb Rb                          pointwise
        Q_new(theta) = Q(theta + w) Qb(theta)
        R_new(theta) = Rb(theta) R(theta)             ordering="corrected"
        R_new(theta) = Rb(theta) R(theta + w)         ordering="printed"

    Only the corrected ordering reproduces ``M(theta + w) M(theta)``; the
    other is kept for comparison.  ``R`` is stored with unit diagonal and the
    diagonal logs are accumulated per node and per entry.
    """
    if ordering not in ("corrected", "printed"):
        raise InvalidInputError(f"ordering: unknown value {ordering!r}")
    if state.omega is None:
        if omega is None:
            raise InvalidInputError("omega is required for a bare QR field")
        state = replace(state, omega=as_rotation(omega))
    strat = parse_strategy(strategy)
    sstrat = ShiftStrategy.GRID_INTERP if strat is Strategy.INTERP else ShiftStrategy.FOURIER_DIAG
    g = state.grid
    w = state.omega_eff
    Q, U, logr = _normalized_parts(state)
    D = Q.shape[-1]
    eye = np.eye(D)

    Qs = shift(MatrixField(g, values=Q), w, sstrat, order=order).values
    if reorthonormalize:
        Qs = _polar(Qs)
    Us = np.triu(shift(MatrixField(g, values=U), w, sstrat, order=order).values, 1) + eye
    lrs = shift(MatrixField(g, values=logr[..., None]), w, sstrat, order=order).values[..., 0]

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        Y = Us @ Q
        top = np.max(lrs, axis=-1, keepdims=True)
        Qb, _ = _signed_qr(np.exp(lrs - top)[..., :, None] * Y)
        log_rb = _graded_log_diag(lrs, Y)
        # rows of Rb / diag(Rb), each evaluated at its own scale
        expo = np.log(np.abs(Qb)) + lrs[..., :, None] - log_rb[..., None, :]
        W = np.sign(Qb) * np.exp(np.minimum(expo, 700.0))
        Ub = np.triu(np.swapaxes(W, -1, -2) @ Y, 1) + eye

        if ordering == "corrected":
            lr_right, U_right = logr, U
        else:
            lr_right, U_right = lrs, Us
        ratio = np.exp(lr_right[..., None, :] - lr_right[..., :, None])
        U_new = (np.triu(Ub * ratio, 1) + eye) @ U_right
        Q_new = Qs @ Qb
        log_new = log_rb + lr_right

    for arr in (U_new, Q_new, log_new):
        node = _first_bad_node(arr, g)
        if node is not None:
            raise NumericOverflowError(f"QR doubling produced non-finite entries at node {node}", node=node)
    return QRField(MatrixField(g, values=Q_new), MatrixField(g, values=U_new), log_diag=log_new,
                   omega=state.omega, steps_n=state.steps_n * 2, ordering=ordering)


def iterate_qr(M: MatrixField, omega, k: int, strategy=Strategy.FOURIER, ordering: str = "corrected",
               *, order: int = 3) -> QRField:
    state = replace(qr_decompose_field(M), omega=as_rotation(omega))
    for i in range(k):
        try:
            state = qr_double_step(state, strategy=strategy, ordering=ordering, order=order)
        except CocycleError as err:
            raise annotate(err, f"QR doubling step {i + 1}") from err
    return state


# continued fractions


@dataclass(frozen=True)
class ContinuedFraction:
    """Partial quotients ``a_1..a_m`` of ``omega = [a_1, a_2, ...]``.

    ``p`` and ``q`` hold the convergents ``p_n / q_n`` for ``n = 0..m`` with
    ``q_0 = 1``, ``q_1 = a_1``, ``q_n = a_n q_{n-1} + q_{n-2}`` and
    ``p_0 = 0``, ``p_1 = 1``.
    """

    omega: float
    a: tuple[int, ...]
    p: tuple[int, ...]
    q: tuple[int, ...]
    rational: bool = False

    def __len__(self) -> int:
        return len(self.a)


def continued_fraction_expand(omega: float, m: int, guard: float = 1e-14) -> ContinuedFraction:
    """Gauss-map expansion; stops early (``rational=True``) when the remainder underflows ``guard``."""
    omega = float(omega)
    if not 0.0 < omega < 1.0:
        raise InvalidInputError(f"omega must lie in (0, 1), got {omega}")
    if m < 1:
        raise InvalidInputError("need at least one partial quotient")
    a = []
    x = omega
    rational = False
    for _ in range(m):
        y = 1.0 / x
        ai = math.floor(y)
        if abs(y - round(y)) <= 1e-12 * y:
            ai = round(y)
        a.append(int(ai))
        x = y - ai
        if x < guard:
            rational = True
            break
    p = [0, 1]
    q = [1, a[0]]
    for ai in a[1:]:
        p.append(ai * p[-1] + p[-2])
        q.append(ai * q[-1] + q[-2])
    return ContinuedFraction(omega, tuple(a), tuple(p), tuple(q), rational)


def iterate_cf(M: MatrixField, omega, n_levels: int, strategy=Strategy.FOURIER, scaling: bool = True,
               *, level_cap: int = 10**6, cf: ContinuedFraction | None = None,
               order: int = 3) -> IterationResult:
    """Continued-fraction renormalization on the circle.

    Level ``n`` holds ``B_n = Mc(q_n, .)``, a cocycle over the small rotation
    ``rho_n = q_n omega - p_n``.  With ``B_{-1} = Id`` and ``B_0 = M``:

        B_n(theta) = B_{n-1}(theta + rho_{n-2} + (a_n - 1) rho_{n-1}) ... B_{n-1}(theta + rho_{n-2}) B_{n-2}(theta)
        rho_n      = a_n rho_{n-1} + rho_{n-2},   rho_{-1} = -1, rho_0 = omega
    """
    omega = as_rotation(omega)
    if omega.ell != 1:
        raise InvalidInputError("continued-fraction iteration needs a one-dimensional rotation")
    strat = parse_strategy(strategy)
    if cf is None:
        cf = continued_fraction_expand(omega.omega[0], max(n_levels, 1))
    if n_levels > len(cf):
        raise InvalidInputError(f"n_levels={n_levels} exceeds expansion length {len(cf)}")
    g = M.grid
    D = M.shape[0]
    spectral = strat is Strategy.SPECTRAL
    sstrat = {Strategy.INTERP: ShiftStrategy.GRID_INTERP, Strategy.FOURIER: ShiftStrategy.FOURIER_DIAG,
              Strategy.SPECTRAL: ShiftStrategy.SPECTRAL_ONLY}[strat]

    def prep(f):
        return to_spectral(f) if spectral else to_grid(f)

    def mul(A, B):
        if spectral:
            return pointwise_product(A, B, ProductStrategy.CAUCHY_SPECTRAL)
        return MatrixField(g, values=np.matmul(A.values, B.values))

    def arr(f):
        return f.spectral if spectral else f.values

    prev = (prep(MatrixField.identity(g, D)), 0.0, -1.0)   # (block, log scale, rho)
    cur = (prep(M), 0.0, omega.omega[0])
    for n in range(1, n_levels + 1):
        a_n = cf.a[n - 1]
        if a_n > level_cap:
            raise LevelBudgetError(f"level {n}: partial quotient {a_n} exceeds the cap of {level_cap} products")
        blk, lg, rho = cur
        X, lx = prev[0], prev[1]
        base = prev[2]
        for j in range(a_n):
            with np.errstate(over="ignore", invalid="ignore"):
                S = shift(blk, [base + j * rho], sstrat, order=order)
                X = mul(S, X)
            lx += lg
            node = _first_bad_node(arr(X), g)
            if node is not None:
                raise NumericOverflowError(f"level {n}: non-finite entries at node {node}", node=node)
            if scaling:
                s = float(np.max(np.abs(arr(X))))
                if s > 0:
                    X = type(X)(g, values=None if spectral else X.values / s,
                                spectral=X.spectral / s if spectral else None)
                    lx += math.log(s)
        prev, cur = cur, (X, lx, a_n * rho + base)
    blk, lg, rho = cur
    return IterationResult(blk, omega, cf.q[n_levels], lg, rotation_real=rho)
