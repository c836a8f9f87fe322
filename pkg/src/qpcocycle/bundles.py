"""Rank-one unstable bundles, straddle detection and changes of frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IllConditionedError, InvalidInputError, NoDominantBundleError
from .fields import GridSpec, MatrixField, ScalarField, ShiftStrategy, as_rotation, shift, to_grid
from .iteration import IterationResult, Strategy, iterate_fast, iterate_qr, qr_decompose_field


@dataclass(frozen=True, eq=False)
class BundleSection:
    """Unit section ``m`` of an invariant line bundle with multipliers ``lam``.

    ``M(theta) m(theta) = lam(theta) m(theta + omega)`` up to ``residual``.
    """

    m: MatrixField
    lam: ScalarField
    orientable: bool
    residual: np.ndarray | None = None
    steps_n: int = 1

    @property
    def grid(self) -> GridSpec:
        return self.m.grid

    def vectors(self) -> np.ndarray:
        return self.m.values[..., 0]

    def summary(self) -> dict:
        r = self.residual
        lam = self.lam.data
        return {
            "orientable": bool(self.orientable),
            "steps_n": int(self.steps_n),
            "residual_max": None if r is None else float(np.max(r)),
            "residual_mean": None if r is None else float(np.mean(r)),
            "mean_log_abs_lambda": float(np.mean(np.log(np.abs(lam)))),
            "lambda_min": float(np.min(lam)),
            "lambda_max": float(np.max(lam)),
        }


def _principal(P: np.ndarray) -> np.ndarray:
    _, V = np.linalg.eigh(0.5 * (P + np.swapaxes(P, -1, -2)))
    return V[..., :, -1]


def _shift_line(v: np.ndarray, grid: GridSpec, delta, strategy) -> np.ndarray:
    """Shift a line field through its projector so sign flips do not matter.

    Returns unit vectors with arbitrary signs.
    """
    P = v[..., :, None] * v[..., None, :]
    Ps = shift(MatrixField(grid, values=P), delta, strategy).values
    return _principal(Ps)


def orient(v: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, bool]:
    """Make signs coherent along grid lines; report whether every neighbour pair agrees.

    Flips propagate along axis 0 first, then along each further axis, so a
    section that admits a continuous sign choice is returned continuous.  The
    check includes the wrap-around neighbours.
    """
    v = np.array(v, copy=True)
    for ax in range(grid.ell):
        n = grid.sizes[ax]
        vv = np.moveaxis(v, ax, 0)
        for i in range(1, n):
            if ax == 0:
                # only the first line: later axes propagate from it
                idx = (i,) + (0,) * (grid.ell - 1)
                prev = (i - 1,) + (0,) * (grid.ell - 1)
                if np.dot(vv[idx], vv[prev]) < 0:
                    vv[idx] *= -1
            else:
                d = np.sum(vv[i] * vv[i - 1], axis=-1)
                vv[i] *= np.where(d < 0, -1.0, 1.0)[..., None]
        v = np.moveaxis(vv, 0, ax)
    ok = True
    for ax in range(grid.ell):
        d = np.sum(v * np.roll(v, -1, axis=ax), axis=-1)
        ok &= bool(np.all(d > 0))
    return v, ok


def _align(u: np.ndarray, ref: np.ndarray) -> np.ndarray:
    s = np.sign(np.sum(u * ref, axis=-1))
    s[s == 0] = 1.0
    return u * s[..., None]


def _nearest_node_values(v: np.ndarray, grid: GridSpec, delta) -> np.ndarray:
    d = as_rotation(delta).array
    out = v
    for ax in range(grid.ell):
        steps = int(np.rint(d[ax] * grid.sizes[ax])) % grid.sizes[ax]
        out = np.roll(out, -steps, axis=ax)
    return out


def _multipliers(M: MatrixField, v: np.ndarray, omega, strategy):
    """``lam``, ``m(theta + omega)`` and residual for the unit section ``v``."""
    g = M.grid
    Mv = np.einsum("...ij,...j->...i", to_grid(M).values, v)
    vs = _shift_line(v, g, omega, strategy)
    vs = _align(vs, _nearest_node_values(v, g, omega))
    dot = np.sum(Mv * vs, axis=-1)
    sign = np.where(dot < 0, -1.0, 1.0)
    lam = sign * np.linalg.norm(Mv, axis=-1)
    res = np.linalg.norm(Mv - lam[..., None] * vs, axis=-1)
    return lam, vs, res


def extract_unstable(M: MatrixField, omega, k: int, *, method: str = "qr", strategy=Strategy.FOURIER,
                     tol: float | None = 1e-6) -> BundleSection:
    """Dominant line bundle from ``2**k`` fast iterates.

    method="qr" carries the factorization through the doubling and picks, at
    every node, the ``Q`` column with the largest accumulated diagonal log.
    method="plain" doubles the generator and factors only the final iterate.
    The column describes the bundle at ``theta + 2**k omega``; it is moved
    back by ``-2**k omega``.  ``lam`` is ``|M m|`` with the sign of its
    alignment against ``m(theta + omega)``.  Raises NoDominantBundleError if
    the invariance residual exceeds ``tol`` (``None`` disables the check).
    """
    omega = as_rotation(omega)
    g = M.grid
    M = to_grid(M)
    sstrat = ShiftStrategy.GRID_INTERP if Strategy(strategy) is Strategy.INTERP else ShiftStrategy.FOURIER_DIAG
    if method == "qr":
        q = iterate_qr(M, omega, k, strategy=strategy)
        logd = q.total_log_diag()
        Qv = q.Q.values
    elif method == "plain":
        res = iterate_fast(M, omega, k, strategy=strategy)
        q = qr_decompose_field(res.generator)
        logd = q.total_log_diag()
        Qv = q.Q.values
    else:
        raise InvalidInputError(f"method: unknown value {method!r}")
    col = np.argmax(logd, axis=-1)   # first maximum wins ties
    v = np.take_along_axis(Qv, col[..., None, None], axis=-1)[..., 0]
    n = 2 ** k
    v = _shift_line(v, g, -omega.times(n), sstrat)
    v, orientable = orient(v, g)
    lam, _, resid = _multipliers(M, v, omega, sstrat)
    section = BundleSection(MatrixField(g, values=v[..., None]), ScalarField.from_values(g, lam),
                            orientable, resid, n)
    if tol is not None and np.max(resid) > tol:
        raise NoDominantBundleError(
            f"invariance residual {np.max(resid):.3e} exceeds {tol:.1e}; increase k or precondition",
            residual=ScalarField.from_values(g, resid))
    return section


def invariance_residual(M: MatrixField, omega, section: BundleSection,
                        strategy=ShiftStrategy.FOURIER_DIAG) -> ScalarField:
    """Per-node ``|M m - lam m(. + omega)|``."""
    g = M.grid
    v = section.vectors()
    Mv = np.einsum("...ij,...j->...i", to_grid(M).values, v)
    if section.orientable:
        vs = shift(MatrixField(g, values=v[..., None]), omega, strategy).values[..., 0]
    else:
        vs = _align(_shift_line(v, g, omega, strategy), _nearest_node_values(v, g, omega))
    return ScalarField.from_values(g, np.linalg.norm(Mv - section.lam.data[..., None] * vs, axis=-1))


# straddle detection


@dataclass(frozen=True, eq=False)
class StraddleReport:
    """Nodes where iterates develop localized derivative blow-up."""

    suspect_nodes: list
    derivative_growth: ScalarField | None
    severity: float = 0.0
    ratios: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.suspect_nodes

    def to_dict(self) -> dict:
        return {
            "suspect_nodes": [list(map(int, n)) for n in self.suspect_nodes],
            "severity": float(self.severity),
            "clean": self.clean,
        }


def column_derivative(values: np.ndarray, grid: GridSpec, floor: float = 1e-6) -> np.ndarray:
    """Relative centred-difference derivative of the columns, max over columns and axes.

    Column norms are floored at ``floor`` times the largest column norm.
    """
    norms = np.linalg.norm(values, axis=-2)           # sizes + (c,)
    denom = np.maximum(norms, floor * np.max(norms))
    out = np.zeros(grid.sizes)
    for ax, h in enumerate(grid.spacing):
        diff = np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)
        d = np.linalg.norm(diff, axis=-2) / (2 * h * denom)
        out = np.maximum(out, np.max(d, axis=-1))
    return out


def detect_straddle(history: Sequence, threshold: float = 4.0, floor: float = 1e-6) -> StraddleReport:
    """Compare derivative sizes of consecutive iterates node by node.

    A node is suspect when its growth ratio exceeds ``threshold`` while the
    median ratio over the grid stays below it.  ``severity`` is the largest
    suspect ratio over the median ratio of its step.
    """
    if len(history) < 2:
        raise InvalidInputError("need at least two consecutive iterates")
    fields = [h.generator if isinstance(h, IterationResult) else h for h in history]
    g = fields[0].grid
    if any(f.grid != g for f in fields):
        raise InvalidInputError("iterates live on different grids")
    ders = []
    for f in fields:
        v = to_grid(f).values
        s = np.max(np.abs(v))
        ders.append(column_derivative(v / (s if s > 0 else 1.0), g, floor))
    suspects = set()
    severity = 0.0
    ratios = []
    for a, b in zip(ders, ders[1:]):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(a > 0, b / a, np.where(b > 0, np.inf, 1.0))
        med = float(np.median(r))
        ratios.append(med)
        if not med < threshold:
            continue
        hit = r > threshold
        if np.any(hit):
            for flat in np.flatnonzero(hit.reshape(-1)):
                suspects.add(g.node_index(flat))
            severity = max(severity, float(np.max(r[hit])) / max(med, 1e-300))
    return StraddleReport(sorted(suspects), ScalarField.from_values(g, ders[-1]), severity, ratios)


# change of frame


def precondition(M: MatrixField, Q: MatrixField, omega, *, Q_shifted: MatrixField | None = None,
                 strategy=ShiftStrategy.FOURIER_DIAG, max_cond: float = 1e12,
                 return_condition: bool = False):
    """``Q(theta + omega)^-1 M(theta) Q(theta)``.

    ``Q_shifted`` may supply exact samples of ``Q(. + omega)``; otherwise ``Q``
    is shifted with ``strategy``.
    """
    g = M.grid
    Qv = to_grid(Q).values
    Q1 = to_grid(Q_shifted).values if Q_shifted is not None else shift(to_grid(Q), omega, strategy).values
    cond = np.maximum(np.linalg.cond(Qv), np.linalg.cond(Q1))
    bad = ~np.isfinite(cond) | (cond > max_cond)
    if np.any(bad):
        node = g.node_index(int(np.flatnonzero(bad.reshape(-1))[0]))
        raise IllConditionedError(f"change of frame is ill-conditioned at node {node}", node=node)
    out = MatrixField(g, values=np.linalg.solve(Q1, to_grid(M).values @ Qv))
    if return_condition:
        return out, ScalarField.from_values(g, cond)
    return out
