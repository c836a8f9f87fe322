import numpy as np
import pytest

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
SILVER = np.sqrt(2.0) - 1.0


def schrodinger_fn(E, coupling):
    """Exact transfer matrices as a callable for the direct oracle."""
    def f(pts):
        t = np.asarray(pts, float)[..., 0]
        out = np.zeros(t.shape + (2, 2))
        out[..., 0, 0] = E - 2.0 * coupling * np.cos(2 * np.pi * t)
        out[..., 0, 1] = -1.0
        out[..., 1, 0] = 1.0
        return out
    return f


def random_trig_field(grid, dim, band, seed, scale=1.0):
    """Real band-limited field with modes ``|k| <= band`` on a 1-torus."""
    from qpcocycle.fields import MatrixField

    rng = np.random.default_rng(seed)
    th = grid.nodes()[..., 0]
    vals = np.zeros(grid.sizes + (dim, dim))
    vals += rng.standard_normal((dim, dim))
    for k in range(1, band + 1):
        a = rng.standard_normal((dim, dim)) / k
        b = rng.standard_normal((dim, dim)) / k
        vals += np.cos(2 * np.pi * k * th)[..., None, None] * a + np.sin(2 * np.pi * k * th)[..., None, None] * b
    return MatrixField(grid, values=scale * vals)


def logform_error(la, na, lb, nb):
    """Relative distance of ``exp(la) na`` from ``exp(lb) nb`` (``nb`` unit norm), per point."""
    la, lb = np.asarray(la), np.asarray(lb)
    return np.linalg.norm(np.exp(la - lb)[..., None, None] * na - nb, axis=(-2, -1))


@pytest.fixture
def golden():
    return GOLDEN


@pytest.fixture
def silver():
    return SILVER


# acceptance bookkeeping: one line per criterion, repeated in the terminal summary

ACCEPTANCE_LINES: list = []


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
