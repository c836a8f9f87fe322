"""Command line front end: ``qpcocycle iterate|bundle|reduce|cf|detect|bench``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then explicit flags.  Every run writes ``manifest.json`` with the
resolved configuration, tool version and input hashes.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 resonance.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
import scipy.fft as sfft
from threadpoolctl import threadpool_limits

from . import __version__
from .bundles import detect_straddle, extract_unstable
from .ccf import file_sha256, read_field, write_field
from .errors import CocycleError, ConfigError, InvalidInputError
from .fields import GridSpec, MatrixField, ScalarField, as_rotation, to_grid, to_spectral
from .generators import GeneratorSpec
from .iteration import (
    Strategy,
    continued_fraction_expand,
    direct_cocycle_log,
    double_step,
    iterate_cf,
    iterate_fast,
    start,
)
from .reduction import reduce_rank1

log = logging.getLogger("qpcocycle")

COMMANDS = ("iterate", "bundle", "reduce", "cf", "detect", "bench")
GOLDEN = (5 ** 0.5 - 1) / 2

MAX_K = 40
MAX_GRID = 2 ** 16


@dataclass
class RunConfig:
    command: str
    generator: dict | None = None
    input: str | None = None
    omega: list = field(default_factory=lambda: [GOLDEN])
    grid: int = 256
    ell: int = 1
    k: int = 8
    n_levels: int = 6
    strategy: str = "fourier"
    scaling: bool = True
    method: str = "qr"
    tolerances: dict = field(default_factory=dict)
    cross_check_budget: int = 2 ** 12
    lam: dict | None = None
    bench: dict = field(default_factory=dict)
    output_dir: str = "out"
    threads: int | None = None

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


DEFAULT_GENERATOR = {
    "iterate": {"kind": "schrodinger", "E": 3.5, "coupling": 0.5},
    "cf": {"kind": "schrodinger", "E": 3.5, "coupling": 0.5},
    "bundle": {"kind": "conjugated_constant", "A": [[3.0, 0.0], [0.0, 1.0 / 3.0]]},
    "detect": {"kind": "nonorientable", "a": 3.0},
    "reduce": {"kind": "conjugated_constant", "A": [[3.0, 0.0], [0.0, 1.0 / 3.0]]},
    "bench": {"kind": "near_constant", "epsilon": 0.01, "seed": 0},
}

DEFAULT_BENCH = {
    "sizes": [256, 512, 1024, 2048, 4096],
    "strategies": ["interp", "fourier", "spectral"],
    "dim": 8,
    "repeats": 5,
    "k_grid": 1024,
    "k_values": list(range(4, 15)),
    "k_strategy": "fourier",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--omega", type=float, nargs="+", help="rotation vector components")
    common.add_argument("--k", type=int, help="doubling steps (or levels for cf)")
    common.add_argument("--grid", type=int, help="nodes per axis (power of 2)")
    common.add_argument("--strategy", help="interp, fourier or spectral")
    common.add_argument("--no-scaling", dest="scaling", action="store_false", default=None,
                        help="disable global rescaling between steps")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--input", help="CCF1 field to use instead of a built-in generator")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="qpcocycle", description="Fast iteration of quasi-periodic matrix cocycles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("iterate", parents=[common], help="doubling iteration with diagnostics")
    sub.add_parser("bundle", parents=[common], help="extract the unstable line bundle")
    sub.add_parser("reduce", parents=[common], help="reduce rank-one multipliers to a constant")
    sub.add_parser("cf", parents=[common], help="continued-fraction iteration (circle only)")
    sub.add_parser("detect", parents=[common], help="look for straddle-the-saddle blow-up")
    sub.add_parser("bench", parents=[common], help="time the doubling step strategies")
    return p


_FIELDS = set(RunConfig.__dataclass_fields__)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as err:
            raise ConfigError(f"config: cannot read {args.config}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config: invalid JSON in {args.config}: {err}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    if data.get("command", args.command) != args.command:
        raise ConfigError(f"command: config says {data['command']!r} but the subcommand is {args.command!r}")
    data["command"] = args.command
    for key, val in (("omega", args.omega), ("k", args.k), ("grid", args.grid), ("strategy", args.strategy),
                     ("scaling", args.scaling), ("threads", args.threads), ("output_dir", args.out),
                     ("input", args.input)):
        if val is not None:
            data[key] = val
    if args.command == "cf" and args.k is not None:
        data["n_levels"] = args.k
    try:
        cfg = RunConfig(**data)
    except TypeError as err:
        raise ConfigError(f"config: {err}") from None
    if cfg.generator is None and cfg.input is None:
        cfg.generator = dict(DEFAULT_GENERATOR[cfg.command])
    if cfg.command == "bench":
        cfg.bench = {**DEFAULT_BENCH, **cfg.bench}
    if cfg.threads is None:
        cfg.threads = os.cpu_count() or 1
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    try:
        Strategy(cfg.strategy)
    except ValueError:
        raise ConfigError(f"strategy: unknown value {cfg.strategy!r} (choose interp, fourier or spectral)") from None
    if isinstance(cfg.omega, (int, float)):
        cfg.omega = [float(cfg.omega)]
    try:
        cfg.omega = [float(x) for x in cfg.omega]
    except (TypeError, ValueError):
        raise ConfigError("omega: expected a number or a list of numbers") from None
    if not all(np.isfinite(cfg.omega)):
        raise ConfigError("omega: values must be finite")
    if not 0 <= cfg.k <= MAX_K:
        raise ConfigError(f"k: must lie in [0, {MAX_K}]")
    if cfg.n_levels < 1:
        raise ConfigError("n_levels: must be >= 1")
    n = cfg.grid
    if n < 2 or n > MAX_GRID or n & (n - 1):
        raise ConfigError(f"grid: {n} is not a power of two in [2, {MAX_GRID}]")
    if cfg.input is not None and not Path(cfg.input).is_file():
        raise ConfigError(f"input: file {cfg.input} does not exist")
    if cfg.method not in ("qr", "plain"):
        raise ConfigError(f"method: unknown value {cfg.method!r}")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads: must be >= 1")
    if cfg.command == "cf" and (len(cfg.omega) != 1 or not 0 < cfg.omega[0] < 1):
        raise ConfigError("omega: cf needs a single value in (0, 1)")
    if cfg.generator is not None and not isinstance(cfg.generator, dict):
        raise ConfigError("generator: expected an object")
    if cfg.command == "bench":
        for s in cfg.bench["strategies"] + [cfg.bench["k_strategy"]]:
            try:
                Strategy(s)
            except ValueError:
                raise ConfigError(f"bench.strategies: unknown value {s!r}") from None


# helpers


def _load_generator(cfg: RunConfig) -> tuple[MatrixField, dict]:
    inputs = {}
    if cfg.input is not None:
        f = read_field(cfg.input)
        inputs[cfg.input] = file_sha256(cfg.input)
        return f, inputs
    if len(cfg.omega) != cfg.ell:
        cfg.ell = len(cfg.omega)
    grid = GridSpec.uniform(cfg.grid, cfg.ell)
    return GeneratorSpec.from_dict(cfg.generator, grid).build(cfg.omega), inputs


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_manifest(out: Path, cfg: RunConfig, inputs: dict, outputs: dict):
    _dump(out / "manifest.json", {
        "tool": "qpcocycle",
        "version": __version__,
        "config": asdict(cfg),
        "inputs": inputs,
        "outputs": outputs,
        "platform": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "machine": platform.machine(), "system": platform.system()},
    })


def _cross_check(M: MatrixField, cfg: RunConfig, result, max_nodes: int = 64) -> float | None:
    if result.steps_n > cfg.cross_check_budget:
        return None
    g = M.grid
    idx = np.unique(np.linspace(0, g.n_points - 1, min(max_nodes, g.n_points)).astype(int))
    pts = g.points().reshape(g.n_points, g.ell)[idx]
    lb, nb = direct_cocycle_log(M, cfg.omega, result.steps_n, pts if g.ell > 1 else pts[:, 0])
    la, na = result.log_form()
    la, na = la[idx], na[idx]
    return float(np.max(np.linalg.norm(np.exp(la - lb)[:, None, None] * na - nb, axis=(1, 2))))


def _result_sidecar(result, extra: dict | None = None) -> dict:
    d = {"steps_n": int(result.steps_n), "log_scale": float(result.log_scale),
         "omega": result.omega.array.tolist(), "omega_eff": result.omega_eff.array.tolist()}
    if result.rotation_real is not None:
        d["rotation_real"] = float(result.rotation_real)
    d.update(extra or {})
    return d


# commands


def run_iterate(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    M, inputs = _load_generator(cfg)
    diag_path = out / "diagnostics.jsonl"
    with diag_path.open("w") as fh:
        def on_step(rec):
            fh.write(json.dumps(rec) + "\n")
        res = iterate_fast(M, cfg.omega, cfg.k, cfg.strategy, cfg.scaling, on_step=on_step)
    gen = to_grid(res.generator)
    outputs = {"generator": str(out / "generator.ccf")}
    sha = write_field(out / "generator.ccf", gen)
    err = _cross_check(M, cfg, res)
    _dump(out / "result.json", _result_sidecar(res, {"strategy": cfg.strategy, "scaling": cfg.scaling,
                                                     "cross_check_max_rel_error": err, "generator_sha256": sha}))
    log.info("steps_n=%d log_scale=%.6g cross-check=%s", res.steps_n, res.log_scale, err)
    return inputs, outputs


def run_cf(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    M, inputs = _load_generator(cfg)
    cf = continued_fraction_expand(cfg.omega[0], cfg.n_levels)
    res = iterate_cf(M, cfg.omega, min(cfg.n_levels, len(cf)), cfg.strategy, cfg.scaling, cf=cf)
    write_field(out / "generator.ccf", to_grid(res.generator))
    err = _cross_check(M, cfg, res)
    _dump(out / "result.json", _result_sidecar(res, {
        "partial_quotients": list(cf.a), "q": list(cf.q), "rational": cf.rational,
        "cross_check_max_rel_error": err}))
    return inputs, {"generator": str(out / "generator.ccf")}


def run_bundle(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    M, inputs = _load_generator(cfg)
    sec = extract_unstable(M, cfg.omega, cfg.k, method=cfg.method, strategy=cfg.strategy,
                           tol=cfg.tol("residual", 1e-6))
    write_field(out / "m.ccf", sec.m)
    write_field(out / "lambda.ccf", sec.lam)
    _dump(out / "bundle.json", {**sec.summary(), "method": cfg.method, "k": cfg.k})
    return inputs, {"m": str(out / "m.ccf"), "lambda": str(out / "lambda.ccf")}


def _constructed_lambda(spec: dict, grid: GridSpec, omega) -> ScalarField:
    """Multipliers ``mu p0(. + omega) / p0`` with ``p0 = exp(amplitude cos 2 pi theta_1)``."""
    mu = float(spec.get("mu", 2.0))
    amp = float(spec.get("amplitude", 0.3))
    th = grid.nodes()[..., 0]
    w = as_rotation(omega).array[0]
    return ScalarField.from_values(grid, mu * np.exp(amp * (np.cos(2 * np.pi * (th + w)) - np.cos(2 * np.pi * th))))


def run_reduce(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    inputs = {}
    if cfg.input is not None:
        lam = read_field(cfg.input)
        inputs[cfg.input] = file_sha256(cfg.input)
        if not isinstance(lam, ScalarField):
            raise ConfigError("input: reduce expects a scalar CCF1 field")
        source = "input"
    elif cfg.lam is not None:
        if cfg.lam.get("kind", "constructed") != "constructed":
            raise ConfigError("lambda.kind: only 'constructed' is available")
        lam = _constructed_lambda(cfg.lam, GridSpec.uniform(cfg.grid, len(cfg.omega)), cfg.omega)
        source = "constructed"
    else:
        M, inputs = _load_generator(cfg)
        lam = extract_unstable(M, cfg.omega, cfg.k, method=cfg.method, strategy=cfg.strategy,
                               tol=cfg.tol("residual", 1e-6)).lam
        source = "bundle"
    red = reduce_rank1(lam, cfg.omega, threshold=cfg.tol("divisor", 1e-10), coeff_tol=cfg.tol("resonance", 1e-8))
    write_field(out / "p.ccf", red.p)
    _dump(out / "reduced.json", {
        "mu": red.mu, "sign": red.sign_character.value, "source": source,
        "residual_max": float(np.max(np.abs(red.residual(lam, cfg.omega)))),
        "diagnostics": red.diagnostics.to_dict(),
    })
    return inputs, {"p": str(out / "p.ccf")}


def run_detect(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    M, inputs = _load_generator(cfg)
    hist = iterate_fast(M, cfg.omega, cfg.k, cfg.strategy, cfg.scaling, keep_history=True)
    rep = detect_straddle(hist, threshold=cfg.tol("straddle_ratio", 4.0))
    write_field(out / "derivative.ccf", rep.derivative_growth)
    _dump(out / "straddle.json", {**rep.to_dict(), "median_ratios": rep.ratios})
    return inputs, {"derivative": str(out / "derivative.ccf")}


def _median_time(fn, repeats: int) -> float:
    fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def loglog_fit(x, y) -> tuple[float, float]:
    """Slope and R^2 of ``log y`` against ``log x``."""
    return linear_fit(np.log(x), np.log(y))


def linear_fit(x, y) -> tuple[float, float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icept = np.polyfit(x, y, 1)
    pred = slope * x + icept
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def bench_strategies(cfg: RunConfig) -> tuple[list, dict]:
    b = cfg.bench
    dim = int(b["dim"])
    rows = []
    for strat in b["strategies"]:
        for n in b["sizes"]:
            grid = GridSpec.uniform(int(n), len(cfg.omega))
            gen = dict(cfg.generator)
            if gen.get("kind") == "near_constant":
                gen.setdefault("A", (1.1 * np.eye(dim)).tolist())
            M = GeneratorSpec.from_dict(gen, grid).build(cfg.omega)
            state = start(to_spectral(M) if strat == "spectral" else M, cfg.omega)
            t = _median_time(lambda: double_step(state, strategy=strat, scaling=cfg.scaling), int(b["repeats"]))
            rows.append({"N": int(n), "strategy": strat, "median_time": t})
    fits = {}
    for strat in b["strategies"]:
        pts = [(r["N"], r["median_time"]) for r in rows if r["strategy"] == strat]
        slope, r2 = loglog_fit(*zip(*pts))
        fits[strat] = {"exponent": slope, "r2": r2}
    return rows, fits


def bench_k(cfg: RunConfig) -> tuple[list, dict]:
    b = cfg.bench
    dim = int(b["dim"])
    grid = GridSpec.uniform(int(b["k_grid"]), len(cfg.omega))
    gen = dict(cfg.generator)
    if gen.get("kind") == "near_constant":
        gen.setdefault("A", (1.1 * np.eye(dim)).tolist())
    M = GeneratorSpec.from_dict(gen, grid).build(cfg.omega)
    rows = []
    for k in b["k_values"]:
        t = _median_time(lambda: iterate_fast(M, cfg.omega, int(k), b["k_strategy"], cfg.scaling),
                         int(b["repeats"]))
        rows.append({"k": int(k), "median_time": t})
    slope, r2 = linear_fit([r["k"] for r in rows], [r["median_time"] for r in rows])
    return rows, {"seconds_per_step": slope, "r2": r2}


def run_bench(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    rows, fits = bench_strategies(cfg)
    for r in rows:
        r["fitted_exponent"] = fits[r["strategy"]]["exponent"]
    with (out / "bench.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["N", "strategy", "median_time", "fitted_exponent"])
        w.writeheader()
        w.writerows(rows)
    krows, kfit = bench_k(cfg)
    with (out / "bench_k.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["k", "median_time"])
        w.writeheader()
        w.writerows(krows)
    _dump(out / "bench.json", {"exponents": fits, "k_scan": kfit})
    for s, f in fits.items():
        log.info("%-8s exponent %.3f (R^2 %.3f)", s, f["exponent"], f["r2"])
    return {}, {"table": str(out / "bench.csv"), "k_table": str(out / "bench_k.csv")}


RUNNERS = {"iterate": run_iterate, "bundle": run_bundle, "reduce": run_reduce, "cf": run_cf,
           "detect": run_detect, "bench": run_bench}


@contextlib.contextmanager
def thread_limit(n: int):
    with threadpool_limits(limits=n), sfft.set_workers(n):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with thread_limit(cfg.threads):
            inputs, outputs = RUNNERS[cfg.command](cfg, out)
        write_manifest(out, cfg, inputs, outputs)
    except CocycleError as err:
        print(f"qpcocycle {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"qpcocycle {args.command}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
