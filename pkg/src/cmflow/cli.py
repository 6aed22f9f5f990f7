"""Command-line entry point: ``cmflow run|verify|ranktable``.

Exit codes: 0 success, 1 verification failed, 2 configuration error,
3 integration failure.
"""
import argparse
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import scenarios as sc
from ._accel import backend
from .reduced import IntegrationError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3


# -- atomic output --------------------------------------------------------------

def atomic_write(path, data: bytes):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix="." + path.name + ".", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return f"{v:.17g}"


def table_csv(table: sc.Table) -> str:
    out = io.StringIO()
    out.write(",".join(table.header) + "\n")
    ints = set(table.int_cols)
    for row in np.atleast_2d(table.rows):
        out.write(",".join(str(int(v)) if k in ints else _fmt(float(v))
                           for k, v in enumerate(row)) + "\n")
    return out.getvalue()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer, int)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


def to_json(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


def render_svg(draw, deterministic) -> bytes:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with matplotlib.rc_context({"svg.hashsalt": "cmflow", "svg.fonttype": "path"}):
        fig = plt.figure(figsize=(7, 4.5))
        try:
            draw(fig)
            buf = io.BytesIO()
            meta = {"Date": None} if deterministic else {}
            fig.savefig(buf, format="svg", metadata=meta)
        finally:
            plt.close(fig)
    return buf.getvalue()


# -- scenario execution ---------------------------------------------------------

def _write_result(cfg, res, out_dir, deterministic, mode, wall):
    out_dir = Path(out_dir)
    written = []

    def put(fname, data):
        atomic_write(out_dir / fname, data)
        written.append({"file": fname, "sha256": hashlib.sha256(data).hexdigest()})

    if "csv" in cfg.outputs:
        for name, tab in res.tables.items():
            put(f"{cfg.name}_{name}.csv", table_csv(tab).encode())
        for name, text in res.text_tables.items():
            put(f"{cfg.name}_{name}.csv", text.encode())
    if "json" in cfg.outputs:
        body = {"scenario": cfg.name, "model": cfg.model, "summary": res.data}
        if mode == "verify":
            body["checks"] = res.checks
            body["pass"] = res.passed
        put(f"{cfg.name}_{mode}.json" if mode == "verify" else f"{cfg.name}_results.json",
            to_json(body))
    if "svg" in cfg.outputs:
        for name, draw in res.plots.items():
            put(f"{cfg.name}_{name}.svg", render_svg(draw, deterministic))
    manifest = {
        "scenario": cfg.name,
        "mode": mode,
        "config": cfg.echo(),
        "library": {"name": "cmflow", "version": __version__, "backend": backend()},
        "drift_summary": res.drift,
        "summary": res.data,
        "outputs": written,
        "wall_time": None if deterministic else wall,
    }
    if mode == "verify":
        manifest["checks"] = res.checks
        manifest["pass"] = res.passed
    data = to_json(manifest)
    atomic_write(out_dir / f"{cfg.name}_manifest.json", data)
    return out_dir / f"{cfg.name}_manifest.json"


def execute(config_path, mode="run", seed=None, tol=None, out_dir=None, deterministic=False,
            stream=None):
    """Run or verify one scenario; returns the process exit code."""
    stream = stream or sys.stdout
    err = sys.stderr
    try:
        cfg = sc.load_config(config_path, seed=seed, tol=tol)
    except sc.ConfigError as e:
        print(f"config error: {e.diagnostic()}", file=err)
        return EXIT_CONFIG
    out_dir = out_dir or os.path.join("out", cfg.name)
    run, verify = sc.RUNNERS[cfg.model]
    w0 = time.perf_counter()
    try:
        res = (verify if mode == "verify" else run)(cfg)
    except sc.ConfigError as e:
        print(f"config error: {e.diagnostic()}", file=err)
        return EXIT_CONFIG
    except IntegrationError as e:
        t = "unknown" if e.t is None else f"{e.t:.17g}"
        print(f"integration failure in {cfg.name} at t={t}: {e}", file=err)
        return EXIT_INTEGRATION
    except ValueError as e:
        # invalid initial data rejected by the state constructors
        ce = sc.ConfigError(f"invalid initial data: {e}", "initial",
                            cfg.lines.get("initial"), config_path)
        print(f"config error: {ce.diagnostic()}", file=err)
        return EXIT_CONFIG
    wall = time.perf_counter() - w0
    man = _write_result(cfg, res, out_dir, deterministic, mode, wall)
    print(f"{cfg.name}: {cfg.model} -> {man}", file=stream)
    if mode == "verify":
        for c in res.checks:
            print(f"  {'PASS' if c['pass'] else 'FAIL'} {c['name']}: value={c['value']} "
                  f"threshold={c['threshold']}", file=stream)
        return EXIT_OK if res.passed else EXIT_FAILED
    return EXIT_OK


def ranktable(n_min=3, n_max=8, n_samples=1_000_000, seed=0, out_dir=None,
              deterministic=False, stream=None):
    stream = stream or sys.stdout
    cfg = sc.ScenarioConfig(model="rank-table", name="ranktable", seed=seed, outputs=("json",),
                            options={"n_min": n_min, "n_max": n_max, "n_samples": n_samples})
    w0 = time.perf_counter()
    res = sc.verify_rank_table(cfg)
    wall = time.perf_counter() - w0
    for r in res.data["table"]:
        print(f"N={r['N']:2d}  ranks={','.join(map(str, r['ranks'])):<16s} "
              f"[{r['method']}, {r['n_patterns']} patterns]  "
              f"{'matches' if r['match'] else 'differs from'} the table", file=stream)
    _write_result(cfg, res, out_dir or os.path.join("out", "ranktable"), deterministic,
                  "verify", wall)
    return EXIT_OK if res.passed else EXIT_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="cmflow", description="Calogero-Moser matrix-flow scenarios")
    p.add_argument("--version", action="version", version=f"cmflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run a scenario and write its artifacts"),
                        ("verify", "run a scenario against its oracle and report checks")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("config")
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--tol", type=float, default=None)
        q.add_argument("--out-dir", default=None)
        q.add_argument("--deterministic", action="store_true",
                       help="suppress wall time and plot timestamps")
    q = sub.add_parser("ranktable", help="possible ranks of sign-pattern matrices")
    q.add_argument("--n-min", type=int, default=3)
    q.add_argument("--n-max", type=int, default=8)
    q.add_argument("--samples", type=int, default=1_000_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-dir", default=None)
    q.add_argument("--deterministic", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "ranktable":
        if not 3 <= args.n_min <= args.n_max:
            print("config error: need 3 <= --n-min <= --n-max", file=sys.stderr)
            return EXIT_CONFIG
        return ranktable(args.n_min, args.n_max, args.samples, args.seed, args.out_dir,
                         args.deterministic)
    return execute(args.config, args.command, args.seed, args.tol, args.out_dir,
                   args.deterministic)


if __name__ == "__main__":
    sys.exit(main())
