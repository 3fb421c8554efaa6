"""``polyct`` command line: phantom, simulate, reconstruct, evaluate, render.

Exit codes: 0 success, 1 parse/input errors, 2 numerical failures,
3 non-convergence (the trace is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .core import (
    DATA_DIR,
    ConvergenceError,
    FanBeamGeometry,
    NumericalError,
    ParseError,
    ReconConfig,
    bundled_table,
    load_attenuation_csv,
    load_config,
    load_phantom_spec,
    preset_config,
)

log = logging.getLogger("polyct")

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_NOCONV = 0, 1, 2, 3


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _thread_limit(n):
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        log.warning("threadpoolctl not installed; --threads ignored")
        return nullcontext()
    return threadpool_limits(limits=int(n))


def build_config(preset=None, config=None, solver=None, seed=None, overrides=()) -> ReconConfig:
    """Preset, then config file, then ``--set`` overrides, then --solver/--seed."""
    cfg = preset_config(preset) if preset else ReconConfig()
    if config:
        cfg = load_config(config, cfg)
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            cfg.set(key, value)
        except KeyError:
            raise ParseError(f"unknown key {key!r}") from None
        except ValueError as exc:
            raise ParseError(str(exc)) from None
    if solver:
        cfg.solver = solver
    if seed is not None:
        cfg.seed = int(seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return cfg


def load_table(path=None, materials=None, n_materials=None):
    if path:
        return load_attenuation_csv(path, materials=list(materials) if materials else None)
    if materials:
        return load_attenuation_csv(DATA_DIR / "attenuation.csv", materials=list(materials))
    return bundled_table(n_materials or 5)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_phantom(spec_path, out, size=64, n_materials=None, materials=None):
    """Rasterise a phantom description to ``phantom.csv``."""
    from .imageio import save_material_image

    if spec_path is None:
        spec_path = DATA_DIR / "phantom.txt"
    elif not Path(spec_path).exists() and (DATA_DIR / f"{spec_path}.txt").exists():
        spec_path = DATA_DIR / f"{spec_path}.txt"
    w = load_phantom_spec(spec_path, size, size, n_materials)
    names = tuple(materials) if materials else bundled_table(6).material_names[:w.n_materials]
    d = _out_dir(out)
    save_material_image(w, d / "phantom.csv", names)
    return d / "phantom.csv"


def cmd_simulate(phantom, table, geom_cfg, noise_cfg, out, save_y=True):
    """Forward model plus noise; writes a measurement directory.

    ``geom_cfg`` holds n_views/n_det (optional); ``noise_cfg`` is a
    :class:`ReconConfig` supplying sigma, i_bar and seed.
    """
    from .imageio import load_material_image, material_names_of, save_measurement
    from .physics import simulate_measurement

    w = load_material_image(phantom)
    if not w.feasible:
        raise ParseError("phantom pixels must lie in the simplex", phantom)
    names = material_names_of(phantom)
    if table is None or isinstance(table, (str, Path)):
        table = load_table(table, names or None, w.n_materials)
    if table.n_materials != w.n_materials:
        raise ParseError(f"table has {table.n_materials} materials, phantom {w.n_materials}")
    if w.height != w.width:
        raise ParseError("only square images are supported by the default geometry", phantom)
    geom = FanBeamGeometry.default(w.height, **(geom_cfg or {}))
    ms = simulate_measurement(w, table, geom, noise_cfg.sigma, noise_cfg.i_bar, seed=noise_cfg.seed)
    return save_measurement(ms, out, geom, table.material_names, save_y=save_y)


def _render_materials(w, d, names, fmt="png"):
    from .imageio import write_pgm, write_png16

    written = []
    for m in range(w.n_materials):
        name = names[m] if m < len(names) else f"m{m}"
        p = d / f"w_{m}_{name}.{fmt}"
        (write_png16 if fmt == "png" else write_pgm)(p, w.data[..., m])
        written.append(p)
    return written


def cmd_reconstruct(measurement, table, cfg: ReconConfig, out, render=True):
    """Run the configured solver; returns the exit code.

    Always writes ``trace.csv`` and ``config.txt``; on success also
    ``recon.csv`` (solver output), ``recon_reinit.csv`` and per-material PNGs.
    """
    from .imageio import geometry_from_meta, load_measurement, save_material_image
    from .solvers import reinitialize, run_solver
    from .solvers.common import SolverTrace

    ms, meta = load_measurement(measurement)
    try:
        geom = geometry_from_meta(meta)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"measurement lacks geometry: {exc}", Path(measurement) / "meta.txt")
    if ms.geometry_key and ms.geometry_key != geom.key():
        raise ParseError("geometry key does not match the stored geometry", Path(measurement))
    names = tuple(meta["materials"].split(",")) if meta.get("materials") else None
    if table is None or isinstance(table, (str, Path)):
        table = load_table(table, names)
    cfg.sigma, cfg.i_bar = ms.sigma, ms.i_bar
    d = _out_dir(out)
    cfg.write(d / "config.txt")
    try:
        w, trace = run_solver(ms.f, table, geom, cfg)
    except (NumericalError, ValueError) as exc:
        trace = getattr(exc, "trace", None) or SolverTrace(cfg.solver)
        trace.status = "failed"
        trace.write_csv(d / "trace.csv")
        log.error("%s", exc)
        return EXIT_NOCONV if isinstance(exc, ConvergenceError) else EXIT_NUMERIC
    trace.write_csv(d / "trace.csv")
    save_material_image(w, d / "recon.csv", table.material_names)
    w_re = reinitialize(w, table)
    save_material_image(w_re, d / "recon_reinit.csv", table.material_names)
    if render:
        _render_materials(w, d, table.material_names)
    with open(d / "status.txt", "w") as fh:
        fh.write(f"status = {trace.status}\niterations = {len(trace)}\n")
    return EXIT_OK


def cmd_evaluate(recon, ground_truth, out, table=None, reinit=True):
    """Metrics of ``recon`` against ``ground_truth``; writes ``metrics.txt``."""
    from .imageio import load_material_image, material_names_of
    from .metrics import evaluate, write_metrics
    from .solvers import reinitialize

    wr = load_material_image(recon)
    wt = load_material_image(ground_truth)
    names = material_names_of(ground_truth) or material_names_of(recon)
    if reinit:
        if table is None or isinstance(table, (str, Path)):
            table = load_table(table, names or None, wr.n_materials)
        wr = reinitialize(wr, table)
    m = evaluate(wr, wt, names)
    out = Path(out)
    if out.suffix == "":
        out = _out_dir(out) / "metrics.txt"
    write_metrics(m, out)
    return m


def cmd_render(image_or_sino, out_png, fmt="png"):
    """Per-material grayscale images for H x W x N grids; a heatmap for 2-D grids."""
    from .imageio import material_names_of, read_grid_csv, render_heatmap, write_pgm, write_png16
    from .core import MaterialImage

    arr, meta = read_grid_csv(image_or_sino)
    out = Path(out_png)
    if arr.ndim == 3:
        d = _out_dir(out)
        w = MaterialImage(arr, float(meta.get("pixel_size", 2.0 / max(arr.shape[:2]))))
        return _render_materials(w, d, material_names_of(image_or_sino), fmt)
    if arr.ndim == 2:
        if out.suffix == "":
            out = _out_dir(out) / (Path(image_or_sino).stem + ".png")
        render_heatmap(out, arr)
        return [out]
    if arr.ndim == 1:
        (write_png16 if fmt == "png" else write_pgm)(out, arr[None, :])
        return [out]
    raise ParseError("can only render 1-, 2- or 3-dimensional grids", image_or_sino, 1)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=["a", "b", "c"], help="noise case preset")
    p.add_argument("--solver", choices=["em", "pd", "admm"])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=0, help="cap on BLAS/worker threads")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable), e.g. em.outer_iters=200")


def make_parser():
    ap = argparse.ArgumentParser(prog="polyct", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterise a phantom description")
    _common(p)
    p.add_argument("spec", nargs="?", help="phantom file or bundled name (default: phantom)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-materials", type=int)

    p = sub.add_parser("simulate", help="simulate noisy measurements")
    _common(p)
    p.add_argument("phantom", help="phantom CSV written by 'polyct phantom'")
    p.add_argument("--table", help="attenuation CSV (default: bundled)")
    p.add_argument("--n-views", type=int)
    p.add_argument("--n-det", type=int)
    p.add_argument("--no-photon-field", action="store_true", help="skip writing y_true")

    p = sub.add_parser("reconstruct", help="reconstruct material fractions")
    _common(p)
    p.add_argument("measurement", help="measurement directory")
    p.add_argument("--table", help="attenuation CSV (default: bundled)")
    p.add_argument("--no-render", action="store_true")

    p = sub.add_parser("evaluate", help="compare a reconstruction with the ground truth")
    _common(p)
    p.add_argument("recon")
    p.add_argument("truth")
    p.add_argument("--table", help="attenuation CSV used for the final reinitialisation")
    p.add_argument("--no-reinit", action="store_true")

    p = sub.add_parser("render", help="write PNG/PGM images of a grid CSV")
    _common(p)
    p.add_argument("grid")
    p.add_argument("--format", choices=["png", "pgm"], default="png")
    return ap


def _dispatch(args):
    if args.command == "phantom":
        path = cmd_phantom(args.spec, args.out, args.size, args.n_materials)
        print(path)
        return EXIT_OK
    if args.command == "simulate":
        cfg = build_config(args.preset, args.config, args.solver, args.seed, args.set)
        geom_cfg = {k: v for k, v in (("n_views", args.n_views), ("n_det", args.n_det)) if v}
        d = cmd_simulate(args.phantom, args.table, geom_cfg, cfg, args.out,
                         save_y=not args.no_photon_field)
        print(d)
        return EXIT_OK
    if args.command == "reconstruct":
        cfg = build_config(args.preset, args.config, args.solver, args.seed, args.set)
        return cmd_reconstruct(args.measurement, args.table, cfg, args.out,
                               render=not args.no_render)
    if args.command == "evaluate":
        m = cmd_evaluate(args.recon, args.truth, args.out, args.table, not args.no_reinit)
        print(f"accuracy = {m.accuracy!r}")
        print(f"rel_l2 = {m.rel_l2!r}")
        return EXIT_OK
    if args.command == "render":
        for p in cmd_render(args.grid, args.out, args.format):
            print(p)
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with _thread_limit(args.threads), np.errstate(over="ignore", under="ignore"):
            return _dispatch(args)
    except (ParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"polyct: error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConvergenceError as exc:
        print(f"polyct: not converged: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (NumericalError, FloatingPointError) as exc:
        print(f"polyct: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
