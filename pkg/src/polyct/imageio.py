"""File formats: CSV grids, 16-bit PNG / plain PGM, sinogram heatmaps, measurement sets.

CSV grids start with one comment line ``# dims=H,W[,N] key=value ...``
followed by the values in row-major order, ``dims[-1]`` per line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import FanBeamGeometry, MaterialImage, ParseError
from .physics import MeasurementSet

__all__ = [
    "write_grid_csv",
    "read_grid_csv",
    "save_material_image",
    "load_material_image",
    "material_names_of",
    "write_png16",
    "write_pgm",
    "read_png16",
    "read_pgm",
    "render_heatmap",
    "save_measurement",
    "load_measurement",
    "geometry_to_meta",
    "geometry_from_meta",
]


# --------------------------------------------------------------------------
# CSV grids
# --------------------------------------------------------------------------


def write_grid_csv(path, arr, **meta) -> None:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim < 1:
        raise ValueError("grid must have at least one dimension")
    head = "# dims=" + ",".join(str(d) for d in arr.shape)
    for k, v in meta.items():
        head += f" {k}={v!r}" if isinstance(v, float) else f" {k}={v}"
    rows = arr.reshape(-1, arr.shape[-1])
    with open(path, "w") as fh:
        fh.write(head + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _parse_header(path, line):
    if not line.startswith("#"):
        raise ParseError("missing '# dims=...' header", path, 1)
    meta = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise ParseError(f"bad header token {tok!r}", path, 1)
        k, v = tok.split("=", 1)
        meta[k] = v
    if "dims" not in meta:
        raise ParseError("header lacks dims", path, 1)
    try:
        dims = tuple(int(d) for d in meta.pop("dims").split(","))
    except ValueError:
        raise ParseError("dims must be integers", path, 1) from None
    if not dims or min(dims) <= 0:
        raise ParseError("dims must be positive", path, 1)
    return dims, meta


def read_grid_csv(path):
    """Returns (array, meta) where meta holds the extra header fields as strings."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty grid file", path)
    dims, meta = _parse_header(path, lines[0])
    width = dims[-1]
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"expected {width} values, got {len(parts)}", path, lineno)
        try:
            values.append([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
    arr = np.array(values, dtype=float)
    if arr.size != int(np.prod(dims)):
        raise ParseError(f"expected {int(np.prod(dims))} values, got {arr.size}", path)
    return arr.reshape(dims), meta


def save_material_image(w: MaterialImage, path, materials=()) -> None:
    meta = {"pixel_size": float(w.pixel_size)}
    if materials:
        meta["materials"] = ",".join(materials)
    write_grid_csv(path, w.data, **meta)


def material_names_of(path) -> tuple:
    """Material names recorded in a grid header, empty when absent."""
    with open(path) as fh:
        _, meta = _parse_header(path, fh.readline())
    return tuple(meta["materials"].split(",")) if "materials" in meta else ()


def load_material_image(path) -> MaterialImage:
    arr, meta = read_grid_csv(path)
    if arr.ndim != 3:
        raise ParseError("material image must have dims H,W,N", path, 1)
    try:
        h = float(meta.get("pixel_size", 2.0 / max(arr.shape[:2])))
    except ValueError:
        raise ParseError("bad pixel_size", path, 1) from None
    feasible = bool(np.all(arr >= -1e-9) and np.all(np.abs(arr.sum(-1) - 1) <= 1e-9))
    return MaterialImage(arr, h, feasible=feasible)


# --------------------------------------------------------------------------
# grayscale images
# --------------------------------------------------------------------------


def _to_u16(img):
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    return np.rint(img * 65535.0).astype(np.uint16)


def write_png16(path, img) -> None:
    """16-bit grayscale PNG of a 2-D array, values clamped to [0, 1]."""
    from PIL import Image

    im = Image.fromarray(_to_u16(img))
    im.save(path, format="PNG")


def read_png16(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im, dtype=np.uint16).astype(float) / 65535.0


def write_pgm(path, img) -> None:
    """Plain (ASCII) PGM with maxval 65535."""
    u = _to_u16(img)
    with open(path, "w") as fh:
        fh.write(f"P2\n{u.shape[1]} {u.shape[0]}\n65535\n")
        for row in u:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path) as fh:
        toks = [t for line in fh for t in line.split("#", 1)[0].split()]
    if not toks or toks[0] != "P2":
        raise ParseError("not a plain PGM file", path, 1)
    wdt, hgt, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    vals = np.array([int(t) for t in toks[4:]], dtype=float)
    if vals.size != wdt * hgt:
        raise ParseError("PGM size mismatch", path)
    return vals.reshape(hgt, wdt) / maxval


# --------------------------------------------------------------------------
# heatmaps
# --------------------------------------------------------------------------

# blue -> cyan -> yellow -> red
_CMAP = np.array([[0.0, 0.0, 0.5], [0.0, 0.6, 1.0], [1.0, 1.0, 0.0], [0.8, 0.0, 0.0]])


def _colormap(t):
    t = np.clip(t, 0.0, 1.0) * (len(_CMAP) - 1)
    i = np.minimum(t.astype(int), len(_CMAP) - 2)
    frac = (t - i)[..., None]
    return (_CMAP[i] * (1 - frac) + _CMAP[i + 1] * frac)


def _fmt_value(v):
    return f"{v:.4g}"


def render_heatmap(path, data, scale: int = 3, bar_width: int = 16) -> None:
    """RGB PNG of a 2-D array with a colour bar annotated with min and max."""
    from PIL import Image, ImageDraw, ImageFont

    data = np.asarray(data, dtype=float)
    lo, hi = float(np.min(data)), float(np.max(data))
    span = hi - lo if hi > lo else 1.0
    rgb = _colormap((data - lo) / span)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    hgt, wdt = rgb.shape[:2]
    font = ImageFont.load_default()
    label_w = 60
    canvas = np.ones((hgt, wdt + bar_width + label_w + 8, 3))
    canvas[:, :wdt] = rgb
    ramp = np.linspace(1.0, 0.0, hgt)[:, None]
    canvas[:, wdt + 4:wdt + 4 + bar_width] = _colormap(np.repeat(ramp, bar_width, axis=1))
    im = Image.fromarray(np.rint(canvas * 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    x = wdt + bar_width + 6
    draw.text((x, 0), _fmt_value(hi), fill=(0, 0, 0), font=font)
    draw.text((x, max(0, hgt - 12)), _fmt_value(lo), fill=(0, 0, 0), font=font)
    im.save(path, format="PNG")


# --------------------------------------------------------------------------
# measurement sets
# --------------------------------------------------------------------------

_GEOM_KEYS = ("n_views", "n_det", "source_radius", "detector_radius", "det_spacing",
              "height", "width", "pixel_size")


def geometry_to_meta(geom: FanBeamGeometry) -> dict:
    meta = {k: getattr(geom, k) for k in _GEOM_KEYS}
    meta["angles"] = ",".join(repr(float(a)) for a in geom.angles)
    return meta


def geometry_from_meta(meta: dict) -> FanBeamGeometry:
    n = int(meta["n_views"])
    if "angles" in meta:
        angles = np.array([float(a) for a in str(meta["angles"]).split(",")])
    else:
        angles = 2 * np.pi * np.arange(n) / n
    return FanBeamGeometry(
        n_views=n, n_det=int(meta["n_det"]), source_radius=float(meta["source_radius"]),
        detector_radius=float(meta["detector_radius"]), det_spacing=float(meta["det_spacing"]),
        angles=angles, height=int(meta["height"]), width=int(meta["width"]),
        pixel_size=float(meta["pixel_size"]))


def _write_meta(path, items):
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n")


def _read_meta(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", path, lineno)
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def save_measurement(ms: MeasurementSet, directory, geom: FanBeamGeometry | None = None,
                     materials=(), save_y=True) -> Path:
    """Write ``f.csv``, optional ``y_true_<e>.csv`` per energy bin and ``meta.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_grid_csv(d / "f.csv", ms.f)
    n_e = 0
    if save_y and ms.y_true is not None:
        n_e = ms.y_true.shape[0]
        for e in range(n_e):
            write_grid_csv(d / f"y_true_{e}.csv", ms.y_true[e])
    meta = {"sigma": float(ms.sigma), "i_bar": float(ms.i_bar),
            "seed": "none" if ms.seed is None else int(ms.seed),
            "geometry_key": ms.geometry_key or "none", "n_energy_files": n_e}
    if materials:
        meta["materials"] = ",".join(materials)
    if geom is not None:
        meta.update(geometry_to_meta(geom))
    _write_meta(d / "meta.txt", meta)
    return d


def load_measurement(directory):
    """Returns (MeasurementSet, meta dict of strings)."""
    d = Path(directory)
    meta_path = d / "meta.txt"
    if not meta_path.exists():
        raise ParseError("missing meta.txt", meta_path)
    meta = _read_meta(meta_path)
    f, _ = read_grid_csv(d / "f.csv")
    if f.ndim != 2:
        raise ParseError("f must be a 2-D grid", d / "f.csv", 1)
    y = None
    n_e = int(meta.get("n_energy_files", 0))
    if n_e:
        y = np.stack([read_grid_csv(d / f"y_true_{e}.csv")[0] for e in range(n_e)])
    try:
        sigma = float(meta["sigma"])
        i_bar = float(meta["i_bar"])
    except (KeyError, ValueError):
        raise ParseError("meta.txt needs numeric sigma and i_bar", meta_path) from None
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    key = None if meta.get("geometry_key", "none") == "none" else meta["geometry_key"]
    return MeasurementSet(f, sigma, i_bar, y, seed, key), meta
