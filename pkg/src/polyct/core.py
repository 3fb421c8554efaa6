"""Domain types, energy discretization, data ingestion and configuration.

Everything here is plain data: no reconstruction algorithms. Arrays held by
the frozen dataclasses are marked read-only on construction so values can be
shared freely between solvers.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DATA_DIR = Path(__file__).parent / "data"

SIMPLEX_TOL = 1e-9


class ParseError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(ArithmeticError):
    """A numerical kernel produced an unusable result."""


class ConvergenceError(NumericalError):
    """An iterative kernel hit its iteration cap; ``residual`` is the last one."""

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# energy grid and spectrum
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyGrid:
    """Quadrature nodes and weights (keV) on ``[e_min, e_max]``."""

    e_min: float
    e_max: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if not self.e_min < self.e_max:
            raise ValueError("e_min must be smaller than e_max")
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("energy nodes must be strictly increasing")
        if nodes[0] < self.e_min or nodes[-1] > self.e_max:
            raise ValueError("energy nodes must lie inside [e_min, e_max]")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        span = self.e_max - self.e_min
        if abs(weights.sum() - span) > 1e-9 * span:
            raise ValueError("quadrature weights must sum to e_max - e_min")

    @property
    def size(self) -> int:
        return self.nodes.size

    @classmethod
    def midpoint(cls, e_min: float, e_max: float, n: int) -> "EnergyGrid":
        edges = np.linspace(e_min, e_max, n + 1)
        return cls(e_min, e_max, 0.5 * (edges[1:] + edges[:-1]), np.diff(edges))


def default_energy_grid() -> EnergyGrid:
    """Seven equal bins on [20, 120] keV, nodes at the bin midpoints."""
    return EnergyGrid.midpoint(20.0, 120.0, 7)


def builtin_spectrum(grid_or_energies) -> np.ndarray:
    """Relative source intensity profile ``i0(E)`` normalised to 1 at 69 keV.

    Gaussian rise up to 69 keV, then a cosine roll-off at half height, so the
    profile jumps from 1 to 1/2 at the peak.
    """
    e = np.asarray(getattr(grid_or_energies, "nodes", grid_or_energies), dtype=float)
    if np.any(e < 20.0) or np.any(e > 120.0):
        raise ValueError("built-in spectrum is only defined on [20, 120] keV")
    return _spectrum_formula(e)


def _spectrum_formula(e: np.ndarray) -> np.ndarray:
    low = e * np.exp(-((e - 69.0) ** 2) / (2 * 22.0**2)) / 69.0
    high = e * np.cos((e - 69.0) / (130.0 - 69.0) * np.pi / 2) / (2 * 69.0)
    return np.where(e <= 69.0, low, high)


# --------------------------------------------------------------------------
# attenuation tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AttenuationTable:
    """Per-material attenuation ``g`` (N_mat x N_E, 1/length) and spectrum ``i0``."""

    energy: EnergyGrid
    g: np.ndarray
    i0: np.ndarray
    material_names: tuple[str, ...]

    def __post_init__(self):
        g = _frozen(self.g)
        i0 = _frozen(self.i0)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "i0", i0)
        object.__setattr__(self, "material_names", tuple(self.material_names))
        if g.ndim != 2 or g.shape[1] != self.energy.size:
            raise ValueError("g must have shape (n_materials, n_energies)")
        if len(self.material_names) != g.shape[0]:
            raise ValueError("one name per material row is required")
        if i0.shape != (self.energy.size,):
            raise ValueError("i0 must have one entry per energy node")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("attenuation coefficients must be finite and nonnegative")
        if not np.all(np.isfinite(i0)) or np.any(i0 < 0):
            raise ValueError("source spectrum must be finite and nonnegative")
        if g.shape[0] > 1:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("attenuation rows must be linearly independent")
            smin = np.linalg.svd(g / norms, compute_uv=False)[-1]
            if g.shape[0] > g.shape[1] or smin <= 1e-10:
                raise ValueError("attenuation rows must be linearly independent")

    @property
    def n_materials(self) -> int:
        return self.g.shape[0]

    def subset(self, indices: Sequence[int]) -> "AttenuationTable":
        idx = list(indices)
        return AttenuationTable(
            self.energy, self.g[idx], self.i0, tuple(self.material_names[i] for i in idx)
        )

    def with_spectrum(self, i0) -> "AttenuationTable":
        return dataclasses.replace(self, i0=i0)

    def gram(self, i_bar: float = 1.0) -> np.ndarray:
        """``sum_e dE_e * i_bar * i0_e * g_e g_e^T`` (N_mat x N_mat)."""
        wts = self.energy.weights * i_bar * self.i0
        return (self.g * wts) @ self.g.T


def _read_csv_rows(path):
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    rows = []
    header = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = (lineno, cells)
            continue
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise ParseError(f"non-numeric value in row {cells!r}", path, lineno) from None
        if len(values) != len(header[1]):
            raise ParseError(
                f"expected {len(header[1])} columns, found {len(values)}", path, lineno
            )
        rows.append((lineno, values))
    if header is None:
        raise ParseError("missing header", path)
    return header, rows


def _check_energies(path, rows):
    prev = -math.inf
    for lineno, values in rows:
        e = values[0]
        if not e > prev:
            raise ParseError("energies must be strictly increasing", path, lineno)
        if e <= 0:
            raise ParseError("energies must be positive", path, lineno)
        prev = e


def _loglog_interp(x, xp, fp):
    """Linear interpolation of log(f) against log(E); exact zeros stay zero."""
    fp = np.asarray(fp, dtype=float)
    if np.all(fp > 0):
        return np.exp(np.interp(np.log(x), np.log(xp), np.log(fp)))
    if np.all(fp == 0):
        return np.zeros_like(np.asarray(x, dtype=float))
    # mixed zero/positive columns fall back to linear interpolation
    return np.interp(np.log(x), np.log(xp), fp)


def load_attenuation_csv(
    path, grid: EnergyGrid | None = None, i0=None, materials: Sequence[str] | None = None
) -> AttenuationTable:
    """Read ``energy_keV,<mat1>,...`` and resample onto ``grid`` (log-log)."""
    grid = grid or default_energy_grid()
    (hline, header), rows = _read_csv_rows(path)
    if header[0] != "energy_keV" or len(header) < 2:
        raise ParseError("header must read energy_keV,<material>,...", path, hline)
    if len(rows) < 2:
        raise ParseError("need at least two energy rows", path)
    _check_energies(path, rows)
    data = np.array([v for _, v in rows])
    for lineno, values in rows:
        if any(v < 0 or not math.isfinite(v) for v in values[1:]):
            raise ParseError("attenuation values must be finite and nonnegative", path, lineno)
    energies = data[:, 0]
    names = header[1:]
    if materials is not None:
        missing = [m for m in materials if m not in names]
        if missing:
            raise ParseError(f"unknown material(s) {missing}", path, hline)
        cols = [names.index(m) for m in materials]
        names = list(materials)
    else:
        cols = list(range(len(names)))
    g = np.array([_loglog_interp(grid.nodes, energies, data[:, 1 + c]) for c in cols])
    spectrum = builtin_spectrum(grid) if i0 is None else np.asarray(i0, dtype=float)
    return AttenuationTable(grid, g, spectrum, tuple(names))


def write_attenuation_csv(table: AttenuationTable, path) -> None:
    with open(path, "w") as fh:
        fh.write("energy_keV," + ",".join(table.material_names) + "\n")
        for k, e in enumerate(table.energy.nodes):
            fh.write(repr(float(e)) + "," + ",".join(repr(float(v)) for v in table.g[:, k]) + "\n")


def load_spectrum_csv(path, grid: EnergyGrid | None = None) -> np.ndarray:
    """Read ``energy_keV,i0`` and interpolate linearly onto the grid nodes."""
    grid = grid or default_energy_grid()
    (hline, header), rows = _read_csv_rows(path)
    if header != ["energy_keV", "i0"]:
        raise ParseError("header must read energy_keV,i0", path, hline)
    _check_energies(path, rows)
    data = np.array([v for _, v in rows])
    if np.any(data[:, 1] < 0):
        raise ParseError("spectrum values must be nonnegative", path)
    return np.interp(grid.nodes, data[:, 0], data[:, 1])


def write_spectrum_csv(energies, i0, path) -> None:
    with open(path, "w") as fh:
        fh.write("energy_keV,i0\n")
        for e, v in zip(energies, i0):
            fh.write(f"{float(e)!r},{float(v)!r}\n")


def bundled_table(n_materials: int = 5, grid: EnergyGrid | None = None) -> AttenuationTable:
    """The shipped table (air, soft tissue, bone, iodine-blood, titanium, soft tissue b)."""
    table = load_attenuation_csv(DATA_DIR / "attenuation.csv", grid)
    return table.subset(range(n_materials))


# --------------------------------------------------------------------------
# material images and phantoms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MaterialImage:
    """Material fractions on an H x W grid, ``data[i, j, m]``.

    Row 0 is the top of the image (largest y); the grid is centred on the
    origin with square pixels of side ``pixel_size``.
    """

    data: np.ndarray
    pixel_size: float
    feasible: bool = False

    def __post_init__(self):
        arr = _frozen(self.data)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3:
            raise ValueError("material image data must be H x W x N_mat")
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")
        if self.feasible and not in_simplex(arr):
            raise ValueError("image flagged feasible has pixels outside the simplex")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_materials(self) -> int:
        return self.data.shape[2]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.data, axis=-1)

    @classmethod
    def uniform(cls, height: int, width: int, n_materials: int, pixel_size: float):
        data = np.full((height, width, n_materials), 1.0 / n_materials)
        return cls(data, pixel_size, feasible=True)

    @classmethod
    def from_labels(cls, labels, n_materials: int, pixel_size: float):
        labels = np.asarray(labels)
        data = np.zeros(labels.shape + (n_materials,))
        np.put_along_axis(data, labels[..., None], 1.0, axis=-1)
        return cls(data, pixel_size, feasible=True)


def in_simplex(w, tol: float = SIMPLEX_TOL) -> bool:
    w = np.asarray(w)
    return bool(np.all(w >= -tol) and np.all(np.abs(w.sum(axis=-1) - 1.0) <= tol))


def pixel_centers(height: int, width: int, pixel_size: float):
    """Coordinates (x, y) of pixel centres, each of shape (H, W)."""
    x = (np.arange(width) - (width - 1) / 2) * pixel_size
    y = ((height - 1) / 2 - np.arange(height)) * pixel_size
    return np.meshgrid(x, y)


def load_phantom_spec(
    path, height: int = 64, width: int = 64, n_materials: int | None = None
) -> MaterialImage:
    """Rasterise a ``background``/``disk`` phantom description on [-1, 1]^2.

    Material ids are 1-based column indices into the attenuation table. Later
    primitives overwrite earlier ones; a pixel belongs to a disk when its
    centre does.
    """
    path = Path(path)
    pixel_size = 2.0 / max(height, width)
    xs, ys = pixel_centers(height, width, pixel_size)
    labels = None
    ops = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0]
            try:
                if kind == "background":
                    if len(parts) != 2 or labels is not None:
                        raise ParseError("background takes one id and must come first", path, lineno)
                    labels = int(parts[1])
                    ops.append((lineno, None, labels))
                elif kind == "disk":
                    if len(parts) != 5:
                        raise ParseError("disk needs cx cy r material_id", path, lineno)
                    if labels is None:
                        raise ParseError("first primitive must be background", path, lineno)
                    cx, cy, r = (float(p) for p in parts[1:4])
                    mat = int(parts[4])
                    if r <= 0 or abs(cx) > 1 or abs(cy) > 1:
                        raise ParseError("disk centre must lie in [-1,1]^2 with r > 0", path, lineno)
                    ops.append((lineno, (cx, cy, r), mat))
                else:
                    raise ParseError(f"unknown primitive {kind!r}", path, lineno)
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"malformed numbers in {line!r}", path, lineno) from None
    if not ops:
        raise ParseError("empty phantom description", path)
    n_mat = n_materials or max(mat for _, _, mat in ops)
    grid = np.empty((height, width), dtype=int)
    for lineno, disk, mat in ops:
        if not 1 <= mat <= n_mat:
            raise ParseError(f"unknown material id {mat}", path, lineno)
        if disk is None:
            grid[:] = mat - 1
        else:
            cx, cy, r = disk
            grid[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = mat - 1
    return MaterialImage.from_labels(grid, n_mat, pixel_size)


def bundled_phantom(name: str = "phantom", size: int = 64, n_materials: int | None = None):
    return load_phantom_spec(DATA_DIR / f"{name}.txt", size, size, n_materials)


# --------------------------------------------------------------------------
# fan-beam geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FanBeamGeometry:
    """Point source on a circle, flat detector opposite it.

    ``height``/``width``/``pixel_size`` describe the image grid the rays are
    traced through; ``detector_radius`` is the distance from the rotation
    centre to the detector line.
    """

    n_views: int
    n_det: int
    source_radius: float
    detector_radius: float
    det_spacing: float
    angles: np.ndarray
    height: int = 64
    width: int = 64
    pixel_size: float = 2.0 / 64

    def __post_init__(self):
        angles = _frozen(self.angles)
        object.__setattr__(self, "angles", angles)
        if angles.shape != (self.n_views,):
            raise ValueError("need one angle per view")
        if np.any(angles < 0) or np.any(angles >= 2 * np.pi):
            raise ValueError("angles must lie in [0, 2*pi)")
        if self.source_radius <= self.circumradius:
            raise ValueError("source must lie outside the circumscribed circle of the image")
        if self.detector_radius <= 0 or self.det_spacing <= 0:
            raise ValueError("detector radius and spacing must be positive")

    @property
    def circumradius(self) -> float:
        return 0.5 * self.pixel_size * math.hypot(self.height, self.width)

    @property
    def diam_bound(self) -> float:
        return 2.0 * self.circumradius

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_det)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def default(
        cls,
        size: int = 64,
        n_views: int = 90,
        n_det: int = 95,
        source_radius: float = 3.0,
        detector_radius: float = 3.0,
        det_spacing: float | None = None,
        domain_half_width: float = 1.0,
    ) -> "FanBeamGeometry":
        pixel_size = 2.0 * domain_half_width / size
        rc = domain_half_width * math.sqrt(2.0)
        if det_spacing is None:
            # fan covers the circumscribed circle with a 2 % margin
            half_fan = math.asin(min(1.0, rc / source_radius))
            det_spacing = 2.04 * (source_radius + detector_radius) * math.tan(half_fan) / n_det
        angles = 2 * np.pi * np.arange(n_views) / n_views
        return cls(n_views, n_det, source_radius, detector_radius, det_spacing, angles,
                   size, size, pixel_size)

    def key(self) -> str:
        """Stable hash identifying the geometry (for measurement sidecars)."""
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.n_views, self.n_det, self.source_radius, self.detector_radius,
                       self.det_spacing, self.height, self.width, self.pixel_size)).encode())
        h.update(np.ascontiguousarray(self.angles).tobytes())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# reconstruction configuration
# --------------------------------------------------------------------------


@dataclass
class EMSettings:
    outer_iters: int = 23000
    reinit_period: int = 11000
    omega: float | str = 0.1
    eta: float = 0.1
    epsilon: float = 1.0
    inner_iters: int = 1000
    rof_tau: float = 0.02
    rof_sigma: float = 6.25
    rof_theta: float = 0.1
    safeguard: bool = True


@dataclass
class PDSettings:
    outer_iters: int = 50
    inner_iters: int = 500
    reinit_period: int = 15
    rho1: float | None = 1 / 20
    rho2: float | None = 1 / 100
    tau: float | None = 1 / 200
    theta: float = 1.0
    delta: float = 1000.0
    step_rule: str = "curvature"
    step_scale: float = 0.05


@dataclass
class ADMMSettings:
    iters: int = 8000
    reinit_period: int = 150
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    t1: float = 1e9
    t2: float = 1e13
    gmres_restart: int = 20
    gmres_tol: float = 1e-8
    gmres_maxiter: int = 200
    rescale_multipliers: bool = True
    reset_multipliers_on_reinit: bool = True


@dataclass
class ReconConfig:
    alpha: float = 1e6
    beta: float = 0.0
    sigma: float = 2e-3
    i_bar: float = 3e11
    solver: str = "em"
    seed: int = 0
    tol: float = 1e-6
    em: EMSettings = field(default_factory=EMSettings)
    pd: PDSettings = field(default_factory=PDSettings)
    admm: ADMMSettings = field(default_factory=ADMMSettings)

    def validate(self) -> "ReconConfig":
        if self.alpha <= 0 or self.beta < 0 or self.sigma <= 0 or self.i_bar <= 0:
            raise ValueError("alpha, sigma, i_bar must be positive and beta nonnegative")
        if self.solver not in ("em", "pd", "admm"):
            raise ValueError(f"unknown solver {self.solver!r}")
        om = self.em.omega
        if om != "auto" and not (isinstance(om, (int, float)) and 0 < om < 1):
            raise ValueError("omega must lie in (0, 1) or be 'auto'")
        if not 0 < self.em.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.em.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.pd.step_rule not in ("fixed", "curvature"):
            raise ValueError("pd.step_rule must be 'fixed' or 'curvature'")
        if self.pd.step_scale <= 0:
            raise ValueError("pd.step_scale must be positive")
        for name, val in [("admm.mu1", self.admm.mu1), ("admm.mu2", self.admm.mu2),
                          ("admm.mu3", self.admm.mu3)]:
            if val <= 0:
                raise ValueError(f"{name} must be positive")
        return self

    # flat key = value representation with dotted block prefixes
    def to_items(self) -> list[tuple[str, object]]:
        items = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                items += [(f"{f.name}.{g.name}", getattr(val, g.name)) for g in dataclasses.fields(val)]
            else:
                items.append((f.name, val))
        return items

    def set(self, key: str, raw) -> None:
        target, name = self, key
        if "." in key:
            block, name = key.split(".", 1)
            if block not in ("em", "pd", "admm"):
                raise KeyError(key)
            target = getattr(self, block)
        names = {f.name: f for f in dataclasses.fields(target)}
        if name not in names or dataclasses.is_dataclass(getattr(target, name)):
            raise KeyError(key)
        setattr(target, name, _coerce(getattr(target, name), raw, names[name].type))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for key, val in self.to_items():
                fh.write(f"{key} = {'none' if val is None else val}\n")


def _coerce(current, raw, annotation):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    ann = str(annotation)
    if text.lower() == "none" and "None" in ann:
        return None
    if text == "auto" and "str" in ann:
        return "auto"
    if ann.startswith("bool") or isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if ann.startswith("int"):
        return int(float(text)) if "e" in text.lower() else int(text)
    if ann.startswith("str"):
        return text
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def load_config(path, base: ReconConfig | None = None) -> ReconConfig:
    """Parse a flat ``key = value`` file on top of ``base`` (defaults otherwise)."""
    cfg = base if base is not None else ReconConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", path, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except KeyError:
                raise ParseError(f"unknown key {key!r}", path, lineno) from None
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return cfg


# noise settings (a) low/low, (b) high Poisson, (c) high Poisson + high Gaussian
PRESETS = {
    "a": dict(sigma=2e-3, i_bar=3e11, alpha=1e6,
              em=dict(outer_iters=23000, reinit_period=11000),
              pd=dict(outer_iters=50, reinit_period=15),
              admm=dict(iters=8000, reinit_period=150, t1=1e9, t2=1e13)),
    "b": dict(sigma=2e-6, i_bar=1500.0, alpha=0.1,
              em=dict(outer_iters=17000, reinit_period=6000),
              pd=dict(outer_iters=32, reinit_period=15),
              admm=dict(iters=1500, reinit_period=350, t1=1e5, t2=1e13)),
    "c": dict(sigma=1e2, i_bar=1500.0, alpha=0.07,
              em=dict(outer_iters=23000, reinit_period=10000),
              pd=dict(outer_iters=55, reinit_period=5),
              admm=dict(iters=1600, reinit_period=350, t1=1e1, t2=1e8)),
}


def preset_config(name: str, **overrides) -> ReconConfig:
    """Config for noise case ``a``, ``b`` or ``c``; keyword overrides use dotted keys as ``em__inner_iters``."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    cfg = ReconConfig()
    for key, val in PRESETS[name].items():
        if isinstance(val, dict):
            block = getattr(cfg, key)
            for k, v in val.items():
                setattr(block, k, v)
        else:
            setattr(cfg, key, val)
    for key, val in overrides.items():
        cfg.set(key.replace("__", "."), val)
    return cfg
