"""Pieces shared by the three solvers: traces, reinitialisation, start values."""

from __future__ import annotations

import numpy as np

from ..core import AttenuationTable, MaterialImage

TRACE_COLUMNS = {
    "em": ["iter", "total", "gauss", "kl", "tv", "multiwell", "A_eps", "C", "omega"],
    "pd": ["iter", "total", "gauss", "kl", "tv", "multiwell", "A_eps", "C", "omega",
           "dual_feas_max"],
    "admm": ["iter", "total", "gauss", "kl", "tv", "multiwell", "A_eps", "C", "omega",
             "res_X", "res_wtilde", "res_z", "mu1", "mu2", "mu3"],
}


class SolverTrace:
    """Per-iteration records with a fixed column set."""

    def __init__(self, solver: str):
        self.solver = solver
        self.columns = TRACE_COLUMNS[solver]
        self.rows: list[dict] = []
        self.status = "running"
        self.message = ""

    def append(self, **values):
        row = {c: values.get(c, float("nan")) for c in self.columns}
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def reinitialize(w, table: AttenuationTable) -> np.ndarray:
    """Snap every pixel to the material whose attenuation curve is closest.

    Closeness is the quadrature-weighted L2 distance between the effective
    curve ``sum_i w_i g_i`` and each ``g_j``; ties go to the lowest index.
    """
    data = w.data if isinstance(w, MaterialImage) else np.asarray(w, dtype=float)
    g = table.g
    dE = table.energy.weights
    geff = data @ g                                   # (..., N_E)
    diff = geff[..., None, :] - g                     # (..., N_mat, N_E)
    dist = (diff**2) @ dE
    j = np.argmin(dist, axis=-1)
    out = np.zeros_like(data)
    np.put_along_axis(out, j[..., None], 1.0, axis=-1)
    if isinstance(w, MaterialImage):
        return MaterialImage(out, w.pixel_size, feasible=True)
    return out


def uniform_start(geom, n_materials: int) -> np.ndarray:
    return np.full((geom.height, geom.width, n_materials), 1.0 / n_materials)


def relative_change(new, old) -> float:
    den = np.linalg.norm(old)
    return float(np.linalg.norm(new - old) / den) if den > 0 else float(np.linalg.norm(new))


def coerce_f(fm, f) -> np.ndarray:
    f = getattr(f, "f", f)
    f = np.asarray(f, dtype=float)
    if f.ndim == 2:
        f = fm.from_sinogram(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("measurements must be finite")
    return f
