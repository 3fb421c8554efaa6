"""Polyenergetic forward model and the mixed Poisson-Gaussian simulator.

Internally everything is ray-major: material projections are (n_rays, N_mat)
and energy-resolved quantities (n_rays, N_E). The public helpers return the
documented (N_E, n_views, n_det) and (n_views, n_det) layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttenuationTable, FanBeamGeometry, MaterialImage
from .kernels import (
    ObjectiveValue,
    gradient_op,
    kl_divergence,
    optimal_photon_field,
)
from .projector import get_projector

__all__ = [
    "ForwardModel",
    "MeasurementSet",
    "intensity",
    "total_intensity",
    "simulate_measurement",
    "objective",
    "photon_field",
    "kl_gradient",
]


def _pixels(w, geom):
    """(n_pixels,) or (n_pixels, N) view of an image, image stack or flat array."""
    data = w.data if isinstance(w, MaterialImage) else np.asarray(w, dtype=float)
    if data.ndim >= 2 and data.shape[:2] == (geom.height, geom.width):
        return data.reshape((geom.height * geom.width,) + data.shape[2:])
    return data


class ForwardModel:
    """Bundles projector, attenuation table and source strength.

    ``i_bar`` multiplies the table spectrum; ``weights`` are the energy
    quadrature weights dE.
    """

    def __init__(self, table: AttenuationTable, geom: FanBeamGeometry, i_bar: float = 1.0):
        self.table = table
        self.geom = geom
        self.i_bar = float(i_bar)
        self.proj = get_projector(geom)
        self.g = table.g                      # (N_mat, N_E)
        self.dE = table.energy.weights        # (N_E,)
        self.source = self.i_bar * table.i0   # (N_E,)
        with np.errstate(divide="ignore"):
            self.log_source = np.log(self.source)
        self.G = (self.g * (self.dE * self.source)) @ self.g.T

    @property
    def n_rays(self):
        return self.proj.n_rays

    @property
    def n_materials(self):
        return self.g.shape[0]

    @property
    def pixel_size(self):
        return self.geom.pixel_size

    # ray-major kernels
    def project(self, w) -> np.ndarray:
        return self.proj.forward_flat(_pixels(w, self.geom))

    def backproject(self, p) -> np.ndarray:
        return self.proj.back_flat(p)

    def intensity_from_proj(self, proj) -> np.ndarray:
        return np.exp(self.log_source - proj @ self.g)

    def intensity_flat(self, w) -> np.ndarray:
        return self.intensity_from_proj(self.project(w))

    def total(self, energy_field) -> np.ndarray:
        return energy_field @ self.dE

    def material_moment(self, energy_field) -> np.ndarray:
        """``sum_e dE_e field_e g_i(E_e)`` per ray and material, (n_rays, N_mat)."""
        return (energy_field * self.dE) @ self.g.T

    # layout conversion
    def to_energy_sinogram(self, flat) -> np.ndarray:
        g = self.geom
        return np.ascontiguousarray(flat.T).reshape(-1, g.n_views, g.n_det)

    def from_energy_sinogram(self, sino) -> np.ndarray:
        sino = np.asarray(sino, dtype=float)
        return sino.reshape(sino.shape[0], -1).T

    def to_sinogram(self, flat) -> np.ndarray:
        return np.asarray(flat).reshape(self.geom.n_views, self.geom.n_det)

    def from_sinogram(self, sino) -> np.ndarray:
        return np.asarray(sino, dtype=float).reshape(-1)

    def to_image(self, flat) -> np.ndarray:
        return np.asarray(flat).reshape(self.geom.height, self.geom.width, -1)

    # objective pieces
    def photon_field(self, I, f_flat, sigma):
        """Optimal y (n_rays, N_E) and Y (n_rays,) for intensities ``I``."""
        y, Y = optimal_photon_field(I.T, self.total(I), f_flat, sigma)
        return y.T, Y

    def data_terms(self, y, I, f_flat, sigma):
        gauss = 0.5 * np.sum((f_flat - self.total(y)) ** 2) / sigma**2
        kl = float(np.sum(kl_divergence(y, I) @ self.dE))
        return gauss, kl

    def kl_gradient(self, y, w) -> np.ndarray:
        """Gradient in w of ``sum_e dE KL(y, I(w))``: ``-D^T(sum_e dE (I - y) g)``."""
        I = self.intensity_flat(w)
        return -self.backproject(self.material_moment(I - y))

    def regularizers(self, w, boundary="neumann"):
        data = w.data if isinstance(w, MaterialImage) else np.asarray(w, dtype=float)
        h = self.pixel_size
        grad = gradient_op(data, boundary)
        tv = float(np.sqrt((grad**2).sum(axis=-1)).sum() * h)
        n = data.shape[-1]
        mw = float(-0.5 * np.sum((data - 1.0 / n) ** 2) * h * h)
        return tv, mw

    def objective(self, y, w, f_flat, sigma, alpha, beta, boundary="neumann", I=None):
        if I is None:
            I = self.intensity_flat(w)
        gauss, kl = self.data_terms(y, I, f_flat, sigma)
        tv, mw = self.regularizers(w, boundary)
        data = w.data if isinstance(w, MaterialImage) else np.asarray(w)
        feasible = bool(np.all(data >= -1e-9) and np.all(np.abs(data.sum(-1) - 1) <= 1e-9))
        total = gauss + kl + alpha * tv + beta * mw
        return ObjectiveValue(total if feasible else np.inf, gauss, kl, tv, mw, feasible)


def intensity(w: MaterialImage, table: AttenuationTable, geom: FanBeamGeometry,
              i_bar: float = 1.0) -> np.ndarray:
    """Energy-resolved intensity (N_E, n_views, n_det)."""
    fm = ForwardModel(table, geom, i_bar)
    return fm.to_energy_sinogram(fm.intensity_flat(w))


def total_intensity(w: MaterialImage, table: AttenuationTable, geom: FanBeamGeometry,
                    i_bar: float = 1.0) -> np.ndarray:
    """Energy-integrated intensity (n_views, n_det)."""
    fm = ForwardModel(table, geom, i_bar)
    return fm.to_sinogram(fm.total(fm.intensity_flat(w)))


def photon_field(w: MaterialImage, f, table, geom, sigma, i_bar: float = 1.0):
    """Optimal (y, Y) for fixed w in the public layouts."""
    fm = ForwardModel(table, geom, i_bar)
    y, Y = fm.photon_field(fm.intensity_flat(w), fm.from_sinogram(f), sigma)
    return fm.to_energy_sinogram(y), fm.to_sinogram(Y)


def kl_gradient(y, w, table, geom, i_bar: float = 1.0) -> np.ndarray:
    """Gradient of the KL data term in w for an energy sinogram ``y``, (H, W, N)."""
    fm = ForwardModel(table, geom, i_bar)
    flat = fm.kl_gradient(fm.from_energy_sinogram(y), _pixels(w, geom))
    return fm.to_image(flat)


def objective(y, w, f, table, geom, cfg, boundary="neumann") -> ObjectiveValue:
    """Full objective for an energy sinogram ``y`` and image ``w``."""
    fm = ForwardModel(table, geom, cfg.i_bar)
    return fm.objective(fm.from_energy_sinogram(y), w, fm.from_sinogram(f),
                        cfg.sigma, cfg.alpha, cfg.beta, boundary)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementSet:
    """Detector readouts ``f`` (n_views, n_det), optionally the true photon field."""

    f: np.ndarray
    sigma: float
    i_bar: float
    y_true: np.ndarray | None = None
    seed: int | None = None
    geometry_key: str | None = None

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if not np.all(np.isfinite(f)):
            raise ValueError("measurements must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        if self.y_true is not None:
            y = np.array(self.y_true, dtype=float)
            if np.any(y < 0):
                raise ValueError("photon field must be nonnegative")
            y.setflags(write=False)
            object.__setattr__(self, "y_true", y)


POISSON_GAUSS_SWITCH = 1e6


def _poisson_counts(rng, mean):
    """Poisson draws; above 1e6 a rounded normal approximation clamped at 0."""
    mean = np.asarray(mean, dtype=float)
    out = np.empty_like(mean)
    small = mean < POISSON_GAUSS_SWITCH
    out[small] = rng.poisson(mean[small])
    big = ~small
    mb = mean[big]
    out[big] = np.maximum(0.0, np.rint(mb + np.sqrt(mb) * rng.standard_normal(mb.size)))
    return out


def simulate_measurement(w: MaterialImage, table: AttenuationTable, geom: FanBeamGeometry,
                         sigma: float, i_bar: float, seed: int = 0,
                         poisson: bool = True) -> MeasurementSet:
    """Draw ``y ~ Poisson(dE I)/dE`` per bin and ``f = sum dE y + N(0, sigma^2)``.

    Deterministic in ``seed``; ``poisson=False`` uses the mean photon field.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    fm = ForwardModel(table, geom, i_bar)
    I = fm.intensity_flat(w)
    rng = np.random.Generator(np.random.Philox(seed))
    if poisson:
        y = _poisson_counts(rng, I * fm.dE) / fm.dE
    else:
        y = I
    f = fm.total(y)
    if sigma > 0:
        f = f + sigma * rng.standard_normal(f.shape)
    return MeasurementSet(fm.to_sinogram(f), float(sigma), float(i_bar),
                          fm.to_energy_sinogram(y), seed, geom.key())
