"""Charge-shape mollifier and the doubly regularized interaction kernel.

Point ions are replaced by delocalized packets of a fixed radial C^2 shape
chi scaled to radius r, chi_r(x) = r^-d chi(x/r).  The packet shape enters
the dynamics twice: once when depositing charge and once when smoothing the
field, so the pair interaction is chi_r * K * chi_r with K the gradient of
the torus Green function.  Everything is sampled on one grid and kept
spectrally consistent with the field solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .torus_field import ScalarField, TorusGrid, VectorField, _spectral_tables

__all__ = [
    "MollifierSpec",
    "make_mollifier",
    "mollify_field",
    "regularized_pair_force",
    "profile_values",
    "sample_displacements",
]


def profile_values(t: np.ndarray) -> np.ndarray:
    """Radial bump (1 - t)^4 (1 + 4t) on t <= 1, zero outside.

    C^2 at the support edge, radial, cheap to sample; normalization is done
    numerically on the grid, so no closed-form constant is needed.
    """
    t = np.asarray(t, dtype=np.float64)
    inside = t < 1.0
    return np.where(inside, (1.0 - np.minimum(t, 1.0)) ** 4 * (1.0 + 4.0 * t), 0.0)


@dataclass
class MollifierSpec:
    """Sampled unit-mass charge shape chi_r on a grid.

    grid_samples carries the renormalized kernel values (cell sum times cell
    volume equals 1); fourier caches its transform with the quadrature
    weight folded in, so the zeroth coefficient is exactly the total mass.
    Immutable after construction; safe for concurrent reads.
    """

    r: float
    grid: TorusGrid
    grid_samples: np.ndarray
    profile: str = "wendland21"
    fourier: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.grid_samples = np.asarray(self.grid_samples, dtype=np.float64)
        if self.grid_samples.shape != self.grid.shape:
            raise ValueError("mollifier samples do not match grid shape")
        self.fourier = np.fft.rfftn(self.grid_samples) * self.grid.cell_volume

    @property
    def mass(self) -> float:
        return float(self.grid_samples.sum() * self.grid.cell_volume)


def make_mollifier(r: float, grid: TorusGrid) -> MollifierSpec:
    """Sample chi_r on the grid and renormalize it to unit mass.

    Requires 2h <= r <= 1/4: at least two cells across the support radius,
    and support comfortably inside the periodic box.
    """
    if r < 2.0 * grid.h:
        raise ValueError(
            f"mollifier radius {r} under-resolved: need r >= 2h = {2 * grid.h}")
    if r > 0.25:
        raise ValueError(f"mollifier radius {r} exceeds 1/4 of the box")
    coords = grid.signed_coordinates()
    mesh = np.meshgrid(*(coords,) * grid.d, indexing="ij", sparse=True)
    radius = np.sqrt(sum(c * c for c in mesh))
    values = profile_values(radius / r)
    values /= values.sum() * grid.cell_volume
    return MollifierSpec(r=float(r), grid=grid, grid_samples=values)


def mollify_field(f: ScalarField | VectorField, m: MollifierSpec):
    """Spectral convolution with chi_r; preserves the mean exactly.

    The zeroth Fourier coefficient of the renormalized kernel is 1, so
    constants pass through unchanged.
    """
    if f.grid != m.grid:
        raise ValueError("field and mollifier live on different grids")
    shape = f.grid.shape
    if isinstance(f, ScalarField):
        out = np.fft.irfftn(np.fft.rfftn(f.values) * m.fourier, s=shape)
        return ScalarField(f.grid, out, mean_zero=f.mean_zero)
    comps = np.empty_like(f.components)
    for a in range(f.grid.d):
        comps[a] = np.fft.irfftn(np.fft.rfftn(f.components[a]) * m.fourier, s=shape)
    return VectorField(f.grid, comps)


def regularized_pair_force(m: MollifierSpec, grid: TorusGrid) -> VectorField:
    """The interaction kernel chi_r * K * chi_r as a grid vector field.

    Built per mode as (2 pi i k) G(k) chi(k)^2 with G(k) = -(4 pi^2 |k|^2)^-1
    and G(0) = 0.  The kernel is odd (K odd, chi even), so its value at the
    origin vanishes and pairwise momentum exchange cancels exactly.
    """
    if m.grid != grid:
        raise ValueError("mollifier was sampled on a different grid")
    ks, sym = _spectral_tables(grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        green = np.where(sym != 0.0, 1.0 / sym, 0.0)  # G(k), zero at k = 0
    chi2 = m.fourier * m.fourier
    comps = np.empty((grid.d,) + grid.shape)
    for a in range(grid.d):
        comps[a] = np.fft.irfftn((2j * np.pi * ks[a]) * green * chi2, s=grid.shape)
    return VectorField(grid, comps)


def sample_displacements(m: MollifierSpec, count: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw displacements from the chi_r density by radial inverse transform.

    Used to realize chi_r * mu as a point cloud: adding one draw per atom
    moves each atom by at most r, which is how the transport bounds of the
    mollification lemmas are exercised empirically.
    """
    d = m.grid.d
    t = np.linspace(0.0, 1.0, 4097)
    pdf = profile_values(t) * t ** (d - 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]))])
    cdf /= cdf[-1]
    u = rng.random(count)
    radii = m.r * np.interp(u, cdf, t)
    if d == 2:
        theta = rng.random(count) * 2.0 * np.pi
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        z = 2.0 * rng.random(count) - 1.0
        phi = rng.random(count) * 2.0 * np.pi
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        dirs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    return radii[:, None] * dirs
