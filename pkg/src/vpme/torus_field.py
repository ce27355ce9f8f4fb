"""Electrostatic field solves on the periodic unit box.

The electron background follows a Maxwell-Boltzmann law, so the potential U
solves the nonlinear Poisson problem

    eps^2 Lap(U) = exp(U) - rho      on [0, 1)^d, d in {2, 3},

for an ion charge density rho with unit mass.  The potential splits into a
singular part Ubar solving the classical problem eps^2 Lap(Ubar) = 1 - rho
and a smoother correction Uhat = U - Ubar.  All differential operators here
are spectral (FFT), so the linear solve is exact on resolved Fourier modes
and the torus Green function never has to be tabulated in real space.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "FieldSolution",
    "SolverError",
    "laplacian_symbol",
    "apply_laplacian",
    "spectral_derivative",
    "solve_linear_poisson",
    "solve_full_potential",
    "gradient_field",
    "evaluate_field_at",
    "field_norm_report",
    "FieldNormReport",
    "save_field",
    "load_field",
    "write_field_csv",
]

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


class SolverError(RuntimeError):
    """Nonlinear field solve failed; carries the last residual seen."""

    def __init__(self, message: str, residual: float | None = None,
                 iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [0, 1)^d with n nodes per axis.

    n must be a power of two >= 16 so that spectral transforms stay cheap and
    the spacing h = 1/n is exact in binary floating point (n * h == 1).
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.d}")
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ValueError(
                f"cells per axis must be a power of two >= 16, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def axis_coordinates(self) -> np.ndarray:
        """Node coordinates 0, h, 2h, ... along one axis."""
        return np.arange(self.n) * self.h

    def signed_coordinates(self) -> np.ndarray:
        """Minimal-image signed coordinate of each node, in [-1/2, 1/2)."""
        c = self.axis_coordinates()
        return np.where(c < 0.5, c, c - 1.0)


def _as_values(values, grid: TorusGrid) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"values shape {arr.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    return arr


@dataclass
class ScalarField:
    """Real scalar samples on the nodes of a TorusGrid."""

    grid: TorusGrid
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        self.values = _as_values(self.values, self.grid)
        if self.mean_zero and abs(float(self.values.mean())) > 1e-12:
            raise ValueError("field tagged mean_zero has nonzero cell average")

    def mean(self) -> float:
        return float(self.values.mean())

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.mean_zero)


@dataclass
class VectorField:
    """d real component arrays on the nodes of a TorusGrid."""

    grid: TorusGrid
    components: np.ndarray  # shape (d, n, ..., n)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.float64)
        if comps.shape != (self.grid.d,) + self.grid.shape:
            raise ValueError(
                f"components shape {comps.shape} does not match grid of "
                f"dimension {self.grid.d}")
        if not np.all(np.isfinite(comps)):
            raise ValueError("field values must be finite")
        self.components = comps

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components ** 2, axis=0))


@functools.lru_cache(maxsize=32)
def _spectral_tables(grid: TorusGrid):
    """Integer wavenumbers and -4 pi^2 |k|^2 on the rfftn layout."""
    axes = [np.fft.fftfreq(grid.n, d=1.0) * grid.n for _ in range(grid.d - 1)]
    axes.append(np.arange(grid.n // 2 + 1, dtype=np.float64))
    ks = np.meshgrid(*axes, indexing="ij", sparse=True)
    k2 = sum(k * k for k in ks)
    sym = -4.0 * np.pi ** 2 * k2
    return tuple(ks), sym


def laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """Fourier symbol of the Laplacian, -4 pi^2 |k|^2, on the rfftn grid."""
    return _spectral_tables(grid)[1]


def apply_laplacian(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    sym = laplacian_symbol(grid)
    return np.fft.irfftn(sym * np.fft.rfftn(values), s=grid.shape)


def spectral_derivative(grid: TorusGrid, values: np.ndarray, axis: int) -> np.ndarray:
    ks, _ = _spectral_tables(grid)
    return np.fft.irfftn((2j * np.pi * ks[axis]) * np.fft.rfftn(values),
                         s=grid.shape)


@dataclass
class FieldSolution:
    """Converged solve of eps^2 Lap(U) = exp(U) - rho with its splitting.

    u_total = u_bar + u_hat cellwise; e_field = -grad(u_total) spectrally.
    residual_history records the accepted Newton residuals, one entry per
    accepted step, including continuation stages.  source_time tags the
    particle time of the density the solve was built from (None for
    standalone solves).
    """

    u_bar: ScalarField
    u_hat: ScalarField
    u_total: ScalarField
    e_field: VectorField
    epsilon: float
    residual_max: float
    newton_iters: int
    residual_history: tuple = ()
    source_time: float | None = None

    def __post_init__(self):
        split = self.u_bar.values + self.u_hat.values
        gap = float(np.max(np.abs(self.u_total.values - split)))
        if gap > 1e-12:
            raise ValueError(f"u_total differs from u_bar + u_hat by {gap:.3e}")
        neutrality = float(np.exp(self.u_total.values).mean())
        if abs(neutrality - 1.0) > 1e-8:
            raise ValueError(
                f"<exp(U)> = {neutrality!r} violates neutrality within 1e-8")

    @property
    def neutrality(self) -> float:
        return float(np.exp(self.u_total.values).mean())


def _validate_density(grid: TorusGrid, rho: ScalarField, epsilon: float,
                      mass_tol: float = 1e-9) -> np.ndarray:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if rho.grid != grid:
        raise ValueError("density grid does not match target grid")
    vals = rho.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("density contains NaN or Inf")
    mean = float(vals.mean())
    if abs(mean - 1.0) > mass_tol:
        raise ValueError(
            f"density must have unit cell average (total mass 1); got {mean!r}. "
            "The torus Poisson problem is unsolvable otherwise.")
    return vals


def solve_linear_poisson(grid: TorusGrid, rho: ScalarField,
                         epsilon: float) -> ScalarField:
    """Mean-zero Ubar with eps^2 Lap(Ubar) = 1 - rho, by Fourier inversion."""
    vals = _validate_density(grid, rho, epsilon)
    sym = laplacian_symbol(grid)
    rhs_hat = np.fft.rfftn(1.0 - vals)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_hat = np.where(sym != 0.0, rhs_hat / (epsilon ** 2 * sym), 0.0)
    u = np.fft.irfftn(u_hat, s=grid.shape)
    u -= u.mean()
    return ScalarField(grid, u, mean_zero=True)


def _pcg(grid: TorusGrid, eps2: float, weight: np.ndarray, b: np.ndarray,
         rtol: float = 1e-8, max_iter: int = 400) -> np.ndarray:
    """Solve (-eps^2 Lap + diag(weight)) x = b, weight > 0, by CG.

    Preconditioned with the spectral inverse of (-eps^2 Lap + mean(weight)),
    which captures the full stiffness range of the operator, so iteration
    counts stay small and eps-independent.
    """
    sym = laplacian_symbol(grid)
    wbar = float(weight.mean())
    denom = wbar - eps2 * sym  # -eps^2 * sym >= 0, so denom >= wbar > 0

    def apply_a(v):
        return -eps2 * np.fft.irfftn(sym * np.fft.rfftn(v), s=grid.shape) + weight * v

    def apply_minv(r):
        return np.fft.irfftn(np.fft.rfftn(r) / denom, s=grid.shape)

    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b.ravel()))
    if bnorm == 0.0:
        return x
    z = apply_minv(r)
    p = z.copy()
    rz = float(np.vdot(r.ravel(), z.ravel()).real)
    for _ in range(max_iter):
        ap = apply_a(p)
        alpha = rz / float(np.vdot(p.ravel(), ap.ravel()).real)
        x += alpha * p
        r -= alpha * ap
        if float(np.linalg.norm(r.ravel())) <= rtol * bnorm:
            break
        z = apply_minv(r)
        rz_new = float(np.vdot(r.ravel(), z.ravel()).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def _newton_stage(grid: TorusGrid, rho: np.ndarray, epsilon: float,
                  u0: np.ndarray, tol: float, max_iter: int):
    """Damped Newton on F(U) = eps^2 Lap(U) - exp(U) + rho.

    The Jacobian eps^2 Lap - diag(exp(U)) is negated to a SPD operator for
    CG.  Backtracking halves the step until the max-norm residual strictly
    decreases, so accepted residuals are monotone.
    """
    eps2 = epsilon ** 2
    u = u0
    res_f = eps2 * apply_laplacian(grid, u) - np.exp(u) + rho
    res = float(np.max(np.abs(res_f)))
    history = [res]
    for it in range(max_iter):
        if res <= tol:
            return u, it, history
        weight = np.exp(u)
        delta = _pcg(grid, eps2, weight, res_f, rtol=min(1e-4, 0.1 * res) + 1e-12)
        alpha = 1.0
        while True:
            u_new = u + alpha * delta
            res_f_new = eps2 * apply_laplacian(grid, u_new) - np.exp(u_new) + rho
            res_new = float(np.max(np.abs(res_f_new)))
            if res_new < res:
                break
            alpha *= 0.5
            if alpha < 1e-8:
                raise SolverError(
                    f"Newton line search stalled at residual {res:.3e} "
                    f"(epsilon={epsilon})", residual=res, iterations=it)
        u, res_f, res = u_new, res_f_new, res_new
        history.append(res)
    if res <= tol:
        return u, max_iter, history
    raise SolverError(
        f"Newton did not reach residual {tol:.1e} in {max_iter} iterations "
        f"(epsilon={epsilon}, last residual {res:.3e})",
        residual=res, iterations=max_iter)


def _continuation_stages(epsilon: float) -> list[float]:
    """Geometric ladder eps_k = max(eps, 2^-k) from 1 down to eps."""
    if epsilon >= 1.0:
        return [float(epsilon)]
    stages = []
    k = 0
    while True:
        e = max(epsilon, 2.0 ** (-k))
        stages.append(e)
        if e <= epsilon:
            return stages
        k += 1


def solve_full_potential(grid: TorusGrid, rho: ScalarField, epsilon: float,
                         init: ScalarField | None = None,
                         tol: float = NEWTON_TOL,
                         max_iter: int = NEWTON_MAX_ITER,
                         source_time: float | None = None) -> FieldSolution:
    """Solve eps^2 Lap(U) = exp(U) - rho by damped Newton iteration.

    Cold starts at small eps walk down a geometric continuation ladder from
    eps = 1, warm-starting each stage, because the exp(U) coupling stiffens
    as eps shrinks.  A warm start `init` skips the ladder.  Returns the full
    splitting U = Ubar + Uhat with the spectral field E = -grad(U).
    """
    vals = _validate_density(grid, rho, epsilon)
    if init is not None:
        if init.grid != grid:
            raise ValueError("init grid does not match target grid")
        stages = [float(epsilon)]
        u = np.array(init.values, dtype=np.float64, copy=True)
    else:
        stages = _continuation_stages(epsilon)
        u = np.zeros(grid.shape)
    total_iters = 0
    history: list[float] = []
    for stage_eps in stages:
        stage_tol = tol if stage_eps == stages[-1] else max(tol, 1e-8)
        u, iters, stage_hist = _newton_stage(grid, vals, stage_eps, u,
                                             stage_tol, max_iter)
        total_iters += iters
        history.extend(stage_hist)
    u_total = ScalarField(grid, u)
    u_bar = solve_linear_poisson(grid, rho, epsilon)
    u_hat = ScalarField(grid, u - u_bar.values)
    e_field = gradient_field(u_total)
    res_f = epsilon ** 2 * apply_laplacian(grid, u) - np.exp(u) + vals
    return FieldSolution(
        u_bar=u_bar, u_hat=u_hat, u_total=u_total, e_field=e_field,
        epsilon=float(epsilon), residual_max=float(np.max(np.abs(res_f))),
        newton_iters=total_iters, residual_history=tuple(history),
        source_time=source_time)


def gradient_field(u: ScalarField) -> VectorField:
    """Spectral E = -grad(u); every component has exactly zero mean."""
    grid = u.grid
    ks, _ = _spectral_tables(grid)
    u_hat = np.fft.rfftn(u.values)
    comps = np.empty((grid.d,) + grid.shape)
    for a in range(grid.d):
        comps[a] = np.fft.irfftn(-(2j * np.pi * ks[a]) * u_hat, s=grid.shape)
    return VectorField(grid, comps)


def _cic_indices(grid: TorusGrid, positions: np.ndarray):
    """Base node index and fractional offset of each point, periodically."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != grid.d:
        raise ValueError(f"positions must have shape (M, {grid.d})")
    x = (pos % 1.0) * grid.n
    base = np.floor(x).astype(np.int64)
    frac = x - base
    base %= grid.n
    return base, frac


def evaluate_field_at(e: VectorField, positions) -> np.ndarray:
    """Multilinear (cloud-in-cell) interpolation, periodic across edges."""
    grid = e.grid
    base, frac = _cic_indices(grid, positions)
    m = base.shape[0]
    out = np.zeros((m, grid.d))
    for corner in np.ndindex(*(2,) * grid.d):
        w = np.ones(m)
        idx = []
        for a, c in enumerate(corner):
            w = w * (frac[:, a] if c else 1.0 - frac[:, a])
            idx.append((base[:, a] + c) % grid.n)
        idx = tuple(idx)
        for a in range(grid.d):
            out[:, a] += w * e.components[a][idx]
    return out


@dataclass
class FieldNormReport:
    """Grid norms of a field splitting, finite-difference moduli included."""

    sup_u_bar: float
    sup_u_hat: float
    lipschitz_e_hat: float
    log_lipschitz_e_bar: float

    def to_dict(self) -> dict:
        return {
            "sup_u_bar": self.sup_u_bar,
            "sup_u_hat": self.sup_u_hat,
            "lipschitz_e_hat": self.lipschitz_e_hat,
            "log_lipschitz_e_bar": self.log_lipschitz_e_bar,
        }


def _neighbor_increment_max(field: VectorField) -> float:
    comps = field.components
    worst = 0.0
    for axis in range(field.grid.d):
        diff = comps - np.roll(comps, -1, axis=1 + axis)
        mag = np.sqrt(np.sum(diff ** 2, axis=0))
        worst = max(worst, float(mag.max()))
    return worst


def field_norm_report(sol: FieldSolution) -> FieldNormReport:
    """Sup norms of the splitting and discrete moduli of its fields.

    The Lipschitz constant of Ehat and the log-Lipschitz modulus of Ebar are
    taken over adjacent node pairs; the log-Lipschitz weight is
    |x-y| (1 + log(sqrt(d)/|x-y|)) with |x-y| = h.
    """
    grid = sol.u_bar.grid
    h = grid.h
    e_bar = gradient_field(sol.u_bar)
    e_hat = gradient_field(sol.u_hat)
    lip = _neighbor_increment_max(e_hat) / h
    log_weight = h * (1.0 + np.log(np.sqrt(grid.d) / h))
    log_lip = _neighbor_increment_max(e_bar) / log_weight
    return FieldNormReport(
        sup_u_bar=float(np.max(np.abs(sol.u_bar.values))),
        sup_u_hat=float(np.max(np.abs(sol.u_hat.values))),
        lipschitz_e_hat=lip,
        log_lipschitz_e_bar=log_lip,
    )


_MAGIC = b"VPMF"
_KIND_SCALAR = 0
_KIND_VECTOR = 1


def save_field(path, field: ScalarField | VectorField) -> None:
    """Flat binary layout: header {d, n, kind}, then little-endian float64.

    Payload is row-major; vector components are concatenated in axis order.
    """
    if isinstance(field, ScalarField):
        kind, payload = _KIND_SCALAR, field.values
    elif isinstance(field, VectorField):
        kind, payload = _KIND_VECTOR, field.components
    else:
        raise TypeError(f"cannot serialize {type(field).__name__}")
    header = struct.pack("<4sBBBxI", _MAGIC, 1, kind, field.grid.d, field.grid.n)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def load_field(path) -> ScalarField | VectorField:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sBBBxI"))
        magic, version, kind, d, n = struct.unpack("<4sBBBxI", header)
        if magic != _MAGIC or version != 1:
            raise ValueError(f"{path}: not a torus field file")
        grid = TorusGrid(d=d, n=n)
        count = grid.n ** grid.d * (grid.d if kind == _KIND_VECTOR else 1)
        data = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
    if kind == _KIND_SCALAR:
        return ScalarField(grid, data.reshape(grid.shape))
    return VectorField(grid, data.reshape((grid.d,) + grid.shape))


def write_field_csv(path, field: ScalarField | VectorField) -> None:
    """Readable CSV export: one row per node, index columns then values."""
    grid = field.grid
    idx = np.indices(grid.shape).reshape(grid.d, -1).T
    if isinstance(field, ScalarField):
        cols = [field.values.reshape(-1, 1)]
        names = [f"i{a + 1}" for a in range(grid.d)] + ["value"]
    else:
        cols = [field.components.reshape(grid.d, -1).T]
        names = [f"i{a + 1}" for a in range(grid.d)] \
            + [f"e{a + 1}" for a in range(grid.d)]
    table = np.hstack([idx.astype(np.float64)] + cols)
    np.savetxt(path, table, fmt="%.17g", delimiter=",",
               header=",".join(names), comments="")
