"""Value functions of the i.i.d. stopping problem.

For a sampling cost ``c`` the iterates are

    rho^0 = g,   rho^n(z) = min(g(z), c + E_0[rho^{n-1}(z + r(X))]),

with ``g(z) = min(0, -z)``.  They decrease monotonically to the fixed point
``rho_c``.  ``h_c(z) = E_0[rho_c(z + r(X))]`` is the one-step smoothed value
whose comparison with ``g - c`` gives the continuation interval.

Two representations are provided:

* :class:`RhoGrid`, values on a uniform z-grid with linear interpolation
  between nodes and the asymptotes 0 (left) and -z (right) outside the grid;
* :class:`PiecewiseLinear`, the exact finite iterates for families with
  finitely many atoms, where every iterate is piecewise linear.

For lattice families :func:`coset_rho` also solves the stopping problem
exactly on one coset ``z0 + u*Z`` of the score lattice (the states reachable
from ``z0``), which gives ``rho_c`` at off-grid points without interpolation.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .errors import ConfigError, NumericError, UnsupportedModelError
from .model import ObservationModel

DEFAULT_NODES = 2001
DEFAULT_HALF_WIDTH_SD = 30.0
MIN_NODES = 8


class GridRangeWarning(UserWarning):
    """The value function has not reached its tail asymptotes inside the grid."""


def g(z):
    """Normalised stopping payoff ``min(0, -z)``."""
    out = np.minimum(0.0, -np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GridConfig:
    """Uniform grid symmetric around zero.

    ``half_width`` defaults to 30 score standard deviations.  With
    ``align_lattice`` the spacing is shrunk so that every score value of a
    lattice family is a whole number of grid steps, which makes the Bellman
    update exact at the nodes.
    """

    half_width: float | None = None
    nodes: int = DEFAULT_NODES
    align_lattice: bool = True

    def build(self, model: ObservationModel) -> np.ndarray:
        if int(self.nodes) < MIN_NODES:
            raise ConfigError(f"grid needs at least {MIN_NODES} nodes, got {self.nodes}")
        width = self.half_width
        if width is None:
            width = DEFAULT_HALF_WIDTH_SD * model.score_sd()
        width = float(width)
        if not (math.isfinite(width) and width > 0):
            raise ConfigError("grid half_width must be positive")
        half = (int(self.nodes) - 1) // 2
        step = width / half
        unit = model.lattice_unit() if self.align_lattice else None
        if unit is not None:
            m = math.ceil(unit / step)
            step = unit / m
            half = math.ceil(width / step - 1e-9)
        return np.arange(-half, half + 1, dtype=float) * step


@dataclass(frozen=True, eq=False)
class RhoGrid:
    """``rho_c`` (or a finite iterate of it) tabulated on a uniform grid."""

    c: float
    z_nodes: np.ndarray
    values: np.ndarray
    iterations: int = 0
    converged: bool = False
    sup_change: float = math.inf
    tail_left: str = field(default="rho = 0 for z < z_min", repr=False)
    tail_right: str = field(default="rho = -z for z > z_max", repr=False)

    def __post_init__(self):
        for name in ("z_nodes", "values"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.z_nodes.shape != self.values.shape:
            raise ConfigError("z_nodes and values must have the same length")

    @property
    def z_min(self) -> float:
        return float(self.z_nodes[0])

    @property
    def z_max(self) -> float:
        return float(self.z_nodes[-1])

    def __call__(self, z):
        out = _interp(self.z_nodes, self.values, np.asarray(z, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def metadata(self) -> dict:
        return {
            "grid_nodes": int(self.z_nodes.size),
            "grid_z_min": self.z_min,
            "grid_z_max": self.z_max,
            "grid_iterations": int(self.iterations),
            "grid_converged": bool(self.converged),
            "grid_sup_change": float(self.sup_change),
        }

    def write_csv(self, fh) -> None:
        """Rows ``z, rho, g_minus_rho``."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["z", "rho", "g_minus_rho"])
        gz = g(self.z_nodes)
        for z, v, d in zip(self.z_nodes, self.values, gz - self.values):
            writer.writerow([repr(float(z)), repr(float(v)), repr(float(d))])


def _interp(zn: np.ndarray, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation with the asymptotes ``0`` left and ``-z`` right of the grid."""
    out = np.interp(x, zn, v, left=0.0)
    right = x > zn[-1]
    if np.any(right):
        out = np.where(right, -x, out)
    return out


def _interp_pl(xs: np.ndarray, ys: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.interp(x, xs, ys)
    right = x > xs[-1]
    if np.any(right):
        out = np.where(right, -x + (ys[-1] + xs[-1]), out)
    return out


def _require_iid(model: ObservationModel) -> None:
    if not model.is_iid:
        raise UnsupportedModelError(
            f"{model.kind.value} is stage-indexed; value functions need i.i.d. scores")


def shift_operator(zn: np.ndarray, r: np.ndarray, w: np.ndarray):
    """Sparse ``(P, q)`` with ``P @ v + q == E[interp(v)(zn + r)]`` at every node.

    The interpolation weights depend only on the grid and the score law, so
    they are assembled once and reused by every Bellman step.
    """
    m, j = zn.size, r.size
    x = (zn[:, None] + r[None, :]).ravel()
    ww = np.tile(w, m)
    rows = np.repeat(np.arange(m), j)
    idx = np.clip(np.searchsorted(zn, x, side="right") - 1, 0, m - 2)
    t = np.clip((x - zn[idx]) / (zn[idx + 1] - zn[idx]), 0.0, 1.0)
    inside = (x >= zn[0]) & (x <= zn[-1])
    wi = np.where(inside, ww, 0.0)
    data = np.concatenate([wi * (1.0 - t), wi * t])
    cols = np.concatenate([idx, idx + 1])
    p = sparse.csr_matrix((data, (np.concatenate([rows, rows]), cols)), shape=(m, m))
    q = np.bincount(rows, weights=np.where(x > zn[-1], -ww * x, 0.0), minlength=m)
    return p, q


def _bellman(gz, v, op, c):
    p, q = op
    return np.minimum(gz, c + (p @ v + q))


def initial_grid(model: ObservationModel, c: float, grid_cfg: GridConfig | None = None) -> RhoGrid:
    """``rho^0 = g`` on the configured grid."""
    _require_iid(model)
    zn = (grid_cfg or GridConfig()).build(model)
    return RhoGrid(float(c), zn, g(zn), iterations=0, converged=False)


def rho_step(grid: RhoGrid, model: ObservationModel, c: float | None = None) -> RhoGrid:
    """One Bellman application ``min(g, c + E_0[rho(. + r)])``."""
    _require_iid(model)
    c = grid.c if c is None else float(c)
    r, w = model.score_law()
    op = shift_operator(grid.z_nodes, r, w)
    new = _bellman(g(grid.z_nodes), grid.values, op, c)
    change = float(np.max(np.abs(new - grid.values)))
    return RhoGrid(c, grid.z_nodes, new, iterations=grid.iterations + 1,
                   converged=change == 0.0, sup_change=change)


def rho_fixed_point(model: ObservationModel, c: float, grid_cfg: GridConfig | None = None,
                    tol: float = 1e-9, max_iter: int = 100_000,
                    tail_tol: float = 1e-7) -> RhoGrid:
    """Iterate the Bellman map from ``g`` until the sup-norm change drops below ``tol``.

    Reaching ``max_iter`` returns the last iterate with ``converged=False``.
    Monotone descent is checked at every iteration.
    """
    _require_iid(model)
    c = float(c)
    if not (math.isfinite(c) and c > 0):
        raise ConfigError("sampling cost c must be positive")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    zn = (grid_cfg or GridConfig()).build(model)
    op = shift_operator(zn, *model.score_law())
    gz = g(zn)
    v = gz
    change = math.inf
    it = 0
    converged = False
    while it < max_iter:
        new = _bellman(gz, v, op, c)
        it += 1
        if np.any(new > v + 1e-12 * (1.0 + np.abs(v))):
            raise NumericError("Bellman iterates failed to decrease monotonically")
        change = float(np.max(v - new))
        v = new
        if not np.all(np.isfinite(v)):
            raise NumericError("value function became non-finite")
        if change < tol:
            converged = True
            break
    grid = RhoGrid(c, zn, v, iterations=it, converged=converged, sup_change=change)
    left, right = abs(grid.values[0]), abs(grid.values[-1] + grid.z_max)
    if max(left, right) > tail_tol:
        warnings.warn(
            f"rho has not reached its tails inside [{grid.z_min}, {grid.z_max}] "
            f"(|rho(z_min)|={left:.3g}, |rho(z_max)+z_max|={right:.3g}); widen the grid",
            GridRangeWarning, stacklevel=2)
    return grid


def h_c(grid: RhoGrid, model: ObservationModel, z):
    """``E_0[rho(z + r(X))]`` evaluated off-grid through the interpolant."""
    _require_iid(model)
    r, w = model.score_law()
    zz = np.asarray(z, dtype=float)
    out = _interp(grid.z_nodes, grid.values, zz[..., None] + r) @ w
    return float(out) if np.ndim(out) == 0 else out


def shape_report(grid: RhoGrid) -> dict[str, float]:
    """Largest violation of each structural property of ``rho``.

    A value ``<= tol`` means the property holds at tolerance ``tol``.
    """
    z, v = grid.z_nodes, grid.values
    rho0 = grid(0.0)
    gap = g(z) - v
    return {
        "non_positive": float(np.max(v)),
        "non_increasing": float(np.max(np.diff(v))),
        "rho_plus_z_non_decreasing": float(np.max(-np.diff(v + z))),
        "midpoint_concave": float(np.max(0.5 * (v[:-2] + v[2:]) - v[1:-1])),
        "g_minus_rho_bound": float(max(np.max(-gap), np.max(gap + rho0))),
        "tail_left": float(abs(v[0])),
        "tail_right": float(abs(v[-1] + z[-1])),
    }


# ----------------------------------------------------------------------
# exact iterates for finitely many atoms


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function, constant left of ``xs[0]`` and
    with slope -1 right of ``xs[-1]``."""

    xs: np.ndarray
    ys: np.ndarray

    def __call__(self, z):
        out = _interp_pl(self.xs, self.ys, np.asarray(z, dtype=float))
        return float(out) if np.ndim(out) == 0 else out


def _drop_collinear(xs, ys):
    if xs.size <= 2:
        return xs, ys
    slopes = np.diff(ys) / np.diff(xs)
    keep = np.ones(xs.size, dtype=bool)
    keep[1:-1] = np.abs(np.diff(slopes)) > 1e-12
    # keep the outermost kinks: the tails are defined relative to them
    return xs[keep], ys[keep]


def exact_rho_step(prev: PiecewiseLinear, model: ObservationModel, c: float) -> PiecewiseLinear:
    _require_iid(model)
    if not model.is_finite_discrete:
        raise UnsupportedModelError("exact iterates need a family with finitely many atoms")
    _, p, r = model.support_atoms()

    def cont(z):
        return c + sum(pj * prev(z + rj) for pj, rj in zip(p, r))

    pts = np.unique(np.concatenate([(prev.xs[:, None] - r[None, :]).ravel(), [0.0]]))
    diff = cont(pts) - g(pts)
    sign_change = diff[:-1] * diff[1:] < 0
    a, b = pts[:-1][sign_change], pts[1:][sign_change]
    da, db = diff[:-1][sign_change], diff[1:][sign_change]
    roots = a + (b - a) * da / (da - db)
    xs = np.unique(np.concatenate([pts, roots]))
    ys = np.minimum(g(xs), cont(xs))
    xs, ys = _drop_collinear(xs, ys)
    return PiecewiseLinear(xs, ys)


def exact_rho_iterates(model: ObservationModel, c: float, n: int) -> list[PiecewiseLinear]:
    """``[rho^0, ..., rho^n]`` exactly, for families with finitely many atoms."""
    c = float(c)
    out = [PiecewiseLinear(np.array([0.0]), np.array([0.0]))]
    for _ in range(int(n)):
        out.append(exact_rho_step(out[-1], model, c))
    return out


# ----------------------------------------------------------------------
# exact solution on one lattice coset


@dataclass(frozen=True, eq=False)
class CosetSolution:
    """``rho_c`` at the points ``z0 + u*i``, ``i = i_lo..i_lo + len(values) - 1``."""

    z0: float
    unit: float
    i_lo: int
    values: np.ndarray
    rounds: int

    def at(self, i: np.ndarray) -> np.ndarray:
        """Values at coset offsets ``i``, with the same tails as the grid."""
        i = np.asarray(i)
        pos = i - self.i_lo
        inside = (pos >= 0) & (pos < self.values.size)
        out = np.where(inside, self.values[np.clip(pos, 0, self.values.size - 1)], 0.0)
        right = pos >= self.values.size
        return np.where(right, -(self.z0 + i * self.unit), out)


def lattice_steps(model: ObservationModel) -> tuple[float, np.ndarray, np.ndarray]:
    """``(u, k, p)`` with score atoms ``r = k*u`` (``k`` integers) and their probabilities."""
    unit = model.lattice_unit()
    if unit is None:
        raise UnsupportedModelError(f"{model.kind.value} scores do not lie on a lattice")
    _, p, r = model.support_atoms()
    k = np.rint(r / unit).astype(np.int64)
    if np.max(np.abs(k * unit - r)) > 1e-9 * max(1.0, unit):
        raise NumericError("score atoms are not integer multiples of the lattice unit")
    return unit, k, p


def coset_rho(model: ObservationModel, c: float, z0: float, z_lo: float, z_hi: float,
              guess=None, max_rounds: int = 200) -> CosetSolution:
    """``rho_c`` on ``{z0 + u*i} within [z_lo, z_hi]`` by policy iteration.

    Outside the range the tails ``0`` (left) and ``-z`` (right) are imposed,
    as on the grid.  Each round solves the linear system of the current
    stopping set exactly; the set is improved until it no longer changes.
    ``guess`` (a callable, typically a converged grid) seeds the first set.
    """
    _require_iid(model)
    unit, k, p = lattice_steps(model)
    c = float(c)
    i_lo = math.ceil((z_lo - z0) / unit - 1e-9)
    i_hi = math.floor((z_hi - z0) / unit + 1e-9)
    if i_hi < i_lo:
        raise ConfigError("coset range contains no lattice point")
    idx = np.arange(i_lo, i_hi + 1)
    y = z0 + idx * unit
    n = y.size
    rows, cols, data = [], [], []
    q = np.zeros(n)
    for kj, pj in zip(k, p):
        tgt = np.arange(n) + kj
        inside = (tgt >= 0) & (tgt < n)
        rows.append(np.nonzero(inside)[0])
        cols.append(tgt[inside])
        data.append(np.full(int(inside.sum()), pj))
        right = tgt >= n
        q[right] += pj * -(z0 + (idx[right] + kj) * unit)
    P = sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    gy = g(y)
    v = gy if guess is None else np.minimum(gy, np.asarray(guess(y), dtype=float))
    stop = gy <= c + P @ v + q
    for rounds in range(1, max_rounds + 1):
        v = gy.copy()
        cont = np.nonzero(~stop)[0]
        if cont.size:
            S = np.nonzero(stop)[0]
            A = sparse.identity(cont.size, format="csc") - P[cont][:, cont].tocsc()
            rhs = c + q[cont] + P[cont][:, S] @ gy[S]
            v[cont] = sparse_linalg.spsolve(A, rhs)
        if not np.all(np.isfinite(v)):
            raise NumericError("coset policy evaluation produced non-finite values")
        new_stop = gy <= c + P @ v + q
        if np.array_equal(new_stop, stop):
            return CosetSolution(float(z0), unit, i_lo, v, rounds)
        stop = new_stop
    raise NumericError(f"coset policy iteration did not settle in {max_rounds} rounds")


def coset_h(model: ObservationModel, c: float, z: float, z_lo: float, z_hi: float,
            guess=None) -> float:
    """``h_c(z) = E_0[rho_c(z + r)]`` using the exact coset solution through ``z``."""
    sol = coset_rho(model, c, z, z_lo, z_hi, guess)
    _, k, p = lattice_steps(model)
    return math.fsum(p * sol.at(k))


def with_values(grid: RhoGrid, values) -> RhoGrid:
    """Copy of ``grid`` with replaced values (used to build test inputs)."""
    return replace(grid, values=np.asarray(values, dtype=float))
