"""Continuation boundaries and the (b, c)-generated test design.

With ``d(z) = g(z) - c - h_c(z)`` the test continues sampling while
``z_n - b`` lies in ``(A_c, B_c)``, the interval where ``d > 0``, and rejects
the null on stopping when ``z_n >= b``.  ``d`` is convex on each half-line,
so each boundary is the unique sign change on its side of zero and plain
bisection brackets it.  When ``c + h_c(0) > 0`` there is no continuation
region and the test stops after one observation.

For lattice families the grid roots are polished with the exact coset
solution of the stopping problem: the kinks of ``rho_c`` sit at the
boundaries shifted by lattice steps, generally between grid nodes, so grid
interpolation alone places the roots only to within about one grid step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, GridTooNarrowError, StaleInputError
from .model import ObservationModel
from .rho import GridConfig, RhoGrid, coset_h, g, h_c, rho_fixed_point


class Direction(str, enum.Enum):
    GREATER = "GreaterThan"
    LESS = "LessThan"


@dataclass(frozen=True)
class Thresholds:
    degenerate: bool
    A_c: float | None = None
    B_c: float | None = None
    residual_A: float | None = None
    residual_B: float | None = None
    # |d'| at the root; near zero means the boundary is a tangency
    slope_A: float | None = None
    slope_B: float | None = None

    @property
    def tangent(self) -> bool:
        return not self.degenerate and min(abs(self.slope_A), abs(self.slope_B)) < 1e-8


@dataclass(frozen=True)
class DesignConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    tol: float = 1e-9
    max_iter: int = 100_000
    root_tol: float = 1e-10


@dataclass(frozen=True)
class TestDesign:
    """A sequential test: continue while ``lower < z_n < upper``, reject on
    stopping when ``z_n >= decision_cut`` (``< decision_cut`` for the mirror).

    ``horizon`` forces a stop at that stage; it is ``None`` for the
    (b, c)-generated tests and set for fixed-sample competitors.
    """

    __test__ = False  # not a pytest class

    b: float
    c: float
    lower: float
    upper: float
    decision_cut: float
    degenerate: bool = False
    A_c: float | None = None
    B_c: float | None = None
    direction: Direction = Direction.GREATER
    horizon: int | None = None
    design_id: str = ""
    residual_A: float | None = None
    residual_B: float | None = None
    grid: dict = field(default_factory=dict, compare=False)

    def continues(self, z, n: int):
        """Continuation flag for statistic ``z`` after ``n`` observations.

        Boundary contact stops sampling.
        """
        z = np.asarray(z, dtype=float)
        if self.degenerate or (self.horizon is not None and n >= self.horizon):
            out = np.zeros(z.shape, dtype=bool)
        else:
            out = (z > self.lower) & (z < self.upper)
        return bool(out) if out.ndim == 0 else out

    def rejects(self, z):
        z = np.asarray(z, dtype=float)
        if self.direction is Direction.GREATER:
            out = z >= self.decision_cut
        else:
            out = z < self.decision_cut
        return bool(out) if out.ndim == 0 else out

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["direction"] = self.direction.value
        grid = rec.pop("grid")
        rec.update(grid)
        return rec


MAX_COSET = 20_000


def boundary_function(rho: RhoGrid, model: ObservationModel, c: float | None = None):
    """``d(z) = g(z) - c - h_c(z)`` and whether it is evaluated exactly.

    Lattice families with a moderate number of lattice points in the grid
    range use the exact coset solution; otherwise ``h_c`` is the grid
    interpolant.
    """
    c = rho.c if c is None else float(c)
    unit = model.lattice_unit()
    if unit is not None and (rho.z_max - rho.z_min) / unit <= MAX_COSET:
        def d(z):
            return g(z) - c - coset_h(model, c, float(z), rho.z_min, rho.z_max, rho)
        return d, True

    def d(z):
        return g(z) - c - h_c(rho, model, z)
    return d, False


def solve_thresholds(rho: RhoGrid, model: ObservationModel, c: float | None = None,
                     root_tol: float = 1e-10) -> Thresholds:
    """Roots of ``g(z) = c + h_c(z)`` on either side of zero, or degeneracy."""
    if not rho.converged:
        raise StaleInputError("rho grid has not converged; refusing to solve for thresholds")
    c = rho.c if c is None else float(c)

    def d_grid(z):
        return g(z) - c - h_c(rho, model, z)

    d, exact = boundary_function(rho, model, c)
    d0 = d(0.0)
    if d0 < 0.0:
        return Thresholds(degenerate=True)
    if d0 == 0.0:
        return Thresholds(False, 0.0, 0.0, 0.0, 0.0, _slope(d, 0.0), _slope(d, 0.0))
    a = _bisect(d_grid, rho.z_min, 0.0, root_tol, "lower")
    b = _bisect(d_grid, rho.z_max, 0.0, root_tol, "upper")
    if exact:
        step = float(rho.z_nodes[1] - rho.z_nodes[0])
        a = _polish(d, a, rho.z_min, step, root_tol, "lower")
        b = _polish(d, b, rho.z_max, step, root_tol, "upper")
    return Thresholds(False, a, b, abs(d(a)), abs(d(b)), _slope(d, a), _slope(d, b))


def _polish(d, guess: float, outer: float, step: float, tol: float, side: str) -> float:
    """Re-bracket near ``guess`` with the exact ``d`` and bisect again."""
    sign = 1.0 if outer > 0 else -1.0
    inner = guess - sign * 2 * step
    if sign * inner <= 0 or d(inner) <= 0.0:
        inner = 0.0
    dist = 2 * step
    stop = guess + sign * dist
    while sign * stop < sign * outer and d(stop) > 0.0:
        dist *= 2
        stop = guess + sign * dist
    if sign * stop >= sign * outer:
        stop = outer
    return _bisect(d, stop, inner, tol, side)


def _bisect(d, outer: float, inner: float, tol: float, side: str) -> float:
    """Sign change of ``d`` between ``outer`` (stop, d <= 0) and ``inner`` (d > 0)."""
    if d(outer) > 0.0:
        raise GridTooNarrowError(
            f"no {side} boundary inside the grid: d({outer}) > 0; widen the grid")
    stop, cont = outer, inner
    while abs(cont - stop) > tol:
        mid = 0.5 * (stop + cont)
        if mid in (stop, cont):
            break
        if d(mid) > 0.0:
            cont = mid
        else:
            stop = mid
    return 0.5 * (stop + cont)


def _slope(d, z: float, h: float = 1e-6) -> float:
    return abs(d(z + h) - d(z - h)) / (2 * h)


def design_from_thresholds(th: Thresholds, b: float, c: float, rho: RhoGrid | None = None,
                           design_id: str | None = None) -> TestDesign:
    b, c = float(b), float(c)
    meta = rho.metadata() if rho is not None else {}
    label = design_id or f"lmp(b={b!r},c={c!r})"
    if th.degenerate:
        return TestDesign(b, c, lower=b, upper=b, decision_cut=b, degenerate=True,
                          design_id=label, grid=meta)
    return TestDesign(b, c, lower=b + th.A_c, upper=b + th.B_c, decision_cut=b,
                      degenerate=False, A_c=th.A_c, B_c=th.B_c, design_id=label,
                      residual_A=th.residual_A, residual_B=th.residual_B, grid=meta)


def make_design(model: ObservationModel, b: float, c: float,
                cfg: DesignConfig | None = None) -> TestDesign:
    """The (b, c)-generated test for ``H1: theta > theta0``."""
    design, _ = make_design_with_grid(model, b, c, cfg)
    return design


def make_design_with_grid(model: ObservationModel, b: float, c: float,
                          cfg: DesignConfig | None = None) -> tuple[TestDesign, RhoGrid]:
    cfg = cfg or DesignConfig()
    b, c = float(b), float(c)
    if not math.isfinite(b):
        raise ConfigError("b must be finite")
    rho = rho_fixed_point(model, c, cfg.grid, cfg.tol, cfg.max_iter)
    th = solve_thresholds(rho, model, c, cfg.root_tol)
    return design_from_thresholds(th, b, c, rho), rho


def mirror_design(design: TestDesign) -> TestDesign:
    """Same stopping rule, complementary decision: the test for ``theta < theta0``."""
    flipped = Direction.LESS if design.direction is Direction.GREATER else Direction.GREATER
    return replace(design, direction=flipped)


def shifted_design(design: TestDesign, d_lower: float = 0.0, d_upper: float = 0.0,
                   design_id: str | None = None) -> TestDesign:
    """Competitor with the boundaries moved to ``lower + d_lower`` and ``upper + d_upper``."""
    label = design_id or f"{design.design_id}+shift({d_lower!r},{d_upper!r})"
    return replace(design, lower=design.lower + d_lower, upper=design.upper + d_upper,
                   degenerate=False, A_c=None, B_c=None, residual_A=None, residual_B=None,
                   design_id=label)


def fixed_sample_design(b: float, c: float, n: int, decision_cut: float | None = None,
                        direction: Direction = Direction.GREATER) -> TestDesign:
    """Take exactly ``n`` observations, then reject when ``z_n >= decision_cut``."""
    if int(n) < 1:
        raise ConfigError("fixed sample size must be at least 1")
    b = float(b)
    cut = b if decision_cut is None else float(decision_cut)
    return TestDesign(b, float(c), lower=-math.inf, upper=math.inf, decision_cut=cut,
                      direction=direction, horizon=int(n), design_id=f"fixed(N={int(n)})")
