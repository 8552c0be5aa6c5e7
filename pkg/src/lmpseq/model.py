"""Observation families, their score functions and null expectations.

Every family is a one-parameter model ``f_theta`` with a distinguished null
value ``theta0``.  The quantities the rest of the package needs are

* the score ``r(x) = d/dtheta log f_theta(x)`` at ``theta0``,
* expectations ``E_theta0[fn(r(X))]`` (exact atom sums for discrete
  families, fixed-node Gauss quadrature for the normal ones),
* an inverse-CDF sampler so that Monte Carlo runs can share uniforms
  across parameter values (common random numbers).

``TriangularNormal`` is the stage-indexed family ``X_n ~ N(n*theta, 1)``;
its stage-``n`` score is ``n * (x - n*theta0)``.  It is not i.i.d. and the
value-function solvers refuse it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DomainError, NumericError

# Gauss quadrature panels for the kink-aware normal expectations are cut at
# this many standard deviations; the neglected mass is below 1e-32.
_TAIL_SD = 12.0
_POISSON_TAIL = 1e-18


class Kind(str, enum.Enum):
    BERNOULLI = "BernoulliMean"
    NORMAL = "NormalMean"
    POISSON = "PoissonMean"
    TRIANGULAR = "TriangularNormal"
    CUSTOM = "CustomDiscrete"


@dataclass(frozen=True)
class ObservationModel:
    """A parametric family together with its null parameter.

    ``atoms`` is only used by ``CustomDiscrete`` and holds ``(x, p0, r)``
    triples.  For that kind the alternatives are the first-order tilts
    ``p_theta(x) = p0(x) * (1 + (theta - theta0) * r(x))``, which have score
    ``r`` at ``theta0`` by construction.
    """

    kind: Kind
    theta0: float
    atoms: tuple[tuple[float, float, float], ...] | None = None
    quadrature_nodes: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "theta0", float(self.theta0))
        if not math.isfinite(self.theta0):
            raise ConfigError("theta0 must be finite")
        if int(self.quadrature_nodes) < 2:
            raise ConfigError("quadrature_nodes must be at least 2")
        object.__setattr__(self, "quadrature_nodes", int(self.quadrature_nodes))
        kind = self.kind
        if kind is Kind.BERNOULLI and not 0.0 < self.theta0 < 1.0:
            raise ConfigError("BernoulliMean theta0 must lie in (0, 1)")
        if kind is Kind.POISSON and not self.theta0 > 0.0:
            raise ConfigError("PoissonMean theta0 must be positive")
        if kind is Kind.CUSTOM:
            self._validate_atoms()
        elif self.atoms is not None:
            raise ConfigError(f"atoms are only accepted for {Kind.CUSTOM.value}")

    def _validate_atoms(self):
        if not self.atoms:
            raise ConfigError("CustomDiscrete requires a non-empty list of (x, p0, r) atoms")
        atoms = []
        for atom in self.atoms:
            if len(atom) != 3:
                raise ConfigError("each atom must be an (x, p0, r) triple")
            atoms.append(tuple(float(v) for v in atom))
        arr = np.array(atoms)
        if not np.all(np.isfinite(arr)):
            raise ConfigError("atoms must be finite")
        x, p, r = arr.T
        if len(np.unique(x)) != len(x):
            raise ConfigError("atom x values must be distinct")
        if np.any(p < 0):
            raise ConfigError("atom probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError(f"atom probabilities sum to {p.sum()!r}, expected 1 within 1e-12")
        if abs(float(np.dot(p, r))) > 1e-9:
            raise ConfigError("atom scores must have zero mean under p0 (within 1e-9)")
        if not float(np.dot(p, r * r)) > 0.0:
            raise ConfigError("atom scores must have positive variance under p0")
        object.__setattr__(self, "atoms", tuple(atoms))

    # ------------------------------------------------------------------
    # classification

    @property
    def is_iid(self) -> bool:
        return self.kind is not Kind.TRIANGULAR

    @property
    def is_discrete(self) -> bool:
        return self.kind in (Kind.BERNOULLI, Kind.POISSON, Kind.CUSTOM)

    @property
    def is_finite_discrete(self) -> bool:
        return self.kind in (Kind.BERNOULLI, Kind.CUSTOM)

    @property
    def is_gaussian(self) -> bool:
        return self.kind in (Kind.NORMAL, Kind.TRIANGULAR)

    # ------------------------------------------------------------------
    # support and score

    def support_atoms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Outcomes, null probabilities and scores of a discrete family.

        Poisson support is cut where the upper tail mass drops below 1e-18
        and renormalised.
        """
        return self._atoms_cache

    @cached_property
    def _atoms_cache(self):
        t0 = self.theta0
        if self.kind is Kind.BERNOULLI:
            x = np.array([0.0, 1.0])
            p = np.array([1.0 - t0, t0])
        elif self.kind is Kind.POISSON:
            kmax = math.ceil(t0 + 20.0 * math.sqrt(t0) + 40.0)
            x = np.arange(kmax + 1, dtype=float)
            p = stats.poisson.pmf(x, t0)
            tail = stats.poisson.sf(x, t0)
            last = int(np.argmax(tail < _POISSON_TAIL))
            x, p = x[:last + 1], p[:last + 1]
            p = p / p.sum()
        elif self.kind is Kind.CUSTOM:
            arr = np.array(self.atoms)
            x, p = arr[:, 0].copy(), arr[:, 1].copy()
            r = arr[:, 2].copy()
            for a in (x, p, r):
                a.flags.writeable = False
            return x, p, r
        else:
            raise DomainError(f"{self.kind.value} has no discrete support")
        r = self.score(x)
        for a in (x, p, r):
            a.flags.writeable = False
        return x, p, r

    def score(self, x, stage: int = 1):
        """Score ``r(x)`` at ``theta0``; for TriangularNormal the stage-``n`` summand."""
        xs = np.asarray(x, dtype=float)
        t0 = self.theta0
        if not np.all(np.isfinite(xs)):
            raise DomainError("observation must be finite")
        kind = self.kind
        if kind is Kind.NORMAL:
            out = xs - t0
        elif kind is Kind.TRIANGULAR:
            n = _check_stage(stage)
            out = n * (xs - n * t0)
        elif kind is Kind.BERNOULLI:
            if not np.all((xs == 0.0) | (xs == 1.0)):
                raise DomainError("Bernoulli observations must be 0 or 1")
            out = (xs - t0) / (t0 * (1.0 - t0))
        elif kind is Kind.POISSON:
            if not np.all((xs >= 0) & (xs == np.floor(xs))):
                raise DomainError("Poisson observations must be non-negative integers")
            out = xs / t0 - 1.0
        else:
            out = self.support_atoms()[2][self._atom_index(xs)]
        return float(out) if np.ndim(out) == 0 else out

    def _atom_index(self, xs: np.ndarray) -> np.ndarray:
        ax = self.support_atoms()[0]
        hit = xs[..., None] == ax
        if not np.all(hit.any(axis=-1)):
            raise DomainError("observation is not an atom of the CustomDiscrete family")
        return hit.argmax(axis=-1)

    def log_density(self, x, theta: float, stage: int = 1):
        """``log f_theta(x)`` with respect to the family's dominating measure."""
        self.check_theta(theta)
        xs = np.asarray(x, dtype=float)
        kind = self.kind
        if kind is Kind.NORMAL:
            out = -0.5 * (xs - theta) ** 2 - 0.5 * math.log(2 * math.pi)
        elif kind is Kind.TRIANGULAR:
            n = _check_stage(stage)
            out = -0.5 * (xs - n * theta) ** 2 - 0.5 * math.log(2 * math.pi)
        elif kind is Kind.BERNOULLI:
            self.score(xs)
            out = xs * math.log(theta) + (1.0 - xs) * math.log1p(-theta)
        elif kind is Kind.POISSON:
            self.score(xs)
            out = xs * math.log(theta) - theta - special.gammaln(xs + 1.0)
        else:
            idx = self._atom_index(xs)
            _, p0, r = self.support_atoms()
            with np.errstate(divide="ignore"):
                out = np.log(p0[idx] * (1.0 + (theta - self.theta0) * r[idx]))
        return float(out) if np.ndim(out) == 0 else out

    def fisher_information(self, stage: int = 1) -> float:
        """``E_theta0[r(X)^2]`` for the given stage."""
        if self.kind is Kind.NORMAL:
            return 1.0
        if self.kind is Kind.TRIANGULAR:
            return float(_check_stage(stage)) ** 2
        if self.kind is Kind.BERNOULLI:
            return 1.0 / (self.theta0 * (1.0 - self.theta0))
        if self.kind is Kind.POISSON:
            return 1.0 / self.theta0
        _, p, r = self.support_atoms()
        return float(np.dot(p, r * r))

    def score_sd(self, stage: int = 1) -> float:
        return math.sqrt(self.fisher_information(stage))

    # ------------------------------------------------------------------
    # expectations under the null

    def score_law(self, stage: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights representing the law of ``r(X)`` under ``theta0``.

        Discrete families return their atoms; normal families return
        probabilists' Gauss-Hermite nodes scaled to the score's standard
        deviation.
        """
        if self.is_gaussian:
            t, w = self._hermite
            return self.score_sd(stage) * t, w
        _, p, r = self.support_atoms()
        return r, p

    @cached_property
    def _hermite(self):
        t, w = np.polynomial.hermite_e.hermegauss(self.quadrature_nodes)
        w = w / w.sum()
        t.flags.writeable = False
        w.flags.writeable = False
        return t, w

    @cached_property
    def _legendre(self):
        return np.polynomial.legendre.leggauss(self.quadrature_nodes)

    def expect_under_null(self, fn: Callable, stage: int = 1,
                          breakpoints: Iterable[float] | None = None) -> float:
        """``E_theta0[fn(r(X))]``.

        ``fn`` receives a numpy array of score values.  For normal families,
        passing the score values at which ``fn`` has kinks switches from
        Gauss-Hermite to panelled Gauss-Legendre, which integrates
        piecewise-smooth functions to near machine precision.
        """
        if self.is_gaussian and breakpoints is not None:
            return gaussian_expectation(fn, self.score_sd(stage), breakpoints,
                                        self._legendre)
        r, w = self.score_law(stage)
        vals = np.asarray(fn(r), dtype=float)
        if vals.shape != r.shape:
            vals = np.array([float(fn(v)) for v in r])
        if not np.all(np.isfinite(vals)):
            raise NumericError("fn returned non-finite values at quadrature nodes")
        return float(np.dot(w, vals))

    # ------------------------------------------------------------------
    # alternatives and sampling

    def check_theta(self, theta: float) -> float:
        theta = float(theta)
        if not math.isfinite(theta):
            raise DomainError("theta must be finite")
        if self.kind is Kind.BERNOULLI and not 0.0 < theta < 1.0:
            raise DomainError(f"Bernoulli mean {theta} outside (0, 1)")
        if self.kind is Kind.POISSON and not theta > 0.0:
            raise DomainError(f"Poisson mean {theta} must be positive")
        if self.kind is Kind.CUSTOM:
            _, _, r = self.support_atoms()
            if np.any(1.0 + (theta - self.theta0) * r < 0.0):
                raise DomainError(f"theta {theta} makes a tilted atom probability negative")
        return theta

    def atom_probs(self, theta: float) -> np.ndarray:
        """Atom probabilities under ``theta`` for finite discrete families."""
        theta = self.check_theta(theta)
        if self.kind is Kind.BERNOULLI:
            return np.array([1.0 - theta, theta])
        if self.kind is Kind.CUSTOM:
            _, p, r = self.support_atoms()
            return p * (1.0 + (theta - self.theta0) * r)
        raise DomainError(f"{self.kind.value} has no finite atom list")

    def quantile(self, theta: float, u, stage: int = 1):
        """Inverse CDF of ``f_theta`` (at the given stage) applied to uniforms ``u``.

        Every family is monotone in ``theta`` for fixed ``u``, which is what
        makes common random numbers effective for power curves.
        """
        theta = self.check_theta(theta)
        u = np.asarray(u, dtype=float)
        kind = self.kind
        if kind is Kind.NORMAL:
            return theta + special.ndtri(u)
        if kind is Kind.TRIANGULAR:
            return _check_stage(stage) * theta + special.ndtri(u)
        if kind is Kind.BERNOULLI:
            return (u < theta).astype(float)
        if kind is Kind.POISSON:
            return stats.poisson.ppf(u, theta)
        x, _, _ = self.support_atoms()
        order = np.argsort(x)
        cdf = np.cumsum(self.atom_probs(theta)[order])
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(x) - 1)
        return x[order][idx]

    def sample(self, theta: float, rng: np.random.Generator, stage: int = 1) -> float:
        """One draw from ``f_theta``; deterministic given the generator state."""
        return float(self.quantile(theta, rng.random(), stage))

    # ------------------------------------------------------------------

    def lattice_unit(self) -> float | None:
        """Largest ``u`` with every score value an integer multiple of ``u``.

        ``None`` for continuous families or incommensurate scores.
        """
        if not self.is_discrete:
            return None
        _, _, r = self.support_atoms()
        r = r[r != 0.0]
        ref = float(np.max(np.abs(r)))
        ratios = []
        for v in r:
            q = Fraction(float(v) / ref).limit_denominator(1000)
            if abs(float(q) - v / ref) > 1e-12:
                return None
            ratios.append(q)
        den = 1
        for q in ratios:
            den = den * q.denominator // math.gcd(den, q.denominator)
        nums = [int(q * den) for q in ratios]
        g = 0
        for n in nums:
            g = math.gcd(g, abs(n))
        return ref * g / den

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "theta0": self.theta0}
        if self.atoms is not None:
            out["atoms"] = [list(a) for a in self.atoms]
        if self.is_gaussian:
            out["quadrature_nodes"] = self.quadrature_nodes
        return out


def gaussian_expectation(fn: Callable, sd: float, breakpoints: Iterable[float],
                         legendre: tuple[np.ndarray, np.ndarray] | None = None,
                         n_nodes: int = 64) -> float:
    """``E[fn(Z)]`` for ``Z ~ N(0, sd^2)`` with ``fn`` smooth between ``breakpoints``."""
    if legendre is None:
        legendre = np.polynomial.legendre.leggauss(n_nodes)
    t, w = legendre
    lo, hi = -_TAIL_SD * sd, _TAIL_SD * sd
    cuts = sorted({lo, hi, *(float(k) for k in breakpoints if lo < k < hi)})
    total = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (b - a)
        z = a + half * (t + 1.0)
        vals = np.asarray(fn(z), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericError("fn returned non-finite values at quadrature nodes")
        dens = np.exp(-0.5 * (z / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        total.append(half * float(np.dot(w, vals * dens)))
    return math.fsum(total)


def _check_stage(stage) -> int:
    n = int(stage)
    if n < 1 or n != stage:
        raise DomainError("stage must be a positive integer")
    return n


def bernoulli_mean(theta0: float) -> ObservationModel:
    return ObservationModel(Kind.BERNOULLI, theta0)


def normal_mean(theta0: float = 0.0, quadrature_nodes: int = 64) -> ObservationModel:
    return ObservationModel(Kind.NORMAL, theta0, quadrature_nodes=quadrature_nodes)


def poisson_mean(theta0: float) -> ObservationModel:
    return ObservationModel(Kind.POISSON, theta0)


def triangular_normal(theta0: float = 0.0, quadrature_nodes: int = 64) -> ObservationModel:
    return ObservationModel(Kind.TRIANGULAR, theta0, quadrature_nodes=quadrature_nodes)


def custom_discrete(atoms: Sequence[Sequence[float]], theta0: float = 0.0) -> ObservationModel:
    return ObservationModel(Kind.CUSTOM, theta0, atoms=tuple(tuple(a) for a in atoms))
