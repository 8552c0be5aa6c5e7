"""Exact operating characteristics of a design for finitely supported families.

The law of the score process restricted to still-running paths is carried
forward as a finite set of atoms ``z -> probability``.  Because a design's
continuation interval is bounded, the set stays small and the running mass
decays geometrically; propagation ends once it drops below ``mass_tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnsupportedModelError
from .model import ObservationModel
from .rho import RhoGrid, g
from .thresholds import TestDesign

_KEY_DECIMALS = 10


def _merge(z: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, first, inv = np.unique(np.round(z, _KEY_DECIMALS), return_index=True,
                              return_inverse=True)
    return z[first], np.bincount(inv, weights=p)


@dataclass(frozen=True)
class ExactMetrics:
    theta: float
    asn: float
    reject_prob: float
    beta_dot: float | None
    residual_mass: float
    steps: int
    survival: list[float] = field(default_factory=list, repr=False)
    regularity: list[float] = field(default_factory=list, repr=False)


def propagate(design: TestDesign, model: ObservationModel, theta: float | None = None,
              rho: RhoGrid | None = None, max_steps: int = 1_000_000,
              mass_tol: float = 1e-15) -> ExactMetrics:
    """Exact ASN and rejection probability of ``design`` under ``theta``.

    Under the null also returns ``beta_dot = E_0[1{reject} z_tau]``; given
    ``rho`` the sequence ``E_0[t_n (rho(z_n - b) - g(z_n - b))]`` over running
    paths is recorded as ``regularity``.
    """
    if not model.is_finite_discrete:
        raise UnsupportedModelError("exact propagation needs a family with finitely many atoms")
    theta = model.theta0 if theta is None else float(theta)
    if max_steps < 1:
        raise ConfigError("max_steps must be positive")
    p = model.atom_probs(theta)
    _, _, r = model.support_atoms()
    z = np.zeros(1)
    w = np.ones(1)
    asn, rej, bdot = [], [], []
    survival, regularity = [], []
    n = 0
    while n < max_steps and w.sum() > mass_tol:
        n += 1
        asn.append(math.fsum(w))
        z, w = _merge((z[:, None] + r[None, :]).ravel(), (w[:, None] * p[None, :]).ravel())
        survival.append(math.fsum(w))
        if rho is not None:
            regularity.append(math.fsum(w * (rho(z - design.b) - g(z - design.b))))
        cont = design.continues(z, n)
        stopped = ~cont
        hit = stopped & design.rejects(z)
        rej.append(math.fsum(w[hit]))
        bdot.append(math.fsum(w[hit] * z[hit]))
        z, w = z[cont], w[cont]
    is_null = theta == model.theta0
    return ExactMetrics(theta, math.fsum(asn), math.fsum(rej),
                        math.fsum(bdot) if is_null else None, math.fsum(w), n,
                        survival, regularity)


def score_sum_law(model: ObservationModel, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Atoms and null probabilities of ``z_N`` for a discrete i.i.d. family."""
    if not model.is_discrete:
        raise UnsupportedModelError("score_sum_law needs a discrete family")
    _, p, r = model.support_atoms()
    z, w = np.zeros(1), np.ones(1)
    for _ in range(int(N)):
        z, w = _merge((z[:, None] + r[None, :]).ravel(), (w[:, None] * p[None, :]).ravel())
    return z, w

