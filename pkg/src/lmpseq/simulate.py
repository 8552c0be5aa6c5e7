"""Seeded Monte Carlo evaluation of sequential designs.

Paths are advanced in vectorised chunks.  Observation ``n`` of replication
``k`` is the inverse CDF of the counter-based uniform ``U(seed, k, n)``, so
results do not depend on chunking or thread count, and runs at different
``theta`` use common random numbers.

``beta_dot`` (the slope of the power function at ``theta0``) is estimated
with the score identity ``E_0[1{reject} z_tau]``; the central finite
difference of the power curve is available as a cross-check.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ObservationModel
from .rng import counter_uniforms
from .thresholds import TestDesign

DEFAULT_CAP = 1_000_000
CHUNK = 1 << 16
BIAS_FLAG = 1e-3


@dataclass(frozen=True)
class SimConfig:
    n_rep: int = 10_000
    seed: int = 0
    cap: int = DEFAULT_CAP
    theta_sim: float | None = None
    theta_asn: float | None = None
    threads: int | None = None

    def validate(self, min_rep: int = 1) -> None:
        if int(self.n_rep) < min_rep:
            raise ConfigError(f"n_rep must be at least {min_rep}, got {self.n_rep}")
        if int(self.cap) < 1:
            raise ConfigError(f"cap must be at least 1, got {self.cap}")
        if self.threads is not None and int(self.threads) < 1:
            raise ConfigError("threads must be positive")


def worker_count(requested: int | None = None) -> int:
    """Requested thread count, capped by ``LMPSEQ_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    env = os.environ.get("LMPSEQ_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"LMPSEQ_THREADS must be an integer, got {env!r}") from None
    return max(1, int(n))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Per-replication outcomes, in replication order."""

    tau: np.ndarray
    reject: np.ndarray
    z_tau: np.ndarray
    capped: np.ndarray

    def __len__(self) -> int:
        return self.tau.size


def _run_chunk(design: TestDesign, model: ObservationModel, theta: float, seed: int,
               start: int, stop: int, cap: int):
    reps = np.arange(start, stop, dtype=np.uint64)
    m = reps.size
    z = np.zeros(m)
    tau = np.zeros(m, dtype=np.int64)
    capped = np.zeros(m, dtype=bool)
    active = np.arange(m)
    n = 0
    while active.size:
        n += 1
        u = counter_uniforms(seed, reps[active], n)
        za = z[active] + model.score(model.quantile(theta, u, stage=n), stage=n)
        z[active] = za
        go_on = design.continues(za, n)
        if n >= cap:
            capped[active[go_on]] = True
            go_on = np.zeros_like(go_on)
        tau[active[~go_on]] = n
        active = active[go_on]
    reject = design.rejects(z) & ~capped
    return tau, reject, z, capped


def simulate_paths(design: TestDesign, model: ObservationModel, theta: float | None,
                   cfg: SimConfig) -> PathBatch:
    """Run ``cfg.n_rep`` replications of ``design`` with observations drawn under ``theta``.

    Runs reaching ``cfg.cap`` stop there, count as accepting and are flagged.
    """
    cfg.validate()
    theta = model.theta0 if theta is None else model.check_theta(theta)
    n_rep, cap = int(cfg.n_rep), int(cfg.cap)
    bounds = [(s, min(s + CHUNK, n_rep)) for s in range(0, n_rep, CHUNK)]
    workers = min(worker_count(cfg.threads), len(bounds))

    def job(se):
        return _run_chunk(design, model, theta, int(cfg.seed), se[0], se[1], cap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(se) for se in bounds]
    tau, reject, z, capped = (np.concatenate(a) for a in zip(*parts))
    return PathBatch(tau, reject, z, capped)


def run_one(design: TestDesign, model: ObservationModel, theta: float,
            rng: np.random.Generator, cap: int = DEFAULT_CAP):
    """A single path drawn with a caller-owned generator.

    Returns ``(tau, reject, z_tau, capped)``.
    """
    if int(cap) < 1:
        raise ConfigError("cap must be at least 1")
    theta = model.check_theta(theta)
    z = 0.0
    n = 0
    while True:
        n += 1
        z += model.score(model.sample(theta, rng, stage=n), stage=n)
        if not design.continues(z, n):
            return n, design.rejects(z), z, False
        if n >= cap:
            return n, False, z, True


def mean_se(values: np.ndarray) -> tuple[float, float]:
    """Compensated mean and the standard error ``sd / sqrt(n)``."""
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = math.fsum(v) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class SimulationReport:
    design_id: str
    b: float
    c: float
    theta_sim: float
    theta_asn: float
    n_rep: int
    seed: int
    cap: int
    alpha_hat: float
    alpha_se: float
    asn_hat: float
    asn_se: float
    beta_dot_hat: float
    beta_dot_se: float
    power_hat: float
    power_se: float
    capped_fraction: float
    biased: bool = field(default=False)

    def to_record(self) -> dict:
        return asdict(self)


def estimate(design: TestDesign, model: ObservationModel, cfg: SimConfig) -> SimulationReport:
    """Size, average sample number and power slope of ``design``.

    ``alpha`` and ``beta_dot`` use paths under ``theta0``; the ASN uses
    ``theta_asn`` and ``power`` uses ``theta_sim`` (both default ``theta0``).
    """
    cfg.validate(min_rep=100)
    t0 = model.theta0
    theta_asn = t0 if cfg.theta_asn is None else model.check_theta(cfg.theta_asn)
    theta_sim = t0 if cfg.theta_sim is None else model.check_theta(cfg.theta_sim)
    null = simulate_paths(design, model, t0, cfg)
    alpha, alpha_se = mean_se(null.reject)
    bdot, bdot_se = mean_se(null.reject * null.z_tau)
    capped = [null.capped]
    if theta_asn == t0:
        asn_batch = null
    else:
        asn_batch = simulate_paths(design, model, theta_asn, cfg)
        capped.append(asn_batch.capped)
    asn, asn_se = mean_se(asn_batch.tau)
    if theta_sim == t0:
        power, power_se = alpha, alpha_se
    else:
        sim_batch = simulate_paths(design, model, theta_sim, cfg)
        capped.append(sim_batch.capped)
        power, power_se = mean_se(sim_batch.reject)
    capped_fraction = max(float(np.mean(cf)) for cf in capped)
    return SimulationReport(
        design_id=design.design_id, b=design.b, c=design.c,
        theta_sim=theta_sim, theta_asn=theta_asn, n_rep=int(cfg.n_rep), seed=int(cfg.seed),
        cap=int(cfg.cap), alpha_hat=alpha, alpha_se=alpha_se, asn_hat=asn, asn_se=asn_se,
        beta_dot_hat=bdot, beta_dot_se=bdot_se, power_hat=power, power_se=power_se,
        capped_fraction=capped_fraction, biased=capped_fraction > BIAS_FLAG)


def power_curve(design: TestDesign, model: ObservationModel, thetas,
                cfg: SimConfig) -> list[tuple[float, float, float]]:
    """Rows ``(theta, power, se)`` on common random numbers."""
    rows = []
    for theta in thetas:
        batch = simulate_paths(design, model, theta, cfg)
        rows.append((float(theta), *mean_se(batch.reject)))
    return rows


def power_slope_fd(design: TestDesign, model: ObservationModel, h: float,
                   cfg: SimConfig) -> tuple[float, float]:
    """Central difference ``(beta(theta0 + h) - beta(theta0 - h)) / 2h`` and its
    standard error, paired across common random numbers."""
    t0 = model.theta0
    up = simulate_paths(design, model, t0 + h, cfg)
    down = simulate_paths(design, model, t0 - h, cfg)
    diff = (up.reject.astype(float) - down.reject.astype(float)) / (2.0 * h)
    return mean_se(diff)


def write_power_csv(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["theta", "power", "se"])
    for theta, power, se in rows:
        writer.writerow([repr(theta), repr(power), repr(se)])
