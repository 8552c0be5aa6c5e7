"""Exact backward induction for truncated stopping rules on finite outcome trees.

Everything is kept in the form normalised by the null path probability, so
the stopping payoff of a history is ``g(z_n - b)`` and sampling adds ``c``
per stage:

    V_N = g(z_N - b),   V_n = min(g(z_n - b), c + E_0[V_{n+1} | history]).

The optimal truncated value is ``c + E_0[V_1]``.  Histories of length ``n``
are stored level by level in lexicographic order of their atom indices, so
the children of entry ``i`` at level ``n`` are entries ``i*J .. i*J + J - 1``
at level ``n + 1``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, UnsupportedModelError, ValidationError
from .model import ObservationModel
from .rho import g

MAX_ATOMS = 8
MAX_HORIZON = 20
MAX_TREE = 1 << 22
ENUMERATION_LIMIT = 1 << 20
_CHUNK = 1 << 14


@dataclass(frozen=True)
class _Tree:
    outcomes: np.ndarray
    probs: np.ndarray
    z: list[np.ndarray]
    weight: list[np.ndarray]

    @property
    def width(self) -> int:
        return self.outcomes.size

    def histories(self, n: int):
        return itertools.product(self.outcomes.tolist(), repeat=n)


def _tree(model: ObservationModel, N: int) -> _Tree:
    if not model.is_finite_discrete:
        raise UnsupportedModelError(
            f"{model.kind.value} has no finite outcome tree; use a discrete family")
    N = int(N)
    if N < 1:
        raise ConfigError("horizon N must be at least 1")
    x, p, r = model.support_atoms()
    J = x.size
    if J > MAX_ATOMS:
        raise CapacityError(f"{J} atoms exceed the tree guard of {MAX_ATOMS}")
    if N > MAX_HORIZON:
        raise CapacityError(f"horizon {N} exceeds the tree guard of {MAX_HORIZON}")
    size = sum(J ** n for n in range(1, N + 1))
    if size > MAX_TREE:
        raise CapacityError(f"outcome tree with {size} histories exceeds {MAX_TREE}")
    zs, ws = [np.asarray(r, dtype=float)], [np.asarray(p, dtype=float)]
    for _ in range(1, N):
        zs.append((zs[-1][:, None] + r[None, :]).ravel())
        ws.append((ws[-1][:, None] * p[None, :]).ravel())
    return _Tree(np.asarray(x), np.asarray(p), zs, ws)


@dataclass(frozen=True, eq=False)
class TruncatedPolicy:
    """Optimal rule in the class of rules stopping by stage ``N``.

    ``z[n-1]``, ``V[n-1]`` and ``stop[n-1]`` hold level-``n`` arrays; every
    history of length ``N`` is stopped.
    """

    N: int
    b: float
    c: float
    value: float
    tree: _Tree
    V: list[np.ndarray]
    stop: list[np.ndarray]

    @property
    def z(self) -> list[np.ndarray]:
        return self.tree.z

    def _locate(self, history) -> tuple[int, int]:
        x = self.tree.outcomes.tolist()
        try:
            digits = [x.index(float(v)) for v in history]
        except ValueError:
            raise ValidationError(f"history {history!r} contains a non-atom") from None
        n = len(digits)
        if not 1 <= n <= self.N:
            raise ValidationError(f"history length {n} outside 1..{self.N}")
        idx = 0
        for d in digits:
            idx = idx * self.tree.width + d
        return n, idx

    def stop_for(self, history) -> bool:
        n, i = self._locate(history)
        return bool(self.stop[n - 1][i])

    def value_at(self, history) -> float:
        n, i = self._locate(history)
        return float(self.V[n - 1][i])

    def stop_map(self) -> dict[tuple, bool]:
        """Stop flags of all internal histories (length ``< N``)."""
        out = {}
        for n in range(1, self.N):
            out.update(zip(self.tree.histories(n), self.stop[n - 1].tolist()))
        return out

    def value_map(self) -> dict[tuple, float]:
        out = {}
        for n in range(1, self.N + 1):
            out.update(zip(self.tree.histories(n), self.V[n - 1].tolist()))
        return out

    def operating_characteristics(self) -> dict[str, float]:
        """Exact ``asn``, ``alpha`` and ``beta_dot`` of the policy under the null,
        with the rejection rule ``z >= b`` applied at stopping."""
        asn, alpha, bdot = [], [], []
        reach = np.ones(self.tree.width)
        for n in range(1, self.N + 1):
            stop = self.stop[n - 1]
            w = self.tree.weight[n - 1] * reach * stop
            z = self.z[n - 1]
            rej = z >= self.b
            asn.append(n * w)
            alpha.append(w * rej)
            bdot.append(w * rej * z)
            reach = np.repeat(reach * ~stop, self.tree.width)
        return {key: math.fsum(np.concatenate(v)) for key, v in
                (("asn", asn), ("alpha", alpha), ("beta_dot", bdot))}

    def write_csv(self, fh) -> None:
        """Depth-ordered rows ``history, z, stop, V``."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["history", "z", "stop", "V"])
        for n in range(1, self.N + 1):
            for h, z, s, v in zip(self.tree.histories(n), self.z[n - 1], self.stop[n - 1],
                                  self.V[n - 1]):
                writer.writerow([" ".join(repr(x) for x in h), repr(float(z)), int(s),
                                 repr(float(v))])


def backward_induction(model: ObservationModel, b: float, c: float, N: int) -> TruncatedPolicy:
    """Optimal truncated rule by backward induction; ties stop."""
    b, c = float(b), float(c)
    if not c > 0:
        raise ConfigError("sampling cost c must be positive")
    tree = _tree(model, N)
    N = int(N)
    J, p = tree.width, tree.probs
    V = [None] * N
    stop = [None] * N
    V[N - 1] = g(tree.z[N - 1] - b)
    stop[N - 1] = np.ones(J ** N, dtype=bool)
    for n in range(N - 1, 0, -1):
        cont = c + V[n].reshape(-1, J) @ p
        here = g(tree.z[n - 1] - b)
        stop[n - 1] = here <= cont
        V[n - 1] = np.where(stop[n - 1], here, cont)
    value = c + float(p @ V[0])
    return TruncatedPolicy(N, b, c, value, tree, V, stop)


def _flags_from_map(tree: _Tree, stop_map, N: int) -> list[np.ndarray]:
    flags = []
    for n in range(1, N):
        level = []
        for h in tree.histories(n):
            if h not in stop_map:
                raise ValidationError(f"stop map has no entry for history {h!r}")
            level.append(bool(stop_map[h]))
        flags.append(np.array(level, dtype=bool))
    flags.append(np.ones(tree.width ** N, dtype=bool))
    return flags


def evaluate_L_truncated(model: ObservationModel, stop_map, b: float, c: float,
                         N: int) -> float:
    """Exact Lagrange objective of a truncated rule, with the optimal decision
    ``reject iff z >= b`` and the null as the sample-size measure."""
    b, c = float(b), float(c)
    tree = _tree(model, N)
    N = int(N)
    flags = _flags_from_map(tree, stop_map, N)
    terms = []
    reach = np.ones(tree.width)
    for n in range(1, N + 1):
        s = flags[n - 1]
        w = tree.weight[n - 1] * reach
        terms.append(w[s] * (c * n + g(tree.z[n - 1][s] - b)))
        reach = np.repeat(reach * ~s, tree.width)
    return math.fsum(np.concatenate(terms))


def brute_force_min(model: ObservationModel, b: float, c: float, N: int,
                    limit: int = ENUMERATION_LIMIT, return_rule: bool = False):
    """Minimum of the truncated objective over every deterministic stopping rule.

    Rules are bit patterns over the internal histories (bit set = stop).  With
    ``return_rule`` the minimising rule is returned as a stop map as well.
    """
    b, c = float(b), float(c)
    tree = _tree(model, N)
    N = int(N)
    J = tree.width
    sizes = [J ** n for n in range(1, N)]
    H = sum(sizes)
    if 2 ** H > limit:
        raise CapacityError(f"2^{H} stopping rules exceed the enumeration limit {limit}")
    payoff = [tree.weight[n - 1] * (c * n + g(tree.z[n - 1] - b)) for n in range(1, N + 1)]
    offsets = np.cumsum([0] + sizes)
    shifts = np.arange(H, dtype=np.int64)
    best, best_rule = math.inf, 0
    for start in range(0, 2 ** H, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, 2 ** H), dtype=np.int64)
        bits = ((k[:, None] >> shifts[None, :]) & 1).astype(bool)
        total = np.zeros(k.size)
        reach = np.ones((k.size, J))
        for n in range(1, N):
            s = bits[:, offsets[n - 1]:offsets[n]]
            total += (reach * s) @ payoff[n - 1]
            reach = np.repeat(reach * ~s, J, axis=1)
        total += reach @ payoff[N - 1]
        i = int(np.argmin(total))
        if total[i] < best:
            best, best_rule = float(total[i]), int(k[i])
    if not return_rule:
        return best
    rule = {}
    bit = 0
    for n in range(1, N):
        for h in tree.histories(n):
            rule[h] = bool((best_rule >> bit) & 1)
            bit += 1
    return best, rule
