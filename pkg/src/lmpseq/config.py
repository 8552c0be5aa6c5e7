"""Run configuration: one YAML (or JSON) file, validated with line numbers.

Schema (every block optional except ``family`` and ``design``)::

    family:   {kind, theta0, atoms: [[x, p0, r], ...], quadrature_nodes}
    design:   {b, c, grid: {half_width, nodes}, tol, max_iter, root_tol}
    simulate: {n_rep, seed, cap, theta_sim, theta_asn, theta_list, threads}
    dp:       {N, enumeration_limit}
    verify:   {shifts, fixed_n, n_sigma, tol}
    sweep:    {b: [...], c: [...], objective}
    output:   {format: jsonl | csv, path}
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .dp import ENUMERATION_LIMIT
from .errors import ConfigError, LmpseqError
from .model import Kind, ObservationModel
from .rho import DEFAULT_NODES, GridConfig
from .simulate import DEFAULT_CAP, SimConfig
from .thresholds import DesignConfig


@dataclass(frozen=True)
class DpBlock:
    N: int = 3
    enumeration_limit: int = ENUMERATION_LIMIT


@dataclass(frozen=True)
class VerifyBlock:
    shifts: tuple[float, ...] = (0.25, 0.5)
    fixed_n: tuple[int, ...] = (2, 5, 10)
    n_sigma: float = 3.0
    tol: float = 0.0


@dataclass(frozen=True)
class SweepBlock:
    b: tuple[float, ...] = ()
    c: tuple[float, ...] = ()
    objective: bool = True


@dataclass(frozen=True)
class OutputBlock:
    format: str = "jsonl"
    path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ObservationModel
    b: float
    c: float
    design: DesignConfig
    simulate: SimConfig
    theta_list: tuple[float, ...] = ()
    dp: DpBlock = field(default_factory=DpBlock)
    verify: VerifyBlock = field(default_factory=VerifyBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    source: str = "<config>"

    def with_overrides(self, seed=None, threads=None, fmt=None, path=None) -> "RunConfig":
        sim = self.simulate
        if seed is not None:
            sim = replace(sim, seed=_nonneg_int(seed, "--seed"))
        if threads is not None:
            sim = replace(sim, threads=_pos_int(threads, "--threads"))
        out = self.output
        if fmt is not None:
            out = replace(out, format=fmt)
        if path is not None:
            out = replace(out, path=path)
        return replace(self, simulate=sim, output=out)

    def canonical(self) -> dict:
        """Plain-data view used for hashing; excludes the thread count and
        output location, which do not change results."""
        sim = asdict(self.simulate)
        sim.pop("threads")
        return {
            "family": self.model.describe(),
            "design": {"b": self.b, "c": self.c, "grid": asdict(self.design.grid),
                       "tol": self.design.tol, "max_iter": self.design.max_iter,
                       "root_tol": self.design.root_tol},
            "simulate": {**sim, "theta_list": list(self.theta_list)},
            "dp": asdict(self.dp),
            "verify": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in asdict(self.verify).items()},
            "sweep": {k: list(v) if isinstance(v, tuple) else v
                      for k, v in asdict(self.sweep).items()},
            "format": self.output.format,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------------------------
# YAML node walking with positions


class _Node:
    """A value with the 1-based line it came from."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


_SCALARS = yaml.SafeLoader("")
_EXPONENT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _convert(node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _SCALARS.construct_object(k)
            if not isinstance(key, str):
                raise ConfigError(f"line {k.start_mark.line + 1}: keys must be strings")
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key '{key}'")
            out[key] = _convert(v)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v) for v in node.value], line)
    value = _SCALARS.construct_object(node)
    if isinstance(value, str) and node.style is None and _EXPONENT.fullmatch(value):
        # YAML 1.1 reads 1e-9 (no dot) as a string
        value = float(value)
    return _Node(value, line)


class _Block:
    def __init__(self, node: _Node | None, path: str, src: str, allowed: set[str]):
        self.src = src
        self.path = path
        if node is None:
            self.items, self.line = {}, 0
            return
        if not isinstance(node.value, dict):
            raise ConfigError(f"{src}:{node.line}: '{path}' must be a mapping")
        self.items, self.line = node.value, node.line
        for key, v in self.items.items():
            if key not in allowed:
                raise ConfigError(f"{src}:{v.line}: unknown key '{path}.{key}' "
                                  f"(allowed: {', '.join(sorted(allowed))})")

    def where(self, key):
        n = self.items.get(key)
        return f"{self.src}:{n.line if n is not None else self.line}: {self.path}.{key}"

    def raw(self, key):
        n = self.items.get(key)
        return None if n is None or n.value is None else n.value

    def node(self, key):
        return self.items.get(key)

    def number(self, key, default=None, required=False, check=None, what=""):
        v = self.raw(key)
        if v is None:
            if required:
                raise ConfigError(f"{self.where(key)} is required")
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self.where(key)} must be a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{self.where(key)} must be finite, got {v!r}")
        if check is not None and not check(v):
            raise ConfigError(f"{self.where(key)} must be {what}, got {v!r}")
        return v

    def integer(self, key, default=None, required=False, minimum=None):
        v = self.raw(key)
        if v is None:
            if required:
                raise ConfigError(f"{self.where(key)} is required")
            return default
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{self.where(key)} must be an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(f"{self.where(key)} must be at least {minimum}, got {v}")
        return v

    def numbers(self, key, default=(), check=None, what="", integer=False):
        n = self.node(key)
        if n is None or n.value is None:
            return tuple(default)
        if not isinstance(n.value, list):
            raise ConfigError(f"{self.where(key)} must be a list")
        out = []
        for i, item in enumerate(n.value):
            v = item.value
            label = f"{self.src}:{item.line}: {self.path}.{key}[{i}]"
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{label} must be a finite number, got {v!r}")
            if integer and float(v) != int(v):
                raise ConfigError(f"{label} must be an integer, got {v!r}")
            v = int(v) if integer else float(v)
            if check is not None and not check(v):
                raise ConfigError(f"{label} must be {what}, got {v!r}")
            out.append(v)
        return tuple(out)


def _pos_int(v, name):
    try:
        n = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {v!r}") from None
    if n < 1:
        raise ConfigError(f"{name} must be positive, got {n}")
    return n


def _nonneg_int(v, name):
    try:
        n = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {v!r}") from None
    if n < 0:
        raise ConfigError(f"{name} must be non-negative, got {n}")
    return n


_TOP = {"family", "design", "simulate", "dp", "verify", "sweep", "output"}


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def parse_config(text: str, src: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{src}: malformed config: {exc}") from None
    if root is None:
        raise ConfigError(f"{src}: config is empty")
    top = _Block(_convert(root), "config", src, _TOP)
    top.path = ""
    model = _family(_Block(top.node("family"), "family", src,
                           {"kind", "theta0", "atoms", "quadrature_nodes"}), top, src)
    design_b = _Block(top.node("design"), "design", src,
                      {"b", "c", "grid", "tol", "max_iter", "root_tol"})
    if top.node("design") is None:
        raise ConfigError(f"{src}: block 'design' is required")
    b = design_b.number("b", required=True)
    c = design_b.number("c", required=True, check=lambda v: v > 0, what="positive")
    grid_b = _Block(design_b.node("grid"), "design.grid", src, {"half_width", "nodes"})
    grid = GridConfig(
        half_width=grid_b.number("half_width", check=lambda v: v > 0, what="positive"),
        nodes=grid_b.integer("nodes", DEFAULT_NODES, minimum=8))
    dcfg = DesignConfig(
        grid=grid,
        tol=design_b.number("tol", 1e-9, check=lambda v: v > 0, what="positive"),
        max_iter=design_b.integer("max_iter", 100_000, minimum=1),
        root_tol=design_b.number("root_tol", 1e-10, check=lambda v: v > 0, what="positive"))

    sim_b = _Block(top.node("simulate"), "simulate", src,
                   {"n_rep", "seed", "cap", "theta_sim", "theta_asn", "theta_list", "threads"})
    sim = SimConfig(
        n_rep=sim_b.integer("n_rep", 10_000, minimum=100),
        seed=sim_b.integer("seed", 0, minimum=0),
        cap=sim_b.integer("cap", DEFAULT_CAP, minimum=1),
        theta_sim=_theta(sim_b, "theta_sim", model),
        theta_asn=_theta(sim_b, "theta_asn", model),
        threads=sim_b.integer("threads", None, minimum=1))
    theta_list = sim_b.numbers("theta_list")
    for i, t in enumerate(theta_list):
        _check_theta(model, t, f"{sim_b.where('theta_list')}[{i}]")

    dp_b = _Block(top.node("dp"), "dp", src, {"N", "enumeration_limit"})
    dp = DpBlock(N=dp_b.integer("N", 3, minimum=1),
                 enumeration_limit=dp_b.integer("enumeration_limit", ENUMERATION_LIMIT,
                                                minimum=1))
    ver_b = _Block(top.node("verify"), "verify", src, {"shifts", "fixed_n", "n_sigma", "tol"})
    verify = VerifyBlock(
        shifts=ver_b.numbers("shifts", (0.25, 0.5), check=lambda v: v > 0, what="positive"),
        fixed_n=ver_b.numbers("fixed_n", (2, 5, 10), check=lambda v: v >= 1,
                              what="at least 1", integer=True),
        n_sigma=ver_b.number("n_sigma", 3.0, check=lambda v: v > 0, what="positive"),
        tol=ver_b.number("tol", 0.0, check=lambda v: v >= 0, what="non-negative"))
    sw_b = _Block(top.node("sweep"), "sweep", src, {"b", "c", "objective"})
    objective = sw_b.raw("objective")
    if objective is not None and not isinstance(objective, bool):
        raise ConfigError(f"{sw_b.where('objective')} must be true or false")
    sweep = SweepBlock(b=sw_b.numbers("b", (b,)),
                       c=sw_b.numbers("c", (c,), check=lambda v: v > 0, what="positive"),
                       objective=True if objective is None else objective)
    out_b = _Block(top.node("output"), "output", src, {"format", "path"})
    fmt = out_b.raw("format") or "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"{out_b.where('format')} must be 'jsonl' or 'csv', got {fmt!r}")
    out_path = out_b.raw("path")
    if out_path is not None and not isinstance(out_path, str):
        raise ConfigError(f"{out_b.where('path')} must be a string")
    return RunConfig(model, b, c, dcfg, sim, theta_list, dp, verify, sweep,
                     OutputBlock(fmt, out_path), src)


def _family(blk: _Block, top: _Block, src: str) -> ObservationModel:
    if top.node("family") is None:
        raise ConfigError(f"{src}: block 'family' is required")
    kind_raw = blk.raw("kind")
    kinds = [k.value for k in Kind]
    if kind_raw not in kinds:
        raise ConfigError(f"{blk.where('kind')} must be one of {', '.join(kinds)}, "
                          f"got {kind_raw!r}")
    kind = Kind(kind_raw)
    needs_theta = kind in (Kind.BERNOULLI, Kind.POISSON)
    theta0 = blk.number("theta0", None if needs_theta else 0.0, required=needs_theta)
    atoms = None
    if kind is Kind.CUSTOM:
        node = blk.node("atoms")
        if node is None or not isinstance(node.value, list) or not node.value:
            raise ConfigError(
                f"{blk.where('atoms')} must be a non-empty list of [x, p0, r] triples")
        atoms = []
        for i, pair in enumerate(node.value):
            vals = pair.value if isinstance(pair.value, list) else None
            if (vals is None or len(vals) != 3 or any(
                    isinstance(v.value, bool) or not isinstance(v.value, (int, float))
                    for v in vals)):
                raise ConfigError(f"{src}:{pair.line}: family.atoms[{i}] must be [x, p0, r]")
            atoms.append(tuple(float(v.value) for v in vals))
        atoms = tuple(atoms)
    elif blk.node("atoms") is not None:
        raise ConfigError(f"{blk.where('atoms')} is only valid for CustomDiscrete")
    nodes = blk.integer("quadrature_nodes", 64, minimum=4)
    try:
        return ObservationModel(kind, theta0, atoms, nodes)
    except LmpseqError as exc:
        raise ConfigError(f"{blk.where('kind')}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{blk.where('theta0')}: {exc}") from None


def _theta(blk: _Block, key: str, model: ObservationModel):
    v = blk.number(key)
    if v is not None:
        _check_theta(model, v, blk.where(key))
    return v


def _check_theta(model, v, label):
    try:
        model.check_theta(v)
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from None
