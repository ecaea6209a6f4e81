"""Run configuration: one TOML file fully determines a ``uqft run``.

Layout::

    suite = "gram"            # gram | scatter | cluster | freefield
    seed = 0
    mass = 1.0

    [measure]
    atoms = [[1.0, 1.0]]      # (lambda, weight) pairs

    [quad]                    # any QuadConfig field
    p_sigmas = 4.5

    [[packets]]
    id = "a"
    center = [0.8, 0.0, 0.0]
    width = 2.0
    tau = 0.0

    [[sequences]]
    id = "f"
    scalar = [0.0, 0.0]       # complex numbers are [re, im] or a bare real
    terms = [{ coef = 1.0, packets = ["a", "b"] }]

    [gram]       basis = ["f", ...], tol = 1e-8
    [scatter]    in = [[...]], out = [[...]], widths = [5.0, 10.0], tau = 0.0
    [cluster]    f = "f", g = "g", direction = [0, 0, 1], rhos = [...]
    [freefield]  pairs = [["f", "g"], ...], rtol = 1e-8

    [output]
    directory = "out"
    cache_dir = ""            # optional; empty means the default location

Every positivity and reference check runs in :func:`parse_config`, before
anything touches the disk.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .algebra import FunctionSequence, lsz_packet
from .gram import MAX_BASIS, MAX_PARTICLES
from .kernel import MomentMeasure
from .quad import QuadConfig
from .scatter import ScatterKinematics

SUITES = ("gram", "scatter", "cluster", "freefield")
_QUAD_FIELDS = {f.name: f for f in dataclasses.fields(QuadConfig)}


class ConfigError(ValueError):
    """The configuration file is malformed or violates a constraint."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _real(x, what: str) -> float:
    _require(isinstance(x, (int, float)) and not isinstance(x, bool), f"{what} must be a number")
    _require(math.isfinite(x), f"{what} must be finite")
    return float(x)


def _complex(x, what: str) -> complex:
    if isinstance(x, (list, tuple)):
        _require(len(x) == 2, f"{what} must be a number or [re, im]")
        return complex(_real(x[0], what), _real(x[1], what))
    return complex(_real(x, what))


def _complex_out(z: complex) -> list[float]:
    return [z.real, z.imag]


def _vec3(x, what: str) -> tuple[float, float, float]:
    _require(isinstance(x, (list, tuple)) and len(x) == 3, f"{what} must be a 3-vector")
    return tuple(_real(v, what) for v in x)


def _reals(x, what: str, positive: bool = False, nonneg: bool = False) -> tuple[float, ...]:
    _require(isinstance(x, (list, tuple)) and len(x) > 0, f"{what} must be a nonempty list")
    out = tuple(_real(v, what) for v in x)
    if positive:
        _require(all(v > 0 for v in out), f"{what} entries must be positive")
    if nonneg:
        _require(all(v >= 0 for v in out), f"{what} entries must be nonnegative")
    return out


def _table(raw: dict, key: str) -> dict:
    t = raw.get(key, {})
    _require(isinstance(t, dict), f"[{key}] must be a table")
    return t


def _no_extra(t: dict, allowed: set, where: str) -> None:
    extra = set(t) - allowed
    _require(not extra, f"unknown keys in {where}: {sorted(extra)}")


@dataclass(frozen=True)
class PacketSpec:
    id: str
    center: tuple[float, float, float]
    width: float
    tau: float = 0.0


@dataclass(frozen=True)
class TermSpec:
    coef: complex
    packets: tuple[str, ...]


@dataclass(frozen=True)
class SequenceSpec:
    id: str
    scalar: complex = 0j
    terms: tuple[TermSpec, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    suite: str
    seed: int = 0
    mass: float = 1.0
    atoms: tuple[tuple[float, float], ...] = ()
    quad: dict = field(default_factory=dict)
    packets: tuple[PacketSpec, ...] = ()
    sequences: tuple[SequenceSpec, ...] = ()
    gram: dict = field(default_factory=dict)
    scatter: dict = field(default_factory=dict)
    cluster: dict = field(default_factory=dict)
    freefield: dict = field(default_factory=dict)
    output_dir: str = "out"
    cache_dir: str = ""

    # -- derived objects ---------------------------------------------------

    def measure(self) -> MomentMeasure:
        return MomentMeasure(self.atoms)

    def quad_config(self, **defaults) -> QuadConfig:
        opts = dict(defaults)
        opts.update(self.quad)
        opts["seed"] = self.seed
        return QuadConfig(**opts)

    def build_sequences(self) -> dict[str, FunctionSequence]:
        packets = {p.id: lsz_packet(p.center, p.width, p.tau, self.mass) for p in self.packets}
        out = {}
        for s in self.sequences:
            seq = FunctionSequence(s.scalar)
            for t in s.terms:
                seq = seq + FunctionSequence.product_state([packets[i] for i in t.packets], t.coef)
            out[s.id] = seq
        return out

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"suite": self.suite, "seed": self.seed, "mass": self.mass}
        d["measure"] = {"atoms": [list(a) for a in self.atoms]}
        if self.quad:
            d["quad"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.quad.items()}
        d["packets"] = [
            {"id": p.id, "center": list(p.center), "width": p.width, "tau": p.tau} for p in self.packets
        ]
        d["sequences"] = [
            {
                "id": s.id,
                "scalar": _complex_out(s.scalar),
                "terms": [{"coef": _complex_out(t.coef), "packets": list(t.packets)} for t in s.terms],
            }
            for s in self.sequences
        ]
        for name in ("gram", "scatter", "cluster", "freefield"):
            block = getattr(self, name)
            if block:
                d[name] = _plain(block)
        d["output"] = {"directory": self.output_dir, "cache_dir": self.cache_dir}
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# -- parsing -----------------------------------------------------------------

def _parse_quad(t: dict) -> dict:
    out = {}
    for k, v in t.items():
        _require(k in _QUAD_FIELDS and k != "seed", f"unknown quad setting {k!r}")
        kind = type(_QUAD_FIELDS[k].default)
        if kind is bool:
            _require(isinstance(v, bool), f"quad.{k} must be a boolean")
            out[k] = v
        elif kind is int:
            _require(isinstance(v, int) and not isinstance(v, bool), f"quad.{k} must be an integer")
            out[k] = v
        elif kind is tuple:
            out[k] = _reals(v, f"quad.{k}", positive=True)
        else:
            out[k] = _real(v, f"quad.{k}")
    try:
        QuadConfig(**out)
    except ValueError as exc:
        raise ConfigError(f"invalid [quad]: {exc}") from exc
    return out


def _parse_packets(raw) -> tuple[PacketSpec, ...]:
    _require(isinstance(raw, list), "packets must be an array of tables")
    out = []
    for i, p in enumerate(raw):
        _require(isinstance(p, dict), f"packet #{i} must be a table")
        _no_extra(p, {"id", "center", "width", "tau"}, f"packet #{i}")
        _require(isinstance(p.get("id"), str) and p["id"], f"packet #{i} needs a string id")
        width = _real(p.get("width"), f"packet {p['id']} width")
        _require(width > 0, f"packet {p['id']}: width must be positive")
        out.append(PacketSpec(p["id"], _vec3(p.get("center"), f"packet {p['id']} center"), width,
                              _real(p.get("tau", 0.0), f"packet {p['id']} tau")))
    ids = [p.id for p in out]
    _require(len(set(ids)) == len(ids), "packet ids must be unique")
    return tuple(out)


def _parse_sequences(raw, packet_ids: set) -> tuple[SequenceSpec, ...]:
    _require(isinstance(raw, list), "sequences must be an array of tables")
    out = []
    for i, s in enumerate(raw):
        _require(isinstance(s, dict), f"sequence #{i} must be a table")
        _no_extra(s, {"id", "scalar", "terms"}, f"sequence #{i}")
        _require(isinstance(s.get("id"), str) and s["id"], f"sequence #{i} needs a string id")
        terms = []
        for t in s.get("terms", []):
            _require(isinstance(t, dict), f"sequence {s['id']}: terms must be tables")
            _no_extra(t, {"coef", "packets"}, f"sequence {s['id']} term")
            ids = t.get("packets", [])
            _require(isinstance(ids, list) and all(isinstance(x, str) for x in ids), f"sequence {s['id']}: packets must be ids")
            _require(len(ids) <= MAX_PARTICLES, f"sequence {s['id']}: at most {MAX_PARTICLES} packets per term")
            missing = [x for x in ids if x not in packet_ids]
            _require(not missing, f"sequence {s['id']}: unknown packets {missing}")
            terms.append(TermSpec(_complex(t.get("coef", 1.0), "coef"), tuple(ids)))
        out.append(SequenceSpec(s["id"], _complex(s.get("scalar", 0.0), "scalar"), tuple(terms)))
    ids = [s.id for s in out]
    _require(len(set(ids)) == len(ids), "sequence ids must be unique")
    return tuple(out)


def _parse_suite_block(suite: str, t: dict, seq_ids: set, mass: float) -> dict:
    def seq_ref(x, what):
        _require(isinstance(x, str) and x in seq_ids, f"{what} must name a defined sequence")
        return x

    if suite == "gram":
        _no_extra(t, {"basis", "tol"}, "[gram]")
        basis = t.get("basis")
        _require(isinstance(basis, list) and 1 <= len(basis) <= MAX_BASIS, f"gram.basis needs 1..{MAX_BASIS} sequence ids")
        tol = _real(t.get("tol", 1e-8), "gram.tol")
        _require(tol > 0, "gram.tol must be positive")
        return {"basis": [seq_ref(b, "gram.basis entry") for b in basis], "tol": tol}
    if suite == "scatter":
        _no_extra(t, {"in", "out", "widths", "tau"}, "[scatter]")
        ins = t.get("in")
        outs = t.get("out")
        _require(isinstance(ins, list) and len(ins) >= 2, "scatter.in needs at least two momenta")
        _require(isinstance(outs, list) and len(outs) >= 2, "scatter.out needs at least two momenta")
        block = {
            "in": [list(_vec3(q, "scatter.in momentum")) for q in ins],
            "out": [list(_vec3(q, "scatter.out momentum")) for q in outs],
            "widths": list(_reals(t.get("widths"), "scatter.widths", positive=True)),
            "tau": _real(t.get("tau", 0.0), "scatter.tau"),
        }
        kin = ScatterKinematics(tuple(map(tuple, block["in"])), tuple(map(tuple, block["out"])), mass)
        _require(kin.velocity_spread > 1e-12, "scatter kinematics have zero velocity spread")
        _require(kin.is_non_forward(min(block["widths"])), "scatter kinematics are forward at the smallest width")
        return block
    if suite == "cluster":
        _no_extra(t, {"f", "g", "direction", "rhos"}, "[cluster]")
        direction = _vec3(t.get("direction"), "cluster.direction")
        _require(any(direction), "cluster.direction must be nonzero")
        return {
            "f": seq_ref(t.get("f"), "cluster.f"),
            "g": seq_ref(t.get("g"), "cluster.g"),
            "direction": list(direction),
            "rhos": list(_reals(t.get("rhos"), "cluster.rhos", nonneg=True)),
        }
    _no_extra(t, {"pairs", "rtol"}, "[freefield]")
    pairs = t.get("pairs")
    _require(isinstance(pairs, list) and pairs, "freefield.pairs must be a nonempty list")
    out = []
    for p in pairs:
        _require(isinstance(p, list) and len(p) == 2, "freefield.pairs entries are [f, g]")
        out.append([seq_ref(p[0], "freefield pair"), seq_ref(p[1], "freefield pair")])
    rtol = _real(t.get("rtol", 1e-8), "freefield.rtol")
    _require(rtol > 0, "freefield.rtol must be positive")
    return {"pairs": out, "rtol": rtol}


def parse_config(raw: dict) -> RunConfig:
    _require(isinstance(raw, dict), "configuration must be a table")
    _no_extra(raw, {"suite", "seed", "mass", "measure", "quad", "packets", "sequences", "output", *SUITES}, "top level")
    suite = raw.get("suite")
    _require(suite in SUITES, f"suite must be one of {SUITES}")
    seed = raw.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0, "seed must be a nonnegative integer")
    mass = _real(raw.get("mass", 1.0), "mass")
    _require(mass > 0, "mass must be positive")

    meas = _table(raw, "measure")
    _no_extra(meas, {"atoms"}, "[measure]")
    atoms = []
    for a in meas.get("atoms", []):
        _require(isinstance(a, list) and len(a) == 2, "measure atoms are [lambda, weight] pairs")
        lam, w = _real(a[0], "atom lambda"), _real(a[1], "atom weight")
        _require(w >= 0, "atom weights must be nonnegative")
        atoms.append((lam, w))

    packets = _parse_packets(raw.get("packets", []))
    sequences = _parse_sequences(raw.get("sequences", []), {p.id for p in packets})
    block = _parse_suite_block(suite, _table(raw, suite), {s.id for s in sequences}, mass)
    for other in SUITES:
        _require(other == suite or other not in raw, f"[{other}] given but suite is {suite!r}")

    out = _table(raw, "output")
    _no_extra(out, {"directory", "cache_dir"}, "[output]")
    directory = out.get("directory", "out")
    cache_dir = out.get("cache_dir", "")
    _require(isinstance(directory, str) and directory, "output.directory must be a nonempty string")
    _require(isinstance(cache_dir, str), "output.cache_dir must be a string")

    return RunConfig(
        suite=suite,
        seed=seed,
        mass=mass,
        atoms=tuple(atoms),
        quad=_parse_quad(_table(raw, "quad")),
        packets=packets,
        sequences=sequences,
        output_dir=directory,
        cache_dir=cache_dir,
        **{suite: block},
    )


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    return parse_config(raw)


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return loads(text)
