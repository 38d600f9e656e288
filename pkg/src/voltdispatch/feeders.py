"""Built-in feeder instances and the feeder interchange format.

The interchange format is a JSON document with the following fields
(all numbers parsed as IEEE-754 doubles):

    name        string
    buses       list of {"id": int, "p": float}   (p optional for bus 0)
    lines       list of {"from": int, "to": int, "r": float, "x": float}
    q_lo, q_hi  length-N arrays; null entries mean unbounded
    v_lo, v_hi  length-N arrays of voltage-deviation bounds
    covariance  {"dense": NxN array}
                or {"stddev": length-N array, "correlation": NxN array}
    alpha       joint tolerance in (0,1), optional
    etas        list of per-bus tolerances, optional

``parse_feeder`` raises ParseError for malformed documents (naming the
offending field) and ValidationError (or the named network/covariance
error) for documents that parse but violate an invariant.  Serialization
round-trips exactly: floats are emitted with shortest-repr precision.

Two instances ship with the package:

* ``builtin_four_bus``: a 4-bus line feeder.  Per-segment impedances are
  stored (9 numbers) and the sensitivity matrices are always derived
  from them, never read from disk.  Bounds are the symmetric +/-0.1 p.u.
  band; bus 1 has unbounded reactive capability, buses 2-3 are limited
  to +/-0.2 p.u.
* ``builtin_thirteen_bus``: a single-phase positive-sequence reduction
  of the standard 13-node distribution test feeder.  The reduction is
  repo-canonical (documented below), as is the covariance: the original
  experiment's covariance was never published, so every number produced
  on this feeder is canonical to this repository only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chance import DispatchProblem, VoltageBounds
from .errors import ParseError, ValidationError
from .network import Bus, Line, RadialNetwork, SensitivityMatrices, build_network, sensitivity_matrices
from .uncertainty import GaussianUncertainty, validate_covariance


@dataclass(frozen=True)
class CovarianceSpec:
    """Covariance in one of the two accepted input forms."""

    dense: np.ndarray | None = None
    stddev: np.ndarray | None = None
    correlation: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        return self.correlation * np.outer(self.stddev, self.stddev)

    def __eq__(self, other):
        if not isinstance(other, CovarianceSpec):
            return NotImplemented
        return all(
            (a is None and b is None)
            or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in (
                (self.dense, other.dense),
                (self.stddev, other.stddev),
                (self.correlation, other.correlation),
            )
        )


@dataclass(frozen=True)
class FeederSpec:
    """A complete dispatch instance as read from (or written to) disk."""

    name: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    q_lo: np.ndarray
    q_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    covariance: CovarianceSpec
    alpha: float | None = None
    etas: tuple[float, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, FeederSpec):
            return NotImplemented
        return (
            self.name == other.name
            and self.buses == other.buses
            and self.lines == other.lines
            and np.array_equal(self.q_lo, other.q_lo)
            and np.array_equal(self.q_hi, other.q_hi)
            and np.array_equal(self.v_lo, other.v_lo)
            and np.array_equal(self.v_hi, other.v_hi)
            and self.covariance == other.covariance
            and self.alpha == other.alpha
            and self.etas == other.etas
        )

    @property
    def n(self) -> int:
        return len(self.buses) - 1

    @property
    def p(self) -> np.ndarray:
        return np.array([b.p for b in self.buses[1:]], dtype=float)

    def network(self) -> RadialNetwork:
        return build_network(list(self.buses), list(self.lines))

    def sensitivities(self) -> SensitivityMatrices:
        return sensitivity_matrices(self.network())

    def uncertainty(self) -> GaussianUncertainty:
        return validate_covariance(self.covariance.matrix())

    def problem(self, alpha: float | None = None, eta: float | None = None) -> DispatchProblem:
        return DispatchProblem(
            sens=self.sensitivities(),
            p=self.p,
            q_lo=self.q_lo,
            q_hi=self.q_hi,
            vbounds=VoltageBounds(v_lo=self.v_lo, v_hi=self.v_hi),
            unc=self.uncertainty(),
            alpha=self.alpha if alpha is None else alpha,
            eta=eta,
        )


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------

def _need(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ParseError(f"{where}: missing field '{key}'")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ParseError(f"{where}: field '{key}' must be a number")
        return float(val)
    if not isinstance(val, kind):
        raise ParseError(f"{where}: field '{key}' has wrong type")
    return val


def _bound_array(raw, n: int, key: str, sign: float) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != n:
        raise ParseError(f"field '{key}' must be a list of length {n}")
    out = np.empty(n)
    for k, v in enumerate(raw):
        if v is None:
            out[k] = sign * math.inf
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out[k] = float(v)
        else:
            raise ParseError(f"field '{key}'[{k}] must be a number or null")
    return out


def _float_array(raw, key: str, shape=None) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"field '{key}' must be numeric") from None
    if shape is not None and arr.shape != shape:
        raise ParseError(f"field '{key}' must have shape {shape}, got {arr.shape}")
    return arr


def parse_feeder(text: str) -> FeederSpec:
    """Parse and validate a feeder document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")

    name = _need(doc, "name", str, "feeder")
    raw_buses = _need(doc, "buses", list, "feeder")
    buses = []
    for k, rb in enumerate(raw_buses):
        if not isinstance(rb, dict):
            raise ParseError(f"buses[{k}] must be an object")
        bid = _need(rb, "id", int, f"buses[{k}]")
        p = float(rb.get("p", 0.0))
        buses.append(Bus(id=bid, p=p))
    raw_lines = _need(doc, "lines", list, "feeder")
    lines = []
    for k, rl in enumerate(raw_lines):
        if not isinstance(rl, dict):
            raise ParseError(f"lines[{k}] must be an object")
        try:
            lines.append(
                Line(
                    from_bus=_need(rl, "from", int, f"lines[{k}]"),
                    to_bus=_need(rl, "to", int, f"lines[{k}]"),
                    r=_need(rl, "r", float, f"lines[{k}]"),
                    x=_need(rl, "x", float, f"lines[{k}]"),
                )
            )
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    n = len(buses) - 1
    q_lo = _bound_array(_need(doc, "q_lo", list, "feeder"), n, "q_lo", -1.0)
    q_hi = _bound_array(_need(doc, "q_hi", list, "feeder"), n, "q_hi", +1.0)
    v_lo = _float_array(_need(doc, "v_lo", list, "feeder"), "v_lo", (n,))
    v_hi = _float_array(_need(doc, "v_hi", list, "feeder"), "v_hi", (n,))

    raw_cov = _need(doc, "covariance", dict, "feeder")
    if "dense" in raw_cov:
        cov = CovarianceSpec(dense=_float_array(raw_cov["dense"], "covariance.dense", (n, n)))
    elif "stddev" in raw_cov and "correlation" in raw_cov:
        cov = CovarianceSpec(
            stddev=_float_array(raw_cov["stddev"], "covariance.stddev", (n,)),
            correlation=_float_array(
                raw_cov["correlation"], "covariance.correlation", (n, n)
            ),
        )
    else:
        raise ParseError(
            "field 'covariance' needs 'dense' or 'stddev'+'correlation'"
        )

    alpha = doc.get("alpha")
    if alpha is not None:
        if not isinstance(alpha, (int, float)) or isinstance(alpha, bool):
            raise ParseError("field 'alpha' must be a number")
        alpha = float(alpha)
    raw_etas = doc.get("etas", [])
    if not isinstance(raw_etas, list):
        raise ParseError("field 'etas' must be a list")
    etas = tuple(float(e) for e in raw_etas)

    spec = FeederSpec(
        name=name,
        buses=tuple(buses),
        lines=tuple(lines),
        q_lo=q_lo,
        q_hi=q_hi,
        v_lo=v_lo,
        v_hi=v_hi,
        covariance=cov,
        alpha=alpha,
        etas=etas,
    )
    _validate_spec(spec)
    return spec


def _validate_spec(spec: FeederSpec):
    # network and covariance validators raise their own named errors
    spec.sensitivities()
    spec.uncertainty()
    n = spec.n
    if np.any(spec.v_lo >= spec.v_hi):
        raise ValidationError("voltage bounds must satisfy v_lo < v_hi")
    if np.any(spec.q_lo > spec.q_hi):
        raise ValidationError("reactive bounds must satisfy q_lo <= q_hi")
    for tol in (spec.alpha, *spec.etas):
        if tol is not None and not (0.0 < tol < 1.0):
            raise ValidationError(f"tolerances must lie in (0, 1), got {tol}")
    if spec.covariance.matrix().shape != (n, n):
        raise ValidationError("covariance dimension inconsistent with bus count")


def _jsonable_bound(v: float):
    return None if math.isinf(v) else v


def serialize_feeder(spec: FeederSpec) -> str:
    """Emit the document form; parse(serialize(s)) == s."""
    doc: dict = {
        "name": spec.name,
        "buses": [
            {"id": b.id, "p": b.p} if b.id != 0 else {"id": 0}
            for b in spec.buses
        ],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x}
            for ln in spec.lines
        ],
        "q_lo": [_jsonable_bound(v) for v in spec.q_lo],
        "q_hi": [_jsonable_bound(v) for v in spec.q_hi],
        "v_lo": list(spec.v_lo),
        "v_hi": list(spec.v_hi),
    }
    cov = spec.covariance
    if cov.dense is not None:
        doc["covariance"] = {"dense": [list(row) for row in cov.dense]}
    else:
        doc["covariance"] = {
            "stddev": list(cov.stddev),
            "correlation": [list(row) for row in cov.correlation],
        }
    if spec.alpha is not None:
        doc["alpha"] = spec.alpha
    if spec.etas:
        doc["etas"] = list(spec.etas)
    return json.dumps(doc, indent=2)


def load_feeder(path) -> FeederSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_feeder(fh.read())


# ---------------------------------------------------------------------------
# built-in: 4-bus line feeder
# ---------------------------------------------------------------------------

# Segment impedances chosen so the derived R/X path-sum matrices have
# diagonals (0.1, 0.3, 0.5) and (0.2, 0.39, 0.7): consecutive differences
# of those diagonals give the per-segment values directly.
_FOUR_BUS_SEGMENTS = (
    (0, 1, 0.1, 0.20),
    (1, 2, 0.2, 0.19),
    (2, 3, 0.2, 0.31),
)
_FOUR_BUS_P = (-0.1, -0.2, -0.3)
_FOUR_BUS_CORR = ((1.0, 0.7, 0.0), (0.7, 1.0, 0.0), (0.0, 0.0, 1.0))
_FOUR_BUS_VAR = 0.002
FOUR_BUS_ALPHA = 0.88
FOUR_BUS_ETAS = (0.88 ** (1.0 / 3.0), 0.88)


def builtin_four_bus() -> FeederSpec:
    """4-bus line feeder with correlated noise at buses 1-2.

    Reactive injection is unlimited at bus 1 and limited to +/-0.2 p.u.
    at buses 2 and 3; the voltage band is the symmetric +/-0.1 p.u. (the
    lower bound is an assumption: only the upper bound was ever stated
    for this instance).
    """
    buses = [Bus(0)] + [Bus(i + 1, p) for i, p in enumerate(_FOUR_BUS_P)]
    lines = [Line(a, b, r, x) for a, b, r, x in _FOUR_BUS_SEGMENTS]
    dense = _FOUR_BUS_VAR * np.array(_FOUR_BUS_CORR)
    return FeederSpec(
        name="four-bus-line",
        buses=tuple(buses),
        lines=tuple(lines),
        q_lo=np.array([-math.inf, -0.2, -0.2]),
        q_hi=np.array([math.inf, 0.2, 0.2]),
        v_lo=np.full(3, -0.1),
        v_hi=np.full(3, 0.1),
        covariance=CovarianceSpec(dense=dense),
        alpha=FOUR_BUS_ALPHA,
        etas=FOUR_BUS_ETAS,
    )


# ---------------------------------------------------------------------------
# built-in: 13-bus feeder (single-phase positive-sequence reduction)
# ---------------------------------------------------------------------------

# Repo-canonical reduction of the 13-node distribution test feeder:
#   * positive-sequence line impedance per overhead/underground
#     configuration, approximated as (self - mutual) of the published
#     phase impedance matrices (ohm per mile);
#   * the switch-connected node pair is merged into one bus;
#   * the distributed load on the long trunk section is lumped at a
#     mid-line node, splitting that section 1/3 : 2/3;
#   * the in-line transformer appears as a series impedance on its own
#     base, converted to the system base;
#   * all quantities per-unit on 4.16 kV / 5 MVA.
#
# Bus map: 0 substation, 1 trunk head, 2-3 transformer lateral,
# 4-5 first lateral, 6 mid-line load node, 7 trunk junction (merged
# switch pair), 8 underground lateral, 9 trunk end, 10 second junction,
# 11-12 end laterals.

_V_BASE_KV = 4.16
_S_BASE_MVA = 5.0
_Z_BASE_OHM = _V_BASE_KV**2 / _S_BASE_MVA
_FT_PER_MILE = 5280.0

# positive-sequence ohm/mile per line configuration
_SEQ_OHMS = {
    601: (0.1905, 0.5162),
    602: (0.5946, 0.7578),
    603: (1.1228, 0.8880),
    604: (1.1172, 0.8978),
    605: (1.3292, 1.3475),
    606: (0.4790, 0.4135),
    607: (1.3425, 0.5124),
}

# (from, to, length_ft, config); config None marks the transformer
_THIRTEEN_BUS_SECTIONS = (
    (0, 1, 2000.0, 601),
    (1, 2, 500.0, 602),
    (2, 3, None, None),       # in-line transformer
    (1, 4, 500.0, 603),
    (4, 5, 300.0, 603),
    (1, 6, 667.0, 601),
    (6, 7, 1333.0, 601),
    (7, 8, 500.0, 606),
    (7, 9, 1000.0, 601),
    (7, 10, 300.0, 604),
    (10, 11, 300.0, 605),
    (10, 12, 800.0, 607),
)

# transformer: 1.1 + j2.0 % on its own 0.5 MVA base
_XFMR_PU = (0.011 * _S_BASE_MVA / 0.5, 0.020 * _S_BASE_MVA / 0.5)

# spot loads (kW) at the reduced buses, plus small service loads at
# otherwise passive nodes so every injection is strictly negative
_THIRTEEN_BUS_LOADS_KW = {
    1: 40.0,
    2: 40.0,
    3: 400.0,
    4: 170.0,
    5: 230.0,
    6: 200.0,
    7: 1325.0,   # junction bus carries the merged pair's spot loads
    8: 843.0,
    9: 40.0,
    10: 40.0,
    11: 170.0,
    12: 128.0,
}
_THIRTEEN_BUS_LOAD_MULT = 1.0

# covariance synthesis (documented, seeded):
#   corr(i,k) = exp(-dist(i,k)/CORR_LEN) with dist the |z| path length;
#   sd(i) = SD_BASE * (1 + SD_GROWTH * depth(i)/max_depth) * jitter,
#   jitter uniform in [1-SD_JITTER, 1+SD_JITTER] from the fixed seed.
THIRTEEN_BUS_SD_BASE = 0.022
THIRTEEN_BUS_SD_GROWTH = 0.8
THIRTEEN_BUS_CORR_LEN = 0.5
THIRTEEN_BUS_SD_JITTER = 0.03
THIRTEEN_BUS_COV_SEED = 13
THIRTEEN_BUS_ALPHA = 0.92
THIRTEEN_BUS_ETAS = (0.92 ** (1.0 / 12.0), 0.92, 0.98)
_THIRTEEN_BUS_Q_LIMIT = 0.1


def _thirteen_bus_lines() -> list[Line]:
    lines = []
    for a, b, length_ft, config in _THIRTEEN_BUS_SECTIONS:
        if config is None:
            r, x = _XFMR_PU
        else:
            r_mile, x_mile = _SEQ_OHMS[config]
            miles = length_ft / _FT_PER_MILE
            r = r_mile * miles / _Z_BASE_OHM
            x = x_mile * miles / _Z_BASE_OHM
        lines.append(Line(a, b, r, x))
    return lines


def _electrical_depths(net: RadialNetwork) -> np.ndarray:
    """|z| distance from the substation to each of buses 1..N."""
    depth = np.zeros(net.n + 1)
    for ln in net.lines:
        depth[ln.to_bus] = depth[ln.from_bus] + math.hypot(ln.r, ln.x)
    return depth


def thirteen_bus_covariance(net: RadialNetwork) -> tuple[np.ndarray, np.ndarray]:
    """(stddev, correlation) of the repo-canonical 13-bus noise model."""
    depth = _electrical_depths(net)
    n = net.n
    dist = np.empty((n, n))
    # tree path length between i and k via depths and the common prefix
    paths = []
    for i in range(1, n + 1):
        cur, chain = i, []
        while cur != 0:
            chain.append(cur)
            cur = net.parent[cur]
        paths.append(set(chain))
    for i in range(n):
        for k in range(n):
            common = paths[i] & paths[k]
            shared = sum(
                math.hypot(net.line_to(c).r, net.line_to(c).x) for c in common
            )
            dist[i, k] = depth[i + 1] + depth[k + 1] - 2.0 * shared
    corr = np.exp(-dist / THIRTEEN_BUS_CORR_LEN)
    rng = np.random.Generator(np.random.PCG64(THIRTEEN_BUS_COV_SEED))
    jitter = 1.0 + THIRTEEN_BUS_SD_JITTER * rng.uniform(-1.0, 1.0, size=n)
    rel_depth = depth[1:] / depth[1:].max()
    sd = THIRTEEN_BUS_SD_BASE * (1.0 + THIRTEEN_BUS_SD_GROWTH * rel_depth) * jitter
    return sd, corr


def builtin_thirteen_bus() -> FeederSpec:
    """13-bus feeder with the repo-canonical correlated noise model.

    Every number produced on this instance is canonical to this
    repository: the covariance of the original experiment was never
    published, so only qualitative comparisons carry over.
    """
    lines = _thirteen_bus_lines()
    n = 12
    buses = [Bus(0)] + [
        Bus(i, -_THIRTEEN_BUS_LOADS_KW[i] * _THIRTEEN_BUS_LOAD_MULT / (_S_BASE_MVA * 1000.0))
        for i in range(1, n + 1)
    ]
    net = build_network(buses, lines)
    sd, corr = thirteen_bus_covariance(net)
    return FeederSpec(
        name="thirteen-bus",
        buses=tuple(buses),
        lines=tuple(lines),
        q_lo=np.full(n, -_THIRTEEN_BUS_Q_LIMIT),
        q_hi=np.full(n, _THIRTEEN_BUS_Q_LIMIT),
        v_lo=np.full(n, -0.1),
        v_hi=np.full(n, 0.1),
        covariance=CovarianceSpec(stddev=sd, correlation=corr),
        alpha=THIRTEEN_BUS_ALPHA,
        etas=THIRTEEN_BUS_ETAS,
    )


BUILTIN_FEEDERS = {
    "four-bus": builtin_four_bus,
    "thirteen-bus": builtin_thirteen_bus,
}
