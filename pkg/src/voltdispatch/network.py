"""Radial feeder topology and linearized voltage sensitivity matrices.

A feeder is a tree of buses rooted at the substation (bus 0, held at
nominal voltage).  Under the lossless linearization of the branch flow
equations, the deviation of bus voltages from nominal is an affine
function of the nodal injections,

    V = R @ P + X @ Q,

where entry (i, k) of R (resp. X) is the total resistance (reactance)
on the common part of the root paths of buses i and k.  All voltage
quantities in this package are deviations from the 1 p.u. reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadBusId,
    CycleDetected,
    DimensionMismatch,
    DisconnectedBus,
    DuplicateLine,
    NotPositiveDefinite,
)


@dataclass(frozen=True)
class Bus:
    """A bus with its real-power injection (generation minus consumption).

    Bus 0 is the feeder head; its injection is ignored (reference bus).
    """

    id: int
    p: float = 0.0


@dataclass(frozen=True)
class Line:
    """A distribution line (or series element) with per-unit impedance."""

    from_bus: int
    to_bus: int
    r: float
    x: float

    def __post_init__(self):
        if self.r < 0.0 or self.x < 0.0 or (self.r == 0.0 and self.x == 0.0):
            raise ValueError(
                f"line ({self.from_bus},{self.to_bus}): need r >= 0, x >= 0, "
                "not both zero"
            )


@dataclass(frozen=True)
class RadialNetwork:
    """Validated radial feeder.

    ``lines`` are stored in parent->child orientation regardless of the
    input order.  ``parent[i]`` maps every non-root bus to its parent.
    Immutable after construction; safe for concurrent reads.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    parent: dict[int, int] = field(compare=False)

    @property
    def n(self) -> int:
        """Number of non-reference buses N."""
        return len(self.buses) - 1

    @property
    def p(self) -> np.ndarray:
        """Real-power injection vector for buses 1..N."""
        return np.array([b.p for b in self.buses[1:]], dtype=float)

    def line_to(self, i: int) -> Line:
        """The line whose child endpoint is bus ``i``."""
        return self._line_by_child[i]

    @property
    def _line_by_child(self) -> dict[int, Line]:
        return {ln.to_bus: ln for ln in self.lines}


@dataclass(frozen=True)
class SensitivityMatrices:
    """Dense voltage-sensitivity matrices of the linearized flow model.

    Both are symmetric positive definite for positive line impedances.
    """

    R: np.ndarray
    X: np.ndarray

    @property
    def n(self) -> int:
        return self.R.shape[0]


def build_network(buses, lines) -> RadialNetwork:
    """Validate a bus/line list and orient it as a tree rooted at bus 0.

    Raises
    ------
    BadBusId
        Ids not contiguous from 0, or a line references an unknown bus.
    DuplicateLine
        Two lines join the same bus pair.
    CycleDetected, DisconnectedBus
        The line graph is not a tree spanning all buses from bus 0.
    """
    buses = sorted(buses, key=lambda b: b.id)
    if not buses:
        raise BadBusId("empty bus list")
    ids = [b.id for b in buses]
    if ids != list(range(len(buses))):
        raise BadBusId(f"bus ids must be 0..{len(buses) - 1}, got {ids}")

    n_bus = len(buses)
    seen_pairs = set()
    adj: dict[int, list[tuple[int, Line]]] = {i: [] for i in range(n_bus)}
    for ln in lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in adj:
                raise BadBusId(f"line references unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            raise CycleDetected(f"self-loop at bus {ln.from_bus}")
        pair = frozenset((ln.from_bus, ln.to_bus))
        if pair in seen_pairs:
            raise DuplicateLine(f"duplicate line between {tuple(sorted(pair))}")
        seen_pairs.add(pair)
        adj[ln.from_bus].append((ln.to_bus, ln))
        adj[ln.to_bus].append((ln.from_bus, ln))

    # BFS from the root assigns each bus its parent and orients the lines.
    parent: dict[int, int] = {}
    oriented: dict[int, Line] = {}
    visited = {0}
    queue = [0]
    while queue:
        cur = queue.pop(0)
        for nxt, ln in adj[cur]:
            if nxt == parent.get(cur):
                continue
            if nxt in visited:
                raise CycleDetected(
                    f"line ({ln.from_bus},{ln.to_bus}) closes a loop"
                )
            parent[nxt] = cur
            oriented[nxt] = Line(cur, nxt, ln.r, ln.x)
            visited.add(nxt)
            queue.append(nxt)
    missing = set(range(n_bus)) - visited
    if missing:
        raise DisconnectedBus(f"buses unreachable from bus 0: {sorted(missing)}")
    if len(lines) != n_bus - 1:
        # unreachable given the checks above, kept as a guard
        raise CycleDetected("line count inconsistent with a spanning tree")

    ordered = tuple(oriented[i] for i in sorted(oriented))
    return RadialNetwork(buses=tuple(buses), lines=ordered, parent=parent)


def path_to_root(net: RadialNetwork, i: int) -> list[Line]:
    """Lines on the unique path from bus 0 down to bus ``i``, root first."""
    if not (1 <= i <= net.n):
        raise BadBusId(f"bus id {i} outside 1..{net.n}")
    by_child = net._line_by_child
    path = []
    cur = i
    while cur != 0:
        path.append(by_child[cur])
        cur = net.parent[cur]
    path.reverse()
    return path


def sensitivity_matrices(net: RadialNetwork) -> SensitivityMatrices:
    """Build R and X with entry (i,k) summing impedance on the common
    root-path of buses i and k (no factor 2: squared voltages are
    linearized as 2(V_i - V_k) before dividing out)."""
    n = net.n
    # set of line child-ids on each bus's root path
    paths = []
    for i in range(1, n + 1):
        ids = set()
        cur = i
        while cur != 0:
            ids.add(cur)
            cur = net.parent[cur]
        paths.append(ids)
    by_child = net._line_by_child

    R = np.zeros((n, n))
    X = np.zeros((n, n))
    for i in range(n):
        for k in range(i, n):
            common = paths[i] & paths[k]
            r = sum(by_child[c].r for c in common)
            x = sum(by_child[c].x for c in common)
            R[i, k] = R[k, i] = r
            X[i, k] = X[k, i] = x
    for name, M in (("R", R), ("X", X)):
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"{name} is not positive definite; check line impedances"
            ) from None
    return SensitivityMatrices(R=R, X=X)


def voltage_profile(S: SensitivityMatrices, P, Q) -> np.ndarray:
    """Voltage deviation R@P + X@Q for injection vectors of length N."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = S.n
    if P.shape != (n,) or Q.shape != (n,):
        raise DimensionMismatch(
            f"expected injection vectors of shape ({n},), got {P.shape} and {Q.shape}"
        )
    return S.R @ P + S.X @ Q
