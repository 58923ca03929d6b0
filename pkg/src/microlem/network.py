"""Electrical model of one microgrid.

Builds the graph incidence matrix, the per-unit nodal admittance matrix
(series branch impedances only, no shunts), its three-phase block
expansion, and hourly complex load vectors.  Node 0 is always the
PCC/slack node.  All outputs are plain numpy arrays, immutable by
convention once built, and safe to share across threads.

Per-unit convention: per-phase powers are normalized by the microgrid
``base_power`` (the full three-phase transformer rating), voltages by
the line-to-neutral ``base_voltage``.  The impedance base is therefore
``base_voltage**2 / base_power``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PHASES = ("a", "b", "c")
HOURS = 24


class ModelError(ValueError):
    """Invalid network or load data."""


@dataclass(frozen=True)
class Branch:
    from_node: int
    to_node: int
    r_ohm: float
    x_ohm: float

    @property
    def z_ohm(self) -> complex:
        return complex(self.r_ohm, self.x_ohm)


@dataclass
class Network:
    """Graph plus bases for one microgrid; node 0 is the PCC."""

    mg_id: int
    name: str
    n_nodes: int
    branches: list[Branch]
    base_power: float       # VA, three-phase rating
    base_voltage: float     # V, line-to-neutral
    frequency: float = 50.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ModelError("microgrid %s needs at least the PCC and one node" % self.name)
        if self.base_power <= 0 or self.base_voltage <= 0:
            raise ModelError("bases must be positive")
        for br in self.branches:
            if not (0 <= br.from_node < self.n_nodes and 0 <= br.to_node < self.n_nodes):
                raise ModelError("branch %s-%s references unknown node"
                                 % (br.from_node, br.to_node))
            if br.r_ohm < 0:
                raise ModelError("branch %s-%s has negative resistance"
                                 % (br.from_node, br.to_node))
            if abs(br.z_ohm) == 0.0:
                raise ModelError("branch %s-%s has zero impedance"
                                 % (br.from_node, br.to_node))
        unreachable = self.unreachable_nodes()
        if unreachable:
            raise ModelError("nodes %s unreachable from the PCC"
                             % ",".join(str(k) for k in unreachable))

    @property
    def nodes(self) -> list[int]:
        return list(range(self.n_nodes))

    @property
    def z_base(self) -> float:
        return self.base_voltage ** 2 / self.base_power

    def unreachable_nodes(self) -> list[int]:
        adj = [[] for _ in range(self.n_nodes)]
        for br in self.branches:
            adj[br.from_node].append(br.to_node)
            adj[br.to_node].append(br.from_node)
        seen = {0}
        stack = [0]
        while stack:
            k = stack.pop()
            for m in adj[k]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return [k for k in range(self.n_nodes) if k not in seen]


def phase_index(n_nodes: int, node: int, phase: int | str) -> int:
    """Flat index of (node, phase) in a phase-major 3n vector."""
    p = PHASES.index(phase) if isinstance(phase, str) else int(phase)
    return p * n_nodes + int(node)


def build_incidence(network: Network) -> np.ndarray:
    """Branch-by-node incidence matrix: +1 at from-node, -1 at to-node."""
    a = np.zeros((len(network.branches), network.n_nodes), dtype=int)
    for e, br in enumerate(network.branches):
        a[e, br.from_node] = 1
        a[e, br.to_node] = -1
    return a


def branch_admittances(network: Network, harmonic: int = 1,
                       skin_effect: bool = False) -> np.ndarray:
    """Per-unit series admittance of each branch at a harmonic order.

    Branch impedance scales as ``r + j h x``; with ``skin_effect`` the
    resistance additionally grows like ``sqrt(h)``.
    """
    zb = network.z_base
    h = int(harmonic)
    r_scale = np.sqrt(h) if skin_effect else 1.0
    z = np.array([complex(br.r_ohm * r_scale, br.x_ohm * h) / zb
                  for br in network.branches])
    if np.any(z == 0):
        raise ModelError("zero-impedance branch makes the branch admittance singular")
    return 1.0 / z


def build_admittance(network: Network, harmonic: int = 1,
                     skin_effect: bool = False) -> np.ndarray:
    """Nodal admittance ``A^T diag(y_branch) A`` in per-unit (n x n).

    Series elements only, so the result is a symmetric weighted graph
    Laplacian (every row sums to zero).
    """
    a = build_incidence(network).astype(float)
    yp = branch_admittances(network, harmonic, skin_effect)
    return a.T @ np.diag(yp) @ a


def expand_three_phase(y: np.ndarray) -> np.ndarray:
    """Three-phase expansion ``I_3 (x) Y``: phases are decoupled blocks."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ModelError("admittance matrix must be square")
    return np.kron(np.eye(3), y)


@dataclass
class LoadTable:
    """Maximum per-phase apparent loads (kVA) plus a daily profile.

    The complex load at hour ``t`` is ``rating * profile[t] *
    (pf + j sqrt(1 - pf^2))`` converted to per-unit on the microgrid
    base power.
    """

    network: Network
    entries: dict[tuple[int, str], float]   # (node, phase) -> kVA
    power_factor: float
    profile: np.ndarray                      # 24 values in [0, 1]
    _template: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.profile = np.asarray(self.profile, dtype=float)
        if self.profile.shape != (HOURS,):
            raise ModelError("load profile must have %d points" % HOURS)
        if np.any(self.profile < 0) or np.any(self.profile > 1):
            raise ModelError("load profile values must lie in [0, 1]")
        if not 0 < self.power_factor <= 1:
            raise ModelError("power factor must lie in (0, 1]")
        n = self.network.n_nodes
        tmpl = np.zeros(3 * n)
        for (node, phase), kva in self.entries.items():
            if not 0 <= node < n:
                raise ModelError("load at unknown node %s" % node)
            if kva < 0:
                raise ModelError("negative load rating at node %s" % node)
            tmpl[phase_index(n, node, phase)] += kva * 1e3 / self.network.base_power
        self._template = tmpl

    def phasor(self) -> complex:
        pf = self.power_factor
        return complex(pf, np.sqrt(1.0 - pf * pf))

    def load_vector(self, t: int) -> np.ndarray:
        """Complex 3n load vector at hour t (1..24), per-unit."""
        if not 1 <= t <= HOURS:
            raise ModelError("hour %s out of range 1..%d" % (t, HOURS))
        return self._template * self.profile[t - 1] * self.phasor()

    def node_total_pu(self, node: int) -> float:
        n = self.network.n_nodes
        return float(sum(self._template[p * n + node] for p in range(3)))
