"""Distributed energy resources: PV systems and battery storage.

PV output is bounded by an hourly capacity built from the rated
maximum-power-point value, the base irradiance, the irradiance duty
curve, a temperature correction, and the inverter efficiency.  Both PV
and batteries can exchange reactive power; apparent power is capped by
a second-order cone per placement and hour.

Battery state of energy (SoE) follows

    SoE(t+1) = SoE(t) + (eta_c P_c(t) - P_d(t) / eta_d) dt

with cyclic closure over the day and the explicit periodicity row
``SoE(t_last) = SoE(t_ini)``.  Together the two force the net hour-24
flow to zero, which also rules out end-of-horizon free energy.
SoE is tracked in pu-hours of the microgrid base; reports convert back
to kWh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import Aff, ConicProblem
from .network import HOURS, ModelError, Network, phase_index


@dataclass
class EnvCurves:
    """Hourly environment shared by every PV placement of a microgrid."""

    irradiance: np.ndarray           # 24 values in [0, 1.25]
    temperature_c: np.ndarray        # 24 panel temperatures
    temp_coeff_per_k: float = 0.004  # derating per K above 25 C
    inverter_loading: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]))
    inverter_eff: np.ndarray = field(
        default_factory=lambda: np.array([0.90, 0.93, 0.955, 0.968, 0.970, 0.965]))

    def __post_init__(self):
        self.irradiance = np.asarray(self.irradiance, dtype=float)
        self.temperature_c = np.asarray(self.temperature_c, dtype=float)
        if self.irradiance.shape != (HOURS,) or self.temperature_c.shape != (HOURS,):
            raise ModelError("environment curves must have %d points" % HOURS)
        if np.any(self.irradiance < 0) or np.any(self.irradiance > 1.25):
            raise ModelError("irradiance duty values must lie in [0, 1.25]")

    def temp_correction(self) -> np.ndarray:
        over = np.maximum(self.temperature_c - 25.0, 0.0)
        corr = 1.0 - self.temp_coeff_per_k * over
        if np.any(corr <= 0):
            raise ModelError("temperature correction fell to zero or below")
        return corr

    def inverter_efficiency(self, loading) -> np.ndarray:
        """Efficiency as a function of loading ratio (monotone table)."""
        return np.interp(loading, self.inverter_loading, self.inverter_eff)

    def hourly_efficiency(self) -> np.ndarray:
        # loading ratio tracks the irradiance duty curve
        return self.inverter_efficiency(self.irradiance)


@dataclass
class PvSpec:
    """Per-phase PV placements of one microgrid (ratings in kW)."""

    network: Network
    placements: list[tuple[int, int, float]]   # (node, phase_idx, p_mpp_kw)
    curves: EnvCurves
    base_irradiance: float = 0.8               # kW/m^2

    def __post_init__(self):
        for node, phase, kw in self.placements:
            if not 0 <= node < self.network.n_nodes:
                raise ModelError("PV at unknown node %s" % node)
            if kw < 0:
                raise ModelError("negative PV rating at node %s" % node)

    @property
    def count(self) -> int:
        return len(self.placements)

    def flat_indices(self) -> np.ndarray:
        n = self.network.n_nodes
        return np.array([phase_index(n, node, ph)
                         for node, ph, _ in self.placements], dtype=np.int64)

    def capacity_profile(self) -> np.ndarray:
        """Hourly per-unit capacity, shape (24, count)."""
        env = self.curves
        factors = (self.base_irradiance * env.irradiance
                   * env.temp_correction() * env.hourly_efficiency())
        ratings = np.array([kw for _, _, kw in self.placements])
        return np.outer(factors, ratings * 1e3 / self.network.base_power)

    def capacity(self, node: int, phase: int, t: int) -> float:
        """Per-unit PV capacity of one placement at hour t (zero if absent)."""
        if not 1 <= t <= HOURS:
            raise ModelError("hour %s out of range" % t)
        prof = self.capacity_profile()
        for j, (nd, ph, _) in enumerate(self.placements):
            if nd == node and ph == phase:
                return float(prof[t - 1, j])
        return 0.0


def pv_constraint_rows(problem: ConicProblem, spec: PvSpec,
                       s_pv_idx: np.ndarray, family: str = "pv_limits") -> None:
    """Box the active part and cone the apparent power of each placement.

    ``s_pv_idx`` has shape (24, count, 2).  The active power is the real
    component variable itself, so the box becomes its variable bounds;
    the cone ``|s| <= cap(t)`` has a constant head per hour.
    """
    cap = spec.capacity_profile()
    if spec.count == 0:
        return
    for t in range(HOURS):
        problem.set_bounds(s_pv_idx[t, :, 0], lb=0.0, ub=cap[t])
    dim = 3
    count = HOURS * spec.count
    rows = np.arange(count, dtype=np.int64) * dim
    consts = np.zeros(count * dim)
    consts[::dim] = cap.ravel()
    member_rows = np.stack([rows + 1, rows + 2], axis=1).ravel()
    member_cols = s_pv_idx.reshape(count, 2).ravel()
    problem.add_cone_block(family, dim, count,
                           member_rows, member_cols,
                           np.ones(member_cols.size), consts)


@dataclass
class BatterySpec:
    """Per-phase battery placements (energies in kWh, powers in kW)."""

    network: Network
    placements: list[tuple[int, int, float, float]]  # (node, phase, soe_max_kwh, p_max_kw)
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    depth_of_discharge: float = 0.8
    delta_t: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta_charge <= 1 or not 0 < self.eta_discharge <= 1:
            raise ModelError("battery efficiencies must lie in (0, 1]")
        if not 0 < self.depth_of_discharge <= 1:
            raise ModelError("depth of discharge must lie in (0, 1]")
        for node, phase, kwh, kw in self.placements:
            if not 0 <= node < self.network.n_nodes:
                raise ModelError("battery at unknown node %s" % node)
            if kwh <= 0 or kw <= 0:
                raise ModelError("battery at node %s needs positive capacity "
                                 "and power rating" % node)

    @property
    def count(self) -> int:
        return len(self.placements)

    def flat_indices(self) -> np.ndarray:
        n = self.network.n_nodes
        return np.array([phase_index(n, node, ph)
                         for node, ph, _, _ in self.placements], dtype=np.int64)

    def soe_max_pu(self) -> np.ndarray:
        return np.array([kwh for _, _, kwh, _ in self.placements]) \
            * 1e3 / self.network.base_power

    def p_max_pu(self) -> np.ndarray:
        return np.array([kw for _, _, _, kw in self.placements]) \
            * 1e3 / self.network.base_power


def battery_constraint_rows(problem: ConicProblem, spec: BatterySpec,
                            soe_idx: np.ndarray,
                            s_bc_idx: np.ndarray, s_bd_idx: np.ndarray,
                            family: str = "battery") -> None:
    """SoE dynamics, periodicity, boxes and apparent-power cones.

    Index shapes: ``soe_idx`` (24, count); ``s_bc_idx``/``s_bd_idx``
    (24, count, 2).  Emits, per placement:

    * ``SoE(t+1) - SoE(t) - (eta_c P_c(t) - P_d(t)/eta_d) dt = 0`` for
      hours 1..23 plus the cyclic closure at hour 24,
    * ``SoE(24) = SoE(1)``,
    * SoE box ``[(1 - DoD) SoE_max, SoE_max]`` and power boxes
      ``[0, p_max]`` on the active components,
    * cones ``|s_bc| <= p_max`` and ``|s_bd| <= p_max``.
    """
    if spec.count == 0:
        return
    soe_max = spec.soe_max_pu()
    p_max = spec.p_max_pu()
    soe_min = (1.0 - spec.depth_of_discharge) * soe_max
    dt = spec.delta_t
    ec, ed = spec.eta_charge, spec.eta_discharge

    for t in range(HOURS):
        problem.set_bounds(soe_idx[t], lb=soe_min, ub=soe_max)
        problem.set_bounds(s_bc_idx[t, :, 0], lb=0.0, ub=p_max)
        problem.set_bounds(s_bd_idx[t, :, 0], lb=0.0, ub=p_max)

    for t in range(HOURS):
        t_next = (t + 1) % HOURS  # cyclic closure couples hour 24 back to hour 1
        for j in range(spec.count):
            problem.add_equality(
                [soe_idx[t_next, j], soe_idx[t, j],
                 s_bc_idx[t, j, 0], s_bd_idx[t, j, 0]],
                [1.0, -1.0, -ec * dt, dt / ed],
                0.0, family + "_soe")
    for j in range(spec.count):
        problem.add_equality([soe_idx[HOURS - 1, j], soe_idx[0, j]],
                             [1.0, -1.0], 0.0, family + "_continuity")

    dim = 3
    count = HOURS * spec.count
    for s_idx in (s_bc_idx, s_bd_idx):
        rows = np.arange(count, dtype=np.int64) * dim
        consts = np.zeros(count * dim)
        consts[::dim] = np.tile(p_max, HOURS)
        member_rows = np.stack([rows + 1, rows + 2], axis=1).ravel()
        member_cols = s_idx.reshape(count, 2).ravel()
        problem.add_cone_block(family + "_cone", dim, count,
                               member_rows, member_cols,
                               np.ones(member_cols.size), consts)
