"""Two-stage local energy market: Pre-Dispatch and Energy Transactions.

Pre-Dispatch (PDS) solves each microgrid alone against the upstream
price, subject to the full operational and power-quality constraint
stack.  The sign of the optimal PCC exchange fixes the hourly role of
the microgrid (buyer above tolerance, seller below, idle otherwise) and
its magnitude becomes the role's trading cap.

The Energy Transactions step (ETS) is a single joint program over all
microgrids.  Trade variables exist only for the role-consistent
direction of every configured edge, which enforces the one-role-per-
hour complementarity structurally while keeping the program convex.
Strategy S1 prices microgrid-to-microgrid energy as a buyer cost
(positive coefficient); S2 prices it as seller revenue (negative
coefficient).  Case set C1 values surplus to the upstream operator at
the upstream energy price, C2 at the (lower) surplus price.

All market quantities (trades, caps in the interaction rows, objective
values) are expressed on one common market power base so that per-
microgrid per-unit conventions never mix inside a row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem, SolveOptions, Solution
from .der import (BatterySpec, PvSpec, battery_constraint_rows,
                  pv_constraint_rows)
from .linear_pf import (AffinePowerFlow, LinearizationPoint, flat_profile,
                        linearize, pcc_power_rows, pf_equality_rows,
                        slack_indices, slack_rows)
from .network import HOURS, LoadTable, ModelError, Network, expand_three_phase, build_admittance
from .power_quality import (HarmonicSpectrum, PqLimits,
                            build_harmonic_admittance, hpf_rows,
                            pv_phase_mask, thd_cone_rows, voltage_limit_rows)

BUYER, SELLER, IDLE = 1, -1, 0


@dataclass
class PriceBook:
    """Hourly prices: upstream energy, upstream surplus, per-microgrid."""

    zeta_dso: np.ndarray
    zeta_surplus: np.ndarray
    zeta_mg: dict[int, np.ndarray]

    def __post_init__(self):
        self.zeta_dso = np.asarray(self.zeta_dso, dtype=float)
        self.zeta_surplus = np.asarray(self.zeta_surplus, dtype=float)
        self.zeta_mg = {k: np.asarray(v, dtype=float) for k, v in self.zeta_mg.items()}
        for name, arr in [("dso", self.zeta_dso), ("surplus", self.zeta_surplus),
                          *[("mg%d" % k, v) for k, v in self.zeta_mg.items()]]:
            if arr.shape != (HOURS,):
                raise ModelError("price curve %s must have %d points" % (name, HOURS))
            if np.any(arr < 0):
                raise ModelError("price curve %s has negative entries" % name)

    def effective_surplus(self, case_set: str) -> np.ndarray:
        """C1 pays surplus at the upstream energy price, C2 at the lower one."""
        if case_set == "C1":
            return self.zeta_dso
        if case_set == "C2":
            if np.any(self.zeta_surplus >= self.zeta_dso):
                raise ModelError("case set C2 requires the surplus price to lie "
                                 "strictly below the upstream energy price")
            return self.zeta_surplus
        raise ModelError("unknown case set %r" % case_set)


@dataclass
class CaseConfig:
    case_set: str = "C1"        # C1 | C2
    competitors: int = 2        # 1 -> first seller only, 2 -> both
    strategy: str = "S1"        # S1 | S2
    seller_pool: tuple[int, ...] = (2, 3)

    def __post_init__(self):
        if self.case_set not in ("C1", "C2"):
            raise ModelError("case set must be C1 or C2")
        if self.strategy not in ("S1", "S2"):
            raise ModelError("strategy must be S1 or S2")
        if self.competitors not in (1, 2):
            raise ModelError("competitors sub-case must be 1 or 2")

    @property
    def allowed_sellers(self) -> tuple[int, ...]:
        return self.seller_pool[: self.competitors]

    @property
    def sigma(self) -> float:
        return 1.0 if self.strategy == "S1" else -1.0

    @property
    def label(self) -> str:
        return "%s.%d%s" % (self.case_set, self.competitors,
                            "+" if self.strategy == "S1" else "-")

    @classmethod
    def from_label(cls, label: str, seller_pool=(2, 3)) -> "CaseConfig":
        label = label.strip()
        try:
            case_set, rest = label.split(".")
            competitors = int(rest[:-1])
            strategy = {"+": "S1", "-": "S2"}[rest[-1]]
        except (ValueError, KeyError, IndexError):
            raise ModelError("case label %r is not of the form C1.2-" % label)
        return cls(case_set=case_set, competitors=competitors,
                   strategy=strategy, seller_pool=tuple(seller_pool))


@dataclass
class MicrogridModel:
    """One microgrid's physical data plus its market price curve."""

    network: Network
    loads: LoadTable
    pv: PvSpec
    batteries: BatterySpec
    electrical: "ElectricalModel" = field(init=False, repr=False)

    def __post_init__(self):
        self.electrical = build_electrical(self.network, self.pv)

    @property
    def mg_id(self) -> int:
        return self.network.mg_id


@dataclass
class ElectricalModel:
    """Cached matrices derived from one network."""

    y3p: np.ndarray
    aff: AffinePowerFlow
    y_h: dict[int, np.ndarray]
    mask: np.ndarray


def build_electrical(network: Network, pv: PvSpec,
                     harmonics=(3, 5, 7, 9, 11, 13),
                     skin_effect: bool = False,
                     v_l: np.ndarray | None = None) -> ElectricalModel:
    y3p = expand_three_phase(build_admittance(network))
    point = LinearizationPoint(v_l if v_l is not None
                               else flat_profile(network.n_nodes))
    aff = linearize(y3p, point)
    y_h = {h: build_harmonic_admittance(network, h, skin_effect)
           for h in harmonics}
    mask = pv_phase_mask(network.n_nodes, pv.flat_indices())
    return ElectricalModel(y3p=y3p, aff=aff, y_h=y_h, mask=mask)


@dataclass
class DispatchVars:
    """Variable index arrays of one microgrid's dispatch block."""

    mg_id: int
    n_nodes: int
    v: np.ndarray          # (24, 3n, 2)
    s: np.ndarray          # (24, 3n, 2)
    s_pcc: np.ndarray      # (24, 2)
    p_pcc: np.ndarray      # (24,)
    s_pv: np.ndarray       # (24, npv, 2)
    s_bc: np.ndarray       # (24, nb, 2)
    s_bd: np.ndarray       # (24, nb, 2)
    soe: np.ndarray        # (24, nb)
    v_h: dict[int, np.ndarray]  # h -> (24, 3n, 2)


def _balance_rows(problem: ConicProblem, mg: MicrogridModel,
                  dv: DispatchVars, t: int, family: str) -> None:
    """Power balance -S + S_pv + S_bd - S_bc = S_L at non-slack entries.

    The PCC entries stay unconstrained: their injection is the external
    exchange with the upstream grid.
    """
    n = mg.network.n_nodes
    m = 3 * n
    keep = np.setdiff1d(np.arange(m), slack_indices(n))
    row_of = np.full(m, -1, dtype=np.int64)
    row_of[keep] = np.arange(keep.size)
    s_l = mg.loads.load_vector(t + 1)

    for reim, rhs in ((0, s_l.real[keep]), (1, s_l.imag[keep])):
        rows = [np.arange(keep.size, dtype=np.int64)]
        cols = [dv.s[t, keep, reim]]
        vals = [-np.ones(keep.size)]
        for arr, sign, spec_idx in ((dv.s_pv, 1.0, mg.pv.flat_indices()),
                                    (dv.s_bd, 1.0, mg.batteries.flat_indices()),
                                    (dv.s_bc, -1.0, mg.batteries.flat_indices())):
            if spec_idx.size == 0:
                continue
            rows.append(row_of[spec_idx])
            cols.append(arr[t, :, reim])
            vals.append(np.full(spec_idx.size, sign))
        problem.add_equality_block(np.concatenate(rows), np.concatenate(cols),
                                   np.concatenate(vals), rhs, family)


def build_dispatch_block(problem: ConicProblem, mg: MicrogridModel,
                         limits: PqLimits, spectrum: HarmonicSpectrum) -> DispatchVars:
    """Emit constraint groups X1..X8 of one microgrid over 24 hours."""
    n = mg.network.n_nodes
    m = 3 * n
    tag = ":mg%d" % mg.mg_id
    elec = mg.electrical

    def grid(count, name):
        return problem.add_variables(count, name + tag)

    dv = DispatchVars(
        mg_id=mg.mg_id, n_nodes=n,
        v=grid(HOURS * m * 2, "v").reshape(HOURS, m, 2),
        s=grid(HOURS * m * 2, "s").reshape(HOURS, m, 2),
        s_pcc=grid(HOURS * 2, "s_pcc").reshape(HOURS, 2),
        p_pcc=grid(HOURS, "p_pcc"),
        s_pv=grid(HOURS * mg.pv.count * 2, "s_pv").reshape(HOURS, mg.pv.count, 2),
        s_bc=grid(HOURS * mg.batteries.count * 2, "s_bc").reshape(HOURS, mg.batteries.count, 2),
        s_bd=grid(HOURS * mg.batteries.count * 2, "s_bd").reshape(HOURS, mg.batteries.count, 2),
        soe=grid(HOURS * mg.batteries.count, "soe").reshape(HOURS, mg.batteries.count),
        v_h={h: grid(HOURS * m * 2, "v_h%d" % h).reshape(HOURS, m, 2)
             for h in spectrum.harmonics},
    )

    for t in range(HOURS):
        pf_equality_rows(problem, elec.aff, dv.v[t], dv.s[t],
                         family="power_flow" + tag)
        slack_rows(problem, dv.v[t], n, family="slack_voltage" + tag)
        pcc_power_rows(problem, dv.s[t], n, dv.s_pcc[t], dv.p_pcc[t],
                       family="pcc_power" + tag)
        _balance_rows(problem, mg, dv, t, family="power_balance" + tag)
        for h in spectrum.harmonics:
            hpf_rows(problem, elec.y_h[h], elec.y3p, spectrum.ratio(h),
                     elec.mask, dv.v[t], dv.v_h[h][t], n,
                     family="harmonic_flow" + tag)
        vh_stack = np.stack([dv.v_h[h][t] for h in spectrum.harmonics])
        thd_cone_rows(problem, vh_stack, dv.v[t], limits.thd_max, n,
                      family="thd_cone" + tag)
        voltage_limit_rows(problem, dv.v[t], limits, n,
                           family="voltage_limit" + tag)

    pv_constraint_rows(problem, mg.pv, dv.s_pv, family="pv_limits" + tag)
    battery_constraint_rows(problem, mg.batteries, dv.soe, dv.s_bc, dv.s_bd,
                            family="battery" + tag)
    return dv


def build_pds(mg: MicrogridModel, prices: PriceBook, limits: PqLimits,
              spectrum: HarmonicSpectrum,
              market_base: float) -> tuple[ConicProblem, DispatchVars]:
    """Per-microgrid Pre-Dispatch: minimize the upstream energy bill.

    The objective is scaled to the market base so per-microgrid optima
    add up consistently with the joint transactions step.
    """
    problem = ConicProblem(name="pds-mg%d" % mg.mg_id)
    dv = build_dispatch_block(problem, mg, limits, spectrum)
    beta = mg.network.base_power / market_base
    problem.add_objective_terms(dv.p_pcc, prices.zeta_dso * beta)
    return problem, dv


@dataclass
class RoleSchedule:
    """Hourly market role and trading cap (own-base pu) per microgrid."""

    roles: dict[int, np.ndarray]   # +1 buyer / -1 seller / 0 idle
    caps: dict[int, np.ndarray]    # nonnegative magnitudes
    tolerance: float

    def role(self, mg_id: int, t: int) -> int:
        return int(self.roles[mg_id][t - 1])

    def cap(self, mg_id: int, t: int) -> float:
        return float(self.caps[mg_id][t - 1])


def extract_roles(p_hat: dict[int, np.ndarray],
                  tolerance: float = 1e-7) -> RoleSchedule:
    """Classify each (microgrid, hour) from the PDS exchange optimum."""
    roles, caps = {}, {}
    for mg_id, p in p_hat.items():
        p = np.asarray(p, dtype=float)
        role = np.where(p > tolerance, BUYER, np.where(p < -tolerance, SELLER, IDLE))
        roles[mg_id] = role.astype(np.int8)
        caps[mg_id] = np.where(role == IDLE, 0.0, np.abs(p))
    return RoleSchedule(roles=roles, caps=caps, tolerance=tolerance)


@dataclass
class TradeVars:
    """Market-layer variable indices of the joint transactions problem."""

    dso_buy: dict[int, dict[int, int]]           # mg -> {t0: var}
    dso_sell: dict[int, dict[int, int]]
    trades: dict[tuple[int, int], dict[int, int]]  # (seller, buyer) -> {t0: var}


def interaction_rows(problem: ConicProblem, dispatch: dict[int, DispatchVars],
                     roles: RoleSchedule, betas: dict[int, float],
                     edges: list[tuple[int, int]]) -> TradeVars:
    """Create role-consistent trade variables and the PCC linkage rows.

    For a buyer hour the PCC import (market base) equals upstream
    purchases plus incoming trades and is boxed by the PDS demand cap;
    for a seller hour the export equals upstream surplus plus outgoing
    trades and is boxed by the surplus cap.  Variables for the opposite
    role are never created, so simultaneous buy/sell is excluded
    structurally.  Idle hours pin the exchange to zero.
    """
    tv = TradeVars(dso_buy={i: {} for i in dispatch},
                   dso_sell={i: {} for i in dispatch},
                   trades={})
    for (i, j) in edges:
        if i not in dispatch or j not in dispatch:
            raise ModelError("trade edge (%s,%s) references unknown microgrid" % (i, j))
        tv.trades[(i, j)] = {}

    for mg_id, dv in dispatch.items():
        beta = betas[mg_id]
        role_arr = roles.roles[mg_id]
        cap_arr = roles.caps[mg_id]
        for t0 in range(HOURS):
            role = int(role_arr[t0])
            cap = float(cap_arr[t0])
            p_idx = dv.p_pcc[t0]
            if role == IDLE:
                problem.set_bounds([p_idx], lb=0.0, ub=0.0)
                continue
            if role == BUYER:
                problem.set_bounds([p_idx], lb=0.0, ub=cap)
                buy = problem.add_variables(1, "P_dso_to_mg%d[t%d]" % (mg_id, t0 + 1),
                                            lb=0.0)[0]
                tv.dso_buy[mg_id][t0] = buy
                incoming = [buy]
                for (si, bj) in tv.trades:
                    if bj == mg_id and int(roles.roles[si][t0]) == SELLER:
                        q = tv.trades[(si, bj)].get(t0)
                        if q is None:
                            q = problem.add_variables(
                                1, "P_mg%d_to_mg%d[t%d]" % (si, bj, t0 + 1), lb=0.0)[0]
                            tv.trades[(si, bj)][t0] = q
                        incoming.append(q)
                idx = np.array([p_idx] + incoming)
                coef = np.array([beta] + [-1.0] * len(incoming))
                problem.add_equality(idx, coef, 0.0, "interaction:mg%d" % mg_id)
            else:  # SELLER
                problem.set_bounds([p_idx], lb=-cap, ub=0.0)
                sell = problem.add_variables(1, "P_mg%d_to_dso[t%d]" % (mg_id, t0 + 1),
                                             lb=0.0)[0]
                tv.dso_sell[mg_id][t0] = sell
                outgoing = [sell]
                for (si, bj) in tv.trades:
                    if si == mg_id and int(roles.roles[bj][t0]) == BUYER:
                        q = tv.trades[(si, bj)].get(t0)
                        if q is None:
                            q = problem.add_variables(
                                1, "P_mg%d_to_mg%d[t%d]" % (si, bj, t0 + 1), lb=0.0)[0]
                            tv.trades[(si, bj)][t0] = q
                        outgoing.append(q)
                idx = np.array([p_idx] + outgoing)
                coef = np.array([beta] + [1.0] * len(outgoing))
                problem.add_equality(idx, coef, 0.0, "interaction:mg%d" % mg_id)
    return tv


def build_ets(mgs: dict[int, MicrogridModel], roles: RoleSchedule,
              prices: PriceBook, config: CaseConfig, limits: PqLimits,
              spectrum: HarmonicSpectrum, market_base: float,
              ) -> tuple[ConicProblem, dict[int, DispatchVars], TradeVars]:
    """Joint Energy Transactions problem over all microgrids."""
    problem = ConicProblem(name="ets-%s" % config.label)
    dispatch = {mg_id: build_dispatch_block(problem, mg, limits, spectrum)
                for mg_id, mg in sorted(mgs.items())}
    betas = {mg_id: mg.network.base_power / market_base
             for mg_id, mg in mgs.items()}
    edges = [(i, j) for i in config.allowed_sellers
             for j in sorted(mgs) if j != i and i in mgs]
    tv = interaction_rows(problem, dispatch, roles, betas, edges)

    zeta0 = prices.zeta_dso
    zeta_hat = prices.effective_surplus(config.case_set)
    sigma = config.sigma
    for mg_id in dispatch:
        for t0, var in tv.dso_buy[mg_id].items():
            problem.add_objective_terms([var], [zeta0[t0]])
        for t0, var in tv.dso_sell[mg_id].items():
            problem.add_objective_terms([var], [-zeta_hat[t0]])
    for (si, bj), per_hour in tv.trades.items():
        zeta_e = prices.zeta_mg[si]  # seller's price on the edge
        for t0, var in per_hour.items():
            problem.add_objective_terms([var], [sigma * zeta_e[t0]])
    return problem, dispatch, tv


@dataclass
class TradeLedger:
    """Cleared quantities (market-base pu) of one transactions solve."""

    dso_to_mg: dict[int, np.ndarray]
    mg_to_dso: dict[int, np.ndarray]
    trades: dict[tuple[int, int], np.ndarray]

    def mg_trade_total(self) -> float:
        return float(sum(arr.sum() for arr in self.trades.values()))


def extract_ledger(solution: Solution, tv: TradeVars,
                   mg_ids: list[int]) -> TradeLedger:
    def fill(per_hour: dict[int, int]) -> np.ndarray:
        out = np.zeros(HOURS)
        for t0, var in per_hour.items():
            out[t0] = solution.x[var]
        return out

    return TradeLedger(
        dso_to_mg={i: fill(tv.dso_buy[i]) for i in mg_ids},
        mg_to_dso={i: fill(tv.dso_sell[i]) for i in mg_ids},
        trades={edge: fill(per_hour) for edge, per_hour in tv.trades.items()},
    )


def settlement_report(ledger: TradeLedger, prices: PriceBook,
                      case_set: str) -> dict[int, dict[str, np.ndarray]]:
    """Hourly purchase cost, revenue and profit per microgrid.

    Cost sums the prices of every supplying agent times the delivered
    energy; revenue adds the upstream surplus payment to the sales
    income at the seller's own price; profit is their difference.
    """
    zeta0 = prices.zeta_dso
    zeta_hat = prices.effective_surplus(case_set)
    out = {}
    for mg_id in ledger.dso_to_mg:
        cost = zeta0 * ledger.dso_to_mg[mg_id]
        revenue = zeta_hat * ledger.mg_to_dso[mg_id]
        for (si, bj), q in ledger.trades.items():
            if bj == mg_id:
                cost = cost + prices.zeta_mg[si] * q
            if si == mg_id:
                revenue = revenue + prices.zeta_mg[si] * q
        out[mg_id] = {"cost": cost, "revenue": revenue,
                      "profit": revenue - cost}
    return out
