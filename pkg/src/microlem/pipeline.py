"""Stage orchestration and result-file emission.

``run_pds`` solves the per-microgrid Pre-Dispatch problems and writes
the exchange/role schedule; ``run_ets`` solves one transactions case
and writes the trade ledger, settlement, voltage, state-of-energy and
THD tables plus a human-readable summary; ``run_suite`` runs the eight
benchmark cases and evaluates the ordering properties between their
objective values.  Stages communicate through the emitted CSV files so
that a case can be re-run without re-solving the Pre-Dispatch.

All files are plain CSV with full-precision (round-trippable) floats;
given the same scenario file the pipeline is fully deterministic.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .conic import SolveOptions, Solution
from .market import (BUYER, IDLE, SELLER, CaseConfig, DispatchVars,
                     RoleSchedule, TradeLedger, TradeVars, build_ets,
                     build_pds, extract_ledger, extract_roles,
                     settlement_report)
from .network import HOURS, PHASES
from .power_quality import thd_percent
from .scenario import Scenario

PDS_EXCHANGE_CSV = "pds_exchange.csv"
CASE_ORDER = ("C1.1+", "C1.2+", "C1.1-", "C1.2-",
              "C2.1+", "C2.2+", "C2.1-", "C2.2-")


class StageError(RuntimeError):
    """A stage could not produce a usable solution."""

    def __init__(self, message: str, exit_code: int = 4):
        super().__init__(message)
        self.exit_code = exit_code


def _fmt(x) -> str:
    return repr(float(x))


def solve_options(scenario: Scenario, verbose: bool = False) -> SolveOptions:
    kw = {}
    mapping = {"tol_feas": "tol_feas", "tol_gap_abs": "tol_gap_abs",
               "tol_gap_rel": "tol_gap_rel"}
    for src, dst in mapping.items():
        if src in scenario.solver:
            kw[dst] = scenario.solver[src]
    if "max_iter" in scenario.solver:
        kw["max_iter"] = int(scenario.solver["max_iter"])
    return SolveOptions.from_env(verbose=verbose, **kw)


# ---------------------------------------------------------------------------
# Pre-Dispatch
# ---------------------------------------------------------------------------

@dataclass
class PdsRun:
    solutions: dict[int, Solution]
    dispatch: dict[int, DispatchVars]
    p_hat: dict[int, np.ndarray]     # own-base pu exchange optimum
    roles: RoleSchedule
    objectives: dict[int, float]     # market-base objective per microgrid

    @property
    def total_objective(self) -> float:
        return float(sum(self.objectives.values()))


def run_pds(scenario: Scenario, outdir: str | None = None,
            verbose: bool = False) -> PdsRun:
    """Solve Pre-Dispatch for every microgrid; emit exchange schedule."""
    opts = solve_options(scenario, verbose)
    solutions, dispatch, p_hat, objectives = {}, {}, {}, {}
    for mg_id in scenario.mg_ids:
        mg = scenario.microgrids[mg_id]
        problem, dv = build_pds(mg, scenario.price_book, scenario.limits,
                                scenario.spectrum, scenario.market_base)
        sol = problem.solve(opts)
        if sol.status != "optimal":
            if outdir:
                _write_infeasibility(outdir, "pds-mg%d" % mg_id, sol)
            code = 2 if sol.status == "infeasible" else 4
            raise StageError(
                "pre-dispatch for microgrid %d ended %s%s"
                % (mg_id, sol.status, _family_note(sol)), exit_code=code)
        solutions[mg_id] = sol
        dispatch[mg_id] = dv
        p_hat[mg_id] = sol.value(dv.p_pcc)
        objectives[mg_id] = sol.objective
    roles = extract_roles(p_hat, scenario.role_tolerance)
    run = PdsRun(solutions=solutions, dispatch=dispatch, p_hat=p_hat,
                 roles=roles, objectives=objectives)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        _write_pds_exchange(os.path.join(outdir, PDS_EXCHANGE_CSV), scenario, run)
        for mg_id in scenario.mg_ids:
            _write_dispatch_tables(outdir, scenario, mg_id,
                                   solutions[mg_id], dispatch[mg_id],
                                   prefix="pds_")
    return run


def _write_pds_exchange(path: str, scenario: Scenario, run: PdsRun) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["microgrid", "hour", "p_exchange_pu", "role", "cap_pu",
                    "objective_market_base"])
        for mg_id in scenario.mg_ids:
            role_names = {BUYER: "buyer", SELLER: "seller", IDLE: "idle"}
            for t in range(HOURS):
                w.writerow([mg_id, t + 1, _fmt(run.p_hat[mg_id][t]),
                            role_names[int(run.roles.roles[mg_id][t])],
                            _fmt(run.roles.caps[mg_id][t]),
                            _fmt(run.objectives[mg_id])])


def load_pds_exchange(path: str, tolerance: float) -> tuple[dict[int, np.ndarray],
                                                            RoleSchedule,
                                                            dict[int, float]]:
    """Rebuild the role schedule from an emitted exchange table."""
    p_hat: dict[int, np.ndarray] = {}
    objectives: dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            mg_id = int(row["microgrid"])
            p_hat.setdefault(mg_id, np.zeros(HOURS))
            p_hat[mg_id][int(row["hour"]) - 1] = float(row["p_exchange_pu"])
            objectives[mg_id] = float(row["objective_market_base"])
    return p_hat, extract_roles(p_hat, tolerance), objectives


# ---------------------------------------------------------------------------
# Energy Transactions
# ---------------------------------------------------------------------------

@dataclass
class EtsRun:
    case: CaseConfig
    solution: Solution
    dispatch: dict[int, DispatchVars]
    trade_vars: TradeVars
    ledger: TradeLedger

    @property
    def objective(self) -> float:
        return self.solution.objective


def run_ets(scenario: Scenario, case: CaseConfig, pds: PdsRun,
            outdir: str | None = None, verbose: bool = False) -> EtsRun:
    """Solve one transactions case against a finished Pre-Dispatch."""
    opts = solve_options(scenario, verbose)
    problem, dispatch, tv = build_ets(
        scenario.microgrids, pds.roles, scenario.price_book, case,
        scenario.limits, scenario.spectrum, scenario.market_base)
    sol = problem.solve(opts)
    if sol.status != "optimal":
        if outdir:
            _write_infeasibility(outdir, "ets-%s" % case.label, sol)
        code = 2 if sol.status == "infeasible" else 4
        raise StageError("transactions case %s ended %s%s"
                         % (case.label, sol.status, _family_note(sol)),
                         exit_code=code)
    ledger = extract_ledger(sol, tv, scenario.mg_ids)
    run = EtsRun(case=case, solution=sol, dispatch=dispatch,
                 trade_vars=tv, ledger=ledger)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        _write_trades(os.path.join(outdir, "trades.csv"), scenario, case, run)
        _write_settlement(os.path.join(outdir, "settlement.csv"), scenario, case, run)
        for mg_id in scenario.mg_ids:
            _write_dispatch_tables(outdir, scenario, mg_id, sol, dispatch[mg_id])
        _write_summary(os.path.join(outdir, "summary.txt"), scenario, case, run, pds)
    return run


def _family_note(sol: Solution) -> str:
    if not sol.infeasibility_report:
        return ""
    fams = ", ".join("%s (weight %.3g)" % fw for fw in sol.infeasibility_report[:4])
    return "; certificate concentrates on: " + fams


def _write_infeasibility(outdir: str, stage: str, sol: Solution) -> None:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "infeasibility_%s.txt" % stage)
    with open(path, "w") as fh:
        fh.write("stage: %s\nstatus: %s (solver: %s)\n"
                 % (stage, sol.status, sol.solver_status))
        if sol.infeasibility_report:
            fh.write("constraint families by certificate weight:\n")
            for fam, w in sol.infeasibility_report:
                fh.write("  %-32s %.6g\n" % (fam, w))
        else:
            fh.write("no certificate available\n")


def _write_trades(path: str, scenario: Scenario, case: CaseConfig,
                  run: EtsRun) -> None:
    zeta0 = scenario.price_book.zeta_dso
    zeta_hat = scenario.price_book.effective_surplus(case.case_set)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "seller", "buyer", "quantity_pu", "price", "cashflow"])
        for t in range(HOURS):
            for mg_id in scenario.mg_ids:
                q = run.ledger.dso_to_mg[mg_id][t]
                if q > 0:
                    w.writerow([t + 1, "dso", "mg%d" % mg_id, _fmt(q),
                                _fmt(zeta0[t]), _fmt(zeta0[t] * q)])
            for (si, bj) in sorted(run.ledger.trades):
                q = run.ledger.trades[(si, bj)][t]
                if q > 0:
                    price = scenario.price_book.zeta_mg[si][t]
                    w.writerow([t + 1, "mg%d" % si, "mg%d" % bj, _fmt(q),
                                _fmt(price), _fmt(price * q)])
            for mg_id in scenario.mg_ids:
                q = run.ledger.mg_to_dso[mg_id][t]
                if q > 0:
                    w.writerow([t + 1, "mg%d" % mg_id, "dso", _fmt(q),
                                _fmt(zeta_hat[t]), _fmt(zeta_hat[t] * q)])


def _write_settlement(path: str, scenario: Scenario, case: CaseConfig,
                      run: EtsRun) -> None:
    rep = settlement_report(run.ledger, scenario.price_book, case.case_set)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["microgrid", "hour", "cost", "revenue", "profit"])
        for mg_id in scenario.mg_ids:
            for t in range(HOURS):
                w.writerow([mg_id, t + 1,
                            _fmt(rep[mg_id]["cost"][t]),
                            _fmt(rep[mg_id]["revenue"][t]),
                            _fmt(rep[mg_id]["profit"][t])])


def _write_dispatch_tables(outdir: str, scenario: Scenario, mg_id: int,
                           sol: Solution, dv: DispatchVars,
                           prefix: str = "") -> None:
    mg = scenario.microgrids[mg_id]
    n = mg.network.n_nodes
    mode = "w" if mg_id == scenario.mg_ids[0] else "a"

    def table(fname, header, row_iter):
        with open(os.path.join(outdir, prefix + fname), mode, newline="") as fh:
            w = csv.writer(fh)
            if mode == "w":
                w.writerow(header)
            for row in row_iter:
                w.writerow(row)

    v_re = sol.x[dv.v[:, :, 0]]
    v_im = sol.x[dv.v[:, :, 1]]

    def volt_rows():
        for t in range(HOURS):
            for k in range(n):
                for p, phase in enumerate(PHASES):
                    q = p * n + k
                    re, im = v_re[t, q], v_im[t, q]
                    yield [mg_id, k, phase, t + 1, _fmt(re), _fmt(im),
                           _fmt(np.hypot(re, im))]

    table("voltages.csv",
          ["microgrid", "node", "phase", "hour", "re", "im", "magnitude"],
          volt_rows())

    s_re = sol.x[dv.s[:, :, 0]]
    s_im = sol.x[dv.s[:, :, 1]]

    def power_rows():
        for t in range(HOURS):
            for k in range(n):
                for p, phase in enumerate(PHASES):
                    q = p * n + k
                    yield [mg_id, k, phase, t + 1,
                           _fmt(s_re[t, q]), _fmt(s_im[t, q])]

    table("powers.csv", ["microgrid", "node", "phase", "hour", "re", "im"],
          power_rows())

    def soe_rows():
        kwh = mg.network.base_power / 1e3
        for t in range(HOURS):
            for j, (node, ph, _, _) in enumerate(mg.batteries.placements):
                yield [mg_id, node, PHASES[ph], t + 1,
                       _fmt(sol.x[dv.soe[t, j]] * kwh)]

    table("soe.csv", ["microgrid", "node", "phase", "hour", "soe_kwh"],
          soe_rows())

    harmonics = sorted(dv.v_h)
    vh = np.stack([sol.x[dv.v_h[h][:, :, 0]] + 1j * sol.x[dv.v_h[h][:, :, 1]]
                   for h in harmonics])  # (H, 24, 3n)
    v_cplx = v_re + 1j * v_im

    def thd_rows():
        for t in range(HOURS):
            thd = thd_percent(vh[:, t, :], v_cplx[t])
            for k in range(n):
                for p, phase in enumerate(PHASES):
                    yield [mg_id, k, phase, t + 1, _fmt(thd[p * n + k])]

    table("thd.csv", ["microgrid", "node", "phase", "hour", "thd_percent"],
          thd_rows())


def _write_summary(path: str, scenario: Scenario, case: CaseConfig,
                   run: EtsRun, pds: PdsRun) -> None:
    with open(path, "w") as fh:
        fh.write("scenario: %s\ncase: %s\n" % (scenario.name, case.label))
        fh.write("objective: %s\n" % _fmt(run.objective))
        fh.write("pds_total_objective: %s\n" % _fmt(pds.total_objective))
        for mg_id in scenario.mg_ids:
            fh.write("pds_objective_mg%d: %s\n" % (mg_id, _fmt(pds.objectives[mg_id])))
        fh.write("mg_trade_total_pu: %s\n" % _fmt(run.ledger.mg_trade_total()))
        fh.write("solver_status: %s\n" % run.solution.solver_status)
        fh.write("equality_residual: %s\n" % _fmt(run.solution.equality_residual))
        fh.write("cone_violation: %s\n" % _fmt(run.solution.cone_violation))
        fh.write("bound_violation: %s\n" % _fmt(run.solution.bound_violation))


# ---------------------------------------------------------------------------
# full suite
# ---------------------------------------------------------------------------

@dataclass
class SuiteRun:
    pds: PdsRun
    cases: dict[str, EtsRun]
    orderings: list[tuple[str, bool]] = field(default_factory=list)

    @property
    def all_orderings_hold(self) -> bool:
        return all(ok for _, ok in self.orderings)


def evaluate_orderings(pds_total: float, ofv: dict[str, float],
                       trade_totals: dict[str, float],
                       rel_tol: float = 1e-6,
                       strict_tol: float = 1e-8) -> list[tuple[str, bool]]:
    """Structural relations between the eight case objective values."""
    checks = []
    scale = max(1.0, abs(pds_total))
    for label in ("C1.1+", "C1.2+"):
        checks.append(("%s equals PDS total" % label,
                       abs(ofv[label] - pds_total) <= rel_tol * scale))
        checks.append(("%s clears no microgrid trades" % label,
                       trade_totals[label] <= 1e-6))
    checks.append(("C1.2- below C1.1-", ofv["C1.2-"] < ofv["C1.1-"] - strict_tol))
    checks.append(("C1.1- below PDS total", ofv["C1.1-"] < pds_total - strict_tol))
    checks.append(("C2.2+ below C2.1+", ofv["C2.2+"] < ofv["C2.1+"] - strict_tol))
    checks.append(("C2.2- below C2.1-", ofv["C2.2-"] < ofv["C2.1-"] - strict_tol))
    for s1, s2 in (("C1.1+", "C1.1-"), ("C1.2+", "C1.2-"),
                   ("C2.1+", "C2.1-"), ("C2.2+", "C2.2-")):
        checks.append(("%s at most %s" % (s2, s1),
                       ofv[s2] <= ofv[s1] + strict_tol * scale))
    return checks


def run_suite(scenario: Scenario, outdir: str,
              verbose: bool = False) -> SuiteRun:
    """All eight cases plus the comparative ordering report."""
    os.makedirs(outdir, exist_ok=True)
    pds = run_pds(scenario, outdir, verbose)
    cases: dict[str, EtsRun] = {}
    for label in CASE_ORDER:
        case = CaseConfig.from_label(label,
                                     seller_pool=scenario.default_case.seller_pool)
        case_dir = os.path.join(outdir, label.replace("+", "p").replace("-", "m"))
        cases[label] = run_ets(scenario, case, pds, case_dir, verbose)

    ofv = {label: run.objective for label, run in cases.items()}
    trade_totals = {label: run.ledger.mg_trade_total()
                    for label, run in cases.items()}
    orderings = evaluate_orderings(pds.total_objective, ofv, trade_totals)

    with open(os.path.join(outdir, "table_cases.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "objective", "mg_trade_total_pu"])
        w.writerow(["PDS", _fmt(pds.total_objective), _fmt(0.0)])
        for label in CASE_ORDER:
            w.writerow([label, _fmt(ofv[label]), _fmt(trade_totals[label])])
    with open(os.path.join(outdir, "orderings.txt"), "w") as fh:
        for name, ok in orderings:
            fh.write("%s: %s\n" % ("PASS" if ok else "FAIL", name))

    return SuiteRun(pds=pds, cases=cases, orderings=orderings)
