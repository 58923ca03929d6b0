"""Command-line entry point.

Subcommands:

* ``pds <scenario>`` - solve the Pre-Dispatch and emit the exchange table
* ``ets <scenario> --case C1.2-`` - solve one transactions case (reuses a
  previously emitted Pre-Dispatch table when present in the output dir)
* ``suite <scenario>`` - all eight cases plus the comparative report
* ``validate <scenario>`` - schema, connectivity and an oracle spot-check
* ``report <outdir>`` - render figures from previously emitted CSV files

Exit codes: 0 ok, 2 infeasible, 3 scenario/schema error, 4 solver failure.
``MICROLEM_TOL_SCALE`` multiplies all solver tolerances (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .market import CaseConfig
from .network import ModelError
from .pipeline import (PDS_EXCHANGE_CSV, PdsRun, StageError, load_pds_exchange,
                       run_ets, run_pds, run_suite)
from .scenario import ScenarioError, benchmark_path, load_scenario


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", nargs="?", default=None,
                   help="scenario YAML (defaults to the bundled benchmark)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--verbose", action="store_true", help="solver chatter")
    p.add_argument("--figures", action="store_true",
                   help="also render figures next to the CSV output")


def _load(args) -> "Scenario":
    path = args.scenario or benchmark_path()
    return load_scenario(path)


def _maybe_figures(args, outdir: str) -> None:
    if getattr(args, "figures", False):
        from .report import render_report
        render_report(outdir)


def cmd_pds(args) -> int:
    scenario = _load(args)
    run_pds(scenario, args.out, args.verbose)
    _maybe_figures(args, args.out)
    print("pre-dispatch written to %s" % args.out)
    return 0


def cmd_ets(args) -> int:
    scenario = _load(args)
    case = CaseConfig.from_label(args.case,
                                 seller_pool=scenario.default_case.seller_pool)
    exchange_csv = os.path.join(args.out, PDS_EXCHANGE_CSV)
    if os.path.exists(exchange_csv):
        p_hat, roles, objectives = load_pds_exchange(exchange_csv,
                                                     scenario.role_tolerance)
        pds = run_pds_from_files(scenario, p_hat, roles, objectives)
    else:
        pds = run_pds(scenario, args.out, args.verbose)
    case_dir = os.path.join(args.out, args.case.replace("+", "p").replace("-", "m"))
    run = run_ets(scenario, case, pds, case_dir, args.verbose)
    _maybe_figures(args, case_dir)
    print("case %s objective %r written to %s" % (case.label, run.objective, case_dir))
    return 0


def run_pds_from_files(scenario, p_hat, roles, objectives) -> PdsRun:
    """Pre-dispatch stand-in rebuilt from an emitted exchange table."""
    return PdsRun(solutions={}, dispatch={}, p_hat=p_hat, roles=roles,
                  objectives=objectives)


def cmd_suite(args) -> int:
    scenario = _load(args)
    suite = run_suite(scenario, args.out, args.verbose)
    for name, ok in suite.orderings:
        print("%s: %s" % ("PASS" if ok else "FAIL", name))
    _maybe_figures(args, args.out)
    return 0 if suite.all_orderings_hold else 1


def cmd_validate(args) -> int:
    from .linear_pf import nonlinear_pf_oracle, solve_linear_pf
    scenario = _load(args)
    print("scenario %r: schema ok, %d microgrids"
          % (scenario.name, len(scenario.microgrids)))
    worst = 0.0
    for mg_id in scenario.mg_ids:
        mg = scenario.microgrids[mg_id]
        peak = int(np.argmax(mg.loads.profile)) + 1
        s_inj = -mg.loads.load_vector(peak)
        v_lin = solve_linear_pf(mg.electrical.aff, s_inj, mg.network.n_nodes)
        v_orc = nonlinear_pf_oracle(mg.electrical.y3p, s_inj, mg.network.n_nodes)
        dev = float(np.max(np.abs(v_lin - v_orc)))
        worst = max(worst, dev)
        print("  mg%d: %d nodes, peak-hour linear-vs-oracle deviation %.3e pu"
              % (mg_id, mg.network.n_nodes, dev))
    print("max deviation %.3e pu" % worst)
    return 0


def cmd_report(args) -> int:
    from .report import render_report
    paths = render_report(args.outdir)
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="microlem",
        description="Two-stage local energy market dispatch for unbalanced "
                    "three-phase microgrids with power-quality constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pds", help="solve the per-microgrid pre-dispatch")
    _add_common(p)
    p.set_defaults(func=cmd_pds)

    p = sub.add_parser("ets", help="solve one energy-transactions case")
    _add_common(p)
    p.add_argument("--case", default="C1.2-",
                   help="case label, e.g. C1.1+ C2.2- (default C1.2-)")
    p.set_defaults(func=cmd_ets)

    p = sub.add_parser("suite", help="run all eight benchmark cases")
    _add_common(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("validate", help="schema + connectivity + oracle check")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render figures from emitted CSVs")
    p.add_argument("outdir", help="directory holding pipeline CSV output")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("scenario error: %s" % exc, file=sys.stderr)
        return 3
    except ModelError as exc:
        print("model error: %s" % exc, file=sys.stderr)
        return 3
    except StageError as exc:
        print("stage error: %s" % exc, file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print("missing file: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
