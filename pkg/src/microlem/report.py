"""Figure rendering from emitted CSV tables.

Reads the delimited output of a pipeline run and writes PNG figures
alongside it: PCC exchange schedules, cleared trades, battery state of
energy, the nodal-voltage envelope and the per-hour THD maxima.  Only
files present in the directory are plotted, so the same entry point
works for a pre-dispatch directory, a single case directory, or a full
suite directory.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

MG_COLORS = {1: "tab:blue", 2: "tab:orange", 3: "tab:green"}


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _by_mg_hour(rows, value):
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[int(r["microgrid"])][int(r["hour"])].append(float(r[value]))
    return out


def _save(fig, outdir, name, paths):
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)


def render_report(outdir: str) -> list[str]:
    paths: list[str] = []
    hours = range(1, 25)

    f = os.path.join(outdir, "pds_exchange.csv")
    if os.path.exists(f):
        rows = _read(f)
        series = defaultdict(dict)
        for r in rows:
            series[int(r["microgrid"])][int(r["hour"])] = float(r["p_exchange_pu"])
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for mg, per_hour in sorted(series.items()):
            ax.plot(hours, [per_hour[t] for t in hours], marker=".",
                    color=MG_COLORS.get(mg), label="MG%d" % mg)
        ax.axhline(0.0, color="k", lw=0.6)
        ax.set_xlabel("hour")
        ax.set_ylabel("PCC exchange [pu]")
        ax.set_title("Pre-dispatch: demand (+) and surplus (-)")
        ax.legend()
        _save(fig, outdir, "exchange.png", paths)

    f = os.path.join(outdir, "trades.csv")
    if os.path.exists(f):
        rows = _read(f)
        series = defaultdict(lambda: dict.fromkeys(hours, 0.0))
        for r in rows:
            key = "%s->%s" % (r["seller"], r["buyer"])
            series[key][int(r["hour"])] += float(r["quantity_pu"])
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for key in sorted(series):
            style = "--" if key.startswith("mg") else "-"
            ax.plot(hours, [series[key][t] for t in hours], style,
                    marker=".", label=key)
        ax.set_xlabel("hour")
        ax.set_ylabel("energy [pu]")
        ax.set_title("Cleared transactions")
        ax.legend(fontsize=7, ncol=2)
        _save(fig, outdir, "trades.png", paths)

    for stem in ("soe.csv", "pds_soe.csv"):
        f = os.path.join(outdir, stem)
        if not os.path.exists(f):
            continue
        rows = _read(f)
        series = defaultdict(lambda: dict.fromkeys(hours, 0.0))
        for r in rows:
            series[int(r["microgrid"])][int(r["hour"])] += float(r["soe_kwh"])
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for mg, per_hour in sorted(series.items()):
            ax.plot(hours, [per_hour[t] for t in hours], marker=".",
                    color=MG_COLORS.get(mg), label="MG%d" % mg)
        ax.set_xlabel("hour")
        ax.set_ylabel("stored energy [kWh]")
        ax.set_title("Battery state of energy (sum per microgrid)")
        ax.legend()
        _save(fig, outdir, stem.replace(".csv", ".png"), paths)
        break

    for stem in ("voltages.csv", "pds_voltages.csv"):
        f = os.path.join(outdir, stem)
        if not os.path.exists(f):
            continue
        data = _by_mg_hour(_read(f), "magnitude")
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for mg, per_hour in sorted(data.items()):
            ax.fill_between(hours,
                            [min(per_hour[t]) for t in hours],
                            [max(per_hour[t]) for t in hours],
                            alpha=0.3, color=MG_COLORS.get(mg),
                            label="MG%d" % mg)
        ax.axhline(1.05, color="r", lw=0.8, ls=":")
        ax.axhline(0.95, color="r", lw=0.8, ls=":")
        ax.set_xlabel("hour")
        ax.set_ylabel("|V| [pu]")
        ax.set_title("Nodal voltage envelope")
        ax.legend()
        _save(fig, outdir, stem.replace(".csv", ".png"), paths)
        break

    for stem in ("thd.csv", "pds_thd.csv"):
        f = os.path.join(outdir, stem)
        if not os.path.exists(f):
            continue
        data = _by_mg_hour(_read(f), "thd_percent")
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for mg, per_hour in sorted(data.items()):
            ax.plot(hours, [max(per_hour[t]) for t in hours], marker=".",
                    color=MG_COLORS.get(mg), label="MG%d" % mg)
        ax.axhline(8.0, color="r", lw=0.8, ls=":")
        ax.set_xlabel("hour")
        ax.set_ylabel("max nodal THD [%]")
        ax.set_title("Total harmonic distortion")
        ax.legend()
        _save(fig, outdir, stem.replace(".csv", ".png"), paths)
        break

    return paths
