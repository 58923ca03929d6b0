"""Versioned YAML scenario schema: loading, validation, model assembly.

A scenario file carries everything a run needs: per-microgrid graphs
with branch impedances in ohms, per-phase load ratings in kVA with a
named daily profile, DER tables (PV kW, battery kWh per phase), the
environment curves, price curves, power-quality limits with the
harmonic spectrum (in percent of fundamental current), market settings
and solver tolerances.  ``schema_version`` gates compatibility.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .der import BatterySpec, EnvCurves, PvSpec
from .market import CaseConfig, MicrogridModel, PriceBook
from .network import HOURS, Branch, LoadTable, ModelError, Network, PHASES
from .power_quality import HarmonicSpectrum, PqLimits

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file failed schema or cross-reference validation."""


@dataclass
class Scenario:
    name: str
    frequency_hz: float
    market_base: float                    # VA
    role_tolerance: float
    price_book: PriceBook
    limits: PqLimits
    spectrum: HarmonicSpectrum
    skin_effect: bool
    microgrids: dict[int, MicrogridModel]
    solver: dict[str, float] = field(default_factory=dict)
    default_case: CaseConfig = field(default_factory=CaseConfig)
    output_dir: str | None = None

    @property
    def mg_ids(self) -> list[int]:
        return sorted(self.microgrids)


def _require(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ScenarioError("missing %r in %s" % (key, ctx))
    return doc[key]


def _curve(doc, key, ctx) -> np.ndarray:
    arr = np.asarray(_require(doc, key, ctx), dtype=float)
    if arr.shape != (HOURS,):
        raise ScenarioError("%s.%s must have %d values" % (ctx, key, HOURS))
    return arr


def _phase_map(entry: dict, unit_scale: float, ctx: str) -> list[tuple[int, float]]:
    out = []
    for p, phase in enumerate(PHASES):
        val = float(entry.get(phase, 0.0))
        if val < 0:
            raise ScenarioError("negative %s rating at %s" % (phase, ctx))
        if val > 0:
            out.append((p, val * unit_scale))
    return out


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc)


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("unsupported schema_version %r (expected %d)"
                            % (version, SCHEMA_VERSION))
    name = str(doc.get("name", "scenario"))
    freq = float(doc.get("frequency_hz", 50.0))

    market = _require(doc, "market", "scenario")
    market_base = float(_require(market, "base_kva", "market")) * 1e3
    role_tol = float(market.get("role_tolerance", 1e-7))

    curves = _require(doc, "price_curves", "scenario")
    for cname, vals in curves.items():
        _curve({"c": vals}, "c", "price_curves.%s" % cname)

    pq = _require(doc, "pq", "scenario")
    harmonics = tuple(int(h) for h in pq.get("harmonics", (3, 5, 7, 9, 11, 13)))
    spectrum_percent = np.asarray(_require(pq, "spectrum_percent", "pq"), dtype=float)
    try:
        spectrum = HarmonicSpectrum(harmonics=harmonics,
                                    psi=spectrum_percent / 100.0)
        limits = PqLimits(thd_max=float(pq.get("thd_max", 0.08)),
                          delta=float(pq.get("voltage_tolerance", 0.05)))
    except ModelError as exc:
        raise ScenarioError(str(exc)) from exc
    skin = bool(pq.get("skin_effect_resistance", False))

    env_doc = _require(doc, "env", "scenario")
    inv = env_doc.get("inverter_efficiency", {})
    env_kwargs = {}
    if inv:
        env_kwargs["inverter_loading"] = np.asarray(inv["loading"], dtype=float)
        env_kwargs["inverter_eff"] = np.asarray(inv["efficiency"], dtype=float)
    try:
        env = EnvCurves(
            irradiance=_curve(env_doc, "irradiance", "env"),
            temperature_c=_curve(env_doc, "temperature_c", "env"),
            temp_coeff_per_k=float(env_doc.get("temp_coeff_per_k", 0.004)),
            **env_kwargs)
    except ModelError as exc:
        raise ScenarioError(str(exc)) from exc
    base_irradiance = float(env_doc.get("base_irradiance", 0.8))

    profiles = _require(doc, "profiles", "scenario")
    bat_defaults = doc.get("battery_defaults", {})
    eta_c = float(bat_defaults.get("eta_charge", 0.95))
    eta_d = float(bat_defaults.get("eta_discharge", 0.95))
    dod = float(bat_defaults.get("depth_of_discharge", 0.8))
    c_rate = float(bat_defaults.get("c_rate", 0.2))

    mg_price_curve = {}
    microgrids: dict[int, MicrogridModel] = {}
    for mg_doc in _require(doc, "microgrids", "scenario"):
        ctx = "microgrid %r" % mg_doc.get("name", mg_doc.get("id"))
        mg_id = int(_require(mg_doc, "id", ctx))
        base_kva = float(_require(mg_doc, "base_kva", ctx))
        base_v = float(_require(mg_doc, "base_voltage_v", ctx))
        branches = [Branch(int(b["from"]), int(b["to"]),
                           float(b["r_ohm"]), float(b["x_ohm"]))
                    for b in _require(mg_doc, "branches", ctx)]
        try:
            net = Network(mg_id=mg_id, name=str(mg_doc.get("name", mg_id)),
                          n_nodes=int(_require(mg_doc, "nodes", ctx)),
                          branches=branches, base_power=base_kva * 1e3,
                          base_voltage=base_v, frequency=freq)
        except ModelError as exc:
            raise ScenarioError("%s: %s" % (ctx, exc)) from exc

        profile_name = str(_require(mg_doc, "profile", ctx))
        if profile_name not in profiles:
            raise ScenarioError("%s references unknown profile %r" % (ctx, profile_name))
        entries = {}
        for load in mg_doc.get("loads", []):
            node = int(_require(load, "node", ctx + " load"))
            if not 0 <= node < net.n_nodes:
                raise ScenarioError("%s: load at unknown node %d" % (ctx, node))
            for p, kva in _phase_map(load, 1.0, ctx + " load node %d" % node):
                entries[(node, PHASES[p])] = kva
        try:
            loads = LoadTable(network=net, entries=entries,
                              power_factor=float(_require(mg_doc, "power_factor", ctx)),
                              profile=np.asarray(profiles[profile_name], dtype=float))
        except ModelError as exc:
            raise ScenarioError("%s: %s" % (ctx, exc)) from exc

        pv_placements = []
        for pv_doc in mg_doc.get("pv", []):
            node = int(_require(pv_doc, "node", ctx + " pv"))
            if not 0 <= node < net.n_nodes:
                raise ScenarioError("%s: PV at unknown node %d" % (ctx, node))
            for p, kw in _phase_map(pv_doc, 1.0, ctx + " pv node %d" % node):
                pv_placements.append((node, p, kw))
        bat_placements = []
        for bat_doc in mg_doc.get("batteries", []):
            node = int(_require(bat_doc, "node", ctx + " battery"))
            if not 0 <= node < net.n_nodes:
                raise ScenarioError("%s: battery at unknown node %d" % (ctx, node))
            rate = float(bat_doc.get("c_rate", c_rate))
            for p, kwh in _phase_map(bat_doc, 1.0, ctx + " battery node %d" % node):
                bat_placements.append((node, p, kwh, rate * kwh))
        try:
            pv = PvSpec(network=net, placements=pv_placements,
                        curves=env, base_irradiance=base_irradiance)
            batteries = BatterySpec(network=net, placements=bat_placements,
                                    eta_charge=eta_c, eta_discharge=eta_d,
                                    depth_of_discharge=dod)
            microgrids[mg_id] = MicrogridModel(network=net, loads=loads,
                                               pv=pv, batteries=batteries)
        except ModelError as exc:
            raise ScenarioError("%s: %s" % (ctx, exc)) from exc

        sell_curve = str(_require(mg_doc, "sell_price", ctx))
        if sell_curve not in curves:
            raise ScenarioError("%s references unknown price curve %r"
                                % (ctx, sell_curve))
        mg_price_curve[mg_id] = np.asarray(curves[sell_curve], dtype=float)

    dso_curve = str(_require(market, "dso_price", "market"))
    surplus_curve = str(_require(market, "dso_surplus_price", "market"))
    for cname in (dso_curve, surplus_curve):
        if cname not in curves:
            raise ScenarioError("market references unknown price curve %r" % cname)
    try:
        price_book = PriceBook(
            zeta_dso=np.asarray(curves[dso_curve], dtype=float),
            zeta_surplus=np.asarray(curves[surplus_curve], dtype=float),
            zeta_mg=mg_price_curve)
    except ModelError as exc:
        raise ScenarioError(str(exc)) from exc

    case_doc = doc.get("case", {})
    default_case = CaseConfig(
        case_set=str(case_doc.get("set", "C1")),
        competitors=int(case_doc.get("competitors", 2)),
        strategy=str(case_doc.get("strategy", "S1")),
        seller_pool=tuple(case_doc.get("seller_pool", (2, 3))))

    return Scenario(
        name=name, frequency_hz=freq, market_base=market_base,
        role_tolerance=role_tol, price_book=price_book, limits=limits,
        spectrum=spectrum, skin_effect=skin, microgrids=microgrids,
        solver={k: float(v) for k, v in doc.get("solver", {}).items()},
        default_case=default_case,
        output_dir=doc.get("output_dir"))


def benchmark_path() -> str:
    """Filesystem path of the bundled three-microgrid benchmark."""
    return str(importlib.resources.files("microlem").joinpath("data/benchmark.yaml"))


def load_benchmark() -> Scenario:
    return load_scenario(benchmark_path())
