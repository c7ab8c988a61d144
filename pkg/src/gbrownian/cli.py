"""Command-line front end.

Config files are INI-style (``[section]`` / ``key = value``); unknown
sections or keys are rejected. Exit codes: 0 ok, 2 config/validation error,
3 numerical failure, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import discrete_gexp as dg
from . import gbm_sim, gnormal, gsde, pde_engine
from .params import GParams, GridSpec, MeanParams
from .sublinear_core import ScenarioSpace, check_axioms, represent

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

SCHEMA: dict[str, dict[str, type]] = {
    "band": {"sigma_lo": float, "sigma_hi": float},
    "grid": {"x_min": float, "x_max": float, "nx": int, "T": float, "nt": int,
             "cfl_safety": float, "store_every": int, "spacing": str, "growth": int},
    "payoff": {"kind": str, "strike": float, "power": int, "cap": float, "file": str},
    "drift": {"mu_lo": float, "mu_hi": float},
    "price": {"x0": float, "probe_vol": float},
    "sim": {"n_paths": int, "n_steps": int, "n_intervals": int, "control": str, "seed": int},
    "clt": {"family": str, "p_lo": float, "p_hi": float, "p_count": int, "n_list": str,
            "backend": str},
    "sde": {"x0": float, "K": float, "b0": float, "b1": float, "h0": float, "h1": float,
            "s0": float, "s1": float, "n_paths": int, "n_steps": int, "tol": float, "seed": int},
    "bsde": {"n_steps": int, "decay": float, "shift": float, "backend": str},
    "represent": {"measures_file": str, "directions": int},
    "check": {"samples": int, "measures_file": str},
}

DEFAULTS = {
    "band": {"sigma_lo": 0.5, "sigma_hi": 1.0},
    "grid": {"nx": 801, "T": 1.0, "nt": 0, "cfl_safety": 0.9, "store_every": 0,
             "spacing": "uniform", "growth": 2},
    "payoff": {"kind": "call", "strike": 0.0, "power": 2, "cap": 1.0},
    "price": {"x0": 1.0},
    "sim": {"n_paths": 1000, "n_steps": 64, "n_intervals": 3, "control": "hi", "seed": 0},
    "clt": {"family": "ball", "p_lo": 0.4, "p_hi": 0.5, "p_count": 11, "n_list": "4,16,64,256",
            "backend": "grid_dp"},
    "sde": {"x0": 1.0, "K": 1.0, "b0": 0.0, "b1": 0.0, "h0": 0.0, "h1": 0.0, "s0": 0.0,
            "s1": 1.0, "n_paths": 2000, "n_steps": 50, "tol": 1e-8, "seed": 0},
    "bsde": {"n_steps": 8, "decay": 0.0, "shift": 0.0, "backend": "enumerate"},
    "represent": {"directions": 200},
    "check": {"samples": 200},
}


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class RunConfig:
    band: GParams
    grid: GridSpec
    payoff: dict
    sections: dict = field(default_factory=dict)
    seed: int = 0
    out: Path = Path(".")
    threads: int = 1
    as_json: bool = False

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)


def _parse_config(path: str | None) -> dict:
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is None:
        return raw
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, val in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                raw.setdefault(sec, {})[key] = SCHEMA[sec][key](val.strip())
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    return raw


def load_config(path: str | None, seed: int | None = None, out: str | None = None,
                threads: int = 1, as_json: bool = False) -> RunConfig:
    raw = _parse_config(path)
    try:
        band = GParams(raw["band"]["sigma_lo"], raw["band"]["sigma_hi"])
        gr = raw["grid"]
        T = gr["T"]
        if "x_min" in gr or "x_max" in gr:
            if not ("x_min" in gr and "x_max" in gr):
                raise ConfigError("give both x_min and x_max")
            grid = GridSpec(gr["x_min"], gr["x_max"], gr["nx"], T, gr["nt"], gr["spacing"])
        else:
            base = GridSpec.centered(band, T, gr["nx"])
            grid = GridSpec(base.x_min, base.x_max, base.nx, T, gr["nt"], gr["spacing"])
        if not 0 < gr["cfl_safety"] <= 1:
            raise ConfigError("cfl_safety must lie in (0, 1]")
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    kind = raw["payoff"]["kind"]
    if kind not in ("call", "put", "power", "abscap", "table"):
        raise ConfigError(f"unknown payoff kind {kind!r}")
    if kind == "table" and "file" not in raw["payoff"]:
        raise ConfigError("payoff kind 'table' needs file")
    return RunConfig(band, grid, raw["payoff"], raw, seed if seed is not None else raw["sim"]["seed"],
                     Path(out or "."), threads, as_json)


def build_payoff(spec: dict) -> tuple[Callable, str]:
    """Return ``(phi, shape hint)`` for a named builtin payoff."""
    kind = spec["kind"]
    K = spec.get("strike", 0.0)
    if kind == "call":
        return (lambda x: np.maximum(np.asarray(x) - K, 0.0)), "convex"
    if kind == "put":
        return (lambda x: np.maximum(K - np.asarray(x), 0.0)), "convex"
    if kind == "power":
        p = int(spec.get("power", 2))
        hint = "convex" if p >= 1 and p % 2 == 0 or p == 1 else "general"
        return (lambda x: np.asarray(x, dtype=float) ** p), hint
    if kind == "abscap":
        c = spec.get("cap", 1.0)
        return (lambda x: np.minimum(np.abs(x), c)), "general"
    data = np.loadtxt(spec["file"], delimiter=",", ndmin=2)
    xs, ys = data[:, 0], data[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("payoff table x column must increase")
    return (lambda x: np.interp(x, xs, ys)), "general"


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    p = cfg.out / name
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return p


def _emit(cfg: RunConfig, payload: dict) -> None:
    if cfg.as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


def cmd_gheat(cfg: RunConfig) -> int:
    phi, hint = build_payoff(cfg.payoff)
    gr = cfg.sections["grid"]
    res = pde_engine.solve_gheat(phi, cfg.band, cfg.grid, growth=gr["growth"],
                                 cfl_safety=gr["cfl_safety"], store_every=gr["store_every"] or None)
    cfg.out.mkdir(parents=True, exist_ok=True)
    res.to_csv(cfg.out / "gheat_surface.csv")
    _write(cfg, "gheat_meta.json", res.meta_json() + "\n")
    payload = {"u_T_0": res.at(0.0), "T": cfg.grid.T, "hint": hint}
    if hint != "general":
        payload["fast_path"] = gnormal.gnormal_expect(phi, hint, gnormal.GNormalLaw(cfg.band, cfg.grid.T))
    _write(cfg, "gheat_value.json", json.dumps(payload, sort_keys=True) + "\n")
    _emit(cfg, payload)
    return EXIT_OK


def cmd_gdrift(cfg: RunConfig) -> int:
    phi, _ = build_payoff(cfg.payoff)
    d = cfg.sections.get("drift", {})
    m = MeanParams(d.get("mu_lo", cfg.band.var_lo), d.get("mu_hi", cfg.band.var_hi))
    res = pde_engine.solve_gdrift(phi, m, cfg.grid, cfl_safety=cfg.sections["grid"]["cfl_safety"])
    cfg.out.mkdir(parents=True, exist_ok=True)
    res.to_csv(cfg.out / "gdrift_surface.csv")
    payload = {"u_T_0": res.at(0.0), "closed_form": gnormal.u_expect(phi, gnormal.ULaw(m, cfg.grid.T))}
    _write(cfg, "gdrift_value.json", json.dumps(payload, sort_keys=True) + "\n")
    _emit(cfg, payload)
    return EXIT_OK


def cmd_price(cfg: RunConfig) -> int:
    phi, _ = build_payoff(cfg.payoff)
    x0 = cfg.sections["price"]["x0"]
    sde = gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=x0, T=cfg.grid.T)
    band = (cfg.band.var_lo, cfg.band.var_hi)
    grid = GridSpec.lognormal(x0, cfg.band.sigma_hi, cfg.grid.T, cfg.grid.nx)
    probe = cfg.get("price", "probe_vol")
    quote = gsde.bid_ask(phi, sde, band, grid=grid, probe_vols=None if probe is None else [probe])
    _write(cfg, "price_quote.json", quote.to_json() + "\n")
    _emit(cfg, json.loads(quote.to_json()))
    return EXIT_OK


def _family(cfg: RunConfig) -> dg.IncrementFamily:
    c = cfg.sections["clt"]
    if c["family"] == "ball":
        return dg.IncrementFamily.ball(np.linspace(c["p_lo"], c["p_hi"], c["p_count"]))
    if c["family"] == "binomial":
        return dg.IncrementFamily.from_band(cfg.band)
    raise ConfigError(f"unknown family {c['family']!r}")


def cmd_clt(cfg: RunConfig) -> int:
    phi, _ = build_payoff(cfg.payoff)
    c = cfg.sections["clt"]
    try:
        n_list = [int(v) for v in c["n_list"].split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"n_list: {exc}") from exc
    rows = dg.clt_table(_family(cfg), phi, n_list, backend=c["backend"])
    text = dg.clt_csv(rows)
    _write(cfg, "clt.csv", text)
    if cfg.as_json:
        print(json.dumps([r.__dict__ for r in rows]))
    else:
        print(text, end="")
    return EXIT_OK


def _control(cfg: RunConfig) -> gbm_sim.VolControl:
    kind = cfg.sections["sim"]["control"]
    g, T = cfg.band, cfg.grid.T
    if kind == "hi":
        return gbm_sim.VolControl.constant(g.sigma_hi, g, T)
    if kind == "lo":
        return gbm_sim.VolControl.constant(g.sigma_lo, g, T)
    if kind == "mid":
        return gbm_sim.VolControl.constant(0.5 * (g.sigma_lo + g.sigma_hi), g, T)
    if kind == "feedback":
        return gbm_sim.VolControl.feedback_control(
            lambda t, b, qv: np.where(b >= 0, g.sigma_hi, g.sigma_lo), g, T)
    raise ConfigError(f"unknown control {kind!r}")


def cmd_simulate(cfg: RunConfig) -> int:
    s = cfg.sections["sim"]
    bundle = gbm_sim.sample_paths(_control(cfg), s["n_paths"], s["n_steps"], cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    bundle.to_csv(cfg.out / "paths.csv")
    summary = bundle.summary()
    phi, _ = build_payoff(cfg.payoff)
    fam = gbm_sim.bang_bang_family(cfg.band, cfg.grid.T, s["n_intervals"])
    bound = gbm_sim.scenario_sup(phi, fam)
    pde = pde_engine.solve_gheat(phi, cfg.band, cfg.grid).at(0.0)
    summary.update(scenario_lower_bound=bound.lower_bound, scenario_argmax=bound.argmax, pde_value=pde)
    _write(cfg, "summary.json", json.dumps(summary, sort_keys=True) + "\n")
    _emit(cfg, summary)
    return EXIT_OK


def _linear(c0: float, c1: float) -> Callable | None:
    if c0 == 0 and c1 == 0:
        return None
    return lambda x: c0 + c1 * np.asarray(x)


def cmd_sde(cfg: RunConfig) -> int:
    s = cfg.sections["sde"]
    spec = gsde.SdeSpec(b=_linear(s["b0"], s["b1"]), h=_linear(s["h0"], s["h1"]),
                        sigma=_linear(s["s0"], s["s1"]), K=s["K"], x0=s["x0"], T=cfg.grid.T)
    bundle = gbm_sim.sample_paths(_control(cfg), s["n_paths"], s["n_steps"], cfg.seed)
    res = gsde.sde_picard(spec, gsde.PathBackend(bundle), tol=s["tol"])
    _write(cfg, "picard_log.csv", res.log_csv())
    payload = {"iterations": len(res.norms), "max_ratio": max(res.ratios) if res.ratios else 0.0,
               "X_T_mean": float(np.mean(res.X[:, -1])), "X_T_second_moment": float(np.mean(res.X[:, -1] ** 2))}
    _write(cfg, "sde_summary.json", json.dumps(payload, sort_keys=True) + "\n")
    _emit(cfg, payload)
    return EXIT_OK


def cmd_bsde(cfg: RunConfig) -> int:
    phi, _ = build_payoff(cfg.payoff)
    b = cfg.sections["bsde"]
    n, T = b["n_steps"], cfg.grid.T
    lam, c = b["decay"], b["shift"]
    tree = dg.GTree(dg.IncrementFamily.from_band(cfg.band), n, T / n, backend=b["backend"])
    spec = gsde.BsdeSpec(phi, (lambda t, y: -lam * y + c) if (lam or c) else None, k=abs(lam), T=T)
    y0 = gsde.bsde_value(spec, tree)
    payload = {"Y0": y0, "n_steps": n, "backend": b["backend"]}
    _write(cfg, "bsde.json", json.dumps(payload, sort_keys=True) + "\n")
    _emit(cfg, payload)
    return EXIT_OK


def _load_space(path: str, checked: bool = True) -> ScenarioSpace:
    try:
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read measures file: {exc}") from exc
    if checked:
        try:
            return ScenarioSpace.from_json(text)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid measures file: {exc}") from exc
    return ScenarioSpace.unchecked(np.asarray(d["measures"], dtype=float))


def cmd_represent(cfg: RunConfig) -> int:
    r = cfg.sections["represent"]
    if "measures_file" in r:
        space = _load_space(r["measures_file"])
        oracle, n = space.expect, space.n_outcomes
    else:
        oracle, n = (lambda x: float(np.max(x))), 3
    rec = represent(oracle, n, r["directions"], cfg.seed)
    _write(cfg, "represented_space.json", rec.to_json() + "\n")
    rng = np.random.default_rng(cfg.seed + 1)
    err = max(abs(rec.expect(x) - oracle(x)) for x in rng.normal(size=(1000, n)))
    payload = {"n_measures": rec.n_measures, "roundtrip_sup_error": err}
    _emit(cfg, payload)
    return EXIT_OK


def run_invariant_suite(cfg: RunConfig) -> dict[str, float]:
    """Violations of the cross-module invariants; every entry must be <= its tolerance."""
    ch = cfg.sections["check"]
    out: dict[str, float] = {}
    if "measures_file" in ch:
        space = _load_space(ch["measures_file"], checked=False)
    else:
        from .sublinear_core import ball_space
        space = ball_space()
    out["axioms"] = check_axioms(space, ch["samples"], cfg.seed).worst()

    g = cfg.band
    grid = GridSpec.centered(g, 1.0, 201)
    x = grid.nodes()
    phi = lambda v: np.minimum(np.abs(v), 1.0)
    psi = lambda v: np.sin(v)
    base = pde_engine.solve_gheat(phi, g, grid).final
    shifted = pde_engine.solve_gheat(lambda v: phi(v) + 0.3, g, grid).final
    out["cash_translatability"] = float(np.max(np.abs(shifted - base - 0.3)))
    scaled = pde_engine.solve_gheat(lambda v: 2.5 * phi(v), g, grid).final
    out["positive_homogeneity"] = float(np.max(np.abs(scaled - 2.5 * base)))
    both = pde_engine.solve_gheat(lambda v: phi(v) + psi(v), g, grid).final
    other = pde_engine.solve_gheat(psi, g, grid).final
    out["subadditivity"] = float(np.max(np.maximum(both - base - other, 0.0)))
    wide = GParams(max(0.0, g.sigma_lo * 0.5), g.sigma_hi * 1.2)
    out["comparison"] = pde_engine.comparison_check(phi, phi, wide, g, grid)
    tree = dg.GTree(dg.IncrementFamily.binomial([g.sigma_lo, g.sigma_hi]), 5, 0.2)
    eta = dg.SimpleProcess(lambda j, p: np.sign(p.sum(axis=1)) if j else np.ones(p.shape[0]))
    out["ito_mean"] = abs(tree.expect(dg.discrete_ito(tree, eta)))
    out["isometry"] = dg.isometry_check(tree, eta)[2]
    out["gmartingale"] = dg.gmartingale_check(tree, dg.SimpleProcess.constant(1.0), eta, 0.0)
    return out


SUITE_TOL = 1e-10


def cmd_check(cfg: RunConfig) -> int:
    res = run_invariant_suite(cfg)
    bad = {k: v for k, v in res.items() if not v <= SUITE_TOL}
    payload = {"violations": res, "failed": sorted(bad), "tolerance": SUITE_TOL}
    _write(cfg, "check.json", json.dumps(payload, sort_keys=True) + "\n")
    _emit(cfg, payload)
    return EXIT_INVARIANT if bad else EXIT_OK


COMMANDS = {
    "gheat": (cmd_gheat, "solve the G-heat equation for the configured payoff"),
    "gdrift": (cmd_gdrift, "solve the G-drift (maximal distribution) equation"),
    "price": (cmd_price, "bid/ask under a lognormal model with uncertain volatility"),
    "clt": (cmd_clt, "sublinear CLT table against the G-normal limit"),
    "simulate": (cmd_simulate, "simulate G-BM paths under a volatility scenario"),
    "sde": (cmd_sde, "solve a linear-coefficient G-SDE by Picard iteration"),
    "bsde": (cmd_bsde, "solve a G-BSDE with driver f(y) = -decay*y + shift on a tree"),
    "represent": (cmd_represent, "recover a measure family from a sublinear functional"),
    "check": (cmd_check, "run the invariant suite; exit 4 on any violation"),
}


def _defaults_help() -> str:
    lines = ["config defaults ([section] key = value):"]
    for sec, vals in DEFAULTS.items():
        lines.append(f"  [{sec}] " + ", ".join(f"{k}={v}" for k, v in vals.items()))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gbrownian", description=__doc__.splitlines()[0],
                                epilog=_defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, epilog=_defaults_help(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides [sim] seed)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker cap")
        sp.add_argument("--json", action="store_true", help="print results as JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn, _ = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, args.seed, args.out, args.threads, args.json)
        os.environ.setdefault("OMP_NUM_THREADS", str(cfg.threads))
        return fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pde_engine.CFLError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
