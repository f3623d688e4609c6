"""Experiment runner: ``contspin --config run.toml [--seed S] [--out DIR] [--threads N] [--replicas N]``.

Exit codes: 0 success, 2 configuration error, 3 admissibility failure,
4 analysis refused.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .analysis import (AnalysisRefused, comparison_audit, invariant_probe, moment_bound, stability_check,
                       w1_ordered)
from .lattice import GraphSpec, auxiliary_graph, site_weights
from .model import UnsupportedAnalysis, admissibility_check, moment_oracle, small_jump_variance, subcriticality_margin
from .noise import NoiseFabric
from .presets import build_preset, list_presets
from .simulator import SimParams, simulate_coupled, simulate_ensemble, write_events
from .spread import (containment, ctrw_simulate, front_speed, kernel_bound_audit, sup_moment_profile)

ANALYSES = ("admit", "simulate", "couple", "contract", "invariant", "spread", "heatkernel", "oracle")

_TOP = {"analysis", "seed", "out", "threads", "model", "graph", "sim", "init", "options"}
_SIM = {"dt", "T", "replicas", "record_stride", "jump_cap", "delta_cut", "m_guard", "log_events", "block"}
_INIT = {"kind", "site", "mass"}
_GRAPH = {"edge_list", "n_sites"}
_OPTIONS = {
    "admit": set(),
    "simulate": set(),
    "oracle": set(),
    "couple": {"lower_scale"},
    "contract": {"lower_scale"},
    "invariant": {"burn_in", "large"},
    "spread": {"eps", "window", "containment_times", "profile_t", "slope_factor"},
    "heatkernel": {"M", "R", "times", "walkers", "L", "dimension"},
}


class ConfigError(ValueError):
    pass


class AdmissibilityFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    analysis: str
    seed: int
    out: Path
    threads: int
    preset: str
    model_params: dict
    graph: dict
    sim: dict
    init: dict
    options: dict
    raw: dict = field(repr=False, default_factory=dict)


def _line_of(text: str, section: str | None, key: str) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]`` of a TOML text."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", s):
            return i
    return None


def _reject_unknown(table: dict, allowed: set, section: str | None, text: str, path: str):
    for k in table:
        if k not in allowed:
            ln = _line_of(text, section, k)
            where = f"{path}:{ln}" if ln else path
            scope = f"[{section}]" if section else "top level"
            raise ConfigError(f"{where}: unknown key {k!r} in {scope}; allowed: {sorted(allowed)}")


def parse_config(path: str | Path) -> ExperimentConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    try:
        raw = json.loads(text) if path.endswith(".json") else tomllib.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    _reject_unknown(raw, _TOP, None, text, path)
    analysis = raw.get("analysis")
    if analysis not in ANALYSES:
        raise ConfigError(f"{path}:{_line_of(text, None, 'analysis') or ''}: analysis must be one of {ANALYSES}, got {analysis!r}")
    model = dict(raw.get("model", {}))
    preset = model.pop("preset", None)
    catalog = list_presets()
    if preset not in catalog:
        raise ConfigError(f"{path}:{_line_of(text, 'model', 'preset') or ''}: model.preset must be one of {sorted(catalog)}")
    _reject_unknown(model, set(catalog[preset]["defaults"]), "model", text, path)
    for name, allowed in (("graph", _GRAPH), ("sim", _SIM), ("init", _INIT)):
        _reject_unknown(raw.get(name, {}), allowed, name, text, path)
    _reject_unknown(raw.get("options", {}), _OPTIONS[analysis], "options", text, path)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"{path}:{_line_of(text, None, 'seed') or ''}: seed must be an unsigned 64-bit integer")
    return ExperimentConfig(
        analysis=analysis, seed=seed, out=Path(raw.get("out", "runs/out")),
        threads=int(raw.get("threads", os.cpu_count() or 1)), preset=preset, model_params=model,
        graph=dict(raw.get("graph", {})), sim=dict(raw.get("sim", {})), init=dict(raw.get("init", {})),
        options=dict(raw.get("options", {})), raw=raw,
    )


def _initial_state(cfg: ExperimentConfig, g: GraphSpec) -> np.ndarray:
    kind = cfg.init.get("kind", "point")
    mass = float(cfg.init.get("mass", 1.0))
    x = np.zeros(g.n_sites)
    if kind == "empty":
        return x
    if kind == "constant":
        return x + mass
    if kind == "point":
        site = cfg.init.get("site")
        x[g.origin if site is None else g.site_id(site)] = mass
        return x
    raise ConfigError(f"init.kind must be point, empty or constant, got {kind!r}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if np.isfinite(o) else str(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Execute the configured pipeline and write its artifacts; returns (exit code, report)."""
    t0 = time.time()
    graph = None
    if "edge_list" in cfg.graph:
        graph = GraphSpec.read_edge_list(cfg.graph["edge_list"], cfg.graph.get("n_sites"))
    try:
        preset = build_preset(cfg.preset, graph=graph, **cfg.model_params)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"model: {e}") from None
    model, w = preset.model, preset.weight
    g = model.graph
    try:
        params = SimParams(weight=w, threads=cfg.threads, **cfg.sim)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"sim: {e}") from None
    fabric = NoiseFabric(cfg.seed)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    adm = admissibility_check(model, g, w)
    report: dict[str, Any] = {"analysis": cfg.analysis, "preset": cfg.preset, "params": preset.params,
                              "admissibility": adm.to_dict()}
    code = 0
    series_header, series_rows = ["t", "value", "stderr", "bound"], []
    events = None
    try:
        if not adm.ok:
            raise AdmissibilityFailure("admissibility failed: " + "; ".join(adm.diagnostics or adm.failed))
        eta0 = _initial_state(cfg, g)
        v = site_weights(g, w)
        if cfg.analysis == "admit":
            series_header = ["site", "C2", "C3"]
            series_rows = [(i, float(adm.C2[i]), float(adm.C3[i])) for i in range(g.n_sites)]
        elif cfg.analysis == "simulate":
            ens = simulate_ensemble(model, eta0, fabric, params)
            mean, se = ens.mean()
            curve, ok = moment_bound(ens, v, adm.moment_C)
            report.update({
                "times": ens.times, "mean": mean, "stderr": se, "counts": ens.counts,
                "abort_rate": ens.abort_rate, "moment_bound_pass": ok, "moment_C": adm.moment_C,
                "small_jump_variance": small_jump_variance(model, params.delta_cut),
            })
            series_header = ["replica", "t", "site", "mass", "sup_mass"]
            series_rows = ((int(r), float(t), s, float(ens.states[r, i, s]), float(ens.sups[r, i, s]))
                           for r in range(ens.n_replicas) for i, t in enumerate(ens.times) for s in range(g.n_sites))
            events = ens.events
        elif cfg.analysis == "oracle":
            ens = simulate_ensemble(model, eta0, fabric, params)
            mean, se = ens.mean()
            om, ov = moment_oracle(model, eta0, ens.times)
            k = int((~ens.stopped).sum())
            se_exact = np.sqrt(ov / k)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se_exact > 0, (mean - om) / se_exact, np.where(mean == om, 0.0, np.inf))
            report.update({"times": ens.times, "max_abs_z": float(np.max(np.abs(z))), "pass": bool(np.all(np.abs(z) <= 3)),
                           "abort_rate": ens.abort_rate})
            series_header = ["t", "site", "mean", "stderr_sample", "stderr_exact", "oracle"]
            series_rows = [(float(t), s, float(mean[i, s]), float(se[i, s]), float(se_exact[i, s]), float(om[i, s]))
                           for i, t in enumerate(ens.times) for s in range(g.n_sites)]
        elif cfg.analysis == "couple":
            scale = float(cfg.options.get("lower_scale", 0.5))
            A, B = simulate_coupled(model, model, eta0, scale * eta0, fabric, params)
            aud = comparison_audit(B, A, v)
            st, st_ok = stability_check(A, B, v, adm.C1, adm.C4, adm.C5)
            report.update({"max_violation_recorded": aud["max"], "violation_integral_recorded": aud["integral"],
                           "max_violation_every_step": A.audit.max_violation,
                           "violation_integral_every_step": A.audit.mean_integral,
                           "stability_bound_pass": st_ok, "abort_rate": A.abort_rate})
            series_rows = st.rows()
            events = A.events
        elif cfg.analysis == "contract":
            A_margin = subcriticality_margin(model, g, w)
            if not A_margin > 0:
                raise AnalysisRefused(f"not subcritical (A = {A_margin:.6g})")
            scale = float(cfg.options.get("lower_scale", 0.5))
            up, lo = simulate_coupled(model, model, eta0, scale * eta0, fabric, params)
            rep = w1_ordered(up, lo, v, A_margin, model, eta0, scale * eta0)
            report.update(rep.to_dict())
            series_header = ["t", "value", "stderr", "bound", "oracle"]
            series_rows = rep.rows()
        elif cfg.analysis == "invariant":
            rep = invariant_probe(model, fabric, params, float(cfg.options.get("burn_in", params.T / 2)),
                                  float(cfg.options.get("large", 5.0)), w)
            report.update(rep.to_dict())
            series_rows = rep.sandwich.rows()
        elif cfg.analysis == "spread":
            eps = float(cfg.options.get("eps", 0.01))
            window = tuple(cfg.options.get("window", [params.T / 4, params.T]))
            ens = simulate_ensemble(model, eta0, fabric, params)
            x0 = int(np.argmax(eta0))
            fit, radii = front_speed(ens, g, x0, eps, window)
            factor = float(cfg.options.get("slope_factor", 1.5))
            ct = cfg.options.get("containment_times", [params.T / 2, params.T])
            cont = containment(ens, g, x0, eps, factor * fit.slope, ct)
            pt = float(cfg.options.get("profile_t", params.T / 2))
            prof = sup_moment_profile(ens, g, x0, pt, (fit.slope * pt + 2, g.distance_matrix[x0].max() - 2))
            report.update({"front": fit.to_dict(), "containment": {str(k): b for k, b in cont.items()},
                           "profile": prof.to_dict(), "abort_rate": ens.abort_rate})
            rm = radii[~ens.stopped]
            series_rows = list(zip(ens.times.tolist(), rm.mean(0).tolist(),
                                   (rm.std(0, ddof=1) / np.sqrt(max(len(rm), 1))).tolist() if len(rm) > 1 else [0.0] * len(ens.times),
                                   (factor * fit.slope * ens.times).tolist()))
        elif cfg.analysis == "heatkernel":
            o = cfg.options
            dim, L = int(o.get("dimension", 1)), int(o.get("L", 30))
            base = GraphSpec.zd(dim, L)
            ghat = auxiliary_graph(base, int(o.get("R", 1)))
            M = float(o.get("M", 1.0))
            est = ctrw_simulate(ghat, M, base.origin, o.get("times", [0.5, 1.0, 2.0]), fabric,
                                int(o.get("walkers", 100_000)))
            rows = kernel_bound_audit(est, ghat, M)
            viol = [r for r in rows if r.violation]
            report.update({"violations": len(viol), "non_vacuous": sum(1 for r in rows if not r.vacuous),
                           "violating": [vars(r) for r in viol]})
            series_header = ["t", "site", "dhat", "K", "stderr", "bound", "vacuous", "violation"]
            series_rows = [(r.t, r.site, r.dhat, r.K, r.se, r.bound, int(r.vacuous), int(r.violation)) for r in rows]
    except AdmissibilityFailure as e:
        report["error"] = str(e)
        code = 3
    except (AnalysisRefused, UnsupportedAnalysis) as e:
        report["error"] = str(e)
        code = 4
    _write_csv(out / "series.csv", series_header, series_rows)
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=1, sort_keys=True)
        fh.write("\n")
    artifacts = ["series.csv", "report.json"]
    if params.log_events and events is not None:
        write_events(out / "events.jsonl", events)
        artifacts.append("events.jsonl")
    manifest = {
        "config": _jsonable(cfg.raw),
        "resolved": {"analysis": cfg.analysis, "seed": cfg.seed, "threads": cfg.threads,
                     "replicas": params.replicas, "preset": cfg.preset, "params": preset.params},
        "versions": {"contspin": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": round(time.time() - t0, 3),
        "exit_code": code,
        "artifacts": artifacts,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return code, report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="contspin", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML or JSON experiment file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--list-presets", action="store_true", help="print the preset catalog and exit")
    args = ap.parse_args(argv)
    if args.list_presets:
        print(json.dumps(list_presets(), indent=1))
        return 0
    if not args.config:
        ap.print_usage(sys.stderr)
        print("contspin: error: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out:
            cfg.out = Path(args.out)
        if args.threads:
            cfg.threads = args.threads
        if args.replicas:
            cfg.sim["replicas"] = args.replicas
        code, report = run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if code:
        print(report.get("error", "failed"), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
