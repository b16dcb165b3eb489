"""Command-line entry point: ``pulsedde <command> [options]``.

Every command reads an optional JSON config, applies command-line overrides
and writes CSV or JSON. A header block with the resolved parameters and the
solver tolerances goes at the top of every output, so a file records how it
was made. Exit status: 0 on success, 2 on invalid input, 1 on any other error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields

import numpy as np

from . import __version__, bifurcation, periodic, single_pulse, treatment
from ._accel import backend
from .engine import ForcingSchedule, HistoryFunction, continuity_defect, residual_check, solve
from .errors import InfiniteResetting, ValidationError
from .model import ModelParams, RawParams, limit_cycle, normalize_params
from .verify import run_checks

REDUCED = ("tau", "beta_U", "beta_L")
RAW = ("gamma", "tau", "b_L", "b_U", "theta")
FORCING = ("delta0", "sigma", "alpha", "amplitude", "pulse_count")
TOP_KEYS = {"model", "raw", "forcing", "options", "physio", "out", "format"}

TOLERANCES = {
    "match_tol": single_pulse.MATCH_TOL,
    "infinite_resetting_tol": single_pulse.INF_TOL,
    "threshold_rtol": periodic.THRESHOLD_RTOL,
    "lock_tol": periodic.LOCK_TOL,
    "max_lock_ratio": periodic.MAX_LOCK_RATIO,
    "cluster_tol": bifurcation.CLUSTER_TOL,
    "newton_tol": treatment.NEWTON_TOL,
    "newton_max_iter": treatment.NEWTON_MAX_ITER,
}

UNIT_MODEL = {"tau": 1.0, "beta_U": 1.0, "beta_L": 1.0}
LOCK_MODEL = {"tau": 1.0, "beta_U": 0.7, "beta_L": 1.4}
LOCK_FORCING = {"delta0": "z2", "sigma": 0.6, "alpha": 0.3, "amplitude": 0.9}

# per command: default model, default forcing, default options
DEFAULTS = {
    "simulate": (UNIT_MODEL, {"delta0": 1.0, "sigma": 0.5, "amplitude": 0.5},
                 {"t_end": 20.0, "t_lo": None, "per_segment": 8, "history_phase": 0.0}),
    "limit-cycle": (UNIT_MODEL, None, {}),
    "classify": (UNIT_MODEL, {"delta0": 1.0, "sigma": 0.5, "amplitude": 0.5}, {}),
    "clm": (UNIT_MODEL, {"sigma": 0.5, "amplitude": 0.5}, {"mesh": 1000, "jobs": 1}),
    "forced-cycle": (LOCK_MODEL, {"delta0": "z2", "sigma": 0.6, "alpha": 0.3, "amplitude": 3.0},
                     {"map": 0, "mode": "closed"}),
    "lock": (LOCK_MODEL, dict(LOCK_FORCING, amplitude=1.1),
             {"transient": 450.0, "record": 50.0, "max_q": periodic.MAX_LOCK_RATIO,
              "tol": periodic.LOCK_TOL}),
    "min-rest-interval": ({"tau": 1.0, "beta_U": 0.4, "beta_L": 2.0},
                          {"sigma": 0.6, "amplitude": 1.5}, {"x_norm": 0.6}),
    "fit-band": ({"tau": 1.0, "beta_U": 0.4, "beta_L": 1.4}, {"sigma": 0.6},
                 {"x_norm": 0.4, "f_min": 0.5, "f_max": 1.5}),
    "gcsf": (None, None, {"dose": "a1", "start_day": 21.0, "end_day": 70.0, "settle_days": None,
                          "sigma_days": 1.0, "alpha_days": 1.0, "per_segment": 8}),
    "chemo-scan": (None, None, {"tp_lo": 1.0, "tp_hi": 40.0, "mesh": 391, "window": [600.0, 2000.0],
                                "sigma_days": 1.0, "jobs": 1, "healthy": True}),
    "sweep": (LOCK_MODEL, LOCK_FORCING,
              {"parameter": "beta_U", "lo": 0.5, "hi": 0.9, "mesh": 10000, "direction": "inc",
               "transient_periods": 5.5, "record_periods": 5.5, "first_transient_periods": 220.0,
               "cold": False, "jobs": 1, "windows": False, "probe_every": 10}),
    "poincare": ({"tau": 0.6, "beta_U": 0.7, "beta_L": 1.4}, LOCK_FORCING,
                 {"t_lo": 1100.0, "t_hi": 1400.0, "level": 0.14, "direction": "both"}),
    "embed": ({"tau": 1.0, "beta_U": 0.7, "beta_L": 1.4}, dict(LOCK_FORCING, amplitude=1.1),
              {"t_lo": 450.0, "t_hi": 500.0, "per_segment": 8}),
    "verify": (None, None, {"seed": 0, "draws": 30}),
}

REPORT_COMMANDS = {"limit-cycle", "classify", "lock", "min-rest-interval", "fit-band", "verify"}


# -- configuration -------------------------------------------------------------

def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "model" in cfg and "raw" in cfg:
        raise ValidationError("config must hold exactly one of 'model' and 'raw'")
    return cfg


def _block(cfg, key, allowed):
    block = cfg.get(key) or {}
    if not isinstance(block, dict):
        raise ValidationError(f"config '{key}' must be an object")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown keys in '{key}': {sorted(unknown)}")
    return block


def _resolve_model(args, cfg, default):
    """Exactly one of the raw and reduced parameter sets, with overrides applied."""
    reduced = dict(_block(cfg, "model", REDUCED))
    raw = dict(_block(cfg, "raw", RAW))
    cli_reduced = {k: getattr(args, k) for k in ("beta_U", "beta_L") if getattr(args, k) is not None}
    cli_raw = {k: getattr(args, k) for k in ("gamma", "b_L", "b_U", "theta")
               if getattr(args, k) is not None}
    if cli_raw and (cli_reduced or reduced):
        raise ValidationError("give either raw (gamma, tau, b_L, b_U, theta) or reduced "
                              "(tau, beta_U, beta_L) parameters, not both")
    if cli_reduced and raw:
        raise ValidationError("reduced overrides cannot be applied to a raw config block")
    if raw or cli_raw:
        raw.update(cli_raw)
        if args.tau is not None:
            raw["tau"] = args.tau
        missing = [k for k in RAW if k not in raw]
        if missing:
            raise ValidationError(f"raw parameters missing: {missing}")
        rp = RawParams(gamma=raw["gamma"], tau_raw=raw["tau"], b_L=raw["b_L"], b_U=raw["b_U"],
                       theta=raw["theta"])
        return normalize_params(rp), {"raw": raw}
    merged = dict(default or UNIT_MODEL)
    merged.update(reduced)
    merged.update(cli_reduced)
    if args.tau is not None:
        merged["tau"] = args.tau
    p = ModelParams(**{k: float(merged[k]) for k in REDUCED})
    return p, {}


def _delta0(value, p: ModelParams) -> float:
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
        lc = limit_cycle(p)
        named = {"z1": lc.z1, "z2": lc.z2, "t_max": lc.t_max}
        if value not in named:
            raise ValidationError(f"delta0 must be a number or one of {sorted(named)}")
        return named[value]
    return float(value)


def _resolve_forcing(args, cfg, default, p, periodic_train=True):
    merged = dict(default or {})
    merged.update(_block(cfg, "forcing", FORCING))
    for key in FORCING:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged["delta0"] = _delta0(merged.get("delta0", 0.0), p)
    if not periodic_train:
        merged["alpha"] = math.inf
        merged["pulse_count"] = 1
    if "alpha" not in merged:
        merged["alpha"] = math.inf
    forcing = ForcingSchedule(delta0=merged["delta0"], sigma=float(merged.get("sigma", 1.0)),
                              alpha=float(merged["alpha"]),
                              amplitude=float(merged.get("amplitude", 0.0)),
                              pulse_count=merged.get("pulse_count"))
    return forcing


def _resolve_options(args, cfg, command):
    defaults = DEFAULTS[command][2]
    given = _block(cfg, "options", defaults)
    opts = dict(defaults)
    opts.update(given)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


# -- output ----------------------------------------------------------------------

def _plain(value):
    """JSON-safe copy: numpy to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return str(value)


def _short(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return _cell(value)


def render(header, fmt, result=None, columns=None, rows=None, human=False) -> str:
    """Serialise one command's output; ``human`` gives short key-value lines."""
    buf = io.StringIO()
    if human:
        for key, value in result.items():
            buf.write(f"{key}: {_short(value)}\n")
        return buf.getvalue()
    if fmt == "json":
        doc = {"header": header}
        if result is not None:
            doc["result"] = result
        if columns is not None:
            doc["columns"] = list(columns)
            doc["rows"] = [list(r) for r in rows]
        return json.dumps(_plain(doc), indent=1) + "\n"
    for key, value in header.items():
        buf.write(f"# {key}: {json.dumps(_plain(value))}\n")
    writer = csv.writer(buf, lineterminator="\n")
    if columns is None:
        writer.writerow(["key", "value"])
        for key, value in result.items():
            writer.writerow([key, _cell(value)])
    else:
        if result:
            for key, value in result.items():
                buf.write(f"# result.{key}: {json.dumps(_plain(value))}\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _check_out(path):
    if path is None:
        return
    folder = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(folder) or not os.access(folder, os.W_OK):
        raise ValidationError(f"output path {path} is not writable")


# -- commands --------------------------------------------------------------------

def _header(command, p, extra_params, forcing, opts):
    header = {"command": command, "version": __version__, "backend": backend()}
    if p is not None:
        header["params"] = {"tau": p.tau, "beta_U": p.beta_U, "beta_L": p.beta_L}
        header.update(extra_params)
    if forcing is not None:
        header["forcing"] = {f.name: getattr(forcing, f.name) for f in fields(forcing)}
    header["options"] = opts
    header["tolerances"] = TOLERANCES
    return header


def cmd_simulate(p, forcing, o):
    history = HistoryFunction.limit_cycle(p, float(o["history_phase"]))
    traj = solve(p, history, forcing, float(o["t_end"]))
    t_lo = traj.t_start if o["t_lo"] is None else float(o["t_lo"])
    t, x, seg, bp = traj.dense(t_lo, traj.t_end, int(o["per_segment"]))
    result = {"residual": residual_check(traj, p, forcing),
              "continuity_defect": continuity_defect(traj),
              "zeros": int(traj.zeros.size), "segments": int(traj.a.size - traj.n_history)}
    return result, ["t", "x", "segment_index", "is_breaking_point"], zip(t, x, seg, bp)


def cmd_limit_cycle(p, forcing, o):
    return asdict(limit_cycle(p)), None, None


def _pulse(forcing):
    return forcing.delta0, forcing.sigma, forcing.amplitude


def cmd_classify(p, forcing, o):
    lc = limit_cycle(p)
    dc = single_pulse.delta_constants(p, forcing.sigma, forcing.amplitude, lc)
    case = single_pulse.classify(p, _pulse(forcing), lc, dc)
    result = {"case": case.value}
    for name in ("delta1", "delta2", "delta4", "delta4_hat", "delta5", "delta_inf"):
        value = getattr(dc, name)
        result[name] = math.nan if value is None else value
    try:
        r = single_pulse.pulse_response(p, _pulse(forcing), lc, dc)
        result.update(F=r.F, T=r.T, new_phase=r.new_phase, depth=r.depth)
    except InfiniteResetting:
        result.update(F=math.inf, T=math.inf, new_phase=math.inf, depth=-1)
    return result, None, None


def _fixed_points(deltas, T, period):
    # sign changes of T - T~ on the grid; slope sign > 0 marks an unstable point
    out = []
    g = T - period
    for k in range(deltas.size - 1):
        if not (np.isfinite(g[k]) and np.isfinite(g[k + 1])):
            continue
        if g[k] == 0.0 or g[k] * g[k + 1] < 0.0:
            d = deltas[k] - g[k] * (deltas[k + 1] - deltas[k]) / (g[k + 1] - g[k])
            slope = (T[k + 1] - T[k]) / (deltas[k + 1] - deltas[k])
            out.append({"delta": float(d), "slope_sign": int(np.sign(slope))})
    return out


def cmd_clm(p, forcing, o):
    lc = limit_cycle(p)
    mesh = int(o["mesh"])
    if mesh < 2:
        raise ValidationError("mesh must be >= 2")
    deltas = np.linspace(0.0, lc.period, mesh, endpoint=False)
    sigma, a = forcing.sigma, forcing.amplitude
    jobs = int(o["jobs"])
    if jobs > 1:
        chunks = np.array_split(deltas, jobs)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda d: single_pulse.response_curve(p, sigma, a, d), chunks))
    else:
        parts = [single_pulse.response_curve(p, sigma, a, deltas)]
    labels = [lab for part in parts for lab in part.labels]
    F = np.concatenate([part.F for part in parts])
    T = np.concatenate([part.T for part in parts])
    dc = single_pulse.delta_constants(p, sigma, a, lc)
    result = {"period": lc.period, "delta1": dc.delta1,
              "delta2": math.nan if dc.delta2 is None else dc.delta2,
              "fixed_points": _fixed_points(deltas, T, lc.period)}
    rows = zip(deltas, labels, F, T)
    return result, ["delta", "case_label", "F", "T"], rows


def cmd_forced_cycle(p, forcing, o):
    fc = periodic.forced_cycle(p, forcing.sigma, forcing.alpha, forcing.amplitude)
    result = asdict(fc)
    result["height"] = periodic.forced_amplitude(forcing.sigma, forcing.alpha, forcing.amplitude)
    n = int(o["map"])
    if n <= 0:
        return result, None, None
    pm = periodic.iterate_pulse_map(p, forcing, n, o["mode"])
    rows = zip(range(n + 1), pm.onsets, pm.at_onset, pm.at_offset)
    return result, ["k", "onset", "x_onset", "x_offset"], rows


def cmd_lock(p, forcing, o):
    rep = periodic.lock_ratio(p, forcing, float(o["transient"]), float(o["record"]),
                              max_q=int(o["max_q"]), tol=float(o["tol"]))
    result = {"q": rep.q, "T_p": rep.T_p, "period": rep.period, "t_end": rep.t_end,
              "locked": rep.q is not None}
    return result, None, None


def cmd_min_rest(p, forcing, o):
    alpha = treatment.min_rest_interval(forcing.amplitude, forcing.sigma, float(o["x_norm"]),
                                        p.beta_U)
    fc = periodic.forced_cycle(p, forcing.sigma, alpha, forcing.amplitude)
    return {"a": forcing.amplitude, "alpha": alpha, "sigma": forcing.sigma, "a1": fc.a1,
            "x_min_p": fc.x_min_p, "x_max_p": fc.x_max_p}, None, None


def cmd_fit_band(p, forcing, o):
    band = treatment.BandSpec(float(o["x_norm"]), float(o["f_min"]), float(o["f_max"]))
    return asdict(treatment.fit_band(p, band, forcing.sigma)), None, None


def _physio(cfg):
    names = [f.name for f in fields(treatment.PhysioParams)]
    return treatment.PhysioParams(**{k: float(v) for k, v in _block(cfg, "physio", names).items()})


def _treat_model(args, cfg, healthy):
    if cfg.get("raw") or any(getattr(args, k) is not None for k in ("gamma", "b_L", "b_U", "theta")):
        raise ValidationError("treatment models are mapped from 'physio'; raw parameters "
                              "do not apply")
    if args.tau is not None or "tau" in (cfg.get("model") or {}):
        raise ValidationError("the delay of a treatment model comes from 'physio'")
    phys = _physio(cfg)
    model = treatment.healthy_model(phys) if healthy else treatment.map_neutrophil_model(phys)
    betas = {"beta_U": model.params.beta_U, "beta_L": model.params.beta_L}
    betas.update(_block(cfg, "model", ("beta_U", "beta_L")))
    betas.update({k: getattr(args, k) for k in betas if getattr(args, k) is not None})
    model = model.with_betas(float(betas["beta_U"]), float(betas["beta_L"]))
    return phys, model


def cmd_gcsf(model, phys, o):
    p = model.params
    dose = o["dose"]
    if dose == "a1":
        g = model.gamma_N
        dose = periodic.a1_threshold(p.beta_U, o["sigma_days"] * g, o["alpha_days"] * g)
    elif dose == "estimate":
        dose = phys.gcsf_amplitude_estimate()
    else:
        try:
            dose = float(dose)
        except ValueError:
            raise ValidationError("dose must be a number, 'a1' or 'estimate'") from None
    run = treatment.gcsf_simulation(model, dose, float(o["start_day"]), float(o["end_day"]),
                                    o["settle_days"], float(o["sigma_days"]),
                                    float(o["alpha_days"]))
    t, x, _, _ = run.trajectory.dense(0.0, run.trajectory.t_end, int(o["per_segment"]))
    result = {"dose": dose, "units": treatment.UNITS, "period_days": model.period_days,
              "nadir_before": run.nadir_before, "nadir_after": run.nadir_after,
              "max_after": run.max_after, "severe_after": run.severe_after,
              "settle_days": run.settle_days}
    return result, ["day", "N"], zip(model.to_days(t), model.concentration(x))


def cmd_chemo_scan(model, phys, o):
    grid = np.round(np.linspace(float(o["tp_lo"]), float(o["tp_hi"]), int(o["mesh"])), 10)
    window = o["window"]
    if len(window) != 2:
        raise ValidationError("window needs two values")
    scan = treatment.chemo_scan(model, grid, (float(window[0]), float(window[1])),
                                sigma_days=float(o["sigma_days"]), jobs=int(o["jobs"]))
    result = {"amplitude_dose": scan.amplitude_dose, "period_days": scan.period_days,
              "resonance_markers": scan.resonance_markers(),
              "nadir_peaks": scan.peaks()}
    lo, hi = scan.window
    rows = ((tp, n, a, lo, hi, scan.units) for tp, n, a in zip(scan.Tp_days, scan.nadir, scan.amplitude))
    return result, ["Tp", "nadir", "amplitude", "window_lo", "window_hi", "units"], rows


def cmd_sweep(p, forcing, o):
    spec = bifurcation.SweepSpec(o["parameter"], float(o["lo"]), float(o["hi"]), int(o["mesh"]),
                                 o["direction"], float(o["transient_periods"]),
                                 float(o["record_periods"]), float(o["first_transient_periods"]),
                                 bool(o["cold"]), int(o["jobs"]))
    if o["windows"]:
        windows = bifurcation.window_structure(p, forcing, spec, probe_every=int(o["probe_every"]))
        rows = ((w.label, w.lo, w.hi, w.probes, "" if w.ratio is None else w.ratio) for w in windows)
        return {}, ["label", "lo", "hi", "probes", "ratio"], rows
    records = bifurcation.sweep(p, forcing, spec)

    def rows():
        for rec in records:
            for v in rec.maxima:
                yield rec.value, "max", v
            for v in rec.minima:
                yield rec.value, "min", v
    return {}, ["param_value", "kind", "x_value"], rows()


def cmd_poincare(p, forcing, o):
    t_lo, t_hi = float(o["t_lo"]), float(o["t_hi"])
    traj = solve(p, None, forcing, t_hi)
    spec = bifurcation.SectionSpec(float(o["level"]), o["direction"])
    pts = bifurcation.poincare_section(traj, spec, t_lo, t_hi)
    names = np.where(pts.direction > 0, "rising", "falling")
    return ({"crossings": int(pts.t_c.size)}, ["x_tau", "x_2tau", "t_c", "direction"],
            zip(pts.x_tau, pts.x_2tau, pts.t_c, names))


def cmd_embed(p, forcing, o):
    t_lo, t_hi = float(o["t_lo"]), float(o["t_hi"])
    traj = solve(p, None, forcing, t_hi)
    lagged, x = bifurcation.delay_embedding(traj, t_lo, t_hi, per_segment=int(o["per_segment"]))
    return {"points": int(x.size)}, ["x_tau", "x"], zip(lagged, x)


def cmd_verify(o):
    checks = run_checks(int(o["seed"]), int(o["draws"]))
    rows = [(c.name, "PASS" if c.ok else "FAIL", c.value, c.tol) for c in checks]
    return all(c.ok for c in checks), rows


MODEL_COMMANDS = {
    "simulate": (cmd_simulate, True),
    "limit-cycle": (cmd_limit_cycle, None),
    "classify": (cmd_classify, False),
    "clm": (cmd_clm, False),
    "forced-cycle": (cmd_forced_cycle, True),
    "lock": (cmd_lock, True),
    "min-rest-interval": (cmd_min_rest, False),
    "fit-band": (cmd_fit_band, False),
    "sweep": (cmd_sweep, True),
    "poincare": (cmd_poincare, True),
    "embed": (cmd_embed, True),
}


# -- argument parsing ----------------------------------------------------------------

def _flag(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _parents():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    model = argparse.ArgumentParser(add_help=False)
    g = model.add_argument_group("model parameters (reduced or raw)")
    g.add_argument("--tau", type=float, help="delay (raw delay when raw parameters are given)")
    g.add_argument("--beta-u", dest="beta_U", type=float, help="upper feedback level")
    g.add_argument("--beta-l", dest="beta_L", type=float, help="lower feedback level")
    g.add_argument("--gamma", type=float, help="raw decay rate")
    g.add_argument("--b-l", dest="b_L", type=float, help="raw production below threshold")
    g.add_argument("--b-u", dest="b_U", type=float, help="raw production above threshold")
    g.add_argument("--theta", type=float, help="raw switching threshold")
    pulses = argparse.ArgumentParser(add_help=False)
    g = pulses.add_argument_group("forcing")
    g.add_argument("--delta0", help="first onset: a number or z1, z2, t_max")
    g.add_argument("--sigma", type=float, help="pulse width")
    g.add_argument("--alpha", type=float, help="rest interval between pulses")
    g.add_argument("-a", "--amplitude", type=float, help="pulse height")
    g.add_argument("--pulse-count", dest="pulse_count", type=int, help="number of pulses")
    return common, model, pulses


def build_parser() -> argparse.ArgumentParser:
    common, model, pulses = _parents()
    parser = argparse.ArgumentParser(prog="pulsedde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pulsedde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, forcing=True):
        parents = [common, model] + ([pulses] if forcing else [])
        return sub.add_parser(name, parents=parents, help=help_)

    sp = add("simulate", "solve the forced equation exactly")
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp.add_argument("--t-lo", dest="t_lo", type=float, help="first sample time")
    sp.add_argument("--per-segment", dest="per_segment", type=int)
    sp.add_argument("--history-phase", dest="history_phase", type=float,
                    help="cycle phase at which the history ends")

    add("limit-cycle", "closed-form limit cycle", forcing=False)
    add("classify", "case label and response of one pulse")
    sp = add("clm", "cycle-length map and resetting time over an onset grid")
    sp.add_argument("--mesh", type=int, help="grid size over [0, period)")
    sp.add_argument("--jobs", type=int)

    sp = add("forced-cycle", "1:1 forced cycle above the threshold amplitude")
    sp.add_argument("--map", type=int, help="also list the first N+1 pulse-map values")
    sp.add_argument("--mode", choices=("closed", "simulated"))

    sp = add("lock", "locking ratio of a periodic pulse train")
    sp.add_argument("--transient", type=float)
    sp.add_argument("--record", type=float)
    sp.add_argument("--max-q", dest="max_q", type=int)
    sp.add_argument("--tol", type=float)

    treat = sub.add_parser("treat", help="dosing formulas and the neutrophil application")
    tsub = treat.add_subparsers(dest="treat_command", required=True)
    sp = tsub.add_parser("min-rest-interval", parents=[common, model, pulses],
                         help="rest interval putting the forced minimum at x_norm")
    sp.add_argument("--x-norm", dest="x_norm", type=float)
    sp = tsub.add_parser("fit-band", parents=[common, model, pulses],
                         help="amplitude and rest interval for a target band")
    sp.add_argument("--x-norm", dest="x_norm", type=float)
    sp.add_argument("--f-min", dest="f_min", type=float)
    sp.add_argument("--f-max", dest="f_max", type=float)
    sp = tsub.add_parser("gcsf", parents=[common, model], help="daily G-CSF dosing run")
    sp.add_argument("--dose", help="pulse height (1e9 cells/kg), 'a1' or 'estimate'")
    sp.add_argument("--start-day", dest="start_day", type=float)
    sp.add_argument("--end-day", dest="end_day", type=float)
    sp.add_argument("--settle-days", dest="settle_days", type=float)
    sp.add_argument("--sigma-days", dest="sigma_days", type=float)
    sp.add_argument("--alpha-days", dest="alpha_days", type=float)
    sp.add_argument("--per-segment", dest="per_segment", type=int)
    sp = tsub.add_parser("chemo-scan", parents=[common, model],
                         help="nadir and amplitude over chemotherapy dosing periods")
    sp.add_argument("--tp-lo", dest="tp_lo", type=float)
    sp.add_argument("--tp-hi", dest="tp_hi", type=float)
    sp.add_argument("--mesh", type=int, help="number of dosing periods")
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--sigma-days", dest="sigma_days", type=float)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--healthy", type=_flag, help="use the healthy feedback levels")

    sp = add("sweep", "orbit diagram over one parameter")
    sp.add_argument("--parameter", choices=bifurcation.PARAMETERS)
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    sp.add_argument("--mesh", type=int)
    sp.add_argument("--direction", choices=("inc", "dec"))
    sp.add_argument("--transient-periods", dest="transient_periods", type=float)
    sp.add_argument("--record-periods", dest="record_periods", type=float)
    sp.add_argument("--first-transient-periods", dest="first_transient_periods", type=float)
    sp.add_argument("--cold", type=_flag, help="restart every point from the initial history")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--windows", type=_flag, help="report labelled windows instead of extrema")
    sp.add_argument("--probe-every", dest="probe_every", type=int)

    sp = add("poincare", "projected Poincare section")
    sp.add_argument("--t-lo", dest="t_lo", type=float)
    sp.add_argument("--t-hi", dest="t_hi", type=float)
    sp.add_argument("--level", type=float)
    sp.add_argument("--direction", choices=("rising", "falling", "both"))

    sp = add("embed", "time-delay embedding")
    sp.add_argument("--t-lo", dest="t_lo", type=float)
    sp.add_argument("--t-hi", dest="t_hi", type=float)
    sp.add_argument("--per-segment", dest="per_segment", type=int)

    sp = sub.add_parser("verify", parents=[common], help="residual and oracle suite")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--draws", type=int, help="random parameter sets per check")
    return parser


# -- driver ------------------------------------------------------------------------

def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _run(args) -> int:
    command = args.treat_command if args.command == "treat" else args.command
    cfg = _load_config(args.config)
    out = args.out if args.out is not None else cfg.get("out")
    fmt = args.format or cfg.get("format")
    if fmt not in (None, "csv", "json"):
        raise ValidationError("format must be 'csv' or 'json'")
    _check_out(out)
    opts = _resolve_options(args, cfg, command)
    default_model, default_forcing, _ = DEFAULTS[command]
    report = command in REPORT_COMMANDS
    human = fmt is None and out is None and report
    fmt = fmt or ("json" if report else "csv")

    if command == "verify":
        ok, rows = cmd_verify(opts)
        header = _header(command, None, {}, None, opts)
        if human:
            text = "".join(f"{status} {name}: {value:.3g} (tol {tol:g})\n"
                           for name, status, value, tol in rows)
        else:
            text = render(header, fmt, None, ["check", "status", "value", "tol"], rows)
        _emit(text, out)
        return 0 if ok else 1

    if command in ("gcsf", "chemo-scan"):
        healthy = command == "chemo-scan" and bool(opts.get("healthy"))
        phys, model = _treat_model(args, cfg, healthy)
        fn = cmd_gcsf if command == "gcsf" else cmd_chemo_scan
        result, columns, rows = fn(model, phys, opts)
        header = _header(command, model.params, {"gamma_N": model.gamma_N, "N_star": model.N_star,
                                                 "physio": asdict(phys)}, None, opts)
        _emit(render(header, fmt, result, columns, list(rows)), out)
        return 0

    p, extra = _resolve_model(args, cfg, default_model)
    fn, train = MODEL_COMMANDS[command]
    forcing = None
    if train is not None:
        forcing = _resolve_forcing(args, cfg, default_forcing, p, periodic_train=train)
    result, columns, rows = fn(p, forcing, opts)
    header = _header(command, p, extra, forcing, opts)
    if columns is None:
        _emit(render(header, fmt, result, human=human), out)
    else:
        _emit(render(header, fmt, result, columns, list(rows)), out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"pulsedde: invalid input: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # reader closed early (e.g. piped into head); not a failure of the run
        sys.stdout = open(os.devnull, "w")
        return 0
    except Exception as exc:  # noqa: BLE001 - the exit code carries the category
        print(f"pulsedde: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
