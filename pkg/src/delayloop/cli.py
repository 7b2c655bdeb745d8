"""Batch front end: scenario configs in, CSV time series and a manifest out.

Config files are flat key-value text with dotted keys, one per line:

    model = two_level
    model.drive = 3.141592653589793
    model.tau = 1.0
    engine = cascade
    t_max = 3.0
    n_samples = 49
    output = run1

Subcommands: run (single engine, or --preset for a feedback/no-feedback
pair), compare (several engines on one grid plus a difference column),
sweep (one parameter over a value list plus a summary of late-time metrics),
presets (list or print the shipped scenarios).  Exit codes: 0 success,
1 invariant violation or internal error, 2 usage/config error, 3 memory
budget exceeded (partial CSV plus manifest noting the truncation).
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .cascade import FeedbackSystem
from .models import (CavityParams, TwoLevelParams, cavity, coherent_state,
                     excited_state, ground_state, two_level)
from .oracles import collision_model, dde_single_excitation, mean_field_cavity_dde
from .propagator import MemoryBudgetError
from .sim import Trajectory, no_feedback_reference, simulate

TRACE_GATE = 1e-8
EIG_GATE = -1e-8

_MODEL_KEYS = {
    "two_level": {"model.drive", "model.gamma", "model.phi", "model.tau"},
    "cavity": {"model.detuning", "model.fock_cutoff", "model.kappa1",
               "model.kappa2", "model.phi", "model.tau"},
}
_COMMON_KEYS = {"model", "engine", "t_max", "n_samples", "initial",
                "initial.alpha", "output", "tolerance", "note",
                "collision.dt_bin", "collision.n_max"}
_ENGINES = ("cascade", "collision", "dde", "no_feedback")


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    model: str
    engine: str = "cascade"
    t_max: float = 1.0
    n_samples: int = 41
    initial: str = "excited"
    initial_alpha: float = 0.5
    output: str = "run"
    tolerance: float = 1e-8
    note: str = ""
    collision_dt_bin: float = 0.0
    collision_n_max: int = 0
    model_params: dict = field(default_factory=dict)

    def validate(self):
        if self.model not in _MODEL_KEYS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.engine not in _ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if self.model == "two_level" and self.initial not in ("excited", "ground"):
            raise ConfigError("two_level initial state must be excited or ground")
        if self.model == "cavity" and self.initial not in ("coherent", "vacuum"):
            raise ConfigError("cavity initial state must be coherent or vacuum")
        if self.engine == "dde" and self.model == "two_level" \
                and self.model_params.get("drive", 0.0) != 0.0:
            raise ConfigError("the dde engine requires an undriven atom")
        if self.engine == "collision" and self.collision_dt_bin <= 0:
            raise ConfigError("collision engine needs collision.dt_bin > 0")


def _convert(value):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_config(text):
    """Parse flat dotted-key config text into a ScenarioConfig."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = _convert(value)

    model = raw.get("model")
    if model not in _MODEL_KEYS:
        raise ConfigError(f"missing or unknown model: {model!r}")
    allowed = _COMMON_KEYS | _MODEL_KEYS[model]
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} for model {model}")

    cfg = ScenarioConfig(model=model)
    cfg.engine = raw.get("engine", cfg.engine)
    cfg.t_max = float(raw.get("t_max", cfg.t_max))
    cfg.n_samples = int(raw.get("n_samples", cfg.n_samples))
    cfg.initial = raw.get("initial", "excited" if model == "two_level" else "coherent")
    cfg.initial_alpha = float(raw.get("initial.alpha", cfg.initial_alpha))
    cfg.output = str(raw.get("output", cfg.output))
    cfg.tolerance = float(raw.get("tolerance", cfg.tolerance))
    cfg.note = str(raw.get("note", ""))
    cfg.collision_dt_bin = float(raw.get("collision.dt_bin", 0.0))
    cfg.collision_n_max = int(raw.get("collision.n_max", 0))
    prefix = "model."
    cfg.model_params = {k[len(prefix):]: raw[k] for k in raw if k.startswith(prefix)}
    cfg.validate()
    return cfg


def build_system(cfg) -> FeedbackSystem:
    p = cfg.model_params
    if cfg.model == "two_level":
        return two_level(TwoLevelParams(
            drive=float(p.get("drive", 0.0)), gamma=float(p.get("gamma", 1.0)),
            phi=float(p.get("phi", np.pi)), tau=float(p.get("tau", 1.0))))
    return cavity(CavityParams(
        detuning=float(p.get("detuning", 0.0)),
        fock_cutoff=int(p.get("fock_cutoff", 4)),
        kappa1=float(p.get("kappa1", 1.0)), kappa2=float(p.get("kappa2", 1.0)),
        phi=float(p.get("phi", np.pi)), tau=float(p.get("tau", 1.0))))


def build_initial_state(cfg, sys_):
    if cfg.model == "two_level":
        return excited_state() if cfg.initial == "excited" else ground_state()
    if cfg.initial == "vacuum":
        rho = np.zeros((sys_.d, sys_.d), dtype=complex)
        rho[0, 0] = 1.0
        return rho
    return coherent_state(cfg.initial_alpha, sys_.d - 1)


def _default_n_max(cfg):
    if cfg.collision_n_max:
        return cfg.collision_n_max
    driven = cfg.model == "two_level" and cfg.model_params.get("drive", 0.0) > 0
    return 2 if driven or cfg.model == "cavity" else 1


def _dde_trajectory(cfg, sys_, rho0, times):
    if cfg.model == "two_level":
        c0 = np.sqrt(float(np.real(rho0[1, 1])))
        pe = dde_single_excitation(sys_.kappa1, sys_.kappa2, sys_.phi, sys_.tau,
                                   times, c0=c0)
        states = np.array([np.diag([1 - p, p]).astype(complex) for p in pe])
        obs = {"P_e": pe, "re_coh": np.zeros_like(pe), "im_coh": np.zeros_like(pe)}
        diags = {"trace_err": np.zeros_like(pe),
                 "min_eig": np.minimum(pe, 1 - pe), "max_k": None}
        return Trajectory(times=times, states=states, observables=obs,
                          diagnostics=diags)
    delta = float(cfg.model_params.get("detuning", 0.0))
    alpha = mean_field_cavity_dde(delta, sys_.kappa1, sys_.kappa2, sys_.phi,
                                  sys_.tau, cfg.initial_alpha, times)
    obs = {"re_a": alpha.real, "im_a": alpha.imag, "n_phot": np.abs(alpha) ** 2}
    diags = {"trace_err": np.zeros(len(times)), "min_eig": np.zeros(len(times)),
             "max_k": None}
    return Trajectory(times=times, states=np.zeros((len(times), 1, 1)),
                      observables=obs, diagnostics=diags)


def run_engine(cfg, engine, sys_, rho0, times) -> Trajectory:
    if engine == "cascade":
        return simulate(sys_, rho0, times)
    if engine == "no_feedback":
        return no_feedback_reference(sys_, rho0, times)
    if engine == "collision":
        return collision_model(sys_, rho0, cfg.collision_dt_bin,
                               _default_n_max(cfg), times)
    if engine == "dde":
        return _dde_trajectory(cfg, sys_, rho0, times)
    raise ConfigError(f"unknown engine {engine!r}")


def make_grid(cfg, sys_):
    times = np.linspace(0.0, cfg.t_max, cfg.n_samples)
    if times[0] == 0.0:
        times = times[1:] if cfg.n_samples > 2 else np.array([cfg.t_max / 2, cfg.t_max])
    if cfg.engine == "collision" or cfg.collision_dt_bin > 0:
        n_tau = max(2, int(round(sys_.tau / cfg.collision_dt_bin))) \
            if cfg.collision_dt_bin > 0 else None
        if n_tau:
            dt = sys_.tau / n_tau
            times = np.unique(np.maximum(np.rint(times / dt), 1)) * dt
    return times


_SCHEMAS = {
    2: ("t", "P_e", "re_coh", "im_coh", "trace_err", "min_eig"),
    "cavity": ("t", "re_a", "im_a", "n_phot", "trace_err", "min_eig"),
}


def columns_for(traj):
    if "P_e" in traj.observables:
        header = _SCHEMAS[2]
        cols = [traj.times, traj.observables["P_e"], traj.observables["re_coh"],
                traj.observables["im_coh"], traj.diagnostics["trace_err"],
                traj.diagnostics["min_eig"]]
    else:
        header = _SCHEMAS["cavity"]
        cols = [traj.times, traj.observables["re_a"], traj.observables["im_a"],
                traj.observables["n_phot"], traj.diagnostics["trace_err"],
                traj.diagnostics["min_eig"]]
    return header, cols


def enforce_gates(traj, engine):
    bad_tr = float(np.max(traj.diagnostics["trace_err"]))
    bad_eig = float(np.min(traj.diagnostics["min_eig"]))
    if bad_tr >= TRACE_GATE or bad_eig <= EIG_GATE:
        raise InvariantViolation(
            f"engine {engine}: trace error {bad_tr:.3g} / min eigenvalue "
            f"{bad_eig:.3g} outside gates")


def write_csv(path, header, cols):
    rows = np.column_stack(cols)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def engine_diagnostics(traj):
    return {
        "max_trace_err": float(np.max(traj.diagnostics["trace_err"])),
        "min_eig": float(np.min(traj.diagnostics["min_eig"])),
        "max_k": traj.diagnostics.get("max_k"),
    }


def write_manifest(path, cfg, engines_diag, wall_time, truncated=False, notes=()):
    payload = {
        "version": __version__,
        "config": {k: v for k, v in vars(cfg).items() if k != "model_params"},
        "model_params": cfg.model_params,
        "engines": engines_diag,
        "wall_time_s": wall_time,
        "truncated": truncated,
        "notes": list(notes),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def preset_names():
    pkg = resources.files("delayloop") / "presets"
    return sorted(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".cfg"))


def load_preset(name):
    pkg = resources.files("delayloop") / "presets" / f"{name}.cfg"
    if not pkg.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return pkg.read_text()


def _run_single(cfg, out_base):
    """One engine on one grid; returns (manifest-diag, notes)."""
    sys_ = build_system(cfg)
    rho0 = build_initial_state(cfg, sys_)
    times = make_grid(cfg, sys_)
    notes = [cfg.note] if cfg.note else []
    truncated = False
    try:
        traj = run_engine(cfg, cfg.engine, sys_, rho0, times)
    except MemoryBudgetError as err:
        if err.max_reachable_t is None or err.max_reachable_t <= 0:
            raise
        times = times[times <= err.max_reachable_t + 1e-12]
        traj = run_engine(cfg, cfg.engine, sys_, rho0, times)
        notes.append(f"truncated at t={err.max_reachable_t:g}: {err}")
        truncated = True
    enforce_gates(traj, cfg.engine)
    header, cols = columns_for(traj)
    write_csv(f"{out_base}.csv", header, cols)
    return {cfg.engine: engine_diagnostics(traj)}, notes, truncated


def cmd_run(args):
    t0 = time.monotonic()
    if args.preset:
        cfg = parse_config(load_preset(args.preset))
    else:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    if args.output:
        cfg.output = args.output
    if args.tolerance:
        cfg.tolerance = args.tolerance

    if args.preset:
        # feedback run plus the cut-loop comparison curve
        sys_ = build_system(cfg)
        rho0 = build_initial_state(cfg, sys_)
        times = make_grid(cfg, sys_)
        diag = {}
        notes = [cfg.note] if cfg.note else []
        truncated = False
        for engine, suffix in ((cfg.engine, "feedback"), ("no_feedback", "no_feedback")):
            try:
                traj = run_engine(cfg, engine, sys_, rho0, times)
            except MemoryBudgetError as err:
                if err.max_reachable_t is None or err.max_reachable_t <= 0:
                    raise
                times_cut = times[times <= err.max_reachable_t + 1e-12]
                traj = run_engine(cfg, engine, sys_, rho0, times_cut)
                notes.append(f"{engine} truncated at t={err.max_reachable_t:g}")
                truncated = True
            enforce_gates(traj, engine)
            header, cols = columns_for(traj)
            write_csv(f"{cfg.output}_{suffix}.csv", header, cols)
            diag[engine] = engine_diagnostics(traj)
        write_manifest(f"{cfg.output}.manifest.json", cfg, diag,
                       time.monotonic() - t0, truncated, notes)
        return 3 if truncated else 0

    diag, notes, truncated = _run_single(cfg, cfg.output)
    write_manifest(f"{cfg.output}.manifest.json", cfg, diag,
                   time.monotonic() - t0, truncated, notes)
    return 3 if truncated else 0


def cmd_compare(args):
    t0 = time.monotonic()
    with open(args.config) as fh:
        cfg = parse_config(fh.read())
    if args.output:
        cfg.output = args.output
    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    if len(engines) < 2:
        raise ConfigError("compare needs at least two engines")
    for e in engines:
        if e not in _ENGINES:
            raise ConfigError(f"unknown engine {e!r}")
    if "collision" in engines and cfg.collision_dt_bin <= 0:
        raise ConfigError("collision engine needs collision.dt_bin > 0")
    if "dde" in engines and cfg.model == "two_level" \
            and cfg.model_params.get("drive", 0.0) != 0.0:
        raise ConfigError("the dde engine requires an undriven atom")
    sys_ = build_system(cfg)
    rho0 = build_initial_state(cfg, sys_)
    saved_engine = cfg.engine
    cfg.engine = "collision" if "collision" in engines else engines[0]
    times = make_grid(cfg, sys_)
    cfg.engine = saved_engine

    key = "P_e" if sys_.d == 2 else "n_phot"
    series = {}
    diag = {}
    for engine in engines:
        traj = run_engine(cfg, engine, sys_, rho0, times)
        enforce_gates(traj, engine)
        series[engine] = traj.observables[key]
        diag[engine] = engine_diagnostics(traj)
    header = ["t"] + [f"{key}_{e}" for e in engines]
    cols = [times] + [series[e] for e in engines]
    if len(engines) == 2:
        header.append("abs_diff")
        cols.append(np.abs(series[engines[0]] - series[engines[1]]))
    else:
        header.append("abs_diff_max")
        stack = np.stack([series[e] for e in engines])
        cols.append(stack.max(axis=0) - stack.min(axis=0))
    write_csv(f"{cfg.output}.csv", header, cols)
    write_manifest(f"{cfg.output}.manifest.json", cfg, diag,
                   time.monotonic() - t0, False,
                   [cfg.note] if cfg.note else [])
    return 0


def _sweep_one(payload):
    cfg_text, parameter, value, out_base = payload
    cfg = parse_config(cfg_text)
    if parameter == "tau":
        cfg.model_params["tau"] = value
    elif parameter == "drive":
        if cfg.model != "two_level":
            raise ConfigError("drive sweeps need the two_level model")
        cfg.model_params["drive"] = value
    elif parameter == "phi":
        cfg.model_params["phi"] = value
    cfg.output = out_base
    diag, notes, truncated = _run_single(cfg, out_base)
    sys_ = build_system(cfg)

    header, cols = None, None
    data = np.genfromtxt(f"{out_base}.csv", delimiter=",", names=True)
    key = "P_e" if cfg.model == "two_level" else "n_phot"
    t = data["t"]
    y = data[key]
    late = t >= t.max() - sys_.tau
    metrics = {
        "late_mean": float(np.mean(y[late])),
        "late_peak_to_trough": float(np.max(y[late]) - np.min(y[late])),
    }
    undriven = cfg.model == "two_level" and cfg.model_params.get("drive", 0.0) == 0.0
    if undriven and abs(cfg.model_params.get("phi", np.pi) - np.pi) < 1e-12:
        gamma = float(cfg.model_params.get("gamma", 1.0))
        metrics["plateau_prediction"] = 1.0 / (1.0 + gamma * sys_.tau) ** 2
    else:
        metrics["plateau_prediction"] = float("nan")
    return value, metrics, truncated


def cmd_sweep(args):
    t0 = time.monotonic()
    with open(args.config) as fh:
        cfg_text = fh.read()
    cfg = parse_config(cfg_text)
    if args.output:
        cfg.output = args.output
    if args.parameter not in ("tau", "drive", "phi"):
        raise ConfigError("sweep parameter must be tau, drive, or phi")
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs a nonempty value list")

    jobs = []
    for value in values:
        out_base = f"{cfg.output}_{args.parameter}_{value:g}"
        jobs.append((cfg_text, args.parameter, value, out_base))
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]

    summary_path = f"{cfg.output}_sweep_summary.csv"
    with open(summary_path, "w") as fh:
        fh.write(f"{args.parameter},late_mean,late_peak_to_trough,plateau_prediction\n")
        for value, metrics, _ in results:
            fh.write(",".join(f"{v:.17g}" for v in
                              (value, metrics["late_mean"],
                               metrics["late_peak_to_trough"],
                               metrics["plateau_prediction"])) + "\n")
    truncated = any(r[2] for r in results)
    write_manifest(f"{cfg.output}_sweep.manifest.json", cfg,
                   {"sweep": {"parameter": args.parameter, "values": values}},
                   time.monotonic() - t0, truncated,
                   [cfg.note] if cfg.note else [])
    return 3 if truncated else 0


def cmd_presets(args):
    if args.name:
        sys.stdout.write(load_preset(args.name))
    else:
        for name in preset_names():
            print(name)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delayloop",
        description="Delayed coherent-feedback dynamics: cascade engine and oracles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", help="path to a scenario config")
    p_run.add_argument("--preset", help="name of a shipped preset scenario")
    p_run.add_argument("--output", help="output path base")
    p_run.add_argument("--tolerance", type=float, default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several engines on one grid")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--engines", required=True,
                       help="comma-separated engine list")
    p_cmp.add_argument("--output", help="output path base")
    p_cmp.add_argument("--tolerance", type=float, default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_swp = sub.add_parser("sweep", help="sweep one parameter over values")
    p_swp.add_argument("--config", required=True)
    p_swp.add_argument("--parameter", required=True)
    p_swp.add_argument("--values", required=True,
                       help="comma-separated numeric values")
    p_swp.add_argument("--output", help="output path base")
    p_swp.add_argument("--jobs", type=int, default=1)
    p_swp.add_argument("--tolerance", type=float, default=None)
    p_swp.set_defaults(func=cmd_sweep)

    p_pre = sub.add_parser("presets", help="list or print shipped presets")
    p_pre.add_argument("name", nargs="?", default=None)
    p_pre.set_defaults(func=cmd_presets)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and bool(args.config) == bool(args.preset):
        parser.error("run needs exactly one of --config or --preset")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except MemoryBudgetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except InvariantViolation as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
