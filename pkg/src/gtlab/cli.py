"""Command-line experiment runner.

Every command accepts ``--config FILE`` with flat ``key=value`` lines; flags
given on the command line override the file. Output is CSV preceded by a
``#``-prefixed metadata block echoing the resolved configuration.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from typing import Callable

import numpy as np

from . import __version__
from .designs import (CC, DesignParams, Instance, comp_reduce, gen_instance, read_instance,
                      write_instance)
from .detection import STATISTICS, run_detection_experiment
from .moments import alpha_grid, bern_chi_sq, second_moment_table, solve_first_moment
from .numerics import ConvergenceError
from .parallel import default_workers, map_trials, trial_rng
from .recovery import aon_experiment, comp_recover, separate_decoding
from .thresholds import normalize_design, phase_diagram

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# --- value parsing ----------------------------------------------------------

def parse_float(text) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def parse_int(text) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def parse_grid(text) -> list[float]:
    """``a:b:step`` (inclusive of b up to rounding) or a comma-separated list."""
    s = str(text).strip()
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {s!r} must be a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ValueError(f"grid {s!r} is empty")
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        vals = [round(a + i * step, 12) for i in range(count)]
    else:
        vals = [float(p) for p in s.split(",") if p.strip()]
    if not vals:
        raise ValueError("grid is empty")
    return vals


def parse_int_grid(text) -> list[int]:
    return [parse_int(v) for v in parse_grid(text)]


def parse_design(text) -> str:
    return normalize_design(str(text))


def parse_t(text) -> float | None:
    s = str(text).strip().lower()
    if s in ("", "auto", "none"):
        return None
    return math.inf if s in ("inf", "infinity") else parse_float(s)


# key -> (parser, default); REQUIRED marks keys with no default
REQUIRED = object()
KeySpec = dict[str, tuple[Callable, object]]

_DESIGN = ("design", (parse_design, CC))
_THETA = ("theta", (parse_float, 0.3))
_N = ("n", (parse_int, 10**5))
_SEED = ("seed", (parse_int, 0))
_OUT = ("output", (str, "-"))

COMMANDS: dict[str, KeySpec] = {
    "gen": dict([_DESIGN, _THETA, ("c", (parse_float, REQUIRED)), _N, _SEED, ("reduce", (parse_int, 0)), _OUT]),
    "recover": dict([_DESIGN, _THETA, ("c", (parse_float, REQUIRED)), _N, ("trials", (parse_int, 1)), _SEED,
                     ("method", (str, "comp")), ("pos_threshold", (parse_int, 0)), ("input", (str, "")), _OUT]),
    "detect": dict([_DESIGN, _THETA, ("c", (parse_float, REQUIRED)), _N, ("trials", (parse_int, 200)), _SEED,
                    ("statistic", (str, "")), ("t", (parse_t, None)), ("B", (parse_float, 8.0)), _OUT]),
    "thresholds": dict([_DESIGN, ("theta_grid", (parse_grid, "0.01:0.99:0.01")), _OUT]),
    "phase-diagram": dict([_DESIGN, ("theta_grid", (parse_grid, "0.01:0.99:0.01")),
                           ("c_grid", (parse_grid, "0.1:3:0.1")), _OUT]),
    "moments": dict([_THETA, ("c", (parse_float, None)), ("c_grid", (parse_grid, None)), ("n", (parse_int, 10**6)),
                     ("alpha_step", (parse_float, 0.01)), _OUT]),
    "aon": dict([_DESIGN, _THETA, ("c_grid", (parse_grid, "0.5,1,1.44,2,3")), _N, ("trials", (parse_int, 100)),
                 _SEED, _OUT]),
    "chi2": dict([_THETA, ("c", (parse_float, REQUIRED)), ("n", (parse_int, None)), ("n_grid", (parse_int_grid, None)),
                  ("t", (parse_t, math.inf)), ("epsilon", (parse_float, 1.0)), ("mc_trials", (parse_int, 0)),
                  _SEED, _OUT]),
}


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def resolve_config(command: str, file_values: dict[str, str], flag_values: dict[str, str]) -> dict:
    keyspec = COMMANDS[command]
    file_values = dict(file_values)
    if file_values.pop("command", command) != command:
        raise ConfigError("config file names a different command")
    file_values.pop("workers", None)
    unknown = set(file_values) - set(keyspec)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
    cfg = {}
    for key, (parse, default) in keyspec.items():
        raw = flag_values.get(key, file_values.get(key))
        if raw is None:
            if default is REQUIRED:
                raise ConfigError(f"missing required value {key!r}")
            cfg[key] = parse(default) if isinstance(default, str) and parse not in (str,) else default
            continue
        try:
            cfg[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict):
    if cfg.get("trials") is not None and cfg["trials"] < 1:
        raise ConfigError("trials must be at least 1")
    if command == "detect" and cfg["trials"] < 4:
        raise ConfigError("detect needs at least 4 trials")
    if command == "detect" and cfg["statistic"] and cfg["statistic"] not in STATISTICS:
        raise ConfigError(f"statistic must be one of {STATISTICS}")
    if command == "recover" and cfg["method"] not in ("comp", "separate"):
        raise ConfigError("method must be comp or separate")
    if command == "moments" and cfg["c"] is None and cfg["c_grid"] is None:
        raise ConfigError("moments needs c or c_grid")
    if command == "chi2":
        if (cfg["n"] is None) == (cfg["n_grid"] is None):
            raise ConfigError("chi2 needs exactly one of n or n_grid")


# --- output -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return ""
    return str(v)


def metadata_block(command: str, cfg: dict) -> str:
    lines = [f"# gtlab_version={__version__}", f"# command={command}"]
    lines += [f"# {k}={_fmt(v)}" for k, v in cfg.items() if k != "output"]
    return "\n".join(lines) + "\n"


def csv_text(header: list[str], rows, fmt: Callable = _fmt) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(x) for x in r) + "\n")
    return buf.getvalue()


def emit(path: str, text: str):
    if path in ("-", ""):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


# --- commands ---------------------------------------------------------------

def cmd_gen(cfg, workers):
    params = DesignParams.from_scaling(cfg["n"], cfg["theta"], cfg["c"], cfg["design"], cfg["seed"])
    inst = gen_instance(params, trial_rng(cfg["seed"], 0))
    if cfg["reduce"]:
        return write_instance(comp_reduce(inst), design=params.design)
    return write_instance(inst)


def _recover_trial(n, theta, c, design, method, pos_threshold, seed, trial):
    params = DesignParams.from_scaling(n, theta, c, design, seed)
    inst = gen_instance(params, trial_rng(seed, trial))
    res = comp_recover(inst) if method == "comp" else separate_decoding(inst, pos_threshold)
    return (trial, res.overlap, res.overlap_raw, res.false_pos, res.false_neg)


def cmd_recover(cfg, workers):
    header = ["trial", "overlap_norm", "overlap_raw", "false_pos", "false_neg"]
    if cfg["input"]:
        try:
            with open(cfg["input"]) as fh:
                parsed = read_instance(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {cfg['input']}: {exc}") from None
        if parsed.outcomes is None:
            raise ConfigError("recovery needs a pre-COMP instance with outcomes")
        sigma = np.zeros(parsed.graph.N, dtype=np.uint8)
        sigma[parsed.infected] = 1
        inst = Instance(None, parsed.graph, sigma, parsed.outcomes)
        res = comp_recover(inst) if cfg["method"] == "comp" else separate_decoding(inst, cfg["pos_threshold"])
        rows = [(0, res.overlap, res.overlap_raw, res.false_pos, res.false_neg)]
    else:
        jobs = [(cfg["n"], cfg["theta"], cfg["c"], cfg["design"], cfg["method"], cfg["pos_threshold"], cfg["seed"], i)
                for i in range(cfg["trials"])]
        rows = map_trials(_recover_trial, jobs, workers)
    return csv_text(header, rows)


def cmd_detect(cfg, workers):
    exp = run_detection_experiment(cfg["design"], cfg["theta"], cfg["c"], cfg["n"], cfg["statistic"] or None,
                                   cfg["trials"], cfg["seed"], cfg["t"], cfg["B"], workers)
    header = ["design", "theta", "c", "n", "trial", "label", "statistic", "decision"]
    rows = [(cfg["design"], cfg["theta"], cfg["c"], cfg["n"], r["trial"], r["label"], r["statistic"], r["decision"])
            for r in exp.rows]
    text = csv_text(header, rows)
    sep = exp.report.separation_ratio if exp.report else 0.0
    thr = exp.report.threshold if exp.report else float("nan")
    text += f"# accuracy={_fmt(exp.accuracy)}\n# separation_ratio={_fmt(sep)}\n# threshold={_fmt(thr)}\n"
    text += f"# t={_fmt(exp.t)}\n"
    return text


def _g12(v) -> str:
    if isinstance(v, (float, np.floating)) and not isinstance(v, bool):
        return f"{float(v):.12g}"
    return _fmt(v)


def cmd_thresholds(cfg, workers):
    rows = [(r["theta"], r["c_inf"], r["c_alg"], r["c_ld"]) for r in phase_diagram(cfg["design"], cfg["theta_grid"])]
    return csv_text(["theta", "c_inf", "c_alg", "c_ld"], rows, _g12)


def cmd_phase_diagram(cfg, workers):
    rows = [(r["theta"], r["c"], r["c_inf"], r["c_alg"], r["c_ld"], r["region"], r["on_boundary"])
            for r in phase_diagram(cfg["design"], cfg["theta_grid"], cfg["c_grid"])]
    return csv_text(["theta", "c", "c_inf", "c_alg", "c_ld", "region", "on_boundary"], rows, _g12)


def cmd_moments(cfg, workers):
    cs = cfg["c_grid"] if cfg["c_grid"] is not None else [cfg["c"]]
    alphas = alpha_grid(cfg["alpha_step"])
    multi = len(cs) > 1
    header = (["c"] if multi else []) + ["alpha", "x0", "x1", "F", "bound", "margin"]
    rows, summary = [], []
    for c in cs:
        table = second_moment_table(c, alphas)
        for r in table:
            rows.append(([c] if multi else []) + [r.alpha, r.x0, r.x1, r.F, r.bound, r.margin])
        summary.append(f"# c={_fmt(c)} margin={_fmt(min(r.margin for r in table))}")
        p = DesignParams.from_scaling(cfg["n"], cfg["theta"], c, CC)
        N, M = p.center_dimensions()
        try:
            fm = solve_first_moment(N, M, p.k, p.delta)
            summary.append(f"# c={_fmt(c)} q_hat_ratio={_fmt(fm.q_hat * 2 * N / p.k)} "
                           f"exponent_per_kDelta={_fmt(fm.exponent_per_kDelta)} residual={_fmt(fm.residual)}")
        except ValueError as exc:
            summary.append(f"# c={_fmt(c)} first_moment_error={exc}")
    return csv_text(header, rows) + "\n".join(summary) + "\n"


def cmd_aon(cfg, workers):
    summary, rows = aon_experiment(cfg["theta"], cfg["c_grid"], cfg["n"], cfg["trials"], cfg["seed"],
                                   cfg["design"], workers)
    text = csv_text(["c", "trial", "overlap_norm", "overlap_raw", "Z"],
                    [(r.c, r.trial, r.overlap_norm, r.overlap_raw, r.Z) for r in rows])
    text += "".join(f"# c={_fmt(s['c'])} mean_overlap={_fmt(s['mean_overlap'])}\n" for s in summary)
    return text


def cmd_chi2(cfg, workers):
    ns = cfg["n_grid"] if cfg["n_grid"] is not None else [cfg["n"]]
    multi = len(ns) > 1
    header = (["n"] if multi else []) + ["ell", "log_term"]
    rows, summary = [], []
    for n in ns:
        led = bern_chi_sq(cfg["theta"], cfg["c"], cfg["t"], cfg["epsilon"], n, cfg["mc_trials"], cfg["seed"])
        rows += [([n] if multi else []) + [ell, float(v)] for ell, v in enumerate(led.log_terms)]
        summary.append(f"# n={n} N={led.N} M={led.M} k={led.k} log_T_low={_fmt(led.log_T_low)} "
                       f"log_T_high={_fmt(led.log_T_high)} T_low={_fmt(led.T_low)} "
                       f"p_good_union={_fmt(led.p_good_union)} p_good_mc={_fmt(led.p_good_mc)}")
    return csv_text(header, rows) + "\n".join(summary) + "\n"


HANDLERS = {"gen": cmd_gen, "recover": cmd_recover, "detect": cmd_detect, "thresholds": cmd_thresholds,
            "phase-diagram": cmd_phase_diagram, "moments": cmd_moments, "aon": cmd_aon, "chi2": cmd_chi2}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtlab", description="Group testing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keyspec in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value file; flags override it")
        p.add_argument("--workers", default=None, help=f"worker processes (default ${'{'}GT_LAB_WORKERS{'}'} or 1)")
        for key in keyspec:
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "workers")}
    try:
        file_values = read_config_file(ns.config) if ns.config else {}
        cfg = resolve_config(ns.command, file_values, flags)
        workers = parse_int(ns.workers) if ns.workers is not None else default_workers()
        body = HANDLERS[ns.command](cfg, workers)
        emit(cfg["output"], metadata_block(ns.command, cfg) + body)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
