"""Command-line front end: run, verify and list-scenarios subcommands.

Runs are driven by a single self-describing JSON config; the file is copied
verbatim into the run directory so a rerun from config.snapshot reproduces
the outputs bitwise. Exit codes: 0 success, 2 validation error, 3 runtime
failure.
"""

import argparse
import json
import os
import sys

from . import experiments, runio
from .errors import BohmlabError, ConfigError

OUTPUT_ROOT_ENV = "BOHMLAB_OUTPUT_ROOT"
NATURAL_UNITS = "natural: hbar=m=1"

_TOP_KEYS = {"units", "scenario", "overrides", "output_dir", "parallel",
             "smoke", "write_snapshots"}
_OVERRIDE_KEYS = {"grid", "wave", "potential", "plan", "environment",
                  "n_particles", "seed", "L_o", "delta_list", "analysis",
                  "sweep"}
_GRID_KEYS = {"x_min", "x_max", "n"}
_PLAN_KEYS = {"t_final", "dt", "dt_factor", "snapshots"}
_ENV_KEYS = {"mode", "rate"}


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg, text


def _reject_unknown(d, allowed, path):
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key `{path}{key}`")


def validate_config(cfg):
    """Validate structure and preconditions; returns the resolved scenario."""
    _reject_unknown(cfg, _TOP_KEYS, "")
    units = cfg.get("units", NATURAL_UNITS)
    if units != NATURAL_UNITS:
        raise ConfigError(f"unknown unit convention in `units`: {units!r} "
                          f"(only {NATURAL_UNITS!r} is supported; scaled hbar "
                          "or mass go in `overrides.wave`)")
    if "scenario" not in cfg:
        raise ConfigError("missing key `scenario`")
    name = cfg["scenario"]
    if not isinstance(name, str):
        raise ConfigError("`scenario` must be a library name")
    try:
        scenario = experiments.get_scenario(name, smoke=bool(cfg.get("smoke")))
    except BohmlabError as exc:
        raise ConfigError(f"`scenario`: {exc}") from None

    overrides = cfg.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("`overrides` must be an object")
    _reject_unknown(overrides, _OVERRIDE_KEYS, "overrides.")
    for sub, allowed in (("grid", _GRID_KEYS), ("plan", _PLAN_KEYS),
                         ("environment", _ENV_KEYS)):
        if sub in overrides:
            if not isinstance(overrides[sub], dict):
                raise ConfigError(f"`overrides.{sub}` must be an object")
            _reject_unknown(overrides[sub], allowed, f"overrides.{sub}.")
    scenario = scenario.clone(**overrides)

    parallel = cfg.get("parallel", os.cpu_count() or 1)
    if not isinstance(parallel, int) or parallel < 1:
        raise ConfigError("`parallel` must be a positive integer")

    # constructing the objects exercises every module precondition
    try:
        experiments.build_objects(scenario)
    except BohmlabError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        key = "grid.n" if "power of two" in str(exc) else "overrides"
        raise ConfigError(f"`{key}`: {exc}") from None
    return scenario, parallel


def resolve_output_dir(cfg):
    out = cfg.get("output_dir")
    if out is None:
        raise ConfigError("missing key `output_dir`")
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


def cmd_verify(args):
    try:
        cfg, _ = load_config(args.config)
        validate_config(cfg)
        resolve_output_dir(cfg)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    print("config ok")
    return 0


def _print_scales(scales):
    d = scales.as_dict()
    print("scales:")
    for key in ("lambda", "L", "epsilon", "v", "T", "tau", "tau_over_T",
                "quadratic_case"):
        print(f"  {key} = {d[key]}")


def cmd_run(args):
    try:
        cfg, text = load_config(args.config)
        scenario, parallel = validate_config(cfg)
        outdir = resolve_output_dir(cfg)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        if scenario.sweep is not None:
            points = experiments.sweep_scenarios(scenario)
            sweep = experiments.epsilon_sweep(points, scenario.delta_list,
                                              n_jobs=parallel)
            os.makedirs(outdir, exist_ok=True)
            with open(os.path.join(outdir, "config.snapshot"), "w",
                      encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            runio.write_sweep_csv(sweep, scenario.delta_list,
                                  os.path.join(outdir, "sweep.csv"))
            print(f"sweep: {len(sweep.points)} points, slope {sweep.slope:.3f}, "
                  f"median monotone: {sweep.monotone_median}")
            first_ok = next(p for p in sweep.points if p.error is None)
            print(f"first point: epsilon={first_ok.epsilon:.4g} "
                  f"median sup|D|={first_ok.d_median:.4g}")
        else:
            result = experiments.run_scenario(
                scenario, compute_ks=bool(scenario.analysis.get("ks", True)))
            runio.write_run_dir(result, outdir, config_text=text,
                                write_snapshots=cfg.get("write_snapshots", True))
            _print_scales(result.scales)
    except BohmlabError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    print(f"outputs in {outdir}")
    return 0


def cmd_list_scenarios(args):
    lib = experiments.scenario_library()
    if not lib:
        print("scenario library is empty", file=sys.stderr)
        return 3
    if args.json:
        rows = [{"name": s.name, "description": s.description}
                for s in lib.values()]
        print(json.dumps(rows, indent=1, sort_keys=True))
    else:
        width = max(len(n) for n in lib)
        for name in sorted(lib):
            print(f"{name:<{width}}  {lib[name].description}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bohmlab",
        description="Bohmian classical-limit laboratory: scenario runs, "
                    "verification and sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario or sweep config")
    p_run.add_argument("config", help="path to a JSON run config")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="validate a config without running")
    p_ver.add_argument("config", help="path to a JSON run config")
    p_ver.set_defaults(func=cmd_verify)

    p_list = sub.add_parser("list-scenarios", help="list library scenarios")
    p_list.add_argument("--json", action="store_true",
                        help="machine-readable output")
    p_list.set_defaults(func=cmd_list_scenarios)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
