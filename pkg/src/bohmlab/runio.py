"""Run-directory output: manifests, CSV tables and JSON summaries.

Layout per run: config.snapshot (verbatim config), scales.json,
ensemble.csv, deviation.csv, events.jsonl, summary.json and
snapshots/t_<index>.csv. Sweeps add sweep.csv with the fitted slope in a
trailing comment line. Float formatting is fixed so reruns are bitwise
identical.
"""

import json
import os

import numpy as np

from .bohm import FLAG_NAMES
from .field import write_csv

FLOAT_FMT = "%.17g"


def _fmt(v):
    return FLOAT_FMT % v


def write_scales(scales, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(scales.as_dict()), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_ensemble_csv(ensemble, path):
    """Columns: t, particle_id, x, flag."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,particle_id,x,flag\n")
        for j, t in enumerate(ensemble.times):
            col = ensemble.positions[:, j]
            for i in range(ensemble.n_particles):
                fh.write(f"{_fmt(t)},{i},{_fmt(col[i])},"
                         f"{FLAG_NAMES[int(ensemble.flags[i])]}\n")


def write_deviation_csv(record, path):
    """Columns: t_prime, particle_id, D (valid samples only)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_prime,particle_id,D\n")
        for j, tp in enumerate(record.t_prime):
            col = record.d[:, j]
            for i in np.flatnonzero(np.isfinite(col)):
                fh.write(f"{_fmt(tp)},{i},{_fmt(col[i])}\n")


def write_events_jsonl(events, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(json.dumps(_jsonable(ev.as_dict()), sort_keys=True) + "\n")


def write_summary(result, path):
    ens = result.ensemble
    summary = {
        "scenario": result.scenario.name,
        "seed": int(ens.seed),
        "n_particles": int(ens.n_particles),
        "flag_fraction": ens.flag_fraction(),
        "order_violations": ens.order_violations(),
        "scales": result.scales.as_dict(),
        "n_events": len(result.events),
        "deviation_convention": (result.deviation.metadata
                                 if result.deviation is not None else None),
    }
    if result.ks_curve is not None:
        summary["ks_curve"] = [float(v) for v in result.ks_curve]
        summary["times"] = [float(t) for t in ens.times]
    if result.deviation is not None:
        summary["deviation_quantiles"] = {
            str(k): v for k, v in result.deviation.quantiles.items()}
        summary["p_exceed"] = {str(k): v
                               for k, v in result.deviation.exceedance.items()}
        summary["deviation_mean_sq"] = result.deviation.mean_sq
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(summary), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_sweep_csv(sweep, delta_list, path):
    """Per-point sweep table; the log-log slope rides in a footer comment."""
    deltas = [float(d) for d in delta_list]
    cols = ["epsilon", "d_median", "d_p90", "d_p99"]
    cols += [f"p_exceed_{d:g}" for d in deltas]
    cols += ["flagged_frac"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for p in sweep.points:
            if p.error is not None:
                fh.write(f"{_fmt(p.epsilon)},error,{json.dumps(p.error)}\n")
                continue
            row = [_fmt(p.epsilon), _fmt(p.d_median), _fmt(p.d_p90),
                   _fmt(p.d_p99)]
            row += [_fmt(p.p_exceed.get(d, np.nan)) for d in deltas]
            row += [_fmt(p.flagged_frac)]
            fh.write(",".join(row) + "\n")
        fh.write(f"# slope={_fmt(sweep.slope)} "
                 f"monotone_median={str(sweep.monotone_median).lower()}\n")


def write_run_dir(result, outdir, config_text=None, write_snapshots=True):
    """Materialize one scenario run; returns the directory path."""
    os.makedirs(outdir, exist_ok=True)
    if config_text is not None:
        with open(os.path.join(outdir, "config.snapshot"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write(config_text)
    write_scales(result.scales, os.path.join(outdir, "scales.json"))
    write_ensemble_csv(result.ensemble, os.path.join(outdir, "ensemble.csv"))
    if result.deviation is not None:
        write_deviation_csv(result.deviation,
                            os.path.join(outdir, "deviation.csv"))
    write_events_jsonl(result.events, os.path.join(outdir, "events.jsonl"))
    write_summary(result, os.path.join(outdir, "summary.json"))
    if write_snapshots:
        snapdir = os.path.join(outdir, "snapshots")
        os.makedirs(snapdir, exist_ok=True)
        for idx, w in enumerate(result.snapshots):
            write_csv(w, os.path.join(snapdir, f"t_{idx}.csv"))
    return outdir
