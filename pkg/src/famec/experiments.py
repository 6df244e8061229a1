"""Sweep orchestration: one cell per (sweep value, scheme, seed), results to CSV and plots."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import run_baseline, scheme_spec
from .config import ConfigError, emit_config
from .csnet.training import evaluate_estimator, make_dataset, train_estimator
from .hitdma import make_scenarios, system_delays
from .io import provenance_lines, write_csv
from .utils import deterministic_mode, worker_count

log = logging.getLogger(__name__)

RESULT_FIELDS = ("sweep_var", "sweep_value", "scheme", "seed", "T_s", "psnr", "ssim")
SUMMARY_FIELDS = ("sweep_var", "sweep_value", "scheme", "n", "T_s_median", "T_s_iqr",
                  "psnr_median", "psnr_iqr", "ssim_median", "ssim_iqr")
REWARD_FIELDS = ("sweep_value", "scheme", "seed", "episode", "reward")
FAILURE_FIELDS = ("sweep_value", "scheme", "seed", "error")
CS_SCHEMES = {"ibm-ccs": True, "ccs": False}

# desk-scale CS data budget per cell
CS_TRAIN_IMAGES = 200
CS_TEST_IMAGES = 50


class RunExists(FileExistsError):
    pass


def apply_sweep(cfg, var, value):
    """Scenario with one sweep axis set.  port_spacing is in wavelengths."""
    if var == "fa_length":
        return cfg.replace(fa_length=float(value))
    if var == "n_users":
        return cfg.replace(n_users=int(value))
    if var == "port_count":
        return cfg.replace(n_ports=int(value))
    if var == "port_spacing":
        return cfg.replace(fa_length=float(value) * (cfg.n_ports - 1))
    raise ConfigError(f"unknown sweep variable {var!r}", field="experiment.sweep_var")


def cell_seed(master, index):
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def cells(spec):
    out = []
    for value in spec.sweep_values:
        for scheme in spec.schemes:
            for seed in spec.seeds:
                out.append((len(out), value, scheme, seed))
    return out


def _train_cs(cfg, use_importance, seed):
    params = dataclasses.replace(cfg.cs, use_importance=use_importance)
    train_set = make_dataset(cfg, CS_TRAIN_IMAGES, np.random.SeedSequence([seed, 1]))
    test_set = make_dataset(cfg, CS_TEST_IMAGES, np.random.SeedSequence([seed, 2]))
    bundle = train_estimator(train_set, params, seed=seed)
    return bundle, evaluate_estimator(bundle, test_set)


def run_cell(cfg, spec, index, value, scheme, seed, deterministic=True):
    """-> (result row, reward trace rows).  Raises on failure."""
    with deterministic_mode(deterministic):
        c = apply_sweep(cfg, spec.sweep_var, value)
        c.validate()
        stream = cell_seed(seed, index)
        row = {"sweep_var": spec.sweep_var, "sweep_value": value, "scheme": scheme, "seed": seed}
        if scheme in CS_SCHEMES:
            _, q = _train_cs(c, CS_SCHEMES[scheme], stream)
            row.update(psnr=float(q["psnr"]), ssim=float(q["ssim"]))
            return row, []
        estimator = None
        if spec.csi == "estimated":
            # one estimator per sweep value, shared by every scheme and seed
            estimator, _ = _train_cs(c, True, cell_seed(spec.seeds[0], 10 ** 6))
        scen = make_scenarios(c, stream, 1, spec.eval_slots)
        rows, result = run_baseline(scheme_spec(scheme, c), c, stream, estimator, scen)
        row["T_s"] = float(np.median(system_delays(rows)))
        trace = [] if result is None else [
            {"sweep_value": value, "scheme": scheme, "seed": seed,
             "episode": t["episode"], "reward": t["reward"]} for t in result.trace]
        return row, trace


def _cell_job(args):
    cfg, spec, index, value, scheme, seed, deterministic = args
    try:
        return index, run_cell(cfg, spec, index, value, scheme, seed, deterministic), None
    except Exception as exc:   # recorded per cell, the sweep continues
        log.error("cell %d (%s=%s, %s, seed %s) failed: %s", index, spec.sweep_var, value,
                  scheme, seed, exc)
        return index, None, f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _iqr(xs):
    if len(xs) == 0:
        return np.nan, np.nan
    q1, med, q3 = np.percentile(xs, [25, 50, 75])
    return float(med), float(q3 - q1)


def summarize(rows, sweep_var):
    groups = {}
    for r in rows:
        groups.setdefault((r["sweep_value"], r["scheme"]), []).append(r)
    out = []
    for (value, scheme), rs in groups.items():
        s = {"sweep_var": sweep_var, "sweep_value": value, "scheme": scheme, "n": len(rs)}
        for key in ("T_s", "psnr", "ssim"):
            xs = [r[key] for r in rs if r.get(key) is not None and np.isfinite(r[key])]
            med, iqr = _iqr(xs) if xs else (None, None)
            s[f"{key}_median"], s[f"{key}_iqr"] = med, iqr
        out.append(s)
    return out


def plot_results(out, summary, traces, sweep_var):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def by_scheme(key):
        series = {}
        for s in summary:
            if s[f"{key}_median"] is not None:
                series.setdefault(s["scheme"], []).append(
                    (s["sweep_value"], s[f"{key}_median"], s[f"{key}_iqr"]))
        return series

    written = []
    delay = by_scheme("T_s")
    if delay:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for scheme, pts in sorted(delay.items()):
            x, y, e = map(np.array, zip(*sorted(pts)))
            ax.errorbar(x, y, yerr=e / 2, marker="o", capsize=3, label=scheme)
        ax.set_xlabel(sweep_var)
        ax.set_ylabel("system delay (s)")
        ax.legend()
        fig.tight_layout()
        written.append(out / f"delay_vs_{sweep_var}.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    quality = [(k, by_scheme(k)) for k in ("psnr", "ssim")]
    if any(series for _, series in quality):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, (key, series) in zip(axes, quality):
            for scheme, pts in sorted(series.items()):
                x, y, e = map(np.array, zip(*sorted(pts)))
                ax.errorbar(x, y, yerr=e / 2, marker="o", capsize=3, label=scheme)
            ax.set_xlabel(sweep_var)
            ax.set_ylabel(key.upper())
            if series:
                ax.legend()
        fig.tight_layout()
        written.append(out / f"quality_vs_{sweep_var}.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    if traces:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        curves = {}
        for t in traces:
            curves.setdefault(t["scheme"], {}).setdefault(t["episode"], []).append(t["reward"])
        for scheme, eps in sorted(curves.items()):
            x = np.array(sorted(eps))
            ax.plot(x, [np.mean(eps[e]) for e in x], label=scheme)
        ax.set_xlabel("episode")
        ax.set_ylabel("mean episode reward")
        ax.legend()
        fig.tight_layout()
        written.append(out / "reward_vs_episode.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    return written


def run_experiment(cfg, spec, force=False, deterministic=True, workers=None, commit=None,
                   plots=True):
    """Run every sweep cell and write results.csv, summary.csv, rewards.csv and plots.

    Returns the run directory.  A directory that already holds results is
    refused unless ``force`` is set.
    """
    spec.validate()
    out = Path(spec.output_dir)
    if (out / "results.csv").exists() and not force:
        raise RunExists(f"{out} already holds results; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    cfg_text = emit_config(cfg, spec)
    (out / "config.yaml").write_text(cfg_text)
    # the output location does not change results, keep it out of the hash
    hashed = emit_config(cfg, dataclasses.replace(spec, output_dir=""))
    prov = provenance_lines(hashed, ",".join(map(str, spec.seeds)), commit)

    jobs = [(cfg, spec, i, v, s, seed, deterministic) for i, v, s, seed in cells(spec)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            done = list(pool.map(_cell_job, jobs))
    else:
        done = [_cell_job(j) for j in jobs]
    done.sort(key=lambda d: d[0])       # cell order, independent of completion order

    rows, traces, failures = [], [], []
    for (index, value, scheme, seed), (_, res, err) in zip(cells(spec), done):
        if err is None:
            rows.append(res[0])
            traces.extend(res[1])
        else:
            rows.append({"sweep_var": spec.sweep_var, "sweep_value": value,
                         "scheme": scheme, "seed": seed})
            failures.append({"sweep_value": value, "scheme": scheme, "seed": seed, "error": err})
    write_csv(out / "results.csv", RESULT_FIELDS, rows, prov)
    summary = summarize(rows, spec.sweep_var)
    write_csv(out / "summary.csv", SUMMARY_FIELDS, summary, prov)
    write_csv(out / "rewards.csv", REWARD_FIELDS, traces, prov)
    if failures:
        write_csv(out / "failures.csv", FAILURE_FIELDS, failures, prov)
    elif (out / "failures.csv").exists():
        (out / "failures.csv").unlink()
    if plots:
        plot_results(out, summary, traces, spec.sweep_var)
    return out
