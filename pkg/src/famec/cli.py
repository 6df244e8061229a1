"""``famec`` command line.  Exit codes: 0 success, 1 validation failure, 2 runtime failure."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, emit_config, parse_config
from .io import FormatError

log = logging.getLogger("famec")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument("--config", type=Path, help="YAML config (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded deterministic kernels")
    p.add_argument("--csi", choices=("perfect", "estimated"), default=None)
    p.add_argument("--sinr", choices=("printed", "conventional"), default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="famec", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="synthesize a channel-image dataset")
    _common(p)
    p.add_argument("--count", type=int, default=200)

    p = sub.add_parser("train-ccs", help="train the CS channel estimator")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--no-importance", action="store_true", help="plain CCS ablation")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("eval-ccs", help="PSNR/SSIM of an estimator on a dataset")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("train", help="train one scheme's agents")
    _common(p)
    p.add_argument("--scheme", default="proposed")
    p.add_argument("--estimator", type=Path, default=None, help="CS checkpoint for --csi estimated")
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("eval", help="greedy evaluation of a trained run directory")
    _common(p)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--slots", type=int, default=20)

    p = sub.add_parser("sweep", help="run the experiment section of the config")
    _common(p)

    p = sub.add_parser("oracle", help="exhaustive APV oracle on held-out scenarios")
    _common(p)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--slots", type=int, default=5)
    return ap


def load(args):
    cfg, spec = parse_config(args.config.read_text() if args.config else "")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.sinr:
        cfg = cfg.replace(sinr_convention=args.sinr)
    if args.csi:
        spec = dataclasses.replace(spec, csi=args.csi)
    return cfg, spec


def _out(args, default, marker=None):
    """Output path; ``marker`` names the file whose presence marks a used directory."""
    out = args.out or Path(default)
    is_dir = marker is not None
    target = out / marker if is_dir else out
    if target.exists() and not args.force:
        raise UsageError(f"{target} exists; pass --force to overwrite")
    if is_dir:
        out.mkdir(parents=True, exist_ok=True)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _provenance(cfg, spec, seed):
    from .io import provenance_lines
    return provenance_lines(emit_config(cfg, spec), seed)


def _load_estimator(path):
    from .csnet.training import EstimatorBundle
    from .io import load_checkpoint
    arrays, meta = load_checkpoint(path)
    from .config import CSParams
    base, kw = CSParams(), {}
    for k, v in meta.items():
        if k.startswith("cs."):
            default = getattr(base, k[3:])
            kw[k[3:]] = v == "True" if isinstance(default, bool) else type(default)(v)
    return EstimatorBundle.from_arrays(CSParams(**kw), arrays)


def cmd_dataset(args):
    from .csnet.training import make_dataset
    from .io import save_dataset
    cfg, _ = load(args)
    out = _out(args, "dataset.fds")
    images = make_dataset(cfg, args.count, cfg.seed)
    save_dataset(images, out)
    print(f"wrote {len(images)} images to {out}")


def cmd_train_ccs(args):
    from .csnet.training import evaluate_estimator, train_estimator
    from .io import load_dataset, save_checkpoint
    from .utils import deterministic_mode
    cfg, _ = load(args)
    out = _out(args, "estimator.fck")
    images = load_dataset(args.dataset)
    params = dataclasses.replace(cfg.cs, use_importance=not args.no_importance)
    with deterministic_mode(args.deterministic):
        bundle = train_estimator(images, params, seed=cfg.seed, epochs=args.epochs)
    meta = {f"cs.{f.name}": getattr(params, f.name) for f in dataclasses.fields(params)
            if not isinstance(getattr(params, f.name), tuple)}
    save_checkpoint(bundle.state_arrays(), out, meta)
    q = evaluate_estimator(bundle, images)
    print(f"wrote {out}; train psnr {q['psnr']:.2f} dB ssim {q['ssim']:.4f}")


def cmd_eval_ccs(args):
    from .csnet.training import evaluate_estimator
    from .io import load_dataset, write_csv
    cfg, spec = load(args)
    bundle = _load_estimator(args.checkpoint)
    q = evaluate_estimator(bundle, load_dataset(args.dataset))
    print(f"psnr {q['psnr']:.4f} dB  ssim {q['ssim']:.6f}  psnr(pooled) {q['psnr_pooled']:.4f} dB")
    if args.out:
        out = _out(args, args.out)
        write_csv(out, ("psnr", "ssim", "psnr_pooled"), [{k: float(v) for k, v in q.items()}],
                  _provenance(cfg, spec, cfg.seed))


def _estimator_for(args, spec):
    if spec.csi == "perfect":
        return None
    if args.estimator is None:
        raise UsageError("--csi estimated needs --estimator CHECKPOINT")
    return _load_estimator(args.estimator)


def cmd_train(args):
    from .hitdma import TRACE_FIELDS, train
    from .io import module_arrays, save_checkpoint, write_csv
    cfg, spec = load(args)
    out = _out(args, "runs/train", "trace.csv")
    res = train(cfg, args.scheme, seed=cfg.seed, estimator=_estimator_for(args, spec),
                episodes=args.episodes, deterministic=args.deterministic)
    arrays = module_arrays(res.controller.modules())
    if res.positions is not None:
        arrays["env.positions"] = res.positions
    rp = res.reward_params
    save_checkpoint(arrays, out / "controller.fck",
                    {"scheme": args.scheme, "t1": repr(rp.t1), "t2": repr(rp.t2),
                     "delta": repr(rp.delta)})
    (out / "config.yaml").write_text(emit_config(cfg, spec))
    write_csv(out / "trace.csv", TRACE_FIELDS, res.trace, _provenance(cfg, spec, cfg.seed))
    if args.estimator is not None:
        (out / "estimator.txt").write_text(str(args.estimator.resolve()) + "\n")
    last = res.trace[-max(1, len(res.trace) // 10):]
    print(f"{args.scheme}: {len(res.trace)} episodes, final reward "
          f"{np.mean([t['reward'] for t in last]):.2f}, {res.steps_validated} steps validated")


def load_run(run):
    """Rebuild a TrainResult from a ``famec train`` directory."""
    from .baselines import scheme_spec
    from .hitdma import Controller, RewardParams, TrainResult
    from .io import load_checkpoint, load_module_arrays
    cfg, spec = parse_config((run / "config.yaml").read_text())
    arrays, meta = load_checkpoint(run / "controller.fck")
    ctl = Controller.build(cfg, scheme_spec(meta["scheme"], cfg))
    positions = arrays.pop("env.positions", None)
    load_module_arrays(ctl.modules(), arrays)
    for m in ctl.modules().values():
        m.eval()
    rp = RewardParams(float(meta["delta"]), float(meta["t1"]), float(meta["t2"]))
    estimator = None
    if (run / "estimator.txt").exists():
        estimator = _load_estimator(Path((run / "estimator.txt").read_text().strip()))
    if positions is not None:
        positions = positions.astype(float)
    return cfg, spec, TrainResult(ctl, [], rp, positions, cfg.seed, 0, estimator)


def cmd_eval(args):
    from .hitdma import EVAL_FIELDS, evaluate, make_scenarios, system_delays
    from .io import write_csv
    cfg, spec, res = load_run(args.run)
    if args.sinr:
        cfg = cfg.replace(sinr_convention=args.sinr)
    seed = cfg.seed if args.seed is None else args.seed
    scen = make_scenarios(cfg, seed, args.episodes, args.slots, res.positions)
    with torch.no_grad():
        rows = evaluate(res, scen)
    out = _out(args, args.run / "eval.csv")
    write_csv(out, EVAL_FIELDS, rows, _provenance(cfg, spec, seed))
    t = system_delays(rows)
    print(f"{res.controller.spec.name}: median T_s {np.median(t):.6g} s over {t.size} slots -> {out}")


def cmd_sweep(args):
    from .experiments import RunExists, run_experiment
    cfg, spec = load(args)
    if args.out:
        spec = dataclasses.replace(spec, output_dir=str(args.out))
    try:
        out = run_experiment(cfg, spec, force=args.force, deterministic=args.deterministic)
    except RunExists as exc:
        raise UsageError(str(exc))
    print(f"results in {out}")


def cmd_oracle(args):
    from .hitdma import EVAL_FIELDS, evaluate_oracle, make_scenarios, system_delays
    from .io import write_csv
    cfg, spec = load(args)
    out = _out(args, "oracle.csv")
    scen = make_scenarios(cfg, cfg.seed, args.episodes, args.slots)
    rows = evaluate_oracle(cfg, scen)
    write_csv(out, EVAL_FIELDS, rows, _provenance(cfg, spec, cfg.seed))
    print(f"oracle: median T_s {np.median(system_delays(rows)):.6g} s -> {out}")


COMMANDS = {"dataset": cmd_dataset, "train-ccs": cmd_train_ccs, "eval-ccs": cmd_eval_ccs,
            "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .utils import worker_count
    torch.set_num_threads(worker_count())
    try:
        COMMANDS[args.command](args)
    except (ConfigError, UsageError, FormatError) as exc:
        print(f"famec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:   # runtime failure, keep the contract
        log.debug("runtime failure", exc_info=True)
        print(f"famec: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
