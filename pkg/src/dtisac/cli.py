"""Command line entry point: train, eval, sweep and report.

Exit codes: 0 success, 1 validation error (bad config, arguments, missing or
malformed checkpoints), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import METHODS, SimConfig, load_config

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("dtisac")


class UsageError(ValueError):
    pass


def _csv_floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc
    if not vals:
        raise UsageError("empty latency list")
    return vals


def _csv_methods(text: str) -> list[str]:
    vals = [x.strip() for x in text.split(",") if x.strip()]
    bad = [m for m in vals if m not in METHODS]
    if not vals or bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return vals


def _config(path) -> SimConfig:
    if path is None:
        return SimConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return load_config(p)


def cmd_train(args) -> int:
    from .harness.training import LEARNED_METHODS, train

    cfg = _config(args.config)
    method = args.method or cfg.method
    if method not in LEARNED_METHODS:
        raise UsageError(f"{method!r} is not trainable; choose from {', '.join(LEARNED_METHODS)}")
    if args.steps is not None and args.steps < 0:
        raise UsageError("--steps must be >= 0")
    res = train(cfg, method, args.out, total_steps=args.steps)
    first, last = res.decile_medians() if res.episode_rewards else (float("nan"),) * 2
    print(json.dumps({"method": method, "checkpoint": str(res.checkpoint), "updates": len(res.updates),
                      "episodes": len(res.episode_rewards), "stopped_early": res.stopped_early,
                      "first_decile_reward": first, "last_decile_reward": last}, indent=2))
    return EXIT_RUNTIME if res.stopped_early else EXIT_OK


def cmd_eval(args) -> int:
    from .harness.sweep import latency_key, load_policy, run_sweep, summarize

    cfg = _config(args.config)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.latency < 0:
        raise UsageError("--latency must be >= 0")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    from .harness.episode import Controller
    from .harness.training import pathway_of
    from .policy.ppo import load_checkpoint

    _, doc = load_checkpoint(ckpt)
    method = args.method or doc.get("meta", {}).get("method") or cfg.method
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    controller = Controller(method, pathway_of(method), load_policy(cfg, ckpt))
    lats = sorted({0.0, float(args.latency)})
    records = run_sweep(cfg, [method], lats, args.seeds, controllers={method: controller})
    cell = summarize(records, cfg)[method][latency_key(args.latency)]
    print(json.dumps({"method": method, **cell}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness.outputs import emit_outputs
    from .harness.plotting import format_table
    from .harness.sweep import run_sweep, summarize

    cfg = _config(args.config)
    lats = _csv_floats(args.latencies) if args.latencies else list(cfg.harness.latencies_ms)
    methods = _csv_methods(args.methods) if args.methods else list(METHODS)
    seeds = cfg.harness.eval_seeds if args.seeds is None else args.seeds
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if any(lat < 0 for lat in lats):
        raise UsageError("latencies must be >= 0")
    ckdir = args.checkpoints or cfg.harness.checkpoint_dir
    records = run_sweep(cfg, methods, lats, seeds, ckdir)
    summary = summarize(records, cfg)
    paths = emit_outputs(records, summary, cfg, args.out)
    print(format_table(summary))
    for p in paths.values():
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness.plotting import format_table, load_summary, write_report

    in_dir = Path(args.in_dir)
    if not (in_dir / "summary.json").is_file():
        raise UsageError(f"no summary.json in {in_dir}")
    print(format_table(load_summary(in_dir)))
    for p in write_report(in_dir, args.out):
        log.info("wrote %s", p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtisac", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one PPO variant")
    p.add_argument("--config", help="JSON config (defaults when omitted)")
    p.add_argument("--method", help="dt_ekf_ppo, delayed_ppo or unaware_ppo")
    p.add_argument("--out", required=True, help="directory for checkpoint and curves")
    p.add_argument("--steps", type=int, help="override the step budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one checkpoint at one latency")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--latency", type=float, required=True, help="mean latency in ms")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--method", help="override the method recorded in the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate methods over a latency grid")
    p.add_argument("--config")
    p.add_argument("--latencies", help="comma-separated ms values")
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--seeds", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoints", help="directory holding <method>.json checkpoints")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print the summary and write plot data and figures")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", help="output directory (default <in>/report)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:  # includes config and checkpoint errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
