"""Command line interface.

Exit codes: 0 success, 1 user error (bad arguments, config, files),
2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .composer import ScriptError, builtin_scripts, load_script, run_script, script_to_dict
from .config import ConfigError, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file (defaults merged in)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override, e.g. ppo.n_envs=64")
    p.add_argument("--seed", type=int, default=None)


def _load_cfg(args) -> dict:
    cfg = load_config(args.config, args.overrides)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def _load_checkpoint(path: str):
    from .nets import CheckpointFormatError, CheckpointMismatchError, restore_policy
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return restore_policy(p)
    except (CheckpointFormatError, CheckpointMismatchError) as e:
        raise ConfigError(f"bad checkpoint {path}: {e}")


def cmd_train(args) -> int:
    from .trainer import train
    cfg = _load_cfg(args)
    result = train(cfg, out_dir=args.out, seed=cfg["seed"], force=args.force)
    print(f"run dir: {result.run_dir}")
    print(f"final checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import emit_report, run_eval
    cfg = _load_cfg(args)
    policy = None
    if not args.oracle:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --oracle")
        policy, manifest = _load_checkpoint(args.checkpoint)
        cfg = manifest["config"]
    report = run_eval(cfg, policy=policy, episodes=args.episodes,
                      seed=cfg["seed"], oracle=args.oracle)
    for row in report["rows"]:
        print(f"{row['task']:6s} {row['split']:3s}  n={row['n']:<4d} "
              f"SR={row['sr_pct']:6.2f}%  SCD={row['scd']:.4f}  "
              f"err={row['primary_error']:.4f}")
    if args.out:
        paths = emit_report(report, args.out)
        print(f"report: {paths['json']}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    policy = None
    if args.oracle:
        if args.checkpoint:
            raise ConfigError("--oracle and --checkpoint are mutually exclusive")
    else:
        if not args.checkpoint:
            raise ConfigError("run needs --checkpoint or --oracle")
        policy, manifest = _load_checkpoint(args.checkpoint)
        cfg = manifest["config"]
    script = load_script(args.script)
    result = run_script(cfg, script, policy=policy, oracle=args.oracle,
                        seed=cfg["seed"], out_dir=args.out)
    for f in result["firings"]:
        print(f"step {f['step']:5d}  t={f['t']:7.2f}s  -> {f['task']}"
              f"({f['param']:g})  [{f['trigger']}]")
    status = "aborted (divergence)" if result["aborted"] else (
        "finished" if result["finished"] else "stopped at max duration")
    print(f"{status} after {result['steps']} steps")
    if result.get("log_path"):
        print(f"trajectory: {result['log_path']}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve_forever
    cfg = _load_cfg(args)
    policy = None
    if args.oracle:
        if args.checkpoint:
            raise ConfigError("--oracle and --checkpoint are mutually exclusive")
    else:
        if not args.checkpoint:
            raise ConfigError("serve needs --checkpoint or --oracle")
        policy, manifest = _load_checkpoint(args.checkpoint)
        cfg = manifest["config"]
    if ":" not in args.addr:
        raise ConfigError(f"--addr must be host:port, got {args.addr!r}")
    host, port_s = args.addr.rsplit(":", 1)
    try:
        port = int(port_s)
    except ValueError:
        raise ConfigError(f"bad port in --addr: {port_s!r}")
    static_dir = args.static if args.static and Path(args.static).is_dir() else None
    try:
        serve_forever(cfg, policy, args.oracle, host, port, seed=cfg["seed"],
                      static_dir=static_dir, timescale=args.timescale)
    except OSError as e:
        raise ConfigError(f"cannot bind {args.addr}: {e}")
    return 0


def cmd_check_equivariance(args) -> int:
    import numpy as np

    from .dynamics import MavParams
    from .nets import build_policy
    from .symmetry import (check_dynamics_equivariance, check_equivariance,
                           check_relstate_invariance)
    from .tasks import Anchor, Command, TaskId, rel_state, task_targets

    cfg = _load_cfg(args)
    rows = []

    policy = build_policy(cfg, seed=cfg["seed"])
    for name, report in policy.actor.equivariance_reports().items():
        rows.append((name, report.max_violation, report.tol, report.passed))

    params = MavParams.from_config(cfg["dynamics"])
    dyn = check_dynamics_equivariance(params, n_trials=200)
    rows.append(("dynamics (isotropic drag)", dyn.max_violation, dyn.tol, dyn.passed))

    rng = np.random.default_rng(cfg["seed"])
    from .dynamics import randomize_init
    worst = 0.0
    for task in TaskId:
        for _ in range(50):
            st, _, psi0 = randomize_init(rng, 1.0, np.array(cfg["task"]["anchor"]),
                                         cfg["randomization"], params)
            cmd = Command(task, 3.0 if task != TaskId.HOVER else 0.0)
            anchor = Anchor(np.array(cfg["task"]["anchor"]), psi0)
            theta = rng.uniform(0, 2 * np.pi)
            worst = max(worst, check_relstate_invariance(st, cmd, anchor, theta))
    rows.append(("relative state invariance", worst, 1e-9, worst < 1e-9))

    width = max(len(r[0]) for r in rows)
    ok = True
    for name, violation, tol, passed in rows:
        ok &= passed
        print(f"{name:<{width}s}  max violation {violation:.3e}  "
              f"(tol {tol:.0e})  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_scripts(args) -> int:
    if args.validate:
        script = load_script(args.validate)
        print(f"ok: {script.name} ({len(script.steps)} steps)")
        return 0
    for name, script in builtin_scripts().items():
        print(f"{name}:")
        for i, step in enumerate(script_to_dict(script)["steps"]):
            trig = step["trigger"]
            when = (f"after_time {trig['seconds']:g}s" if trig["kind"] == "after_time"
                    else trig["kind"])
            extra = f" param={step['param']:g}" if step.get("param") else ""
            print(f"  {i}: {step['task']}{extra}  [{when}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerobat",
        description="Quadrotor aerobatics workbench: train, evaluate and fly "
                    "symmetry-aware maneuver policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    _add_common(p)
    p.add_argument("--out", default=None, help="run directory (default runs/<timestamp>)")
    p.add_argument("--force", action="store_true", help="allow existing non-empty run dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (SR / SCD per task)")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="evaluate the analytic oracle instead")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None, help="write eval.json / eval.csv / episodes.jsonl here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="execute a maneuver script")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--script", required=True, help="builtin name or script JSON file")
    p.add_argument("--out", default=None, help="write trajectory log here")
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="live simulator WebSocket service")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--addr", default="127.0.0.1:8765", metavar="HOST:PORT")
    p.add_argument("--timescale", type=float, default=None)
    p.add_argument("--static", default=None, help="serve this directory at /app")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("check-equivariance", help="print symmetry violation table")
    _add_common(p)
    p.set_defaults(fn=cmd_check_equivariance)

    p = sub.add_parser("scripts", help="list builtin scripts or validate a script file")
    p.add_argument("--validate", default=None, metavar="FILE")
    p.set_defaults(fn=cmd_scripts)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ScriptError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as e:   # anything unexpected is an internal error
        import traceback
        traceback.print_exc()
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
