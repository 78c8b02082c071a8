"""Command-line entry point: train, evaluate, perturb, explain, oracle,
serve, render. Every subcommand honors --seed and --out; a run is fully
reproducible from the config serialized into its run directory."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import PRESETS, RunConfig, preset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--worlds", type=Path, default=None, help="extra world/scenario directory")


def _registry(args):
    from .env import ScenarioRegistry

    extra = [args.worlds] if getattr(args, "worlds", None) else None
    return ScenarioRegistry(extra_dirs=extra)


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = preset(args.preset, scenario=args.scenario)
    updates = {"seed": args.seed}
    if args.scenario:
        updates["scenario"] = args.scenario
    if args.env_steps:
        updates["total_env_steps"] = args.env_steps
    return dataclasses.replace(cfg, **updates)


def cmd_train(args) -> int:
    from .training import Trainer

    cfg = _load_config(args)
    run_dir = args.out or Path(f"runs/{cfg.scenario}-seed{cfg.seed}")
    trainer = Trainer(cfg, run_dir, registry=_registry(args))
    summary = trainer.train()
    result = trainer.evaluate(cfg.scenario, cfg.eval_episodes, save=True)
    print(json.dumps({**summary, "final_success_rate": result.success_rate, "run_dir": str(run_dir)}))
    return 0 if result.success_rate >= cfg.success_target else 1


def cmd_evaluate(args) -> int:
    from .config import RunConfig
    from .training import Trainer

    run_dir = Path(args.run)
    cfg = RunConfig.load(run_dir / "config.json")
    cfg = dataclasses.replace(cfg, seed=args.seed)
    trainer = Trainer.from_run_dir(run_dir, cfg, registry=_registry(args))
    result = trainer.evaluate(args.scenario or cfg.scenario, args.episodes, save=True)
    print(
        json.dumps(
            {
                "scenario": result.scenario,
                "success_rate": result.success_rate,
                "mean_return": result.mean_return,
                "mean_steps": result.mean_steps,
                "episodes": result.episode_ids,
            }
        )
    )
    return 0


def cmd_perturb(args) -> int:
    """Apply a scenario's perturbation and render/serialize the result."""
    from .env import render, reset, world_to_text
    from .env.render import png_bytes

    registry = _registry(args)
    scenario = registry.scenario(args.scenario)
    world, _ = reset(scenario, args.seed, registry)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.scenario}.world").write_text(world_to_text(world, args.scenario))
    (out / f"{args.scenario}.png").write_bytes(png_bytes(render(world, "full-grid")))
    print(json.dumps({"scenario": args.scenario, "world": str(out / f"{args.scenario}.world")}))
    return 0


def cmd_explain(args) -> int:
    from .explain import build_report, write_report_bundle
    from .models import load_model
    from .replay import load_episode

    run_dir = Path(args.run)
    registry = _registry(args)
    fwm = load_model(run_dir / "checkpoints" / "fwm.ckpt", "forward")
    rwm = load_model(run_dir / "checkpoints" / "rwm.ckpt", "reverse")
    episode_path = run_dir / "episodes" / f"{args.episode}.jsonl"
    episode = load_episode(episode_path)
    report = build_report(episode, args.episode, fwm, rwm, registry, mode=args.mode, seed=args.seed)
    report_id = f"{args.episode}-{args.mode}-seed{args.seed}"
    out = args.out or (run_dir / "reports" / report_id)
    write_report_bundle(report, out)
    print(
        json.dumps(
            {
                "report": report_id,
                "out": str(out),
                "deviation_t": report.deviation_t,
                "snapshots": [s.t for s in report.snapshots],
            }
        )
    )
    return 0


def cmd_oracle(args) -> int:
    from .oracle import build_tabular, compare_rwm, dump_tabular
    from .models import load_model
    from .replay import load_episode

    registry = _registry(args)
    template = registry.base_world(args.world)
    episodes = []
    run_dir = Path(args.run) if args.run else None
    if run_dir:
        for path in sorted((run_dir / "episodes").glob("*.jsonl")):
            episodes.append(load_episode(path))
    mdp = build_tabular(template, episodes or None, registry)
    out = {"world": args.world, "states": mdp.n_states}
    if args.dump:
        Path(args.dump).write_text(dump_tabular(mdp))
        out["dump"] = args.dump
    if run_dir and (run_dir / "checkpoints" / "rwm.ckpt").exists():
        rwm = load_model(run_dir / "checkpoints" / "rwm.ckpt", "reverse")
        from .models import ObsSpec

        result = compare_rwm(mdp, rwm, ObsSpec.for_world(template), samples=args.samples, seed=args.seed)
        out.update(
            {
                "top1_accuracy": result.top1_accuracy,
                "mean_tv_proxy": result.mean_tv_proxy,
                "scored": result.n_scored,
                "empty_support": result.n_empty_support,
            }
        )
    print(json.dumps(out))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        run_dir=args.run,
        checkpoint_dir=args.checkpoints,
        session_ttl=args.session_ttl,
        static_dir=args.static,
        registry=_registry(args),
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_render(args) -> int:
    from .env import render, reset
    from .env.render import png_bytes

    registry = _registry(args)
    scenario = registry.scenario(args.scenario)
    world, _ = reset(scenario, args.seed, registry)
    out = args.out or Path(f"{args.scenario}.png")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_bytes(png_bytes(render(world, args.mode)))
    print(json.dumps({"scenario": args.scenario, "png": str(out), "mode": args.mode}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hindsight", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="joint world-model/reverse-model/policy training")
    _add_common(p)
    p.add_argument("--config", type=Path, help="RunConfig JSON file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="micro-smoke")
    p.add_argument("--scenario", default=None)
    p.add_argument("--env-steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="greedy evaluation episodes in a scenario")
    _add_common(p)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--scenario", default=None)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("perturb", help="apply a scenario perturbation and save the world")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("explain", help="build a control/treatment explanation report")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--mode", choices=["control", "treatment"], default="treatment")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("oracle", help="tabular reverse-posterior comparison")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--run", default=None, help="run directory with episodes and checkpoints")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--dump", default=None, help="write the tabular dump to this file")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("serve", help="HTTP what-if service over a run directory")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--checkpoints", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--session-ttl", type=float, default=1800.0)
    p.add_argument("--static", default=None, help="static frontend directory")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("render", help="render a scenario's initial world to PNG")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", choices=["full-grid", "agent-window"], default="full-grid")
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except Exception as exc:  # surface a one-line error, non-zero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
