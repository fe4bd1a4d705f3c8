"""
Command-line surface: train, eval, compare, map, gradcheck and validate.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.constants import DEFAULT_OUT_DIR, EVAL_EPISODES, REFERENCE_SCENARIO_PATH, TOOL_VERSION
from src.errors import LaeSimError, UsageError
from src.utils import setup_logging

setup_logging()
logger = logging.getLogger(__name__)

SUBCOMMANDS = ("train", "eval", "compare", "map", "gradcheck", "validate")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


class Session:
    """Resolved invocation: scenario, flag overrides, output directory and announced files."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.out_dir = Path(args.out)
        self.quiet = bool(args.quiet)
        self.outputs: List[str] = []
        self.provenance: List[str] = []
        self.scenario: Any = None
        self.scenario_path: Optional[str] = None
        self.seed: Optional[int] = None

    def announce(self, path: Path) -> None:
        self.outputs.append(str(path))
        if not self.quiet:
            print(f"wrote {path}")

    def load(self) -> Any:
        from src.worldmodel import load_scenario

        self.scenario_path = self.args.scenario or str(REFERENCE_SCENARIO_PATH)
        self.scenario = load_scenario(self.scenario_path)
        self.provenance.extend(self.scenario.provenance)
        return self.scenario

    def override_rl(self, **changes: Any) -> None:
        given = {k: v for k, v in changes.items() if v is not None}
        if not given:
            return
        rl = dataclasses.replace(self.scenario.rl, **given)
        self.scenario = dataclasses.replace(self.scenario, rl=rl)
        self.provenance.extend(f"rl.{k}: flag" for k in sorted(given))

    def write_manifest(self, command: str) -> None:
        from src.worldmodel import scenario_digest

        manifest: Dict[str, Any] = {
            "command": command,
            "tool_version": TOOL_VERSION,
            "scenario": self.scenario_path,
            "scenario_digest": scenario_digest(self.scenario) if self.scenario is not None else None,
            "seed": self.seed,
            "provenance": self.provenance,
            "outputs": list(self.outputs),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        path = self.out_dir / "manifest.json"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.announce(path)


def _seed_flag(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed is an unsigned 64-bit integer")
    return seed


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file (default: the reference scenario)")
    common.add_argument("--out", default=DEFAULT_OUT_DIR, help="output directory")
    common.add_argument("--seed", type=_seed_flag, help="run seed (falls back to LAE_SIM_SEED, then the scenario)")
    common.add_argument("--quiet", action="store_true", help="do not announce written files")

    parser = _Parser(prog="lae_sim", description="Semantic-aware UAV swarm planning on a simulated O-RAN RIC.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("train", parents=[common], help="train the MADDPG xApp")
    p.add_argument("--episodes", type=_positive_int)

    p = sub.add_parser("eval", parents=[common], help="evaluate a policy or baseline")
    p.add_argument("--policy", help="trained model file")
    p.add_argument("--baseline", default="full", help="full, shortest, nosem or nosinr")
    p.add_argument("--episodes", type=_positive_int, default=EVAL_EPISODES)

    p = sub.add_parser("compare", parents=[common], help="paired comparison against the baselines")
    p.add_argument("--baselines", default="full,shortest,nosem,nosinr")
    p.add_argument("--episodes", type=_positive_int, default=EVAL_EPISODES)
    p.add_argument("--policy", help="trained model for the full policy")
    p.add_argument("--train-episodes", type=_positive_int, help="training episodes for kinds without a model")

    p = sub.add_parser("map", parents=[common], help="export a SINR surface at one altitude")
    p.add_argument("--altitude", type=float, required=True)
    p.add_argument("--resolution", type=float, help="sample spacing in meters (default: grid cell size)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the network kernel")
    p.add_argument("--nets", type=_positive_int, default=100)

    sub.add_parser("validate", parents=[common], help="load a scenario and report its invariants")
    return parser


def _resolve_seed(session: Session, fallback: int) -> int:
    if session.args.seed is not None:
        session.provenance.append("seed: flag")
        return int(session.args.seed)
    env_seed = os.environ.get("LAE_SIM_SEED")
    if env_seed is not None:
        session.provenance.append("seed: LAE_SIM_SEED")
        try:
            return _seed_flag(env_seed)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"LAE_SIM_SEED={env_seed!r} is not an unsigned 64-bit integer") from None
    return fallback


def cmd_train(session: Session) -> int:
    from src.maddpg import save_model, train

    scenario = session.load()
    session.seed = _resolve_seed(session, scenario.rl.seed)
    session.override_rl(
        seed=None if session.seed == scenario.rl.seed else session.seed, episodes=session.args.episodes
    )
    trainer, report = train(session.scenario)
    session.announce(save_model(trainer, session.out_dir / "model.json"))
    session.announce(report.save(session.out_dir / "report.json"))
    session.write_manifest("train")
    return 0


def cmd_eval(session: Session) -> int:
    from src.evalharness import (
        BaselineKind,
        configure_for,
        episode_seeds,
        export_trajectories,
        metrics,
        run_baseline,
    )
    from src.maddpg import load_model

    kind = BaselineKind.parse(session.args.baseline)
    if not kind.learned and session.args.policy:
        raise UsageError("--policy conflicts with --baseline shortest_path")
    if kind.learned and not session.args.policy:
        raise UsageError(f"--policy is required for --baseline {kind.value}")
    scenario = session.load()
    session.seed = _resolve_seed(session, scenario.seed)
    model = None
    if kind.learned:
        model = load_model(session.args.policy, configure_for(kind, scenario))
    seeds = episode_seeds(session.seed, session.args.episodes)
    logs = run_baseline(kind, scenario, model, seeds=seeds)
    table = metrics(logs)
    out = session.out_dir
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(
        json.dumps({"kind": kind.value, "episodes": len(logs), "metrics": table.to_dict()}, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    session.announce(metrics_path)
    for e, log in enumerate(logs):
        session.announce(log.to_jsonl(out / f"episode_{e:03d}.jsonl"))
    session.announce(export_trajectories(logs[0], out / "trajectories.csv", scenario))
    session.write_manifest("eval")
    return 0


def cmd_compare(session: Session) -> int:
    from src.evalharness import BaselineKind, compare, configure_for
    from src.maddpg import load_model

    kinds = BaselineKind.parse_list(session.args.baselines)
    scenario = session.load()
    session.seed = _resolve_seed(session, scenario.seed)
    session.override_rl(episodes=session.args.train_episodes)
    models = {}
    if session.args.policy:
        if BaselineKind.FULL not in kinds:
            raise UsageError("--policy is only used for the full policy, which is not in --baselines")
        models[BaselineKind.FULL] = load_model(session.args.policy, configure_for(BaselineKind.FULL, session.scenario))
    path = compare(
        session.scenario, kinds, session.args.episodes, session.out_dir / "compare.csv", session.seed, models
    )
    session.announce(path)
    session.write_manifest("compare")
    return 0


def cmd_map(session: Session) -> int:
    from src.radio import export_sinr_surface, write_surface_csv
    from src.worldmodel import scenario_digest

    scenario = session.load()
    resolution = session.args.resolution or scenario.grid.cell_size
    surface = export_sinr_surface(
        session.args.altitude, resolution, scenario.sites, scenario.world, scenario.radio, scenario.mission
    )
    comment = f"scenario_digest={scenario_digest(scenario)} tool_version={TOOL_VERSION}"
    session.announce(write_surface_csv(surface, session.out_dir / "sinr_surface.csv", comment))
    session.write_manifest("map")
    return 0


def cmd_gradcheck(session: Session) -> int:
    from src.tinynet import gradcheck_suite

    session.seed = _resolve_seed(session, 0)
    report = gradcheck_suite(n_nets=session.args.nets, seed=session.seed)
    if not session.quiet:
        print(
            f"gradcheck: {report.n_nets} nets, max relative error {report.max_error:.3e} "
            f"(tanh-only {report.max_error_tanh:.3e}) -> {'ok' if report.passed else 'FAILED'}"
        )
    if not report.passed:
        logger.error(f"Gradient check failed: {report.max_error:.3e} / {report.max_error_tanh:.3e}.")
        print("gradient check exceeded tolerance", file=sys.stderr)
        return 1
    return 0


def cmd_validate(session: Session) -> int:
    from src.worldmodel import scenario_digest

    scenario = session.load()
    mission = scenario.mission
    lines = [
        f"scenario {session.scenario_path}: ok",
        f"  digest {scenario_digest(scenario)}",
        f"  profile {scenario.profile}, seed {scenario.seed}",
        f"  grid {scenario.grid.nx}x{scenario.grid.ny} @ {scenario.grid.cell_size} m, {len(scenario.buildings)} buildings",
        f"  {mission.n_agents} agents, altitude [{mission.z_min}, {mission.z_max}] m, max_steps {mission.max_steps}",
        f"  {len(scenario.sites)} radio sites",
        f"  clocks t_a1={scenario.clocks.t_a1_ms} ms, t_e2={scenario.clocks.t_e2_ms} ms, "
        f"deadline={scenario.clocks.control_deadline_ms} ms",
    ]
    lines.extend(f"  {entry}" for entry in scenario.provenance)
    if not session.quiet:
        print("\n".join(lines))
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "map": cmd_map,
    "gradcheck": cmd_gradcheck,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
        session = Session(args)
        logger.info(f"Running '{args.command}' with {vars(args)}.")
        return COMMANDS[args.command](session)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (LaeSimError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
