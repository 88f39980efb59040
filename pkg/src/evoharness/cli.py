"""Command-line entry point.

Exit codes: 0 success, 2 format error, 3 policy violation, 4 quota refused,
5 tamper or lineage error, 1 anything else. Failures print one line
``error[<category>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from evoharness import __version__
from evoharness.errors import AuthorizationError, FormatError, HarnessError
from evoharness.plan import parse_plan

ENV_GLOBAL = "EVOHARNESS_GLOBAL_REMAINING"
ENV_BUDGET = "EVOHARNESS_EVAL_BUDGET"
ENV_ROUND = "EVOHARNESS_ROUND"
ENV_TASK = "EVOHARNESS_TASK"


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise FormatError(f"{name} must be an integer, got {raw!r}") from None


def _infer_task(program: Path, explicit: str | None) -> str:
    from evoharness.tasks import TASKS

    if explicit:
        return explicit
    if os.environ.get(ENV_TASK):
        return os.environ[ENV_TASK]
    for task in TASKS.values():
        if program.name == task.artifact_name:
            return task.name
    if program.suffix == ".asm":
        return "vliw"
    raise FormatError(f"cannot infer the task for {program.name}; pass --task")


def _load(path: str):
    from evoharness.workspace import load_workspace

    return load_workspace(path)


def _plan_from_args(args, layout):
    from evoharness.controller import current_plan

    plan = current_plan(layout)
    if getattr(args, "plan", None):
        plan = parse_plan(Path(args.plan).read_text(), plan)
    if getattr(args, "max_rounds", None) is not None:
        from dataclasses import replace

        try:
            plan = replace(plan, max_rounds=args.max_rounds)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    return plan


# commands -------------------------------------------------------------------


def cmd_init(args) -> int:
    from evoharness.mechanisms import seed_artifact
    from evoharness.workspace import init_workspace

    if args.seed_file:
        seed = Path(args.seed_file).read_bytes()
    elif args.no_seed:
        seed = None
    else:
        seed = seed_artifact(args.task)
    layout = init_workspace(
        args.root,
        args.task,
        seed,
        global_eval_budget=args.global_budget,
        session_eval_budget=args.session_budget,
        rng_seed=args.rng_seed,
    )
    print(f"initialized {args.task} workspace at {layout.root}")
    return 0


def cmd_eval(args) -> int:
    from evoharness.gateway import Gateway, Quota
    from evoharness.registry import SESSION, EvalStore
    from evoharness.workspace import CONFIG_NAME

    program = Path(args.program)
    db_path = Path(args.db_path)
    if (db_path.parent / CONFIG_NAME).exists():
        raise AuthorizationError(
            f"{db_path} is a workspace store; evaluate against a session-local store"
        )
    task = _infer_task(program, args.task)
    store = EvalStore(db_path)
    used = len(store)
    quota = Quota(
        max(0, _env_int(ENV_GLOBAL, 100) - used),
        max(0, _env_int(ENV_BUDGET, 15) - used),
    )
    round_ = args.round if args.round is not None else _env_int(ENV_ROUND, 0)
    _, report = Gateway(quota).evaluate(program, task, store, round_, origin=SESSION)
    sys.stdout.write(report)
    return 0


def cmd_run_segment(args) -> int:
    from evoharness.controller import run_segment, save_plan
    from evoharness.workspace import workspace_lock

    layout = _load(args.root)
    with workspace_lock(layout.root):
        plan = _plan_from_args(args, layout)
        save_plan(layout, plan)
        result = run_segment(layout, plan)
    _print_result(result)
    return 0


def _print_result(result) -> None:
    best = "none" if result.best_at_end is None else f"round {result.best_at_end[0]} score {result.best_at_end[1]!r}"
    print(f"rounds_run: {result.rounds_run}")
    print(f"stop_reason: {result.stop_reason}")
    print(f"best: {best}")


def cmd_run_meta(args) -> int:
    from evoharness.controller import ExternalMeta, run_meta_loop
    from evoharness.workspace import workspace_lock

    layout = _load(args.root)
    if args.meta_command:
        source = ExternalMeta(tuple(args.meta_command), args.timeout)
    else:
        source = args.policy
    with workspace_lock(layout.root):
        plan = _plan_from_args(args, layout) if (args.plan or args.max_rounds) else None
        reports = run_meta_loop(layout, source, args.phases, plan)
    for rep in reports:
        verdict = "accepted" if rep.accepted else "rejected"
        print(
            f"phase {rep.phase}: action {verdict}, rounds_run={rep.result.rounds_run}, "
            f"stop_reason={rep.result.stop_reason}"
        )
        for v in rep.violations:
            print(f"  violation: {v}")
    return 0


def cmd_run_inner_agent(args) -> int:
    from dataclasses import replace

    from evoharness.controller import run_segment
    from evoharness.mechanisms import EXTERNAL, Mechanism, load_mechanism
    from evoharness.workspace import workspace_lock

    layout = _load(args.root)
    if args.agent_command:
        mechanism = Mechanism(EXTERNAL, command=tuple(args.agent_command), timeout_s=args.timeout)
    else:
        mechanism = load_mechanism(layout)
        if mechanism.kind != EXTERNAL:
            raise HarnessError("the workspace mechanism is not external; pass a command after --")
    with workspace_lock(layout.root):
        plan = replace(_plan_from_args(args, layout), max_rounds=1)
        result = run_segment(layout, plan, mechanism)
    _print_result(result)
    return 0


def cmd_status(args) -> int:
    from evoharness.controller import format_observation, summarize
    from evoharness.registry import Registry

    layout = _load(args.root)
    sys.stdout.write(format_observation(summarize(Registry(layout.root, layout.task))))
    return 0


def cmd_history(args) -> int:
    from evoharness.registry import Registry

    layout = _load(args.root)
    registry = Registry(layout.root, layout.task)
    ctxs = registry.contexts()
    if args.limit:
        ctxs = ctxs[-args.limit:]
    for ctx in ctxs:
        c = ctx.candidate
        if ctx.eval is None:
            outcome = "not evaluated"
        else:
            outcome = f"validity={ctx.eval.validity!r} score={ctx.eval.combined_score!r}"
            if ctx.eval.error:
                outcome += f" error={ctx.eval.error}"
        parent = "-" if c.parent_round is None else str(c.parent_round)
        print(f"round {c.round} parent={parent} mechanism={c.mechanism_id} {outcome}")
    return 0


def cmd_replay_db(args) -> int:
    from evoharness.registry import replay

    layout = _load(args.root)
    n = replay(args.local, layout.store_path)
    print(f"replayed {n} rows into {layout.store_path}")
    return 0


EXPORT_COLUMNS = ("round", "score", "validity", "best_so_far", "cost")


def export_rows(layout) -> list[dict]:
    from evoharness.registry import Registry

    registry = Registry(layout.root, layout.task)
    official = registry.official()
    best = dict(registry.best_so_far("combined_score"))
    rows = []
    for round_ in registry.rounds():
        rec = official.get(round_)
        valid = rec is not None and rec.valid
        cost = registry.cost(round_)
        rows.append(
            {
                "round": round_,
                "score": repr(rec.combined_score) if valid else "0.0",
                "validity": "1" if valid else "0",
                "best_so_far": "" if best.get(round_) is None else repr(best[round_]),
                "cost": repr(cost.round_cost if cost else 0.0),
            }
        )
    return rows


def cmd_export(args) -> int:
    layout = _load(args.root)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=EXPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(export_rows(layout))
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


# parser ---------------------------------------------------------------------


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--plan", help="run-plan document (key: value lines)")
    p.add_argument("--max-rounds", type=int, help="override max_rounds of the plan")


def build_parser() -> argparse.ArgumentParser:
    from evoharness.controller import SCRIPTED_POLICIES
    from evoharness.tasks import TASKS

    parser = argparse.ArgumentParser(prog="evoharness", description="Harnessed evolution runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a workspace")
    p.add_argument("root")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    seed = p.add_mutually_exclusive_group()
    seed.add_argument("--seed-file", help="artifact to stage as round 1 instead of the built-in seed")
    seed.add_argument("--no-seed", action="store_true", help="stage no seed")
    p.add_argument("--global-budget", type=int, default=100)
    p.add_argument("--session-budget", type=int, default=15)
    p.add_argument("--rng-seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("eval", help="evaluate a program into a session-local store")
    p.add_argument("--program", required=True)
    p.add_argument("--db-path", required=True)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--round", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-segment", help="run one evolution segment")
    p.add_argument("root")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_run_segment)

    p = sub.add_parser("run-meta", help="alternate meta-editing phases and segments")
    p.add_argument("root")
    p.add_argument("--phases", type=int, default=1)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--policy", choices=sorted(SCRIPTED_POLICIES), default="no-op")
    src.add_argument("--meta-command", nargs=argparse.REMAINDER, help="external meta-agent command")
    p.add_argument("--timeout", type=float, default=600.0)
    _add_plan_flags(p)
    p.set_defaults(func=cmd_run_meta)

    p = sub.add_parser("run-inner-agent", help="run one external-mechanism round")
    p.add_argument("root")
    p.add_argument("--timeout", type=float, default=600.0)
    _add_plan_flags(p)
    p.add_argument("agent_command", nargs=argparse.REMAINDER, help="command (after --)")
    p.set_defaults(func=cmd_run_inner_agent)

    p = sub.add_parser("status", help="print the current observation")
    p.add_argument("root")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("history", help="list candidates and their evaluations")
    p.add_argument("root")
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("replay-db", help="replay a session-local store into the workspace store")
    p.add_argument("root")
    p.add_argument("--local", required=True, help="session-local store")
    p.set_defaults(func=cmd_replay_db)

    p = sub.add_parser("export", help="per-round table")
    p.add_argument("root")
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--output")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "agent_command", None) and args.agent_command[0] == "--":
        args.agent_command = args.agent_command[1:]
    try:
        return args.func(args)
    except HarnessError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error[error]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
