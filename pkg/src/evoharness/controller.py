"""The two-phase loop: meta-editing phases alternating with evolution segments.

Each phase summarizes the history into an :class:`Observation`, obtains one
meta-action (from a scripted policy or an external command), validates and
applies it, reloads the mechanism and runs one segment. Phase ``k`` keeps its
reports, sandboxes and session notes under ``sessions/session_<k>/``.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from evoharness.errors import FormatError, HarnessError, PolicyViolation
from evoharness.gateway import Gateway, Quota, cost_per_round
from evoharness.mechanisms import (
    EXTERNAL,
    Mechanism,
    OptimizeContext,
    ensure_seeded,
    load_mechanism,
    optimize,
    run_external,
    select,
)
from evoharness.plan import RunPlan, StopConditions, format_plan, parse_plan
from evoharness.registry import CostRecord, EvalStore, Registry, replay
from evoharness.tasks import MINIMIZE, get_task
from evoharness.workspace import (
    GOAL_PATH,
    MECHANISM_PATH,
    Edit,
    MetaAction,
    WorkspaceLayout,
    apply_meta_action,
    read_meta_action,
    validate_meta_action,
)

PLAN_PATH = "sessions/run_plan.txt"
RECENT_ERRORS = 5

BUDGET = "budget"
TARGET = "target"
PLATEAU = "plateau"
INVALID_STREAK = "invalid-streak"
CAP = "cap"
QUOTA = "quota"
STOP_REASONS = (TARGET, CAP, QUOTA, PLATEAU, INVALID_STREAK, BUDGET)


@dataclass(frozen=True)
class Observation:
    round: int
    best_score: float | None
    best_round: int | None
    rounds_since_improve: int
    invalid_count: int
    total_count: int
    total_cost: float
    cost_per_round: float
    recent_errors: tuple[tuple[int, str], ...] = ()
    invalid_streak: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recent_errors"] = [list(e) for e in self.recent_errors]
        return d


def format_observation(obs: Observation) -> str:
    best = "none" if obs.best_score is None else f"{obs.best_score!r} (round {obs.best_round})"
    lines = [
        f"round: {obs.round}",
        f"best_score: {best}",
        f"rounds_since_improve: {obs.rounds_since_improve}",
        f"invalid/total: {obs.invalid_count}/{obs.total_count}",
        f"invalid_streak: {obs.invalid_streak}",
        f"total_cost: {obs.total_cost!r}",
        f"cost_per_round: {obs.cost_per_round!r}",
    ]
    lines.extend(f"error round {r}: {msg}" for r, msg in obs.recent_errors)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SegmentResult:
    rounds_run: int
    stop_reason: str
    best_at_end: tuple[int, float] | None = None


def summarize(registry: Registry, round_: int | None = None) -> Observation:
    """Observation of the history up to and including ``round_`` (default: latest).

    ``best_round`` is the first round that reached the best score, so rounds
    that only tie the best count as non-improving.
    """
    rounds = registry.rounds()
    r = max(rounds) if round_ is None and rounds else (round_ or 0)
    minimize = get_task(registry.task).direction("combined_score") == MINIMIZE
    official = {k: v for k, v in registry.official().items() if k <= r}
    best_score = best_round = None
    invalid_rounds = []
    for k in sorted(official):
        rec = official[k]
        if not rec.valid:
            invalid_rounds.append(k)
            continue
        s = rec.combined_score
        if best_score is None or (s < best_score if minimize else s > best_score):
            best_score, best_round = s, k
    streak = 0
    for k in sorted(official, reverse=True):
        if official[k].valid:
            break
        streak += 1
    costs = [c for c in (registry.cost(k) for k in rounds if k <= r) if c is not None]
    total_cost = math.fsum(c.round_cost for c in costs)
    recent = tuple(
        (k, official[k].error or "invalid") for k in invalid_rounds[-RECENT_ERRORS:]
    )
    return Observation(
        round=r,
        best_score=best_score,
        best_round=best_round,
        rounds_since_improve=r - (best_round or 0),
        invalid_count=len(invalid_rounds),
        total_count=len(official),
        total_cost=total_cost,
        cost_per_round=cost_per_round(costs, r) if r >= 1 else 0.0,
        recent_errors=recent,
        invalid_streak=streak,
    )


def check_stop(
    obs: Observation,
    plan: RunPlan,
    quota: Quota,
    rounds_run: int = 0,
    direction: str = "maximize",
) -> str | None:
    """First stop reason in precedence order, or ``None`` to continue."""
    stop = plan.stop
    if stop.target_score is not None and obs.best_score is not None:
        if direction == MINIMIZE:
            hit = obs.best_score <= stop.target_score
        else:
            hit = obs.best_score >= stop.target_score
        if hit:
            return TARGET
    if obs.round >= stop.global_round_cap:
        return CAP
    if not quota.permits():
        return QUOTA
    if obs.rounds_since_improve >= stop.plateau_window:
        return PLATEAU
    if obs.invalid_streak >= stop.invalid_streak_limit:
        return INVALID_STREAK
    if rounds_run >= plan.max_rounds:
        return BUDGET
    return None


# plans and quota ------------------------------------------------------------


def default_plan(layout: WorkspaceLayout) -> RunPlan:
    return RunPlan(
        max_rounds=15,
        session_eval_budget=layout.session_eval_budget,
        stop=StopConditions(target_score=get_task(layout.task).target_score),
    )


def current_plan(layout: WorkspaceLayout) -> RunPlan:
    path = layout.path(PLAN_PATH)
    base = default_plan(layout)
    return parse_plan(path.read_text(), base) if path.exists() else base


def save_plan(layout: WorkspaceLayout, plan: RunPlan) -> None:
    layout.path(PLAN_PATH).write_text(format_plan(plan))


def workspace_quota(layout: WorkspaceLayout, plan: RunPlan) -> Quota:
    """Global quota is the configured budget minus every record already stored."""
    used = len(EvalStore(layout.store_path))
    return Quota(max(0, layout.global_eval_budget - used), plan.session_eval_budget)


def next_session_id(layout: WorkspaceLayout) -> int:
    ids = [
        int(p.name.split("_", 1)[1])
        for p in layout.sessions.glob("session_*")
        if p.is_dir() and p.name.split("_", 1)[1].isdigit()
    ]
    return max(ids, default=0) + 1


# segments -------------------------------------------------------------------


def _run_round(
    layout: WorkspaceLayout,
    registry: Registry,
    mechanism: Mechanism,
    gateway: Gateway,
    segment_id: int,
    session_dir: Path,
    local_stores: list[Path],
) -> None:
    quota = gateway.quota
    info = select(registry, mechanism, layout, gateway, segment_id)
    cand = registry.new_candidate(info.parent.round, mechanism.id, segment_id)
    log = [f"segment={segment_id} mechanism={mechanism.id}", f"selection: {info.notes}"]
    failure = None
    if mechanism.kind == EXTERNAL:
        sandbox = session_dir / f"round_{cand.round}" / "agent_workspace"
        outcome = run_external(
            mechanism, layout, registry, info, cand, sandbox,
            quota.global_remaining, quota.session_remaining,
        )
        for _ in range(min(outcome.local_evals, quota.global_remaining, quota.session_remaining)):
            quota.consume()
        local_stores.append(outcome.local_store)
        log.extend(outcome.log)
        log.append(f"local evaluations: {outcome.local_evals}")
        registry.record_cost(outcome.cost or CostRecord(cand.round))
        if outcome.notes is not None:
            (session_dir / f"SESSION_NOTES_round_{cand.round}.md").write_text(outcome.notes)
        failure = outcome.error
    else:
        registry.record_cost(CostRecord(cand.round))
        try:
            log.extend(optimize(info, cand, OptimizeContext(registry, mechanism, layout.rng_seed)))
        except Exception as exc:  # a crashing mechanism is recorded, not raised
            failure = f"mechanism-crash: {type(exc).__name__}: {exc}"
    if not quota.permits():
        log.append("official evaluation refused: quota exhausted")
    elif failure is not None:
        gateway.record_failure(registry.task, registry, cand.round, failure)
        log.append(f"round failed: {failure}")
    else:
        rec, _ = gateway.evaluate(registry.artifact_path(cand), registry.task, registry, cand.round)
        log.append(f"evaluation: validity={rec.validity!r} score={rec.combined_score!r}")
        if rec.error:
            log.append(f"evaluation error: {rec.error}")
    registry.append_log(cand.round, log)


def run_segment(
    layout: WorkspaceLayout,
    plan: RunPlan,
    mechanism: Mechanism | None = None,
    *,
    segment_id: int | None = None,
    quota: Quota | None = None,
    clock: Callable[[], float] | None = None,
) -> SegmentResult:
    """Run rounds under ``plan`` until a stop condition fires.

    The staged seed, if the registry is empty, becomes round 1 and does not
    count toward ``rounds_run``. Session-local stores written by external
    rounds are replayed into the workspace store before returning.
    """
    registry = Registry(layout.root, layout.task)
    mechanism = mechanism or load_mechanism(layout)
    quota = quota if quota is not None else workspace_quota(layout, plan)
    gateway = Gateway(quota) if clock is None else Gateway(quota, clock)
    segment_id = segment_id if segment_id is not None else next_session_id(layout)
    session_dir = layout.sessions / f"session_{segment_id}"
    session_dir.mkdir(parents=True, exist_ok=True)
    direction = get_task(layout.task).direction("combined_score")

    local_stores: list[Path] = []
    rounds_run = 0
    try:
        if quota.permits():
            seeded = ensure_seeded(registry, layout, gateway, segment_id)
            if seeded is not None:
                registry.record_cost(CostRecord(seeded.round))
        reason = check_stop(summarize(registry), plan, quota, rounds_run, direction)
        while reason is None:
            _run_round(layout, registry, mechanism, gateway, segment_id, session_dir, local_stores)
            rounds_run += 1
            reason = check_stop(summarize(registry), plan, quota, rounds_run, direction)
    finally:
        for store in local_stores:
            if store.exists():
                replay(store, layout.store_path)
    obs = summarize(registry)
    best = (obs.best_round, obs.best_score) if obs.best_score is not None else None
    return SegmentResult(rounds_run, reason, best)


# meta loop ------------------------------------------------------------------


MetaPolicy = Callable[[Observation, RunPlan, WorkspaceLayout], MetaAction]


def _goal_text(obs: Observation) -> str:
    return "# goal for next session\n\n" + format_observation(obs)


def no_op_policy(obs: Observation, plan: RunPlan, layout: WorkspaceLayout) -> MetaAction:
    """Keep the mechanism and plan; refresh the goal file with the observation."""
    return MetaAction((Edit(GOAL_PATH, _goal_text(obs)),), plan)


def widen_on_plateau_policy(obs: Observation, plan: RunPlan, layout: WorkspaceLayout) -> MetaAction:
    """Double sigma0 and extend the round and eval budgets once half a plateau window passes."""
    if obs.rounds_since_improve * 2 < plan.stop.plateau_window:
        return no_op_policy(obs, plan, layout)
    cfg = json.loads(layout.path(MECHANISM_PATH).read_text())
    params = cfg.setdefault("params", {})
    params["sigma0"] = float(params.get("sigma0", 0.05)) * 2
    widened = RunPlan(
        max_rounds=plan.max_rounds * 2,
        session_eval_budget=plan.session_eval_budget + plan.max_rounds,
        stop=plan.stop,
    )
    edits = (
        Edit(MECHANISM_PATH, json.dumps(cfg, indent=2) + "\n"),
        Edit(GOAL_PATH, _goal_text(obs)),
    )
    return MetaAction(edits, widened)


SCRIPTED_POLICIES: dict[str, MetaPolicy] = {
    "no-op": no_op_policy,
    "widen-on-plateau": widen_on_plateau_policy,
}


@dataclass(frozen=True)
class ExternalMeta:
    """A meta-agent process that writes one meta-action directory.

    Environment: ``EVOHARNESS_WORKSPACE``, ``EVOHARNESS_OBSERVATION`` (JSON
    file), ``EVOHARNESS_PLAN`` (current plan document) and
    ``EVOHARNESS_ACTION_DIR`` (where the action must be written).
    """

    command: tuple[str, ...]
    timeout_s: float = 600.0

    def __call__(self, obs: Observation, plan: RunPlan, layout: WorkspaceLayout) -> MetaAction:
        with tempfile.TemporaryDirectory(prefix="evoharness-meta-") as tmp:
            tmp = Path(tmp)
            (tmp / "observation.json").write_text(json.dumps(obs.to_dict(), indent=2))
            (tmp / "plan.txt").write_text(format_plan(plan))
            action_dir = tmp / "action"
            env = dict(os.environ)
            env.update(
                EVOHARNESS_WORKSPACE=str(layout.root.resolve()),
                EVOHARNESS_OBSERVATION=str(tmp / "observation.json"),
                EVOHARNESS_PLAN=str(tmp / "plan.txt"),
                EVOHARNESS_ACTION_DIR=str(action_dir),
            )
            try:
                proc = subprocess.run(
                    list(self.command), cwd=tmp, env=env, timeout=self.timeout_s,
                    stdin=subprocess.DEVNULL, capture_output=True, text=True,
                )
            except subprocess.TimeoutExpired:
                raise HarnessError("meta-agent timed out") from None
            except OSError as exc:
                raise HarnessError(f"meta-agent failed to start: {exc}") from None
            if proc.returncode != 0:
                raise HarnessError(f"meta-agent exited with status {proc.returncode}")
            return read_meta_action(action_dir, plan)


@dataclass
class MetaOutcome:
    accepted: bool
    plan: RunPlan
    summary: str = ""
    violations: list[str] = field(default_factory=list)


def attempt_meta_action(
    layout: WorkspaceLayout,
    source: MetaPolicy,
    obs: Observation,
    plan: RunPlan,
    log_path: Path | None = None,
) -> MetaOutcome:
    """Obtain, validate and apply one action. A rejected action changes no file."""
    try:
        action = source(obs, plan, layout)
        violations = validate_meta_action(action, layout.policy, plan)
        if violations:
            return MetaOutcome(False, plan, violations=[str(v) for v in violations])
        report = apply_meta_action(layout.root, action, layout.policy, plan, log_path)
    except PolicyViolation as exc:
        return MetaOutcome(False, plan, violations=[str(v) for v in exc.violations])
    except (HarnessError, FormatError, ValueError, OSError) as exc:
        return MetaOutcome(False, plan, violations=[f"meta-source failed: {exc}"])
    return MetaOutcome(True, action.run_plan, summary=report.summary())


@dataclass(frozen=True)
class PhaseReport:
    phase: int
    session_id: int
    accepted: bool
    violations: tuple[str, ...]
    plan: RunPlan
    observation: Observation
    result: SegmentResult


def _format_phase(report: PhaseReport, source_name: str, summary: str) -> str:
    r = report.result
    lines = [
        f"phase: {report.phase}",
        f"meta_source: {source_name}",
        f"action: {'accepted' if report.accepted else 'rejected'}",
    ]
    if summary:
        lines += ["changes:"] + [f"  {ln}" for ln in summary.splitlines()]
    lines += [f"violation: {v}" for v in report.violations]
    lines += ["plan:"] + [f"  {ln}" for ln in format_plan(report.plan).splitlines()]
    lines += ["observation:"] + [f"  {ln}" for ln in format_observation(report.observation).splitlines()]
    best = "none" if r.best_at_end is None else f"round {r.best_at_end[0]} score {r.best_at_end[1]!r}"
    lines.append(f"segment: rounds_run={r.rounds_run} stop_reason={r.stop_reason} best={best}")
    return "\n".join(lines) + "\n"


def run_meta_loop(
    layout: WorkspaceLayout,
    meta_source: str | MetaPolicy,
    phases: int,
    plan: RunPlan | None = None,
    clock: Callable[[], float] | None = None,
) -> list[PhaseReport]:
    if phases < 1:
        raise ValueError("phases must be >= 1")
    if isinstance(meta_source, str):
        try:
            source = SCRIPTED_POLICIES[meta_source]
        except KeyError:
            raise HarnessError(f"unknown meta policy {meta_source!r}") from None
        source_name = meta_source
    else:
        source = meta_source
        source_name = getattr(meta_source, "__name__", type(meta_source).__name__)
    if plan is not None:
        save_plan(layout, plan)
    reports: list[PhaseReport] = []
    registry = Registry(layout.root, layout.task)
    for phase in range(1, phases + 1):
        plan = current_plan(layout)
        obs = summarize(registry)
        session_id = next_session_id(layout)
        session_dir = layout.sessions / f"session_{session_id}"
        outcome = attempt_meta_action(layout, source, obs, plan, session_dir / "meta_apply.log")
        if outcome.accepted:
            save_plan(layout, outcome.plan)
        mechanism = load_mechanism(layout)
        result = run_segment(layout, outcome.plan, mechanism, segment_id=session_id, clock=clock)
        report = PhaseReport(
            phase, session_id, outcome.accepted, tuple(outcome.violations), outcome.plan, obs, result
        )
        (session_dir / "phase_report.txt").write_text(_format_phase(report, source_name, outcome.summary))
        reports.append(report)
    return reports

