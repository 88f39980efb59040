"""Search mechanisms: selection + optimization procedures, or an external process.

The active mechanism is read from ``shared/mechanism.json`` at the start of
every segment, so a meta-edit to that file takes effect immediately::

    {"kind": "procedure", "selection": "best", "optimization": "cp26-hillclimb",
     "params": {"sigma0": 0.05, "halve_every": 50, "seed": 0}}

    {"kind": "external", "command": ["python3", "agent.py"], "timeout_s": 600,
     "params": {"p_in": 0.0, "p_cache": 0.0, "p_out": 0.0}}

External processes run inside ``sessions/session_<k>/round_<r>/agent_workspace/`` with copies
of ``shared/``, ``skill/``, the goal file and the parent artifacts, a writable
``attempts/`` area, a session-local store ``.eval.local.db`` and an ``output/``
directory. Environment contract:

    EVOHARNESS_WORKSPACE         workspace root
    EVOHARNESS_SANDBOX           sandbox directory (also the working directory)
    EVOHARNESS_ROUND             round being produced
    EVOHARNESS_TASK              task name
    EVOHARNESS_DB_PATH           session-local store
    EVOHARNESS_EVAL_BUDGET       session evaluations left
    EVOHARNESS_GLOBAL_REMAINING  global evaluations left
    EVOHARNESS_OUTPUT            where the final artifact must be written

Optional outputs: ``usage.txt`` (``n_in n_cache n_out``) and ``SESSION_NOTES.md``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import shutil
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from evoharness.errors import (
    FormatError,
    HarnessError,
    ParentCorruptError,
    SeedMissingError,
)
from evoharness.gateway import Gateway
from evoharness.registry import (
    LOCAL_STORE_NAME,
    Candidate,
    CostRecord,
    EvalStore,
    Registry,
)
from evoharness.tasks import get_task
from evoharness.workspace import GOAL_PATH, MECHANISM_PATH, WorkspaceLayout

REF_K = 2
DEFAULT_SIGMA0 = 0.05
DEFAULT_HALVE_EVERY = 50
DEFAULT_TIMEOUT_S = 600.0
USAGE_FILE = "usage.txt"
NOTES_FILE = "SESSION_NOTES.md"

PROCEDURE = "procedure"
EXTERNAL = "external"


@dataclass(frozen=True)
class InfoBundle:
    parent: Candidate
    references: tuple[Candidate, ...] = ()
    notes: str = ""


@dataclass(frozen=True)
class Mechanism:
    kind: str
    selection: str = "best"
    optimization: str = ""
    params: dict = field(default_factory=dict)
    command: tuple[str, ...] = ()
    timeout_s: float = DEFAULT_TIMEOUT_S

    @property
    def id(self) -> str:
        if self.kind == EXTERNAL:
            return "external"
        return f"{self.selection}+{self.optimization}"

    def param(self, name: str, default):
        return self.params.get(name, default)

    def to_config(self) -> dict:
        if self.kind == EXTERNAL:
            return {
                "kind": EXTERNAL,
                "command": list(self.command),
                "timeout_s": self.timeout_s,
                "params": dict(self.params),
            }
        return {
            "kind": PROCEDURE,
            "selection": self.selection,
            "optimization": self.optimization,
            "params": dict(self.params),
        }


def mechanism_from_config(cfg: dict) -> Mechanism:
    try:
        kind = cfg["kind"]
        params = dict(cfg.get("params", {}))
        if kind == PROCEDURE:
            mech = Mechanism(PROCEDURE, cfg.get("selection", "best"), cfg["optimization"], params)
            if mech.selection not in SELECTIONS:
                raise FormatError(f"unknown selection policy {mech.selection!r}")
            if mech.optimization not in OPTIMIZERS:
                raise FormatError(f"unknown optimization policy {mech.optimization!r}")
            return mech
        if kind == EXTERNAL:
            command = cfg["command"]
            if isinstance(command, str) or not command or not all(isinstance(c, str) for c in command):
                raise FormatError("external command must be a non-empty list of strings")
            return Mechanism(
                EXTERNAL,
                selection=cfg.get("selection", "best"),
                params=params,
                command=tuple(command),
                timeout_s=float(cfg.get("timeout_s", DEFAULT_TIMEOUT_S)),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad mechanism config: {exc}") from None
    raise FormatError(f"unknown mechanism kind {kind!r}")


def load_mechanism(layout: WorkspaceLayout) -> Mechanism:
    path = layout.path(MECHANISM_PATH)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read {MECHANISM_PATH}: {exc}") from None
    return mechanism_from_config(cfg)


def default_mechanism_config(task: str) -> dict:
    optimizer = {"cp26": "cp26-hillclimb", "ac2": "ac2-stepsearch", "vliw": "vliw-passthrough"}[
        get_task(task).name
    ]
    params = {"seed": 0}
    if optimizer != "vliw-passthrough":
        params.update(sigma0=DEFAULT_SIGMA0, halve_every=DEFAULT_HALVE_EVERY)
    return {"kind": PROCEDURE, "selection": "best", "optimization": optimizer, "params": params}


def seed_artifact(task: str) -> str:
    name = get_task(task).name
    if name == "cp26":
        from evoharness.tasks.packing import format_packing, grid_packing

        return format_packing(grid_packing())
    if name == "ac2":
        from evoharness.tasks.autocorr import constant_function, format_function

        return format_function(constant_function())
    from evoharness.vliw.benchmark import generate_instance
    from evoharness.vliw.kernel import build_baseline_kernel

    return build_baseline_kernel(generate_instance())


# selection ------------------------------------------------------------------


def ensure_seeded(
    registry: Registry, layout: WorkspaceLayout, gateway: Gateway, segment_id: int = 0
) -> Candidate | None:
    """Create and evaluate round 1 from the staged seed if the registry is empty.

    Returns the new candidate, or ``None`` when the registry already had rounds.
    """
    if registry.rounds():
        return None
    staged = layout.staged_seed()
    if staged is None:
        raise SeedMissingError("empty registry and no staged seed artifact")
    cand = registry.new_candidate(None, mechanism_id="seed", segment_id=segment_id)
    shutil.copyfile(staged, registry.artifact_path(cand))
    registry.append_log(cand.round, ["seed artifact staged at init"])
    gateway.evaluate(registry.artifact_path(cand), registry.task, registry, cand.round)
    return cand


def _fallback_parent(registry: Registry) -> Candidate:
    official = registry.official()
    for cand in reversed(registry.candidates()):
        if cand.round in official:
            return cand
    return registry.candidates()[0]


def _select_best(registry: Registry, mechanism: Mechanism) -> InfoBundle:
    best = registry.best("combined_score")
    if best is None:
        parent = _fallback_parent(registry)
        return InfoBundle(parent, (), f"no valid round yet; parent round={parent.round}")
    return InfoBundle(best, (), f"best round={best.round}")


def _select_cross(registry: Registry, mechanism: Mechanism) -> InfoBundle:
    ranked = registry.ranked_candidates("combined_score")
    if not ranked:
        return _select_best(registry, mechanism)
    k = int(mechanism.param("ref_k", REF_K))
    refs = tuple(ranked[1 : 1 + k])
    notes = f"best round={ranked[0].round}; refs={','.join(str(c.round) for c in refs) or 'none'}"
    return InfoBundle(ranked[0], refs, notes)


SELECTIONS: dict[str, Callable[[Registry, Mechanism], InfoBundle]] = {
    "best": _select_best,
    "cross_candidate": _select_cross,
}


def select(
    registry: Registry,
    mechanism: Mechanism,
    layout: WorkspaceLayout | None = None,
    gateway: Gateway | None = None,
    segment_id: int = 0,
) -> InfoBundle:
    if not registry.rounds():
        if layout is None or gateway is None:
            raise SeedMissingError("empty registry and no seed source")
        ensure_seeded(registry, layout, gateway, segment_id)
    try:
        policy = SELECTIONS[mechanism.selection]
    except KeyError:
        raise FormatError(f"unknown selection policy {mechanism.selection!r}") from None
    return policy(registry, mechanism)


# optimization ---------------------------------------------------------------


@dataclass(frozen=True)
class OptimizeContext:
    registry: Registry
    mechanism: Mechanism
    rng_seed: int = 0


Optimizer = Callable[[InfoBundle, Candidate, OptimizeContext], list[str]]


def _rng(ctx: OptimizeContext, round_: int) -> random.Random:
    seed = int(ctx.mechanism.param("seed", 0)) + ctx.rng_seed
    return random.Random(seed * 1_000_003 + round_)


def step_size(mechanism: Mechanism, rounds_since_improve: int) -> tuple[float, float]:
    """``(sigma0, sigma)``: sigma halves every ``halve_every`` non-improving rounds."""
    sigma0 = float(mechanism.param("sigma0", DEFAULT_SIGMA0))
    every = max(1, int(mechanism.param("halve_every", DEFAULT_HALVE_EVERY)))
    return sigma0, sigma0 * 0.5 ** (max(0, rounds_since_improve) // every)


def _parent_text(info: InfoBundle, ctx: OptimizeContext) -> str:
    path = ctx.registry.artifact_path(info.parent)
    try:
        return path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParentCorruptError(f"cannot read parent round {info.parent.round}: {exc}") from None


def _since_improve(info: InfoBundle, cand: Candidate) -> int:
    return cand.round - 1 - info.parent.round


def repair_radius(circles, i: int, x: float, y: float) -> float:
    """Largest radius at (x, y) that keeps circle ``i`` inside the square and off the others."""
    slack = min(x, 1.0 - x, y, 1.0 - y)
    for j, (xj, yj, rj) in enumerate(circles):
        if j != i:
            slack = min(slack, math.hypot(x - xj, y - yj) - rj)
    return max(0.0, slack)


def _cp26_hillclimb(info: InfoBundle, cand: Candidate, ctx: OptimizeContext) -> list[str]:
    from evoharness.tasks.packing import format_packing, parse_packing

    try:
        circles = parse_packing(_parent_text(info, ctx))
    except FormatError as exc:
        raise ParentCorruptError(f"parent round {info.parent.round}: {exc}") from None
    rng = _rng(ctx, cand.round)
    rsi = _since_improve(info, cand)
    sigma0, sigma = step_size(ctx.mechanism, rsi)
    i = rng.randrange(len(circles))
    x0, y0, _ = circles[i]
    x = min(1.0, max(0.0, x0 + rng.gauss(0.0, sigma)))
    y = min(1.0, max(0.0, y0 + rng.gauss(0.0, sigma)))
    r = repair_radius(circles, i, x, y)
    circles = list(circles)
    circles[i] = (x, y, r)
    ctx.registry.write_artifact(cand, get_task("cp26").artifact_name, format_packing(circles))
    return [f"sigma0={sigma0!r} sigma={sigma!r} circle={i} parent={info.parent.round}"]


def _ac2_stepsearch(info: InfoBundle, cand: Candidate, ctx: OptimizeContext) -> list[str]:
    from evoharness.tasks.autocorr import format_function, parse_function

    try:
        samples = parse_function(_parent_text(info, ctx))
    except FormatError as exc:
        raise ParentCorruptError(f"parent round {info.parent.round}: {exc}") from None
    rng = _rng(ctx, cand.round)
    sigma0, sigma = step_size(ctx.mechanism, _since_improve(info, cand))
    scale = max(samples) if samples and max(samples) > 0 else 1.0
    i = rng.randrange(len(samples))
    samples = list(samples)
    samples[i] = max(0.0, samples[i] + rng.gauss(0.0, sigma * scale))
    ctx.registry.write_artifact(cand, get_task("ac2").artifact_name, format_function(samples))
    return [f"sigma0={sigma0!r} sigma={sigma!r} sample={i} parent={info.parent.round}"]


def _vliw_passthrough(info: InfoBundle, cand: Candidate, ctx: OptimizeContext) -> list[str]:
    src = ctx.registry.artifact_path(info.parent)
    try:
        data = src.read_bytes()
    except OSError as exc:
        raise ParentCorruptError(f"cannot read parent round {info.parent.round}: {exc}") from None
    ctx.registry.write_artifact(cand, get_task("vliw").artifact_name, data)
    return [f"copied parent={info.parent.round}"]


OPTIMIZERS: dict[str, Optimizer] = {
    "cp26-hillclimb": _cp26_hillclimb,
    "ac2-stepsearch": _ac2_stepsearch,
    "vliw-passthrough": _vliw_passthrough,
}


def register_optimizer(name: str, fn: Optimizer) -> None:
    """Make an extra optimization policy available to mechanism configs."""
    OPTIMIZERS[name] = fn


def optimize(info: InfoBundle, cand: Candidate, ctx: OptimizeContext) -> list[str]:
    """Write the new candidate's artifact; returns lines for the round log."""
    artifacts = ctx.registry.root / cand.artifact_dir
    if any(artifacts.iterdir()):
        raise HarnessError(f"artifact dir of round {cand.round} is not empty")
    try:
        fn = OPTIMIZERS[ctx.mechanism.optimization]
    except KeyError:
        raise FormatError(f"unknown optimization policy {ctx.mechanism.optimization!r}") from None
    return fn(info, cand, ctx)


# external processes ---------------------------------------------------------


@dataclass
class ExternalOutcome:
    artifact: Path | None
    error: str | None
    local_store: Path
    local_evals: int
    cost: CostRecord | None
    notes: str | None
    returncode: int | None
    log: list[str] = field(default_factory=list)


def _digest(path: Path) -> str | None:
    return hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else None


def prepare_sandbox(
    sandbox: Path, layout: WorkspaceLayout, registry: Registry, info: InfoBundle
) -> None:
    if sandbox.exists():
        shutil.rmtree(sandbox)
    sandbox.mkdir(parents=True)
    for rel in ("shared", "skill"):
        shutil.copytree(layout.path(rel), sandbox / rel)
    goal = layout.path(GOAL_PATH)
    if goal.exists():
        shutil.copyfile(goal, sandbox / "_next_goal.md")
    for cand in (info.parent, *info.references):
        dest = sandbox / "parents" / f"round_{cand.round}"
        shutil.copytree(registry.root / cand.artifact_dir, dest)
    (sandbox / "attempts").mkdir()
    (sandbox / "output").mkdir()
    (sandbox / LOCAL_STORE_NAME).touch()
    for path in [*(sandbox / "shared").rglob("*"), *(sandbox / "skill").rglob("*"), *(sandbox / "parents").rglob("*")]:
        if path.is_file():
            path.chmod(0o444)


def run_external(
    mechanism: Mechanism,
    layout: WorkspaceLayout,
    registry: Registry,
    info: InfoBundle,
    cand: Candidate,
    sandbox: Path,
    global_remaining: int,
    session_remaining: int,
) -> ExternalOutcome:
    """Run one external invocation for ``cand`` and collect what it produced.

    The official store is fingerprinted around the run; if the process
    changed it, the original bytes are restored and the round is failed.
    """
    spec = get_task(registry.task)
    prepare_sandbox(sandbox, layout, registry, info)
    local_store = sandbox / LOCAL_STORE_NAME
    output = sandbox / "output" / spec.artifact_name
    env = dict(os.environ)
    env.update(
        EVOHARNESS_WORKSPACE=str(layout.root.resolve()),
        EVOHARNESS_SANDBOX=str(sandbox.resolve()),
        EVOHARNESS_ROUND=str(cand.round),
        EVOHARNESS_TASK=registry.task,
        EVOHARNESS_DB_PATH=str(local_store.resolve()),
        EVOHARNESS_EVAL_BUDGET=str(session_remaining),
        EVOHARNESS_GLOBAL_REMAINING=str(global_remaining),
        EVOHARNESS_OUTPUT=str(output.resolve()),
    )
    subst = {"python": sys.executable, "sandbox": str(sandbox.resolve()), "round": str(cand.round)}
    command = [part.format(**subst) for part in mechanism.command]
    store_path = layout.store_path
    before = store_path.read_bytes() if store_path.exists() else b""
    error = None
    returncode = None
    log = [f"external command: {' '.join(command)}"]
    try:
        proc = subprocess.run(
            command,
            cwd=sandbox,
            env=env,
            timeout=mechanism.timeout_s,
            stdin=subprocess.DEVNULL,
            capture_output=True,
            text=True,
        )
        returncode = proc.returncode
        log.append(f"exit status {returncode}")
        log.extend(f"stderr: {ln}" for ln in proc.stderr.splitlines()[-5:])
    except subprocess.TimeoutExpired:
        error = "external-timeout"
    except OSError as exc:
        error = f"external-launch-failed: {exc}"
    after = store_path.read_bytes() if store_path.exists() else b""
    if after != before:
        store_path.write_bytes(before)
        error = "sandbox-violation"
        log.append("workspace store modified by external process; restored")

    local_evals = 0
    try:
        local_evals = len(EvalStore(local_store))
    except HarnessError as exc:
        log.append(f"local store unusable: {exc}")
        error = error or "local-store-tampered"

    artifact = None
    if error is None:
        if output.is_file():
            artifact = registry.write_artifact(cand, spec.artifact_name, output.read_bytes())
        else:
            error = "no-artifact"

    cost = None
    usage = sandbox / USAGE_FILE
    if usage.is_file():
        try:
            n_in, n_cache, n_out = (int(v) for v in usage.read_text().split())
            cost = CostRecord(
                cand.round, n_in, n_cache, n_out,
                float(mechanism.param("p_in", 0.0)),
                float(mechanism.param("p_cache", 0.0)),
                float(mechanism.param("p_out", 0.0)),
            )
        except ValueError:
            log.append("usage file ignored: expected three integers")
    notes_path = sandbox / NOTES_FILE
    notes = notes_path.read_text() if notes_path.is_file() else None
    return ExternalOutcome(artifact, error, local_store, local_evals, cost, notes, returncode, log)

