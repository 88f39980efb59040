"""Workspace layout, meta-actions and the edit policy that governs them.

A workspace looks like::

    harness.json              task, budgets, frozen edit policy (not editable)
    .eval.db                  official evaluation records (gateway only)
    candidates/               one folder per round (registry only)
    sessions/_next_goal.md    goal for the next session
    sessions/session_<k>/     per-phase reports, sandboxes, local stores
    shared/notes/ tools/ validators/
    shared/mechanism.json     parameters of the current mechanism
    skill/evolve_skill.md
    staging/                  seed artifact awaiting round 1

A meta-action is a list of whole-file edits plus a run plan. Its on-disk form
is a directory holding ``manifest.json``, one content file per written target
and ``plan.txt``::

    {"edits": [{"target": "skill/evolve_skill.md", "action": "write", "content": "edit_000.txt"},
               {"target": "shared/tools/old.py", "action": "delete"}]}
"""

from __future__ import annotations

import difflib
import fcntl
import json
import os
import tempfile
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

from evoharness.errors import (
    EditFailedError,
    FormatError,
    MalformedActionError,
    NotAWorkspaceError,
    PolicyViolation,
    WorkspaceBusyError,
)
from evoharness.plan import RunPlan, format_plan, parse_plan
from evoharness.registry import STORE_NAME
from evoharness.tasks import get_task

CONFIG_NAME = "harness.json"
LOCK_NAME = ".lock"
GOAL_PATH = "sessions/_next_goal.md"
SKILL_PATH = "skill/evolve_skill.md"
MECHANISM_PATH = "shared/mechanism.json"
FAMILY_MAP_PATH = "shared/notes/family_map.md"
STAGING_DIR = "staging"
FIXED_DIRS = (
    "candidates",
    "sessions",
    "shared/notes",
    "shared/tools",
    "shared/validators",
    "skill",
    STAGING_DIR,
)

DEFAULT_ALLOWED = (GOAL_PATH, "skill/", "shared/")
DEFAULT_FORBIDDEN = ("candidates/", STORE_NAME, CONFIG_NAME)

_SKILL_TEXT = """# Evolve skill

Improve the artifact of task `{task}`. Submit candidates only through the
gateway (`evoharness eval --program <file> --db-path <local store>`); never
touch `candidates/` or the workspace evaluation store.
"""

_GOAL_TEXT = "# goal for next session\n\n- continue from the best valid candidate\n"

_FAMILY_MAP_TEXT = "# Family map\n\n## Sessions\n\n## Do not repeat\n"


@dataclass(frozen=True)
class EditPolicy:
    allowed_prefixes: tuple[str, ...] = DEFAULT_ALLOWED
    forbidden_prefixes: tuple[str, ...] = DEFAULT_FORBIDDEN


@dataclass(frozen=True)
class Edit:
    target: str
    content: str | None  # None deletes the target


@dataclass(frozen=True)
class MetaAction:
    edits: tuple[Edit, ...] = ()
    run_plan: RunPlan = field(default_factory=RunPlan)


class Violation(NamedTuple):
    target: str
    reason: str

    def __str__(self):
        return f"{self.target}: {self.reason}" if self.target else self.reason


@dataclass(frozen=True)
class WorkspaceLayout:
    root: Path
    task: str
    global_eval_budget: int
    session_eval_budget: int
    rng_seed: int
    policy: EditPolicy

    @property
    def store_path(self) -> Path:
        return self.root / STORE_NAME

    @property
    def sessions(self) -> Path:
        return self.root / "sessions"

    def path(self, rel: str) -> Path:
        return self.root / rel

    def staged_seed(self) -> Path | None:
        p = self.root / STAGING_DIR / get_task(self.task).artifact_name
        return p if p.exists() else None


def _config(layout_root: Path, task: str, global_budget: int, session_budget: int,
            rng_seed: int, policy: EditPolicy) -> dict:
    return {
        "task": task,
        "global_eval_budget": global_budget,
        "session_eval_budget": session_budget,
        "rng_seed": rng_seed,
        "policy": {
            "allowed": list(policy.allowed_prefixes),
            "forbidden": list(policy.forbidden_prefixes),
        },
    }


def init_workspace(
    root: str | Path,
    task: str,
    seed_artifact: str | bytes | None = None,
    *,
    global_eval_budget: int = 100,
    session_eval_budget: int = 15,
    rng_seed: int = 0,
    mechanism: dict | None = None,
) -> WorkspaceLayout:
    from evoharness.mechanisms import default_mechanism_config

    root = Path(root)
    spec = get_task(task)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise NotAWorkspaceError(f"refusing to initialize non-empty {root}")
    root.mkdir(parents=True, exist_ok=True)
    for rel in FIXED_DIRS:
        (root / rel).mkdir(parents=True, exist_ok=True)
    policy = EditPolicy()
    config = _config(root, task, global_eval_budget, session_eval_budget, rng_seed, policy)
    (root / CONFIG_NAME).write_text(json.dumps(config, indent=2) + "\n")
    (root / STORE_NAME).touch()
    (root / LOCK_NAME).touch()
    (root / GOAL_PATH).write_text(_GOAL_TEXT)
    (root / SKILL_PATH).write_text(_SKILL_TEXT.format(task=task))
    (root / FAMILY_MAP_PATH).write_text(_FAMILY_MAP_TEXT)
    mech = mechanism if mechanism is not None else default_mechanism_config(task)
    (root / MECHANISM_PATH).write_text(json.dumps(mech, indent=2) + "\n")
    if seed_artifact is not None:
        seed_path = root / STAGING_DIR / spec.artifact_name
        if isinstance(seed_artifact, bytes):
            seed_path.write_bytes(seed_artifact)
        else:
            seed_path.write_text(seed_artifact)
    return load_workspace(root)


def load_workspace(root: str | Path) -> WorkspaceLayout:
    root = Path(root)
    config_path = root / CONFIG_NAME
    if not config_path.is_file():
        raise NotAWorkspaceError(f"{root} is not a workspace (no {CONFIG_NAME})")
    cfg = json.loads(config_path.read_text())
    missing = [rel for rel in FIXED_DIRS if not (root / rel).is_dir()]
    if missing:
        raise NotAWorkspaceError(f"{root} is missing {', '.join(missing)}")
    policy = EditPolicy(tuple(cfg["policy"]["allowed"]), tuple(cfg["policy"]["forbidden"]))
    return WorkspaceLayout(
        root=root,
        task=cfg["task"],
        global_eval_budget=cfg["global_eval_budget"],
        session_eval_budget=cfg["session_eval_budget"],
        rng_seed=cfg.get("rng_seed", 0),
        policy=policy,
    )


@contextmanager
def workspace_lock(root: str | Path) -> Iterator[None]:
    """Exclusive, non-blocking lock held for the duration of a mutating command."""
    with open(Path(root) / LOCK_NAME, "a") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise WorkspaceBusyError(f"{root} is in use by another command") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# policy ---------------------------------------------------------------------


def normalize_target(target: str) -> str:
    if not isinstance(target, str) or not target:
        raise MalformedActionError("empty edit target")
    if target.startswith("/") or "\\" in target or "\x00" in target:
        raise MalformedActionError(f"{target!r} is not a workspace-relative path")
    if any(part in ("", ".", "..") for part in target.split("/")):
        raise MalformedActionError(f"{target!r} contains traversal or empty segments")
    return target


def _matches(path: str, prefix: str) -> bool:
    if prefix.endswith("/"):
        return path.startswith(prefix)
    return path == prefix or path.startswith(prefix + "/")


def validate_meta_action(
    action: MetaAction, policy: EditPolicy, previous_plan: RunPlan | None = None
) -> list[Violation]:
    """Every policy violation of ``action``; an empty list means accept."""
    violations = []
    for edit in action.edits:
        target = normalize_target(edit.target)
        forbidden = [p for p in policy.forbidden_prefixes if _matches(target, p)]
        if forbidden:
            violations.append(Violation(target, f"forbidden path ({forbidden[0]})"))
        elif not any(_matches(target, p) for p in policy.allowed_prefixes):
            violations.append(Violation(target, "not under an editable path"))
    if not action.edits and previous_plan is not None and action.run_plan == previous_plan:
        violations.append(Violation("", "action changes neither files nor the run plan"))
    return violations


# apply ----------------------------------------------------------------------


@dataclass(frozen=True)
class Change:
    target: str
    kind: str  # create | write | delete
    added: int
    removed: int


@dataclass
class ApplyReport:
    changes: list[Change] = field(default_factory=list)
    diff: str = ""

    def summary(self) -> str:
        if not self.changes:
            return "no file changes"
        return "\n".join(
            f"{c.kind} {c.target} (+{c.added} -{c.removed})" for c in self.changes
        )


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except (UnicodeDecodeError, FileNotFoundError):
        return ""


def apply_meta_action(
    root: str | Path,
    action: MetaAction,
    policy: EditPolicy,
    previous_plan: RunPlan | None = None,
    log_path: str | Path | None = None,
) -> ApplyReport:
    """Apply all edits or none: stage every write, then swap files in.

    Any failure restores every touched file and removes directories created
    for the edit, then raises :class:`EditFailedError`.
    """
    violations = validate_meta_action(action, policy, previous_plan)
    if violations:
        raise PolicyViolation(violations)
    root = Path(root)
    report = ApplyReport()
    diffs = []
    staged: list[tuple[Path, Path | None]] = []
    created_dirs: list[Path] = []

    def discard_staging():
        for _, tmp in staged:
            if tmp is not None and tmp.exists():
                tmp.unlink()
        for d in reversed(created_dirs):
            try:
                d.rmdir()
            except OSError:
                pass

    try:
        for edit in action.edits:
            target = root / edit.target
            old = _read_text(target) if target.is_file() else ""
            if edit.content is None:
                if not target.is_file():
                    raise EditFailedError(f"cannot delete {edit.target}: no such file")
                staged.append((target, None))
                report.changes.append(Change(edit.target, "delete", 0, len(old.splitlines())))
                continue
            if target.is_dir():
                raise EditFailedError(f"cannot write {edit.target}: it is a directory")
            for parent in reversed(target.relative_to(root).parents):
                d = root / parent
                if not d.exists():
                    d.mkdir()
                    created_dirs.append(d)
            fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=".meta-stage-")
            with os.fdopen(fd, "w") as fh:
                fh.write(edit.content)
            staged.append((target, Path(tmp_name)))
            lines = list(
                difflib.unified_diff(
                    old.splitlines(), edit.content.splitlines(),
                    f"a/{edit.target}", f"b/{edit.target}", lineterm="",
                )
            )
            diffs.extend(lines)
            added = sum(1 for ln in lines if ln.startswith("+") and not ln.startswith("+++"))
            removed = sum(1 for ln in lines if ln.startswith("-") and not ln.startswith("---"))
            kind = "write" if target.exists() else "create"
            report.changes.append(Change(edit.target, kind, added, removed))
    except EditFailedError:
        discard_staging()
        raise
    except OSError as exc:
        discard_staging()
        raise EditFailedError(f"staging failed: {exc}") from exc

    backups: list[tuple[Path, Path | None, bool]] = []
    try:
        for target, tmp in staged:
            backup = None
            if target.exists():
                backup = target.with_name(f".meta-backup-{uuid.uuid4().hex}-{target.name}")
                os.replace(target, backup)
            backups.append((target, backup, tmp is not None))
            if tmp is not None:
                os.replace(tmp, target)
    except OSError as exc:
        for target, backup, wrote in reversed(backups):
            if wrote and target.exists():
                target.unlink()
            if backup is not None:
                os.replace(backup, target)
        discard_staging()
        raise EditFailedError(f"apply failed, all edits rolled back: {exc}") from exc
    for _, backup, _ in backups:
        if backup is not None:
            backup.unlink()

    report.diff = "\n".join(diffs)
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "a") as fh:
            fh.write("meta-action applied:\n" + report.summary() + "\n")
            if report.diff:
                fh.write(report.diff + "\n")
    return report


# on-disk meta-actions ------------------------------------------------------


def write_meta_action(action: MetaAction, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, edit in enumerate(action.edits):
        if edit.content is None:
            entries.append({"target": edit.target, "action": "delete"})
        else:
            name = f"edit_{i:03d}.txt"
            (directory / name).write_text(edit.content)
            entries.append({"target": edit.target, "action": "write", "content": name})
    (directory / "manifest.json").write_text(json.dumps({"edits": entries}, indent=2) + "\n")
    (directory / "plan.txt").write_text(format_plan(action.run_plan))
    return directory


def read_meta_action(directory: str | Path, base_plan: RunPlan | None = None) -> MetaAction:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
        entries = manifest["edits"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable meta-action manifest {manifest_path}: {exc}") from None
    edits = []
    for entry in entries:
        kind = entry.get("action")
        if kind == "delete":
            edits.append(Edit(entry["target"], None))
        elif kind == "write":
            content_file = directory / normalize_target(entry["content"])
            if not content_file.is_file():
                raise FormatError(f"missing content file {entry['content']}")
            edits.append(Edit(entry["target"], content_file.read_text()))
        else:
            raise FormatError(f"unknown edit action {kind!r}")
    plan_path = directory / "plan.txt"
    plan = parse_plan(plan_path.read_text(), base_plan) if plan_path.exists() else (base_plan or RunPlan())
    return MetaAction(tuple(edits), plan)


def snapshot(root: str | Path) -> dict[str, bytes | None]:
    """Byte-level picture of a tree: file contents, directories as ``None``."""
    root = Path(root)
    snap: dict[str, bytes | None] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        rel_dir = Path(dirpath).relative_to(root)
        for d in dirnames:
            snap[str(rel_dir / d)] = None
        for f in filenames:
            snap[str(rel_dir / f)] = (Path(dirpath) / f).read_bytes()
    return snap
