from __future__ import annotations

import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoharness import workspace as ws
from evoharness.errors import (
    EditFailedError,
    FormatError,
    MalformedActionError,
    NotAWorkspaceError,
    PolicyViolation,
    WorkspaceBusyError,
)
from evoharness.plan import RunPlan
from evoharness.workspace import (
    DEFAULT_ALLOWED,
    DEFAULT_FORBIDDEN,
    FIXED_DIRS,
    GOAL_PATH,
    SKILL_PATH,
    Edit,
    EditPolicy,
    MetaAction,
    apply_meta_action,
    init_workspace,
    load_workspace,
    read_meta_action,
    snapshot,
    validate_meta_action,
    workspace_lock,
    write_meta_action,
)

POLICY = EditPolicy()


def action(*edits, plan=None):
    return MetaAction(tuple(Edit(t, c) for t, c in edits), plan or RunPlan())


# layout -----------------------------------------------------------------------


def test_init_creates_fixed_layout(tmp_path):
    layout = init_workspace(tmp_path / "w", "cp26")
    for rel in FIXED_DIRS:
        assert (layout.root / rel).is_dir()
    for rel in (GOAL_PATH, SKILL_PATH, ".eval.db", "harness.json", "shared/mechanism.json"):
        assert (layout.root / rel).is_file()
    assert layout.task == "cp26" and layout.global_eval_budget == 100
    assert layout.policy == EditPolicy(DEFAULT_ALLOWED, DEFAULT_FORBIDDEN)
    assert load_workspace(layout.root) == layout


def test_init_refuses_non_empty_root(tmp_path):
    (tmp_path / "stray.txt").write_text("x")
    with pytest.raises(NotAWorkspaceError):
        init_workspace(tmp_path, "cp26")
    assert os.listdir(tmp_path) == ["stray.txt"]


def test_seed_is_staged_outside_candidates(tmp_path):
    layout = init_workspace(tmp_path / "w", "ac2", "2\n1\n1\n")
    assert layout.staged_seed().read_text() == "2\n1\n1\n"
    assert "candidates" not in layout.staged_seed().parts
    assert not any((layout.root / "candidates").iterdir())


def test_load_rejects_non_workspace(tmp_path):
    with pytest.raises(NotAWorkspaceError):
        load_workspace(tmp_path)


def test_lock_is_exclusive(tmp_path):
    layout = init_workspace(tmp_path / "w", "cp26")
    with workspace_lock(layout.root):
        with pytest.raises(WorkspaceBusyError):
            with workspace_lock(layout.root):
                pass
    with workspace_lock(layout.root):
        pass


# validation ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "target, ok",
    [
        ("sessions/_next_goal.md", True),
        ("shared/notes/family_map.md", True),
        ("skill/evolve_skill.md", True),
        ("candidates/candidate_3/program", False),
        (".eval.db", False),
        ("harness.json", False),
        ("sessions/session_1/phase_report.txt", False),
        ("README.md", False),
    ],
)
def test_policy_examples(target, ok):
    assert (validate_meta_action(action((target, "x")), POLICY) == []) is ok


def test_forbidden_beats_allowed():
    policy = EditPolicy(allowed_prefixes=("",), forbidden_prefixes=("candidates/",))
    assert validate_meta_action(action(("candidates/x", "y")), policy)


def test_every_violation_is_reported():
    got = validate_meta_action(action(("candidates/a", "1"), (GOAL_PATH, "2"), (".eval.db", "3")), POLICY)
    assert [v.target for v in got] == ["candidates/a", ".eval.db"]


@pytest.mark.parametrize("target", ["../outside", "shared/../candidates/x", "/etc/passwd", "", "shared//x", "./skill"])
def test_malformed_targets(target):
    with pytest.raises(MalformedActionError):
        validate_meta_action(action((target, "x")), POLICY)


def test_malformed_is_distinct_from_violation():
    assert issubclass(MalformedActionError, PolicyViolation)
    assert MalformedActionError.exit_code == PolicyViolation.exit_code


def test_action_must_change_something():
    plan = RunPlan()
    assert validate_meta_action(action(plan=plan), POLICY, previous_plan=plan)
    assert validate_meta_action(action(plan=RunPlan(max_rounds=3)), POLICY, previous_plan=plan) == []


segment = st.sampled_from(["candidates", "shared", "skill", "sessions", "notes", "a.txt", ".eval.db", "x"])
targets = st.lists(segment, min_size=1, max_size=4).map("/".join)


@settings(max_examples=300)
@given(st.lists(targets, min_size=1, max_size=5))
def test_revalidation_is_idempotent(paths):
    act = action(*((p, "c") for p in paths))
    assert validate_meta_action(act, POLICY) == validate_meta_action(act, POLICY)


@settings(max_examples=300)
@given(st.lists(targets, min_size=1, max_size=5))
def test_accepted_actions_never_touch_protected_paths(paths):
    act = action(*((p, "c") for p in paths))
    if not validate_meta_action(act, POLICY):
        assert not any(p.startswith("candidates/") or p in (".eval.db", "harness.json") for p in paths)


# apply ------------------------------------------------------------------------


@pytest.fixture
def layout(make_workspace):
    return make_workspace("cp26")


def test_replace_skill_file(layout):
    report = apply_meta_action(layout.root, action((SKILL_PATH, "new skill\n")), POLICY)
    assert (layout.root / SKILL_PATH).read_text() == "new skill\n"
    assert len(report.changes) == 1 and report.changes[0].kind == "write"
    assert "+new skill" in report.diff


def test_delete_marker(layout):
    helper = layout.root / "shared/tools/helper"
    helper.write_text("print(1)\n")
    report = apply_meta_action(layout.root, action(("shared/tools/helper", None)), POLICY)
    assert not helper.exists()
    assert report.changes[0].kind == "delete"


def test_creating_nested_file(layout):
    apply_meta_action(layout.root, action(("shared/notes/deep/dir/n.md", "n")), POLICY)
    assert (layout.root / "shared/notes/deep/dir/n.md").read_text() == "n"


def test_diff_summary_logged(layout, tmp_path):
    log = tmp_path / "apply.log"
    apply_meta_action(layout.root, action((GOAL_PATH, "goal\n")), POLICY, log_path=log)
    text = log.read_text()
    assert "write sessions/_next_goal.md" in text and "+goal" in text


def test_rejected_action_changes_nothing(layout):
    before = snapshot(layout.root)
    with pytest.raises(PolicyViolation):
        apply_meta_action(layout.root, action((GOAL_PATH, "ok"), ("candidates/candidate_1/x", "bad")), POLICY)
    assert snapshot(layout.root) == before


def test_second_target_is_a_directory(layout):
    before = snapshot(layout.root)
    with pytest.raises(EditFailedError):
        apply_meta_action(layout.root, action((SKILL_PATH, "new"), ("shared/notes", "x")), POLICY)
    assert snapshot(layout.root) == before


def test_second_target_below_a_file(layout):
    before = snapshot(layout.root)
    with pytest.raises(EditFailedError):
        apply_meta_action(
            layout.root,
            action((SKILL_PATH, "new"), ("shared/new_dir/x", "x"), ("skill/evolve_skill.md/child", "y")),
            POLICY,
        )
    assert snapshot(layout.root) == before


def test_deleting_a_missing_file_fails_cleanly(layout):
    before = snapshot(layout.root)
    with pytest.raises(EditFailedError):
        apply_meta_action(layout.root, action((GOAL_PATH, "g"), ("shared/tools/none", None)), POLICY)
    assert snapshot(layout.root) == before


def test_failure_during_swap_rolls_back(layout, monkeypatch):
    before = snapshot(layout.root)
    real_replace = os.replace
    calls = []

    def flaky(src, dst):
        calls.append(dst)
        # fail while installing the second staged file
        if len(calls) == 4:
            raise OSError("disk full")
        return real_replace(src, dst)

    monkeypatch.setattr(ws.os, "replace", flaky)
    with pytest.raises(EditFailedError, match="rolled back"):
        apply_meta_action(layout.root, action((SKILL_PATH, "a"), (GOAL_PATH, "b")), POLICY)
    monkeypatch.undo()
    assert snapshot(layout.root) == before


def test_accepted_apply_leaves_candidates_and_store(make_workspace):
    from evoharness.controller import default_plan, run_segment

    layout = make_workspace("cp26")
    run_segment(layout, default_plan(layout).__class__(max_rounds=2))
    protected = {k: v for k, v in snapshot(layout.root).items() if k.startswith("candidates") or k == ".eval.db"}
    apply_meta_action(layout.root, action((GOAL_PATH, "g"), ("shared/notes/x.md", "y")), POLICY)
    after = snapshot(layout.root)
    assert all(after[k] == v for k, v in protected.items())


# on-disk format ---------------------------------------------------------------


def test_meta_action_round_trip(tmp_path):
    act = action((GOAL_PATH, "goal"), ("shared/tools/old", None), plan=RunPlan(max_rounds=4))
    write_meta_action(act, tmp_path / "act")
    assert read_meta_action(tmp_path / "act") == act


def test_meta_action_missing_plan_keeps_base(tmp_path):
    act = action((GOAL_PATH, "goal"))
    d = write_meta_action(act, tmp_path / "act")
    (d / "plan.txt").unlink()
    base = RunPlan(max_rounds=9)
    assert read_meta_action(d, base).run_plan == base


def test_meta_action_bad_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(FormatError):
        read_meta_action(tmp_path)
