from __future__ import annotations

import json
import textwrap

import pytest

from evoharness.errors import FormatError, HarnessError, ParentCorruptError, SeedMissingError
from evoharness.gateway import Gateway, Quota
from evoharness.mechanisms import (
    EXTERNAL,
    Mechanism,
    OptimizeContext,
    default_mechanism_config,
    ensure_seeded,
    load_mechanism,
    mechanism_from_config,
    optimize,
    repair_radius,
    run_external,
    seed_artifact,
    select,
    step_size,
)
from evoharness.registry import EvalRecord, Registry
from evoharness.tasks import get_task
from evoharness.tasks.autocorr import ac2_ratio, parse_function
from evoharness.tasks.packing import parse_packing, score_packing
from evoharness.workspace import MECHANISM_PATH, snapshot
from evoharness import gateway as gw

HILL = Mechanism("procedure", "best", "cp26-hillclimb", {"sigma0": 0.05, "halve_every": 50, "seed": 0})


def seeded(layout):
    reg = Registry(layout.root, layout.task)
    ensure_seeded(reg, layout, Gateway())
    return reg


def add_round(reg, parent, score, valid=True):
    cand = reg.new_candidate(parent)
    reg.record_eval(
        EvalRecord(cand.round, reg.task, 1.0 if valid else 0.0, score if valid else 0.0,
                   {"combined_score": score if valid else 0.0}),
        gw._TOKEN,
    )
    return cand


# seeding and selection -------------------------------------------------------


@pytest.mark.parametrize(
    "task, check",
    [
        ("cp26", lambda s: abs(score_packing(parse_packing(s))[1] - 26 / 12) <= 1e-9),
        ("ac2", lambda s: abs(ac2_ratio(parse_function(s))[1] - 2 / 3) <= 1e-3),
    ],
)
def test_seed_artifact_scores(task, check):
    assert check(seed_artifact(task))


def test_vliw_seed_is_valid(tmp_path):
    path = tmp_path / get_task("vliw").artifact_name
    path.write_text(seed_artifact("vliw"))
    assert get_task("vliw").evaluate(path)["validity"] == 1


def test_empty_registry_seeds_round_one(make_workspace):
    layout = make_workspace("cp26")
    reg = Registry(layout.root, "cp26")
    info = select(reg, HILL, layout, Gateway())
    assert info.parent.round == 1 and info.parent.mechanism_id == "seed"
    assert reg.read_metrics(1)["combined_score"] == pytest.approx(26 / 12)
    assert reg.logs(1) == ["seed artifact staged at init"]


def test_missing_seed(make_workspace):
    layout = make_workspace("cp26", seed=None)
    with pytest.raises(SeedMissingError):
        select(Registry(layout.root, "cp26"), HILL, layout, Gateway())
    with pytest.raises(SeedMissingError):
        select(Registry(layout.root, "cp26"), HILL)


def test_best_selection(make_workspace):
    layout = make_workspace("cp26", seed=None)
    reg = Registry(layout.root, "cp26")
    add_round(reg, None, 2.0)
    add_round(reg, 1, 2.5)
    assert select(reg, HILL).parent.round == 2


def test_cross_candidate_selection(make_workspace):
    layout = make_workspace("cp26", seed=None)
    reg = Registry(layout.root, "cp26")
    add_round(reg, None, 1.0)
    add_round(reg, 1, 3.0)
    add_round(reg, 1, 0.0, valid=False)
    add_round(reg, 2, 2.0)
    info = select(reg, Mechanism("procedure", "cross_candidate", "cp26-hillclimb"))
    assert info.parent.round == 2
    assert [c.round for c in info.references] == [4, 1]


def test_selection_without_valid_rounds_uses_latest_evaluated(make_workspace):
    layout = make_workspace("cp26", seed=None)
    reg = Registry(layout.root, "cp26")
    add_round(reg, None, 0.0, valid=False)
    reg.new_candidate(1)
    assert select(reg, HILL).parent.round == 1


# optimizers -------------------------------------------------------------------


def test_hillclimb_changes_exactly_one_row(make_workspace):
    layout = make_workspace("cp26")
    reg = seeded(layout)
    cand = reg.new_candidate(1)
    lines = optimize(select(reg, HILL), cand, OptimizeContext(reg, HILL))
    before = parse_packing(reg.artifact_path(reg.get(1)).read_text())
    after = parse_packing(reg.artifact_path(cand).read_text())
    changed = [i for i, (a, b) in enumerate(zip(before, after)) if a != b]
    assert len(changed) == 1
    x, y, r = after[changed[0]]
    assert 0 <= x <= 1 and 0 <= y <= 1 and r == repair_radius(after, changed[0], x, y)
    assert lines == [f"sigma0=0.05 sigma=0.05 circle={changed[0]} parent=1"]


def test_hillclimb_repair_keeps_packing_feasible(make_workspace):
    # a move into a neighbour or onto the wall repairs to radius 0 (invalid);
    # any positive repaired radius must leave the packing valid
    layout = make_workspace("cp26")
    reg = seeded(layout)
    seen_positive = 0
    for _ in range(60):
        cand = reg.new_candidate(1)
        lines = optimize(select(reg, HILL), cand, OptimizeContext(reg, HILL))
        circles = parse_packing(reg.artifact_path(cand).read_text())
        i = int(lines[0].split("circle=")[1].split()[0])
        validity, _ = score_packing(circles)
        if circles[i][2] > 0:
            seen_positive += 1
            assert validity == 1
        else:
            assert validity == 0
    assert seen_positive > 0


def test_hillclimb_is_deterministic(make_workspace):
    outs = []
    for _ in range(2):
        layout = make_workspace("cp26")
        reg = seeded(layout)
        cand = reg.new_candidate(1)
        optimize(select(reg, HILL), cand, OptimizeContext(reg, HILL, rng_seed=7))
        outs.append(reg.artifact_path(cand).read_bytes())
    assert outs[0] == outs[1]


def test_step_size_schedule():
    assert step_size(HILL, 0) == (0.05, 0.05)
    assert step_size(HILL, 49) == (0.05, 0.05)
    assert step_size(HILL, 50) == (0.05, 0.025)
    assert step_size(HILL, 120) == (0.05, 0.0125)


def test_repair_radius_examples():
    circles = [(0.25, 0.5, 0.1), (0.75, 0.5, 0.1)]
    assert repair_radius(circles, 0, 0.5, 0.5) == pytest.approx(0.15)
    assert repair_radius(circles, 0, 0.02, 0.5) == pytest.approx(0.02)
    assert repair_radius(circles, 0, 0.75, 0.5) == 0.0


def test_stepsearch_clamps_at_zero(make_workspace):
    mech = Mechanism("procedure", "best", "ac2-stepsearch", {"sigma0": 50.0, "seed": 1})
    layout = make_workspace("ac2")
    reg = seeded(layout)
    for _ in range(20):
        cand = reg.new_candidate(1)
        optimize(select(reg, mech), cand, OptimizeContext(reg, mech))
        samples = parse_function(reg.artifact_path(cand).read_text())
        assert min(samples) >= 0.0
    assert any(min(parse_function(reg.artifact_path(reg.get(r)).read_text())) == 0.0 for r in reg.rounds())


def test_passthrough_is_byte_identical(make_workspace):
    mech = mechanism_from_config(default_mechanism_config("vliw"))
    layout = make_workspace("vliw")
    reg = seeded(layout)
    cand = reg.new_candidate(1)
    optimize(select(reg, mech), cand, OptimizeContext(reg, mech))
    assert reg.artifact_path(cand).read_bytes() == reg.artifact_path(reg.get(1)).read_bytes()


def test_optimize_refuses_non_empty_artifact_dir(make_workspace):
    layout = make_workspace("cp26")
    reg = seeded(layout)
    cand = reg.new_candidate(1)
    reg.write_artifact(cand, "stray", "x")
    with pytest.raises(HarnessError):
        optimize(select(reg, HILL), cand, OptimizeContext(reg, HILL))


def test_corrupt_parent(make_workspace):
    layout = make_workspace("cp26")
    reg = seeded(layout)
    reg.artifact_path(reg.get(1)).write_text("garbage\n")
    with pytest.raises(ParentCorruptError):
        optimize(select(reg, HILL), reg.new_candidate(1), OptimizeContext(reg, HILL))


def test_optimizer_writes_only_its_artifact_dir(make_workspace):
    layout = make_workspace("cp26")
    reg = seeded(layout)
    before = snapshot(layout.root)
    cand = reg.new_candidate(1)
    optimize(select(reg, HILL), cand, OptimizeContext(reg, HILL))
    after = snapshot(layout.root)
    prefix = f"candidates/candidate_{cand.round}"
    assert {k: v for k, v in after.items() if not k.startswith(prefix)} == before


# configs ----------------------------------------------------------------------


def test_config_round_trip():
    for task in ("cp26", "ac2", "vliw"):
        cfg = default_mechanism_config(task)
        assert mechanism_from_config(cfg).to_config() == cfg
    ext = {"kind": EXTERNAL, "command": ["a", "b"], "timeout_s": 5.0, "params": {"p_in": 1.0}}
    assert mechanism_from_config(ext).to_config() == ext
    assert mechanism_from_config(ext).id == "external"


@pytest.mark.parametrize(
    "cfg",
    [
        {"kind": "magic"},
        {"kind": "procedure", "optimization": "nope"},
        {"kind": "procedure", "selection": "random", "optimization": "cp26-hillclimb"},
        {"kind": "external", "command": "python agent.py"},
        {"kind": "external", "command": []},
        {},
    ],
)
def test_bad_configs(cfg):
    with pytest.raises(FormatError):
        mechanism_from_config(cfg)


def test_reload_sees_edited_parameters(make_workspace):
    layout = make_workspace("cp26")
    cfg = json.loads(layout.path(MECHANISM_PATH).read_text())
    cfg["params"]["sigma0"] = 0.2
    layout.path(MECHANISM_PATH).write_text(json.dumps(cfg))
    mech = load_mechanism(layout)
    reg = seeded(layout)
    cand = reg.new_candidate(1)
    lines = optimize(select(reg, mech), cand, OptimizeContext(reg, mech))
    assert lines[0].startswith("sigma0=0.2 sigma=0.2 ")


# external processes -----------------------------------------------------------

AGENT = """
import os, pathlib, shutil, subprocess, sys
sandbox = pathlib.Path(os.environ["EVOHARNESS_SANDBOX"])
parent = sorted((sandbox / "parents").iterdir())[0] / "packing.txt"
attempt = sandbox / "attempts" / "a1.txt"
shutil.copyfile(parent, attempt)
for _ in range({evals}):
    subprocess.run([sys.executable, "-m", "evoharness", "eval", "--program", str(attempt),
                    "--db-path", os.environ["EVOHARNESS_DB_PATH"]], check=True, capture_output=True)
{extra}
shutil.copyfile(attempt, os.environ["EVOHARNESS_OUTPUT"])
(sandbox / "usage.txt").write_text("100 10 5\\n")
(sandbox / "SESSION_NOTES.md").write_text("tried a copy\\n")
"""


def external(tmp_path, evals=1, extra="", timeout=60.0, params=None):
    script = tmp_path / "agent.py"
    script.write_text(textwrap.dedent(AGENT.format(evals=evals, extra=extra)))
    return Mechanism(EXTERNAL, command=("{python}", str(script)), timeout_s=timeout,
                     params=params or {"p_in": 0.01, "p_cache": 0.001, "p_out": 0.1})


def run_one(layout, mech, tmp_path):
    reg = seeded(layout)
    info = select(reg, mech)
    cand = reg.new_candidate(info.parent.round, mech.id)
    sandbox = tmp_path / "sandbox" / "agent_workspace"
    return reg, cand, sandbox, run_external(mech, layout, reg, info, cand, sandbox, 99, 14)


def test_external_happy_path(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    reg, cand, sandbox, out = run_one(layout, external(tmp_path, evals=2), tmp_path)
    assert out.error is None and out.returncode == 0
    assert out.artifact == reg.artifact_path(cand)
    assert out.artifact.read_bytes() == reg.artifact_path(reg.get(1)).read_bytes()
    assert out.local_evals == 2
    assert out.cost.round_cost == pytest.approx(100 * 0.01 + 10 * 0.001 + 5 * 0.1)
    assert out.notes == "tried a copy\n"
    assert (sandbox / "shared" / "mechanism.json").stat().st_mode & 0o222 == 0
    assert len(reg.records()) == 1  # local evaluations stay local until replay


def test_external_timeout(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    mech = external(tmp_path, evals=0, extra="import time; time.sleep(30)", timeout=0.5)
    _, _, _, out = run_one(layout, mech, tmp_path)
    assert out.error == "external-timeout" and out.artifact is None


def test_external_without_artifact(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    mech = external(tmp_path, evals=0, extra="sys.exit(0)")
    _, _, _, out = run_one(layout, mech, tmp_path)
    assert out.error == "no-artifact"


def test_external_touching_workspace_store(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    extra = ("store = pathlib.Path(os.environ['EVOHARNESS_WORKSPACE']) / '.eval.db'\n"
             "store.write_bytes(store.read_bytes() + b'forged\\n')")
    mech = external(tmp_path, evals=0, extra=extra)
    reg, cand, _, out = run_one(layout, mech, tmp_path)
    assert out.error == "sandbox-violation" and out.artifact is None
    assert b"forged" not in layout.store_path.read_bytes()
    assert len(reg.records()) == 1
    assert not any((layout.root / cand.artifact_dir).iterdir())


def test_external_tampering_local_store(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    extra = "(sandbox / '.eval.local.db').write_text('junk\\n')"
    _, _, _, out = run_one(layout, external(tmp_path, evals=1, extra=extra), tmp_path)
    assert out.error == "local-store-tampered"


def test_external_bad_command(make_workspace, tmp_path):
    layout = make_workspace("cp26")
    mech = Mechanism(EXTERNAL, command=(str(tmp_path / "missing-binary"),), timeout_s=5)
    _, _, _, out = run_one(layout, mech, tmp_path)
    assert out.error.startswith("external-launch-failed")


def test_quota_type_is_plain():
    assert Quota(3, 2).permits() and not Quota(0, 2).permits()
