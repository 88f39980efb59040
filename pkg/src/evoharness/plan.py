"""Run plans: the contract a meta-phase hands to the next evolution segment.

On disk a plan is a list of ``key: value`` lines::

    max_rounds: 20
    session_eval_budget: 15
    target_score: 2.6359
    plateau_window: 25
    invalid_streak_limit: 10
    global_round_cap: 100

``target_score: none`` disables the target stop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from evoharness.errors import FormatError


@dataclass(frozen=True)
class StopConditions:
    target_score: float | None = None
    plateau_window: int = 25
    invalid_streak_limit: int = 10
    global_round_cap: int = 100

    def __post_init__(self):
        for name in ("plateau_window", "invalid_streak_limit", "global_round_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class RunPlan:
    max_rounds: int = 15
    session_eval_budget: int = 15
    stop: StopConditions = field(default_factory=StopConditions)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.session_eval_budget < 1:
            raise ValueError("session_eval_budget must be >= 1")

    def with_stop(self, **changes) -> RunPlan:
        return replace(self, stop=replace(self.stop, **changes))


_INT_KEYS = ("max_rounds", "session_eval_budget", "plateau_window", "invalid_streak_limit", "global_round_cap")


def format_plan(plan: RunPlan) -> str:
    target = "none" if plan.stop.target_score is None else repr(plan.stop.target_score)
    return (
        f"max_rounds: {plan.max_rounds}\n"
        f"session_eval_budget: {plan.session_eval_budget}\n"
        f"target_score: {target}\n"
        f"plateau_window: {plan.stop.plateau_window}\n"
        f"invalid_streak_limit: {plan.stop.invalid_streak_limit}\n"
        f"global_round_cap: {plan.stop.global_round_cap}\n"
    )


def parse_plan(text: str, base: RunPlan | None = None) -> RunPlan:
    """Parse a plan document; keys it omits keep their value from ``base``."""
    base = base or RunPlan()
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise FormatError(f"expected 'key: value', got {line!r}", lineno)
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise FormatError(f"{key} must be an integer", lineno) from None
        elif key == "target_score":
            if value.lower() == "none":
                values[key] = None
            else:
                try:
                    values[key] = float(value)
                except ValueError:
                    raise FormatError("target_score must be a number or none", lineno) from None
        else:
            raise FormatError(f"unknown plan key {key!r}", lineno)
    stop_keys = {"target_score", "plateau_window", "invalid_streak_limit", "global_round_cap"}
    try:
        stop = replace(base.stop, **{k: v for k, v in values.items() if k in stop_keys})
        return replace(
            base,
            stop=stop,
            **{k: v for k, v in values.items() if k not in stop_keys},
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from None
