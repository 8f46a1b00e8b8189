"""Built-in demo tasks: registration of drivers, evaluators and data setup.

Everything here is deterministic by construction so that two runs of the
same demo produce byte-identical canonical artifacts.
"""

from __future__ import annotations

from ..drivers import DriverRequest, DriverResponse, ROLE_SEED_PLANNER, register_builtin, register_evaluator
from . import flowers, ladder, synth


def noop_planner(request: DriverRequest, ctx) -> DriverResponse:
    return DriverResponse(role=ROLE_SEED_PLANNER, payload={
        "design": "Reuse the task's shipped baseline artifacts and builtin evaluator.",
    })


register_builtin("noop_planner", noop_planner)

register_builtin("rule_baseline", flowers.rule_baseline)
register_builtin("rule_hillclimb", flowers.rule_hillclimb)
register_builtin("rule_apply", flowers.rule_apply)
register_evaluator("rule_eval", flowers.rule_eval)

register_builtin("synth_baseline", synth.synth_baseline)
register_builtin("hparam_probe", synth.hparam_probe)
register_builtin("hparam_apply", synth.hparam_apply)
register_evaluator("synth_eval", synth.synth_eval)

register_builtin("ladder_baseline", ladder.ladder_baseline)
register_builtin("code_ladder", ladder.code_ladder)
register_builtin("ladder_apply", ladder.ladder_apply)
register_evaluator("ladder_eval", ladder.ladder_eval)

# Demo builtins that need task data materialized at run init.
_SETUP_BY_BUILTIN = {
    "rule_baseline": flowers.setup_rule_task,
    "rule_hillclimb": flowers.setup_rule_task,
    "rule_eval": flowers.setup_rule_task,
}


def setup_task(store, spec) -> None:
    """Run each bound builtin's data setup hook once."""
    ran = set()
    for binding in spec.drivers.values():
        if binding.kind != "builtin" or binding.builtin not in _SETUP_BY_BUILTIN:
            continue
        fn = _SETUP_BY_BUILTIN[binding.builtin]
        if fn in ran:
            continue
        ran.add(fn)
        fn(store, spec)
