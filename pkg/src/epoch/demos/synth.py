"""Hyperparameter-tuning demo over a closed-form accuracy surface.

Two tunable parameters: an optimizer family (adam, adamw, sgd) and a
learning rate in [0.0001, 0.01]. The surface is documented and exact so
tests can recompute every value independently:

    l          = log10(learning_rate)
    eval_acc   = round(BASE[opt] + 0.30 * exp(-(l + 2.3)^2 / (2 * 0.55^2)), 6)
    gap        = round(0.05 + 0.13 / (1 + exp(-(l + 2.1) / 0.04)), 6)
    train_acc  = round(min(1, eval_acc + gap), 6)

BASE is adam 0.42, adamw 0.49, sgd 0.53. The gap term stays near 0.05 for
small learning rates and exceeds 0.15 as the rate approaches 0.01, which
is the region the overfit-gap guard exists to reject.

The probe investigator is deliberately train-side only: it sweeps the
optimizer family at the starting learning rate, then scales the rate,
consulting nothing but visited parameter points and their recorded
training accuracies.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from ..drivers import DriverRequest, DriverResponse, ROLE_BASELINE_EXECUTOR, ROLE_EXECUTOR, ROLE_INVESTIGATOR
from ..metrics import MetricsArtifact

OPTIMIZERS = ("adam", "adamw", "sgd")
BASE_ACCURACY = {"adam": 0.42, "adamw": 0.49, "sgd": 0.53}
LR_MIN, LR_MAX = 0.0001, 0.01
PEAK_LOG_LR = -2.3
WIDTH = 0.55
GAP_FLOOR = 0.05
GAP_RISE = 0.13
GAP_KNEE = -2.1
GAP_SHARPNESS = 0.04

BASELINE_PARAMS = {"optimizer": "adam", "learning_rate": 0.001}
LR_UP_FACTOR = 2.5
LR_DOWN_FACTOR = 0.5


def surface_eval_accuracy(optimizer: str, learning_rate: float) -> float:
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if not (LR_MIN <= learning_rate <= LR_MAX):
        raise ValueError(f"learning_rate {learning_rate} outside [{LR_MIN}, {LR_MAX}]")
    l = math.log10(learning_rate)
    bump = 0.30 * math.exp(-((l - PEAK_LOG_LR) ** 2) / (2 * WIDTH * WIDTH))
    return round(BASE_ACCURACY[optimizer] + bump, 6)


def surface_gap(learning_rate: float) -> float:
    l = math.log10(learning_rate)
    return round(GAP_FLOOR + GAP_RISE / (1 + math.exp(-(l - GAP_KNEE) / GAP_SHARPNESS)), 6)


def surface_train_accuracy(optimizer: str, learning_rate: float) -> float:
    return round(min(1.0, surface_eval_accuracy(optimizer, learning_rate)
                     + surface_gap(learning_rate)), 6)


def synth_eval_params(optimizer: str, learning_rate: float) -> MetricsArtifact:
    return MetricsArtifact(splits={
        "train": {"accuracy": surface_train_accuracy(optimizer, learning_rate)},
        "eval": {"accuracy": surface_eval_accuracy(optimizer, learning_rate)},
    })


def read_params(path: Path) -> dict:
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {"optimizer": str(doc["optimizer"]), "learning_rate": float(doc["learning_rate"])}


def write_params(path: Path, params: dict) -> None:
    path.write_text(json.dumps(params, sort_keys=True) + "\n", encoding="utf-8")


def _clamp_lr(lr: float) -> float:
    return round(min(max(lr, LR_MIN), LR_MAX), 10)


def _params_key(params: dict) -> tuple[str, float]:
    return (params["optimizer"], round(float(params["learning_rate"]), 10))


PROPOSAL_FENCE = "```proposal"


def _embed(report: str, params: dict) -> str:
    return f"{report}\n\n{PROPOSAL_FENCE}\n{json.dumps(params, sort_keys=True)}\n```\n"


def _extract(text: str) -> dict:
    block = text.rsplit(PROPOSAL_FENCE, 1)[1]
    return json.loads(block.split("```", 1)[0])


def _visited_and_trains(ctx) -> tuple[set[tuple[str, float]], dict[tuple[str, float], float]]:
    """Parameter points already tried and their recorded training accuracies.

    Only train-split values are consulted; masking eval numbers in the
    recorded artifacts cannot change any proposal.
    """
    visited: set[tuple[str, float]] = {_params_key(BASELINE_PARAMS)}
    trains: dict[tuple[str, float], float] = {}
    if ctx.baseline_metrics is not None:
        value = ctx.baseline_metrics.split_metric("train", "accuracy")
        if value is not None:
            trains[_params_key(BASELINE_PARAMS)] = value
    for record in ctx.prior_records:
        if not record.investigation_text or PROPOSAL_FENCE not in record.investigation_text:
            continue
        try:
            params = _extract(record.investigation_text)
            key = _params_key(params)
        except (ValueError, KeyError):
            continue
        visited.add(key)
        if record.metrics is not None:
            value = record.metrics.split_metric("train", "accuracy")
            if value is not None:
                trains[key] = value
    return visited, trains


def _candidate_moves(current: dict, visited: set, trains: dict) -> list[dict]:
    """Ordered coordinate moves from the current accepted parameters."""
    moves: list[dict] = []
    lr = round(float(current["learning_rate"]), 10)
    baseline_lr = round(BASELINE_PARAMS["learning_rate"], 10)

    if lr == baseline_lr:
        for opt in OPTIMIZERS:
            key = (opt, lr)
            if key in visited:
                continue
            moves.append({"optimizer": opt, "learning_rate": lr})

    current_train = trains.get(_params_key(current))

    def direction_regressed(factor: float) -> bool:
        # Did some prior try at this optimizer in this lr direction lose
        # training accuracy relative to the current accepted point?
        if current_train is None:
            return False
        for (opt, tried_lr), train in trains.items():
            if opt != current["optimizer"]:
                continue
            if factor > 1 and tried_lr > lr and train < current_train:
                return True
            if factor < 1 and tried_lr < lr and train < current_train:
                return True
        return False

    for factor in (LR_UP_FACTOR, LR_DOWN_FACTOR):
        scaled = _clamp_lr(lr * factor)
        key = (current["optimizer"], scaled)
        if scaled == lr or key in visited or direction_regressed(factor):
            continue
        moves.append({"optimizer": current["optimizer"], "learning_rate": scaled})
    return moves


def hparam_probe(request: DriverRequest, ctx) -> DriverResponse:
    """Investigator: next coordinate move from train-side evidence only."""
    current = read_params(ctx.accepted_dir / "params.json")
    visited, trains = _visited_and_trains(ctx)
    moves = _candidate_moves(current, visited, trains)
    if request.try_index >= len(moves):
        return DriverResponse(role=ROLE_INVESTIGATOR, payload={
            "report": "No untried parameter move is supported by training-side evidence.",
            "has_hypothesis": False,
        })
    proposal = moves[request.try_index]
    if proposal["optimizer"] != current["optimizer"]:
        summary = f"switch optimizer {current['optimizer']} -> {proposal['optimizer']}"
    else:
        summary = f"scale learning rate {current['learning_rate']:g} -> {proposal['learning_rate']:g}"
    report = (
        f"# Tuning investigation (round {request.round_index + 1}, try {request.try_index})\n\n"
        f"Accepted parameters: {json.dumps(current, sort_keys=True)}.\n"
        f"Proposed move: {summary}.")
    return DriverResponse(role=ROLE_INVESTIGATOR, payload={
        "report": _embed(report, proposal),
        "hypothesis": summary,
        "has_hypothesis": True,
        "wants_retry_on_reject": request.try_index + 1 < len(moves),
    })


def hparam_apply(request: DriverRequest, ctx) -> DriverResponse:
    params = _extract(str(request.constraints.get("investigation", "")))
    write_params(Path(ctx.candidate_dir) / "params.json", params)
    return DriverResponse(role=ROLE_EXECUTOR, payload={
        "change": f"{params['optimizer']}, lr={params['learning_rate']:g}",
        "files_written": ["params.json"],
    })


def synth_baseline(request: DriverRequest, ctx) -> DriverResponse:
    write_params(Path(ctx.candidate_dir) / "params.json", dict(BASELINE_PARAMS))
    return DriverResponse(role=ROLE_BASELINE_EXECUTOR, payload={
        "change": (f"{BASELINE_PARAMS['optimizer']}, "
                   f"lr={BASELINE_PARAMS['learning_rate']:g}"),
        "files_written": ["params.json"],
    })


def synth_eval(candidate_dir: Path, store, spec) -> MetricsArtifact:
    params = read_params(Path(candidate_dir) / "params.json")
    return synth_eval_params(params["optimizer"], params["learning_rate"])
