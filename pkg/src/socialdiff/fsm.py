"""Experiment run state machine definitions.

Triggers:
- mark_preprocessed: NEW|PREPROCESSED → PREPROCESSED
- start_training: PREPROCESSED|TRAINED|EVALUATED → TRAINING
- finish_training: TRAINING → TRAINED (requires checkpoint_ref)
- mark_evaluated: PREPROCESSED|TRAINED|EVALUATED → EVALUATED (requires
  report); evaluating a stored checkpoint starts from PREPROCESSED
- fail: any state but FAILED → FAILED
"""

from typing import Any

from transitions import Machine
from transitions.core import EventData, MachineError

from socialdiff.enums import RunStatus

CALLBACK_NAMES = (
    "mark_preprocessed",
    "start_training",
    "finish_training",
    "mark_evaluated",
    "fail",
)


def _require_checkpoint(event_data: EventData) -> None:
    """Guard: reject finish_training if no checkpoint was stored."""
    if not getattr(event_data.model, "checkpoint_ref", ""):
        raise MachineError(
            f"Transition '{event_data.event.name}'"
            " requires checkpoint_ref to be set."
        )


def _require_report(event_data: EventData) -> None:
    """Guard: reject mark_evaluated if no ranking report is attached."""
    if getattr(event_data.model, "report", None) is None:
        raise MachineError(
            f"Transition '{event_data.event.name}'"
            " requires report to be set."
        )


RUN_TRANSITIONS = [
    {
        "trigger": "mark_preprocessed",
        "source": [RunStatus.NEW, RunStatus.PREPROCESSED],
        "dest": RunStatus.PREPROCESSED,
    },
    {
        "trigger": "start_training",
        "source": [
            RunStatus.PREPROCESSED,
            RunStatus.TRAINED,
            RunStatus.EVALUATED,
        ],
        "dest": RunStatus.TRAINING,
    },
    {
        "trigger": "finish_training",
        "source": RunStatus.TRAINING,
        "dest": RunStatus.TRAINED,
        "before": _require_checkpoint,
    },
    {
        "trigger": "mark_evaluated",
        "source": [
            RunStatus.PREPROCESSED,
            RunStatus.TRAINED,
            RunStatus.EVALUATED,
        ],
        "dest": RunStatus.EVALUATED,
        "before": _require_report,
    },
    {
        "trigger": "fail",
        "source": [
            RunStatus.NEW,
            RunStatus.PREPROCESSED,
            RunStatus.TRAINING,
            RunStatus.TRAINED,
            RunStatus.EVALUATED,
        ],
        "dest": RunStatus.FAILED,
    },
]

ALLOWED_CALLBACKS: frozenset[str] = frozenset(CALLBACK_NAMES)


def create_run_machine(record: Any) -> Machine:
    """Attach run FSM to an experiment record."""
    initial = RunStatus(record.status) if record.status else RunStatus.NEW
    return Machine(
        model=record,
        states=RunStatus,
        transitions=RUN_TRANSITIONS,  # type: ignore[arg-type]  # transitions library expects complex union type
        initial=initial,
        model_attribute="status",
        auto_transitions=False,
        send_event=True,
    )
