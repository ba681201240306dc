import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Union

from ..dsl.spec import OperatorSpec
from ..errors import BudgetExceededError, TraceSchemaError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

LEDGER_KINDS = ("probe", "reevaluation", "offline")


class BudgetLedger:
    """Running count of charged rollouts; refuses any charge that would pass the budget"""

    def __init__(self, budget: int):
        self.budget = budget
        self.items: Dict[str, int] = {kind: 0 for kind in LEDGER_KINDS}

    @property
    def total(self) -> int:
        return sum(self.items.values())

    @property
    def remaining(self) -> int:
        return self.budget - self.total

    def can_afford(self, units: int) -> bool:
        return units <= self.remaining

    def charge(self, kind: str, units: int) -> int:
        if kind not in self.items:
            raise ValueError(f"unknown ledger kind '{kind}'")
        if not self.can_afford(units):
            raise BudgetExceededError(
                f"charging {units} {kind} units would bring the ledger to {self.total + units} of {self.budget}"
            )
        self.items[kind] += units
        return self.total


class ControlTrace:
    """Append-only event log of one run; one JSON object per event"""

    def __init__(self, record_timings: bool = False):
        self.events: List[Dict[str, Any]] = []
        self.record_timings = record_timings
        self._embedded: Set[str] = set()

    def emit(self, event: str, **payload: Any) -> Dict[str, Any]:
        record = {"seq": len(self.events), "event": event, **payload}
        if self.record_timings:
            record["wall_time"] = time.time()
        self.events.append(record)
        return record

    def embed_spec(self, spec: OperatorSpec, origin: str) -> None:
        """Emit the full serialization the first time a spec id is referenced"""
        if spec.id in self._embedded:
            return
        self._embedded.add(spec.id)
        self.emit("spec", spec_id=spec.id, origin=origin, document=spec.to_document())

    def of_kind(self, event: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in self.events)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def read_trace(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Load a JSON-lines trace, refusing anything but the current schema version"""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise TraceSchemaError(f"cannot read trace {path}: {e}") from e
    try:
        events = [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as e:
        raise TraceSchemaError(f"trace {path} is not JSON lines: {e}") from e
    if not events or events[0].get("event") != "run_start":
        raise TraceSchemaError(f"trace {path} does not start with a run_start event")
    version = events[0].get("schema_version")
    if version != SCHEMA_VERSION:
        raise TraceSchemaError(
            f"trace {path} has schema version {version}, this build reads version {SCHEMA_VERSION}"
        )
    return events


@dataclass
class LedgerSummary:
    probe: int = 0
    reevaluation: int = 0
    offline: int = 0
    budget: Optional[int] = None
    entries: int = 0

    @property
    def total(self) -> int:
        return self.probe + self.reevaluation + self.offline

    def to_dict(self) -> Dict[str, Any]:
        document = asdict(self)
        document["total"] = self.total
        return document


def budget_ledger(events: Iterable[Dict[str, Any]]) -> LedgerSummary:
    """Itemize ledger charges from the event log and check the running total against the budget"""
    summary = LedgerSummary()
    for event in events:
        if event["event"] == "run_start":
            summary.budget = event["config"]["run"]["budget"]
        elif event["event"] == "ledger":
            setattr(summary, event["kind"], getattr(summary, event["kind"]) + event["units"])
            summary.entries += 1
            if summary.budget is not None and summary.total > summary.budget:
                raise BudgetExceededError(
                    f"ledger reaches {summary.total} at event {event['seq']}, budget is {summary.budget}"
                )
    return summary


def gap_series(events: Iterable[Dict[str, Any]]) -> List[Dict[str, Any]]:
    return [
        {"generation": e["generation"], "gap": e["gap"], "best_cost": e["best_cost"]}
        for e in events if e["event"] == "generation"
    ]


def applied_specs(events: Iterable[Dict[str, Any]]) -> List[str]:
    """Distinct applied spec ids in order of first application"""
    seen: List[str] = []
    for e in events:
        if e["event"] == "apply" and e["spec_id"] not in seen:
            seen.append(e["spec_id"])
    return seen


def summarize(events: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Summary document, computed from the trace alone"""
    start = events[0]
    series = gap_series(events)
    if not series:
        raise TraceSchemaError("trace holds no generation events")
    best = min(series, key=lambda row: (row["best_cost"], row["generation"]))
    return {
        "instance": start["instance"]["name"],
        "variant": start["config"]["run"]["variant"],
        "seed": start["config"]["run"]["seed"],
        "final_gap": best["gap"],
        "best_cost": best["best_cost"],
        "best_generation": best["generation"],
        "generations": len(series),
        "ledger_total": budget_ledger(events).total,
        "applied_specs": applied_specs(events),
    }
