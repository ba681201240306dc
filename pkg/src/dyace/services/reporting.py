import asyncio
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from ..config import RunConfig, SuiteCell, SuiteSpec, apply_overrides, build_run_config, load_run_config
from ..errors import DyaceError
from ..utils.logging import run_context
from .control_loop import run_variant
from .trace import ControlTrace, budget_ledger, gap_series, summarize

logger = logging.getLogger(__name__)

INSPECT_QUERIES = ("gaps", "specs", "ledger", "prompts", "summary")

TRACE_FILE = "trace.jsonl"
SUMMARY_FILE = "summary.json"
CONVERGENCE_FILE = "convergence.csv"


def _csv(frame: pd.DataFrame) -> str:
    """RFC-4180 text: CRLF line ends, full float precision"""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\r\n")
    return buffer.getvalue()


def gaps_frame(events: List[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(gap_series(events), columns=["generation", "gap", "best_cost"])


def spec_timeline(events: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Applied specs in order of first application, with lineage and the step they entered"""
    documents = {e["spec_id"]: e for e in events if e["event"] == "spec"}
    timeline: List[Dict[str, Any]] = []
    for e in events:
        if e["event"] != "apply":
            continue
        if timeline and timeline[-1]["spec_id"] == e["spec_id"]:
            timeline[-1]["steps"] += 1
            continue
        embedded = documents.get(e["spec_id"], {})
        lineage = embedded.get("document", {}).get("lineage", {})
        timeline.append({
            "spec_id": e["spec_id"],
            "from_step": e["step"],
            "from_generation": e["start_generation"],
            "steps": 1,
            "origin": embedded.get("origin"),
            "parents": lineage.get("parents", []),
            "mode": lineage.get("mode"),
            "title": (embedded.get("document", {}).get("description") or "").strip().split("\n")[0],
        })
    return timeline


def prompt_transcript(events: List[Dict[str, Any]]) -> str:
    blocks = []
    for e in events:
        if e["event"] != "backend_call":
            continue
        header = f"=== step {e['step']} {e['stage']} ({e['mode']}, attempt {e['attempt']}) ==="
        reply = e["reply"]["text"] if e.get("reply") else f"<no reply: {e.get('error')}>"
        blocks.append(f"{header}\n--- request ---\n{e['request']['prompt']}\n--- reply ---\n{reply}\n")
    return "\n".join(blocks)


def inspect_trace(events: List[Dict[str, Any]], query: str) -> str:
    """Render one view of a loaded trace"""
    if query == "gaps":
        return _csv(gaps_frame(events))
    if query == "specs":
        timeline = spec_timeline(events)
        lines = [
            f"step {t['from_step']:>3} gen {t['from_generation']:>4}  {t['spec_id']:<6} x{t['steps']:<3} "
            f"{t['mode'] or t['origin'] or '-':<10} parents={','.join(t['parents']) or '-'}  {t['title']}"
            for t in timeline
        ]
        return "\n".join(lines) + "\n"
    if query == "ledger":
        return json.dumps(budget_ledger(events).to_dict(), indent=2, sort_keys=True) + "\n"
    if query == "prompts":
        return prompt_transcript(events)
    if query == "summary":
        return json.dumps(summarize(events), indent=2, sort_keys=True) + "\n"
    raise DyaceError(f"unknown inspect query '{query}', expected one of {INSPECT_QUERIES}")


def write_run_artifacts(trace: ControlTrace, output: Path) -> Dict[str, Path]:
    """Trace, summary JSON and convergence CSV, all derived from the trace"""
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    paths = {
        "trace": trace.write(output / TRACE_FILE),
        "summary": output / SUMMARY_FILE,
        "convergence": output / CONVERGENCE_FILE,
    }
    paths["summary"].write_text(json.dumps(summarize(trace.events), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["convergence"].write_bytes(_csv(gaps_frame(trace.events)).encode("utf-8"))
    return paths


# suites ------------------------------------------------------------------------

@dataclass
class CellOutcome:
    instance: str
    variant: str
    seed: int
    output: Path
    summary: Optional[Dict[str, Any]] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.summary is None


@dataclass
class SuiteReport:
    cells: List[CellOutcome] = field(default_factory=list)

    @property
    def failed(self) -> List[CellOutcome]:
        return [c for c in self.cells if c.failed]

    def frame(self) -> pd.DataFrame:
        rows = [
            {"instance": c.instance, "variant": c.variant, "seed": c.seed, "final_gap": c.summary["final_gap"]}
            for c in self.cells if not c.failed
        ]
        return pd.DataFrame(rows, columns=["instance", "variant", "seed", "final_gap"])

    def matrix(self) -> pd.DataFrame:
        """instance x variant mean final gap over seeds"""
        frame = self.frame()
        if frame.empty:
            return pd.DataFrame()
        return frame.pivot_table(index="instance", columns="variant", values="final_gap", aggfunc="mean").sort_index()

    def seed_lists(self) -> pd.DataFrame:
        rows = []
        for (instance, variant), group in self.frame().groupby(["instance", "variant"], sort=True):
            rows.append({"instance": instance, "variant": variant, "seeds": " ".join(str(s) for s in sorted(group["seed"]))})
        return pd.DataFrame(rows, columns=["instance", "variant", "seeds"])

    def write(self, output: Path) -> Dict[str, Path]:
        output = Path(output)
        output.mkdir(parents=True, exist_ok=True)
        matrix_path, seeds_path, cells_path = output / "matrix.csv", output / "seeds.csv", output / "cells.json"
        matrix_path.write_bytes(_csv(self.matrix().reset_index()).encode("utf-8"))
        seeds_path.write_bytes(_csv(self.seed_lists()).encode("utf-8"))
        cells_path.write_text(json.dumps([
            {"instance": c.instance, "variant": c.variant, "seed": c.seed, "output": str(c.output),
             "status": "failed" if c.failed else "ok", "error": c.error, "final_gap": c.summary["final_gap"] if c.summary else None}
            for c in self.cells
        ], indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return {"matrix": matrix_path, "seeds": seeds_path, "cells": cells_path}


def cell_config(suite: SuiteSpec, cell: SuiteCell, seed: int) -> RunConfig:
    base = load_run_config(suite.config)
    data = base.model_dump(mode="python")
    data["instance"] = {"path": cell.instance, "format": cell.format, "name": cell.name,
                        "bks_registry": base.instance.bks_registry}
    data = apply_overrides(data, dict(suite.overrides))
    data = apply_overrides(data, {"run.variant": cell.variant.value, "run.seed": seed})
    # total_generations is recomputed from the overridden horizon
    data["run"]["total_generations"] = None
    return build_run_config(data)


def _run_cell(suite: SuiteSpec, cell: SuiteCell, seed: int) -> CellOutcome:
    name = cell.name or Path(cell.instance).stem
    output = Path(suite.output) / name / cell.variant.value / f"seed{seed}"
    outcome = CellOutcome(name, cell.variant.value, seed, output)
    with run_context(instance=name, variant=cell.variant.value, seed=seed):
        try:
            config = cell_config(suite, cell, seed)
            trace = asyncio.run(run_variant(config))
            write_run_artifacts(trace, output)
            outcome.summary = summarize(trace.events)
        except DyaceError as e:
            outcome.error = f"{type(e).__name__}: {e}"
            logger.error("suite cell %s/%s/seed %d failed: %s", name, cell.variant.value, seed, outcome.error)
        except Exception as e:
            # one broken cell must not take the rest of the grid down
            outcome.error = f"{type(e).__name__}: {e}"
            logger.exception("suite cell %s/%s/seed %d crashed", name, cell.variant.value, seed)
    return outcome


def run_suite(suite: SuiteSpec) -> SuiteReport:
    """Run every (cell, seed) pair; a failing cell is recorded and the rest still run"""
    tasks = suite.expand()
    logger.info("suite: %d runs with %d worker(s)", len(tasks), suite.workers)
    if suite.workers > 1:
        with ThreadPoolExecutor(max_workers=suite.workers) as pool:
            outcomes = list(pool.map(lambda task: _run_cell(suite, *task), tasks))
    else:
        outcomes = [_run_cell(suite, cell, seed) for cell, seed in tasks]
    report = SuiteReport(outcomes)
    report.write(suite.output)
    return report

