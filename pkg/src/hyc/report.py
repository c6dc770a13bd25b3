"""Report files (JSON), trajectory dumps (CSV) and the bench table."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import IO, Iterable, Sequence

from .automaton import HybridAutomaton, Trace
from .ode import IntegratorConfig, Trajectory
from .strategy import RunReport

SCHEMA = "hyc-report/1"
BENCH_SCHEMA = "hyc-bench/1"


class ReportError(ValueError):
    pass


# -- run reports ---------------------------------------------------------------


def report_document(report: RunReport) -> dict:
    return {"schema": SCHEMA, **report.to_dict()}


def dumps(report: RunReport) -> str:
    return json.dumps(report_document(report), indent=2) + "\n"


def loads(text: str) -> RunReport:
    doc = json.loads(text)
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ReportError(f"not a {SCHEMA} document (schema = {doc.get('schema') if isinstance(doc, dict) else None!r})")
    doc = dict(doc)
    del doc["schema"]
    return RunReport.from_dict(doc)


def write_report(report: RunReport, path: str | Path) -> None:
    Path(path).write_text(dumps(report))


def read_report(path: str | Path) -> RunReport:
    return loads(Path(path).read_text())


def without_timing(doc: dict) -> dict:
    """The report document minus every wall-clock field, for reproducibility checks."""
    doc = dict(doc)
    doc.pop("timing", None)
    doc["solver_log"] = [{k: v for k, v in rec.items() if k != "seconds"} for rec in doc.get("solver_log", [])]
    return doc


# -- trajectory dumps ----------------------------------------------------------


def trace_rows(h: HybridAutomaton, tr: Trace, cfg: IntegratorConfig = IntegratorConfig()):
    """(global time, step, mode, valuation) at every integrator grid point of the trace.

    A trace of K steps gives 1 + K/h rows.  Inside a step that fires at local
    time t, grid points up to t belong to the source mode and later ones to the
    target mode, which restarts its own clock at the jump.
    """
    n = cfg.n
    for k, (s, jump) in enumerate(zip(tr.states, tr.jumps)):
        src = Trajectory(h, s.mode, s.valuation, cfg)
        if jump.is_stay:
            dst, t_fire, target = None, 1.0, s.mode
        else:
            t_fire = jump.time
            target = h.transitions[jump.transition].target
            dst = Trajectory(h, target, src.at(t_fire), cfg)
        for j in range(n):
            tau = j * cfg.h
            if dst is None or tau <= t_fire:
                yield k + tau, k, s.mode, src.grid_state(j)
            else:
                yield k + tau, k, target, dst.at(tau - t_fire)
    last = tr.states[-1]
    yield float(len(tr.jumps)), len(tr.jumps), last.mode, last.valuation


def write_csv(h: HybridAutomaton, traces: Sequence[Trace], out: IO[str],
              cfg: IntegratorConfig = IntegratorConfig()) -> int:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["trace", "time", "step", "mode", *h.variables])
    rows = 0
    for i, tr in enumerate(traces):
        for t, k, q, v in trace_rows(h, tr, cfg):
            w.writerow([i, repr(round(t, 12)), k, q, *(repr(float(x)) for x in v)])
            rows += 1
    return rows


# -- bench table ---------------------------------------------------------------

BENCH_COLUMNS = ("model", "strategy", "result", "traces", "solver_calls", "seconds")


def bench_row(report: RunReport) -> dict:
    return {
        "model": report.model,
        "strategy": report.strategy,
        "result": report.verdict,
        "traces": report.traces,
        "solver_calls": report.solver_calls,
        "seconds": round(report.timing.get("total", 0.0), 2),
    }


def bench_table(rows: Iterable[dict]) -> str:
    rows = list(rows)
    cells = [list(BENCH_COLUMNS)] + [[str(r[c]) for c in BENCH_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(BENCH_COLUMNS))]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines) + "\n"


def bench_document(suite: str, seed: int, rows: list[dict]) -> dict:
    return {"schema": BENCH_SCHEMA, "suite": suite, "seed": seed, "rows": rows}
