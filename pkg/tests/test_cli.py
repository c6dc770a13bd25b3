import csv
import io
import json
from collections import Counter

import pytest

from hyc.automaton import visits_negative
from hyc.cli import main
from hyc.modelfile import load_bundled
from hyc.report import SCHEMA, ReportError, dumps, loads, read_report, without_timing


def write_model(tmp_path, **changes):
    doc = {
        "name": "line",
        "variables": ["x"],
        "initial_mode": "q",
        "initial": {"x": 0},
        "modes": {"q": ["1"], "p": ["0"], "bad": ["0"]},
        "transitions": [{"source": "q", "guard": "x > 0.5", "target": "p"}],
        "negative": ["bad"],
        "steps": 2,
    }
    doc.update(changes)
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- check: exit codes and reports -----------------------------------------------


def test_oscillator_counterexample_exit(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, text, _ = run(capsys, "check", "oscillator", "--strategy", "local", "--seed", "7", "--out", str(out))
    assert code == 2
    assert "counterexample" in text
    doc = json.loads(out.read_text())
    assert doc["schema"] == SCHEMA and doc["seed"] == 7
    assert "qe" in doc["counterexample"]["modes"]
    report = read_report(out)
    assert visits_negative(load_bundled("oscillator"), report.counterexample)


def test_unreachable_negative_exit_zero(tmp_path, capsys):
    code, text, _ = run(capsys, "check", write_model(tmp_path))
    assert code == 0 and "pass" in text


def test_malformed_guard_is_located(tmp_path, capsys):
    path = write_model(tmp_path, transitions=[{"source": "q", "guard": "x > > 0.5", "target": "p"}])
    code, _, err = run(capsys, "check", path)
    assert code == 1
    assert "transitions[0].guard" in err and "column 5" in err


@pytest.mark.parametrize(
    "changes",
    [
        {"colour": "blue"},
        {"modes": {"q": ["1", "2"], "p": ["0"], "bad": ["0"]}},
        {"initial_mode": "nowhere"},
        {"negative": ["ghost"]},
        {"transitions": [{"source": "q", "guard": "y > 1", "target": "p"}]},
    ],
)
def test_model_errors_exit_one(tmp_path, capsys, changes):
    code, _, err = run(capsys, "check", write_model(tmp_path, **changes))
    assert code == 1 and err.startswith("hyc: model error")


def test_usage_errors_exit_one(tmp_path, capsys):
    path = write_model(tmp_path)
    assert run(capsys, "check", str(tmp_path / "missing.json"))[0] == 1
    assert run(capsys, "check", path, "--strategy", "greedy")[0] == 1
    assert run(capsys, "check", path, "--ode-step", "0.3")[0] == 1
    assert run(capsys, "check", path, "--points", "0")[0] == 1
    assert run(capsys, "check", path, "--seed", "-4")[0] == 1
    assert run(capsys, "check")[0] == 1
    assert run(capsys, "bench", "paper-large")[0] == 1
    assert run(capsys, "bench", "paper-small", "--models", "toaster")[0] == 1


def test_bad_seed_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HYC_SEED", "abc")
    assert run(capsys, "check", write_model(tmp_path))[0] == 1


def test_inconclusive_exits(capsys):
    # confidence after 10 clean traces is far below the target
    assert run(capsys, "check", "bouncing_ball", "--samples", "10", "--strategy", "random")[0] == 3
    assert run(capsys, "check", "bouncing_ball", "--timeout", "1e-9")[0] == 3


def test_pass_exit(capsys):
    code, text, _ = run(capsys, "check", "bouncing_ball", "--strategy", "random", "--seed", "1")
    assert code == 0 and "traces 458" in text


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "check", "sewerage", "--points", "8", "--seed", "3", "--out", str(a))
    monkeypatch.setenv("HYC_SEED", "3")
    run(capsys, "check", "sewerage", "--points", "8", "--out", str(b))
    assert without_timing(json.loads(a.read_text())) == without_timing(json.loads(b.read_text()))


def test_report_round_trip(tmp_path, capsys):
    out = tmp_path / "r.json"
    run(capsys, "check", "sewerage", "--points", "8", "--seed", "0", "--out", str(out))
    report = read_report(out)
    assert dumps(report) == out.read_text()
    assert loads(dumps(report)) == report
    with pytest.raises(ReportError):
        loads(json.dumps({"schema": "something-else"}))


# -- simulate ------------------------------------------------------------------


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_simulate_row_count(capsys):
    code, text, _ = run(capsys, "simulate", "oscillator", "--samples", "1", "--seed", "1")
    rows = read_csv(text)
    assert code == 0
    assert len(rows) == 1 + 5 * 1000
    assert float(rows[-1]["time"]) == 5.0
    code, text, _ = run(capsys, "simulate", "oscillator", "--seed", "1", "--ode-step", "0.01", "--steps", "3")
    assert len(read_csv(text)) == 1 + 300


def test_simulate_sewerage_histogram(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(capsys, "simulate", "sewerage", "--samples", "100", "--seed", "0", "--out", str(out))[0] == 0
    rows = read_csv(out.read_text())
    moves = Counter()
    for prev, cur in zip(rows, rows[1:]):
        if prev["trace"] == cur["trace"] and prev["mode"] != cur["mode"]:
            moves[prev["mode"], cur["mode"]] += 1
    assert moves["normal", "draining"] > 0
    assert moves["normal", "loading"] > 0
    assert len({r["trace"] for r in rows}) == 100


def test_simulate_constant_flow(tmp_path, capsys):
    path = write_model(
        tmp_path,
        modes={"q": ["0"], "p": ["0"], "bad": ["0"]},
        initial={"x": 1.25},
        transitions=[{"source": "q", "guard": "x > 5", "target": "p"}],
    )
    code, text, _ = run(capsys, "simulate", path, "--ode-step", "0.05")
    rows = read_csv(text)
    assert code == 0 and len(rows) == 1 + 2 * 20
    assert {r["x"] for r in rows} == {"1.25"}
    assert {r["mode"] for r in rows} == {"q"}


def test_simulate_rows_follow_the_jump(tmp_path, capsys):
    # x' = 1 until the jump into p at some t > 0.5, then x stays at its jump value
    code, text, _ = run(capsys, "simulate", write_model(tmp_path), "--seed", "4", "--ode-step", "0.01")
    rows = read_csv(text)
    before = [r for r in rows if r["mode"] == "q"]
    after = [r for r in rows if r["mode"] == "p"]
    assert code == 0 and before and after
    assert all(float(r["x"]) == pytest.approx(float(r["time"]), abs=1e-12) for r in before)
    (x_jump,) = {float(r["x"]) for r in after}
    assert 0.5 < x_jump < 1.0
    assert float(before[-1]["time"]) <= x_jump < float(after[0]["time"])


# -- bench ---------------------------------------------------------------------


def test_bench_is_deterministic(tmp_path, capsys):
    docs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        code, text, _ = run(capsys, "bench", "paper-small", "--models", "oscillator", "sewerage", "--out", str(out))
        assert code == 0
        assert text.splitlines()[0].split() == ["model", "strategy", "result", "traces", "solver_calls", "seconds"]
        docs.append(json.loads(out.read_text()))
    strip = lambda d: [{k: v for k, v in r.items() if k != "seconds"} for r in d["rows"]]  # noqa: E731
    assert strip(docs[0]) == strip(docs[1])
    assert len(docs[0]["rows"]) == 8
    by = {(r["model"], r["strategy"]): r for r in docs[0]["rows"]}
    assert by["oscillator", "local"]["result"] == "counterexample"
    assert by["sewerage", "local"]["result"] == "counterexample"
    assert by["sewerage", "random"]["result"] == "pass"


def test_bench_agrees_without_rare_events(capsys):
    code, text, _ = run(capsys, "bench", "paper-small", "--models", "navigation_3x3")
    results = {line.split()[2] for line in text.splitlines()[2:]}
    assert code == 0 and results == {"counterexample"}
