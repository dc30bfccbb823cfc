import json
import subprocess
import sys

import pytest

from sector_congest.cli import main
from sector_congest.synth import ScenarioSpec


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(out):
    lines = [l for l in out.splitlines() if l]
    header = lines[0].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[1:]]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    spec = ScenarioSpec(sectors=["A1", "B2", "C3"], flights_per_day=60, n_days=8, seed=3,
                        weather_sectors=["A1"], anomaly_rates={1: 0.1, 2: 0.05, 3: 0.1, 4: 0.1})
    (base / "spec.json").write_text(json.dumps(spec.to_dict()))
    return base, spec


def test_end_to_end(workspace, capsys, monkeypatch):
    base, spec = workspace
    root = base / "root"
    monkeypatch.setenv("SECTOR_CONGEST_ROOT", str(root))

    code, out, _ = run(capsys, "gen", "--spec", base / "spec.json", "--seed", 4, "--out", base / "scenario")
    assert code == 0
    days = [r["day"] for r in table(out)]
    assert days[0] == "2018-03-05" and len(days) >= 8

    for i, day in enumerate(days):
        extra = ["--weather", base / "scenario" / "weather.jsonl"] if i == 0 else []
        code, out, _ = run(capsys, "ingest", "--day", day, "--input", base / "scenario" / "messages" / f"{day}.msgs",
                           "--no-fsync", *extra)
        assert code == 0
    assert (root / "weather" / "observations.jsonl").exists()

    for day in days[:8]:
        code, out, _ = run(capsys, "prepare", "--day", day)
        assert code == 0, out

    code, out, _ = run(capsys, "query", "--sector", "A1", "--minute", "2018-03-05T12:00:00Z")
    assert code == 0 and table(out)[0]["sector"] == "A1"

    code, out, _ = run(capsys, "filter", "--sector", "A1", "--weekday", "Mon", "--plot", base / "fig" / "filter")
    assert code == 0
    assert (root / "reports" / "filter-A1-Mon.tsv").exists()
    assert (base / "fig" / "filter-scores.png").exists()
    assert (base / "fig" / "filter-curves.csv").exists()

    code, out, _ = run(capsys, "train", "--from", "2018-03-05", "--to", "2018-03-12", "--learners", 10,
                       "--shrinkage", 0.3, "--with-uncertainty")
    assert code == 0
    rows = table(out.split("total\t")[0])
    assert {r["sector"] for r in rows} == {"A1", "B2", "C3"}
    assert "3 models" in out

    code, out, err = run(capsys, "predict", "--sector", "A1", "--start", "2018-03-13T12:00:00Z",
                         "--end", "2018-03-13T13:00:00Z", "--step", 15, "--uncertainty", 2)
    assert code == 0
    assert [r["time"] for r in table(out)] == [f"2018-03-13T12:{m:02d}:00Z" for m in (0, 15, 30, 45)]
    code, out, _ = run(capsys, "predict", "--sector", "A1", "--start", "2018-03-13T12:00:00Z",
                       "--end", "2018-03-13T12:05:00Z", "--json")
    assert len(json.loads(out)["buckets"]) == 5

    code, out, _ = run(capsys, "validate", "--k", 3, "--seed", 1, "--learners", 5, "--compare-uncertainty")
    assert code == 0
    assert (root / "reports" / "validation.json").exists()
    assert len(table(out)) == 3

    for kind, extra in [
        ("heatmap", ["--day", "2018-03-06"]),
        ("convergence", ["--sector", "A1"]),
        ("convergence", ["--model-id", "B2@v0001"]),
        ("scoreScatter", []),
        ("sectorCurve", ["--sector", "A1", "--day", "2018-03-06"]),
        ("rejection", ["--sector", "B2", "--weekday", "Mon"]),
        ("acceptedCurves", ["--sector", "B2", "--weekday", "mon"]),
    ]:
        code, out, err = run(capsys, "plot", "--kind", kind, "--out", base / "fig" / kind, *extra)
        assert code == 0, err
        assert (base / "fig" / f"{kind}.png").stat().st_size > 0
        assert (base / "fig" / f"{kind}.csv").exists()


def test_errors_exit_nonzero(workspace, capsys, tmp_path):
    code, _, err = run(capsys, "--root", tmp_path, "predict", "--sector", "X", "--start", "2018-03-13T12:00:00Z",
                       "--end", "2018-03-13T13:00:00Z")
    assert code == 1 and "NotFound" in err
    code, _, err = run(capsys, "--root", tmp_path, "plot", "--kind", "heatmap", "--out", tmp_path / "h")
    assert code == 1
    code, _, err = run(capsys, "--root", tmp_path, "ingest", "--day", "2018-03-05", "--input", tmp_path / "none")
    assert code == 1
    with pytest.raises(SystemExit):
        main(["filter", "--sector", "A", "--weekday", "Funday"])


def test_ingest_reports_rejections(capsys, tmp_path):
    src = tmp_path / "in.msgs"
    src.write_text('{"bad": 1}\nnot json\n')
    code, out, err = run(capsys, "--root", tmp_path / "r", "ingest", "--day", "2018-03-05", "--input", src, "--no-fsync")
    assert code == 0
    assert err.count("rejected\t") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sector_congest", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("ingest", "prepare", "filter", "train", "validate", "predict", "serve", "gen", "plot"):
        assert name in proc.stdout
