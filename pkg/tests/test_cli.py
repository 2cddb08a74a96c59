import filecmp
import json
import os

import numpy as np
import pytest

from webworkload.cli import main
from webworkload.pipeline import BUNDLE_FILES, PipelineConfig, StageFailure, load_config, \
    run_characterize, DatasetSpec


def test_list_patterns(capsys):
    assert main(["generate", "--list-patterns"]) == 0
    out = capsys.readouterr().out
    assert all(n in out for n in ("D1", "D2", "D3", "W1", "W2", "W3"))


def test_generate_week(tmp_path):
    out = tmp_path / "s.csv"
    ev = tmp_path / "ev.txt"
    assert main(["generate", "--pattern", "D1", "--mean", "1000", "--std", "300", "--days", "7",
                 "--seed", "42", "--out", str(out), "--events", str(ev)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "interval_start,rate" and len(lines) == 169
    assert float(lines[1].split(",")[1]) == pytest.approx(781.6)
    assert len(ev.read_text().split()) > 100000


def test_generate_compose_and_clf(tmp_path):
    clf = tmp_path / "t.log"
    assert main(["generate", "--weekly", "W1", "--daily", "D2", "--mean", "50", "--std", "10",
                 "--days", "1", "--out", str(tmp_path / "s.json"), "--clf", str(clf)]) == 0
    assert json.loads((tmp_path / "s.json").read_text())["metadata"]["patterns"] == ["W1", "D2"]
    assert clf.read_text().count("\n") > 0


def test_generate_unknown_pattern(capsys):
    assert main(["generate", "--pattern", "D9"]) == 1
    assert "D9" in capsys.readouterr().err


def test_replay_dry_run(tmp_path, capsys):
    s = tmp_path / "s.csv"
    main(["generate", "--pattern", "D2", "--mean", "3600", "--std", "100", "--days", "1",
          "--out", str(s)])
    rep = tmp_path / "r.json"
    assert main(["replay", "--schedule", str(s), "--dry-run", "--time-scale", "3600",
                 "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["dry_run"] and d["totals"]["attempted"] > 0
    assert main(["replay", "--schedule", str(s)]) == 2


def test_fit_values(capsys):
    vals = ",".join(str(2 * t * t - 3 * t + 1) for t in range(1, 8))
    assert main(["fit", "--values", vals, "--degree", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    coefs = out["coefficients"] if isinstance(out, dict) else out[0]["coefficients"]
    assert np.allclose(coefs, [2, -3, 1], atol=1e-9)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    from conftest import NASA
    out = tmp_path_factory.mktemp("run") / "bundle"
    assert main(["characterize", "--dataset", f"nasa={NASA}", "--output", str(out)]) == 0
    return out


def test_characterize_bundle_complete(bundle):
    for f in BUNDLE_FILES:
        assert (bundle / f).exists(), f
    man = json.loads((bundle / "manifest.json").read_text())
    assert man["read_stats"]["nasa"]["malformed"] == 2
    assert man["stages"]["cluster"]["status"] == "ok"
    assert len(list((bundle / "figures").glob("*.svg"))) >= 1


def test_characterize_rerun_identical(bundle, tmp_path):
    from conftest import NASA
    again = tmp_path / "again"
    assert main(["characterize", "--dataset", f"nasa={NASA}", "--output", str(again)]) == 0
    for f in BUNDLE_FILES:
        if f == "manifest.json":
            continue
        assert filecmp.cmp(bundle / f, again / f, shallow=False), f
    for svg in (bundle / "figures").glob("*.svg"):
        assert filecmp.cmp(svg, again / "figures" / svg.name, shallow=False), svg.name


def test_characterize_from_manifest(bundle, tmp_path):
    out = tmp_path / "m"
    assert main(["characterize", "--manifest", str(bundle / "manifest.json"),
                 "--output", str(out)]) == 0
    assert filecmp.cmp(bundle / "clusters.json", out / "clusters.json", shallow=False)


def test_report_command(bundle, capsys):
    assert main(["report", str(bundle)]) == 0
    assert f"{len(BUNDLE_FILES)}/{len(BUNDLE_FILES)}" in capsys.readouterr().out


def test_failed_run_quarantined(tmp_path):
    bad = tmp_path / "bad.log"
    bad.write_text("garbage\n")
    cfg = PipelineConfig([DatasetSpec("bad", [str(bad)])], output=str(tmp_path / "o"),
                         strict=True)
    with pytest.raises(StageFailure) as ei:
        run_characterize(cfg)
    assert ei.value.stage == "ingest"
    man = json.loads((tmp_path / "o" / "failed" / "manifest.json").read_text())
    assert man["stages"]["ingest"]["status"] == "failed"


def test_config_file_precedence(tmp_path):
    from conftest import NASA
    ini = tmp_path / "c.ini"
    ini.write_text(f"[pipeline]\nalpha = 0.5\nk_max = 4\noutput = {tmp_path / 'o'}\n"
                   f"[dataset:nasa]\npath = {NASA}\n")
    cfg = load_config(ini)
    assert cfg.alpha == 0.5 and cfg.k_max == 4 and cfg.datasets[0].paths == [NASA]
    assert cfg.k_min == 2
    out = tmp_path / "flag"
    assert main(["characterize", "--config", str(ini), "--k-max", "3",
                 "--output", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["k_max"] == 3 and man["config"]["alpha"] == 0.5


def test_ingest_and_aggregate_commands(tmp_path, capsys):
    from conftest import NASA
    assert main(["ingest", f"nasa={NASA}", "--out", str(tmp_path)]) == 0
    series = list(tmp_path.glob("*.csv"))
    assert series
    assert main(["aggregate", *map(str, series), "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "matrix_daily_nasa.csv")
    assert main(["profile", str(tmp_path / "matrix_daily_nasa.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 0
