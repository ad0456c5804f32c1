import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from phaselab.cli import main, resolve_seed
from phaselab.export import prob_columns, read_csv

HALF_PI = math.pi / 2


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_stats_single_bs_rows(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "single_bs", "L": 2})
    assert run("stats", "--config", cfg, "--out", tmp_path / "o") == 0
    rows = read_csv(tmp_path / "o" / "partitions.csv")
    assert [(r["n1"], r["n2"]) for r in rows] == [("2", "0"), ("1", "1"), ("0", "2")]
    assert [float(r["prob"]) for r in rows] == pytest.approx([3 / 8, 1 / 4, 3 / 8], abs=1e-15)
    best = read_csv(tmp_path / "o" / "comaximal.csv")
    assert {(r["n1"], r["n2"]) for r in best} == {("2", "0"), ("0", "2")}


def test_stats_round_trip_normalization(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "two_bs", "xi": 0.9, "L": 12})
    assert run("stats", "--config", cfg, "--out", tmp_path / "o") == 0
    rows = read_csv(tmp_path / "o" / "partitions.csv")
    probs = np.array([float(r["prob"]) for r in rows])
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-9)
    logs = np.array([float(r["log10_prob"]) for r in rows])
    assert np.allclose(10.0**logs, probs, rtol=1e-12)
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["n_partitions"] == len(rows) == math.comb(15, 3)


def test_stats_ring_chain(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "chain", "L": 30,
                               "chain": {"K": 3, "topology": "circular", "xi": [0, 0, HALF_PI]}})
    assert run("stats", "--config", cfg, "--out", tmp_path / "o") == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert [[5, 5], [10, 0], [10, 0]] in summary["comaximal"]
    assert summary["outside_symmetry_orbit"] == []
    best = read_csv(tmp_path / "o" / "comaximal.csv")
    assert len(best) == 3 * len(summary["comaximal"])
    assert summary["total_prob"] == pytest.approx(1.0, abs=1e-9)


def test_figure_fig2(tmp_path):
    assert run("figure", "fig2", "--out", tmp_path / "o") == 0
    argmax = read_csv(tmp_path / "o" / "fig2_argmax.csv")
    got = {tuple(int(r[k]) for k in ("n1", "n2", "n3", "n4")) for r in argmax}
    assert got == {(20, 0, 10, 10), (0, 20, 10, 10), (10, 10, 20, 0), (10, 10, 0, 20)}
    surface = read_csv(tmp_path / "o" / "fig2.csv")
    assert len(surface) == 21 * 21
    assert list(surface[0]) == ["n1", "n3", "prob", "log10_prob"]


def test_figure_fig4_and_fig5_peaks(tmp_path):
    assert run("figure", "fig4", "--out", tmp_path / "f4") == 0
    peaks = [float(r["peak_phi"]) for r in read_csv(tmp_path / "f4" / "peaks.csv")]
    assert len(peaks) == 10
    assert all(min(abs(p - HALF_PI), abs(p - 3 * HALF_PI)) < 0.15 for p in peaks)
    assert run("figure", "fig5", "--out", tmp_path / "f5") == 0
    peaks5 = [float(r["peak_phi"]) for r in read_csv(tmp_path / "f5" / "peaks.csv")]
    assert np.std(peaks5, ddof=1) > 0


def test_trajectory_files_and_byte_identical_rerun(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "two_bs", "source": {"R": 2, "Gamma": 1, "T": 5}, "n_traj": 6})
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "a", "--seed", 5) == 0
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "b", "--seed", 5, "--jobs", 2) == 0
    for name in ("events.csv", "marginals.csv", "peaks.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    raw = (tmp_path / "a" / "events.csv").read_bytes()
    assert b"\r" not in raw and raw.startswith(b"traj_id,t,channel\n")
    marg = read_csv(tmp_path / "a" / "marginals.csv")
    for tid in {r["traj_id"] for r in marg}:
        dens = [float(r["density"]) for r in marg if r["traj_id"] == tid]
        assert math.fsum(dens) * 2 * math.pi / len(dens) == pytest.approx(1.0, abs=1e-9)


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("PHASELAB_SEED", raising=False)
    assert resolve_seed(None, None) == 0
    assert resolve_seed(None, 4) == 4
    monkeypatch.setenv("PHASELAB_SEED", "9")
    assert resolve_seed(None, 4) == 9
    assert resolve_seed(3, 4) == 3
    cfg = write_cfg(tmp_path, {"experiment": "two_bs", "source": {"R": 1.5, "T": 3}, "n_traj": 4})
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "env") == 0
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "flag", "--seed", 9) == 0
    assert (tmp_path / "env" / "events.csv").read_bytes() == (tmp_path / "flag" / "events.csv").read_bytes()
    monkeypatch.setenv("PHASELAB_SEED", "nope")
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "bad") == 2


def test_chain_trajectory_outputs(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "chain", "source": {"R": 2, "T": 3}, "n_traj": 3, "grid": 32,
                               "chain": {"K": 3, "topology": "circular", "xi": [0, 0, HALF_PI]}})
    assert run("trajectory", "--config", cfg, "--out", tmp_path / "o") == 0
    marg = read_csv(tmp_path / "o" / "marginals.csv")
    assert list(marg[0]) == ["traj_id", "bond", "phi", "density"]
    assert len(marg) == 3 * 3 * 32


@pytest.mark.parametrize(
    "doc",
    [
        {"experiment": "two_bs", "L": 3, "unknown": 1},
        {"experiment": "two_bs", "source": {"R": -1}},
        {"experiment": "continuous", "L": 3},
        {"experiment": "chain", "L": 3},
        {"experiment": "continuous", "coupling": {"delta": 1, "epsilon": 0.5}, "n_traj": 1},
    ],
)
def test_config_errors_exit_2(tmp_path, doc):
    cfg = write_cfg(tmp_path, doc)
    cmd = "stats" if "L" in doc else "trajectory"
    assert run(cmd, "--config", cfg, "--out", tmp_path / "o") == 2


def test_missing_or_broken_config_exit_2(tmp_path):
    assert run("stats", "--out", tmp_path) == 2
    assert run("stats", "--config", tmp_path / "absent.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("stats", "--config", bad) == 2
    assert run("figure", "fig9") == 2


def test_numerical_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "chain", "L": 40,
                               "chain": {"K": 6, "topology": "circular", "xi": [0, 0, 0, 0, 0, 0]}})
    assert run("stats", "--config", cfg, "--out", tmp_path / "o") == 3


def test_oracle_quick_mode_fast_and_passing(tmp_path):
    cfg = write_cfg(tmp_path, {"oracle": {"quick": True}})
    start = time.perf_counter()
    assert run("oracle", "--config", cfg, "--out", tmp_path / "o") == 0
    assert time.perf_counter() - start < 5.0
    report = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert report["passed"] and report["max_deviation"] < 1e-8


def test_oracle_low_cutoff_refused(tmp_path):
    cfg = write_cfg(tmp_path, {"oracle": {"quick": True, "N_max": 4}})
    assert run("oracle", "--config", cfg, "--out", tmp_path / "o") == 1
    report = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert not report["passed"] and "insufficient N_max" in report["error"]


def test_prob_columns_underflow():
    assert prob_columns(-800.0)[0] == "0"
    assert float(prob_columns(-800.0)[1]) == pytest.approx(-800 / math.log(10))
    assert prob_columns(-math.inf) == ("0", "-inf")


def test_console_script(tmp_path):
    cfg = write_cfg(tmp_path, {"experiment": "single_bs", "L": 1})
    proc = subprocess.run([sys.executable, "-m", "phaselab.cli", "stats", "--config", str(cfg), "--out",
                           str(tmp_path / "o")], capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "partitions.csv").exists()
