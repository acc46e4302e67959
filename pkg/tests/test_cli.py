import json
import os

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from basinlab.cli import main

TREATMENTS = {
    "N2_X9": (2, "1"),
    "N4_X9": (4, "1"),
    "N4_X1": (4, "1/9"),
    "N10_X1": (10, "1/9"),
}


def treatment_config(label, players, cost_x, delta="3/4"):
    return (
        f"[treatment]\nlabel = {label}\nplayers = {players}\ncost_x = {cost_x}\n"
        f"delta = {delta}\npi0 = 11\ndelta_pi = 9\n"
    )


def session_config(label, players, cost_x, subjects, mixture_p="1/2", seed=5,
                   supergames=20, delta="3/4"):
    return treatment_config(label, players, cost_x, delta) + (
        f"\n[session]\nsubjects = {subjects}\nsupergames = {supergames}\n"
        f"mixture_p = {mixture_p}\nseed = {seed}\n"
    )


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.delenv("BASINLAB_OUT", raising=False)
    return tmp_path


class TestBasin:
    def test_design_table_values(self, outdir, capsys):
        expected = {
            "N2_X9": (0.33, 0.33),
            "N4_X9": (0.33, 0.69),
            "N4_X1": (0.04, 0.33),
            "N10_X1": (0.04, 0.69),
        }
        for label, (players, cost) in TREATMENTS.items():
            cfg = outdir / f"{label}.ini"
            cfg.write_text(treatment_config(label, players, cost))
            assert main(["basin", "--config", str(cfg), "--json"]) == 0
            payload = json.loads(capsys.readouterr().out)
            corr, ind = expected[label]
            assert round(payload["p_star_corr"], 2) == corr
            assert round(payload["p_star_ind"], 2) == ind

    def test_knife_edge(self, outdir, capsys):
        cfg = outdir / "edge.ini"
        cfg.write_text(treatment_config("edge", 4, "1", delta="1/2"))
        assert main(["basin", "--config", str(cfg), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["knife_edge"] is True
        assert payload["grim_is_spe"] is True
        assert payload["p_star_corr"] == payload["p_star_ind"] == 1.0

    def test_malformed_config_exits_2_and_names_field(self, outdir, capsys):
        cfg = outdir / "bad.ini"
        cfg.write_text("[treatment]\nplayers = 4\ncost_x = 1\ndelta = 3/4\npi0 = 11\n")
        assert main(["basin", "--config", str(cfg)]) == 2
        assert "delta_pi" in capsys.readouterr().err

    def test_text_output(self, outdir, capsys):
        cfg = outdir / "t.ini"
        cfg.write_text(treatment_config("N2_X9", 2, "1"))
        assert main(["basin", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "p_star_corr" in out and "1/3" in out


class TestDesign:
    def test_solve_cost(self, capsys):
        assert main(["design", "--target", "1/3", "--players", "4", "--delta", "3/4",
                     "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["cost_x"] == "1/9"

    def test_solve_players(self, capsys):
        target = repr(3 ** (-1 / 3))
        assert main(["design", "--target", target, "--cost", "1/9", "--delta", "3/4",
                     "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["players_exact"] == 10

    def test_near_knife_edge_warning(self, capsys):
        assert main(["design", "--target", "0.9999", "--cost", "1", "--delta", "3/4"]) == 0
        assert "knife-edge" in capsys.readouterr().out

    def test_infeasible_exits_3(self, capsys):
        assert main(["design", "--target", "1/4", "--cost", "1", "--delta", "3/4"]) == 3
        assert "infeasible" in capsys.readouterr().err


class TestSimulate:
    def test_outputs_and_determinism(self, outdir, capsys):
        cfg = outdir / "s.ini"
        cfg.write_text(session_config("N4_X9", 4, "1", subjects=20, seed=7))
        out1, out2 = outdir / "run1", outdir / "run2"
        env = {"SOURCE_DATE_EPOCH": "1700000000"}
        os.environ.update(env)
        try:
            assert main(["simulate", "--config", str(cfg), "--out", str(out1)]) == 0
            assert main(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
        finally:
            os.environ.pop("SOURCE_DATE_EPOCH")
        for name in ("rounds.csv", "session.json", "stats.json", "stats.txt", "manifest.json"):
            assert (out1 / name).exists()
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_schedule_from_matches_lengths(self, outdir):
        cfg_a = outdir / "a.ini"
        cfg_a.write_text(session_config("N4_X9", 4, "1", subjects=20, seed=21))
        cfg_b = outdir / "b.ini"
        cfg_b.write_text(session_config("N2_X9", 2, "1", subjects=20, seed=22))
        out_a, out_b = outdir / "a", outdir / "b"
        assert main(["simulate", "--config", str(cfg_a), "--out", str(out_a)]) == 0
        assert main([
            "simulate", "--config", str(cfg_b), "--out", str(out_b),
            "--schedule-from", str(out_a / "session.json"),
        ]) == 0
        lengths_a = json.loads((out_a / "session.json").read_text())["lengths"]
        lengths_b = json.loads((out_b / "session.json").read_text())["lengths"]
        assert lengths_a == lengths_b

    def test_full_cooperation_stats(self, outdir):
        cfg = outdir / "p1.ini"
        cfg.write_text(session_config("N4_X9", 4, "1", subjects=12, mixture_p="1", seed=3))
        out = outdir / "p1"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        stats = json.loads((out / "stats.json").read_text())
        assert stats["initial_coop"] == 1.0
        assert stats["ongoing_coop"] == 1.0
        assert stats["initial_success"] == 1.0
        assert stats["ongoing_success"] == 1.0

    def test_missing_config_exits_5(self, outdir, capsys):
        assert main(["simulate", "--config", str(outdir / "nope.ini"),
                     "--out", str(outdir / "x")]) == 5

    def test_bad_mode_exits_2(self, outdir, capsys):
        cfg = outdir / "m.ini"
        cfg.write_text(
            treatment_config("t", 4, "1")
            + "\n[session]\nsubjects = 8\nseed = 1\nmode = wander\n"
        )
        assert main(["simulate", "--config", str(cfg), "--out", str(outdir / "y")]) == 2


def synthetic_observations_csv(rng, beta=(1.0, -3.0, -0.5), n=4000, clusters=20):
    rows = ["cooperated,p_star,cluster_id,weight"]
    for _ in range(n):
        p = max(rng.uniform(), 1e-9)
        eta = beta[0] + beta[1] * min(p, 0.5) + beta[2] * max(p - 0.5, 0.0)
        y = int(rng.random() < ndtr(eta))
        rows.append(f"{y},{p!r},c{rng.integers(0, clusters)},1.0")
    return "\n".join(rows) + "\n"


class TestEstimationCommands:
    def test_fit_predict_pipeline(self, outdir):
        data = outdir / "obs.csv"
        data.write_text(synthetic_observations_csv(np.random.default_rng(31)))
        fit_dir = outdir / "fit"
        assert main(["fit", "--data", str(data), "--out", str(fit_dir)]) == 0
        payload = json.loads((fit_dir / "fit.json").read_text())
        assert payload["converged"] is True
        assert len(payload["beta"]) == 3

        pred_dir = outdir / "pred"
        assert main([
            "predict", "--fit", str(fit_dir / "fit.json"), "--out", str(pred_dir),
            "--at", "0.04,0.33,0.69",
        ]) == 0
        lines = (pred_dir / "curve.csv").read_text().splitlines()
        assert lines[0] == "p_star,rate,se,lo95,hi95"
        rates = [float(line.split(",")[1]) for line in lines[1:]]
        assert rates[0] > rates[1] > rates[2]  # decreasing in basin size
        svg = (pred_dir / "curve.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_fit_separation_exits_4(self, outdir, capsys):
        data = outdir / "sep.csv"
        rows = ["cooperated,p_star,cluster_id"]
        rows += [f"1,0.{i + 1},c{i % 4}" for i in range(8)]
        data.write_text("\n".join(rows) + "\n")
        assert main(["fit", "--data", str(data), "--out", str(outdir / "f")]) == 4
        assert "estimation error" in capsys.readouterr().err

    def test_fit_schema_error_names_row(self, outdir, capsys):
        data = outdir / "bad.csv"
        data.write_text("cooperated,p_star,cluster_id\n1,0.5,a\nmaybe,0.4,b\n")
        assert main(["fit", "--data", str(data), "--out", str(outdir / "g")]) == 2
        err = capsys.readouterr().err
        assert "row 3" in err and "cooperated" in err

    def test_decompose(self, outdir):
        rng = np.random.default_rng(33)
        rows = ["cooperated,low_cost,high_players,cluster_id"]
        b0 = ndtri(0.46)
        b_ind = ndtri(0.06) - b0
        b_corr = ndtri(0.82) - b0
        for low in (0, 1):
            for high in (0, 1):
                rate = ndtr(b0 + b_ind * high + b_corr * low)
                for i in range(800):
                    rows.append(f"{int(rng.random() < rate)},{low},{high},s{low}{high}_{i % 40}")
        data = outdir / "cells.csv"
        data.write_text("\n".join(rows) + "\n")
        out = outdir / "dec"
        assert main(["decompose", "--data", str(data), "--out", str(out)]) == 0
        table = (out / "decomposition.txt").read_text()
        assert "Ind. basin increase" in table and "Corr. basin decrease" in table
        payload = json.loads((out / "decomposition.json").read_text())
        assert abs(payload["baseline_rate"] - 0.46) < 0.1

    def test_decompose_missing_cell_exits_4(self, outdir):
        data = outdir / "cells.csv"
        data.write_text(
            "cooperated,low_cost,high_players,cluster_id\n"
            "1,0,0,a\n0,0,1,b\n1,1,0,c\n"
        )
        assert main(["decompose", "--data", str(data), "--out", str(outdir / "d")]) == 4


class TestReport:
    def test_bundle(self, outdir):
        cfg = outdir / "r.ini"
        cfg.write_text(session_config("N4_X1", 4, "1/9", subjects=20, seed=44))
        out = outdir / "rep"
        assert main(["report", "--config", str(cfg), "--out", str(out)]) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["basin"]["p_star_corr_exact"] == "1/27"
        assert "initial_coop" in payload["stats"]
        text = (out / "report.txt").read_text()
        assert "Basin measures" in text and "Initial coop." in text


class TestOutputDirEnv:
    def test_env_var_default(self, tmp_path, monkeypatch, capsys):
        target = tmp_path / "envout"
        monkeypatch.setenv("BASINLAB_OUT", str(target))
        cfg = tmp_path / "cfg.ini"
        cfg.write_text(session_config("N4_X9", 4, "1", subjects=8, seed=2, supergames=3))
        assert main(["simulate", "--config", str(cfg), "--window", "1:3"]) == 0
        assert (target / "rounds.csv").exists()
