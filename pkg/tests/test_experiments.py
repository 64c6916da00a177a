import csv

import numpy as np
import pytest

from sgmcmc.cli import main
from sgmcmc.errors import ConfigurationError
from sgmcmc.experiments import grid_moments_2d, parse_config, run_experiment
from sgmcmc.state import make_synthetic_target


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError, match="bogus"):
        parse_config("[experiment]\nbogus = 1\n", "synthetic-1d")
    with pytest.raises(ConfigurationError):
        parse_config("[preset.sgld]\nfriction_typo = 1\n", "synthetic-1d")
    with pytest.raises(ConfigurationError):
        parse_config("[other]\nx = 1\n", "verify")


def test_unknown_preset_rejected_before_running():
    with pytest.raises(ConfigurationError, match="hmc"):
        parse_config("[experiment]\npresets = sgld, hmc\n", "synthetic-1d")


def test_alias_and_overrides():
    cfg = parse_config("[experiment]\npresets = sgrhmc\n[preset.sgrhmc]\nepsilon = 0.3\n", "lda", seed=9, steps=7)
    assert cfg.presets == ("gsgrhmc",) and cfg.seed == 9 and cfg.n_steps == 7
    assert cfg.preset_value("gsgrhmc", "epsilon") == 0.3
    assert cfg.seeds == [9, 10, 11]


def test_config_echo_replays(tmp_path):
    cfg = parse_config("[experiment]\nn_steps = 2000\ntargets = one-peak\npresets = sgld\n", "synthetic-1d")
    run_experiment(cfg, tmp_path)
    again = parse_config((tmp_path / "config.ini").read_text())
    assert again.to_ini() == cfg.to_ini()


SMALL_1D = "[experiment]\nkind = synthetic-1d\nn_steps = 3000\ntrace_every = 10\n"


def test_synthetic_1d_row_count(tmp_path):
    assert main(["synthetic-1d", "--config", str(write(tmp_path, "c.ini", SMALL_1D)), "--out",
                 str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "metrics.csv")
    assert len(rows) == 24
    assert {(r["target"], r["preset"]) for r in rows} == {(t, p) for t in ("one-peak", "two-peaks")
                                                          for p in ("sgld", "sghmc", "naive-sgrhmc", "gsgrhmc")}
    assert all(float(r["kl"]) >= 0 for r in rows)
    assert len(list((tmp_path / "o" / "traces").glob("*_chain*.csv"))) == 24


def test_seed_repetition_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "c.ini", SMALL_1D)
    for out in ("a", "b"):
        assert main(["synthetic-1d", "--config", str(cfg), "--out", str(tmp_path / out), "--seed", "5"]) == 0
    for rel in ["metrics.csv", "config.ini", "traces/two-peaks_gsgrhmc_chain2.csv"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert main(["synthetic-1d", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() != (tmp_path / "c/metrics.csv").read_bytes()


def test_synthetic_2d_paths(tmp_path):
    assert main(["synthetic-2d", "--out", str(tmp_path), "--steps", "3000"]) == 0
    paths = sorted((tmp_path / "paths").glob("*_first10.csv"))
    assert len(paths) == 9
    for p in paths:
        lines = p.read_text().splitlines()
        assert lines[0] == "theta_0,theta_1" and len(lines) == 11
    assert len(read_rows(tmp_path / "metrics.csv")) == 9


def test_grid_truth_of_correlated_target():
    model = make_synthetic_target("correlated-2d")
    mean, sd = grid_moments_2d(model, h=0.02)
    fine, _ = grid_moments_2d(model, h=0.01)
    np.testing.assert_allclose(mean, fine, atol=1e-4)
    assert np.all(sd > 0)


def test_verify_passes_and_reports_refinement(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "verify.csv")
    assert all(r["passed"] == "true" for r in rows)
    assert sum(r["check"] == "naive-flagged" for r in rows) == 4
    ratios = [float(r["ratio"]) for r in read_rows(tmp_path / "refinement.csv") if r["ratio"] != "nan"]
    assert ratios and all(3.5 <= q <= 4.5 for q in ratios)
    assert "h-refinement" in (tmp_path / "report.txt").read_text()


def test_broken_curl_injection_fails_gate(tmp_path, capsys):
    cfg = write(tmp_path, "v.ini", "[experiment]\npresets = sgld\ninject_broken_q = true\n")
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "broken-q" in capsys.readouterr().err
    assert "FAIL" in (tmp_path / "o" / "report.txt").read_text()


def test_config_error_exit_code(tmp_path):
    cfg = write(tmp_path, "bad.ini", "[experiment]\nnope = 1\n")
    assert main(["lda", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert main(["lda", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "o")]) == 1


def test_divergence_exit_code(tmp_path):
    cfg = write(tmp_path, "d.ini", "[experiment]\npresets = sghmc\ntargets = one-peak\nn_steps = 2000\n"
                                   "[preset.sghmc]\nepsilon = 5.0\nfriction = 0.1\n")
    assert main(["synthetic-1d", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_lda_empty_corpus_writes_header_only(tmp_path):
    corpus = write(tmp_path, "empty.txt", "")
    cfg = write(tmp_path, "l.ini", f"[experiment]\ncorpus = {corpus}\npresets = sgld\nn_chains = 1\n")
    assert main(["lda", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "perplexity_sgld_seed1.csv").read_text() == "docs_processed,perplexity\n"


def test_lda_bad_corpus_aborts(tmp_path):
    corpus = write(tmp_path, "bad.txt", "0 1:1\nx 2:2\n")
    cfg = write(tmp_path, "l.ini", f"[experiment]\ncorpus = {corpus}\n")
    assert main(["lda", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert not list((tmp_path / "o").glob("perplexity_*.csv"))


def test_lda_small_run(tmp_path):
    cfg = write(tmp_path, "l.ini", "[experiment]\nn_docs = 60\nheldout_docs = 10\nn_batches = 3\nm = 20\n"
                                   "n_chains = 1\n")
    assert main(["lda", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    for preset in ("sgld", "sghmc", "sgrld", "gsgrhmc"):
        rows = read_rows(tmp_path / "o" / f"perplexity_{preset}_seed1.csv")
        assert [int(r["docs_processed"]) for r in rows] == [20, 40, 60]
        assert all(float(r["perplexity"]) > 0 for r in rows)


def test_empirical_compensation_on_two_dimensional_target(tmp_path):
    text = "[experiment]\nn_steps = 3000\nn_chains = 1\n[preset.sghmc]\ncompensation = empirical\n" \
           "[preset.gsgrhmc]\ncompensation = empirical\n"
    result = run_experiment(parse_config(text, "synthetic-2d"), tmp_path)
    assert not result.diverged and len(result.rows) == 3


def test_two_dimensional_run_needs_samples_after_burn_in():
    with pytest.raises(ConfigurationError, match="burn_in"):
        parse_config("[experiment]\nn_steps = 1500\n", "synthetic-2d")
