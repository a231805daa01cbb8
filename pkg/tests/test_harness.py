import csv
import math
import os

import numpy as np
import pytest

from unisgd import harness as H
from unisgd.cli import cli
from unisgd.problems import InvalidInput

LSQ = "lsq:d=6,m=1,n=16,seed=2"
FED = "lsq:d=6,m=3,n=8,het=0.5,seed=4"


# -- configuration --------------------------------------------------------------

def test_config_text_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nmethod = saga:2\nepsilon = 1e-3  # trailing\nseed=5\n")
    cfg = H.load_config(str(p), ["seed=7", "stepsize=manual:0.01"])
    assert (cfg.method, cfg.epsilon, cfg.seed, cfg.stepsize) == ("saga:2", 1e-3, 7, "manual:0.01")
    assert H.load_config(None, [l for l in H.dump_config(cfg).splitlines()
                                if "=" in l and "output" not in l]) == cfg


@pytest.mark.parametrize("bad", [["bogus=1"], ["stepsize=fast"], ["epsilon=0"], ["target=loss"],
                                 ["seed=-1"], ["method"], ["stepsize=manual:-1"]])
def test_config_rejects(bad):
    with pytest.raises(InvalidInput):
        H.load_config(None, bad)


def test_missing_config_file_names_path(tmp_path):
    missing = str(tmp_path / "nope.cfg")
    with pytest.raises(OSError, match="nope.cfg"):
        H.load_config(missing)


def test_compressor_without_framework_rejected():
    with pytest.raises(InvalidInput):
        H.prepare(H.RunConfig(compressor="randk:2"))


# -- runs -------------------------------------------------------------------------

def test_gd_quadratic_monotone():
    tr = H.run(H.RunConfig(problem=LSQ, epsilon=1e-6, x0="random:3"), write=False)
    gaps = [r.f_gap for r in tr]
    assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
    assert tr.stopped and tr[-1].grad_norm <= 1e-6
    assert tr.eta == pytest.approx(1 / H.prepare(H.RunConfig(problem=LSQ)).L)


def test_sinpl_gd_within_bound():
    cfg = H.RunConfig(problem="sinpl", x0="3", stepsize="manual:0.125", epsilon=1e-6, target="gap",
                      max_iters=10 ** 5)
    tr = H.run(cfg, write=False)
    d0 = tr.initial_f_gap
    assert tr.stopped and tr.stop_k <= 256 * math.log(2 * d0 / 1e-6)


def test_early_stop_is_first_hit():
    tr = H.run(H.RunConfig(problem=LSQ, epsilon=1e-3), write=False)
    assert [r.k for r in tr] == list(range(tr.stop_k + 1))
    assert tr[-1].grad_norm <= 1e-3
    assert all(r.grad_norm > 1e-3 for r in tr[:-1])


def test_record_every_keeps_last_row():
    tr = H.run(H.RunConfig(problem=LSQ, epsilon=1e-3, record_every=7), write=False)
    ks = [r.k for r in tr]
    assert all(k % 7 == 0 for k in ks[:-1]) and ks[-1] == tr.stop_k


@pytest.mark.parametrize("method", ["lsvrg:1,1/8", "saga:1"])
def test_vr_sigma_vanishes(method):
    tr = H.run(H.RunConfig(problem=LSQ, method=method, stepsize="manual:0.02", epsilon=1e-9,
                           max_iters=20000), write=False)
    s = [r.sigma_sq for r in tr]
    assert max(s) > 0 and s[-1] < 1e-6 * max(s)


def test_divergence_guard():
    with pytest.raises(H.DivergenceError):
        H.run(H.RunConfig(problem=LSQ, stepsize="manual:10", max_iters=500), write=False)


def test_manual_infeasible_certificate():
    with pytest.raises(InvalidInput, match="infeasible"):
        H.run(H.RunConfig(problem=LSQ, method="lsvrg:1,1/16", stepsize="manual:10", max_iters=2),
              write=False)


def test_diana_run_deterministic_and_counts_floats():
    cfg = H.RunConfig(problem=FED, method="gd", framework="diana", compressor="randk:2",
                      epsilon=1e-2, seed=3)
    a, b = H.run(cfg, write=False), H.run(cfg, write=False)
    assert H.csv_text(a) == H.csv_text(b)
    assert a[1].floats_sent == 3 * 2
    assert H.csv_text(H.run(cfg.replace(seed=4), write=False)) != H.csv_text(a)


def test_csv_roundtrip(tmp_path):
    out = str(tmp_path / "t.csv")
    tr = H.run(H.RunConfig(problem=LSQ, epsilon=1e-2, output=out))
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == H.CSV_HEADER
    assert len(rows) == len(tr) + 1
    back = H.read_csv(out)
    assert back[-1].f_gap == tr[-1].f_gap and back[-1].k == tr[-1].k


def test_unwritable_output_reports_path(tmp_path):
    bad = str(tmp_path / "missing_dir" / "t.csv")
    with pytest.raises(OSError, match="missing_dir"):
        H.run(H.RunConfig(problem=LSQ, output=bad))


# -- bound verification -------------------------------------------------------------

def test_verify_bound_pass_and_negative_control():
    cfg = H.RunConfig(problem=LSQ, method="lsvrg:1,1/16", epsilon=1e-2)
    rep = H.verify_bound(cfg)
    assert rep.passed and rep.k_empirical <= rep.K_theory
    neg = H.verify_bound(cfg, K_theory=max(rep.k_empirical - 1, 0) + 0.5)
    assert not neg.passed


def test_verify_bound_needs_auto_mode():
    with pytest.raises(InvalidInput):
        H.verify_bound(H.RunConfig(stepsize="manual:0.1"))


def test_verify_estimator_passes():
    rep = H.verify_estimator(H.RunConfig(problem=LSQ, method="saga:2"), points=4, samples=20000)
    assert rep.passed


def test_bound_table_rows():
    rows = dict(H.bound_table(H.RunConfig(problem=LSQ)))
    assert "closed form gd" in rows["K_closed_form"]
    assert "K_pl_constant" in rows and "K_closed_form_pl" in rows
    k_thm = int(rows["K_nonconvex"].split()[0])
    k_cf = int(rows["K_closed_form"].split()[0])
    assert k_thm == k_cf


# -- sweeps ------------------------------------------------------------------------

def test_expand_and_grid():
    assert H.expand_values("randk:1..3") == ["randk:1", "randk:2", "randk:3"]
    g = H.parse_grid(["seed=1|2", "seed=3", "method=gd"])
    assert g == {"seed": ["1", "2", "3"], "method": ["gd"]}


def test_sweep_rows_and_thread_invariance(tmp_path):
    base = H.RunConfig(problem=FED, framework="dc", epsilon=0.05, max_iters=300)
    grid = {"compressor": ["randk:1", "randk:3"], "seed": ["0", "1"], "method": ["gd", "saga:2"]}
    s1 = H.sweep(base, grid, str(tmp_path / "a"), threads=1)
    s2 = H.sweep(base, grid, str(tmp_path / "b"), threads=2)
    with open(s1) as f1, open(s2) as f2:
        t1, t2 = f1.read(), f2.read()
    assert t1 == t2
    assert len(t1.strip().splitlines()) == 1 + 8
    for i in range(8):
        a = (tmp_path / "a" / f"cell_{i:04d}.csv").read_text()
        assert a == (tmp_path / "b" / f"cell_{i:04d}.csv").read_text()


# -- CLI ---------------------------------------------------------------------------

def test_cli_unknown_subcommand(capsys):
    assert cli(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_bad_value_exit_2(capsys):
    assert cli(["run", "epsilon=-1"]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_missing_config_exit_1(tmp_path, capsys):
    assert cli(["run", "--config", str(tmp_path / "x.cfg")]) == 1
    assert "x.cfg" in capsys.readouterr().err


def test_cli_bound_prints_closed_form(capsys):
    assert cli(["bound", f"problem={LSQ}"]) == 0
    out = capsys.readouterr().out
    assert "K_closed_form" in out and "closed form gd" in out


def test_cli_run_reproducible(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert cli(["run", f"problem={FED}", "framework=diana", "compressor=randk:2",
                    "method=saga:2", f"output={path}", "seed=9"]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_cli_verify_compressor(capsys):
    assert cli(["verify-compressor", "randk:2", "--d", "8", "--vectors", "3", "--samples", "20000"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_prop1(capsys):
    assert cli(["prop1", "--random", "50"]) == 0
    assert cli(["prop1", "--a", "0.1", "--c", "1", "--b", "0.5", "--M0", "10", "--K", "100"]) == 0
    assert cli(["prop1", "--a", "0.1"]) == 2


def test_cli_verify_bound(capsys):
    assert cli(["verify-bound", f"problem={LSQ}", "method=saga:1"]) == 0
    assert capsys.readouterr().out.startswith("PASS")


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sw"
    assert cli(["sweep", f"problem={LSQ}", "max_iters=50", "--grid", "seed=0|1", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["cell_0000.csv", "cell_0001.csv", "summary.csv"]
    assert cli(["sweep", "--out", str(out)]) == 2
