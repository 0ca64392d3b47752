import os

import pytest

from ddpmlab.cli import main
from ddpmlab.experiments import ConfigError, parse_config


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_config_values():
    cfg = parse_config("""
# comment
experiment = schedule-audit
schedule.n = 1000
gamma1 = 0.15
gamma2 = 30.67
""")
    assert cfg.experiment == "schedule-audit"
    assert cfg.get("schedule.n") == 1000
    assert cfg.get("gamma1") == 0.15


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config("experiment = identity\nwhatever = 3\n")
    with pytest.raises(ConfigError):
        parse_config("experiment = nonsense\n")
    with pytest.raises(ConfigError):
        parse_config("gamma1 = 0.1\n")
    with pytest.raises(ConfigError):
        parse_config("experiment = identity\nexperiment = identity\n")
    with pytest.raises(ConfigError):
        parse_config("experiment identity\n")


def test_schedule_audit_run_pass_and_fail(tmp_path):
    cfg = write(tmp_path, "audit.cfg", """
experiment = schedule-audit
schedule.kind = linear
schedule.n = 1000
schedule.v_start = 1e-4
schedule.v_end = 0.02
gamma1 = 0.15
gamma2 = 30.67
""")
    out = str(tmp_path / "out1")
    assert main(["run", cfg, "--out", out]) == 0
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "RESULT PASS" in summary
    assert os.path.exists(os.path.join(out, "band_margins.csv"))
    assert os.path.exists(os.path.join(out, "config_resolved.txt"))

    cfg_fail = write(tmp_path, "audit_fail.cfg", """
experiment = schedule-audit
schedule.n = 1000
gamma1 = 0.16
gamma2 = 30.67
expect = fail
""")
    assert main(["run", cfg_fail, "--out", str(tmp_path / "out2")]) == 0

    cfg_bad = write(tmp_path, "audit_bad.cfg", """
experiment = schedule-audit
schedule.n = 1000
gamma1 = 0.16
gamma2 = 30.67
""")
    assert main(["run", cfg_bad, "--out", str(tmp_path / "out3")]) == 1


def test_exit_codes(tmp_path):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 3
    bad = write(tmp_path, "bad.cfg", "experiment = identity\nbogus_key = 1\n")
    assert main(["run", bad]) == 2


def test_identity_run_byte_identical(tmp_path):
    cfg = write(tmp_path, "ident.cfg", """
experiment = identity
target.kind = mixture
schedule.kind = linear
schedule.n = 20
schedule.v_start = 1e-3
schedule.v_end = 0.05
samples = 4000
bias = 1.0
rel_tol = 0.1
seed = 7
""")
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", cfg, "--out", out1]) == 0
    assert main(["run", cfg, "--out", out2, "--threads", "4"]) == 0
    for name in ("identity_report.csv", "loss_report.csv", "summary.txt"):
        with open(os.path.join(out1, name), "rb") as f1, \
                open(os.path.join(out2, name), "rb") as f2:
            assert f1.read() == f2.read()


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, "ident2.cfg", """
experiment = identity
schedule.n = 10
schedule.kind = constant
schedule.total = 2.0
samples = 2000
bias = 1.0
rel_tol = 0.2
""")
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    assert main(["run", cfg, "--out", out1, "--seed", "1"]) == 0
    assert main(["run", cfg, "--out", out2, "--seed", "2"]) == 0
    a = open(os.path.join(out1, "identity_report.csv")).read()
    b = open(os.path.join(out2, "identity_report.csv")).read()
    assert a != b


def test_sign_adjudication_run(tmp_path):
    cfg = write(tmp_path, "sign.cfg", """
experiment = sign-adjudication
target.kind = gaussian
target.mean = 1.5
schedule.kind = constant
schedule.n = 8
schedule.total = 2.0
paths = 64
substeps_list = 16,32
grid = 401
seed = 3
""")
    out = str(tmp_path / "sign")
    assert main(["run", cfg, "--out", out]) == 0
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "bsde_vanishing_sign: -1" in summary
    assert "pde_vanishing_sign: -1" in summary
    assert "PASS signs_agree" in summary


def test_plotdata(tmp_path):
    residuals = write(tmp_path, "res.csv",
                      "t_index,t,sign,rms,max,paths,substeps\n"
                      "0,0,-1,0.5,1.0,10,16\n0,0,-1,0.25,0.5,10,32\n"
                      "0,0,1,2.0,3.0,10,16\n")
    out = str(tmp_path / "res.dat")
    assert main(["plotdata", residuals, "--out", out]) == 0
    text = open(out).read()
    assert "16 0.5" in text and "32 0.25" in text

    empty = write(tmp_path, "empty.csv", "")
    out2 = str(tmp_path / "empty.dat")
    assert main(["plotdata", empty, "--out", out2]) == 0
    assert open(out2).read() == ""

    bad = write(tmp_path, "bad.csv", "some,other,header\n1,2,3\n")
    assert main(["plotdata", bad, "--out", str(tmp_path / "bad.dat")]) == 2


def test_pde_experiment_run(tmp_path):
    cfg = write(tmp_path, "pde.cfg", """
experiment = pde
target.kind = gaussian
target.mean = 1.5
schedule.kind = constant
schedule.n = 8
schedule.total = 2.0
t = 0.3
grid = 801
""")
    out = str(tmp_path / "pde")
    assert main(["run", cfg, "--out", out]) == 0
    assert "PASS pde_adjudicated" in open(os.path.join(out, "summary.txt")).read()


def test_fbsde_experiment_run(tmp_path):
    cfg = write(tmp_path, "fbsde.cfg", """
experiment = fbsde
target.kind = gaussian
target.mean = 1.5
schedule.kind = constant
schedule.n = 8
schedule.total = 2.0
paths = 2000
substeps = 64
seed = 5
""")
    out = str(tmp_path / "fbsde")
    assert main(["run", cfg, "--out", out]) == 0
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "PASS bsde_sign_separation" in summary
    assert "PASS yast_rms" in summary
    assert os.path.exists(os.path.join(out, "bsde_residuals.csv"))


def test_tv_pipeline_experiment_run(tmp_path):
    cfg = write(tmp_path, "tv.cfg", """
experiment = tv-pipeline
target.kind = mixture
schedule.kind = constant
schedule.n = 20
schedule.total = 4.0
paths = 4000
substeps = 2
samples = 2000
biases = 0.0,0.5
seed = 9
""")
    out = str(tmp_path / "tv")
    assert main(["run", cfg, "--out", out]) == 0
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "PASS girsanov_holds_bias0.5" in summary
    assert "PASS schrodinger_holds" in summary
    assert os.path.exists(os.path.join(out, "bounds.csv"))


def test_bounds_sweep_experiment_run(tmp_path):
    cfg = write(tmp_path, "sweep.cfg", """
experiment = bounds-sweep
target.kind = mixture
schedule.kind = constant
schedule.total = 4.0
n_list = 5,10,20
paths = 4000
seed = 13
""")
    out = str(tmp_path / "sweep")
    assert main(["run", cfg, "--out", out]) == 0
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "PASS rank_correlation" in summary
    assert os.path.exists(os.path.join(out, "sweep.csv"))


def test_plotdata_on_real_outputs(tmp_path):
    cfg = write(tmp_path, "sign2.cfg", """
experiment = sign-adjudication
target.kind = gaussian
target.mean = 1.5
schedule.kind = constant
schedule.n = 8
schedule.total = 2.0
paths = 64
substeps_list = 8,16
grid = 201
seed = 3
""")
    out = str(tmp_path / "sign2")
    assert main(["run", cfg, "--out", out]) == 0
    dat = str(tmp_path / "curve.dat")
    assert main(["plotdata", os.path.join(out, "bsde_residuals.csv"),
                 "--out", dat]) == 0
    body = open(dat).read()
    assert "# sign -1" in body and "# sign 1" in body
