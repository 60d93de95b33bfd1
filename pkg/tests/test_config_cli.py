import json
import subprocess
import sys

import pytest

from qlandscape import __version__
from qlandscape.cli import main
from qlandscape.config import ConfigError, parse_config
from qlandscape.experiments import ExperimentSpec, forms_table, run_experiment, strip_header
from qlandscape.grape import GrapeConfig
from qlandscape.model import S1, S2

FAST = ["--set", "grape.K_stop=30", "--set", "grape.D=40"]


# -- config -----------------------------------------------------------------


def test_defaults_and_presets():
    cfg = parse_config("")
    assert cfg.system == S2 and cfg.grape == GrapeConfig() and cfg.L == 100
    cfg = parse_config("[system]\npreset = S1\n[grape]\nl = 0.5  # comment\n")
    assert cfg.system == S1 and cfg.grape.l == 0.5
    assert cfg.explicit == {"system.preset", "grape.l"}


def test_complex_and_grid_values():
    cfg = parse_config("[system]\nv23 = 1.7,0.3\n[experiment]\nl_grid = 0.1:0.5:0.1\nseeds = 0,1,2\n")
    assert cfg.system.v23 == complex(1.7, 0.3)
    assert cfg.experiment["l_grid"] == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert cfg.experiment["seeds"] == [0, 1, 2]


@pytest.mark.parametrize("text,line,field", [
    ("[grape]\neps = abc\n", 2, "grape.eps"),
    ("[grape]\n\nwhat = 1\n", 3, "grape.what"),
    ("[nope]\n", 1, None),
    ("l = 1\n", 1, None),
    ("[grape]\nl\n", 2, None),
    ("[grape]\nK_stop = 1.5\n", 2, "grape.K_stop"),
    ("[grape]\neps = -1\n", 2, "grape.eps"),
    ("[system]\nv12 = 0\n", 2, "system.v12"),
    ("[system]\npreset = S9\n", 2, "system.preset"),
    ("[experiment]\nl_grid = 0.3,0.2\n", 2, "experiment.l_grid"),
    ("[observable]\nlambda = -1\n", 2, "observable.lambda"),
    ("[initial]\nindex = 4\n", 2, "initial.index"),
])
def test_errors_name_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text, source="run.cfg")
    assert info.value.line == line and info.value.field == field
    assert f"run.cfg:{line}" in str(info.value)


def test_override_errors():
    assert parse_config("", ["grape.eps=0.3"]).grape.eps == 0.3
    for bad in (["eps=0.3"], ["grape.eps"], ["bogus.x=1"]):
        with pytest.raises(ConfigError):
            parse_config("", bad)


# -- cli --------------------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    assert main(["classify", "--system", "S1"]) == 0
    assert json.loads(capsys.readouterr().out)["trap_class"] == "Anharmonic"
    assert main(["grape", "--set", "grape.eps=nan"]) == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[grape]\nD = zero\n")
    assert main(["batch", "--config", str(cfg)]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err
    assert main(["batch", "--config", str(tmp_path / "missing.cfg")]) == 2
    # a strict tolerance below rounding makes the checks fail: numerical failure, exit 3
    assert main(["certify", "--system", "S1", "--set", "certify.n_dirs=3", "--set", "certify.tol=-1"]) == 3


def test_certify_writes_reports(tmp_path):
    assert main(["certify", "--system", "S2", "--set", "certify.n_dirs=4", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "certificate.json").read_text())
    assert d["order"] == 7 and d["certified"] and d["witness"]["name"] == "f4"
    assert main(["certify", "--set", "system.v23=1", "--set", "certify.n_dirs=2"]) == 0


def test_batch_is_byte_identical(tmp_path, monkeypatch):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["batch", "--system", "S1", "--seed", "4", "--set", "batch.L=4"] + FAST
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--threads", "2"]) == 0
    monkeypatch.setenv("QLANDSCAPE_THREADS", "3")
    assert main(args + ["--out", str(c)]) == 0
    for name in ("runs.csv", "hist_iterations.csv", "hist_initial_J.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    text = (a / "runs.csv").read_text()
    assert text.startswith(f"# qlandscape {__version__}\n") and "\r" not in text
    assert strip_header(text).splitlines()[0] == "run_index,seed,initial_J,final_J,iterations,succeeded"
    m = json.loads((a / "batch.manifest.json").read_text())
    assert m["seed"] == 4 and m["version"] == __version__ and "runs.csv" in m["files"]
    assert "time" not in json.dumps(m)


def test_grape_subcommand(tmp_path, capsys):
    assert main(["grape", "--system", "S1", "--run-index", "2", "--out", str(tmp_path)] + FAST) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["run_index"] == 2 and (tmp_path / "control.csv").exists()


def test_forms_subcommand(tmp_path):
    assert main(["forms", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "forms_table.csv").read_text().splitlines()
    assert lines[1].startswith("name,computed_re")
    rows = {r["name"]: r for r in forms_table()}
    assert rows["K4_f4"]["rel_diff"] <= 1e-9
    assert rows["A2_13_f2_omega1_0"]["rel_diff"] <= 1e-12
    assert rows["K4_zero"]["computed"] == 0


def test_grad_trace_zero_budget_is_header_only(tmp_path):
    assert main(["experiment", "grad_trace", "--set", "grape.K_stop=0", "--out", str(tmp_path)]) == 0
    body = strip_header((tmp_path / "grad_trace.csv").read_text())
    assert body == "system,l,eps,iteration,gradient_norm,objective\n"


def test_experiment_manifest_and_determinism(tmp_path):
    over = ["--set", "experiment.L=3", "--set", "experiment.l_grid=0.5,1.0",
            "--set", "experiment.seeds=0,1", "--set", "experiment.systems=S1"] + FAST
    for d in ("x", "y"):
        assert main(["experiment", "fail_vs_l", "--out", str(tmp_path / d)] + over) == 0
    x, y = tmp_path / "x", tmp_path / "y"
    assert (x / "fail_vs_l.csv").read_bytes() == (y / "fail_vs_l.csv").read_bytes()
    rows = strip_header((x / "fail_vs_l.csv").read_text()).splitlines()
    assert rows[0] == "system,l,seed,L,N_fail" and len(rows) == 5
    m = json.loads((x / "fail_vs_l.manifest.json").read_text())
    assert m["experiment"] == "fail_vs_l" and m["config"]["experiment"]["L"] == 3
    assert m == json.loads((y / "fail_vs_l.manifest.json").read_text())


def test_other_recipes_run(tmp_path):
    over = ["--set", "experiment.L=2", "--set", "experiment.l_grid=0.5"] + FAST
    assert main(["experiment", "fail_vs_l_shifted", "--out", str(tmp_path)] + over) == 0
    rows = strip_header((tmp_path / "fail_vs_l_shifted.csv").read_text()).splitlines()
    assert rows[0].endswith("N_fail_centered,N_fail_shifted")
    assert main(["experiment", "histograms", "--out", str(tmp_path)] + over) == 0
    hist = strip_header((tmp_path / "histograms_initial_J.csv").read_text()).splitlines()
    assert len(hist) == 1 + 2 * 25
    assert main(["experiment", "stop_scatter", "--out", str(tmp_path)] + over) == 0
    panels = {r.split(",")[0] for r in strip_header((tmp_path / "stop_scatter.csv").read_text()).splitlines()[1:]}
    assert panels == set("abcdefgh")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigError):
        run_experiment(ExperimentSpec("forms_table", parse_config(""), blocker / "sub"))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentSpec("nope", parse_config(""), tmp_path))


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "qlandscape.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
