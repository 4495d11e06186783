import csv
import json

import numpy as np
import pytest

from gcnsbm import cli
from gcnsbm.config import ConfigError, edit_distance, load_config, parse_config_text, parse_grid, suggest_key
from gcnsbm.core import ParameterError

SMALL_MC = ["--mc-count", "20000"]


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def spec_for(*argv):
    args = cli.build_parser().parse_args([str(a) for a in argv])
    return cli.spec_from_args(args)


def read_rows(path):
    return cli.read_table(path)


# ---------------------------------------------------------------- grids

def test_range_grid_is_inclusive():
    g = parse_grid("0:2:0.1")
    assert len(g) == 21 and g[0] == 0.0 and g[-1] == 2.0 and g[3] == 0.3


def test_log_and_list_grids():
    np.testing.assert_allclose(parse_grid("log:0.01:100:5"), [0.01, 0.1, 1.0, 10.0, 100.0], rtol=1e-12)
    assert parse_grid("1, 2.5,4") == [1.0, 2.5, 4.0]


@pytest.mark.parametrize("text", ["", "0:1", "1:0:0.1", "0:1:-0.1", "log:0:1:3", "log:1:2"])
def test_bad_grids_rejected(text):
    with pytest.raises(ParameterError):
        parse_grid(text)


# ---------------------------------------------------------------- config grammar

def test_config_sections_comments_and_types():
    text = """
    # defaults for every command
    [common]
    alpha = 4      # trailing comment
    c_grid = 0:1:0.5
    [se]
    mc_count = 5000
    logy = yes
    """
    sections = parse_config_text(text)
    assert sections["common"] == {"alpha": 4.0, "c_grid": [0.0, 0.5, 1.0]}
    assert sections["se"] == {"mc_count": 5000, "logy": True}


def test_command_section_overrides_common(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("r = 1\n[se]\nr = 3\n[sim]\nn = 500\n")
    assert load_config(path, "se") == {"r": 3.0}
    assert load_config(path, "sim") == {"r": 1.0, "n": 500}


def test_unknown_key_names_line_and_suggestion():
    with pytest.raises(ConfigError) as info:
        parse_config_text("alpha = 4\n\nlamda = 1.5\n", "x.cfg")
    assert info.value.line == 3
    assert "x.cfg:3" in str(info.value) and "`lambda`" in str(info.value)


def test_unknown_key_without_close_match():
    with pytest.raises(ConfigError) as info:
        parse_config_text("temperature = 1\n")
    assert "did you mean" not in str(info.value)


@pytest.mark.parametrize("text,line", [
    ("alpha = 4\nalpha = 5\n", 2),
    ("n = ten\n", 1),
    ("mu = 1\n[train]\n", 2),
    ("mu 1\n", 1),
    ("c_grid = 0:1\n", 1),
])
def test_grammar_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.line == line


def test_edit_distance_and_suggestions():
    assert edit_distance("lamda", "lambda") == 1
    assert edit_distance("", "abc") == 3
    assert suggest_key("rhoo") == "rho"
    assert suggest_key("zzzzzz") is None


# ---------------------------------------------------------------- run specs

FLAGS = ["--model", "glm_sbm", "--alpha", "2", "--lambda", "1.2", "--rho", "0.2", "--loss", "hinge",
         "--r", "0.5", "--c", "0.7", "--c-grid", "0,1", "--seed", "3", "--workers", "1"]


def test_empty_config_equals_flags_alone(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("")
    assert spec_for("se", *FLAGS) == spec_for("se", "--config", empty, *FLAGS)


def test_flags_override_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("r = 1\nalpha = 3\n")
    spec = spec_for("se", "--config", path, "--r", "10")
    assert spec.gcn.r == 10.0 and spec.data.alpha == 3.0


def test_preset_fills_grids_and_flags_win():
    spec = spec_for("se", "--preset", "fig1-top", "--c-grid", "0,1")
    axes = dict(spec.axes)
    assert axes["c"] == [0.0, 1.0]
    assert axes["loss"] == ["quadratic", "logistic", "hinge"]
    assert spec.data.alpha == 4 and spec.data.rho == 0.1 and spec.data.lam == 0.5


def test_run_spec_validation():
    spec = spec_for("se", *FLAGS)
    with pytest.raises(cli.UsageError, match="axes"):
        cli.RunSpec(**{**spec.__dict__, "axes": [("temperature", [1.0])]})
    with pytest.raises(cli.UsageError, match="empty grid"):
        cli.RunSpec(**{**spec.__dict__, "axes": [("c", [])]})


# ---------------------------------------------------------------- commands

def test_rates_prints_closed_form_values(tmp_path, capsys):
    assert run_cli("rates", "--model", "csbm", "--alpha", "4", "--mu", "3", "--out", tmp_path / "r.csv") == 0
    out = capsys.readouterr().out
    assert "tau_inf = 0.25\n" in out and "tau_BO_inf = 1\n" in out


def test_se_table_schema(tmp_path):
    path = tmp_path / "se.csv"
    status = run_cli("se", "--model", "csbm", "--alpha", "4", "--rho", "0.1", "--lambda", "1", "--mu", "1",
                     "--loss", "logistic", "--r", "1", "--c-grid", "0,1", "--workers", "1", *SMALL_MC,
                     "--out", path)
    assert status == 0
    with open(path) as fh:
        assert fh.readline() == "# gcnsbm-table v1 command=se\n"
        header = next(csv.reader(fh))
    for col in ("model", "alpha", "lambda", "mu", "rho", "loss", "r", "c", "e_train", "e_test", "acc_train",
                "acc_test", "acc_test_mc_se", "iterations", "residual", "converged"):
        assert col in header
    assert header[-1] == "failure"
    rows = read_rows(path)
    assert [float(r["c"]) for r in rows] == [0.0, 1.0]
    assert all(r["failure"] == "" for r in rows)


def test_se_rows_independent_of_workers(tmp_path):
    common = ["se", "--model", "glm_sbm", "--alpha", "4", "--lambda", "1", "--loss", "quadratic",
              "--c-grid", "0,0.5,1", *SMALL_MC]
    run_cli(*common, "--workers", "1", "--out", tmp_path / "a.csv")
    run_cli(*common, "--workers", "3", "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_se_optimal_self_loop_is_interior(tmp_path):
    path = tmp_path / "se.csv"
    assert run_cli("se", "--model", "csbm", "--alpha", "4", "--rho", "0.1", "--lambda", "1.5", "--mu", "3",
                   "--loss", "quadratic", "--r", "1e3", "--c-grid", "0:2:0.1", "--mc-count", "100000",
                   "--out", path) == 0
    rows = read_rows(path)
    acc = np.array([float(r["acc_test"]) for r in rows])
    best = int(np.argmax(acc))
    assert 0 < best < len(acc) - 1
    # the interior maximum stands above both ends by more than MC error
    se = max(float(r["acc_test_mc_se"]) for r in rows)
    assert acc[best] - max(acc[0], acc[-1]) > 3 * se


def test_failed_points_give_status_one_and_partial_table(tmp_path):
    path = tmp_path / "se.csv"
    status = run_cli("se", "--model", "csbm", "--lambda", "1", "--mu", "1", "--loss", "logistic",
                     "--c-grid", "0,1", "--max-iter", "1", *SMALL_MC, "--out", path)
    assert status == 1
    rows = read_rows(path)
    assert len(rows) == 2 and all(r["failure"] == "not converged" for r in rows)
    assert all(r["acc_test"] != "" for r in rows)


def test_bo_and_cstar_commands(tmp_path, capsys):
    bo_path = tmp_path / "bo.json"
    assert run_cli("bo", "--model", "csbm", "--alpha", "4", "--mu", "3", "--lambda-grid", "0.5,1.5",
                   "--out", bo_path) == 0
    data = json.loads(bo_path.read_text())
    assert data["schema"] == "gcnsbm-table v1" and len(data["rows"]) == 2
    accs = [float(r["acc_bo"]) for r in data["rows"]]
    assert 0.5 < accs[0] < accs[1] < 1
    assert run_cli("cstar", "--model", "csbm", "--alpha", "4", "--mu", "3", "--lambda", "10",
                   "--regime", "large", "--out", tmp_path / "c.csv") == 0
    assert "c_star = 0.2\n" in capsys.readouterr().out


def test_sim_table_has_seed_rows_and_mean(tmp_path):
    path = tmp_path / "sim.csv"
    assert run_cli("sim", "--model", "csbm", "--alpha", "4", "--rho", "0.2", "--lambda", "1", "--mu", "1",
                   "--d", "20", "--n", "200", "--reps", "3", "--c-grid", "0,1", "--out", path) == 0
    rows = read_rows(path)
    assert [r["rep"] for r in rows] == ["0", "1", "2", "mean"] * 2
    mean = rows[3]
    accs = [float(r["acc_test"]) for r in rows[:3]]
    assert float(mean["acc_test"]) == pytest.approx(np.mean(accs))
    assert float(mean["acc_test_sem"]) == pytest.approx(np.std(accs, ddof=1) / np.sqrt(3))


def test_plot_from_saved_table_is_byte_identical(tmp_path):
    table = tmp_path / "se.csv"
    run_cli("se", "--model", "csbm", "--lambda", "1", "--mu", "1", "--c-grid", "0,0.5,1", *SMALL_MC,
            "--out", table)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run_cli("plot", "--se-table", table, "--plot", a) == 0
    assert run_cli("plot", "--se-table", table, "--plot", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().lstrip().startswith(b"<?xml")


def test_default_output_directory_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path))
    assert run_cli("rates", "--model", "glm_sbm", "--alpha", "4") == 0
    assert (tmp_path / "rates.csv").exists()


def test_read_table_rejects_foreign_csv(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(cli.UsageError, match="schema"):
        cli.read_table(path)


# ---------------------------------------------------------------- usage errors

@pytest.mark.parametrize("argv", [
    ["se", "--preset", "fig99"],
    ["se", "--loss", "squared"],
    ["se", "--alpha", "-1"],
    ["plot"],
])
def test_usage_errors_exit_two(argv, capsys):
    assert run_cli(*argv) == 2
    assert "error" in capsys.readouterr().err


def test_config_error_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("lamda = 1\n")
    assert run_cli("se", "--config", path) == 2
    err = capsys.readouterr().err
    assert ":1:" in err and "lambda" in err


def test_bad_flag_grid_is_argparse_usage_error():
    with pytest.raises(SystemExit) as info:
        run_cli("se", "--c-grid", "2:0:0.1")
    assert info.value.code == 2
