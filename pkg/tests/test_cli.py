import shutil
from pathlib import Path

import pytest

from crnreduce.cli import ConfigError, load_config, main, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINI_MECH = "species: A B\nA -> B ; k=1.0\nB -> A ; k=0.5\n"


def write_mini(tmp_path, extra=""):
    (tmp_path / "mini.mech").write_text(MINI_MECH)
    cfg = tmp_path / "mini.cfg"
    cfg.write_text(
        "mechanism_path = mini.mech\n"
        "dt = 0.01\nT = 12\n"
        "condition.0 = A:1.0\n"
        "condition.1 = A:0.5, B:0.5\n"
        "condition.2 = A:0.9, B:0.1\n"
        "epsilons = 0.05, 0.1, 0.2\n"
        "output_dir = out\n" + extra
    )
    return cfg


def run(*args):
    return main([str(a) for a in args])


def test_simulate_minimal(tmp_path):
    cfg = write_mini(tmp_path, "holdout_ids = 2\n")
    assert run("simulate", "--config", cfg, "--workers", 1) == 0
    files = sorted((tmp_path / "out" / "trajectories").glob("*.csv"))
    assert [f.name for f in files] == ["condition_0.csv", "condition_1.csv", "condition_2.csv"]
    rows = files[0].read_text().splitlines()
    assert rows[0] == "t,X_A,X_B,r_1,r_2" and len(rows) == 12 + 2
    meta = (files[0].parent / "condition_0.csv.meta").read_text()
    assert "config_sha256=" in meta and "crnreduce=" in meta and "mechanism_sha256=" in meta


def test_simulate_rerun_identical(tmp_path):
    cfg = write_mini(tmp_path, "sigma = 0.001\nseed = 11\n")
    run("simulate", "--config", cfg, "--workers", 1)
    first = {p.name: p.read_bytes() for p in (tmp_path / "out" / "trajectories").iterdir()}
    run("simulate", "--config", cfg, "--workers", 2)
    second = {p.name: p.read_bytes() for p in (tmp_path / "out" / "trajectories").iterdir()}
    assert first == second


def test_missing_mechanism(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("mechanism_path = nowhere.mech\ncondition.0 = A:1\n")
    assert run("simulate", "--config", cfg) == 2
    assert "nowhere.mech" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "none.cfg") == 2
    assert "none.cfg" in capsys.readouterr().err


def test_reduce_sweep_and_validate(tmp_path, capsys):
    cfg = write_mini(tmp_path, "holdout_ids = 2\n")
    assert run("simulate", "--config", cfg, "--workers", 1) == 0
    capsys.readouterr()
    assert run("reduce", "--config", cfg, "--workers", 1) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[0] == "epsilon"
    assert [float(line.split()[0]) for line in out[1:]] == [0.05, 0.1, 0.2]
    d = tmp_path / "out"
    assert sorted(p.name for p in d.glob("result_*")) == ["result_eps0.05.txt", "result_eps0.1.txt", "result_eps0.2.txt"]
    assert len(list(d.glob("audit_eps*.csv"))) == 3
    # noiseless data from the same mechanism, hold-out close to training
    assert run("validate", "--config", cfg, "--workers", 1) == 0
    lines = capsys.readouterr().out.splitlines()[1:]
    assert len(lines) == 3 and all(int(line.split()[3]) == 0 for line in lines)
    curve = d / "curves" / "curve_eps0.2_2.csv"
    text = curve.read_text().splitlines()
    assert text[0].startswith("# crnreduce=") and text[1] == "t,D,bound" and len(text) == 14
    holdout = (d / "holdout_audit_eps0.1.csv").read_text().splitlines()
    assert holdout[1] == "condition_id,t,D,tau,satisfied"
    assert all(line.endswith("true") for line in holdout[2:])


def test_outputs_deterministic(tmp_path):
    cfg = write_mini(tmp_path, "solver = exact\n")
    for _ in range(2):
        run("simulate", "--config", cfg, "--workers", 1)
        run("reduce", "--config", cfg, "--workers", 1)
        run("validate", "--config", cfg, "--workers", 1)
        snap = {
            str(p.relative_to(tmp_path)): p.read_bytes()
            for p in sorted((tmp_path / "out").rglob("*"))
            if p.is_file() and p.name != "run.log"
        }
        if _ == 0:
            first = snap
            shutil.rmtree(tmp_path / "out")
    assert snap == first
    assert "T" in (tmp_path / "out" / "run.log").read_text()


def test_overrides(tmp_path, capsys):
    cfg = write_mini(tmp_path)
    other = tmp_path / "elsewhere"
    assert run("simulate", "--config", cfg, "--output-dir", other, "--workers", 1) == 0
    assert run("reduce", "--config", cfg, "--output-dir", other, "--epsilon", 0.3,
               "--solver", "exact", "--tolerance-mode", "relative", "--workers", 1) == 0
    assert [p.name for p in other.glob("result_*")] == ["result_eps0.3.txt"]
    assert "solver=exact" in (other / "result_eps0.3.txt").read_text()
    assert not (tmp_path / "out").exists()


def test_reduce_without_trajectories(tmp_path, capsys):
    cfg = write_mini(tmp_path)
    assert run("reduce", "--config", cfg) == 2
    assert "simulate" in capsys.readouterr().err


def test_empty_training_set(tmp_path):
    cfg = write_mini(tmp_path, "train_ids =\nholdout_ids = 2\n")
    run("simulate", "--config", cfg, "--workers", 1)
    assert run("reduce", "--config", cfg, "--workers", 1) == 2


def test_node_limit_warns_exit_zero(tmp_path, capsys):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(
        "mechanism_path = builtin:h2o2_58\ndt = 0.001\nT = 5\nconditions = sweep:3\n"
        "holdout_ids = 2\nepsilons = 0.05\nsolver = exact\nnode_limit = 1\noutput_dir = out\n"
    )
    assert run("simulate", "--config", cfg, "--workers", 1) == 0
    assert run("reduce", "--config", cfg, "--workers", 1) == 0
    err = capsys.readouterr().err
    assert "node limit" in err
    assert ",node_limit," in (tmp_path / "out" / "result_eps0.05.txt").read_text()


def test_infeasible_exit_one(tmp_path, capsys):
    cfg = write_mini(tmp_path, "sigma = 0.05\nseed = 3\n")
    run("simulate", "--config", cfg, "--workers", 1)
    capsys.readouterr()
    assert run("reduce", "--config", cfg, "--workers", 1) == 1
    assert "raise epsilon" in capsys.readouterr().err


def test_validate_errors(tmp_path, capsys):
    cfg = write_mini(tmp_path, "holdout_ids = 2\n")
    run("simulate", "--config", cfg, "--workers", 1)
    # no result yet
    assert run("validate", "--config", cfg) == 2
    run("reduce", "--config", cfg, "--workers", 1)
    # training ids changed after the reduction
    moved = write_mini(tmp_path, "train_ids = 0\nholdout_ids = 2\n")
    assert run("validate", "--config", moved) == 2
    assert "trained on" in capsys.readouterr().err
    # hold-out id that does not exist
    missing = write_mini(tmp_path, "holdout_ids = 9\n")
    assert run("validate", "--config", missing) == 2


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\nbogus = 1\n", "unknown key"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\nepsilons =\n", "epsilons"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\nepsilons = 0.1, 0.1\n", "distinct"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\ntrain_ids = 0-2\nholdout_ids = 2\n", "both"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\nsolver = magic\n", "solver"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\ndt = fast\n", "bad value"),
        ("mechanism_path = builtin:h2o2_58\n", "no conditions"),
        ("conditions = sweep:4\n", "mechanism_path"),
        ("mechanism_path = builtin:h2o2_58\nconditions = sweep:4\njust words\n", "key = value"),
        ("mechanism_path = builtin:h2o2_58\nconditions = missing.csv\n", "not found"),
    ],
)
def test_config_errors(tmp_path, text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text, tmp_path)


def test_config_parsing_details(tmp_path):
    cfg = parse_config(
        "mechanism_path = builtin:h2o2_58  # comment\nconditions = sweep:48\n"
        "train_ids = 0-3, 7\nholdout_ids = 46,47\nprune_min_count = inf\n",
        tmp_path,
    )
    assert cfg.train_ids == (0, 1, 2, 3, 7)
    assert cfg.prune_min_count == float("inf")
    assert cfg.digest == parse_config(cfg.canonical().replace("inline_conditions=\n", "")
                                      .replace("train_ids=", "train_ids = ").replace("epsilons=", "epsilons = "),
                                      tmp_path).digest


def test_conditions_csv(tmp_path, capsys):
    (tmp_path / "mini.mech").write_text(MINI_MECH)
    (tmp_path / "conds.csv").write_text("id,A,B,scale_2\n4,1.0,0.0,2.0\n5,0.0,1.0,1.0\n")
    cfg = tmp_path / "c.cfg"
    cfg.write_text("mechanism_path = mini.mech\nconditions = conds.csv\nT = 3\noutput_dir = o\n")
    assert run("simulate", "--config", cfg, "--workers", 1) == 0
    assert sorted(p.name for p in (tmp_path / "o" / "trajectories").glob("*.csv")) == ["condition_4.csv", "condition_5.csv"]
    (tmp_path / "conds.csv").write_text("id,A,Z\n4,1.0,0.0\n")
    assert run("simulate", "--config", cfg) == 2


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.cfg"):
        cfg = load_config(path)
        assert cfg.epsilons


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "crnreduce" in capsys.readouterr().out
