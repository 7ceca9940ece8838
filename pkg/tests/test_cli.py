import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mmdquant.cli import main

CONFIG = """
[target]
preset = "gmm2"
n_samples = 150
seed = 3

[kernel]
family = "se"
bandwidth = 5.0

[run]
algorithm = "msip"
m = 3
seeds = [1, 2, 3]
max_iterations = 15

[init]
strategy = "from_data"
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(CONFIG)
    return path


def test_quantize_single_run(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["quantize", "--config", str(config_file), "--output", str(out)])
    assert code == 0
    assert "final mmd" in capsys.readouterr().out
    assert (out / "seed_1" / "final_state.csv").exists()
    assert not (out / "seed_2").exists()  # single run only


def test_quantize_with_explicit_seed(config_file, tmp_path):
    out = tmp_path / "run"
    code = main(
        ["quantize", "--config", str(config_file), "--output", str(out), "--seed", "9"]
    )
    assert code == 0
    assert (out / "seed_9" / "trace.csv").exists()


def test_benchmark_seed_flags(config_file, tmp_path, capsys):
    out = tmp_path / "bench"
    code = main(
        [
            "benchmark",
            "--config",
            str(config_file),
            "--output",
            str(out),
            "--n-seeds",
            "4",
            "--base-seed",
            "10",
            "--threads",
            "2",
        ]
    )
    assert code == 0
    assert "4/4 seeds" in capsys.readouterr().out
    for seed in range(10, 14):
        assert (out / f"seed_{seed}" / "trace.csv").exists()
    assert (out / "summary.csv").exists()


def test_benchmark_seed_list_override(config_file, tmp_path):
    out = tmp_path / "bench2"
    code = main(
        ["benchmark", "--config", str(config_file), "--output", str(out), "--seeds", "5,6"]
    )
    assert code == 0
    assert (out / "seed_5").exists() and (out / "seed_6").exists()


def test_config_error_exit_code(config_file, tmp_path, capsys):
    code = main(["quantize", "--config", str(tmp_path / "nope.toml")])
    assert code == 2
    assert "config error" in capsys.readouterr().err
    code = main(
        ["quantize", "--config", str(config_file), "--set", 'run.algorithm="sgd"']
    )
    assert code == 2


def test_all_seeds_failed_exit_code(config_file, tmp_path, capsys):
    # from_data cannot draw 200 distinct atoms out of 150 samples
    code = main(
        [
            "benchmark",
            "--config",
            str(config_file),
            "--output",
            str(tmp_path / "fail"),
            "--set",
            "run.m=200",
        ]
    )
    assert code == 1
    assert "failed" in capsys.readouterr().err


def test_eigbench_curve(config_file, tmp_path, capsys):
    out = tmp_path / "eig"
    code = main(
        [
            "eigbench",
            "--config",
            str(config_file),
            "--output",
            str(out),
            "--m-max",
            "12",
        ]
    )
    assert code == 0
    rows = (out / "eigbench.csv").read_text().splitlines()
    assert rows[0] == "m,benchmark"
    values = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(values) == 12
    assert np.all(np.diff(values) <= 1e-15)


def test_mmd_subcommand_evaluates_pointsets(config_file, tmp_path, capsys):
    pts = tmp_path / "points.csv"
    pts.write_text("c1,c2,weight\n-6.0,-3.0,0.4\n5.0,-4.0,0.35\n1.0,6.0,0.25\n")
    code = main(["mmd", "--config", str(config_file), "--points", str(pts)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    got = dict(line.split(" = ") for line in lines)
    assert set(got) == {"mmd_uniform", "mmd_given", "mmd_optimal"}
    assert float(got["mmd_optimal"]) <= float(got["mmd_given"]) + 1e-12

    bare = tmp_path / "bare.csv"
    bare.write_text("-6.0,-3.0\n5.0,-4.0\n")
    code = main(["mmd", "--config", str(config_file), "--points", str(bare)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2  # no given-weights line


def test_plot_subcommand_roundtrip(config_file, tmp_path):
    out = tmp_path / "runs"
    assert (
        main(
            [
                "benchmark",
                "--config",
                str(config_file),
                "--output",
                str(out),
                "--seeds",
                "1,2",
            ]
        )
        == 0
    )
    svg = tmp_path / "curve.svg"
    code = main(
        [
            "plot",
            "--kind",
            "mmd-curve",
            "--out",
            str(svg),
            str(out / "seed_1" / "trace.csv"),
            str(out / "seed_2" / "trace.csv"),
        ]
    )
    assert code == 0
    root = ET.parse(svg).getroot()
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polyline")) == 2

    scatter = tmp_path / "scatter.svg"
    code = main(
        [
            "plot",
            "--kind",
            "scatter2d",
            "--out",
            str(scatter),
            str(out / "seed_1" / "final_state.csv"),
        ]
    )
    assert code == 0
    assert ET.parse(scatter).getroot() is not None


def test_plot_bad_input_exit_code(tmp_path, capsys):
    code = main(
        ["plot", "--kind", "mmd-curve", "--out", str(tmp_path / "x.svg"), "missing.csv"]
    )
    assert code == 2
    assert "plot error" in capsys.readouterr().err
