import json
import os
import subprocess
import sys

import numpy as np
import pytest

from infsa.cli import main
from infsa.tensorio import load_tensor, store_tensor


def run(*argv, env=None):
    full_env = dict(os.environ)
    full_env.pop("INFSA_THREADS", None)
    full_env.update(env or {})
    return subprocess.run([sys.executable, "-m", "infsa.cli", *argv], capture_output=True,
                          text=True, env=full_env)


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, mat in {
        "swap": np.array([[0.0, 1.0], [1.0, 0.0]]),
        "identity": np.eye(3),
        "chain": np.array([[0.0, 0.4, 0.1], [0.3, 0.0, 0.3], [0.2, 0.2, 0.1]]),
    }.items():
        paths[name] = str(tmp_path / f"{name}.inft")
        store_tensor(paths[name], mat)
    paths["dir"] = tmp_path
    return paths


def test_centrality_fixture(files):
    r = run("centrality", "--input", files["swap"], "--gamma", "0.5", "--format", "json")
    assert r.returncode == 0, r.stderr
    rows = json.loads(r.stdout)["rows"]
    np.testing.assert_allclose([row["centrality"] for row in rows], [1.0, 1.0], rtol=1e-15)


def test_global_flag_before_subcommand(files):
    r = run("--gamma", "0.5", "--format", "csv", "centrality", "--input", files["swap"])
    assert r.returncode == 0
    assert r.stdout.splitlines()[0] == "token,centrality"


def test_centrality_divergent(files):
    r = run("centrality", "--gamma", "1.5", "--input", files["identity"])
    assert r.returncode == 1
    assert "diverges" in r.stderr


def test_unknown_flag_is_usage_error(files):
    r = run("centrality", "--input", files["swap"], "--bogus")
    assert r.returncode == 2
    assert "unrecognized arguments" in r.stderr


def test_bad_file_is_error(files):
    bad = files["dir"] / "bad.inft"
    bad.write_bytes(b"XXXX" + bytes(20))
    r = run("kernel", "--input", str(bad))
    assert r.returncode == 1
    assert "byte offset 0" in r.stderr


def test_kernel_writes_output(files):
    out = str(files["dir"] / "k.inft")
    r = run("kernel", "--input", files["swap"], "--gamma", "0.5", "--output", out)
    assert r.returncode == 0
    np.testing.assert_allclose(load_tensor(out), [[1 / 3, 2 / 3], [2 / 3, 1 / 3]], atol=1e-15)
    r = run("kernel", "--input", files["swap"], "--gamma", "0.5", "--depth", "60", "--format", "csv")
    assert r.returncode == 0 and r.stdout.startswith("row,c0,c1")


def test_affinity(files, rng):
    q = str(files["dir"] / "q.inft")
    store_tensor(q, rng.standard_normal((4, 3)))
    out = str(files["dir"] / "a.inft")
    r = run("affinity", "--q", q, "--output", out, "--format", "json")
    assert r.returncode == 0
    assert json.loads(r.stdout)["frobenius_norm"] == pytest.approx(1.0, abs=1e-5)
    assert load_tensor(out).shape == (4, 4)


def test_markov(files):
    r = run("markov", "--input", files["chain"], "--format", "json")
    assert r.returncode == 0
    rows = json.loads(r.stdout)["rows"]
    assert len(rows) == 3 and all(row["c_out"] >= 1 for row in rows)


def test_markov_simulate_repeatable(files):
    argv = ("markov", "--simulate", "--walks", "100000", "--seed", "7", "--input", files["chain"],
            "--format", "csv")
    a, b = run(*argv), run(*argv)
    assert a.returncode == 0
    assert a.stdout == b.stdout
    assert "visits_mc" in a.stdout


def test_simulate_identical_across_threads(files):
    argv = ("simulate", "--walks", "50000", "--seed", "11", "--input", files["chain"], "--format", "csv")
    base = run(*argv, "--threads", "1")
    assert base.returncode == 0
    for t in ("2", "4"):
        assert run(*argv, "--threads", t).stdout == base.stdout
    assert run(*argv, env={"INFSA_THREADS": "3"}).stdout == base.stdout
    assert run("simulate", "--walks", "50000", "--seed", "12", "--input", files["chain"],
               "--format", "csv").stdout != base.stdout


def test_markov_gamma_out_of_range(files):
    assert run("markov", "--input", files["chain"], "--gamma", "1.2").returncode == 1


def test_fig3_demo():
    r = run("fig3-demo", "--format", "json")
    doc = json.loads(r.stdout)
    assert doc["one_hop_argmax"] == 0 and doc["c_in_argmax"] == 4


def test_forward(files):
    out = str(files["dir"] / "y.inft")
    r = run("forward", "--variant", "linear", "--tokens", "10", "--heads", "4", "--d-h", "3",
            "--output", out, "--format", "json")
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    assert doc["max_head_rank"] <= 1
    assert load_tensor(out).shape == (10, 12)
    assert run("forward", "--variant", "pure", "--tokens", "6", "--heads", "2", "--d-h", "2").returncode == 0
    assert run("forward", "--variant", "cubic").returncode == 2


def test_align():
    r = run("align", "--samples", "10", "--format", "json")
    doc = json.loads(r.stdout)
    assert doc["samples"] == 10
    assert doc["min_cosine_perron_limit"] >= 0.999
    assert doc["reference_checkpoint_cosine"] == 0.985


def test_gradcheck_subset(capsys):
    code = main(["gradcheck", "--seeds", "1", "--ops", "mlp,layer_norm", "--format", "csv"])
    out = capsys.readouterr().out
    assert code == 0
    assert "mlp," in out and "layer_norm," in out


def test_gradcheck_unknown_op():
    assert run("gradcheck", "--ops", "nope").returncode == 2


def test_bench_small():
    r = run("bench", "--variant", "linear", "--sizes", "32,64,128,256", "--repeats", "5", "--format", "csv")
    assert r.returncode == 0, r.stderr
    lines = [ln for ln in r.stdout.splitlines() if not ln.startswith("#")]
    assert lines[0] == "variant,n_tokens,median_s,repeats"
    assert len(lines) == 5


def test_bench_three_sizes_is_usage_error():
    r = run("bench", "--variant", "pure", "--sizes", "32,64,128")
    assert r.returncode == 2


def test_bench_compare_backends():
    r = run("bench", "--compare-backends", "--repeats", "1", "--format", "json")
    assert r.returncode == 0
    assert len(json.loads(r.stdout)["rows"]) >= 4
