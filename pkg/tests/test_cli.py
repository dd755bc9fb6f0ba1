import io
import json
import subprocess
import sys

import pytest

from mixbayes.cli import DEFAULTS, build_config, main
from mixbayes.errors import UsageError


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def counts_file(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("0\n1\n1\n3\n5\n6\n")
    return p


class TestConfig:
    def test_nested_and_dotted_keys(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"model": {"J": 3}, "mcmc.seed": 7}))
        cfg = build_config(p, ["prior.rate=0.5", "model.family=poisson"])
        assert cfg["model.J"] == 3 and cfg["mcmc.seed"] == 7
        assert cfg["prior.rate"] == 0.5 and cfg["model.family"] == "poisson"
        assert set(cfg) == set(DEFAULTS)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"mcmc": {"iters": 5}}))
        with pytest.raises(UsageError, match="mcmc.iters"):
            build_config(p)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(UsageError):
            build_config(p)


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert run(["fit"])[0] == 1

    def test_unknown_config_key(self, counts_file):
        assert run(["exact", "--data", str(counts_file), "--set", "foo=1"])[0] == 1

    def test_missing_data(self, tmp_path):
        code, _, err = run(["exact", "--data", str(tmp_path / "none.txt"), "--family", "poisson"])
        assert code == 2 and "not found" in err

    def test_malformed_data(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("1\n-2\n")
        assert run(["exact", "--data", str(p), "--family", "poisson"])[0] == 2

    def test_unsupported_family(self):
        assert run(["exact", "--bundled", "galaxy", "--family", "normal"])[0] == 2

    def test_invalid_value(self, counts_file):
        assert run(["sample", "--data", str(counts_file), "--family", "poisson", "--iterations", "0"])[0] == 2

    def test_resource_limit(self, tmp_path):
        code, _, err = run(["exact", "--bundled", "stouffer_toby", "--J", "4", "--set", "exact.cap=100",
                            "--out", str(tmp_path)])
        assert code == 3 and "cap" in err


class TestCommands:
    def test_exact(self, counts_file, tmp_path):
        out = tmp_path / "o"
        code, text, _ = run(["exact", "--data", str(counts_file), "--family", "poisson",
                             "--set", "prior.rate=0.5", "--out", str(out)])
        assert code == 0
        assert "distinct statistics: 43" in text
        for name in ["stats_table.csv", "summary.txt", "manifest.txt", "weight_posterior.csv",
                     "component_1_marginal.csv", "component_2_marginal.csv"]:
            assert (out / name).is_file(), name
        assert "-14.0661047932" in text

    def test_sample_is_byte_identical_on_rerun(self, counts_file, tmp_path):
        args = ["sample", "--data", str(counts_file), "--family", "poisson", "--iterations", "500", "--seed", "4"]
        assert run(args + ["--out", str(tmp_path / "a")])[0] == 0
        assert run(args + ["--out", str(tmp_path / "b")])[0] == 0
        for name in ["trace.csv", "trace_relabeled.csv", "summary.txt", "allocations.csv", "hist_p.1.csv"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert (tmp_path / "a" / "trace_relabeled.csv").read_text().startswith("# relabeled=true")

    def test_sample_mh(self, counts_file, tmp_path):
        code, text, _ = run(["sample", "--data", str(counts_file), "--family", "poisson", "--sampler", "mh",
                             "--iterations", "300", "--out", str(tmp_path)])
        assert code == 0 and "acceptance: weights=" in text
        assert not (tmp_path / "allocations.csv").exists()

    def test_sample_multiple_chains(self, counts_file, tmp_path):
        code, text, _ = run(["sample", "--data", str(counts_file), "--family", "poisson", "--iterations", "300",
                             "--chains", "2", "--out", str(tmp_path)])
        assert code == 0 and "pooled over 2 chains" in text
        assert (tmp_path / "chain_1" / "trace.csv").is_file()
        assert (tmp_path / "chain_2" / "trace.csv").is_file()

    def test_evidence(self, counts_file, tmp_path):
        code, text, _ = run(["evidence", "--data", str(counts_file), "--family", "poisson", "--j-max", "3",
                             "--iterations", "1000", "--out", str(tmp_path)])
        assert code == 0 and "recommended J:" in text
        lines = (tmp_path / "evidence.csv").read_text().splitlines()
        assert lines[0].startswith("J,method,log_marginal")
        assert (tmp_path / "manifest.txt").read_text().count("recommended_J") == 1

    def test_relabel(self, counts_file, tmp_path):
        run(["sample", "--data", str(counts_file), "--family", "poisson", "--iterations", "300",
             "--out", str(tmp_path / "s")])
        code, text, _ = run(["relabel", "--trace", str(tmp_path / "s" / "trace.csv"), "--data", str(counts_file),
                             "--family", "poisson", "--out", str(tmp_path / "r")])
        assert code == 0
        assert (tmp_path / "r" / "trace_relabeled.csv").read_bytes() == (tmp_path / "s" / "trace_relabeled.csv").read_bytes()

    def test_relabel_needs_trace(self, counts_file):
        assert run(["relabel", "--data", str(counts_file)])[0] == 1

    @pytest.mark.parametrize("bench, fname", [("t", "data.txt"), ("multinomial", "data.csv")])
    def test_simulate(self, tmp_path, bench, fname):
        code, _, _ = run(["simulate", "--benchmark", bench, "--set", "simulate.n=40", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / fname).is_file() and (tmp_path / "truth.csv").is_file()
        assert len((tmp_path / "labels.txt").read_text().split()) == 40

    def test_config_file_drives_run(self, counts_file, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "model": {"family": "poisson", "J": 2},
            "prior": {"rate": 0.5},
            "data": {"path": str(counts_file)},
            "output": {"dir": str(tmp_path / "o")},
        }))
        code, text, _ = run(["exact", "--config", str(cfg)])
        assert code == 0 and "distinct statistics: 43" in text

    def test_manifest_records_versions(self, counts_file, tmp_path):
        run(["exact", "--data", str(counts_file), "--family", "poisson", "--out", str(tmp_path)])
        m = (tmp_path / "manifest.txt").read_text()
        for key in ["mixbayes:", "numpy:", "scipy:", "seed:", "data.checksum:", "config:"]:
            assert key in m


def test_console_script_entry_point(counts_file, tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "mixbayes.cli", "exact", "--data", str(counts_file), "--family", "poisson",
         "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert "distinct statistics" in res.stdout
