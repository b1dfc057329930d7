"""End-to-end CLI: subcommands, exit codes, config precedence, output formats.

Most tests drive ``main()`` in-process for speed; the stderr contract and
``python -m`` entry points get real subprocesses.
"""

import json
import subprocess
import sys

import pytest

from sgks.cli import main
from sgks.diagnostics import hfer_score
from sgks.gate import StoredTraceVerifier, replay_audit
from sgks.traces import load_traces

WIDE = '{"tau_low": 0.15, "tau_high": 0.30, "model_id": "synthetic"}\n'


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli-data") / "traces"
    assert main(["synth", "--n-per-class", "4", "--out", str(d), "--seed", "11"]) == 0
    return d


@pytest.fixture(scope="module")
def thresholds_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli-thr") / "wide.json"
    path.write_text(WIDE)
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynth:
    def test_writes_dataset_and_prints_manifest(self, dataset_dir, capsys):
        files = sorted(dataset_dir.glob("*.sgkt"))
        assert len(files) == 8
        assert (dataset_dir / "manifest.json").exists()
        traces = load_traces(dataset_dir)
        assert sorted({t.label for t in traces}) == [0, 1]

    def test_deterministic_bytes(self, dataset_dir, tmp_path, capsys):
        again = tmp_path / "again"
        code, out, _ = run_cli(
            capsys, "synth", "--n-per-class", "4", "--out", str(again), "--seed", "11"
        )
        assert code == 0
        assert out.strip().endswith("manifest.json")
        for fresh in sorted(again.glob("*.sgkt")):
            assert fresh.read_bytes() == (dataset_dir / fresh.name).read_bytes()

    def test_requires_out(self, capsys):
        code, _, err = run_cli(capsys, "synth", "--n-per-class", "2")
        assert code == 1
        assert err.startswith("sgks: UsageError:")


class TestDiag:
    def test_per_layer_csv(self, dataset_dir, capsys):
        code, out, _ = run_cli(capsys, "diag", str(dataset_dir))
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "prompt_id,layer,hfer,se,dirichlet,fiedler,energy_trace"
        assert len(lines) == 1 + 8 * 4  # default window has four layers
        first = lines[1].split(",")
        assert first[0].startswith("synth-")
        assert first[6] == ""  # scalar traces carry no hidden-state energy

    def test_summary_and_json(self, dataset_dir, capsys):
        code, out, _ = run_cli(
            capsys, "diag", str(dataset_dir), "--summary", "--format", "json"
        )
        assert code == 0
        rows = json.loads(out)
        assert len(rows) == 8
        assert set(rows[0]) == {"prompt_id", "h", "label"}
        by_label = {0: [], 1: []}
        for r in rows:
            by_label[r["label"]].append(r["h"])
        assert min(by_label[1]) > max(by_label[0])

    def test_out_file_keeps_stdout_quiet(self, dataset_dir, tmp_path, capsys):
        dest = tmp_path / "diag.csv"
        code, out, _ = run_cli(
            capsys, "diag", str(dataset_dir), "--summary", "--out", str(dest)
        )
        assert code == 0
        assert out == ""
        assert dest.read_text().splitlines()[0] == "prompt_id,h,label"

    def test_missing_input(self, capsys):
        code, _, err = run_cli(capsys, "diag", "/nonexistent/trace/dir")
        assert code == 2
        assert err.startswith("sgks: ValidationError:")
        assert err.count("\n") == 1


class TestConfigPrecedence:
    def summary_scores(self, capsys, dataset_dir, *extra):
        code, out, _ = run_cli(
            capsys, "diag", str(dataset_dir), "--summary", "--format", "json", *extra
        )
        assert code == 0
        return {r["prompt_id"]: r["h"] for r in json.loads(out)}

    def test_flag_beats_config_beats_default(self, dataset_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"cutoff": "count:0.5"}')
        default = self.summary_scores(capsys, dataset_dir)
        via_config = self.summary_scores(capsys, dataset_dir, "--config", str(cfg))
        overridden = self.summary_scores(
            capsys, dataset_dir, "--config", str(cfg), "--cutoff", "mass:20"
        )
        assert via_config != default
        assert overridden == default

    def test_unknown_config_key(self, dataset_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"cutof": "mass:20"}')
        code, _, err = run_cli(capsys, "diag", str(dataset_dir), "--config", str(cfg))
        assert code == 1
        assert "unknown keys: cutof" in err

    def test_bad_flag_values(self, dataset_dir, capsys):
        for flags in (["--cutoff", "nonsense:5"], ["--window", "5:2"]):
            code, _, err = run_cli(capsys, "diag", str(dataset_dir), *flags)
            assert code == 1
            assert err.startswith("sgks: UsageError:")


class TestCalibrateVerify:
    def test_calibrate_stdout_json(self, dataset_dir, capsys):
        code, out, _ = run_cli(capsys, "calibrate", str(dataset_dir))
        assert code == 0
        result = json.loads(out)
        assert result["auc"] == 1.0
        assert result["tau_low"] < result["tau_hat"] < result["tau_high"]
        assert "separated" in result["flags"]
        assert result["model_id"] == "synthetic"

    def test_calibrate_out_file_with_summary_line(self, dataset_dir, tmp_path, capsys):
        dest = tmp_path / "cal.json"
        code, out, _ = run_cli(
            capsys, "calibrate", str(dataset_dir), "--out", str(dest)
        )
        assert code == 0
        assert "tau_low=" in out and "auc=1.0000" in out
        assert json.loads(dest.read_text())["auc"] == 1.0

    def test_verify_exact_output(self, dataset_dir, thresholds_file, capsys):
        supported = sorted(dataset_dir.glob("*supported*.sgkt"))[0]
        trace = load_traces(supported)[0]
        expected = f"SUPPORTED {hfer_score(trace):.12g}\n"
        code, out, _ = run_cli(
            capsys, "verify", str(supported), "--thresholds", str(thresholds_file)
        )
        assert code == 0
        assert out == expected

    def test_verify_contradicted(self, dataset_dir, thresholds_file, capsys):
        contradicted = sorted(dataset_dir.glob("*contradicted*.sgkt"))[0]
        code, out, _ = run_cli(
            capsys, "verify", str(contradicted), "--thresholds", str(thresholds_file)
        )
        assert code == 0
        assert out.startswith("CONTRADICTED ")

    def test_verify_rejects_datasets(self, dataset_dir, thresholds_file, capsys):
        code, _, err = run_cli(
            capsys, "verify", str(dataset_dir), "--thresholds", str(thresholds_file)
        )
        assert code == 2
        assert "exactly one trace" in err

    def test_verify_missing_thresholds_flag(self, dataset_dir, capsys):
        trace = sorted(dataset_dir.glob("*.sgkt"))[0]
        code, _, err = run_cli(capsys, "verify", str(trace))
        assert code == 1

    def test_verify_unreadable_thresholds(self, dataset_dir, capsys):
        trace = sorted(dataset_dir.glob("*.sgkt"))[0]
        code, _, err = run_cli(
            capsys, "verify", str(trace), "--thresholds", "/nonexistent.json"
        )
        assert code == 2


class TestGate:
    @pytest.fixture()
    def gate_env(self, dataset_dir, thresholds_file, tmp_path):
        traces = load_traces(dataset_dir)
        supported = [t for t in traces if t.label == 1]
        contradicted = [t for t in traces if t.label == 0]
        store = StoredTraceVerifier(tmp_path / "store")
        store.put("q1", "good", supported[0])
        store.put("q2", "bad", contradicted[0])
        store.put("q2", "good2", supported[1])
        fixture = tmp_path / "fixture.json"
        fixture.write_text(
            json.dumps(
                {
                    "questions": [
                        {"id": "q1", "question": "first?", "contexts": ["good"]},
                        {
                            "id": "q2",
                            "question": "second?",
                            "contexts": ["bad"],
                            "retry_contexts": ["good2"],
                        },
                    ]
                }
            )
        )
        return {
            "fixture": fixture,
            "store": tmp_path / "store",
            "audit": tmp_path / "audit.ndjson",
            "thresholds": thresholds_file,
        }

    def gate_args(self, env, *extra):
        return [
            "gate",
            str(env["fixture"]),
            "--store",
            str(env["store"]),
            "--thresholds",
            str(env["thresholds"]),
            "--audit",
            str(env["audit"]),
            *extra,
        ]

    def test_halt_policy_blocks_chain(self, gate_env, capsys):
        code, out, _ = run_cli(capsys, *self.gate_args(gate_env))
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("q1\tANSWER\t")
        assert lines[1] == "q2\tABSTAIN\t"
        assert lines[2].startswith("completed=1 blocked=1 backtracks=0")
        records = replay_audit(gate_env["audit"])
        assert [r["question_id"] for r in records] == ["q1", "q2"]

    def test_backtrack_policy_recovers(self, gate_env, capsys):
        code, out, _ = run_cli(
            capsys, *self.gate_args(gate_env, "--policy", "backtrack")
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[-1].startswith("completed=2 blocked=0 backtracks=1")
        # q2 appears twice: the blocked first attempt, then the retry
        assert [r["question_id"] for r in replay_audit(gate_env["audit"])] == [
            "q1",
            "q2",
            "q2",
        ]

    def test_malformed_fixture(self, gate_env, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"questions": []}')
        gate_env["fixture"] = bad
        code, _, err = run_cli(capsys, *self.gate_args(gate_env))
        assert code == 2
        assert "questions" in err


class TestSweepStatsBench:
    def test_sweep_cutoff_csv(self, dataset_dir, capsys):
        args = [
            "sweep", str(dataset_dir), "--axis", "cutoff",
            "--grid", "10,20,40", "--n-resamples", "100",
        ]
        code, out, _ = run_cli(capsys, *args)
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("axis,setting,class,")
        assert len(lines) == 1 + 3 * 3
        assert all(line.startswith("cutoff,") for line in lines[1:])
        code2, out2, _ = run_cli(capsys, *args)
        assert out2 == out  # bit-reproducible

    def test_sweep_variant_json(self, dataset_dir, capsys):
        code, out, _ = run_cli(
            capsys,
            "sweep", str(dataset_dir), "--axis", "variant",
            "--n-resamples", "100", "--format", "json",
        )
        assert code == 0
        rows = json.loads(out)
        assert len(rows) == 3 * 4
        assert {r["axis"] for r in rows} == {"laplacian_variant"}

    def test_sweep_bad_grid(self, dataset_dir, capsys):
        code, _, err = run_cli(
            capsys, "sweep", str(dataset_dir), "--axis", "cutoff", "--grid", "a,b"
        )
        assert code == 1
        assert "bad cutoff grid" in err

    def test_stats_fdr_verdicts(self, tmp_path, capsys):
        a = [0.1, 0.12, 0.09, 0.11, 0.1, 0.13, 0.08, 0.1, 0.11, 0.09, 0.12, 0.1]
        payload = {
            "contrasts": [
                {"name": "strong", "a": a, "b": [x + 1.0 for x in a]},
                {"name": "null", "a": a, "b": a},
            ]
        }
        src = tmp_path / "contrasts.json"
        src.write_text(json.dumps(payload))
        code, out, _ = run_cli(capsys, "stats", str(src), "--format", "json")
        assert code == 0
        rows = {r["contrast"]: r for r in json.loads(out)}
        assert rows["strong"]["rejected"] == 1
        assert rows["strong"]["estimate"] == pytest.approx(1.0)
        assert rows["null"]["rejected"] == 0
        assert rows["null"]["p_raw"] == 1.0

    def test_stats_malformed(self, tmp_path, capsys):
        src = tmp_path / "bad.json"
        src.write_text('{"contrasts": [{"name": "x"}]}')
        code, _, err = run_cli(capsys, "stats", str(src))
        assert code == 2
        assert "malformed" in err

    def test_bench_small_grid(self, capsys):
        code, out, _ = run_cli(
            capsys, "bench", "--grid", "48", "--repeats", "3", "--layers", "2"
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("T,H,n_layers,repeats,eig_p50_ms")
        row = lines[1].split(",")
        assert row[0] == "48"
        assert all(float(cell) > 0 for cell in row[4:])


class TestProcessLevel:
    def test_single_line_stderr_contract(self):
        proc = subprocess.run(
            [sys.executable, "-m", "sgks.cli", "diag", "/no/such/input"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 2
        assert proc.stdout == ""
        err_lines = proc.stderr.splitlines()
        assert len(err_lines) == 1
        assert err_lines[0].startswith("sgks: ValidationError:")

    def test_module_entry_and_log_env(self, tmp_path):
        d = tmp_path / "data"
        proc = subprocess.run(
            [
                sys.executable, "-m", "sgks",
                "synth", "--n-per-class", "2", "--out", str(d),
            ],
            capture_output=True,
            text=True,
            env={"PATH": "/usr/bin:/bin", "SGKS_LOG": "info"},
        )
        assert proc.returncode == 0
        assert proc.stdout.strip().endswith("manifest.json")

    def test_no_subcommand_is_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "sgks.cli"], capture_output=True, text=True
        )
        assert proc.returncode == 1
        assert proc.stderr.startswith("sgks: UsageError:")


class TestNumericalExit:
    def test_numerical_error_maps_to_three(self, monkeypatch, tmp_path, capsys):
        from sgks import cli as cli_mod
        from sgks.errors import NumericalError

        def boom(args):
            raise NumericalError("eigensolver failed to converge")

        monkeypatch.setitem(
            cli_mod.build_parser.__globals__, "_cmd_bench", boom
        )
        code, _, err = run_cli(capsys, "bench", "--grid", "8", "--repeats", "1")
        assert code == 3
        assert err.startswith("sgks: NumericalError:")
