"""CLI behavior, exit codes, and downstream validation of emitted traces.

The end-to-end tests shell out to the trace consumer (`sgks diag`) and
require its directory scan to exit 0 with an empty stderr — emitted files
must be accepted without a single warning.
"""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from sgks_extractor import MANIFEST_NAME, UsageError
from sgks_extractor.cli import main, parse_layers


@pytest.fixture()
def prompts_file(tmp_path):
    rows = [
        {
            "id": "sup-0",
            "statement": "The lantern is lit.",
            "context": "The keeper lit the harbor lantern at dusk.",
            "label": 1,
        },
        {
            "id": "con-0",
            "statement": "The lantern was never lit.",
            "context": "The keeper lit the harbor lantern at dusk.",
            "label": 0,
        },
        {"id": "bare-0", "statement": "The lantern is lit."},
    ]
    path = tmp_path / "prompts.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def validate_with_consumer(out_dir, *extra) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "sgks.cli", "diag", str(out_dir), *extra],
        capture_output=True,
    )


class TestParseLayers:
    def test_single_index(self):
        assert parse_layers("3") == (3,)

    def test_inclusive_range(self):
        assert parse_layers("2:5") == (2, 3, 4, 5)

    def test_mixed_list_sorted_and_deduplicated(self):
        assert parse_layers("7, 2:4, 0, 3") == (0, 2, 3, 4, 7)

    def test_empty_range_rejected(self):
        with pytest.raises(UsageError, match="empty layer range"):
            parse_layers("5:2")

    def test_garbage_rejected(self):
        with pytest.raises(UsageError, match="bad layer"):
            parse_layers("2:a")
        with pytest.raises(UsageError, match="bad layer"):
            parse_layers("")


class TestEndToEnd:
    def test_jsonl_prompts_produce_consumer_valid_traces(
        self, checkpoint_dir, prompts_file, tmp_path, capsys
    ):
        out = tmp_path / "traces"
        rc = main(
            [
                "--model", str(checkpoint_dir),
                "--prompts", str(prompts_file),
                "--layers", "2:5",
                "--out", str(out),
                "--byte-tokenizer",
            ]
        )
        assert rc == 0
        assert "wrote 3 trace(s)" in capsys.readouterr().out
        assert sorted(p.name for p in out.glob("*.sgkt")) == [
            "bare-0.sgkt",
            "con-0.sgkt",
            "sup-0.sgkt",
        ]
        manifest = json.loads((out / MANIFEST_NAME).read_text())
        assert len(manifest["traces"]) == 3

        proc = validate_with_consumer(out)
        assert proc.returncode == 0, proc.stderr.decode()
        assert proc.stderr == b""  # accepted with zero warnings
        lines = proc.stdout.decode().splitlines()
        assert lines[0].startswith("prompt_id,layer,")
        assert {int(line.split(",")[1]) for line in lines[1:] if line} == {2, 3, 4, 5}

    def test_probe_pairs_mode(self, checkpoint_dir, tmp_path):
        out = tmp_path / "probe"
        rc = main(
            [
                "--model", str(checkpoint_dir),
                "--probe-pairs", "2",
                "--include-bare",
                "--layers", "2,4",
                "--out", str(out),
                "--byte-tokenizer",
            ]
        )
        assert rc == 0
        manifest = json.loads((out / MANIFEST_NAME).read_text())
        assert len(manifest["traces"]) == 6
        # the consumer scores layers 2:5 by default; tell it which layers
        # this extraction actually carries
        proc = validate_with_consumer(out, "--window", "2,4")
        assert proc.returncode == 0 and proc.stderr == b""


class TestErrorPaths:
    def single_stderr_line(self, capsys) -> str:
        err = capsys.readouterr().err.strip()
        assert "\n" not in err
        assert err.startswith("sgks-extract: ")
        return err

    def args(self, tmp_path, **overrides):
        base = {
            "--model": "anything",
            "--probe-pairs": "1",
            "--layers": "2",
            "--out": str(tmp_path / "o"),
        }
        base.update(overrides)
        flat = []
        for key, value in base.items():
            if value is not None:
                flat.extend([key, value])
        return flat

    def test_bad_layer_selection_exits_1(self, tmp_path, capsys):
        rc = main(self.args(tmp_path, **{"--layers": "5:2"}))
        assert rc == 1
        assert "UsageError" in self.single_stderr_line(capsys)

    def test_missing_prompt_source_exits_1(self, tmp_path, capsys):
        rc = main(["--model", "m", "--layers", "2", "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "UsageError" in self.single_stderr_line(capsys)

    def test_conflicting_prompt_sources_exit_1(self, tmp_path, prompts_file, capsys):
        rc = main(
            self.args(tmp_path, **{"--prompts": str(prompts_file)})
        )
        assert rc == 1
        assert "not allowed with" in self.single_stderr_line(capsys)

    def test_missing_prompts_file_exits_2(self, tmp_path, capsys):
        rc = main(
            [
                "--model", "m",
                "--prompts", str(tmp_path / "absent.jsonl"),
                "--layers", "2",
                "--out", str(tmp_path / "o"),
            ]
        )
        assert rc == 2
        assert "FileNotFoundError" in self.single_stderr_line(capsys)

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        rc = main(
            self.args(tmp_path, **{"--model": str(tmp_path / "no-model")})
        )
        assert rc == 2
        assert "ConfigurationError" in self.single_stderr_line(capsys)

    def test_malformed_prompts_file_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{broken\n", encoding="utf-8")
        rc = main(
            [
                "--model", "m",
                "--prompts", str(bad),
                "--layers", "2",
                "--out", str(tmp_path / "o"),
            ]
        )
        assert rc == 2
        assert "ConfigurationError" in self.single_stderr_line(capsys)
