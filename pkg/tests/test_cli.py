import subprocess
import sys

import numpy as np
import pytest
import yaml

from octosim import cli
from octosim.errors import ConfigError
from octosim.report import read_jsonl
from octosim.traffic import write_pcap
from octosim.usecase import PRESET_DIR, load_config


def test_preset_runs_and_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.run(["usecase2", "--flows", "30", "--out", str(out)]) == 0
    m = read_jsonl(out / "metrics.jsonl")
    assert set(m) == {"run", "extractor", "vpe", "arype", "end_to_end", "saturated", "oracle"}
    assert m["oracle"]["pass"] and m["end_to_end"]["samples"] == 30
    assert m["end_to_end"]["unit"] == "flows"
    assert (out / "summary.txt").read_text() == capsys.readouterr().out
    assert len((out / "decisions.ndjson").read_text().splitlines()) == 30
    assert (out / "compiler" / "arype.s").exists() and (out / "events.ndjson").exists()


def test_metrics_are_byte_identical_across_runs(tmp_path):
    for d in ("a", "b"):
        assert cli.run(["usecase3", "--flows", "12", "--out", str(tmp_path / d)]) == 0
    for f in ("metrics.jsonl", "summary.txt", "decisions.ndjson", "events.ndjson"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_packet_summary_table(tmp_path, capsys):
    assert cli.run(["usecase1", "--flows", "50", "--collab", "off", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "architecture" in text and "oracle PASS" in text
    assert read_jsonl(tmp_path / "metrics.jsonl")["run"]["collab"] is False


def test_config_errors_exit_3(tmp_path, capsys):
    assert cli.run([str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"model": {"builtin": "usecase2"}, "compile": {"k": 16, "warp": 9}}))
    assert cli.run([str(bad), "--out", str(tmp_path)]) == 3
    assert cli.run(["usecase2", "--flows", "0", "--out", str(tmp_path)]) == 3
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.run(["usecase2", "--collab", "maybe"])


def test_oracle_mismatch_exits_2(tmp_path, monkeypatch):
    real = cli.oracle_infer

    def skewed(qm, x):
        outs = real(qm, x)
        outs[-1] = outs[-1] + 1
        return outs

    monkeypatch.setattr(cli, "oracle_infer", skewed)
    assert cli.run(["usecase3", "--flows", "5", "--out", str(tmp_path)]) == 2
    assert read_jsonl(tmp_path / "metrics.jsonl")["oracle"]["first_divergence"]["layer"] == "mlp2"
    assert cli.run(["usecase3", "--flows", "5", "--oracle", "off", "--out", str(tmp_path)]) == 0


def test_empty_pcap_is_a_clean_run(tmp_path):
    write_pcap(tmp_path / "empty.pcap", [])
    doc = yaml.safe_load((PRESET_DIR / "usecase2.yaml").read_text())
    doc["traffic"] = {"pcap": "empty.pcap"}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(doc))
    assert cli.run([str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == 0
    m = read_jsonl(tmp_path / "o" / "metrics.jsonl")
    assert m["end_to_end"]["samples"] == 0 and m["extractor"]["packets"] == 0
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml").with_overrides(flows=3)


def test_config_digest_tracks_overrides():
    base = load_config("usecase2")
    assert base.digest() == load_config("usecase2").digest()
    assert base.with_overrides(collab=False).digest() != base.digest()
    assert base.with_overrides(collab=False).collab is False


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "octosim.cli", "usecase1", "--flows", "5", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert np.isfinite(read_jsonl(tmp_path / "metrics.jsonl")["end_to_end"]["latency_ns_mean"])
