from pathlib import Path

import pytest

from scbm.cli import CSV_HEADER, main
from scbm.config import ConfigError, apply_schema, parse_config

FAST_VERIFY = """
[run]
seed = 7
[verify-duality]
cases = 1x2
radius = 4
array_times = 0.25
"""

FAST_INTEGRAL = """
[run]
seed = 11
[integral-test]
g = power:1
series_n = 5
seq_n = 4
block_n = 500
horizon = 100
"""

FAST_SURVIVAL = """
[run]
seed = 3
[survival]
truncation = 4
horizons = 1,2
replicas = 40
g = constant:1
g_alt = power:1
expect_domination = true
"""


def _write(tmp_path: Path, text: str) -> str:
    path = tmp_path / "config.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestConfigParsing:
    def test_sections_and_comments(self):
        sections = parse_config("# top\n[a]\nx = 1 # trailing\ny = two\n[b]\nz = 3\n")
        assert sections["a"] == {"x": "1", "y": "two"}
        assert sections["b"] == {"z": "3"}

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[a]\nx = 1\nx = 2\n")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="mystery"):
            apply_schema("s", {"mystery": "1"}, {"known": ("int", 0)})

    def test_bad_value_reported(self):
        with pytest.raises(ConfigError, match="known"):
            apply_schema("s", {"known": "abc"}, {"known": ("int", 0)})


class TestCliRuns:
    def test_minimal_verify_duality(self, tmp_path):
        cfg = _write(tmp_path, FAST_VERIFY)
        out = tmp_path / "out"
        code = main(["verify-duality", "--config", cfg, "--out", str(out)])
        assert code == 0
        content = (out / "verify-duality.csv").read_text()
        assert content.splitlines()[0] == CSV_HEADER
        assert "generator_residual" in content

    def test_integral_test_and_determinism(self, tmp_path):
        cfg = _write(tmp_path, FAST_INTEGRAL)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["integral-test", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["integral-test", "--config", cfg, "--out", str(out2)]) == 0
        a = (out1 / "integral-test.csv").read_bytes()
        b = (out2 / "integral-test.csv").read_bytes()
        assert a == b

    def test_survival_with_svg_and_domination(self, tmp_path):
        cfg = _write(tmp_path, FAST_SURVIVAL)
        out = tmp_path / "out"
        code = main(["survival", "--config", cfg, "--out", str(out), "--svg"])
        assert code == 0
        csv = (out / "survival.csv").read_text()
        assert "domination" in csv and "pass" in csv
        svg = (out / "survival.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_survival_byte_identical_rerun(self, tmp_path):
        cfg = _write(tmp_path, FAST_SURVIVAL)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["survival", "--config", cfg, "--out", str(out1), "--svg"]) == 0
        assert main(["survival", "--config", cfg, "--out", str(out2), "--svg"]) == 0
        assert (out1 / "survival.csv").read_bytes() == (out2 / "survival.csv").read_bytes()
        assert (out1 / "survival.svg").read_bytes() == (out2 / "survival.svg").read_bytes()

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = _write(tmp_path, FAST_SURVIVAL)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["survival", "--config", cfg, "--out", str(out1)])
        main(["survival", "--config", cfg, "--out", str(out2), "--seed", "99"])
        a = (out1 / "survival.csv").read_text()
        b = (out2 / "survival.csv").read_text()
        assert a != b
        assert ",99," in b


class TestCliErrors:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = _write(tmp_path, "[survival]\nwidgets = 3\n")
        code = main(["survival", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "widgets" in capsys.readouterr().err

    def test_negative_gamma_exits_2(self, tmp_path):
        cfg = _write(tmp_path, "[survival]\ngamma = -2\nreplicas = 10\nhorizons = 1,2\n")
        assert main(["survival", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_unknown_section_exits_2(self, tmp_path, capsys):
        cfg = _write(tmp_path, "[mystery]\nx = 1\n")
        code = main(["survival", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "mystery" in capsys.readouterr().err

    def test_bad_growth_spec_exits_2(self, tmp_path):
        cfg = _write(tmp_path, "[survival]\ng = cubic:3\nreplicas = 10\nhorizons = 1,2\n")
        assert main(["survival", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_malformed_line_exits_2(self, tmp_path):
        cfg = _write(tmp_path, "[survival]\nthis line has no equals\n")
        assert main(["survival", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
