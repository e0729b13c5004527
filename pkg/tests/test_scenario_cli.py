import json
import pytest

from elastic_sim.errors import ConfigError, InputError
from elastic_sim.main import main
from elastic_sim.scenario import apply_overrides, canonical_json, load_scenario, parse_scenario
from elastic_sim.schemas import REPORT_COLUMNS, ScenarioConfig

from .conftest import BERT_REFERENCE, CONFIG_DIR, VIT_REFERENCE
from .helpers import small_scenario

BAD_ALPHA = """{
  "schema_version": 1,
  "model": {"preset": "uniform-12"},
  "training": {
    "iterations_per_epoch": 10,
    "alpha": 1.5
  }
}
"""


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch):
    monkeypatch.setattr("elastic_sim.main.setup_logging", lambda: None)


class TestScenarioFiles:
    @pytest.mark.parametrize("path", [VIT_REFERENCE, BERT_REFERENCE, CONFIG_DIR / "vit_trace.json"])
    def test_shipped_configs_load(self, path):
        config = load_scenario(path)
        assert config.schema_version == 1

    def test_round_trip(self):
        config = load_scenario(BERT_REFERENCE)
        assert parse_scenario(canonical_json(config)) == config

    def test_error_names_the_line(self, write_config):
        path = write_config(BAD_ALPHA)
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert info.value.line == 6
        assert "training.alpha" in str(info.value)
        assert str(path) in str(info.value)

    def test_invalid_json(self, write_config):
        path = write_config('{\n  "schema_version": 1,\n}\n')
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert info.value.line == 3

    def test_unknown_key(self, write_config):
        data = small_scenario()
        data["colour"] = "blue"
        with pytest.raises(ConfigError) as info:
            load_scenario(write_config(data))
        assert "colour" in str(info.value)

    def test_unsupported_schema_version(self):
        with pytest.raises(ConfigError):
            parse_scenario(json.dumps(small_scenario(schema_version=2)))

    def test_missing_trace_names_the_path(self, write_config):
        path = write_config(small_scenario(grad_norms={"kind": "trace", "trace_path": "nowhere.csv"}))
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert "nowhere.csv" in str(info.value)
        assert info.value.line is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_scenario(tmp_path / "absent.json")

    def test_host_tier_must_hold_one_block(self, write_config):
        # 64 samples x 1 MB activations x 8 batches per block = 512 MB
        path = write_config(small_scenario(cache={"host_capacity": 1e8}))
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert "host_capacity" in str(info.value)
        line = path.read_text(encoding="utf-8").splitlines()[info.value.line - 1]
        assert '"host_capacity"' in line

    def test_overrides(self):
        config = ScenarioConfig.model_validate(small_scenario())
        updated = apply_overrides(config, flags="autopipe+autodp", out_dir="elsewhere", seed=5)
        assert updated.features.label == "autopipe+autodp"
        assert updated.output.out_dir == "elsewhere"
        assert updated.seed == 5
        assert apply_overrides(config) is config
        with pytest.raises(ConfigError):
            apply_overrides(config, flags="turbo")


class TestCommandLine:
    def test_run_writes_outputs(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(write_config(small_scenario())), "--out", str(out)]) == 0
        header = (out / "report.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.split(",") == REPORT_COLUMNS
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["K_trajectory"][0] == 8
        assert (out / "transitions.jsonl").exists()
        assert not (out / "timeline.json").exists()

    def test_reports_are_byte_identical(self, write_config, tmp_path):
        config = str(write_config(small_scenario()))
        assert main(["run", "--config", config, "--out", str(tmp_path / "a")]) == 0
        assert main(["run", "--config", config, "--out", str(tmp_path / "b")]) == 0
        for name in ("report.csv", "summary.json", "transitions.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_timeline_export(self, write_config, tmp_path):
        config = str(write_config(small_scenario(output={"write_timeline": True})))
        assert main(["run", "--config", config, "--out", str(tmp_path), "--flags", "baseline"]) == 0
        timeline = json.loads((tmp_path / "timeline.json").read_text(encoding="utf-8"))
        assert {record["kind"] for record in timeline} >= {"F", "B", "U", "AR"}

    def test_invalid_config_exits_2(self, write_config):
        assert main(["run", "--config", str(write_config(BAD_ALPHA))]) == 2

    def test_small_host_tier_exits_2(self, write_config, tmp_path):
        config = str(write_config(small_scenario(cache={"host_capacity": 1e8})))
        assert main(["run", "--config", config, "--out", str(tmp_path)]) == 2

    def test_unreadable_config_exits_3(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 3

    def test_values_without_sweep_exits_2(self, write_config, tmp_path):
        config = str(write_config(small_scenario()))
        assert main(["run", "--config", config, "--out", str(tmp_path), "--values", "1,2"]) == 2

    def test_unwritable_output_exits_3(self, write_config, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory", encoding="utf-8")
        config = str(write_config(small_scenario()))
        assert main(["run", "--config", config, "--out", str(blocker / "out")]) == 3

    def test_breakdown(self, write_config, tmp_path):
        config = str(write_config(small_scenario()))
        assert main(["breakdown", "--config", config, "--out", str(tmp_path), "--combos", "baseline;autopipe"]) == 0
        lines = (tmp_path / "breakdown.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "flags,throughput,final_throughput,total_time,speedup"
        assert [line.split(",")[0] for line in lines[1:]] == ["baseline", "autopipe"]

    def test_sweep(self, write_config, tmp_path):
        config = str(write_config(small_scenario()))
        assert main(["run", "--config", config, "--out", str(tmp_path), "--sweep", "alpha", "--values", "1/5,1/3"]) == 0
        lines = (tmp_path / "sweep_alpha.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("value,speedup")
        assert len(lines) == 3

    def test_empty_sweep_exits_2(self, write_config, tmp_path):
        config = str(write_config(small_scenario()))
        assert main(["run", "--config", config, "--out", str(tmp_path), "--sweep", "alpha", "--values", ""]) == 2
