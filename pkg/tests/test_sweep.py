import asyncio
import pytest

from elastic_sim.errors import ConfigError
from elastic_sim.schemas import ScenarioConfig
from elastic_sim.sweep import CHUNK_COLUMNS, RUN_COLUMNS, parse_values, run_sweep

from .helpers import small_scenario


@pytest.fixture
def config() -> ScenarioConfig:
    # no transformation overheads, so short runs are not dominated by them
    return ScenarioConfig.model_validate(small_scenario(cost_model={"transition_overheads": {}}))


def sweep(config, axis, values, out_dir):
    return asyncio.run(run_sweep(config, axis, values, out_dir=str(out_dir)))


class TestParseValues:
    def test_fractions(self):
        assert parse_values("1/5, 1/3,0.5") == pytest.approx([0.2, 1 / 3, 0.5])

    @pytest.mark.parametrize("text", ["", " , ", "1/0", "fast"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_values(text)


class TestRunSweep:
    def test_alpha(self, config, tmp_path):
        frame = sweep(config, "alpha", [0.2, 1 / 3, 0.5], tmp_path)
        assert list(frame.columns) == RUN_COLUMNS
        assert list(frame["value"]) == pytest.approx([0.2, 1 / 3, 0.5])
        speedups = list(frame["speedup"])
        assert all(b > a for a, b in zip(speedups, speedups[1:]))
        assert (tmp_path / "sweep_alpha.csv").exists()
        assert sorted(p.name for p in (tmp_path / "sweep_alpha").iterdir()) == [
            "value_0.csv", "value_1.csv", "value_2.csv"]

    def test_chunks(self, config, tmp_path):
        frame = sweep(config, "chunks", [8, 4, 2, 1], tmp_path)
        assert list(frame.columns) == CHUNK_COLUMNS
        assert list(frame["R"]) == [2, 4, 8, 16]
        for K, M in zip(frame["value"], frame["optimal_M"]):
            assert K <= M <= 6 * K

    def test_chunks_rejects_odd_length(self, config, tmp_path):
        with pytest.raises(ConfigError):
            sweep(config, "chunks", [3], tmp_path)

    def test_bandwidth(self, config, tmp_path):
        frame = sweep(config, "bandwidth", [2.5e9, 5e9, 1e10], tmp_path)
        ratios = list(frame["comm_ratio"])
        assert all(b < a for a, b in zip(ratios, ratios[1:]))

    def test_empty_values(self, config, tmp_path):
        with pytest.raises(ConfigError):
            sweep(config, "alpha", [], tmp_path)

    def test_unknown_axis(self, config, tmp_path):
        with pytest.raises(ConfigError):
            sweep(config, "depth", [1.0], tmp_path)
