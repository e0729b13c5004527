import json
import pytest
from pathlib import Path

from elastic_sim.presets import get_preset
from elastic_sim.scenario import load_scenario, with_updates
from elastic_sim.schemas import ClusterSpec, CostModel, ScenarioConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
VIT_REFERENCE = CONFIG_DIR / "vit_reference.json"
BERT_REFERENCE = CONFIG_DIR / "bert_reference.json"

INFINITE_BANDWIDTH = 1e30


@pytest.fixture
def vit():
    return get_preset("ViT-B/16")


@pytest.fixture
def bert():
    return get_preset("BERT-large")


@pytest.fixture
def uniform():
    return get_preset("uniform-12")


@pytest.fixture
def ideal_cluster() -> ClusterSpec:
    """Two 8-GPU nodes whose links never cost anything."""
    return ClusterSpec(node_count=2, gpus_per_node=8,
                       intra_node_bandwidth=INFINITE_BANDWIDTH, inter_node_bandwidth=INFINITE_BANDWIDTH)


@pytest.fixture
def ideal_cost() -> CostModel:
    return CostModel(micro_batch_overhead=0.0, comm_latency=0.0, transition_overheads={},
                     default_transition_overhead=0.0)


@pytest.fixture(scope="session")
def vit_config() -> ScenarioConfig:
    config = load_scenario(VIT_REFERENCE)
    return with_updates(config, "output", write_timeline=False)


@pytest.fixture(scope="session")
def vit_report(vit_config):
    from elastic_sim.engine import simulate_run
    return simulate_run(vit_config)


@pytest.fixture
def write_config(tmp_path):
    """Writes a scenario dict (or raw text) to a temp file and returns its path."""
    def _write(data, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        text = data if isinstance(data, str) else json.dumps(data, indent=2)
        path.write_text(text, encoding="utf-8")
        return path
    return _write
