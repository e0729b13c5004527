from elastic_sim.autodp import Topology
from elastic_sim.autopipe import load_balance
from elastic_sim.core_model import m_partition
from elastic_sim.schemas import ClusterSpec, ModelSpec


def small_scenario(**sections) -> dict:
    """Fast scenario on the uniform preset, 4 epochs of 40 iterations."""
    data = {
        "schema_version": 1,
        "name": "small",
        "model": {"preset": "uniform-12"},
        "cluster": {"node_count": 2, "gpus_per_node": 8},
        "training": {"per_pipeline_batch_size": 64, "epochs": 4, "iterations_per_epoch": 40},
        "output": {"write_timeline": False},
        "seed": 0,
    }
    data.update(sections)
    return data


def uniform_model(layers: int, attention: int, mlp: int, activation: int = 1000) -> ModelSpec:
    return ModelSpec(
        name=f"uniform-{layers}",
        layer_count=layers,
        attention_params=[attention] * layers,
        mlp_params=[mlp] * layers,
        activation_bytes_per_sample=[activation] * (layers + 1),
    )


def plan_for(model: ModelSpec, K: int, frozen: int = 0, lambda_frozen: float = 1 / 6):
    return load_balance(m_partition(model, frozen), K, lambda_frozen)


def topology_for(cluster: ClusterSpec, K: int) -> Topology:
    return Topology.initial(cluster, K)
