from pydantic import BaseModel, Field, field_validator, model_validator, computed_field
from typing import Dict, List, Literal, Optional, Union

from .config import SCHEMA_VERSION
from .errors import ConfigError


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


# Model and cluster description

class ModelSpec(BaseModel):
    """Layer-wise parameter and activation size profile of a transformer stack."""

    name: str = Field(
        default="custom",
        description="Human readable model name. (e.g., \"ViT-B/16\")"
    )
    layer_count: int = Field(
        default=...,
        description="Number of transformer layers L. (e.g., 12)"
    )
    attention_params: List[int] = Field(
        default=...,
        description="Parameter count of the attention block of each layer, length L. (e.g., [2363904, ...])"
    )
    mlp_params: List[int] = Field(
        default=...,
        description="Parameter count of the MLP block of each layer, length L. (e.g., [4723968, ...])"
    )
    activation_bytes_per_sample: List[int] = Field(
        default=...,
        description="Bytes of the tensor crossing each layer boundary for one sample, length L+1; entry i enters layer i. (e.g., [605184, ...])"
    )
    bytes_per_param: int = Field(
        default=4,
        description="Bytes per parameter. (e.g., 4 for fp32)"
    )

    model_config = {
        "extra": "forbid",
        "frozen": True,
        "json_schema_extra": {
            "examples": [
                {
                    "name": "tiny",
                    "layer_count": 2,
                    "attention_params": [4000000, 4000000],
                    "mlp_params": [8000000, 8000000],
                    "activation_bytes_per_sample": [1000000, 1000000, 1000000],
                    "bytes_per_param": 4
                }
            ]
        }
    }

    @field_validator('layer_count', 'bytes_per_param')
    @classmethod
    def must_be_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError('must be at least 1')
        return v

    @field_validator('attention_params', 'mlp_params', 'activation_bytes_per_sample')
    @classmethod
    def sizes_must_be_positive(cls, v: List[int]) -> List[int]:
        if any(x <= 0 for x in v):
            raise ValueError('all sizes must be > 0')
        return v

    @model_validator(mode='after')
    def lengths_match_layer_count(self) -> 'ModelSpec':
        L = self.layer_count
        if len(self.attention_params) != L or len(self.mlp_params) != L:
            raise ValueError(f'attention_params and mlp_params must have layer_count={L} entries')
        if len(self.activation_bytes_per_sample) != L + 1:
            raise ValueError(f'activation_bytes_per_sample must have layer_count+1={L + 1} entries')
        return self

    def layer_params(self, index: int) -> int:
        return self.attention_params[index] + self.mlp_params[index]

    def prefix_params(self, layers: int) -> int:
        """Parameters of layers [0, layers)."""
        return sum(self.attention_params[:layers]) + sum(self.mlp_params[:layers])

    def range_params(self, start: int, end: int) -> int:
        return self.prefix_params(end) - self.prefix_params(start)

    @property
    def total_params(self) -> int:
        """Total size S, the sum of every sublayer parameter count."""
        return self.prefix_params(self.layer_count)


class PresetRef(BaseModel):
    """Reference to a built-in model preset."""

    preset: Literal["ViT-B/16", "BERT-large", "uniform-12"] = Field(
        default=...,
        description="Name of a built-in size profile. (e.g., \"ViT-B/16\")"
    )

    model_config = {"extra": "forbid"}


class ClusterSpec(BaseModel):
    """Homogeneous GPU cluster description."""

    node_count: int = Field(
        default=2,
        description="Number of machines N. (e.g., 2)"
    )
    gpus_per_node: int = Field(
        default=8,
        description="GPUs per machine I, a power of two. (e.g., 8)"
    )
    gpu_memory: float = Field(
        default=16e9,
        description="Device memory in bytes, informational only. (e.g., 16e9)"
    )
    intra_node_bandwidth: float = Field(
        default=15.754e9,
        description="Bytes/s between GPUs on one machine. (e.g., 15.754e9 for PCIe 3.0 x16)"
    )
    inter_node_bandwidth: float = Field(
        default=5e9,
        description="Bytes/s between machines. (e.g., 5e9 for 40 Gb/s InfiniBand)"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('node_count')
    @classmethod
    def node_count_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError('node_count must be at least 1')
        return v

    @field_validator('gpus_per_node')
    @classmethod
    def gpus_power_of_two(cls, v: int) -> int:
        if not is_power_of_two(v):
            raise ValueError('gpus_per_node must be a power of two')
        return v

    @field_validator('gpu_memory', 'intra_node_bandwidth', 'inter_node_bandwidth')
    @classmethod
    def rates_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError('must be > 0')
        return v

    @property
    def world_size(self) -> int:
        return self.node_count * self.gpus_per_node


class TrainingConfig(BaseModel):
    """Training hyper-parameters that shape the simulated run."""

    per_pipeline_batch_size: int = Field(
        default=400,
        description="Mini-batch size N_bs of one pipeline. (e.g., 400)"
    )
    epochs: int = Field(
        default=10,
        description="Number of simulated epochs. (e.g., 10)"
    )
    dataset_size: Optional[int] = Field(
        default=None,
        description="Samples per epoch. Derived from iterations_per_epoch when omitted. (e.g., 1281167)"
    )
    iterations_per_epoch: Optional[int] = Field(
        default=None,
        description="Iterations per epoch of the initial topology, used only when dataset_size is omitted. (e.g., 1600)"
    )
    alpha: float = Field(
        default=1 / 3,
        description="Fraction of remaining active layers frozen per step, in (0,1). (e.g., 0.3333)"
    )
    lambda_frozen: float = Field(
        default=1 / 6,
        description="Memory cost factor of a frozen layer relative to an active one, in (0,1]. (e.g., 0.1667)"
    )
    freeze_check_interval: int = Field(
        default=1,
        description="Epochs between freeze evaluations. (e.g., 1)"
    )
    initial_pipeline_length: Optional[int] = Field(
        default=None,
        description="Initial K; defaults to gpus_per_node. Must be a power of two dividing it. (e.g., 8)"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('per_pipeline_batch_size', 'epochs', 'freeze_check_interval')
    @classmethod
    def at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError('must be at least 1')
        return v

    @field_validator('alpha')
    @classmethod
    def alpha_in_open_unit_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError('alpha must lie in (0, 1)')
        return v

    @field_validator('lambda_frozen')
    @classmethod
    def lambda_in_half_open_interval(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError('lambda_frozen must lie in (0, 1]')
        return v

    @field_validator('dataset_size', 'iterations_per_epoch')
    @classmethod
    def optional_positive(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError('must be at least 1')
        return v

    @model_validator(mode='after')
    def needs_epoch_size(self) -> 'TrainingConfig':
        if self.dataset_size is None and self.iterations_per_epoch is None:
            raise ValueError('either dataset_size or iterations_per_epoch must be set')
        return self


DEFAULT_TRANSITION_OVERHEADS: Dict[str, float] = {
    "init:8": 18.2,
    "8->4": 10.2,
    "4->2": 5.5,
    "2->1": 9.5,
}


class CostModel(BaseModel):
    """Calibrated per-unit costs of compute, communication and pipeline transformation."""

    c_fwd: float = Field(
        default=0.035 / (12e6 * 300),
        description="Forward seconds per (parameter x sample); 12M params x 300 samples ~ 35 ms. (e.g., 9.72e-12)"
    )
    backward_ratio: float = Field(
        default=2.0,
        description="Backward cost as a multiple of forward. (e.g., 2.0)"
    )
    c_upd: float = Field(
        default=1e-10,
        description="Optimizer update seconds per active parameter. (e.g., 1e-10)"
    )
    frozen_forward_ratio: float = Field(
        default=0.5,
        description="Forward cost of a frozen layer relative to an active one (no autograd bookkeeping). (e.g., 0.5)"
    )
    micro_batch_overhead: float = Field(
        default=1.5e-3,
        description="Fixed seconds per forward or backward micro-batch block. (e.g., 0.0015)"
    )
    bucket_size: int = Field(
        default=25_000_000,
        description="AllReduce gradient bucket size in bytes. (e.g., 25000000)"
    )
    comm_latency: float = Field(
        default=5e-5,
        description="Latency added to every transfer and every bucket AllReduce, seconds. (e.g., 5e-5)"
    )
    transition_overheads: Dict[str, float] = Field(
        default_factory=lambda: dict(DEFAULT_TRANSITION_OVERHEADS),
        description="Seconds charged per pipe transformation keyed \"init:K\" or \"old->new\". (e.g., {\"8->4\": 10.2})"
    )
    default_transition_overhead: float = Field(
        default=0.0,
        description="Seconds charged for a halving missing from transition_overheads. (e.g., 0.0)"
    )
    message_latency: float = Field(
        default=0.0,
        description="Delivery latency of one transition message, seconds. (e.g., 0.0)"
    )
    freeze_only_slowdown: float = Field(
        default=1.05,
        description="Iteration time multiplier of freeze-only training once layers are frozen. (e.g., 1.05)"
    )
    integer_micro_batches: bool = Field(
        default=False,
        description="Split mini-batches into integer micro-batches instead of fluid ones. (e.g., false)"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('c_fwd', 'backward_ratio', 'c_upd', 'bucket_size')
    @classmethod
    def rates_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError('must be > 0')
        return v

    @field_validator('frozen_forward_ratio')
    @classmethod
    def ratio_in_unit_interval(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError('frozen_forward_ratio must lie in (0, 1]')
        return v

    @field_validator('micro_batch_overhead', 'comm_latency', 'default_transition_overhead', 'message_latency')
    @classmethod
    def non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError('must be non-negative')
        return v

    @field_validator('freeze_only_slowdown')
    @classmethod
    def slowdown_at_least_one(cls, v: float) -> float:
        if v < 1.0:
            raise ValueError('freeze_only_slowdown must be >= 1')
        return v

    @field_validator('transition_overheads')
    @classmethod
    def overhead_keys_well_formed(cls, v: Dict[str, float]) -> Dict[str, float]:
        for key, seconds in v.items():
            if seconds < 0:
                raise ValueError(f'overhead for {key!r} must be non-negative')
            if key.startswith("init:"):
                head = key[len("init:"):]
                if not head.isdigit():
                    raise ValueError(f'malformed overhead key {key!r}')
                continue
            parts = key.split("->")
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ValueError(f'malformed overhead key {key!r}, expected "init:K" or "old->new"')
        return v


class CacheTierConfig(BaseModel):
    """Host memory and disk tiers backing the activation cache."""

    host_bandwidth: float = Field(
        default=4.5e9,
        description="Bytes/s for reading or writing cached activations in host memory. (e.g., 4.5e9)"
    )
    disk_bandwidth: float = Field(
        default=2e9,
        description="Bytes/s for prefetching blocks from the disk tier. (e.g., 2e9)"
    )
    host_capacity: float = Field(
        default=512e9,
        description="Host-tier capacity per node in bytes. (e.g., 512e9)"
    )
    block_size: int = Field(
        default=8,
        description="Batches per prefetch block. (e.g., 8)"
    )
    read_latency: float = Field(
        default=0.0,
        description="Daemon access latency added per cache read, seconds. (e.g., 0.0)"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('host_bandwidth', 'disk_bandwidth', 'host_capacity')
    @classmethod
    def rates_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError('must be > 0')
        return v

    @field_validator('block_size')
    @classmethod
    def block_at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError('block_size must be at least 1')
        return v

    @field_validator('read_latency')
    @classmethod
    def latency_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError('read_latency must be non-negative')
        return v


class PartitionerConfig(BaseModel):
    """Greedy load-balancing criterion."""

    criterion: Literal["mean_var", "mean_std"] = Field(
        default="mean_var",
        description="Acceptance limit: mean + variance or mean + standard deviation. (e.g., \"mean_var\")"
    )
    size_unit_bytes: int = Field(
        default=1 << 20,
        description="Unit in which partition sizes are measured by the criterion. (e.g., 1048576 for MiB)"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('size_unit_bytes')
    @classmethod
    def unit_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError('size_unit_bytes must be at least 1')
        return v


class GradNormSourceSpec(BaseModel):
    """Where per-layer gradient norms come from."""

    kind: Literal["synthetic", "trace"] = Field(
        default="synthetic",
        description="Synthetic profile or CSV trace playback. (e.g., \"synthetic\")"
    )
    profile: Literal["monotone", "early_random"] = Field(
        default="monotone",
        description="Synthetic profile shape. (e.g., \"early_random\")"
    )
    seed: Optional[int] = Field(
        default=None,
        description="Synthetic seed; falls back to the scenario seed. (e.g., 7)"
    )
    switchover: int = Field(
        default=3,
        description="First timestep at which the early_random profile becomes monotone. (e.g., 3)"
    )
    scale: float = Field(
        default=1.0,
        description="Magnitude of synthetic norms. (e.g., 1.0)"
    )
    decay: float = Field(
        default=0.9,
        description="Per-timestep multiplicative decay of synthetic norms. (e.g., 0.9)"
    )
    trace_path: Optional[str] = Field(
        default=None,
        description="CSV with header epoch,layer,grad_norm, relative to the config file. (e.g., \"traces/vit.csv\")"
    )

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator('scale', 'decay')
    @classmethod
    def positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError('must be > 0')
        return v

    @field_validator('switchover')
    @classmethod
    def switchover_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError('switchover must be non-negative')
        return v

    @model_validator(mode='after')
    def trace_needs_path(self) -> 'GradNormSourceSpec':
        if self.kind == "trace" and not self.trace_path:
            raise ValueError('trace_path is required when kind is "trace"')
        return self


CacheMode = Literal["off", "auto", "forced"]


class FeatureFlags(BaseModel):
    """Which elastic features are active in a run."""

    freeze: bool = Field(default=True, description="Run the freeze algorithm. (e.g., true)")
    autopipe: bool = Field(default=True, description="Re-partition and compress pipelines. (e.g., true)")
    autodp: bool = Field(default=True, description="Spawn replicas on freed GPUs. (e.g., true)")
    autocache: CacheMode = Field(default="auto", description="Activation cache mode. (e.g., \"auto\")")

    model_config = {"extra": "forbid", "frozen": True}

    @model_validator(mode='after')
    def dependencies_hold(self) -> 'FeatureFlags':
        if self.autodp and not self.autopipe:
            raise ValueError('autodp requires autopipe')
        if self.autocache != "off" and not self.autopipe:
            raise ValueError('autocache requires autopipe')
        if self.autopipe and not self.freeze:
            raise ValueError('autopipe requires freeze')
        return self

    @classmethod
    def from_tokens(cls, text: str) -> 'FeatureFlags':
        """Parses a flag list such as \"baseline\", \"all\" or \"autopipe+autodp\"."""
        tokens = [t.strip().lower() for t in text.replace("+", ",").split(",") if t.strip()]
        if not tokens:
            raise ConfigError("empty feature flag list")

        freeze = autopipe = autodp = False
        autocache: CacheMode = "off"
        for token in tokens:
            if token == "baseline":
                continue
            elif token == "all":
                freeze = autopipe = autodp = True
                autocache = "auto"
            elif token in ("freeze", "freeze_only"):
                freeze = True
            elif token == "autopipe":
                freeze = autopipe = True
            elif token == "autodp":
                freeze = autopipe = autodp = True
            elif token == "autocache":
                freeze = autopipe = True
                autocache = "auto"
            elif token == "autocache_forced":
                freeze = autopipe = True
                autocache = "forced"
            else:
                raise ConfigError(f"unknown feature flag '{token}'")
        return cls(freeze=freeze, autopipe=autopipe, autodp=autodp, autocache=autocache)

    @property
    def label(self) -> str:
        if not self.freeze:
            return "baseline"
        if not self.autopipe:
            return "freeze_only"
        parts = ["autopipe"]
        if self.autodp:
            parts.append("autodp")
        if self.autocache == "auto":
            parts.append("autocache")
        elif self.autocache == "forced":
            parts.append("autocache_forced")
        return "+".join(parts)

    @property
    def is_baseline(self) -> bool:
        return not self.freeze

    @property
    def freeze_only(self) -> bool:
        return self.freeze and not self.autopipe


class OutputConfig(BaseModel):
    """Output locations of one run."""

    out_dir: Optional[str] = Field(default=None, description="Output directory; defaults to EPS_OUT_DIR. (e.g., \"out/vit\")")
    report_name: str = Field(default="report.csv", description="Per-epoch report file. (e.g., \"report.csv\")")
    timeline_name: str = Field(default="timeline.json", description="Timeline blocks file. (e.g., \"timeline.json\")")
    cache_events_name: str = Field(default="cache_events.json", description="Cache event file. (e.g., \"cache_events.json\")")
    transitions_name: str = Field(default="transitions.jsonl", description="Transition log file. (e.g., \"transitions.jsonl\")")
    summary_name: str = Field(default="summary.json", description="Run summary file. (e.g., \"summary.json\")")
    write_timeline: bool = Field(default=True, description="Export the per-epoch iteration timeline. (e.g., true)")

    model_config = {"extra": "forbid", "frozen": True}


class ScenarioConfig(BaseModel):
    """A complete, versioned simulation scenario."""

    schema_version: int = Field(default=..., description="Config schema version. (e.g., 1)")
    name: str = Field(default="scenario", description="Scenario name used in reports. (e.g., \"vit_reference\")")
    model: Union[PresetRef, ModelSpec] = Field(default=..., description="Preset reference or explicit size profile.")
    cluster: ClusterSpec = Field(default_factory=ClusterSpec)
    training: TrainingConfig = Field(default=...)
    cost_model: CostModel = Field(default_factory=CostModel)
    cache: CacheTierConfig = Field(default_factory=CacheTierConfig)
    partitioner: PartitionerConfig = Field(default_factory=PartitionerConfig)
    grad_norms: GradNormSourceSpec = Field(default_factory=GradNormSourceSpec)
    features: FeatureFlags = Field(default_factory=FeatureFlags)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = Field(default=0, description="Seed of every random choice in the run. (e.g., 0)")

    model_config = {
        "extra": "forbid",
        "frozen": True,
        "json_schema_extra": {
            "examples": [
                {
                    "schema_version": 1,
                    "name": "vit_reference",
                    "model": {"preset": "ViT-B/16"},
                    "cluster": {"node_count": 2, "gpus_per_node": 8},
                    "training": {"per_pipeline_batch_size": 400, "epochs": 10, "dataset_size": 1281167},
                    "features": {"freeze": True, "autopipe": True, "autodp": True, "autocache": "auto"},
                    "seed": 0
                }
            ]
        }
    }

    @field_validator('schema_version')
    @classmethod
    def supported_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema_version {v}, expected {SCHEMA_VERSION}')
        return v

    @field_validator('seed')
    @classmethod
    def seed_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError('seed must be non-negative')
        return v

    @model_validator(mode='after')
    def pipeline_fits_node(self) -> 'ScenarioConfig':
        K0 = self.training.initial_pipeline_length
        if K0 is not None:
            if not is_power_of_two(K0):
                raise ValueError('training.initial_pipeline_length must be a power of two')
            if self.cluster.gpus_per_node % K0 != 0:
                raise ValueError('training.initial_pipeline_length must divide cluster.gpus_per_node')
        return self

    @model_validator(mode='after')
    def cache_block_fits_host(self) -> 'ScenarioConfig':
        model = self.resolved_model()
        batch_bytes = max(model.activation_bytes_per_sample) * self.training.per_pipeline_batch_size
        block_bytes = batch_bytes * self.cache.block_size
        if block_bytes > self.cache.host_capacity:
            raise ValueError(f'cache.host_capacity {self.cache.host_capacity:.3g} B cannot hold one prefetch block '
                             f'of {self.cache.block_size} batches ({block_bytes:.3g} B)')
        return self

    @property
    def initial_pipeline_length(self) -> int:
        return self.training.initial_pipeline_length or self.cluster.gpus_per_node

    def resolved_model(self) -> ModelSpec:
        if isinstance(self.model, PresetRef):
            from .presets import get_preset
            return get_preset(self.model.preset)
        return self.model


# Report records

class EpochRow(BaseModel):
    """One row of the per-epoch run report; field order is the CSV column order."""

    epoch: int
    L_frozen: int
    K: int
    R: int
    M: int
    iteration_time: float
    iterations: float
    epoch_time: float
    throughput: float = Field(description="Samples per second across all replicas. (e.g., 2606.4)")
    bubble_time: float = Field(description="Idle compute seconds per iteration summed over pipeline devices.")
    comm_time: float = Field(description="AllReduce seconds per iteration on the busiest device.")
    exposed_comm_time: float
    cache_enabled: bool
    cache_stall_time: float
    transition_overhead: float

    model_config = {"frozen": True}


REPORT_COLUMNS: List[str] = list(EpochRow.model_fields)


class TimelineRecord(BaseModel):
    """A timed block of one representative iteration of an epoch."""

    epoch: int
    device: int
    kind: str
    start_s: float
    end_s: float
    tag: str


class CacheEvent(BaseModel):
    epoch: int
    event: Literal["enable", "transition", "prefetch", "evict", "stall"]
    bytes: float
    duration: float


class TransitionLog(BaseModel):
    epoch: int
    old_K: int
    new_K: int
    reason: Literal["init", "compress", "capacity"]
    activated_ranks: List[int]
    messages: List[dict]


class RunReport(BaseModel):
    """Everything a simulated run produces."""

    scenario: str
    flags: str
    rows: List[EpochRow]
    total_time: float
    total_samples: float
    baseline_total_time: float
    cached_forward_layers: int = Field(
        default=0,
        description="Frozen layer forwards charged per sample through the cache path over the run. (e.g., 11)"
    )
    timeline: List[TimelineRecord] = Field(default_factory=list)
    cache_events: List[CacheEvent] = Field(default_factory=list)
    transitions: List[TransitionLog] = Field(default_factory=list)

    @computed_field
    @property
    def throughput(self) -> float:
        """Overall samples per second of the run."""
        return self.total_samples / self.total_time

    @computed_field
    @property
    def speedup(self) -> float:
        return self.baseline_total_time / self.total_time

    @computed_field
    @property
    def comm_ratio(self) -> float:
        """Share of the run spent in AllReduce on the busiest device."""
        comm = sum(row.comm_time * row.iterations for row in self.rows)
        return comm / self.total_time

    @property
    def k_trajectory(self) -> List[int]:
        return [row.K for row in self.rows]

    @property
    def r_trajectory(self) -> List[int]:
        return [row.R for row in self.rows]

    @property
    def m_trajectory(self) -> List[int]:
        return [row.M for row in self.rows]
