import logging
import numpy as np
from collections import Counter
from pydantic import BaseModel, Field, computed_field
from typing import Dict, List, Optional, Tuple

from .autopipe import PartitionPlan
from .core_model import SublayerKind
from .errors import DomainError
from .schemas import ClusterSpec, is_power_of_two

log = logging.getLogger(__name__)


class Topology(BaseModel):
    """
    Rank layout of the cluster under pipeline length K.

    Global rank r lives on node r // I at local GPU r % I. Rank r is active (drives one
    pipeline replica) iff its local rank is a multiple of K; its pipeline occupies local
    GPUs [local, local + K). The message group is every rank and never changes; the
    training group is the active set and is rebuilt on every transition.
    """

    cluster: ClusterSpec
    K: int
    active_ranks: List[int]

    model_config = {"frozen": True}

    @classmethod
    def initial(cls, cluster: ClusterSpec, K: int) -> 'Topology':
        _check_length(cluster, K)
        return cls(cluster=cluster, K=K, active_ranks=_active_ranks(cluster, K))

    @property
    def world_size(self) -> int:
        return self.cluster.world_size

    @computed_field
    @property
    def R(self) -> int:
        return len(self.active_ranks)

    @property
    def message_group(self) -> List[int]:
        return list(range(self.world_size))

    @property
    def training_group(self) -> List[int]:
        return list(self.active_ranks)

    @property
    def replica_group_spans_nodes(self) -> bool:
        return self.cluster.node_count > 1

    def node_rank(self, rank: int) -> int:
        return rank // self.cluster.gpus_per_node

    def local_rank(self, rank: int) -> int:
        return rank % self.cluster.gpus_per_node

    def gpu_span(self, rank: int) -> Tuple[int, int]:
        """Local GPU range [start, end) used by the pipeline of an active rank."""
        local = self.local_rank(rank)
        return local, local + self.K

    def active_on_node(self, node: int) -> List[int]:
        return [r for r in self.active_ranks if self.node_rank(r) == node]

    def check_invariants(self) -> None:
        I, N = self.cluster.gpus_per_node, self.cluster.node_count
        if self.R != N * (I // self.K):
            raise DomainError(f"R={self.R} but N*I/K={N * (I // self.K)}")
        for rank in self.active_ranks:
            if self.local_rank(rank) % self.K != 0:
                raise DomainError(f"rank {rank} is active but local rank is not a multiple of K={self.K}")
        for node in range(N):
            covered = sorted(gpu for r in self.active_on_node(node) for gpu in range(*self.gpu_span(r)))
            if covered != list(range(I)):
                raise DomainError(f"GPU spans on node {node} do not tile its {I} GPUs")


class SyncState(BaseModel):
    """Training state a new replica must adopt before joining the training group."""

    epoch: int
    lr_step: int = Field(default=0, description="Position in the learning-rate schedule. (e.g., 3202)")
    frozen_layers: int
    weights_version: int = Field(default=0, description="Version tag of the broadcast weights. (e.g., 2)")


class TransitionMessage(BaseModel):
    """One control message on the message group announcing a pipeline transformation."""

    sender: int
    receiver: int
    epoch: int
    lr_step: int
    frozen_layers: int
    new_K: int
    gpu_span: Tuple[int, int]
    weights_version: int

    model_config = {"frozen": True}


class ShardAssignment(BaseModel):
    """Sample indices owned by every active rank for one epoch."""

    epoch: int
    seed: int
    shards: Dict[int, np.ndarray]

    model_config = {"arbitrary_types_allowed": True, "frozen": True}

    @property
    def sizes(self) -> Dict[int, int]:
        return {rank: len(indices) for rank, indices in self.shards.items()}

    @property
    def max_shard_size(self) -> int:
        return max(self.sizes.values())


class ParamRef(BaseModel):
    kind: SublayerKind
    layer_index: int
    param_count: int


class DdpParamSet(BaseModel):
    """Parameters whose gradients are synchronized across replicas."""

    params: List[ParamRef]
    volume_params: int
    volume_bytes: int


def _check_length(cluster: ClusterSpec, K: int) -> None:
    if not is_power_of_two(K) or cluster.gpus_per_node % K != 0:
        raise DomainError(f"pipeline length K={K} must be a power of two dividing gpus_per_node={cluster.gpus_per_node}")


def _active_ranks(cluster: ClusterSpec, K: int) -> List[int]:
    return [r for r in range(cluster.world_size) if (r % cluster.gpus_per_node) % K == 0]


def transition(topology: Topology, new_K: int, sync: SyncState) -> Tuple[Topology, List[TransitionMessage]]:
    """
    Shrinks every pipeline to new_K GPUs and activates the freed ranks.

    Each previously active rank r sends exactly one message to each rank it activates,
    r + j * new_K for j = 1 .. old_K / new_K - 1, all inside its old GPU span.
    """
    _check_length(topology.cluster, new_K)
    old_K = topology.K
    if new_K > old_K:
        raise DomainError(f"growing the pipeline {old_K} -> {new_K} would shrink data-parallel width, which is unsupported")
    if new_K == old_K:
        return topology, []

    new_topology = Topology(cluster=topology.cluster, K=new_K, active_ranks=_active_ranks(topology.cluster, new_K))

    messages: List[TransitionMessage] = []
    for sender in topology.active_ranks:
        for j in range(1, old_K // new_K):
            receiver = sender + j * new_K
            messages.append(TransitionMessage(
                sender=sender,
                receiver=receiver,
                epoch=sync.epoch,
                lr_step=sync.lr_step,
                frozen_layers=sync.frozen_layers,
                new_K=new_K,
                gpu_span=new_topology.gpu_span(receiver),
                weights_version=sync.weights_version,
            ))

    log.info(f"AutoDP transition K {old_K} -> {new_K}: R {topology.R} -> {new_topology.R}, "
             f"activated {sorted(m.receiver for m in messages)}")
    return new_topology, messages


def message_delivery_time(messages: List[TransitionMessage], latency: float) -> float:
    """Messages from one sender go out sequentially; senders work in parallel."""
    if not messages:
        return 0.0
    per_sender = Counter(m.sender for m in messages)
    return max(per_sender.values()) * latency


def node_subset(dataset_size: int, node: int, node_count: int) -> np.ndarray:
    return np.arange(node, dataset_size, node_count)


def redistribute(dataset_size: int, topology: Topology, epoch: int, seed: int) -> ShardAssignment:
    """
    Splits the dataset among active ranks.

    Node n always owns the indices i with i % N == n. Inside a node the subset is shuffled
    with a permutation keyed by (seed, epoch, n) and cut into near-equal contiguous shards,
    one per active rank of that node.
    """
    if dataset_size < topology.R:
        raise DomainError(f"dataset of {dataset_size} samples cannot feed R={topology.R} replicas")

    N = topology.cluster.node_count
    shards: Dict[int, np.ndarray] = {}
    for node in range(N):
        ranks = topology.active_on_node(node)
        rng = np.random.default_rng([seed, epoch, node])
        shuffled = rng.permutation(node_subset(dataset_size, node, N))
        for rank, shard in zip(ranks, np.array_split(shuffled, len(ranks))):
            shards[rank] = shard

    return ShardAssignment(epoch=epoch, seed=seed, shards=shards)


def ddp_skip_set(plan: PartitionPlan, device: Optional[int] = None) -> DdpParamSet:
    """
    Active-sublayer parameters only; the frozen block never enters gradient synchronization.

    With `device` set, only the parameters held by that pipeline partition.
    """
    if device is not None and not 0 <= device < plan.K:
        raise DomainError(f"device {device} outside the pipeline of length K={plan.K}")
    sublayers = plan.seq.sublayers if device is None else plan.partition(device)
    params = [ParamRef(kind=s.kind, layer_index=s.layer_index, param_count=s.param_count)
              for s in sublayers]
    volume = sum(p.param_count for p in params)
    return DdpParamSet(params=params, volume_params=volume, volume_bytes=volume * plan.seq.model.bytes_per_param)
