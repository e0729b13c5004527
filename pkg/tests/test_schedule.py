import numpy as np
import pytest

from elastic_sim.autocache import CacheState
from elastic_sim.autodp import Topology, ddp_skip_set
from elastic_sim.engine import (
    micro_batch_sizes,
    ring_allreduce_time,
    schedule_iteration,
    transfer_time,
)
from elastic_sim.errors import DomainError
from elastic_sim.schemas import CacheTierConfig, ClusterSpec, CostModel

from .conftest import INFINITE_BANDWIDTH
from .helpers import plan_for, topology_for, uniform_model

EPS = 1e-12

# one 8-GPU node with free links; the replica AllReduce costs nothing
FREE_NODE = ClusterSpec(node_count=1, gpus_per_node=8,
                        intra_node_bandwidth=INFINITE_BANDWIDTH, inter_node_bandwidth=INFINITE_BANDWIDTH)
SYMMETRIC = CostModel(backward_ratio=1.0, micro_batch_overhead=0.0, comm_latency=0.0)


class TestCostPrimitives:
    def test_boundary_transfer_calibration(self):
        assert 0.038 <= transfer_time(0.63e9, 15.754e9) <= 0.042

    def test_forward_calibration(self):
        assert CostModel().c_fwd * 12e6 * 300 == pytest.approx(0.035)

    def test_transfer_needs_bandwidth(self):
        with pytest.raises(DomainError):
            transfer_time(1.0, 0.0)

    def test_single_replica_has_no_allreduce(self):
        assert ring_allreduce_time(1e9, 1, 1e9, 1e-3) == 0.0
        assert ring_allreduce_time(1e9, 2, 1e9) == pytest.approx(1.0)

    def test_integer_micro_batches(self):
        assert micro_batch_sizes(10, 4, integer=True) == [3.0, 3.0, 2.0, 2.0]
        assert micro_batch_sizes(10, 4, integer=False) == [2.5] * 4
        with pytest.raises(DomainError):
            micro_batch_sizes(3, 4, integer=True)


class TestBubbleLaw:
    @pytest.mark.parametrize("K", [1, 2, 4, 8])
    def test_idle_fraction(self, K):
        model = uniform_model(8, 5_000_000, 5_000_000)
        plan = plan_for(model, K)
        assert len(set(plan.B_L)) == 1
        topology = topology_for(FREE_NODE, K)
        for M in range(K, 6 * K + 1):
            schedule = schedule_iteration(plan, M, topology, SYMMETRIC, batch_size=240)
            idle = schedule.bubble_time / (K * schedule.pipeline_end)
            assert idle == pytest.approx((K - 1) / (M + K - 1), abs=1e-9)

    @pytest.mark.parametrize("K", [1, 2, 4, 8])
    def test_makespan_and_device_bubble(self, K):
        model = uniform_model(8, 5_000_000, 5_000_000)
        plan = plan_for(model, K)
        stage = model.total_params / K
        topology = topology_for(FREE_NODE, K)
        for M in (K, 3 * K, 6 * K):
            schedule = schedule_iteration(plan, M, topology, SYMMETRIC, batch_size=240)
            forward = SYMMETRIC.c_fwd * stage * 240 / M
            block_pair = forward * (1 + SYMMETRIC.backward_ratio)
            update = SYMMETRIC.c_upd * stage
            assert SYMMETRIC.c_upd > 0
            assert schedule.makespan == pytest.approx((M + K - 1) * block_pair + update, rel=1e-9)
            assert schedule.bubble_per_device == pytest.approx([(K - 1) * block_pair] * K, rel=1e-9, abs=1e-12)

    def test_bubble_shrinks_with_shorter_pipeline(self):
        model = uniform_model(8, 5_000_000, 5_000_000)
        fractions = []
        for K in (8, 4, 2, 1):
            schedule = schedule_iteration(plan_for(model, K), 16, topology_for(FREE_NODE, K), SYMMETRIC,
                                          batch_size=240)
            fractions.append(schedule.bubble_time / (K * schedule.pipeline_end))
        assert fractions == sorted(fractions, reverse=True)
        assert fractions[-1] == pytest.approx(0.0, abs=1e-12)


class TestCommunication:
    def test_no_allreduce_without_replicas(self, vit):
        cluster = ClusterSpec(node_count=1, gpus_per_node=8)
        schedule = schedule_iteration(plan_for(vit, 8), 16, topology_for(cluster, 8), CostModel(), batch_size=400)
        assert schedule.R == 1
        assert not [b for b in schedule.blocks if b.kind == "AR"]
        assert schedule.comm_time == 0.0
        assert schedule.exposed_comm_time == 0.0

    def test_allreduce_moves_only_active_parameters(self, uniform):
        cluster = ClusterSpec(node_count=1, gpus_per_node=8)
        plan = plan_for(uniform, 2, frozen=4)
        cost = CostModel(bucket_size=10**12, comm_latency=0.0)
        schedule = schedule_iteration(plan, 4, topology_for(cluster, 2), cost, batch_size=64)
        assert schedule.R == 4
        for d in range(plan.K):
            volume = ddp_skip_set(plan, d).volume_bytes
            assert volume == plan.B_S[d] * uniform.bytes_per_param
            assert schedule.comm_per_device[d] == pytest.approx(ring_allreduce_time(volume, 4, cluster.intra_node_bandwidth))

    def test_exposed_comm_grows_with_micro_batches(self, vit):
        plan, topology = plan_for(vit, 8), topology_for(ClusterSpec(), 8)
        exposed = [schedule_iteration(plan, M, topology, CostModel(), batch_size=400).exposed_comm_time
                   for M in range(8, 49)]
        assert exposed[0] > 0.0
        assert all(b >= a - 1e-9 for a, b in zip(exposed, exposed[1:]))

    def test_small_buckets_overlap_backward(self, vit):
        plan, topology = plan_for(vit, 4), topology_for(ClusterSpec(), 4)
        small = schedule_iteration(plan, 8, topology, CostModel(bucket_size=5_000_000), batch_size=400)
        whole = schedule_iteration(plan, 8, topology, CostModel(bucket_size=10**12), batch_size=400)
        assert small.exposed_comm_time < whole.exposed_comm_time
        assert small.comm_time >= whole.comm_time
        assert len([b for b in whole.blocks if b.kind == "AR" and b.device == 0]) == 1

    def test_inter_node_link_is_slower(self, vit):
        plan = plan_for(vit, 8)
        two_nodes = schedule_iteration(plan, 16, topology_for(ClusterSpec(node_count=2), 8), CostModel(),
                                       batch_size=400)
        plan4 = plan_for(vit, 4)
        one_node = schedule_iteration(plan4, 16, topology_for(ClusterSpec(node_count=1), 4), CostModel(),
                                      batch_size=400)
        assert two_nodes.R == one_node.R == 2

        def seconds_per_byte(schedule, partition_params):
            ar = schedule.device_blocks(0, kinds=("AR",))
            return sum(b.duration for b in ar) / (partition_params * 4)

        assert seconds_per_byte(two_nodes, plan.B_S[0]) > 2 * seconds_per_byte(one_node, plan4.B_S[0])

    def test_requires_one_micro_batch(self, vit):
        with pytest.raises(DomainError):
            schedule_iteration(plan_for(vit, 2), 0, topology_for(ClusterSpec(), 2), CostModel(), batch_size=400)


def assert_legal(schedule, K: int, M: int) -> None:
    for d in range(K):
        compute = schedule.device_blocks(d)
        for a, b in zip(compute, compute[1:]):
            assert b.start_s >= a.end_s - EPS
    blocks = {(b.kind, b.device, b.micro_batch): b for b in schedule.blocks if b.kind in ("F", "B")}
    for b in range(M):
        for d in range(1, K):
            assert blocks[("F", d, b)].start_s >= blocks[("F", d - 1, b)].end_s - EPS
            assert blocks[("B", d - 1, b)].start_s >= blocks[("B", d, b)].end_s - EPS
        assert blocks[("B", K - 1, b)].start_s >= blocks[("F", K - 1, M - 1)].end_s - EPS
    for update in (b for b in schedule.blocks if b.kind == "U"):
        last_backward = blocks[("B", update.device, 0)]
        assert update.start_s >= last_backward.end_s - EPS
        for ar in schedule.device_blocks(update.device, kinds=("AR",)):
            assert update.start_s >= ar.end_s - EPS


class TestLegality:
    def test_random_schedules(self, vit, bert):
        rng = np.random.default_rng(11)
        for _ in range(60):
            model = vit if rng.random() < 0.5 else bert
            K = int(rng.choice([1, 2, 4, 8]))
            M = int(rng.integers(K, 6 * K + 1))
            frozen = int(rng.integers(0, model.layer_count // 2))
            cluster = ClusterSpec(node_count=int(rng.integers(1, 4)))
            plan = plan_for(model, K, frozen=frozen)
            cache = None
            if frozen and rng.random() < 0.5:
                cache = CacheState.initial(CacheTierConfig()).enable(1e6, boundary=int(rng.integers(0, frozen + 1)))
            schedule = schedule_iteration(plan, M, topology_for(cluster, K), CostModel(), cache,
                                          batch_size=int(rng.integers(M, 512)))
            assert_legal(schedule, K, M)
            assert schedule.makespan >= schedule.compute_only_makespan - EPS
            assert schedule.makespan >= schedule.pipeline_end

    def test_work_is_conserved(self, vit):
        cost = CostModel()
        plan = plan_for(vit, 4)
        schedule = schedule_iteration(plan, 10, topology_for(ClusterSpec(), 4), cost, batch_size=400)
        for d in range(4):
            expected = 2 * 10 * cost.micro_batch_overhead + (1 + cost.backward_ratio) * cost.c_fwd * plan.B_S[d] * 400
            assert schedule.busy_per_device[d] == pytest.approx(expected)
            recorded = sum(b.duration for b in schedule.device_blocks(d, kinds=("F", "B")))
            assert recorded == pytest.approx(expected)

    def test_record_blocks_off_keeps_timing(self, vit):
        plan, topology = plan_for(vit, 4), topology_for(ClusterSpec(), 4)
        full = schedule_iteration(plan, 12, topology, CostModel(), batch_size=400)
        bare = schedule_iteration(plan, 12, topology, CostModel(), batch_size=400, record_blocks=False)
        assert bare.blocks == []
        assert bare.makespan == full.makespan


class TestCachedPrefix:
    def test_cache_block_replaces_recompute(self, vit):
        topology = Topology.initial(ClusterSpec(), 4)
        plan = plan_for(vit, 4, frozen=6)
        tier = CacheTierConfig(host_bandwidth=7e9)
        recompute = schedule_iteration(plan, 8, topology, CostModel(), batch_size=400)
        cached = schedule_iteration(plan, 8, topology, CostModel(),
                                    CacheState.initial(tier).enable(1e6, boundary=6), batch_size=400)
        assert [b for b in cached.blocks if b.kind == "CACHE"]
        assert not [b for b in recompute.blocks if b.kind == "CACHE"]
        assert cached.pipeline_end < recompute.pipeline_end
