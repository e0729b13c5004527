import pytest

from elastic_sim.autocache import (
    CacheState,
    HostTierWindow,
    cache_transition,
    enable_threshold,
    frozen_forward_time,
    should_cache,
    simulate_tier_epoch,
    window_advance,
)
from elastic_sim.errors import DomainError
from elastic_sim.schemas import CacheTierConfig, CostModel

COST = CostModel()


class TestShouldCache:
    def test_nothing_frozen_never_caches(self, vit):
        decision = should_cache(0, vit, COST, 400, CacheTierConfig(host_bandwidth=1e15))
        assert not decision.enable
        assert decision.forward_time == 0.0

    def test_enables_once_recompute_is_dearer(self, vit):
        tier = CacheTierConfig(host_bandwidth=7e9)
        assert not should_cache(2, vit, COST, 400, tier).enable
        decision = should_cache(3, vit, COST, 400, tier)
        assert decision.enable
        assert decision.read_time < decision.forward_time

    @pytest.mark.parametrize("preset, bandwidth, expected", [
        ("vit", 7e9, 3),
        ("bert", 3.6e9, 5),
    ])
    def test_reference_thresholds(self, request, preset, bandwidth, expected):
        model = request.getfixturevalue(preset)
        assert enable_threshold(model, COST, CacheTierConfig(host_bandwidth=bandwidth)) == expected
        default = enable_threshold(model, COST)
        assert abs(default - expected) <= 1

    def test_threshold_independent_of_batch(self, vit):
        tier = CacheTierConfig(host_bandwidth=7e9)
        assert enable_threshold(vit, COST, tier, batch=1.0) == enable_threshold(vit, COST, tier, batch=400.0)

    def test_faster_host_never_raises_threshold(self, bert):
        previous = None
        for bandwidth in (1e9, 2e9, 4e9, 8e9, 16e9):
            threshold = enable_threshold(bert, COST, CacheTierConfig(host_bandwidth=bandwidth))
            if previous is not None and threshold is not None:
                assert threshold <= previous
            previous = threshold if threshold is not None else previous

    def test_read_latency_delays_enabling(self, vit):
        fast = enable_threshold(vit, COST, CacheTierConfig(host_bandwidth=7e9))
        slow = enable_threshold(vit, COST, CacheTierConfig(host_bandwidth=7e9, read_latency=1e-4))
        assert slow is None or slow > fast


class TestCacheTransition:
    def stored_at(self, boundary: int) -> CacheState:
        return CacheState.initial(CacheTierConfig()).enable(1e6, boundary=boundary)

    def test_advances_boundary(self, uniform):
        state, cost = cache_transition(self.stored_at(3), 3, 7, uniform, COST)
        tier = CacheTierConfig()
        assert state.boundary == 7
        assert cost.read_s == pytest.approx(1e6 / tier.host_bandwidth)
        assert cost.forward_s == pytest.approx(frozen_forward_time(uniform, COST, 3, 7, 1.0))
        assert cost.write_s == pytest.approx(1e6 / tier.host_bandwidth)
        assert state.forward_layers_charged == 4

    def test_unchanged_boundary_is_free(self, uniform):
        before = self.stored_at(5)
        state, cost = cache_transition(before, 5, 5, uniform, COST)
        assert state == before
        assert cost.total == 0.0

    def test_first_write_reads_nothing(self, uniform):
        state = CacheState.initial(CacheTierConfig()).enable(1e6)
        state, cost = cache_transition(state, 0, 3, uniform, COST)
        assert cost.read_s == 0.0
        assert cost.forward_s > 0.0
        assert state.boundary == 3

    def test_frozen_layers_run_once(self, uniform):
        state = CacheState.initial(CacheTierConfig()).enable(1e6)
        boundary = 0
        for new in (2, 2, 5, 9, 12):
            state, _ = cache_transition(state, boundary, new, uniform, COST)
            boundary = new
        assert state.forward_layers_charged == 12

    def test_backwards_rejected(self, uniform):
        with pytest.raises(DomainError):
            cache_transition(self.stored_at(7), 7, 3, uniform, COST)

    def test_past_last_layer_rejected(self, uniform):
        with pytest.raises(DomainError):
            cache_transition(self.stored_at(7), 7, 13, uniform, COST)

    def test_boundary_beyond_frozen_prefix_is_invalid(self):
        state = self.stored_at(6)
        state.check_invariants(6)
        with pytest.raises(DomainError):
            state.check_invariants(5)


def small_tier(**overrides) -> CacheTierConfig:
    # two blocks of two 1 MB batches fit in the host tier
    values = {"host_capacity": 4e6, "block_size": 2, "disk_bandwidth": 1e12}
    values.update(overrides)
    return CacheTierConfig(**values)


class TestHostTierWindow:
    def test_whole_epoch_fits(self):
        result = simulate_tier_epoch(CacheTierConfig(), 1e6, iterations=10, batches_per_iteration=2, iteration_time=0.1)
        assert result.stall_time == 0.0
        assert result.prefetched_blocks == 0

    def test_fast_disk_never_stalls(self):
        result = simulate_tier_epoch(small_tier(), 1e6, iterations=10, batches_per_iteration=1, iteration_time=1.0)
        assert result.stall_time == 0.0
        assert result.prefetched_blocks == 3
        assert result.evicted_blocks == 4
        assert result.disk_bytes == pytest.approx(6e6)

    def test_slow_disk_stalls_more(self):
        stalls = [
            simulate_tier_epoch(small_tier(disk_bandwidth=bw), 1e6, iterations=10,
                                batches_per_iteration=1, iteration_time=1.0).stall_time
            for bw in (4e6, 4e5, 2e5)
        ]
        assert stalls[0] == 0.0
        assert 0.0 < stalls[1] < stalls[2]

    def test_capacity_never_exceeded(self):
        tier = small_tier(disk_bandwidth=1e5)
        window = HostTierWindow(tier, 1e6, 11)
        assert not window.fits
        for batch in range(11):
            step = window_advance(window, batch, float(batch))
            assert len(window.resident) <= window.window_blocks
            assert step.stall >= 0.0
        assert window.result.max_resident_bytes <= tier.host_capacity

    def test_eviction_precedes_prefetch(self):
        window = HostTierWindow(small_tier(), 1e6, 10)
        assert window.advance(1, 0.0).prefetch == []
        step = window.advance(2, 1.0)
        assert step.evict == [0]
        assert step.prefetch == [2]

    def test_block_larger_than_host(self):
        with pytest.raises(DomainError):
            HostTierWindow(small_tier(host_capacity=1.5e6), 1e6, 10)

    def test_demand_past_epoch(self):
        with pytest.raises(DomainError):
            HostTierWindow(small_tier(), 1e6, 4).advance(4, 0.0)
